//! HTTP service exposing querytrail sessions as JSON.

pub mod http_api;
