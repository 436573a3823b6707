//! A real server on a free port plus a small blocking JSON client.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::thread::JoinHandle;

use querytrail_cli::http_api::{ProviderConfig, ServeConfig, Server};
use querytrail_core::llm_gateway::{record_transcript, TranscriptEntry};
use serde_json::Value;

pub struct TestServer {
    pub addr: SocketAddr,
    pub store_dir: PathBuf,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    handle: Option<JoinHandle<()>>,
    agent: ureq::Agent,
    dir: Option<tempfile::TempDir>,
}

impl TestServer {
    /// Serves `db` with a scripted provider answering from `entries`.
    pub fn start(db: &Path, entries: &[TranscriptEntry]) -> TestServer {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("script.ndjson");
        record_transcript(entries, &script).unwrap();
        let store_dir = dir.path().join("sessions");
        let mut config = ServeConfig::new(db, &store_dir, ProviderConfig::Scripted { script });
        config.port = 0;
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();
        let handle = std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let server = Server::bind(&config).await.unwrap();
                addr_tx.send(server.local_addr()).unwrap();
                server
                    .run(async {
                        let _ = shutdown_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        TestServer { addr, store_dir, shutdown: Some(shutdown_tx), handle: Some(handle), agent, dir: Some(dir) }
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        let mut r = self.agent.get(&self.url(path)).call().unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    pub fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let mut r = self.agent.post(&self.url(path)).send_json(&body).unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    pub fn post_empty(&self, path: &str) -> (u16, Value) {
        let mut r = self.agent.post(&self.url(path)).send_empty().unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    pub fn post_raw(&self, path: &str, body: &str) -> (u16, Value) {
        let mut r = self
            .agent
            .post(&self.url(path))
            .header("content-type", "application/json")
            .send(body)
            .unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    /// Stops the server, waits for it to drain and hands back the
    /// directory holding the script and the session store.
    pub fn stop(mut self) -> tempfile::TempDir {
        self.shutdown_and_join();
        self.dir.take().expect("directory present until stop")
    }

    fn shutdown_and_join(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            h.join().unwrap();
        }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.shutdown_and_join();
    }
}
