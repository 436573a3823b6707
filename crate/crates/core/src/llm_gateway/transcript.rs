//! Newline-delimited JSON transcripts: `{"digest": "<hex>", "response": "..."}`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::providers::ReplayProvider;
use super::LlmError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub digest: String,
    pub response: String,
}

pub fn record_transcript(entries: &[TranscriptEntry], path: &Path) -> Result<(), LlmError> {
    let mut buf = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut buf, e).map_err(|e| LlmError::IoError(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| LlmError::IoError(e.to_string()))?;
    file.write_all(&buf).map_err(|e| LlmError::IoError(e.to_string()))
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptEntry>, LlmError> {
    let text = fs::read_to_string(path).map_err(|e| LlmError::IoError(e.to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            let entry: TranscriptEntry =
                serde_json::from_str(line).map_err(|e| LlmError::CorruptTranscript {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            if entry.digest.is_empty() || !entry.digest.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err(LlmError::CorruptTranscript {
                    line: i + 1,
                    reason: "digest is not a hex string".into(),
                });
            }
            Ok(entry)
        })
        .collect()
}

pub fn load_transcript(path: &Path) -> Result<ReplayProvider, LlmError> {
    Ok(ReplayProvider::from_entries(read_transcript(path)?))
}
