use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ExperimentError;

pub(super) const CHECKPOINT_FILE: &str = "checkpoint.jsonl";

/// One finished translation, keyed by sentence id and the exact prompt sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(super) struct CheckpointLine {
    pub id: u64,
    pub prompt_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Successful lines only; later lines win. A torn last line from an
/// interrupted write is ignored.
pub(super) fn load(path: &Path) -> Result<HashMap<u64, CheckpointLine>, ExperimentError> {
    let raw = match fs::read_to_string(path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(ExperimentError::Io(path.to_path_buf(), e)),
    };
    let lines: Vec<&str> = raw.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut done = HashMap::new();
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<CheckpointLine>(line) {
            Ok(c) if c.completion.is_some() => {
                done.insert(c.id, c);
            }
            Ok(c) => {
                done.remove(&c.id);
            }
            Err(_) if i + 1 == lines.len() && !raw.ends_with('\n') => {}
            Err(e) => return Err(ExperimentError::Format(path.to_path_buf(), format!("line {}: {e}", i + 1))),
        }
    }
    Ok(done)
}

#[derive(Debug)]
pub(super) struct CheckpointWriter {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl CheckpointWriter {
    pub fn open(path: &Path, append: bool) -> Result<Self, ExperimentError> {
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| ExperimentError::Io(path.to_path_buf(), e))?;
        Ok(CheckpointWriter { path: path.to_path_buf(), out: Mutex::new(BufWriter::new(file)) })
    }

    pub fn write(&self, line: &CheckpointLine) -> Result<(), ExperimentError> {
        let mut out = self.out.lock().expect("checkpoint lock");
        let mut json = serde_json::to_string(line).expect("checkpoint line serializes");
        json.push('\n');
        out.write_all(json.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| ExperimentError::Io(self.path.clone(), e))
    }
}
