//! Line-delimited JSON metrics, one record per line.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::head::ModelClass;
use crate::train::{EpochSummary, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub stage: String,
    pub epoch: usize,
    pub split: Split,
    pub role: ModelClass,
    pub loss: f64,
    pub accuracy: f64,
    pub forward_passes: u64,
    pub backward_passes: u64,
}

impl MetricsRecord {
    pub fn from_summary(run_id: &str, summary: &EpochSummary) -> Vec<MetricsRecord> {
        summary
            .scores
            .iter()
            .map(|s| MetricsRecord {
                run_id: run_id.to_string(),
                stage: summary.stage.clone(),
                epoch: summary.epoch,
                split: s.split,
                role: s.role,
                loss: s.loss,
                accuracy: s.accuracy,
                forward_passes: summary.passes.forward,
                backward_passes: summary.passes.backward,
            })
            .collect()
    }
}

/// Append-only writer. Each record is written and flushed as one full line.
pub struct MetricsLog {
    path: PathBuf,
    file: File,
}

impl MetricsLog {
    /// Start a fresh log at `path`, replacing any previous one.
    pub fn create(path: &Path) -> Result<Self> {
        File::create(path)?;
        Self::append_to(path)
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(MetricsLog {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        Ok(())
    }
}

/// Every complete record in the file. A final line without its newline, or
/// one that does not parse, is a torn write and is dropped.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path)?;
    let complete = match text.rfind('\n') {
        Some(end) => &text[..end],
        None => "",
    };
    let mut out = Vec::new();
    let lines: Vec<&str> = complete.lines().filter(|l| !l.trim().is_empty()).collect();
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i + 1 == lines.len() => {
                log::warn!("ignoring unreadable final record in {}", path.display());
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}
