//! Training schemes, checkpoints and evaluation.

mod checkpoint;
mod config;
mod data;
mod evaluate;
mod train;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

pub use checkpoint::{BundleMeta, ModelBundle, CHECKPOINT_VERSION};
pub use config::{EvalConfig, RollSource, SchemeId, ToolkitConfig, TrainConfig, TrainScheme, CONFIG_ENV};
pub use evaluate::{evaluate, score_transcriptions, EvalOptions, TranscriptionItem};
pub use train::{train_amt, train_recognizer, EpochStats, TrainOutcome};

use crate::error::{Error, Result};

/// Append-only run log; lines are kept in memory and optionally mirrored to
/// a file.
#[derive(Debug, Default)]
pub struct RunLog {
    file: Option<(File, std::path::PathBuf)>,
    pub lines: Vec<String>,
}

impl RunLog {
    pub fn memory() -> Self {
        Self::default()
    }

    pub fn append_to(path: &Path) -> Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { file: Some((f, path.to_path_buf())), lines: Vec::new() })
    }

    pub fn record(&mut self, line: String) {
        log::info!("{line}");
        if let Some((f, path)) = &mut self.file {
            if let Err(e) = writeln!(f, "{line}") {
                log::warn!("{}: cannot append to run log: {e}", path.display());
            }
        }
        self.lines.push(line);
    }
}
