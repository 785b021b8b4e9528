//! On-disk run layout: `<out>/<name>/{config.snapshot, checkpoints/, metrics.csv}`.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::train::history::{EpochRecord, RunHistory};
use crate::train::trainer::TrainOutcome;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(out_dir: &Path, name: &str) -> Self {
        Self { root: out_dir.join(name) }
    }

    pub fn create(out_dir: &Path, name: &str) -> Result<Self> {
        let d = Self::new(out_dir, name);
        std::fs::create_dir_all(d.checkpoints())?;
        Ok(d)
    }

    pub fn config_snapshot(&self) -> PathBuf {
        self.root.join("config.snapshot")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("best.ckpt")
    }

    pub fn last_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("last.ckpt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn write_snapshot(&self, text: &str) -> Result<()> {
        std::fs::write(self.config_snapshot(), text)?;
        Ok(())
    }

    /// Both checkpoints and a fresh metrics log.
    pub fn write_outcome(&self, out: &TrainOutcome) -> Result<()> {
        out.best.save(&self.best_checkpoint())?;
        out.last.save(&self.last_checkpoint())?;
        out.history.write_csv(std::fs::File::create(self.metrics())?)
    }

    pub fn read_history(&self) -> Result<RunHistory> {
        RunHistory::read_csv(std::fs::File::open(self.metrics())?)
    }

    /// Append one row, writing the header first if the log is new.
    pub fn append_metrics(&self, rec: &EpochRecord) -> Result<()> {
        let fresh = !self.metrics().exists();
        let f = OpenOptions::new().create(true).append(true).open(self.metrics())?;
        let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(f);
        w.serialize(rec)?;
        w.flush()?;
        Ok(())
    }
}
