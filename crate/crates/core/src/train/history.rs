//! Per-epoch metric log and best-epoch selection.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss_metrics::MetricsReport;

pub const CSV_HEADER: &str = "epoch,split,loss,precision,recall,f1,oa,lr";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `train`, `val` or `test`.
    pub split: String,
    pub loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub oa: f64,
    pub lr: f64,
}

impl EpochRecord {
    pub fn new(epoch: usize, split: &str, loss: f64, m: &MetricsReport, lr: f64) -> Self {
        Self { epoch, split: split.into(), loss, precision: m.precision, recall: m.recall, f1: m.f1, oa: m.oa, lr }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunHistory {
    pub records: Vec<EpochRecord>,
}

impl RunHistory {
    /// Epochs must strictly increase within each split.
    pub fn push(&mut self, rec: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.iter().rev().find(|r| r.split == rec.split) {
            if rec.epoch <= last.epoch {
                return Err(Error::Data(format!(
                    "{} epoch {} does not follow epoch {}",
                    rec.split, rec.epoch, last.epoch
                )));
            }
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn split<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a EpochRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.records.is_empty() {
            w.write_record(CSV_HEADER.split(','))?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut h = Self::default();
        for r in csv::Reader::from_reader(input).deserialize() {
            h.records.push(r?);
        }
        Ok(h)
    }
}

/// Epoch with the highest validation F1, the earliest on ties. Histories
/// without validation rows fall back to the training rows.
pub fn select_best(history: &RunHistory) -> Result<usize> {
    let pick = |split: &'static str| {
        history.split(split).fold(None::<&EpochRecord>, |best, r| match best {
            Some(b) if b.f1 >= r.f1 => Some(b),
            _ => Some(r),
        })
    };
    pick("val").or_else(|| pick("train")).map(|r| r.epoch).ok_or(Error::EmptyHistory)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hist(f1s: &[f64]) -> RunHistory {
        let mut h = RunHistory::default();
        for (e, &f1) in f1s.iter().enumerate() {
            h.push(EpochRecord { epoch: e, split: "val".into(), loss: 0.0, precision: 0.0, recall: 0.0, f1, oa: 0.0, lr: 1e-3 })
                .unwrap();
        }
        h
    }

    #[test]
    fn best_epoch_examples() {
        assert_eq!(select_best(&hist(&[0.1, 0.5, 0.3])).unwrap(), 1);
        assert_eq!(select_best(&hist(&[0.4, 0.4])).unwrap(), 0);
        assert_eq!(select_best(&hist(&[0.2])).unwrap(), 0);
        assert!(matches!(select_best(&RunHistory::default()), Err(Error::EmptyHistory)));
    }

    #[test]
    fn validation_rows_take_precedence() {
        let mut h = hist(&[0.3, 0.2]);
        h.push(EpochRecord { epoch: 1, split: "train".into(), loss: 0.0, precision: 0.0, recall: 0.0, f1: 0.9, oa: 0.0, lr: 0.0 })
            .unwrap();
        assert_eq!(select_best(&h).unwrap(), 0);
    }

    #[test]
    fn epochs_must_increase_per_split() {
        let mut h = hist(&[0.1, 0.2]);
        let r = EpochRecord { epoch: 1, split: "val".into(), loss: 0.0, precision: 0.0, recall: 0.0, f1: 0.0, oa: 0.0, lr: 0.0 };
        assert!(h.push(r.clone()).is_err());
        assert!(h.push(EpochRecord { split: "train".into(), ..r }).is_ok());
    }

    #[test]
    fn csv_has_the_documented_header_and_round_trips() {
        let h = hist(&[0.25, 0.75]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next(), Some(CSV_HEADER));
        assert_eq!(RunHistory::read_csv(buf.as_slice()).unwrap(), h);
        let mut empty = Vec::new();
        RunHistory::default().write_csv(&mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().trim(), CSV_HEADER);
    }
}
