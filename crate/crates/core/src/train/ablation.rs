//! Component ablation: one model per flag row, identical seed and data.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::{AblationFlags, TrainConfig};
use crate::data::tiling::TileSpec;
use crate::error::{Error, Result};
use crate::loss_metrics::MetricsReport;
use crate::train::evaluate::evaluate_model;
use crate::train::trainer::{TrainData, Trainer};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub flags: AblationFlags,
    pub num_params: usize,
    pub losses: Vec<f64>,
    pub report: MetricsReport,
    pub coarse: MetricsReport,
}

/// Train each row for `iterations` steps and score it on the validation
/// split, or on the training split when there is none.
pub fn run_ablation(
    base: &TrainConfig,
    rows: &[AblationFlags],
    data: &TrainData,
    iterations: u64,
) -> Result<Vec<AblationResult>> {
    if rows.is_empty() {
        return Err(Error::Config("ablation needs at least one row".into()));
    }
    let eval_set = data.val.filter(|v| !v.is_empty()).unwrap_or(data.train);
    let spec = TileSpec::new(base.tiles.tile_size, base.tiles.eval_stride)?;
    rows.iter()
        .map(|&flags| {
            let cfg = TrainConfig { ablation: flags, ..base.clone() };
            let mut t = Trainer::new(&cfg)?;
            let num_params = t.store.num_params();
            // Validation inside the loop is skipped; the row is scored once at the end.
            t.run(&TrainData { train: data.train, val: None }, iterations, |_| {})?;
            let r = evaluate_model(&t.model, &t.store, eval_set, spec)?;
            Ok(AblationResult { flags, num_params, losses: t.losses, report: r.fine, coarse: r.coarse })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Row {
    label: String,
    resnet_diff: bool,
    mask_augment: bool,
    motion_augment: bool,
    params: usize,
    precision: f64,
    recall: f64,
    f1: f64,
    oa: f64,
    coarse_f1: f64,
    final_loss: f64,
}

/// One CSV row per result.
pub fn write_ablation_table<W: Write>(out: W, results: &[AblationResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in results {
        w.serialize(Row {
            label: r.flags.label(),
            resnet_diff: r.flags.use_resnet_diff,
            mask_augment: r.flags.use_mask_augment,
            motion_augment: r.flags.use_motion_augment,
            params: r.num_params,
            precision: r.report.precision,
            recall: r.report.recall,
            f1: r.report.f1,
            oa: r.report.oa,
            coarse_f1: r.coarse.f1,
            final_loss: r.losses.last().copied().unwrap_or(f64::NAN),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{synthetic_set, SynthParams};

    #[test]
    fn zero_iterations_scores_the_untrained_model() {
        let cfg = TrainConfig::tiny();
        let p = SynthParams { height: 16, width: 16, n_shapes: 2, min_size: 4, max_size: 7, noise: 0.0 };
        let pairs = synthetic_set(&p, 2, 0).unwrap();
        let rows = [AblationFlags::default()];
        let res = run_ablation(&cfg, &rows, &TrainData { train: &pairs, val: None }, 0).unwrap();
        assert_eq!(res.len(), 1);
        assert!(res[0].losses.is_empty());
        let mut buf = Vec::new();
        write_ablation_table(&mut buf, &res).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("label,resnet_diff,mask_augment,motion_augment,params,"));
        assert!(run_ablation(&cfg, &[], &TrainData { train: &pairs, val: None }, 0).is_err());
    }
}
