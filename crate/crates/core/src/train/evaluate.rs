//! Tiled inference with overlap averaging, and split-level metrics.

use ctma_autograd::{Graph, Tensor};

use crate::data::dataset::Samples;
use crate::data::tiling::{crop, stitch_predictions, TileIndex, TileSpec};
use crate::error::{Error, Result};
use crate::loss_metrics::{accumulate_confusion, compute_metrics, total_loss, ConfusionCounts, MetricsReport};
use crate::model::Ctma;
use crate::nn::{Ctx, Mode, ParamStore};
use crate::pseudo_video::BiTemporalPair;
use crate::train::checkpoint::Checkpoint;

/// Per-tile outputs, each `(1, t, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TilePrediction {
    /// Coarse probabilities at tile resolution.
    pub p1: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub p2: Tensor<f32>,
    /// Training objective on this tile when a label was supplied.
    pub loss: Option<f64>,
}

pub trait Predictor {
    /// `i1`, `i2` are `(3, t, t)`; `label` is `(1, t, t)`.
    fn predict_tile(&self, i1: &Tensor<f32>, i2: &Tensor<f32>, label: Option<&Tensor<f32>>) -> Result<TilePrediction>;
}

pub struct ModelPredictor<'a> {
    pub model: &'a Ctma,
    pub store: &'a ParamStore<f32>,
}

impl Predictor for ModelPredictor<'_> {
    fn predict_tile(&self, i1: &Tensor<f32>, i2: &Tensor<f32>, label: Option<&Tensor<f32>>) -> Result<TilePrediction> {
        let batch = |t: &Tensor<f32>| -> Result<Tensor<f32>> {
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            Ok(t.clone().reshape(&s)?)
        };
        let g = Graph::new();
        let ctx = Ctx::new(&g, self.store, Mode::Eval);
        let out = self.model.forward(&ctx, &batch(i1)?, &batch(i2)?)?;
        let loss = match label {
            Some(y) => Some(total_loss(&out.p1_full, &out.p2, &batch(y)?, &self.model.cfg.loss)?.total.value().item() as f64),
            None => None,
        };
        let unbatch = |t: &Tensor<f32>| -> Result<Tensor<f32>> {
            let s = t.shape();
            Ok(t.clone().reshape(&s[1..])?)
        };
        Ok(TilePrediction {
            p1: unbatch(&out.p1_full.value())?,
            mask: unbatch(&out.mask)?,
            p2: unbatch(&out.p2.value())?,
            loss,
        })
    }
}

/// Full-raster outputs, each `(1, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPrediction {
    pub id: String,
    pub p1: Tensor<f32>,
    /// Binary coarse mask; overlapping windows are majority voted.
    pub mask: Tensor<f32>,
    pub p2: Tensor<f32>,
    /// `p2 >= threshold`.
    pub change: Tensor<f32>,
    /// Mean tile loss when the pair is labelled.
    pub loss: Option<f64>,
}

pub fn binarize_at(t: &Tensor<f32>, threshold: f64) -> Tensor<f32> {
    t.map(|v| if v as f64 >= threshold { 1.0 } else { 0.0 })
}

/// Tile, predict each window, and stitch by averaging overlaps.
pub fn predict_pair<P: Predictor + ?Sized>(
    predictor: &P,
    pair: &BiTemporalPair,
    spec: TileSpec,
    threshold: f64,
) -> Result<PairPrediction> {
    let index = TileIndex::new(pair.height(), pair.width(), spec)?;
    let t = spec.tile_size;
    let mut p1 = Vec::with_capacity(index.len());
    let mut mask = Vec::with_capacity(index.len());
    let mut p2 = Vec::with_capacity(index.len());
    let mut losses = Vec::new();
    for &(r, c) in &index.origins {
        let y = pair.label.as_ref().map(|l| crop(l, r, c, t)).transpose()?;
        let out = predictor.predict_tile(&crop(&pair.i1, r, c, t)?, &crop(&pair.i2, r, c, t)?, y.as_ref())?;
        p1.push(out.p1);
        mask.push(out.mask);
        p2.push(out.p2);
        losses.extend(out.loss);
    }
    let p2 = stitch_predictions(&p2, &index)?;
    Ok(PairPrediction {
        id: pair.id.clone(),
        p1: stitch_predictions(&p1, &index)?,
        mask: binarize_at(&stitch_predictions(&mask, &index)?, 0.5),
        change: binarize_at(&p2, threshold),
        p2,
        loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalReport {
    /// Fused map `P2` binarised at the configured threshold.
    pub fine: MetricsReport,
    /// The coarse binary mask alone.
    pub coarse: MetricsReport,
    /// Mean tile loss.
    pub loss: f64,
}

/// Metrics over every pair of a labelled split.
pub fn evaluate_with<P: Predictor + ?Sized, S: Samples + ?Sized>(
    predictor: &P,
    data: &S,
    spec: TileSpec,
    threshold: f64,
) -> Result<EvalReport> {
    let mut fine = ConfusionCounts::default();
    let mut coarse = ConfusionCounts::default();
    let mut loss = 0.0;
    for i in 0..data.len() {
        let pair = data.get(i)?;
        let y = pair.label.as_ref().ok_or_else(|| Error::Data(format!("pair {} has no label to evaluate against", pair.id)))?;
        let p = predict_pair(predictor, &pair, spec, threshold)?;
        fine = accumulate_confusion(&p.change, y, fine)?;
        coarse = accumulate_confusion(&p.mask, y, coarse)?;
        loss += p.loss.unwrap_or(f64::NAN);
    }
    let n = data.len().max(1) as f64;
    Ok(EvalReport { fine: compute_metrics(fine), coarse: compute_metrics(coarse), loss: loss / n })
}

pub fn evaluate_model<S: Samples + ?Sized>(model: &Ctma, store: &ParamStore<f32>, data: &S, spec: TileSpec) -> Result<EvalReport> {
    let threshold = model.cfg.fusion.binarize_threshold;
    evaluate_with(&ModelPredictor { model, store }, data, spec, threshold)
}

/// Restore a checkpoint and evaluate it.
pub fn evaluate<S: Samples + ?Sized>(checkpoint: &Checkpoint, data: &S, spec: TileSpec) -> Result<EvalReport> {
    let (model, store) = checkpoint.restore::<f32>()?;
    evaluate_model(&model, &store, data, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Pointwise stand-in: probability is the first channel of `i1`.
    struct Pointwise;

    impl Predictor for Pointwise {
        fn predict_tile(&self, i1: &Tensor<f32>, _: &Tensor<f32>, _: Option<&Tensor<f32>>) -> Result<TilePrediction> {
            let s = i1.shape();
            let plane = Tensor::new(vec![1, s[1], s[2]], i1.data()[..s[1] * s[2]].to_vec())?;
            Ok(TilePrediction { p1: plane.clone(), mask: binarize_at(&plane, 0.5), p2: plane, loss: Some(0.0) })
        }
    }

    struct Constant(f32);

    impl Predictor for Constant {
        fn predict_tile(&self, i1: &Tensor<f32>, _: &Tensor<f32>, _: Option<&Tensor<f32>>) -> Result<TilePrediction> {
            let s = [1, i1.shape()[1], i1.shape()[2]];
            Ok(TilePrediction { p1: Tensor::full(&s, self.0), mask: Tensor::zeros(&s), p2: Tensor::full(&s, self.0), loss: Some(1.0) })
        }
    }

    fn pair(h: usize, w: usize, seed: usize) -> BiTemporalPair {
        let y = Tensor::from_fn(&[1, h, w], |i| (((i + seed) * 2654435761usize) % 7 < 2) as u8 as f32);
        let mut i1 = Tensor::from_fn(&[3, h, w], |i| ((i * 31 + seed) % 101) as f32 / 101.0);
        i1.data_mut()[..h * w].copy_from_slice(y.data());
        BiTemporalPair::new("p", i1, Tensor::zeros(&[3, h, w]), Some(y)).unwrap()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let data = vec![pair(40, 56, 1), pair(40, 56, 2)];
        let r = evaluate_with(&Pointwise, &data, TileSpec::new(16, 8).unwrap(), 0.5).unwrap();
        assert_eq!(r.fine.f1, 1.0);
        assert_eq!(r.fine.oa, 1.0);
        assert_eq!(r.coarse.f1, 1.0);
    }

    #[test]
    fn all_zero_predictions_have_zero_recall() {
        let data = vec![pair(32, 32, 3)];
        let r = evaluate_with(&Constant(0.1), &data, TileSpec::new(16, 16).unwrap(), 0.5).unwrap();
        assert_eq!(r.fine.recall, 0.0);
        assert_eq!(r.fine.f1, 0.0);
        assert_eq!(r.loss, 1.0);
    }

    #[test]
    fn constant_and_pointwise_models_are_stride_invariant() {
        let data = vec![pair(300, 300, 5)];
        for thr in [0.3, 0.7] {
            let a = evaluate_with(&Constant(0.5), &data, TileSpec::new(128, 128).unwrap(), thr).unwrap();
            let b = evaluate_with(&Constant(0.5), &data, TileSpec::new(128, 64).unwrap(), thr).unwrap();
            assert_eq!(a.fine, b.fine);
        }
        let a = predict_pair(&Pointwise, &data[0], TileSpec::new(128, 128).unwrap(), 0.5).unwrap();
        let b = predict_pair(&Pointwise, &data[0], TileSpec::new(128, 48).unwrap(), 0.5).unwrap();
        assert_eq!(a.change, b.change);
        assert_eq!(a.mask, b.mask);
    }

    #[test]
    fn unlabelled_pair_cannot_be_scored() {
        let mut p = pair(16, 16, 0);
        p.label = None;
        assert!(matches!(evaluate_with(&Pointwise, &vec![p], TileSpec::new(16, 16).unwrap(), 0.5), Err(Error::Data(_))));
    }
}
