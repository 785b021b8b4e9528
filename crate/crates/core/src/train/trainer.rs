//! End-to-end training: shuffled tile batches, augmentation, Adam updates,
//! per-epoch validation and best-model tracking.

use ctma_autograd::Graph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::augment::augment_with_shift;
use crate::data::tiling::{crop, TileIndex, TileSpec};
use crate::error::{Error, Result};
use crate::loss_metrics::{accumulate_confusion, compute_metrics, total_loss, ConfusionCounts};
use crate::model::{batch_pairs, Ctma};
use crate::nn::{Ctx, Mode, ParamStore};
use crate::pseudo_video::BiTemporalPair;
use crate::train::checkpoint::Checkpoint;
use crate::train::evaluate::{binarize_at, evaluate_model};
use crate::train::history::{EpochRecord, RunHistory};
use crate::train::optim::{Adam, AdamParams};
use crate::train::schedule::lr_at;

pub struct TrainData<'a> {
    pub train: &'a [BiTemporalPair],
    /// Validated after every epoch when present.
    pub val: Option<&'a [BiTemporalPair]>,
}

/// One training window: pair index and top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileRef {
    pub pair: usize,
    pub row: usize,
    pub col: usize,
}

pub fn tile_refs(pairs: &[BiTemporalPair], spec: TileSpec) -> Result<Vec<TileRef>> {
    let mut out = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        if p.label.is_none() {
            return Err(Error::Data(format!("training pair {} has no label", p.id)));
        }
        let index = TileIndex::new(p.height(), p.width(), spec)?;
        out.extend(index.origins.iter().map(|&(row, col)| TileRef { pair: i, row, col }));
    }
    Ok(out)
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finaliser over a simple combination.
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Visit order of `n` tiles in `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64, 0x5EED)));
    order
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub l1: f64,
    pub l2: f64,
    pub counts: ConfusionCounts,
    pub coarse_counts: ConfusionCounts,
}

pub enum Progress<'a> {
    Step { step: u64, epoch: usize, loss: f64, lr: f64 },
    Epoch(&'a EpochRecord),
}

pub struct Trainer {
    pub model: Ctma,
    pub store: ParamStore<f32>,
    pub optimizer: Adam<f32>,
    /// Iterations completed.
    pub step: u64,
    pub history: RunHistory,
    /// Per-iteration losses observed by this trainer.
    pub losses: Vec<f64>,
    pub best_val_f1: f64,
    pub best: Option<Checkpoint>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best: Checkpoint,
    pub history: RunHistory,
    pub losses: Vec<f64>,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let (model, store) = Ctma::new::<f32>(cfg)?;
        let optimizer = Adam::new(AdamParams::from(&cfg.train), store.len());
        Ok(Self {
            model,
            store,
            optimizer,
            step: 0,
            history: RunHistory::default(),
            losses: Vec::new(),
            best_val_f1: f64::NEG_INFINITY,
            best: None,
        })
    }

    /// Resume from a checkpoint, including its optimizer state when present.
    /// The continuation visits tiles in the same order an uninterrupted
    /// run would have.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let (model, store) = ck.restore::<f32>()?;
        let hyper = AdamParams::from(&model.cfg.train);
        let optimizer = match ck.restore_optimizer(&store, hyper.clone())? {
            Some(a) => a,
            None => Adam::new(hyper, store.len()),
        };
        Ok(Self {
            model,
            store,
            optimizer,
            step: ck.step()?,
            history: RunHistory::default(),
            losses: Vec::new(),
            best_val_f1: ck.best_val_f1()?,
            best: None,
        })
    }

    /// Build from `cfg` and take weights, optimizer state and step from a
    /// checkpoint of the same architecture.
    pub fn warm_start(cfg: &TrainConfig, ck: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(cfg)?;
        ck.load_into(&mut t.store)?;
        if let Some(a) = ck.restore_optimizer(&t.store, AdamParams::from(&cfg.train))? {
            t.optimizer = a;
        }
        t.step = ck.step()?;
        t.best_val_f1 = ck.best_val_f1()?;
        Ok(t)
    }

    pub fn cfg(&self) -> &TrainConfig {
        &self.model.cfg
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let best = if self.best_val_f1.is_finite() { self.best_val_f1 } else { 0.0 };
        Checkpoint::capture(&self.store, Some(&self.optimizer), self.step, &self.model.cfg, best)
    }

    /// One forward/backward/update on a labelled batch.
    pub fn train_step(&mut self, batch: &[&BiTemporalPair], lr: f64) -> Result<StepOutcome> {
        let (i1, i2, y) = batch_pairs::<f32>(batch)?;
        let y = y.ok_or_else(|| Error::Data("training batch contains an unlabelled pair".into()))?;
        let cfg = &self.model.cfg;
        let (grads, bn, outcome) = {
            let g = Graph::new();
            let ctx = Ctx::new(&g, &self.store, Mode::Train);
            let out = self.model.forward(&ctx, &i1, &i2)?;
            let terms = total_loss(&out.p1_full, &out.p2, &y, &cfg.loss)?;
            let loss = terms.total.value().item() as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: self.step as usize, value: loss });
            }
            let change = binarize_at(&out.p2.value(), cfg.fusion.binarize_threshold);
            let outcome = StepOutcome {
                loss,
                l1: terms.l1.value().item() as f64,
                l2: terms.l2.value().item() as f64,
                counts: accumulate_confusion(&change, &y, ConfusionCounts::default())?,
                coarse_counts: accumulate_confusion(&out.mask, &y, ConfusionCounts::default())?,
            };
            let mut grads = g.backward(terms.total)?;
            (ctx.param_grads(&mut grads), ctx.take_bn_updates(), outcome)
        };
        self.optimizer.step(&mut self.store, &grads, lr);
        self.store.apply_bn_updates(&bn);
        self.step += 1;
        self.losses.push(outcome.loss);
        Ok(outcome)
    }

    fn window(pair: &BiTemporalPair, r: &TileRef, t: usize) -> Result<BiTemporalPair> {
        if pair.height() == t && pair.width() == t {
            return Ok(pair.clone());
        }
        BiTemporalPair::new(
            pair.id.clone(),
            crop(&pair.i1, r.row, r.col, t)?,
            crop(&pair.i2, r.row, r.col, t)?,
            pair.label.as_ref().map(|l| crop(l, r.row, r.col, t)).transpose()?,
        )
    }

    /// Train until `self.step == until`, closing an epoch after every full
    /// pass and once more if the budget ends mid-pass.
    pub fn run(&mut self, data: &TrainData, until: u64, mut log: impl FnMut(&Progress)) -> Result<()> {
        if data.train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let cfg = self.model.cfg.clone();
        let spec = TileSpec::new(cfg.tiles.tile_size, cfg.tiles.train_stride)?;
        let eval_spec = TileSpec::new(cfg.tiles.tile_size, cfg.tiles.eval_stride)?;
        let refs = tile_refs(data.train, spec)?;
        let bs = cfg.schedule.batch_size.max(1);
        let per_epoch = refs.len().div_ceil(bs) as u64;
        while self.step < until {
            let epoch = (self.step / per_epoch) as usize;
            let lr = lr_at(epoch, &cfg.schedule);
            let order = epoch_order(cfg.train.seed, epoch, refs.len());
            let mut counts = ConfusionCounts::default();
            let mut loss_sum = 0.0;
            let mut n_steps = 0usize;
            let first = (self.step % per_epoch) as usize;
            for b in first..per_epoch as usize {
                if self.step >= until {
                    break;
                }
                let tiles = order[b * bs..((b + 1) * bs).min(order.len())]
                    .iter()
                    .map(|&k| {
                        let r = refs[k];
                        let w = Self::window(&data.train[r.pair], &r, spec.tile_size)?;
                        Ok(if cfg.train.augment {
                            augment_with_shift(&w, mix(cfg.train.seed, epoch as u64, k as u64 + 1), cfg.train.max_shift_frac)
                        } else {
                            w
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let batch: Vec<&BiTemporalPair> = tiles.iter().collect();
                let out = self.train_step(&batch, lr)?;
                counts += out.counts;
                loss_sum += out.loss;
                n_steps += 1;
                log(&Progress::Step { step: self.step, epoch, loss: out.loss, lr });
            }
            let rec = EpochRecord::new(epoch, "train", loss_sum / n_steps.max(1) as f64, &compute_metrics(counts), lr);
            self.history.push(rec.clone())?;
            log(&Progress::Epoch(&rec));
            let score = match data.val.filter(|v| cfg.train.validate && !v.is_empty()) {
                Some(val) => {
                    let r = evaluate_model(&self.model, &self.store, val, eval_spec)?;
                    let vrec = EpochRecord::new(epoch, "val", r.loss, &r.fine, lr);
                    self.history.push(vrec.clone())?;
                    log(&Progress::Epoch(&vrec));
                    r.fine.f1
                }
                None => rec.f1,
            };
            if score > self.best_val_f1 || self.best.is_none() {
                self.best_val_f1 = self.best_val_f1.max(score);
                self.best = Some(self.checkpoint());
            }
        }
        Ok(())
    }

    pub fn finish(self) -> TrainOutcome {
        let last = self.checkpoint();
        TrainOutcome { best: self.best.unwrap_or_else(|| last.clone()), last, history: self.history, losses: self.losses }
    }
}

/// Train a fresh model for `cfg.schedule.max_iterations` iterations.
pub fn train_loop(cfg: &TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    let mut t = Trainer::new(cfg)?;
    t.run(data, cfg.schedule.max_iterations as u64, |_| {})?;
    Ok(t.finish())
}
