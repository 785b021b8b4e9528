//! Subcommand implementations. Each returns the files it wrote so callers
//! and tests can inspect them.

use std::fs::File;
use std::path::{Path, PathBuf};

use ctma_core::config::AblationFlags;
use ctma_core::data::image_io::{read_rgb, write_gray};
use ctma_core::data::synthetic::write_synthetic_dataset;
use ctma_core::data::{Dataset, Samples, Split, TileSpec};
use ctma_core::error::ErrorClass;
use ctma_core::loss_metrics::MetricsReport;
use ctma_core::pseudo_video::BiTemporalPair;
use ctma_core::train::{
    predict_pair, run_ablation, select_best, write_ablation_table, Checkpoint, EpochRecord, EvalReport, ModelPredictor,
    PairPrediction, Progress, RunDir, TrainData, Trainer,
};
use ctma_core::{Error, Result};

use crate::config::RunConfig;
use crate::render::{render_curves, render_overlays};

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
        ErrorClass::Other => 1,
    }
}

fn split_exists(root: &Path, split: Split) -> bool {
    root.join(split.as_str()).join("A").is_dir() || root.join("list").join(format!("{}.txt", split)).is_file()
}

fn run_dir(cfg: &RunConfig) -> RunDir {
    RunDir::new(&cfg.run.out_dir, &cfg.run.name)
}

fn default_checkpoint(cfg: &RunConfig, given: Option<&Path>) -> PathBuf {
    given.map(Path::to_path_buf).unwrap_or_else(|| run_dir(cfg).best_checkpoint())
}

fn eval_spec(cfg: &RunConfig) -> Result<TileSpec> {
    TileSpec::new(cfg.tiles.tile_size, cfg.tiles.eval_stride)
}

pub struct TrainSummary {
    pub run_dir: RunDir,
    pub best_epoch: usize,
    pub final_loss: Option<f64>,
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>, verbose: bool) -> Result<TrainSummary> {
    let root = &cfg.data.root;
    let train = Dataset::open(root, Split::Train)?.load_all()?;
    let val = if split_exists(root, Split::Val) { Some(Dataset::open(root, Split::Val)?.load_all()?) } else { None };
    let dir = RunDir::create(&cfg.run.out_dir, &cfg.run.name)?;
    dir.write_snapshot(&cfg.to_toml())?;
    let tcfg = cfg.train_config();
    let mut trainer = match resume {
        Some(p) => Trainer::warm_start(&tcfg, &Checkpoint::load(p)?)?,
        None => Trainer::new(&tcfg)?,
    };
    let every = (tcfg.schedule.max_iterations / 20).max(1) as u64;
    trainer.run(&TrainData { train: &train, val: val.as_deref() }, tcfg.schedule.max_iterations as u64, |p| {
        if !verbose {
            return;
        }
        match p {
            Progress::Step { step, epoch, loss, lr } if step % every == 0 => {
                eprintln!("iter {step:>7}  epoch {epoch:>4}  loss {loss:.5}  lr {lr:.2e}")
            }
            Progress::Epoch(r) if r.split != "train" => {
                eprintln!("epoch {:>4}  {:<5}  loss {:.5}  f1 {:.4}", r.epoch, r.split, r.loss, r.f1)
            }
            _ => {}
        }
    })?;
    let out = trainer.finish();
    dir.write_outcome(&out)?;
    Ok(TrainSummary { run_dir: dir, best_epoch: select_best(&out.history)?, final_loss: out.losses.last().copied() })
}

fn report_rows(r: &EvalReport) -> String {
    let row = |name: &str, m: &MetricsReport| {
        let c = m.counts;
        format!("{name},{},{},{},{},{},{},{},{}\n", m.precision, m.recall, m.f1, m.oa, c.tp, c.fp, c.fn_, c.tn)
    };
    format!("map,precision,recall,f1,oa,tp,fp,fn,tn\n{}{}", row("fused", &r.fine), row("coarse", &r.coarse))
}

/// Evaluate a checkpoint on `split`, append the row to the run's
/// `metrics.csv` and write `eval_<split>.csv`.
pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, split: Option<Split>) -> Result<(EvalReport, Vec<PathBuf>)> {
    let split = match split {
        Some(s) => s,
        None => cfg.data.eval_split.parse()?,
    };
    let ck = Checkpoint::load(&default_checkpoint(cfg, checkpoint))?;
    let data = Dataset::open(&cfg.data.root, split)?;
    let report = ctma_core::train::evaluate(&ck, &data, eval_spec(cfg)?)?;
    let dir = RunDir::create(&cfg.run.out_dir, &cfg.run.name)?;
    let epoch = if dir.metrics().exists() { select_best(&dir.read_history()?).unwrap_or(0) } else { 0 };
    dir.append_metrics(&EpochRecord::new(epoch, split.as_str(), report.loss, &report.fine, 0.0))?;
    let table = dir.root.join(format!("eval_{}.csv", split));
    std::fs::write(&table, report_rows(&report))?;
    Ok((report, vec![dir.metrics(), table]))
}

/// Where `predict` reads its pairs from.
pub enum PredictInput {
    Files { a: PathBuf, b: PathBuf },
    Split(Split),
}

fn predictions(cfg: &RunConfig, checkpoint: Option<&Path>, input: &PredictInput, limit: Option<usize>) -> Result<Vec<(BiTemporalPair, PairPrediction, f64)>> {
    let ck = Checkpoint::load(&default_checkpoint(cfg, checkpoint))?;
    let (model, store) = ck.restore::<f32>()?;
    let threshold = model.cfg.fusion.binarize_threshold;
    let pairs: Vec<BiTemporalPair> = match input {
        PredictInput::Files { a, b } => {
            let id = a.file_stem().and_then(|s| s.to_str()).unwrap_or("pair").to_string();
            vec![BiTemporalPair::new(id, read_rgb(a)?, read_rgb(b)?, None)?]
        }
        PredictInput::Split(s) => {
            let ds = Dataset::open(&cfg.data.root, *s)?;
            let n = limit.unwrap_or(ds.len()).min(ds.len());
            (0..n).map(|i| ds.get(i)).collect::<Result<_>>()?
        }
    };
    let spec = eval_spec(cfg)?;
    let predictor = ModelPredictor { model: &model, store: &store };
    pairs
        .into_iter()
        .map(|p| {
            let pred = predict_pair(&predictor, &p, spec, threshold)?;
            Ok((p, pred, threshold))
        })
        .collect()
}

/// Write `<id>_coarse_mask.png`, `<id>_probability.png` and
/// `<id>_change.png` per pair.
pub fn predict(cfg: &RunConfig, checkpoint: Option<&Path>, input: &PredictInput, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir(cfg).root.join("predictions"));
    let mut files = Vec::new();
    for (pair, pred, _) in predictions(cfg, checkpoint, input, None)? {
        for (suffix, t) in [("coarse_mask", &pred.mask), ("probability", &pred.p2), ("change", &pred.change)] {
            let path = out.join(format!("{}_{}.png", pair.id, suffix));
            write_gray(&path, t)?;
            files.push(path);
        }
    }
    Ok(files)
}

/// Write the synthetic tree under `data.root`.
pub fn synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let s = &cfg.synth;
    let splits: Vec<(Split, usize)> = [(Split::Train, s.train_pairs), (Split::Val, s.val_pairs), (Split::Test, s.test_pairs)]
        .into_iter()
        .filter(|&(_, n)| n > 0)
        .collect();
    write_synthetic_dataset(&cfg.data.root, &s.params(), &splits, s.seed)?;
    Ok(splits.iter().map(|(sp, _)| cfg.data.root.join(sp.as_str())).collect())
}

/// Train and score the four component rows; writes `ablation.csv`.
pub fn ablate(cfg: &RunConfig) -> Result<PathBuf> {
    let root = &cfg.data.root;
    let train = Dataset::open(root, Split::Train)?.load_all()?;
    let val = if split_exists(root, Split::Val) { Some(Dataset::open(root, Split::Val)?.load_all()?) } else { None };
    let tcfg = cfg.train_config();
    let results = run_ablation(
        &tcfg,
        &AblationFlags::component_rows(),
        &TrainData { train: &train, val: val.as_deref() },
        tcfg.schedule.max_iterations as u64,
    )?;
    let dir = RunDir::create(&cfg.run.out_dir, &cfg.run.name)?;
    dir.write_snapshot(&cfg.to_toml())?;
    let path = dir.root.join("ablation.csv");
    write_ablation_table(File::create(&path)?, &results)?;
    Ok(path)
}

/// Metric curves from `metrics.csv` and overlays for up to `limit` pairs
/// of `split`, under `<run>/plots/`.
pub fn plot(cfg: &RunConfig, checkpoint: Option<&Path>, split: Option<Split>, limit: usize) -> Result<Vec<PathBuf>> {
    let dir = run_dir(cfg);
    let plots = dir.root.join("plots");
    let mut files = Vec::new();
    if dir.metrics().exists() {
        let p = plots.join("curves.png");
        render_curves(&dir.read_history()?, &p)?;
        files.push(p);
    }
    let ck = default_checkpoint(cfg, checkpoint);
    if ck.exists() && limit > 0 {
        let split = match split {
            Some(s) => s,
            None => cfg.data.eval_split.parse()?,
        };
        for (pair, pred, thr) in predictions(cfg, Some(&ck), &PredictInput::Split(split), Some(limit))? {
            files.extend(render_overlays(&pair, &pred.p2, &pred.mask, thr, &plots)?);
        }
    }
    if files.is_empty() {
        return Err(Error::Data(format!("nothing to plot: {} has neither metrics.csv nor a checkpoint", dir.root.display())));
    }
    Ok(files)
}
