//! Run configuration: preset defaults, then a TOML file, then `--set`
//! overrides, resolved into one validated value.
//!
//! Every section of the training config appears as a top-level table
//! (`[te]`, `[se]`, `[se.backbone]`, `[fusion]`, `[ablation]`, `[loss]`,
//! `[schedule]`, `[tiles]`, `[train]`) next to `[run]`, `[data]` and
//! `[synth]`. Overrides use dotted keys, e.g. `fusion.lambda_mask=0.5`.

use std::path::{Path, PathBuf};

use ctma_core::config::{
    AblationFlags, FusionConfig, LossConfig, ScheduleConfig, SeConfig, TeConfig, TileConfig, TrainOptions,
};
use ctma_core::data::synthetic::SynthParams;
use ctma_core::{Error, Result, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Published widths and schedule.
    #[default]
    Full,
    /// Reduced widths for single-core runs.
    Desk,
    /// Smallest widths, 16 pixel tiles.
    Tiny,
}

impl Preset {
    pub fn train_config(self) -> TrainConfig {
        match self {
            Preset::Full => TrainConfig::default(),
            Preset::Desk => TrainConfig::desk(),
            Preset::Tiny => TrainConfig::tiny(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub out_dir: PathBuf,
    /// Base values that the rest of the file overrides.
    pub preset: Preset,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { name: "default".into(), out_dir: "runs".into(), preset: Preset::Full }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub root: PathBuf,
    pub eval_split: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { root: "data".into(), eval_split: "test".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub test_pairs: usize,
    pub height: usize,
    pub width: usize,
    pub n_shapes: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub noise: f32,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let p = SynthParams::default();
        Self {
            train_pairs: 32,
            val_pairs: 8,
            test_pairs: 8,
            height: p.height,
            width: p.width,
            n_shapes: p.n_shapes,
            min_size: p.min_size,
            max_size: p.max_size,
            noise: p.noise,
            seed: 0,
        }
    }
}

impl SynthSection {
    pub fn params(&self) -> SynthParams {
        SynthParams {
            height: self.height,
            width: self.width,
            n_shapes: self.n_shapes,
            min_size: self.min_size,
            max_size: self.max_size,
            noise: self.noise,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub synth: SynthSection,
    pub te: TeConfig,
    pub se: SeConfig,
    pub fusion: FusionConfig,
    pub ablation: AblationFlags,
    pub loss: LossConfig,
    pub schedule: ScheduleConfig,
    pub tiles: TileConfig,
    pub train: TrainOptions,
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            te: self.te.clone(),
            se: self.se.clone(),
            fusion: self.fusion.clone(),
            ablation: self.ablation,
            loss: self.loss.clone(),
            schedule: self.schedule.clone(),
            tiles: self.tiles.clone(),
            train: self.train.clone(),
        }
    }

    fn with_train_config(run: RunSection, cfg: TrainConfig) -> Self {
        Self {
            run,
            data: DataSection::default(),
            synth: SynthSection::default(),
            te: cfg.te,
            se: cfg.se,
            fusion: cfg.fusion,
            ablation: cfg.ablation,
            loss: cfg.loss,
            schedule: cfg.schedule,
            tiles: cfg.tiles,
            train: cfg.train,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.synth.params().validate()?;
        if self.run.name.is_empty() || self.run.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("run.name {:?} must be a plain directory name", self.run.name)));
        }
        self.data.eval_split.parse::<ctma_core::data::Split>()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.run.out_dir.join(&self.run.name)
    }
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `key.path=value`; the value is read as a TOML literal, falling back to a
/// bare string.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {:?} is not of the form key.path=value", s)))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override {:?} has an empty key segment", s)));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{} is a value, not a section", p)))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn preset_of(t: &Table) -> Result<Preset> {
    match t.get("run").and_then(|r| r.get("preset")) {
        None => Ok(Preset::Full),
        Some(v) => v.clone().try_into().map_err(|e| Error::Config(format!("run.preset: {}", e))),
    }
}

/// Resolve a run config from an optional file and ordered overrides.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut top = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {}", p.display(), e)))?;
            text.parse::<Table>().map_err(|e| Error::Config(format!("{}: {}", p.display(), e)))?
        }
        None => Table::new(),
    };
    for o in overrides {
        let (path, value) = parse_override(o)?;
        set_path(&mut top, &path, value)?;
    }
    let preset = preset_of(&top)?;
    let base = RunConfig::with_train_config(RunSection { preset, ..Default::default() }, preset.train_config());
    let mut table: Table = toml::from_str(&base.to_toml()).expect("base config round-trips");
    merge(&mut table, top);
    let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
