//! Training configuration. Every section deserialises from TOML with
//! missing keys taking their defaults and unknown keys rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeConfig {
    pub tblock1_channels: usize,
    /// Two filter counts per T-Block II.
    pub tblock2_filters: [usize; 4],
    pub mask_threshold: f64,
    pub n_frames: usize,
}

impl Default for TeConfig {
    fn default() -> Self {
        Self { tblock1_channels: 64, tblock2_filters: [256, 256, 512, 512], mask_threshold: 0.5, n_frames: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    /// Output channels of the stride-4 and stride-8 stages.
    pub stage_channels: [usize; 2],
    pub blocks_per_stage: [usize; 2],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self { stem_channels: 64, stage_channels: [64, 128], blocks_per_stage: [2, 2] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeConfig {
    pub encoder_channels: [usize; 3],
    pub decoder_channels: [usize; 4],
    pub mask_encoder_channels: [usize; 3],
    pub mask_decoder_channels: [usize; 3],
    pub backbone: BackboneConfig,
}

impl Default for SeConfig {
    fn default() -> Self {
        Self {
            encoder_channels: [32, 64, 128],
            decoder_channels: [256, 128, 64, 32],
            mask_encoder_channels: [32, 64, 128],
            mask_decoder_channels: [64, 32, 16],
            backbone: BackboneConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub lambda_mask: f64,
    /// (local, global): scaling of the deepest encoder level and of the
    /// backbone difference when the first decoder block joins them.
    pub gl_weights: [f64; 2],
    pub binarize_threshold: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { lambda_mask: 0.3, gl_weights: [0.5, 0.5], binarize_threshold: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub use_te: bool,
    pub use_se: bool,
    pub use_resnet_diff: bool,
    pub use_mask_augment: bool,
    pub use_motion_augment: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self { use_te: true, use_se: true, use_resnet_diff: true, use_mask_augment: true, use_motion_augment: true }
    }
}

impl AblationFlags {
    /// The four component-table rows as (ResNet difference, mask augment).
    pub fn component_rows() -> Vec<AblationFlags> {
        [(false, false), (false, true), (true, false), (true, true)]
            .into_iter()
            .map(|(rn, ma)| AblationFlags { use_resnet_diff: rn, use_mask_augment: ma, ..Default::default() })
            .collect()
    }

    pub fn label(&self) -> String {
        let sign = |b: bool| if b { '+' } else { '-' };
        format!(
            "TE{}SE{}RN{}MA{}MO{}",
            sign(self.use_te),
            sign(self.use_se),
            sign(self.use_resnet_diff),
            sign(self.use_mask_augment),
            sign(self.use_motion_augment)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// alpha * L1 + (1 - alpha) * L2
    Balanced,
    /// L2 + aux_weight * L1
    Auxiliary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    None,
    InverseFrequency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub mode: LossMode,
    pub alpha: f64,
    pub aux_weight: f64,
    pub class_weighting: ClassWeighting,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            mode: LossMode::Balanced,
            alpha: 0.5,
            aux_weight: 0.4,
            class_weighting: ClassWeighting::InverseFrequency,
            epsilon: 1e-7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub decay_rate: f64,
    /// In epochs.
    pub decay_step: usize,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub max_iterations: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::whu()
    }
}

impl ScheduleConfig {
    pub fn svcd() -> Self {
        Self { base_lr: 4e-4, decay_rate: 0.1, decay_step: 70, optimizer: OptimizerKind::Adam, batch_size: 8, max_iterations: 260_000 }
    }

    pub fn levir() -> Self {
        Self { base_lr: 2e-3, decay_rate: 0.2, decay_step: 60, optimizer: OptimizerKind::Adam, batch_size: 8, max_iterations: 220_000 }
    }

    pub fn whu() -> Self {
        Self { base_lr: 4e-4, decay_rate: 0.2, decay_step: 105, optimizer: OptimizerKind::Adam, batch_size: 8, max_iterations: 160_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileConfig {
    pub tile_size: usize,
    pub train_stride: usize,
    pub eval_stride: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self { tile_size: 256, train_stride: 128, eval_stride: 256 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub seed: u64,
    pub augment: bool,
    /// Largest translation as a fraction of the tile side.
    pub max_shift_frac: f64,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Validate after every epoch when a validation split exists.
    pub validate: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            augment: true,
            max_shift_frac: 0.1,
            grad_clip: 0.0,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            validate: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub te: TeConfig,
    pub se: SeConfig,
    pub fusion: FusionConfig,
    pub ablation: AblationFlags,
    pub loss: LossConfig,
    pub schedule: ScheduleConfig,
    pub tiles: TileConfig,
    pub train: TrainOptions,
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl TrainConfig {
    /// Reduced widths that train in minutes on one CPU core. All
    /// components stay enabled.
    pub fn desk() -> Self {
        Self {
            te: TeConfig { tblock1_channels: 8, tblock2_filters: [16, 16, 32, 32], ..Default::default() },
            se: SeConfig {
                encoder_channels: [8, 16, 32],
                decoder_channels: [32, 16, 8, 8],
                mask_encoder_channels: [8, 16, 32],
                mask_decoder_channels: [16, 8, 8],
                backbone: BackboneConfig { stem_channels: 8, stage_channels: [8, 16], blocks_per_stage: [1, 1] },
            },
            tiles: TileConfig { tile_size: 64, train_stride: 64, eval_stride: 64 },
            // The higher LEVIR base rate; at these widths it fits 32 synthetic
            // pairs in a few hundred iterations.
            schedule: ScheduleConfig { base_lr: 2e-3, max_iterations: 500, ..ScheduleConfig::whu() },
            ..Default::default()
        }
    }

    /// Smallest configuration that still exercises every component; used for
    /// finite-difference checks on 16x16 inputs.
    pub fn tiny() -> Self {
        Self {
            te: TeConfig { tblock1_channels: 2, tblock2_filters: [4, 4, 4, 4], n_frames: 4, ..Default::default() },
            se: SeConfig {
                encoder_channels: [4, 8, 16],
                decoder_channels: [8, 4, 4, 4],
                mask_encoder_channels: [4, 8, 16],
                mask_decoder_channels: [8, 4, 4],
                backbone: BackboneConfig { stem_channels: 4, stage_channels: [4, 4], blocks_per_stage: [1, 1] },
            },
            tiles: TileConfig { tile_size: 16, train_stride: 16, eval_stride: 16 },
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let te = &self.te;
        check(te.mask_threshold > 0.0 && te.mask_threshold < 1.0, || {
            format!("te.mask_threshold must lie in (0, 1), got {}", te.mask_threshold)
        })?;
        check(te.n_frames >= 2, || format!("te.n_frames must be at least 2, got {}", te.n_frames))?;
        let widths = [te.tblock1_channels]
            .iter()
            .chain(&te.tblock2_filters)
            .chain(&self.se.encoder_channels)
            .chain(&self.se.decoder_channels)
            .chain(&self.se.mask_encoder_channels)
            .chain(&self.se.mask_decoder_channels)
            .chain(&self.se.backbone.stage_channels)
            .chain([self.se.backbone.stem_channels].iter())
            .all(|&c| c > 0);
        check(widths, || "channel counts must be positive".into())?;
        let f = &self.fusion;
        check((0.0..=1.0).contains(&f.lambda_mask), || format!("fusion.lambda_mask must lie in [0, 1], got {}", f.lambda_mask))?;
        check(
            f.gl_weights.iter().all(|&w| w >= 0.0) && (f.gl_weights[0] + f.gl_weights[1] - 1.0).abs() < 1e-9,
            || format!("fusion.gl_weights must be nonnegative and sum to 1, got {:?}", f.gl_weights),
        )?;
        check(f.binarize_threshold > 0.0 && f.binarize_threshold < 1.0, || {
            format!("fusion.binarize_threshold must lie in (0, 1), got {}", f.binarize_threshold)
        })?;
        check(self.ablation.use_te && self.ablation.use_se, || "ablation.use_te and ablation.use_se must stay enabled".into())?;
        let l = &self.loss;
        check((0.0..=1.0).contains(&l.alpha), || format!("loss.alpha must lie in [0, 1], got {}", l.alpha))?;
        check(l.aux_weight >= 0.0, || format!("loss.aux_weight must be nonnegative, got {}", l.aux_weight))?;
        check(l.epsilon > 0.0 && l.epsilon < 0.01, || format!("loss.epsilon must lie in (0, 0.01), got {}", l.epsilon))?;
        let s = &self.schedule;
        check(s.base_lr > 0.0, || format!("schedule.base_lr must be positive, got {}", s.base_lr))?;
        check(s.decay_rate > 0.0 && s.decay_rate < 1.0, || format!("schedule.decay_rate must lie in (0, 1), got {}", s.decay_rate))?;
        check(s.decay_step >= 1, || "schedule.decay_step must be at least 1".into())?;
        check(s.batch_size >= 1, || "schedule.batch_size must be at least 1".into())?;
        let t = &self.tiles;
        check(t.tile_size % 8 == 0 && t.tile_size > 0, || format!("tiles.tile_size must be a positive multiple of 8, got {}", t.tile_size))?;
        check(t.train_stride > 0 && t.train_stride <= t.tile_size, || "tiles.train_stride must lie in [1, tile_size]".into())?;
        check(t.eval_stride > 0 && t.eval_stride <= t.tile_size, || "tiles.eval_stride must lie in [1, tile_size]".into())?;
        let o = &self.train;
        check((0.0..0.5).contains(&o.max_shift_frac), || "train.max_shift_frac must lie in [0, 0.5)".into())?;
        check(o.grad_clip >= 0.0 && o.weight_decay >= 0.0, || "train.grad_clip and train.weight_decay must be nonnegative".into())?;
        check(
            (0.0..1.0).contains(&o.adam_beta1) && (0.0..1.0).contains(&o.adam_beta2) && o.adam_eps > 0.0,
            || "adam betas must lie in [0, 1) and eps must be positive".into(),
        )?;
        Ok(())
    }
}
