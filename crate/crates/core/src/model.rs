//! The full network: temporal encoder, coarse mask, global-local branch,
//! mask branch and fusion.

use ctma_autograd::{Float, Tensor, Var};

use crate::cfa_se::{fuse_vars, GlInputs, GlobalLocal, MaskBranch};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{init_rng, Builder, Ctx, ParamStore};
use crate::pseudo_video::{video_tensor, BiTemporalPair};
use crate::temporal_encoder::{threshold_mask, TemporalEncoder};

/// Module handles; tensors live in the accompanying [`ParamStore`].
pub struct Ctma {
    pub cfg: TrainConfig,
    pub te: TemporalEncoder,
    pub gl: GlobalLocal,
    pub mask_branch: Option<MaskBranch>,
}

pub struct CtmaOutput<'g, T: Float> {
    /// Coarse probabilities, `(B, 1, H/4, W/4)`.
    pub p1: Var<'g, T>,
    /// `p1` bilinearly resized to `(B, 1, H, W)` for supervision.
    pub p1_full: Var<'g, T>,
    /// Binary guidance mask, `(B, 1, H, W)`.
    pub mask: Tensor<T>,
    pub p_gl: Var<'g, T>,
    pub p_mask: Option<Var<'g, T>>,
    /// Final fused probabilities, `(B, 1, H, W)`.
    pub p2: Var<'g, T>,
}

impl Ctma {
    /// Build the network and draw its initial parameters from
    /// `cfg.train.seed`.
    pub fn new<T: Float>(cfg: &TrainConfig) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = init_rng(cfg.train.seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let flags = cfg.ablation;
        let te = TemporalEncoder::new(&mut b, &cfg.te, flags.use_motion_augment);
        let [_, f2, _, f4] = cfg.te.tblock2_filters;
        let motion = flags.use_motion_augment.then_some([f2, f2, f4]);
        let backbone = flags.use_resnet_diff.then_some(&cfg.se.backbone);
        let gl = GlobalLocal::new(&mut b, cfg.se.encoder_channels, cfg.se.decoder_channels, backbone, motion, &cfg.fusion);
        let mask_branch = flags
            .use_mask_augment
            .then(|| MaskBranch::new(&mut b, cfg.se.mask_encoder_channels, cfg.se.mask_decoder_channels));
        Ok((Self { cfg: cfg.clone(), te, gl, mask_branch }, store))
    }

    /// `i1` and `i2` are `(B, 3, H, W)` with H and W divisible by 8.
    pub fn forward<'g, T: Float>(
        &self,
        ctx: &Ctx<'g, '_, T>,
        i1: &Tensor<T>,
        i2: &Tensor<T>,
    ) -> Result<CtmaOutput<'g, T>> {
        i1.expect_shape(i2.shape()).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let s = i1.shape().to_vec();
        if s.len() != 4 || s[1] != 3 || s[2] % 8 != 0 || s[3] % 8 != 0 || s[2] == 0 || s[3] == 0 {
            return Err(Error::BadShape(format!("input must be (B, 3, H, W) with H, W multiples of 8, got {:?}", s)));
        }
        let (h, w) = (s[2], s[3]);
        let video = ctx.constant(video_tensor(i1, i2, self.cfg.te.n_frames)?);
        let te = self.te.forward(ctx, &video)?;
        let p1_full = te.p1.resize_bilinear(h, w)?;
        let mask = threshold_mask(&te.p1.value(), self.cfg.te.mask_threshold, (h, w))?;

        let v1 = ctx.constant(i1.clone());
        let v2 = ctx.constant(i2.clone());
        let pair = ctx.graph.concat(&[v1, v2])?;
        let motion = te.motion.map(|[a, b]| [a, a, b]);
        let p_gl = self.gl.forward(ctx, &GlInputs { pair: &pair, i1: &v1, i2: &v2, motion })?;
        let (p_mask, p2) = match &self.mask_branch {
            Some(mb) => {
                let m = ctx.constant(mask.clone());
                let masked = MaskBranch::masked_input(ctx, &v1, &v2, &m)?;
                let pm = mb.forward(ctx, &masked)?;
                let p2 = fuse_vars(&p_gl, &pm, self.cfg.fusion.lambda_mask)?;
                (Some(pm), p2)
            }
            None => (None, p_gl),
        };
        Ok(CtmaOutput { p1: te.p1, p1_full, mask, p_gl, p_mask, p2 })
    }
}

/// Stack pairs into `(B, 3, H, W)` image batches and, when every pair is
/// labelled, a `(B, 1, H, W)` target.
pub fn batch_pairs<T: Float>(pairs: &[&BiTemporalPair]) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let lift = |t: &Tensor<f32>| -> Result<Tensor<T>> {
        let mut shape = vec![1];
        shape.extend_from_slice(t.shape());
        Ok(t.cast::<T>().reshape(&shape)?)
    };
    let mut a = Vec::with_capacity(pairs.len());
    let mut b = Vec::with_capacity(pairs.len());
    let mut y = Vec::with_capacity(pairs.len());
    for p in pairs {
        a.push(lift(&p.i1)?);
        b.push(lift(&p.i2)?);
        if let Some(l) = &p.label {
            y.push(lift(l)?);
        }
    }
    let stack = |v: &[Tensor<T>]| -> Result<Tensor<T>> {
        Tensor::stack_batch(&v.iter().collect::<Vec<_>>()).map_err(|e| Error::ShapeMismatch(e.to_string()))
    };
    let labels = if y.len() == pairs.len() { Some(stack(&y)?) } else { None };
    Ok((stack(&a)?, stack(&b)?, labels))
}
