//! Volumetric encoder over the pseudo-video: T-Block I downsampling, two
//! T-Block II residual stacks, time aggregation and the coarse change head.

use ctma_autograd::{nearest, ConvGeom, Float, Tensor, Var};

use crate::config::TeConfig;
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, ConvBn, Ctx};

pub struct TBlock1 {
    pub cbr: ConvBn,
}

impl TBlock1 {
    pub const GEOM: ConvGeom = ConvGeom { kernel: [3, 9, 9], stride: [1, 4, 4], padding: [1, 4, 4] };

    pub fn new<T: Float>(b: &mut Builder<'_, T>, name: &str, in_ch: usize, out_ch: usize) -> Self {
        Self { cbr: ConvBn::volumetric(b, name, in_ch, out_ch, Self::GEOM) }
    }

    /// `(B, C, T, H, W)` to `(B, out, T, H/4, W/4)`.
    pub fn forward<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, video: &Var<'g, T>) -> Result<Var<'g, T>> {
        let s = video.shape();
        if s.len() != 5 || s[3] % 4 != 0 || s[4] % 4 != 0 {
            return Err(Error::BadShape(format!("video must be (B, C, T, H, W) with H, W divisible by 4, got {:?}", s)));
        }
        self.cbr.forward_relu(ctx, video)
    }
}

pub struct TBlock2 {
    pub reduce: ConvBn,
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub proj: ConvBn,
}

impl TBlock2 {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, name: &str, in_ch: usize, filters: [usize; 2]) -> Self {
        let pointwise = ConvGeom::volumetric([1; 3], [1; 3], [0; 3]);
        let cube = ConvGeom::volumetric([3; 3], [1; 3], [1; 3]);
        let [mid, out] = filters;
        let mut s = b.sub(name);
        Self {
            reduce: ConvBn::volumetric(&mut s, "reduce", in_ch, mid, pointwise),
            conv1: ConvBn::volumetric(&mut s, "conv1", mid, mid, cube),
            conv2: ConvBn::volumetric(&mut s, "conv2", mid, out, cube),
            proj: ConvBn::volumetric(&mut s, "proj", in_ch, out, pointwise),
        }
    }

    pub fn forward<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let h = self.reduce.forward_relu(ctx, x)?;
        let h = self.conv1.forward_relu(ctx, &h)?;
        let h = self.conv2.forward(ctx, &h)?;
        let skip = self.proj.forward(ctx, x)?;
        Ok(h.add(&skip)?.relu())
    }
}

/// Time aggregation: mean and max over frames, channel concat, pointwise
/// projection back to the input width.
pub struct Tam {
    pub fuse: ConvBn,
}

impl Tam {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        Self { fuse: ConvBn::planar(b, name, 2 * channels, channels, 1, 1, 0) }
    }

    /// Concatenated `(B, 2c, h, w)` pooled descriptor, before projection.
    pub fn descriptor<'g, T: Float>(ctx: &Ctx<'g, '_, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let avg = x.time_mean()?;
        let max = x.time_max()?;
        Ok(ctx.graph.concat(&[avg, max])?)
    }

    pub fn forward<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let d = Self::descriptor(ctx, x)?;
        self.fuse.forward_relu(ctx, &d)
    }
}

/// Single 3x3 convolution to one channel, then the logistic function.
pub struct CoarseHead {
    pub conv: Conv,
}

impl CoarseHead {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, name: &str, in_ch: usize) -> Self {
        Self { conv: Conv::planar(b, name, in_ch, 1, 3, 1, 1, true) }
    }

    pub fn forward<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(self.conv.forward(ctx, x)?.sigmoid())
    }
}

pub struct TemporalEncoder {
    pub tblock1: TBlock1,
    pub tblock2a: TBlock2,
    pub tblock2b: TBlock2,
    /// Only built when motion features are injected into the spatial encoder.
    pub tam1: Option<Tam>,
    pub tam2: Tam,
    pub head: CoarseHead,
}

pub struct TeOutput<'g, T: Float> {
    /// Coarse probabilities at a quarter of the input resolution.
    pub p1: Var<'g, T>,
    /// Aggregated features after the first and second T-Block II, present
    /// when the encoder was built with motion output.
    pub motion: Option<[Var<'g, T>; 2]>,
}

impl TemporalEncoder {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, cfg: &TeConfig, motion: bool) -> Self {
        let [f1, f2, f3, f4] = cfg.tblock2_filters;
        let mut s = b.sub("te");
        Self {
            tblock1: TBlock1::new(&mut s, "tblock1", 3, cfg.tblock1_channels),
            tblock2a: TBlock2::new(&mut s, "tblock2a", cfg.tblock1_channels, [f1, f2]),
            tblock2b: TBlock2::new(&mut s, "tblock2b", f2, [f3, f4]),
            tam1: motion.then(|| Tam::new(&mut s, "tam1", f2)),
            tam2: Tam::new(&mut s, "tam2", f4),
            head: CoarseHead::new(&mut s, "head", f4),
        }
    }

    pub fn forward<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, video: &Var<'g, T>) -> Result<TeOutput<'g, T>> {
        let h = self.tblock1.forward(ctx, video)?;
        let h1 = self.tblock2a.forward(ctx, &h)?;
        let h2 = self.tblock2b.forward(ctx, &h1)?;
        let a2 = self.tam2.forward(ctx, &h2)?;
        let p1 = self.head.forward(ctx, &a2)?;
        let motion = match &self.tam1 {
            Some(tam1) => Some([tam1.forward(ctx, &h1)?, a2]),
            None => None,
        };
        Ok(TeOutput { p1, motion })
    }
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::BadThreshold(threshold))
    }
}

/// Binarise `(B, 1, h, w)` probabilities (ties go to 1), then upsample by
/// nearest neighbour to `(B, 1, H, W)`.
pub fn threshold_mask<T: Float>(coarse: &Tensor<T>, threshold: f64, target_hw: (usize, usize)) -> Result<Tensor<T>> {
    check_threshold(threshold)?;
    let s = coarse.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::ShapeMismatch(format!("coarse map must be (B, 1, h, w), got {:?}", s)));
    }
    let t = T::from_f64(threshold);
    let bin = coarse.map(|v| if v >= t { T::one() } else { T::zero() });
    let (h, w) = target_hw;
    let up = nearest(bin.data(), s, h, w);
    Ok(Tensor::new(vec![s[0], 1, h, w], up)?)
}
