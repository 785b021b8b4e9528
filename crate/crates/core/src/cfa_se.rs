//! Spatial encoder guided by the coarse foreground: S-Block pyramid with
//! motion injection, backbone difference features, the four-block decoder,
//! the masked U-shaped branch and the final probability fusion.

use ctma_autograd::{ConvGeom, Float, Tensor, Var};

use crate::config::{BackboneConfig, FusionConfig};
use crate::error::{Error, Result};
use crate::nn::{Builder, Conv, ConvBn, Ctx};
use crate::temporal_encoder::check_threshold;

/// conv-norm-relu, (optional extra conv-norm-relu), conv-norm, residual
/// from the first activation, relu, 2x2 max pooling.
pub struct SBlock {
    pub first: ConvBn,
    pub extra: Option<ConvBn>,
    pub last: ConvBn,
}

impl SBlock {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, name: &str, in_ch: usize, out_ch: usize, extra: bool) -> Self {
        let mut s = b.sub(name);
        Self {
            first: ConvBn::planar(&mut s, "conv1", in_ch, out_ch, 3, 1, 1),
            extra: extra.then(|| ConvBn::planar(&mut s, "conv_extra", out_ch, out_ch, 3, 1, 1)),
            last: ConvBn::planar(&mut s, "conv2", out_ch, out_ch, 3, 1, 1),
        }
    }

    pub fn forward<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let a = self.first.forward_relu(ctx, x)?;
        let h = match &self.extra {
            Some(e) => e.forward_relu(ctx, &a)?,
            None => a,
        };
        let n = self.last.forward(ctx, &h)?;
        Ok(a.add(&n)?.relu().max_pool2()?)
    }
}

/// Resize motion features to the block input, concatenate, and project
/// back to the block's input width with a pointwise convolution.
pub struct MotionInject {
    pub proj: Conv,
}

impl MotionInject {
    /// The projection starts as the identity on the original channels with
    /// small random weights on the motion channels and zero bias.
    pub fn new<T: Float>(b: &mut Builder<'_, T>, name: &str, in_ch: usize, motion_ch: usize) -> Self {
        let total = in_ch + motion_ch;
        let mut s = b.sub(name);
        let bound = 0.1 / (total as f64).sqrt();
        let mut w = Tensor::<T>::zeros(&[in_ch, total, 1, 1]);
        {
            use rand::Rng;
            let rng = s.rng();
            for o in 0..in_ch {
                w.data_mut()[o * total + o] = T::one();
                for m in in_ch..total {
                    w.data_mut()[o * total + m] = T::from_f64(rng.random_range(-bound..=bound));
                }
            }
        }
        let weight = s.constant("weight", w, true);
        let bias = s.constant("bias", Tensor::zeros(&[in_ch]), true);
        Self { proj: Conv { weight, bias: Some(bias), geom: ConvGeom::planar(1, 1, 0) } }
    }

    pub fn forward<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, x: &Var<'g, T>, motion: &Var<'g, T>) -> Result<Var<'g, T>> {
        let s = x.shape();
        let m = motion.resize_bilinear(s[2], s[3])?;
        let joined = ctx.graph.concat(&[*x, m])?;
        self.proj.forward(ctx, &joined)
    }
}

/// Three S-Blocks (the last with the extra layer) at strides 2, 4, 8.
pub struct SpatialEncoder {
    pub blocks: Vec<SBlock>,
    pub inject: Option<Vec<MotionInject>>,
}

impl SpatialEncoder {
    pub fn new<T: Float>(
        b: &mut Builder<'_, T>,
        name: &str,
        in_ch: usize,
        channels: [usize; 3],
        motion_channels: Option<[usize; 3]>,
    ) -> Self {
        let mut s = b.sub(name);
        let inputs = [in_ch, channels[0], channels[1]];
        let blocks = (0..3).map(|i| SBlock::new(&mut s, &format!("sblock{}", i + 1), inputs[i], channels[i], i == 2)).collect();
        let inject = motion_channels
            .map(|mc| (0..3).map(|i| MotionInject::new(&mut s, &format!("motion{}", i + 1), inputs[i], mc[i])).collect());
        Self { blocks, inject }
    }

    pub fn forward<'g, T: Float>(
        &self,
        ctx: &Ctx<'g, '_, T>,
        x: &Var<'g, T>,
        motion: Option<&[Var<'g, T>; 3]>,
    ) -> Result<[Var<'g, T>; 3]> {
        let mut levels = Vec::with_capacity(3);
        let mut h = *x;
        for (i, block) in self.blocks.iter().enumerate() {
            if let (Some(inject), Some(m)) = (&self.inject, motion) {
                h = inject[i].forward(ctx, &h, &m[i])?;
            }
            h = block.forward(ctx, &h)?;
            levels.push(h);
        }
        Ok([levels[0], levels[1], levels[2]])
    }
}

pub struct BasicBlock {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub down: Option<ConvBn>,
}

impl BasicBlock {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, name: &str, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        let mut s = b.sub(name);
        Self {
            conv1: ConvBn::planar(&mut s, "conv1", in_ch, out_ch, 3, stride, 1),
            conv2: ConvBn::planar(&mut s, "conv2", out_ch, out_ch, 3, 1, 1),
            down: (stride != 1 || in_ch != out_ch).then(|| ConvBn::planar(&mut s, "downsample", in_ch, out_ch, 1, stride, 0)),
        }
    }

    pub fn forward<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let h = self.conv1.forward_relu(ctx, x)?;
        let h = self.conv2.forward(ctx, &h)?;
        let skip = match &self.down {
            Some(d) => d.forward(ctx, x)?,
            None => *x,
        };
        Ok(h.add(&skip)?.relu())
    }
}

/// Residual network cut at its stride-8 stage: 7x7/2 stem, 2x2 max pool,
/// a stride-1 stage and a stride-2 stage of basic blocks.
pub struct Backbone {
    pub stem: ConvBn,
    pub stages: Vec<Vec<BasicBlock>>,
    pub out_channels: usize,
}

impl Backbone {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, name: &str, cfg: &BackboneConfig) -> Self {
        let mut s = b.sub(name);
        let stem = ConvBn::planar(&mut s, "stem", 3, cfg.stem_channels, 7, 2, 3);
        let mut in_ch = cfg.stem_channels;
        let mut stages = Vec::new();
        for (i, (&out, &n)) in cfg.stage_channels.iter().zip(&cfg.blocks_per_stage).enumerate() {
            let mut blocks = Vec::new();
            for j in 0..n.max(1) {
                let stride = if i == 1 && j == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(&mut s, &format!("layer{}.{}", i + 1, j), in_ch, out, stride));
                in_ch = out;
            }
            stages.push(blocks);
        }
        Self { stem, stages, out_channels: in_ch }
    }

    pub fn forward<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, x: &Var<'g, T>) -> Result<Var<'g, T>> {
        let mut h = self.stem.forward_relu(ctx, x)?.max_pool2()?;
        for block in self.stages.iter().flatten() {
            h = block.forward(ctx, &h)?;
        }
        Ok(h)
    }

    /// `B(i1) - B(i2)` with shared weights.
    pub fn difference<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, i1: &Var<'g, T>, i2: &Var<'g, T>) -> Result<Var<'g, T>> {
        let a = self.forward(ctx, i1)?;
        let b = self.forward(ctx, i2)?;
        Ok(a.sub(&b)?)
    }
}

/// Upsample the previous decoded feature to the skip resolution,
/// concatenate, then conv-norm-relu and conv-norm with a residual and relu.
pub struct DecoderBlock {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
}

impl DecoderBlock {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, name: &str, in_ch: usize, out_ch: usize) -> Self {
        let mut s = b.sub(name);
        Self {
            conv1: ConvBn::planar(&mut s, "conv1", in_ch, out_ch, 3, 1, 1),
            conv2: ConvBn::planar(&mut s, "conv2", out_ch, out_ch, 3, 1, 1),
        }
    }

    pub fn forward<'g, T: Float>(
        &self,
        ctx: &Ctx<'g, '_, T>,
        skip: &[Var<'g, T>],
        prev: Option<&Var<'g, T>>,
    ) -> Result<Var<'g, T>> {
        let s = skip[0].shape();
        let mut parts = skip.to_vec();
        if let Some(p) = prev {
            parts.push(p.resize_bilinear(s[2], s[3])?);
        }
        let x = if parts.len() == 1 { parts[0] } else { ctx.graph.concat(&parts)? };
        let a = self.conv1.forward_relu(ctx, &x)?;
        let n = self.conv2.forward(ctx, &a)?;
        Ok(a.add(&n)?.relu())
    }
}

fn head<T: Float>(b: &mut Builder<'_, T>, in_ch: usize) -> Conv {
    Conv::planar(b, "head", in_ch, 1, 1, 1, 0, true)
}

/// Global-local branch: encoder pyramid, optional backbone difference and
/// the four-block decoder producing `P_GL`.
pub struct GlobalLocal {
    pub encoder: SpatialEncoder,
    pub backbone: Option<Backbone>,
    pub decoder: Vec<DecoderBlock>,
    pub head: Conv,
    pub gl_weights: [f64; 2],
}

pub struct GlInputs<'a, 'g, T: Float> {
    /// `(B, 6, H, W)` channel-concatenated pair.
    pub pair: &'a Var<'g, T>,
    pub i1: &'a Var<'g, T>,
    pub i2: &'a Var<'g, T>,
    /// Motion features for the three S-Blocks.
    pub motion: Option<[Var<'g, T>; 3]>,
}

impl GlobalLocal {
    pub fn new<T: Float>(
        b: &mut Builder<'_, T>,
        enc: [usize; 3],
        dec: [usize; 4],
        backbone: Option<&BackboneConfig>,
        motion_channels: Option<[usize; 3]>,
        fusion: &FusionConfig,
    ) -> Self {
        let mut s = b.sub("se");
        let encoder = SpatialEncoder::new(&mut s, "encoder", 6, enc, motion_channels);
        let backbone = backbone.map(|c| Backbone::new(&mut s, "backbone", c));
        let diff_ch = backbone.as_ref().map_or(0, |bb| bb.out_channels);
        let mut d = s.sub("decoder");
        let decoder = vec![
            DecoderBlock::new(&mut d, "block1", enc[2] + diff_ch, dec[0]),
            DecoderBlock::new(&mut d, "block2", enc[1] + dec[0], dec[1]),
            DecoderBlock::new(&mut d, "block3", enc[0] + dec[1], dec[2]),
            DecoderBlock::new(&mut d, "block4", 6 + dec[2], dec[3]),
        ];
        let head = head(&mut s, dec[3]);
        Self { encoder, backbone, decoder, head, gl_weights: fusion.gl_weights }
    }

    pub fn encode<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, inp: &GlInputs<'_, 'g, T>) -> Result<[Var<'g, T>; 3]> {
        self.encoder.forward(ctx, inp.pair, inp.motion.as_ref())
    }

    pub fn difference<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, inp: &GlInputs<'_, 'g, T>) -> Result<Option<Var<'g, T>>> {
        self.backbone.as_ref().map(|bb| bb.difference(ctx, inp.i1, inp.i2)).transpose()
    }

    /// Four decoding blocks, coarse to fine, then a pointwise head and the
    /// logistic function.
    pub fn decode<'g, T: Float>(
        &self,
        ctx: &Ctx<'g, '_, T>,
        levels: &[Var<'g, T>; 3],
        diff: Option<&Var<'g, T>>,
        pair: &Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let first = match diff {
            Some(f) => {
                let (ls, fs) = (levels[2].shape(), f.shape());
                if ls[0] != fs[0] || ls[2..] != fs[2..] {
                    return Err(Error::ShapeMismatch(format!(
                        "difference feature {:?} does not match the deepest level {:?}",
                        fs, ls
                    )));
                }
                let [wl, wg] = self.gl_weights;
                vec![levels[2].scale(T::from_f64(wl)), f.scale(T::from_f64(wg))]
            }
            None => vec![levels[2]],
        };
        let d1 = self.decoder[0].forward(ctx, &first, None)?;
        let d2 = self.decoder[1].forward(ctx, &[levels[1]], Some(&d1))?;
        let d3 = self.decoder[2].forward(ctx, &[levels[0]], Some(&d2))?;
        let d4 = self.decoder[3].forward(ctx, &[*pair], Some(&d3))?;
        Ok(self.head.forward(ctx, &d4)?.sigmoid())
    }

    pub fn forward<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, inp: &GlInputs<'_, 'g, T>) -> Result<Var<'g, T>> {
        let levels = self.encode(ctx, inp)?;
        let diff = self.difference(ctx, inp)?;
        self.decode(ctx, &levels, diff.as_ref(), inp.pair)
    }
}

/// U-shaped network over the masked pair with its own S-Block encoder and
/// a mirrored three-block decoder.
pub struct MaskBranch {
    pub encoder: SpatialEncoder,
    pub decoder: Vec<DecoderBlock>,
    pub head: Conv,
}

impl MaskBranch {
    pub fn new<T: Float>(b: &mut Builder<'_, T>, enc: [usize; 3], dec: [usize; 3]) -> Self {
        let mut s = b.sub("mask_branch");
        let encoder = SpatialEncoder::new(&mut s, "encoder", 6, enc, None);
        let mut d = s.sub("decoder");
        let decoder = vec![
            DecoderBlock::new(&mut d, "block1", enc[1] + enc[2], dec[0]),
            DecoderBlock::new(&mut d, "block2", enc[0] + dec[0], dec[1]),
            DecoderBlock::new(&mut d, "block3", 6 + dec[1], dec[2]),
        ];
        let head = head(&mut s, dec[2]);
        Self { encoder, decoder, head }
    }

    /// `(I1 ⊙ M, I2 ⊙ M)` concatenated on channels.
    pub fn masked_input<'g, T: Float>(
        ctx: &Ctx<'g, '_, T>,
        i1: &Var<'g, T>,
        i2: &Var<'g, T>,
        mask: &Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let (s, ms) = (i1.shape(), mask.shape());
        if ms.len() != 4 || ms[1] != 1 || ms[0] != s[0] || ms[2..] != s[2..] {
            return Err(Error::ShapeMismatch(format!("mask {:?} does not match images {:?}", ms, s)));
        }
        let a = i1.mul_broadcast(mask)?;
        let b = i2.mul_broadcast(mask)?;
        Ok(ctx.graph.concat(&[a, b])?)
    }

    pub fn forward<'g, T: Float>(&self, ctx: &Ctx<'g, '_, T>, masked: &Var<'g, T>) -> Result<Var<'g, T>> {
        let l = self.encoder.forward(ctx, masked, None)?;
        let d1 = self.decoder[0].forward(ctx, &[l[1]], Some(&l[2]))?;
        let d2 = self.decoder[1].forward(ctx, &[l[0]], Some(&d1))?;
        let d3 = self.decoder[2].forward(ctx, &[*masked], Some(&d2))?;
        Ok(self.head.forward(ctx, &d3)?.sigmoid())
    }
}

/// `(1 - lambda) * p_gl + lambda * p_mask` on the tape.
pub fn fuse_vars<'g, T: Float>(p_gl: &Var<'g, T>, p_mask: &Var<'g, T>, lambda: f64) -> Result<Var<'g, T>> {
    Ok(p_gl.scale(T::from_f64(1.0 - lambda)).add(&p_mask.scale(T::from_f64(lambda)))?)
}

pub fn fuse_probability<T: Float>(p_gl: &Tensor<T>, p_mask: &Tensor<T>, cfg: &FusionConfig) -> Result<Tensor<T>> {
    let l = T::from_f64(cfg.lambda_mask);
    Ok(p_gl.zip_map(p_mask, |a, b| (T::one() - l) * a + l * b)?)
}

/// `p >= threshold` maps to 1.
pub fn binarize<T: Float>(p: &Tensor<T>, threshold: f64) -> Result<Tensor<T>> {
    check_threshold(threshold)?;
    let t = T::from_f64(threshold);
    Ok(p.map(|v| if v >= t { T::one() } else { T::zero() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_rng, Mode, ParamStore};
    use ctma_autograd::Graph;
    use proptest::prelude::*;

    fn build<M>(f: impl FnOnce(&mut Builder<'_, f64>) -> M) -> (ParamStore<f64>, M) {
        let mut store = ParamStore::new();
        let mut rng = init_rng(5);
        let m = f(&mut Builder::new(&mut store, &mut rng));
        (store, m)
    }

    fn noise(shape: &[usize], seed: usize) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| (((i + seed) * 2654435761usize) % 1000) as f64 / 1000.0)
    }

    #[test]
    fn encoder_pyramid_shapes() {
        let (store, enc) = build(|b| SpatialEncoder::new(b, "enc", 6, [4, 6, 8], None));
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Mode::Eval);
        let x = ctx.constant(noise(&[1, 6, 64, 64], 0));
        let l = enc.forward(&ctx, &x, None).unwrap();
        assert_eq!(l[0].shape(), vec![1, 4, 32, 32]);
        assert_eq!(l[1].shape(), vec![1, 6, 16, 16]);
        assert_eq!(l[2].shape(), vec![1, 8, 8, 8]);
        assert!(enc.blocks[2].extra.is_some() && enc.blocks[0].extra.is_none());
    }

    #[test]
    fn zero_motion_leaves_block_input_unchanged() {
        let (store, inj) = build(|b| MotionInject::new(b, "m", 3, 5));
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Mode::Eval);
        let x = noise(&[1, 3, 8, 8], 1);
        let y = inj.forward(&ctx, &ctx.constant(x.clone()), &ctx.constant(Tensor::zeros(&[1, 5, 4, 4]))).unwrap();
        assert_eq!(*y.value(), x);
    }

    #[test]
    fn motion_injection_shape_arithmetic() {
        let (store, inj) = build(|b| MotionInject::new(b, "m", 4, 6));
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Mode::Eval);
        let y = inj.forward(&ctx, &ctx.constant(noise(&[1, 4, 16, 16], 0)), &ctx.constant(noise(&[1, 6, 8, 8], 3))).unwrap();
        assert_eq!(y.shape(), vec![1, 4, 16, 16]);
        assert_eq!(store.get(inj.proj.weight).shape(), &[4, 10, 1, 1]);
    }

    #[test]
    fn backbone_difference_is_antisymmetric_and_strided() {
        let cfg = BackboneConfig { stem_channels: 4, stage_channels: [4, 6], blocks_per_stage: [1, 1] };
        let (store, bb) = build(|b| Backbone::new(b, "bb", &cfg));
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Mode::Eval);
        let a = ctx.constant(noise(&[1, 3, 64, 64], 0));
        let b = ctx.constant(noise(&[1, 3, 64, 64], 7));
        let f = bb.difference(&ctx, &a, &b).unwrap().value();
        let r = bb.difference(&ctx, &b, &a).unwrap().value();
        assert_eq!(f.shape(), &[1, 6, 8, 8]);
        assert!(f.data().iter().zip(r.data()).all(|(x, y)| *x == -*y));
        assert!(f.max_abs() > 0.0);
        let z = bb.difference(&ctx, &a, &a).unwrap().value();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decoder_rejects_mismatched_difference() {
        let fusion = FusionConfig::default();
        let bcfg = BackboneConfig { stem_channels: 2, stage_channels: [2, 3], blocks_per_stage: [1, 1] };
        let (store, gl) = build(|b| GlobalLocal::new(b, [2, 3, 4], [4, 3, 2, 2], Some(&bcfg), None, &fusion));
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Mode::Eval);
        let pair = ctx.constant(noise(&[1, 6, 32, 32], 0));
        let levels = gl.encoder.forward(&ctx, &pair, None).unwrap();
        let wrong = ctx.constant(Tensor::zeros(&[1, 3, 2, 2]));
        assert!(matches!(gl.decode(&ctx, &levels, Some(&wrong), &pair), Err(Error::ShapeMismatch(_))));
        let right = ctx.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let p = gl.decode(&ctx, &levels, Some(&right), &pair).unwrap().value();
        assert_eq!(p.shape(), &[1, 1, 32, 32]);
        assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn mask_branch_input_and_degenerate_output() {
        let (store, mb) = build(|b| MaskBranch::new(b, [2, 3, 4], [3, 2, 2]));
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Mode::Eval);
        let i1 = ctx.constant(noise(&[1, 3, 16, 16], 0));
        let i2 = ctx.constant(noise(&[1, 3, 16, 16], 9));
        let mask_t = Tensor::from_fn(&[1, 1, 16, 16], |i| ((i / 5) % 2) as f64);
        let masked = MaskBranch::masked_input(&ctx, &i1, &i2, &ctx.constant(mask_t.clone())).unwrap().value();
        for c in 0..6 {
            for i in 0..256 {
                if mask_t.data()[i] == 0.0 {
                    assert_eq!(masked.data()[c * 256 + i], 0.0);
                }
            }
        }
        let ones = MaskBranch::masked_input(&ctx, &i1, &i2, &ctx.constant(Tensor::ones(&[1, 1, 16, 16]))).unwrap();
        assert_eq!(&ones.value().data()[..768], i1.value().data());
        let zero_in = ctx.constant(Tensor::zeros(&[1, 6, 16, 16]));
        let p = mb.forward(&ctx, &zero_in).unwrap().value();
        assert!(p.data().iter().all(|&v| v == p.data()[0]));
        let bad = ctx.constant(Tensor::ones(&[1, 1, 8, 8]));
        assert!(matches!(MaskBranch::masked_input(&ctx, &i1, &i2, &bad), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn fusion_endpoints_and_binarize() {
        let a = noise(&[1, 1, 4, 4], 0);
        let b = noise(&[1, 1, 4, 4], 5);
        let at = |l| FusionConfig { lambda_mask: l, ..Default::default() };
        assert_eq!(fuse_probability(&a, &b, &at(0.0)).unwrap(), a);
        assert_eq!(fuse_probability(&a, &b, &at(1.0)).unwrap(), b);
        let p = Tensor::new(vec![3], vec![0.49, 0.5, 0.51]).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap().data(), &[0.0, 1.0, 1.0]);
        assert!(matches!(binarize(&p, 1.0), Err(Error::BadThreshold(_))));
        assert!(fuse_probability(&a, &Tensor::zeros(&[1, 1, 2, 2]), &at(0.3)).is_err());
    }

    proptest! {
        #[test]
        fn fusion_is_convex(
            a in proptest::collection::vec(0.0f64..=1.0, 9),
            b in proptest::collection::vec(0.0f64..=1.0, 9),
            l in 0.0f64..=1.0,
        ) {
            let ta = Tensor::new(vec![9], a).unwrap();
            let tb = Tensor::new(vec![9], b).unwrap();
            let f = fuse_probability(&ta, &tb, &FusionConfig { lambda_mask: l, ..Default::default() }).unwrap();
            for i in 0..9 {
                let (x, y) = (ta.data()[i], tb.data()[i]);
                prop_assert!(f.data()[i] >= x.min(y) - 1e-15 && f.data()[i] <= x.max(y) + 1e-15);
            }
            let once = binarize(&f, 0.5).unwrap();
            prop_assert_eq!(binarize(&once, 0.5).unwrap(), once);
        }
    }
}
