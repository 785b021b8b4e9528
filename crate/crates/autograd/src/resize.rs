//! Spatial resampling of (B, C, H, W) tensors.

use crate::float::Float;

/// Two-tap linear interpolation weights along one axis, half-pixel centres.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap { lo, hi, frac: src - lo as f64 }
        })
        .collect()
}

pub(crate) fn bilinear<T: Float>(x: &[T], shape: &[usize], oh: usize, ow: usize) -> Vec<T> {
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    if (h, w) == (oh, ow) {
        return x.to_vec();
    }
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for a in &ty {
            let fy = T::from_f64(a.frac);
            for b in &tx {
                let fx = T::from_f64(b.frac);
                let top = src[a.lo * w + b.lo] * (T::one() - fx) + src[a.lo * w + b.hi] * fx;
                let bot = src[a.hi * w + b.lo] * (T::one() - fx) + src[a.hi * w + b.hi] * fx;
                out.push(top * (T::one() - fy) + bot * fy);
            }
        }
    }
    out
}

pub(crate) fn bilinear_backward<T: Float>(g: &[T], shape: &[usize], oh: usize, ow: usize) -> Vec<T> {
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    if (h, w) == (oh, ow) {
        return g.to_vec();
    }
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        let gp = &g[p * oh * ow..(p + 1) * oh * ow];
        for (i, a) in ty.iter().enumerate() {
            let fy = T::from_f64(a.frac);
            for (j, b) in tx.iter().enumerate() {
                let fx = T::from_f64(b.frac);
                let gv = gp[i * ow + j];
                dst[a.lo * w + b.lo] += gv * (T::one() - fy) * (T::one() - fx);
                dst[a.lo * w + b.hi] += gv * (T::one() - fy) * fx;
                dst[a.hi * w + b.lo] += gv * fy * (T::one() - fx);
                dst[a.hi * w + b.hi] += gv * fy * fx;
            }
        }
    }
    dx
}

/// Nearest-neighbour resampling: output pixel (y, x) reads input
/// (floor(y * h / oh), floor(x * w / ow)).
pub fn nearest<T: Float>(x: &[T], shape: &[usize], oh: usize, ow: usize) -> Vec<T> {
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            let sy = y * h / oh;
            for xx in 0..ow {
                out.push(src[sy * w + xx * w / ow]);
            }
        }
    }
    out
}
