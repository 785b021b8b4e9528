//! Per-channel batch normalisation over every axis except axis 1.

use crate::float::Float;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ChannelLayout {
    pub batch: usize,
    pub channels: usize,
    pub inner: usize,
}

impl ChannelLayout {
    pub fn of(shape: &[usize]) -> Self {
        Self { batch: shape[0], channels: shape[1], inner: shape[2..].iter().product() }
    }

    pub fn count(&self) -> usize {
        self.batch * self.inner
    }

    #[inline]
    pub fn for_channel(&self, c: usize, mut f: impl FnMut(usize)) {
        for b in 0..self.batch {
            let start = (b * self.channels + c) * self.inner;
            for i in start..start + self.inner {
                f(i);
            }
        }
    }
}

/// Batch statistics: mean, biased variance and unbiased variance per channel.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub var_unbiased: Vec<T>,
}

pub(crate) fn batch_stats<T: Float>(x: &[T], l: ChannelLayout) -> BatchStats<T> {
    let n = l.count() as f64;
    let mut mean = Vec::with_capacity(l.channels);
    let mut var = Vec::with_capacity(l.channels);
    let mut var_unbiased = Vec::with_capacity(l.channels);
    for c in 0..l.channels {
        let mut s = 0.0f64;
        l.for_channel(c, |i| s += x[i].as_f64());
        let m = s / n;
        let mut ss = 0.0f64;
        l.for_channel(c, |i| {
            let d = x[i].as_f64() - m;
            ss += d * d;
        });
        mean.push(T::from_f64(m));
        var.push(T::from_f64(ss / n));
        var_unbiased.push(T::from_f64(if n > 1.0 { ss / (n - 1.0) } else { ss }));
    }
    BatchStats { mean, var, var_unbiased }
}

/// `y = gamma * (x - mean) * inv_std + beta`.
pub(crate) fn affine<T: Float>(x: &[T], l: ChannelLayout, mean: &[T], inv_std: &[T], gamma: &[T], beta: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for c in 0..l.channels {
        let (m, s, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
        l.for_channel(c, |i| y[i] = g * (x[i] - m) * s + b);
    }
    y
}

pub(crate) struct NormGrads<T> {
    pub dx: Vec<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

/// Backward of the training-mode transform, where mean and variance are
/// functions of `x`.
pub(crate) fn backward_train<T: Float>(
    x: &[T],
    g: &[T],
    l: ChannelLayout,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
) -> NormGrads<T> {
    let n = l.count() as f64;
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); l.channels];
    let mut dbeta = vec![T::zero(); l.channels];
    for c in 0..l.channels {
        let (m, s) = (mean[c].as_f64(), inv_std[c].as_f64());
        let mut sum_g = 0.0f64;
        let mut sum_gx = 0.0f64;
        l.for_channel(c, |i| {
            let gi = g[i].as_f64();
            sum_g += gi;
            sum_gx += gi * (x[i].as_f64() - m) * s;
        });
        dbeta[c] = T::from_f64(sum_g);
        dgamma[c] = T::from_f64(sum_gx);
        let k = gamma[c].as_f64() * s / n;
        l.for_channel(c, |i| {
            let xhat = (x[i].as_f64() - m) * s;
            dx[i] = T::from_f64(k * (n * g[i].as_f64() - sum_g - xhat * sum_gx));
        });
    }
    NormGrads { dx, dgamma, dbeta }
}

/// Backward of the inference-mode transform (fixed statistics).
pub(crate) fn backward_fixed<T: Float>(
    x: &[T],
    g: &[T],
    l: ChannelLayout,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
) -> NormGrads<T> {
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); l.channels];
    let mut dbeta = vec![T::zero(); l.channels];
    for c in 0..l.channels {
        let (m, s, gm) = (mean[c], inv_std[c], gamma[c]);
        let mut sg = T::zero();
        let mut sgx = T::zero();
        l.for_channel(c, |i| {
            sg += g[i];
            sgx += g[i] * (x[i] - m) * s;
            dx[i] = g[i] * gm * s;
        });
        dgamma[c] = sgx;
        dbeta[c] = sg;
    }
    NormGrads { dx, dgamma, dbeta }
}
