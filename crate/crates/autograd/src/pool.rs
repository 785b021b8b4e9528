//! Spatial max pooling and reductions over the time axis.

use crate::float::Float;
use std::cmp::Ordering;

/// 2x2 / stride-2 max pooling on (B, C, H, W) with even H and W.
/// Returns the pooled values and the flat input index of each maximum
/// (first maximum in scan order wins ties).
pub(crate) fn max_pool2<T: Float>(x: &[T], shape: &[usize]) -> (Vec<T>, Vec<usize>) {
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + (2 * y) * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * xx + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

fn time_layout(shape: &[usize]) -> (usize, usize, usize) {
    // (leading planes B*C, time T, inner H*W)
    (shape[0] * shape[1], shape[2], shape[3] * shape[4])
}

/// Mean over axis 2 of (B, C, T, H, W). Each mean sums the time series in
/// sorted order, so any permutation of the time axis yields identical bits.
pub(crate) fn time_mean<T: Float>(x: &[T], shape: &[usize]) -> Vec<T> {
    let (planes, t, inner) = time_layout(shape);
    let mut out = vec![T::zero(); planes * inner];
    let mut buf = vec![T::zero(); t];
    let scale = T::one() / T::from_f64(t as f64);
    for p in 0..planes {
        for i in 0..inner {
            for (k, slot) in buf.iter_mut().enumerate() {
                *slot = x[(p * t + k) * inner + i];
            }
            buf.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
            let s: T = buf.iter().copied().sum();
            out[p * inner + i] = s * scale;
        }
    }
    out
}

pub(crate) fn time_mean_backward<T: Float>(g: &[T], shape: &[usize]) -> Vec<T> {
    let (planes, t, inner) = time_layout(shape);
    let scale = T::one() / T::from_f64(t as f64);
    let mut dx = vec![T::zero(); planes * t * inner];
    for p in 0..planes {
        for k in 0..t {
            for i in 0..inner {
                dx[(p * t + k) * inner + i] = g[p * inner + i] * scale;
            }
        }
    }
    dx
}

/// Max over axis 2 of (B, C, T, H, W) with the flat index of each maximum.
pub(crate) fn time_max<T: Float>(x: &[T], shape: &[usize]) -> (Vec<T>, Vec<usize>) {
    let (planes, t, inner) = time_layout(shape);
    let mut out = vec![T::zero(); planes * inner];
    let mut arg = vec![0usize; planes * inner];
    for p in 0..planes {
        for i in 0..inner {
            let mut best = p * t * inner + i;
            for k in 1..t {
                let j = (p * t + k) * inner + i;
                if x[j] > x[best] {
                    best = j;
                }
            }
            out[p * inner + i] = x[best];
            arg[p * inner + i] = best;
        }
    }
    (out, arg)
}

/// Routes each output gradient back to the recorded argmax position.
pub(crate) fn scatter_argmax<T: Float>(g: &[T], arg: &[usize], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&gi, &a) in g.iter().zip(arg) {
        dx[a] += gi;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_pool_picks_block_maximum() {
        let x = [1.0f32, 5.0, 2.0, 0.0, 3.0, 4.0, 7.0, 1.0];
        let (y, arg) = max_pool2(&x, &[1, 1, 2, 4]);
        assert_eq!(y, vec![5.0, 7.0]);
        assert_eq!(arg, vec![1, 6]);
    }

    #[test]
    fn time_reductions_on_ramp() {
        // (1, 1, 3, 1, 2): frames 0, 1, 2
        let x = [0.0f64, 0.0, 1.0, 1.0, 2.0, 2.0];
        let shape = [1, 1, 3, 1, 2];
        assert_eq!(time_mean(&x, &shape), vec![1.0, 1.0]);
        assert_eq!(time_max(&x, &shape).0, vec![2.0, 2.0]);
    }
}
