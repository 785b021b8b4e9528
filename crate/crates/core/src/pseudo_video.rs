//! Bi-temporal pairs and the linearly interpolated frame sequence built
//! between them.

use ctma_autograd::{Float, Tensor};

use crate::error::{Error, Result};

/// Registered image pair, `(3, H, W)` each with values in `[0, 1]`, and an
/// optional `(1, H, W)` change map with values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiTemporalPair {
    pub id: String,
    pub i1: Tensor<f32>,
    pub i2: Tensor<f32>,
    pub label: Option<Tensor<f32>>,
}

impl BiTemporalPair {
    pub fn new(id: impl Into<String>, i1: Tensor<f32>, i2: Tensor<f32>, label: Option<Tensor<f32>>) -> Result<Self> {
        let s = i1.shape().to_vec();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::ShapeMismatch(format!("images must be (3, H, W), got {:?}", s)));
        }
        if i2.shape() != s.as_slice() {
            return Err(Error::ShapeMismatch(format!("i1 is {:?} but i2 is {:?}", s, i2.shape())));
        }
        if let Some(y) = &label {
            if y.shape() != [1, s[1], s[2]] {
                return Err(Error::ShapeMismatch(format!("label is {:?}, images are {:?}", y.shape(), s)));
            }
            if let Some(v) = y.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::ValueRange(format!("label value {} is not in {{0, 1}}", v)));
            }
        }
        for (name, img) in [("i1", &i1), ("i2", &i2)] {
            if let Some(v) = img.data().iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::ValueRange(format!("{} pixel {} is outside [0, 1]", name, v)));
            }
        }
        Ok(Self { id: id.into(), i1, i2, label })
    }

    pub fn height(&self) -> usize {
        self.i1.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.i1.shape()[2]
    }
}

/// Validate a pair without an identifier.
pub fn validate_pair(i1: Tensor<f32>, i2: Tensor<f32>, label: Option<Tensor<f32>>) -> Result<BiTemporalPair> {
    BiTemporalPair::new("", i1, i2, label)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoVideo {
    pub frames: Vec<Tensor<f32>>,
}

impl PseudoVideo {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// Position `n` of `count` frames on the segment from `a` to `b`. The
/// endpoints are returned unchanged.
fn lerp<T: Float>(a: T, b: T, n: usize, count: usize) -> T {
    if n == 0 {
        a
    } else if n + 1 == count {
        b
    } else {
        // Clamp so rounding can never leave the segment.
        (a + T::from_f64(n as f64 / (count - 1) as f64) * (b - a)).max(a.min(b)).min(a.max(b))
    }
}

pub fn interpolate_pair(pair: &BiTemporalPair, n_frames: usize) -> Result<PseudoVideo> {
    if n_frames < 2 {
        return Err(Error::BadFrameCount(n_frames));
    }
    let frames = (0..n_frames)
        .map(|n| pair.i1.zip_map(&pair.i2, |a, b| lerp(a, b, n, n_frames)).expect("validated shapes"))
        .collect();
    Ok(PseudoVideo { frames })
}

/// Batched video tensor `(B, 3, N, H, W)` from `(B, 3, H, W)` image batches.
pub fn video_tensor<T: Float>(i1: &Tensor<T>, i2: &Tensor<T>, n_frames: usize) -> Result<Tensor<T>> {
    if n_frames < 2 {
        return Err(Error::BadFrameCount(n_frames));
    }
    i1.expect_shape(i2.shape())?;
    let s = i1.shape();
    if s.len() != 4 {
        return Err(Error::BadShape(format!("image batch must be (B, C, H, W), got {:?}", s)));
    }
    let (planes, hw) = (s[0] * s[1], s[2] * s[3]);
    let mut data = Vec::with_capacity(i1.numel() * n_frames);
    for p in 0..planes {
        let a = &i1.data()[p * hw..(p + 1) * hw];
        let b = &i2.data()[p * hw..(p + 1) * hw];
        for n in 0..n_frames {
            data.extend(a.iter().zip(b).map(|(&x, &y)| lerp(x, y, n, n_frames)));
        }
    }
    Ok(Tensor::new(vec![s[0], s[1], n_frames, s[2], s[3]], data)?)
}
