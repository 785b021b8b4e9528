//! Seeded geometric augmentation applied identically to both images and the
//! change map: flips, quarter turns and reflect-padded translation.

use ctma_autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pseudo_video::BiTemporalPair;

pub const DEFAULT_MAX_SHIFT_FRAC: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentPlan {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns, 0..4.
    pub rot90: u8,
    /// (rows, cols) translation; positive moves content down/right.
    pub shift: (isize, isize),
}

impl AugmentPlan {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    /// Draw a plan for an `h` x `w` raster. Odd quarter turns are only drawn
    /// for square rasters.
    pub fn draw(seed: u64, h: usize, w: usize, max_shift_frac: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hflip = rng.random_bool(0.5);
        let vflip = rng.random_bool(0.5);
        let rot90 = if h == w { rng.random_range(0..4u8) } else { 2 * rng.random_range(0..2u8) };
        let mut shift_along = |n: usize| {
            let m = ((n as f64 * max_shift_frac).floor() as isize).min(n as isize - 1).max(0);
            if m == 0 {
                0
            } else {
                rng.random_range(-(m as i64)..=m as i64) as isize
            }
        };
        let shift = (shift_along(h), shift_along(w));
        Self { hflip, vflip, rot90, shift }
    }

    /// Source pixel that lands on `(r, c)` of an `h` x `w` output.
    fn source(&self, r: usize, c: usize, h: usize, w: usize) -> (usize, usize) {
        // Undo translation first (it is applied last), then rotation, then flips.
        let (mut r, mut c) = (reflect(r as isize - self.shift.0, h), reflect(c as isize - self.shift.1, w));
        match self.rot90 % 4 {
            0 => {}
            1 => (r, c) = (c, w - 1 - r),
            2 => (r, c) = (h - 1 - r, w - 1 - c),
            _ => (r, c) = (h - 1 - c, r),
        }
        if self.vflip {
            r = h - 1 - r;
        }
        if self.hflip {
            c = w - 1 - c;
        }
        (r, c)
    }

    /// Apply to a `(C, H, W)` tensor.
    pub fn apply(&self, t: &Tensor<f32>) -> Tensor<f32> {
        if self.is_identity() {
            return t.clone();
        }
        let s = t.shape();
        let (ch, h, w) = (s[0], s[1], s[2]);
        assert!(self.rot90 % 2 == 0 || h == w, "odd quarter turn of a non-square raster");
        let mut out = vec![0.0f32; t.numel()];
        for r in 0..h {
            for c in 0..w {
                let (sr, sc) = self.source(r, c, h, w);
                for k in 0..ch {
                    out[(k * h + r) * w + c] = t.data()[(k * h + sr) * w + sc];
                }
            }
        }
        Tensor::new(s.to_vec(), out).expect("same shape")
    }

    pub fn apply_pair(&self, pair: &BiTemporalPair) -> BiTemporalPair {
        BiTemporalPair {
            id: pair.id.clone(),
            i1: self.apply(&pair.i1),
            i2: self.apply(&pair.i2),
            label: pair.label.as_ref().map(|y| self.apply(y)),
        }
    }
}

/// Mirror an index into `[0, n)` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

pub fn augment_sample(pair: &BiTemporalPair, seed: u64) -> BiTemporalPair {
    augment_with_shift(pair, seed, DEFAULT_MAX_SHIFT_FRAC)
}

pub fn augment_with_shift(pair: &BiTemporalPair, seed: u64, max_shift_frac: f64) -> BiTemporalPair {
    AugmentPlan::draw(seed, pair.height(), pair.width(), max_shift_frac).apply_pair(pair)
}
