//! Synthetic pairs with exact ground truth: a shared sinusoidal texture,
//! with rectangles and ellipses that exist in only one of the two images.

use std::path::Path;

use ctma_autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::dataset::Split;
use crate::data::image_io::{write_gray, write_rgb};
use crate::error::{Error, Result};
use crate::pseudo_video::BiTemporalPair;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    pub n_shapes: usize,
    /// Inclusive side-length range of each shape's bounding box.
    pub min_size: usize,
    pub max_size: usize,
    /// Half-width of the uniform per-pixel noise added to each image.
    pub noise: f32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { height: 64, width: 64, n_shapes: 3, min_size: 8, max_size: 20, noise: 0.02 }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("synthetic canvas must be nonempty".into()));
        }
        if self.min_size == 0 || self.min_size > self.max_size || self.max_size > self.height.min(self.width) {
            return Err(Error::Config(format!(
                "shape sizes {}..={} must be positive and fit a {}x{} canvas",
                self.min_size, self.max_size, self.height, self.width
            )));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::Config(format!("noise amplitude {} must lie in [0, 0.5)", self.noise)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rect,
    Ellipse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Presence {
    /// Present in the first image only (removed).
    Before,
    /// Present in the second image only (added).
    After,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
    pub presence: Presence,
    pub color: [f32; 3],
}

impl Shape {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        if r < self.top || c < self.left || r >= self.top + self.height || c >= self.left + self.width {
            return false;
        }
        match self.kind {
            ShapeKind::Rect => true,
            ShapeKind::Ellipse => {
                let dy = (r - self.top) as f64 + 0.5 - self.height as f64 / 2.0;
                let dx = (c - self.left) as f64 + 0.5 - self.width as f64 / 2.0;
                let (ry, rx) = (self.height as f64 / 2.0, self.width as f64 / 2.0);
                (dy / ry).powi(2) + (dx / rx).powi(2) <= 1.0
            }
        }
    }

    fn overlaps(&self, o: &Shape, margin: usize) -> bool {
        let (a0, a1) = (self.top, self.top + self.height + margin);
        let (b0, b1) = (o.top, o.top + o.height + margin);
        let (c0, c1) = (self.left, self.left + self.width + margin);
        let (d0, d1) = (o.left, o.left + o.width + margin);
        a0 < b1 && b0 < a1 && c0 < d1 && d0 < c1
    }
}

fn texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f32> {
    let waves: Vec<[f32; 4]> = (0..3 * 3)
        .map(|_| {
            [
                rng.random_range(0.05..0.4),
                rng.random_range(0.05..0.4),
                rng.random_range(0.0..std::f32::consts::TAU),
                rng.random_range(0.03..0.08),
            ]
        })
        .collect();
    let base: [f32; 3] = [rng.random_range(0.4..0.6), rng.random_range(0.4..0.6), rng.random_range(0.4..0.6)];
    Tensor::from_fn(&[3, h, w], |i| {
        let ch = i / (h * w);
        let (r, c) = ((i / w) % h, i % w);
        let mut v = base[ch];
        for k in &waves[ch * 3..ch * 3 + 3] {
            v += k[3] * (k[0] * r as f32 + k[1] * c as f32 + k[2]).sin();
        }
        v
    })
}

/// Pair plus the shapes that produced its change map.
pub fn generate_with_shapes(params: &SynthParams, seed: u64) -> Result<(BiTemporalPair, Vec<Shape>)> {
    params.validate()?;
    let (h, w) = (params.height, params.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = texture(&mut rng, h, w);
    let mut shapes: Vec<Shape> = Vec::new();
    for _ in 0..params.n_shapes {
        for _attempt in 0..50 {
            let sh = rng.random_range(params.min_size..=params.max_size);
            let sw = rng.random_range(params.min_size..=params.max_size);
            let cand = Shape {
                kind: if rng.random_bool(0.5) { ShapeKind::Rect } else { ShapeKind::Ellipse },
                top: rng.random_range(0..=h - sh),
                left: rng.random_range(0..=w - sw),
                height: sh,
                width: sw,
                presence: if rng.random_bool(0.5) { Presence::Before } else { Presence::After },
                color: if rng.random_bool(0.5) {
                    [rng.random_range(0.85..1.0), rng.random_range(0.85..1.0), rng.random_range(0.85..1.0)]
                } else {
                    [rng.random_range(0.0..0.15), rng.random_range(0.0..0.15), rng.random_range(0.0..0.15)]
                },
            };
            if shapes.iter().all(|s| !s.overlaps(&cand, 1)) {
                shapes.push(cand);
                break;
            }
        }
    }
    let mut i1 = bg.clone();
    let mut i2 = bg;
    let mut label = Tensor::zeros(&[1, h, w]);
    for s in &shapes {
        let target = match s.presence {
            Presence::Before => &mut i1,
            Presence::After => &mut i2,
        };
        for r in s.top..s.top + s.height {
            for c in s.left..s.left + s.width {
                if s.contains(r, c) {
                    for (k, &v) in s.color.iter().enumerate() {
                        target.data_mut()[(k * h + r) * w + c] = v;
                    }
                    label.data_mut()[r * w + c] = 1.0;
                }
            }
        }
    }
    for img in [&mut i1, &mut i2] {
        for v in img.data_mut() {
            if params.noise > 0.0 {
                *v += rng.random_range(-params.noise..=params.noise);
            }
            *v = v.clamp(0.0, 1.0);
        }
    }
    let pair = BiTemporalPair::new(format!("synth_{seed:06}"), i1, i2, Some(label))?;
    Ok((pair, shapes))
}

pub fn generate_synthetic(params: &SynthParams, seed: u64) -> Result<BiTemporalPair> {
    Ok(generate_with_shapes(params, seed)?.0)
}

/// `count` pairs from consecutive seeds starting at `seed`.
pub fn synthetic_set(params: &SynthParams, count: usize, seed: u64) -> Result<Vec<BiTemporalPair>> {
    (0..count as u64).map(|i| generate_synthetic(params, seed.wrapping_add(i))).collect()
}

/// Write `<root>/<split>/{A,B,label}/<id>.png` for each requested split.
pub fn write_synthetic_dataset(root: &Path, params: &SynthParams, splits: &[(Split, usize)], seed: u64) -> Result<()> {
    let mut next = seed;
    for &(split, count) in splits {
        let dir = root.join(split.as_str());
        for pair in synthetic_set(params, count, next)? {
            write_rgb(&dir.join("A").join(format!("{}.png", pair.id)), &pair.i1)?;
            write_rgb(&dir.join("B").join(format!("{}.png", pair.id)), &pair.i2)?;
            write_gray(&dir.join("label").join(format!("{}.png", pair.id)), pair.label.as_ref().expect("labelled"))?;
        }
        next = next.wrapping_add(count as u64);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::{Dataset, Samples};

    #[test]
    fn no_shapes_no_noise_gives_identical_images() {
        let p = SynthParams { n_shapes: 0, noise: 0.0, ..Default::default() };
        let pair = generate_synthetic(&p, 3).unwrap();
        assert_eq!(pair.i1, pair.i2);
        assert_eq!(pair.label.unwrap().sum(), 0.0);
    }

    #[test]
    fn single_rectangle_label_is_its_pixel_set() {
        let p = SynthParams { n_shapes: 1, noise: 0.0, ..Default::default() };
        let seed = (0..200).find(|&s| generate_with_shapes(&p, s).unwrap().1[0].kind == ShapeKind::Rect).unwrap();
        let (pair, shapes) = generate_with_shapes(&p, seed).unwrap();
        let s = shapes[0];
        let y = pair.label.unwrap();
        for r in 0..p.height {
            for c in 0..p.width {
                let inside = r >= s.top && r < s.top + s.height && c >= s.left && c < s.left + s.width;
                assert_eq!(y.data()[r * p.width + c] == 1.0, inside);
            }
        }
    }

    #[test]
    fn label_is_symmetric_difference_of_shape_sets() {
        let p = SynthParams { n_shapes: 5, ..Default::default() };
        for seed in 0..10 {
            let (pair, shapes) = generate_with_shapes(&p, seed).unwrap();
            let y = pair.label.unwrap();
            for r in 0..p.height {
                for c in 0..p.width {
                    let before = shapes.iter().any(|s| s.presence == Presence::Before && s.contains(r, c));
                    let after = shapes.iter().any(|s| s.presence == Presence::After && s.contains(r, c));
                    assert_eq!(y.data()[r * p.width + c] == 1.0, before ^ after);
                }
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let p = SynthParams::default();
        assert_eq!(generate_synthetic(&p, 9).unwrap(), generate_synthetic(&p, 9).unwrap());
        assert_ne!(generate_synthetic(&p, 9).unwrap(), generate_synthetic(&p, 10).unwrap());
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = SynthParams { max_size: 100, ..Default::default() };
        assert!(matches!(generate_synthetic(&p, 0), Err(Error::Config(_))));
    }

    #[test]
    fn written_tree_loads_back() {
        let tmp = tempfile::tempdir().unwrap();
        let p = SynthParams { height: 16, width: 16, min_size: 4, max_size: 6, ..Default::default() };
        write_synthetic_dataset(tmp.path(), &p, &[(Split::Train, 3), (Split::Val, 2)], 5).unwrap();
        let train = Dataset::open(tmp.path(), Split::Train).unwrap();
        let val = Dataset::open(tmp.path(), Split::Val).unwrap();
        assert_eq!((train.len(), val.len()), (3, 2));
        let mem = generate_synthetic(&p, 5).unwrap();
        let disk = train.get(0).unwrap();
        assert_eq!(disk.label, mem.label);
        assert!(disk.i1.data().iter().zip(mem.i1.data()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));
    }
}
