//! Image exports: side-by-side panels, probability heatmaps and metric
//! curves. Drawing is plain raster work on `RgbImage`; no fonts.

use std::path::{Path, PathBuf};

use ctma_autograd::Tensor;
use ctma_core::data::image_io::{rgb_image, save_rgb_image};
use ctma_core::pseudo_video::BiTemporalPair;
use ctma_core::train::{EpochRecord, RunHistory};
use ctma_core::{Error, Result};
use image::{Rgb, RgbImage};

const GAP: u32 = 4;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);

fn plane_to_rgb(t: &Tensor<f32>) -> Result<RgbImage> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::ShapeMismatch(format!("expected a (1, H, W) map, got {:?}", s)));
    }
    let (h, w) = (s[1], s[2]);
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = (t.data()[y as usize * w + x as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v, v, v])
    }))
}

/// Concatenate equally tall images left to right with white gutters.
pub fn hstack(panels: &[RgbImage]) -> RgbImage {
    let h = panels.iter().map(|p| p.height()).max().unwrap_or(0);
    let w = panels.iter().map(|p| p.width()).sum::<u32>() + GAP * panels.len().saturating_sub(1) as u32;
    let mut out = RgbImage::from_pixel(w, h, BACKGROUND);
    let mut x0 = 0;
    for p in panels {
        for (x, y, px) in p.enumerate_pixels() {
            out.put_pixel(x0 + x, y, *px);
        }
        x0 += p.width() + GAP;
    }
    out
}

/// Five stops of a dark-to-bright ramp, interpolated linearly.
pub fn colormap(v: f32) -> Rgb<u8> {
    const STOPS: [[f32; 3]; 5] =
        [[0.0, 0.0, 0.02], [0.34, 0.06, 0.43], [0.73, 0.21, 0.33], [0.98, 0.55, 0.04], [0.99, 1.0, 0.64]];
    let t = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f32;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f32;
    let c = |k: usize| ((STOPS[i][k] * (1.0 - f) + STOPS[i + 1][k] * f) * 255.0).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Heatmap of a `(1, H, W)` probability map together with its range.
pub fn heatmap(p: &Tensor<f32>) -> Result<(RgbImage, f32, f32)> {
    let gray = plane_to_rgb(p)?;
    let w = gray.width() as usize;
    let img = RgbImage::from_fn(gray.width(), gray.height(), |x, y| colormap(p.data()[y as usize * w + x as usize]));
    Ok((img, p.min_value(), p.max_value()))
}

/// Write `<id>_panels.png` (A, B, coarse mask, prediction and, if present,
/// ground truth) and `<id>_heatmap_min<lo>_max<hi>.png`.
pub fn render_overlays(
    pair: &BiTemporalPair,
    p2: &Tensor<f32>,
    mask: &Tensor<f32>,
    threshold: f64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let (h, w) = (pair.height(), pair.width());
    for (what, t) in [("probability map", p2), ("mask", mask)] {
        if t.shape() != [1, h, w] {
            return Err(Error::ShapeMismatch(format!("{} {:?} does not match pair {}x{}", what, t.shape(), h, w)));
        }
    }
    let pred = p2.map(|v| if v as f64 >= threshold { 1.0 } else { 0.0 });
    let mut panels = vec![rgb_image(&pair.i1)?, rgb_image(&pair.i2)?, plane_to_rgb(mask)?, plane_to_rgb(&pred)?];
    if let Some(y) = &pair.label {
        panels.push(plane_to_rgb(y)?);
    }
    let panel_path = out_dir.join(format!("{}_panels.png", pair.id));
    save_rgb_image(&panel_path, &hstack(&panels))?;
    let (hm, lo, hi) = heatmap(p2)?;
    let hm_path = out_dir.join(format!("{}_heatmap_min{:.3}_max{:.3}.png", pair.id, lo, hi));
    save_rgb_image(&hm_path, &hm)?;
    Ok(vec![panel_path, hm_path])
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

pub const SPLIT_COLOURS: [(&str, Rgb<u8>); 3] =
    [("train", Rgb([31, 119, 180])), ("val", Rgb([214, 39, 40])), ("test", Rgb([44, 160, 44]))];

/// Two stacked panels, loss (scaled to its maximum) over F1 (on [0, 1]),
/// with one polyline per split against epoch.
pub fn render_curves(history: &RunHistory, path: &Path) -> Result<()> {
    if history.records.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let (pw, ph, margin) = (480i64, 200i64, 24i64);
    let mut img = RgbImage::from_pixel((pw + 2 * margin) as u32, (2 * ph + 3 * margin) as u32, BACKGROUND);
    let max_epoch = history.records.iter().map(|r| r.epoch).max().unwrap_or(0).max(1) as f64;
    let max_loss = history.records.iter().map(|r| r.loss).filter(|l| l.is_finite()).fold(0.0, f64::max).max(1e-12);
    let axis = Rgb([0, 0, 0]);
    let panels: [fn(&EpochRecord, f64) -> f64; 2] = [|r, m| r.loss / m, |r, _| r.f1];
    for (panel, f) in panels.iter().enumerate() {
        let value = |r: &EpochRecord| f(r, max_loss);
        let top = margin + panel as i64 * (ph + margin);
        let origin = (margin, top + ph);
        line(&mut img, origin, (margin + pw, top + ph), axis);
        line(&mut img, origin, (margin, top), axis);
        for (split, colour) in SPLIT_COLOURS {
            let pts: Vec<(i64, i64)> = history
                .split(split)
                .filter(|r| value(r).is_finite())
                .map(|r| {
                    let x = margin + (r.epoch as f64 / max_epoch * pw as f64).round() as i64;
                    let y = top + ph - (value(r).clamp(0.0, 1.0) * ph as f64).round() as i64;
                    (x, y)
                })
                .collect();
            for w in pts.windows(2) {
                line(&mut img, w[0], w[1], colour);
            }
            for &(x, y) in &pts {
                line(&mut img, (x - 1, y), (x + 1, y), colour);
                line(&mut img, (x, y - 1), (x, y + 1), colour);
            }
        }
    }
    save_rgb_image(path, &img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(label: bool) -> BiTemporalPair {
        let y = label.then(|| Tensor::from_fn(&[1, 8, 8], |i| (i % 5 == 0) as u8 as f32));
        BiTemporalPair::new("q", Tensor::full(&[3, 8, 8], 0.2), Tensor::full(&[3, 8, 8], 0.8), y).unwrap()
    }

    #[test]
    fn panel_counts_follow_label_presence() {
        let tmp = tempfile::tempdir().unwrap();
        let p2 = Tensor::from_fn(&[1, 8, 8], |i| i as f32 / 63.0);
        let m = Tensor::zeros(&[1, 8, 8]);
        for (label, n) in [(true, 5u32), (false, 4)] {
            let files = render_overlays(&pair(label), &p2, &m, 0.5, tmp.path()).unwrap();
            let img = image::open(&files[0]).unwrap();
            assert_eq!(img.width(), n * 8 + (n - 1) * GAP);
            let name = files[1].file_name().unwrap().to_str().unwrap().to_string();
            assert_eq!(name, "q_heatmap_min0.000_max1.000.png");
        }
        assert!(render_overlays(&pair(true), &Tensor::zeros(&[1, 4, 4]), &m, 0.5, tmp.path()).is_err());
    }

    #[test]
    fn colormap_ends() {
        assert_eq!(colormap(0.0), Rgb([0, 0, 5]));
        assert_eq!(colormap(1.0), Rgb([252, 255, 163]));
        assert_eq!(colormap(2.0), colormap(1.0));
    }

    #[test]
    fn curves_render_to_png() {
        let tmp = tempfile::tempdir().unwrap();
        let mut h = RunHistory::default();
        for e in 0..4 {
            for split in ["train", "val"] {
                let r = EpochRecord { epoch: e, split: split.into(), loss: 1.0 / (e + 1) as f64, precision: 0.0, recall: 0.0, f1: e as f64 / 4.0, oa: 0.0, lr: 1e-3 };
                h.push(r).unwrap();
            }
        }
        let p = tmp.path().join("c.png");
        render_curves(&h, &p).unwrap();
        assert!(image::open(&p).unwrap().width() > 400);
        assert!(matches!(render_curves(&RunHistory::default(), &p), Err(Error::EmptyHistory)));
    }
}
