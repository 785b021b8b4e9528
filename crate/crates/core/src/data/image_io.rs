//! PNG/8-bit image decoding into `[0, 1]` tensors and encoding back.

use std::path::Path;

use ctma_autograd::Tensor;
use image::{GrayImage, ImageReader, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

fn open(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let corrupt = |reason: String| Error::CorruptImage { path: path.to_path_buf(), reason };
    ImageReader::open(path)?
        .with_guessed_format()
        .map_err(|e| corrupt(e.to_string()))?
        .decode()
        .map_err(|e| corrupt(e.to_string()))
}

/// 8-bit RGB scaled by 1/255 into a `(3, H, W)` tensor.
pub fn read_rgb(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::new(vec![3, h, w], data)?)
}

/// Single-channel change map with values in {0, 255}, as a `(1, H, W)`
/// tensor of {0, 1}.
pub fn read_label(path: &Path) -> Result<Tensor<f32>> {
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Vec::with_capacity(h * w);
    for px in img.pixels() {
        data.push(match px[0] {
            0 => 0.0,
            255 => 1.0,
            v => return Err(Error::ValueRange(format!("{}: label value {} is neither 0 nor 255", path.display(), v))),
        });
    }
    Ok(Tensor::new(vec![1, h, w], data)?)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn hw(t: &Tensor<f32>) -> Result<(usize, usize)> {
    match *t.shape() {
        [_, h, w] => Ok((h, w)),
        [h, w] => Ok((h, w)),
        ref s => Err(Error::ShapeMismatch(format!("cannot write tensor of shape {:?} as an image", s))),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    Ok(())
}

fn save_err(path: &Path, e: image::ImageError) -> Error {
    Error::Io(std::io::Error::other(format!("{}: {}", path.display(), e)))
}

pub fn rgb_image(t: &Tensor<f32>) -> Result<RgbImage> {
    if t.ndim() != 3 || t.shape()[0] != 3 {
        return Err(Error::ShapeMismatch(format!("RGB image must be (3, H, W), got {:?}", t.shape())));
    }
    let (h, w) = hw(t)?;
    let d = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to_u8(d[i]), to_u8(d[h * w + i]), to_u8(d[2 * h * w + i])])
    }))
}

/// First plane of a `(C, H, W)` or `(H, W)` tensor, `round(255 * v)`.
pub fn gray_image(t: &Tensor<f32>) -> Result<GrayImage> {
    let (h, w) = hw(t)?;
    let d = t.data();
    Ok(GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(d[y as usize * w + x as usize])])))
}

pub fn write_rgb(path: &Path, t: &Tensor<f32>) -> Result<()> {
    ensure_parent(path)?;
    rgb_image(t)?.save(path).map_err(|e| save_err(path, e))
}

/// Probabilities or binary maps as 8-bit grey; a {0, 1} map becomes {0, 255}.
pub fn write_gray(path: &Path, t: &Tensor<f32>) -> Result<()> {
    ensure_parent(path)?;
    gray_image(t)?.save(path).map_err(|e| save_err(path, e))
}

pub fn save_rgb_image(path: &Path, img: &RgbImage) -> Result<()> {
    ensure_parent(path)?;
    img.save(path).map_err(|e| save_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let t = Tensor::from_fn(&[3, 4, 5], |i| ((i * 37) % 256) as f32 / 255.0);
        write_rgb(&p, &t).unwrap();
        assert_eq!(read_rgb(&p).unwrap(), t);
    }

    #[test]
    fn label_maps_255_to_one_and_rejects_grey() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("y.png");
        let t = Tensor::from_fn(&[1, 3, 3], |i| (i % 2) as f32);
        write_gray(&p, &t).unwrap();
        assert_eq!(read_label(&p).unwrap(), t);
        write_gray(&p, &Tensor::full(&[1, 2, 2], 0.5)).unwrap();
        assert!(matches!(read_label(&p), Err(Error::ValueRange(_))));
    }

    #[test]
    fn missing_and_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("none.png");
        assert!(matches!(read_rgb(&p), Err(Error::MissingFile(_))));
        std::fs::write(&p, b"not an image").unwrap();
        assert!(matches!(read_rgb(&p), Err(Error::CorruptImage { .. })));
    }
}
