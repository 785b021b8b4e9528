//! Sliding-window tiling with the last window snapped to the raster edge,
//! and overlap-averaged stitching.

use std::io::{Read, Write};

use ctma_autograd::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileSpec {
    pub tile_size: usize,
    pub stride: usize,
}

impl TileSpec {
    pub fn new(tile_size: usize, stride: usize) -> Result<Self> {
        if tile_size == 0 || stride == 0 || stride > tile_size {
            return Err(Error::Config(format!("tile spec needs 0 < stride <= tile_size, got {} / {}", stride, tile_size)));
        }
        Ok(Self { tile_size, stride })
    }
}

/// Window starts along one axis of length `len`.
pub fn axis_origins(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut o = 0;
    while o + tile < len {
        out.push(o);
        o += stride;
    }
    out.push(len - tile);
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileIndex {
    pub height: usize,
    pub width: usize,
    pub tile_size: usize,
    /// Row-major (row, col) window origins.
    pub origins: Vec<(usize, usize)>,
}

impl TileIndex {
    pub fn new(height: usize, width: usize, spec: TileSpec) -> Result<Self> {
        if height < spec.tile_size || width < spec.tile_size {
            return Err(Error::TooSmall { height, width, tile: spec.tile_size });
        }
        let rows = axis_origins(height, spec.tile_size, spec.stride);
        let cols = axis_origins(width, spec.tile_size, spec.stride);
        let origins = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
        Ok(Self { height, width, tile_size: spec.tile_size, origins })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// `size` x `size` window of a `(C, H, W)` tensor at `(row, col)`.
pub fn crop(img: &Tensor<f32>, row: usize, col: usize, size: usize) -> Result<Tensor<f32>> {
    let s = img.shape();
    if s.len() != 3 || row + size > s[1] || col + size > s[2] {
        return Err(Error::ShapeMismatch(format!("window {}x{} at ({}, {}) outside {:?}", size, size, row, col, s)));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut data = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for r in row..row + size {
            let start = (ch * h + r) * w + col;
            data.extend_from_slice(&img.data()[start..start + size]);
        }
    }
    Ok(Tensor::new(vec![c, size, size], data)?)
}

pub fn tile_image(img: &Tensor<f32>, spec: TileSpec) -> Result<(Vec<Tensor<f32>>, TileIndex)> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch(format!("raster must be (C, H, W), got {:?}", s)));
    }
    let index = TileIndex::new(s[1], s[2], spec)?;
    let tiles = index.origins.iter().map(|&(r, c)| crop(img, r, c, spec.tile_size)).collect::<Result<_>>()?;
    Ok((tiles, index))
}

/// Per-pixel mean over every window that covers it.
pub fn stitch_predictions(tiles: &[Tensor<f32>], index: &TileIndex) -> Result<Tensor<f32>> {
    if tiles.len() != index.len() {
        return Err(Error::ShapeMismatch(format!("{} tiles for an index of {}", tiles.len(), index.len())));
    }
    let c = tiles.first().map_or(1, |t| t.shape()[0]);
    let (h, w, t) = (index.height, index.width, index.tile_size);
    let mut sum = vec![0.0f64; c * h * w];
    let mut count = vec![0u32; h * w];
    for (tile, &(r0, c0)) in tiles.iter().zip(&index.origins) {
        if tile.shape() != [c, t, t] {
            return Err(Error::ShapeMismatch(format!("tile {:?} does not match ({}, {}, {})", tile.shape(), c, t, t)));
        }
        for ch in 0..c {
            for r in 0..t {
                for q in 0..t {
                    sum[(ch * h + r0 + r) * w + c0 + q] += tile.data()[(ch * t + r) * t + q] as f64;
                }
            }
        }
        for r in 0..t {
            for q in 0..t {
                count[(r0 + r) * w + c0 + q] += 1;
            }
        }
    }
    if let Some(i) = count.iter().position(|&n| n == 0) {
        return Err(Error::CoverageGap { row: i / w, col: i % w });
    }
    let data = sum.iter().enumerate().map(|(i, &v)| (v / count[i % (h * w)] as f64) as f32).collect();
    Ok(Tensor::new(vec![c, h, w], data)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRecord {
    pub id: String,
    pub row: usize,
    pub col: usize,
}

pub fn write_tile_records<W: Write>(out: W, records: &[TileRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tile_records<R: Read>(input: R) -> Result<Vec<TileRecord>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn protocol_tile_counts() {
        let spec = TileSpec::new(256, 128).unwrap();
        assert_eq!(TileIndex::new(1024, 1024, spec).unwrap().len(), 49);
        assert_eq!(TileIndex::new(1024, 1024, TileSpec::new(256, 256).unwrap()).unwrap().len(), 16);
        let snapped = TileIndex::new(300, 300, TileSpec::new(256, 256).unwrap()).unwrap();
        assert_eq!(snapped.origins, vec![(0, 0), (0, 44), (44, 0), (44, 44)]);
        assert!(matches!(TileIndex::new(200, 300, spec), Err(Error::TooSmall { .. })));
        assert!(TileSpec::new(256, 300).is_err());
    }

    #[test]
    fn half_overlap_averages() {
        let index = TileIndex { height: 2, width: 3, tile_size: 2, origins: vec![(0, 0), (0, 1)] };
        let tiles = vec![Tensor::full(&[1, 2, 2], 0.2), Tensor::full(&[1, 2, 2], 0.6)];
        let m = stitch_predictions(&tiles, &index).unwrap();
        for r in 0..2 {
            assert!((m.data()[r * 3] - 0.2).abs() < 1e-7);
            assert!((m.data()[r * 3 + 1] - 0.4).abs() < 1e-7);
            assert!((m.data()[r * 3 + 2] - 0.6).abs() < 1e-7);
        }
    }

    #[test]
    fn uncovered_pixel_is_reported() {
        let index = TileIndex { height: 2, width: 4, tile_size: 2, origins: vec![(0, 0)] };
        let r = stitch_predictions(&[Tensor::zeros(&[1, 2, 2])], &index);
        assert!(matches!(r, Err(Error::CoverageGap { row: 0, col: 2 })));
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![TileRecord { id: "a".into(), row: 0, col: 128 }, TileRecord { id: "b".into(), row: 44, col: 0 }];
        let mut buf = Vec::new();
        write_tile_records(&mut buf, &recs).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("id,row,col\n"));
        assert_eq!(read_tile_records(buf.as_slice()).unwrap(), recs);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn tile_then_stitch_is_identity(h in 16usize..70, w in 16usize..70, t in 4usize..16, frac in 1usize..=4, seed in 0u32..1000) {
            let stride = (t * frac / 4).max(1);
            let img = Tensor::from_fn(&[2, h, w], |i| (((i as u32).wrapping_mul(2654435761) ^ seed) % 1000) as f32 / 1000.0);
            let (tiles, index) = tile_image(&img, TileSpec::new(t, stride).unwrap()).unwrap();
            let back = stitch_predictions(&tiles, &index).unwrap();
            for (a, b) in back.data().iter().zip(img.data()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
