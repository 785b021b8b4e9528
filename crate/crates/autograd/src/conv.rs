//! Volumetric convolution via im2col + GEMM. Planar convolution is the
//! special case of a depth-1 volume with a depth-1 kernel.

use crate::float::Float;
use crate::TensorError;

/// Kernel, stride and zero padding along (depth, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl ConvGeom {
    pub fn planar(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel: [1, kernel, kernel], stride: [1, stride, stride], padding: [0, padding, padding] }
    }

    pub fn volumetric(kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        Self { kernel, stride, padding }
    }

    /// Output extent along one axis, or `None` when the kernel does not fit.
    pub fn output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
        let padded = input + 2 * padding;
        if padded < kernel || stride == 0 {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub input: [usize; 3],
    pub out_ch: usize,
    pub output: [usize; 3],
    pub geom: ConvGeom,
}

impl ConvDims {
    /// `x_shape` is (B, C, H, W) or (B, C, D, H, W); `w_shape` is
    /// (O, C, kh, kw) or (O, C, kd, kh, kw) respectively.
    pub fn new(x_shape: &[usize], w_shape: &[usize], geom: ConvGeom) -> Result<Self, TensorError> {
        let (batch, in_ch, input) = match *x_shape {
            [b, c, h, w] => (b, c, [1, h, w]),
            [b, c, d, h, w] => (b, c, [d, h, w]),
            _ => return Err(TensorError::Shape(format!("conv input must be 4-D or 5-D, got {:?}", x_shape))),
        };
        let (out_ch, w_in, kernel) = match *w_shape {
            [o, c, kh, kw] if x_shape.len() == 4 => (o, c, [1, kh, kw]),
            [o, c, kd, kh, kw] if x_shape.len() == 5 => (o, c, [kd, kh, kw]),
            _ => {
                return Err(TensorError::Shape(format!(
                    "conv weight {:?} incompatible with input {:?}",
                    w_shape, x_shape
                )))
            }
        };
        if w_in != in_ch {
            return Err(TensorError::Shape(format!("conv weight expects {} input channels, got {}", w_in, in_ch)));
        }
        if kernel != geom.kernel {
            return Err(TensorError::Shape(format!(
                "conv weight kernel {:?} does not match geometry {:?}",
                kernel, geom.kernel
            )));
        }
        let mut output = [0; 3];
        for a in 0..3 {
            output[a] = ConvGeom::output_len(input[a], kernel[a], geom.stride[a], geom.padding[a]).ok_or_else(|| {
                TensorError::Shape(format!("conv kernel {:?} does not fit input {:?}", kernel, x_shape))
            })?;
        }
        Ok(Self { batch, in_ch, input, out_ch, output, geom })
    }

    pub fn output_shape(&self, planar: bool) -> Vec<usize> {
        let [d, h, w] = self.output;
        if planar {
            vec![self.batch, self.out_ch, h, w]
        } else {
            vec![self.batch, self.out_ch, d, h, w]
        }
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.geom.kernel.iter().product::<usize>()
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn pointwise(&self) -> bool {
        self.geom.kernel == [1, 1, 1] && self.geom.stride == [1, 1, 1] && self.geom.padding == [0, 0, 0]
    }
}

fn offset(o: usize, stride: usize, k: usize, pad: usize, len: usize) -> Option<usize> {
    let i = (o * stride + k) as isize - pad as isize;
    if i < 0 || i >= len as isize {
        None
    } else {
        Some(i as usize)
    }
}

fn im2col<T: Float>(x: &[T], d: &ConvDims, cols: &mut [T]) {
    let [id, ih, iw] = d.input;
    let [od, oh, ow] = d.output;
    let [kd, kh, kw] = d.geom.kernel;
    let [sd, sh, sw] = d.geom.stride;
    let [pd, ph, pw] = d.geom.padding;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..d.in_ch {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for oz in 0..od {
                        let Some(iz) = offset(oz, sd, kz, pd, id) else {
                            dst[idx..idx + oh * ow].fill(T::zero());
                            idx += oh * ow;
                            continue;
                        };
                        for oy in 0..oh {
                            let Some(iy) = offset(oy, sh, ky, ph, ih) else {
                                dst[idx..idx + ow].fill(T::zero());
                                idx += ow;
                                continue;
                            };
                            let src = &xc[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                            for ox in 0..ow {
                                dst[idx] = match offset(ox, sw, kx, pw, iw) {
                                    Some(ix) => src[ix],
                                    None => T::zero(),
                                };
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2im<T: Float>(cols: &[T], d: &ConvDims, dx: &mut [T]) {
    let [id, ih, iw] = d.input;
    let [od, oh, ow] = d.output;
    let [kd, kh, kw] = d.geom.kernel;
    let [sd, sh, sw] = d.geom.stride;
    let [pd, ph, pw] = d.geom.padding;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..d.in_ch {
        let xc = &mut dx[c * id * ih * iw..(c + 1) * id * ih * iw];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &cols[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for oz in 0..od {
                        let Some(iz) = offset(oz, sd, kz, pd, id) else {
                            idx += oh * ow;
                            continue;
                        };
                        for oy in 0..oh {
                            let Some(iy) = offset(oy, sh, ky, ph, ih) else {
                                idx += ow;
                                continue;
                            };
                            let dst = &mut xc[(iz * ih + iy) * iw..(iz * ih + iy + 1) * iw];
                            for ox in 0..ow {
                                if let Some(ix) = offset(ox, sw, kx, pw, iw) {
                                    dst[ix] += src[idx];
                                }
                                idx += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub(crate) fn forward<T: Float>(x: &[T], w: &[T], bias: Option<&[T]>, d: &ConvDims) -> Vec<T> {
    let k = d.patch_len();
    let p = d.out_plane();
    let in_len = d.in_ch * d.in_plane();
    let out_len = d.out_ch * p;
    let mut out = vec![T::zero(); d.batch * out_len];
    let mut cols = if d.pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for b in 0..d.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let ob = &mut out[b * out_len..(b + 1) * out_len];
        let rhs: &[T] = if d.pointwise() {
            xb
        } else {
            im2col(xb, d, &mut cols);
            &cols
        };
        T::gemm(d.out_ch, k, p, T::one(), w, false, rhs, false, T::zero(), ob);
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                for v in &mut ob[o * p..(o + 1) * p] {
                    *v += bv;
                }
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn backward<T: Float>(
    x: &[T],
    w: &[T],
    gout: &[T],
    d: &ConvDims,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (need_dx, need_dw, need_db) = need;
    let k = d.patch_len();
    let p = d.out_plane();
    let in_len = d.in_ch * d.in_plane();
    let out_len = d.out_ch * p;
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); w.len()]);
    let mut db = need_db.then(|| vec![T::zero(); d.out_ch]);
    let pointwise = d.pointwise();
    let mut cols = if pointwise || !need_dw { Vec::new() } else { vec![T::zero(); k * p] };
    let mut dcols = if pointwise || !need_dx { Vec::new() } else { vec![T::zero(); k * p] };
    for b in 0..d.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let gb = &gout[b * out_len..(b + 1) * out_len];
        if let Some(db) = db.as_mut() {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc += gb[o * p..(o + 1) * p].iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            let rhs: &[T] = if pointwise {
                xb
            } else {
                im2col(xb, d, &mut cols);
                &cols
            };
            T::gemm(d.out_ch, p, k, T::one(), gb, false, rhs, true, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if pointwise {
                T::gemm(k, d.out_ch, p, T::one(), w, true, gb, false, T::zero(), dxb);
            } else {
                T::gemm(k, d.out_ch, p, T::one(), w, true, gb, false, T::zero(), &mut dcols);
                col2im(&dcols, d, dxb);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as the oracle.
    fn direct(x: &[f64], xs: [usize; 5], w: &[f64], ws: [usize; 5], g: ConvGeom) -> (Vec<f64>, [usize; 3]) {
        let [b, c, id, ih, iw] = xs;
        let [o, _, kd, kh, kw] = ws;
        let od = (id + 2 * g.padding[0] - kd) / g.stride[0] + 1;
        let oh = (ih + 2 * g.padding[1] - kh) / g.stride[1] + 1;
        let ow = (iw + 2 * g.padding[2] - kw) / g.stride[2] + 1;
        let mut out = vec![0.0; b * o * od * oh * ow];
        for bi in 0..b {
            for oi in 0..o {
                for z in 0..od {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut s = 0.0;
                            for ci in 0..c {
                                for a in 0..kd {
                                    for bb in 0..kh {
                                        for cc in 0..kw {
                                            let iz = (z * g.stride[0] + a) as isize - g.padding[0] as isize;
                                            let iy = (y * g.stride[1] + bb) as isize - g.padding[1] as isize;
                                            let ix = (xx * g.stride[2] + cc) as isize - g.padding[2] as isize;
                                            if iz < 0 || iy < 0 || ix < 0 {
                                                continue;
                                            }
                                            let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                            if iz >= id || iy >= ih || ix >= iw {
                                                continue;
                                            }
                                            s += x[(((bi * c + ci) * id + iz) * ih + iy) * iw + ix]
                                                * w[(((oi * c + ci) * kd + a) * kh + bb) * kw + cc];
                                        }
                                    }
                                }
                            }
                            out[(((bi * o + oi) * od + z) * oh + y) * ow + xx] = s;
                        }
                    }
                }
            }
        }
        (out, [od, oh, ow])
    }

    #[test]
    fn im2col_forward_matches_direct_loops() {
        let xs = [2, 3, 4, 9, 7];
        let ws = [5, 3, 3, 3, 3];
        let x: Vec<f64> = (0..xs.iter().product()).map(|i| ((i * 31 % 17) as f64 - 8.0) / 7.0).collect();
        let w: Vec<f64> = (0..ws.iter().product()).map(|i| ((i * 13 % 11) as f64 - 5.0) / 9.0).collect();
        for geom in [
            ConvGeom::volumetric([3, 3, 3], [1, 1, 1], [1, 1, 1]),
            ConvGeom::volumetric([3, 3, 3], [1, 2, 2], [1, 1, 0]),
            ConvGeom::volumetric([3, 3, 3], [2, 3, 1], [0, 2, 1]),
        ] {
            let d = ConvDims::new(&xs, &ws, geom).unwrap();
            let got = forward(&x, &w, None, &d);
            let (want, od) = direct(&x, xs, &w, ws, geom);
            assert_eq!(d.output, od);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn quartering_kernel_geometry() {
        // 3x9x9 kernel, stride 1x4x4, padding 1x4x4 keeps time and quarters space.
        let g = ConvGeom::volumetric([3, 9, 9], [1, 4, 4], [1, 4, 4]);
        for (t, h) in [(8, 256), (2, 64), (4, 16)] {
            let d = ConvDims::new(&[1, 3, t, h, h], &[64, 3, 3, 9, 9], g).unwrap();
            assert_eq!(d.output, [t, h / 4, h / 4]);
        }
    }
}
