//! Numeric kernels behind the tape operations.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
}

impl ConvDims {
    pub fn from_shapes(input: &[usize], kernel: &[usize]) -> Result<Self> {
        if input.len() != 3 || kernel.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        if kernel[2] != input[2] {
            return Err(Error::ShapeMismatch {
                op: "conv2d channels",
                lhs: input.to_vec(),
                rhs: kernel.to_vec(),
            });
        }
        if kernel[0] % 2 == 0 || kernel[1] % 2 == 0 {
            return Err(Error::InvalidShape {
                shape: kernel.to_vec(),
                reason: "convolution kernels must have odd spatial extents".into(),
            });
        }
        Ok(Self {
            h: input[0],
            w: input[1],
            cin: input[2],
            kh: kernel[0],
            kw: kernel[1],
            cout: kernel[3],
        })
    }

    /// Iterates the valid (output pixel, kernel tap, input pixel) triples of a
    /// same-padded convolution; taps falling on the zero padding are skipped.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        for i in 0..self.h {
            for di in 0..self.kh {
                let ii = i as isize + di as isize - ph as isize;
                if ii < 0 || ii >= self.h as isize {
                    continue;
                }
                for j in 0..self.w {
                    for dj in 0..self.kw {
                        let jj = j as isize + dj as isize - pw as isize;
                        if jj < 0 || jj >= self.w as isize {
                            continue;
                        }
                        let out_px = i * self.w + j;
                        let tap = di * self.kw + dj;
                        let in_px = ii as usize * self.w + jj as usize;
                        f(out_px, tap, in_px);
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    dims: &ConvDims,
    input: &[f64],
    kernel: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let (cin, cout) = (dims.cin, dims.cout);
    let mut out = vec![0.0; dims.h * dims.w * cout];
    if let Some(b) = bias {
        for px in out.chunks_exact_mut(cout) {
            px.copy_from_slice(b);
        }
    }
    dims.for_each_tap(|out_px, tap, in_px| {
        let x = &input[in_px * cin..(in_px + 1) * cin];
        let o = &mut out[out_px * cout..(out_px + 1) * cout];
        let k_tap = &kernel[tap * cin * cout..(tap + 1) * cin * cout];
        for (ci, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let krow = &k_tap[ci * cout..(ci + 1) * cout];
            for (ov, kv) in o.iter_mut().zip(krow) {
                *ov += xv * kv;
            }
        }
    });
    out
}

/// Cotangents of a convolution with respect to whichever operands are requested.
pub(crate) fn conv2d_backward(
    dims: &ConvDims,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_kernel: Option<&mut [f64]>,
    grad_bias: Option<&mut [f64]>,
) {
    let (cin, cout) = (dims.cin, dims.cout);
    if let Some(gb) = grad_bias {
        for px in grad_out.chunks_exact(cout) {
            for (b, g) in gb.iter_mut().zip(px) {
                *b += g;
            }
        }
    }
    if let Some(gi) = grad_input {
        dims.for_each_tap(|out_px, tap, in_px| {
            let g = &grad_out[out_px * cout..(out_px + 1) * cout];
            let k_tap = &kernel[tap * cin * cout..(tap + 1) * cin * cout];
            let gx = &mut gi[in_px * cin..(in_px + 1) * cin];
            for (ci, gxv) in gx.iter_mut().enumerate() {
                let krow = &k_tap[ci * cout..(ci + 1) * cout];
                let mut s = 0.0;
                for (kv, gv) in krow.iter().zip(g) {
                    s += kv * gv;
                }
                *gxv += s;
            }
        });
    }
    if let Some(gk) = grad_kernel {
        dims.for_each_tap(|out_px, tap, in_px| {
            let g = &grad_out[out_px * cout..(out_px + 1) * cout];
            let x = &input[in_px * cin..(in_px + 1) * cin];
            let gk_tap = &mut gk[tap * cin * cout..(tap + 1) * cin * cout];
            for (ci, &xv) in x.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let row = &mut gk_tap[ci * cout..(ci + 1) * cout];
                for (kv, gv) in row.iter_mut().zip(g) {
                    *kv += xv * gv;
                }
            }
        });
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner).
pub(crate) fn lanes(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward(data: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = lanes(shape, axis);
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut m = f64::NEG_INFINITY;
            for k in 0..n {
                m = m.max(data[base + k * inner]);
            }
            let mut s = 0.0;
            for k in 0..n {
                let e = (data[base + k * inner] - m).exp();
                out[base + k * inner] = e;
                s += e;
            }
            for k in 0..n {
                out[base + k * inner] /= s;
            }
        }
    }
    out
}

pub(crate) fn softmax_backward(
    y: &[f64],
    g: &[f64],
    shape: &[usize],
    axis: usize,
    grad_in: &mut [f64],
) {
    let (outer, n, inner) = lanes(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            let mut dot = 0.0;
            for k in 0..n {
                dot += y[base + k * inner] * g[base + k * inner];
            }
            for k in 0..n {
                let idx = base + k * inner;
                grad_in[idx] += y[idx] * (g[idx] - dot);
            }
        }
    }
}

/// Output shape and input→output flat index map of a reduction over `axes`.
/// Reduced axes are dropped; reducing every axis yields shape `[1]`.
pub(crate) fn reduction_map(shape: &[usize], axes: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::InvalidAxis {
                axis: a,
                rank: shape.len(),
            });
        }
    }
    let keep: Vec<usize> = (0..shape.len()).filter(|a| !axes.contains(a)).collect();
    let mut out_shape: Vec<usize> = keep.iter().map(|&a| shape[a]).collect();
    let out_strides = super::Tensor::strides(&out_shape);
    let n: usize = shape.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    for _ in 0..n {
        let mut o = 0;
        for (k, &a) in keep.iter().enumerate() {
            o += idx[a] * out_strides[k];
        }
        map.push(o);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    Ok((out_shape, map))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_map_over_middle_axis() {
        let (shape, map) = reduction_map(&[2, 3, 2], &[1]).unwrap();
        assert_eq!(shape, vec![2, 2]);
        assert_eq!(map, vec![0, 1, 0, 1, 0, 1, 2, 3, 2, 3, 2, 3]);
    }

    #[test]
    fn reduction_over_all_axes_is_scalar() {
        let (shape, map) = reduction_map(&[2, 2], &[0, 1]).unwrap();
        assert_eq!(shape, vec![1]);
        assert!(map.iter().all(|&m| m == 0));
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(ConvDims::from_shapes(&[4, 4, 1], &[2, 3, 1, 1]).is_err());
        assert!(ConvDims::from_shapes(&[4, 4, 1], &[3, 3, 2, 1]).is_err());
    }
}
