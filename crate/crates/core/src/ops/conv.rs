//! 2-D cross-correlation with zero padding, via im2col.

use crate::error::{Error, Result};
use crate::par::map_indexed;
use crate::tensor::{Real, Shape};

/// Static geometry of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub input: Shape,
    pub output: Shape,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeom {
    /// Padding is `dilation * (k - 1) / 2` per axis, i.e. "same" at stride 1.
    pub fn new(input: Shape, weight: Shape, stride: usize, dilation: usize) -> Result<Self> {
        if input.c != weight.c {
            return Err(Error::shape(
                "conv2d",
                format!("input {input} has {} channels but weight {weight} expects {}", input.c, weight.c),
            ));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::param("conv2d", "stride and dilation must be at least 1"));
        }
        let (kh, kw) = (weight.h, weight.w);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::param("conv2d", format!("kernel {kh}x{kw} must have odd sides")));
        }
        let pad_h = dilation * (kh - 1) / 2;
        let pad_w = dilation * (kw - 1) / 2;
        let out = |len: usize, pad: usize, k: usize| -> Option<usize> {
            (len + 2 * pad).checked_sub(dilation * (k - 1) + 1).map(|v| v / stride + 1)
        };
        let (ho, wo) = match (out(input.h, pad_h, kh), out(input.w, pad_w, kw)) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => return Err(Error::shape("conv2d", format!("input {input} smaller than kernel"))),
        };
        Ok(ConvGeom {
            input,
            output: Shape::new(input.n, weight.n, ho, wo),
            kh,
            kw,
            stride,
            dilation,
            pad_h,
            pad_w,
        })
    }

    fn patch_len(&self) -> usize {
        self.input.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.output.h * self.output.w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Input row/column sampled by output coordinate `o` and kernel tap `k`.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, dilation: usize, pad: usize, len: usize) -> Option<usize> {
        let p = (o * stride + k * dilation) as isize - pad as isize;
        (p >= 0 && (p as usize) < len).then_some(p as usize)
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let (h, w) = (g.input.h, g.input.w);
    let (ho, wo) = (g.output.h, g.output.w);
    let plane = ho * wo;
    for c in 0..g.input.c {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    match ConvGeom::src(oy, ky, g.stride, g.dilation, g.pad_h, h) {
                        None => line.fill(T::zero()),
                        Some(iy) => {
                            let xr = &xc[iy * w..(iy + 1) * w];
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match ConvGeom::src(ox, kx, g.stride, g.dilation, g.pad_w, w) {
                                    Some(ix) => xr[ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let (h, w) = (g.input.h, g.input.w);
    let (ho, wo) = (g.output.h, g.output.w);
    let plane = ho * wo;
    for c in 0..g.input.c {
        let dxc = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.dilation, g.pad_h, h) else {
                        continue;
                    };
                    let line = &src[oy * wo..(oy + 1) * wo];
                    let dr = &mut dxc[iy * w..(iy + 1) * w];
                    for (ox, &v) in line.iter().enumerate() {
                        if let Some(ix) = ConvGeom::src(ox, kx, g.stride, g.dilation, g.pad_w, w) {
                            dr[ix] = dr[ix] + v;
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

fn conv_sample<T: Real>(g: &ConvGeom, x: &[T], weight: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let k = g.patch_len();
    let plane = g.out_plane();
    let owned;
    let col: &[T] = if g.is_pointwise() {
        x
    } else {
        let mut buf = vec![T::zero(); k * plane];
        im2col(g, x, &mut buf);
        owned = buf;
        &owned
    };
    for co in 0..g.output.c {
        let row = &mut out[co * plane..(co + 1) * plane];
        row.fill(bias.map_or(T::zero(), |b| b[co]));
        let wrow = &weight[co * k..(co + 1) * k];
        for (r, &a) in wrow.iter().enumerate() {
            axpy(row, a, &col[r * plane..(r + 1) * plane]);
        }
    }
}

pub fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let in_len = g.input.c * g.input.plane();
    let out_len = g.output.c * g.output.plane();
    let parts = map_indexed(g.input.n, |n| {
        let mut out = vec![T::zero(); out_len];
        conv_sample(g, &x[n * in_len..(n + 1) * in_len], weight, bias, &mut out);
        out
    });
    parts.concat()
}

pub struct ConvGrads<T> {
    pub dx: Vec<T>,
    pub dweight: Vec<T>,
    pub dbias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(g: &ConvGeom, x: &[T], weight: &[T], dout: &[T]) -> ConvGrads<T> {
    let k = g.patch_len();
    let plane = g.out_plane();
    let in_len = g.input.c * g.input.plane();
    let out_len = g.output.c * plane;
    let co_n = g.output.c;
    let parts = map_indexed(g.input.n, |n| {
        let xs = &x[n * in_len..(n + 1) * in_len];
        let dy = &dout[n * out_len..(n + 1) * out_len];
        let owned;
        let col: &[T] = if g.is_pointwise() {
            xs
        } else {
            let mut buf = vec![T::zero(); k * plane];
            im2col(g, xs, &mut buf);
            owned = buf;
            &owned
        };
        let mut dw = vec![T::zero(); co_n * k];
        let mut db = vec![T::zero(); co_n];
        let mut dcol = vec![T::zero(); k * plane];
        for co in 0..co_n {
            let dyr = &dy[co * plane..(co + 1) * plane];
            db[co] = dyr.iter().fold(T::zero(), |a, &b| a + b);
            let wrow = &weight[co * k..(co + 1) * k];
            for r in 0..k {
                let colr = &col[r * plane..(r + 1) * plane];
                dw[co * k + r] = dot(dyr, colr);
                axpy(&mut dcol[r * plane..(r + 1) * plane], wrow[r], dyr);
            }
        }
        let dx = if g.is_pointwise() {
            dcol
        } else {
            let mut dx = vec![T::zero(); in_len];
            col2im(g, &dcol, &mut dx);
            dx
        };
        (dx, dw, db)
    });
    let mut dweight = vec![T::zero(); co_n * k];
    let mut dbias = vec![T::zero(); co_n];
    let mut dx = Vec::with_capacity(g.input.numel());
    for (dxs, dw, db) in parts {
        dx.extend_from_slice(&dxs);
        for (a, b) in dweight.iter_mut().zip(&dw) {
            *a = *a + *b;
        }
        for (a, b) in dbias.iter_mut().zip(&db) {
            *a = *a + *b;
        }
    }
    ConvGrads { dx, dweight, dbias }
}
