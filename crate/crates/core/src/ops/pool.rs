//! Average pooling. Windows average over in-bounds pixels only.

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub input: Shape,
    pub output: Shape,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PoolGeom {
    /// Block pooling when `k == stride` (no padding, exact division required);
    /// otherwise an odd window with `(k - 1) / 2` padding and the conv output-size rule.
    pub fn new(input: Shape, k: usize, stride: usize) -> Result<Self> {
        if k < 1 || stride < 1 {
            return Err(Error::param("avg_pool", format!("window {k} and stride {stride} must be at least 1")));
        }
        let pad = if k == stride {
            if input.h % stride != 0 || input.w % stride != 0 {
                return Err(Error::shape(
                    "avg_pool",
                    format!("block pooling by {stride} needs sides divisible by {stride}, got {input}"),
                ));
            }
            0
        } else {
            if k % 2 == 0 {
                return Err(Error::param("avg_pool", format!("padded window {k} must be odd")));
            }
            (k - 1) / 2
        };
        let out = |len: usize| (len + 2 * pad).checked_sub(k).map(|v| v / stride + 1);
        let (Some(ho), Some(wo)) = (out(input.h), out(input.w)) else {
            return Err(Error::shape("avg_pool", format!("input {input} smaller than window {k}")));
        };
        Ok(PoolGeom { input, output: input.with_hw(ho, wo), k, stride, pad })
    }

    /// In-bounds input range covered by output index `o` along an axis of length `len`.
    #[inline]
    fn window(&self, o: usize, len: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - self.pad as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + self.k as isize) as usize).min(len);
        (lo, hi)
    }
}

pub fn avg_pool_forward<T: Real>(g: &PoolGeom, x: &[T]) -> Vec<T> {
    let (h, w) = (g.input.h, g.input.w);
    let (ho, wo) = (g.output.h, g.output.w);
    let xw: Vec<(usize, usize)> = (0..wo).map(|o| g.window(o, w)).collect();
    let yw: Vec<(usize, usize)> = (0..ho).map(|o| g.window(o, h)).collect();
    let planes = g.input.n * g.input.c;
    let mut out = vec![T::zero(); planes * ho * wo];
    let mut tmp = vec![T::zero(); h * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for iy in 0..h {
            let row = &src[iy * w..(iy + 1) * w];
            for (ox, &(lo, hi)) in xw.iter().enumerate() {
                tmp[iy * wo + ox] = row[lo..hi].iter().fold(T::zero(), |a, &b| a + b);
            }
        }
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for (oy, &(ylo, yhi)) in yw.iter().enumerate() {
            for (ox, &(xlo, xhi)) in xw.iter().enumerate() {
                let mut s = T::zero();
                for iy in ylo..yhi {
                    s = s + tmp[iy * wo + ox];
                }
                let count = ((yhi - ylo) * (xhi - xlo)) as f64;
                dst[oy * wo + ox] = s / T::lit(count);
            }
        }
    }
    out
}

pub fn avg_pool_backward<T: Real>(g: &PoolGeom, dout: &[T]) -> Vec<T> {
    let (h, w) = (g.input.h, g.input.w);
    let (ho, wo) = (g.output.h, g.output.w);
    let xw: Vec<(usize, usize)> = (0..wo).map(|o| g.window(o, w)).collect();
    let yw: Vec<(usize, usize)> = (0..ho).map(|o| g.window(o, h)).collect();
    let planes = g.input.n * g.input.c;
    let mut dx = vec![T::zero(); planes * h * w];
    let mut tmp = vec![T::zero(); h * wo];
    for p in 0..planes {
        tmp.fill(T::zero());
        let dy = &dout[p * ho * wo..(p + 1) * ho * wo];
        for (oy, &(ylo, yhi)) in yw.iter().enumerate() {
            for (ox, &(xlo, xhi)) in xw.iter().enumerate() {
                let count = ((yhi - ylo) * (xhi - xlo)) as f64;
                let v = dy[oy * wo + ox] / T::lit(count);
                for iy in ylo..yhi {
                    tmp[iy * wo + ox] = tmp[iy * wo + ox] + v;
                }
            }
        }
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for iy in 0..h {
            let row = &mut dst[iy * w..(iy + 1) * w];
            for (ox, &(lo, hi)) in xw.iter().enumerate() {
                let v = tmp[iy * wo + ox];
                for r in &mut row[lo..hi] {
                    *r = *r + v;
                }
            }
        }
    }
    dx
}

pub fn global_avg_pool_forward<T: Real>(shape: Shape, x: &[T]) -> Vec<T> {
    let plane = shape.plane();
    x.chunks(plane)
        .map(|p| T::lit(p.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64))
        .collect()
}

pub fn global_avg_pool_backward<T: Real>(shape: Shape, dout: &[T]) -> Vec<T> {
    let plane = shape.plane();
    let scale = T::lit(1.0 / plane as f64);
    dout.iter().flat_map(|&g| std::iter::repeat_n(g * scale, plane)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_pool_requires_divisible_sides() {
        assert!(PoolGeom::new(Shape::new(1, 1, 5, 4), 2, 2).is_err());
        let g = PoolGeom::new(Shape::new(1, 1, 6, 4), 2, 2).unwrap();
        assert_eq!((g.output.h, g.output.w), (3, 2));
    }

    #[test]
    fn zero_window_rejected() {
        assert!(matches!(PoolGeom::new(Shape::new(1, 1, 4, 4), 0, 1), Err(Error::Param { .. })));
    }

    #[test]
    fn border_windows_average_in_bounds_only() {
        let g = PoolGeom::new(Shape::new(1, 1, 1, 3), 3, 1).unwrap();
        let y = avg_pool_forward(&g, &[1.0f64, 2.0, 6.0]);
        assert_eq!(y, vec![1.5, 3.0, 4.0]);
    }
}
