//! Bilinear resampling with half-pixel centers.
//!
//! Output coordinate `o` samples source position `(o + 0.5) * in / out - 0.5`,
//! clamped to `[0, in - 1]`. An integer upsampling factor `f` is the special
//! case `in / out = 1 / f`.

use crate::tensor::{Real, Shape};

/// Two source taps and the weight of the second one.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn axis_taps(len_in: usize, len_out: usize) -> Vec<Tap> {
    let ratio = len_in as f64 / len_out as f64;
    (0..len_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (len_in - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len_in - 1);
            Tap { lo, hi, frac: src - lo as f64 }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResizePlan {
    pub input: Shape,
    pub output: Shape,
    ys: Vec<Tap>,
    xs: Vec<Tap>,
}

impl ResizePlan {
    pub fn new(input: Shape, out_h: usize, out_w: usize) -> Self {
        ResizePlan {
            input,
            output: input.with_hw(out_h, out_w),
            ys: axis_taps(input.h, out_h),
            xs: axis_taps(input.w, out_w),
        }
    }

    pub fn forward<T: Real>(&self, x: &[T]) -> Vec<T> {
        let (h, w) = (self.input.h, self.input.w);
        let (ho, wo) = (self.output.h, self.output.w);
        let planes = self.input.n * self.input.c;
        let mut out = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            let src = &x[p * h * w..(p + 1) * h * w];
            for ty in &self.ys {
                let fy = T::lit(ty.frac);
                let r0 = &src[ty.lo * w..(ty.lo + 1) * w];
                let r1 = &src[ty.hi * w..(ty.hi + 1) * w];
                for tx in &self.xs {
                    let fx = T::lit(tx.frac);
                    let top = r0[tx.lo] + (r0[tx.hi] - r0[tx.lo]) * fx;
                    let bot = r1[tx.lo] + (r1[tx.hi] - r1[tx.lo]) * fx;
                    out.push(top + (bot - top) * fy);
                }
            }
        }
        out
    }

    /// Transpose scatter of the interpolation weights.
    pub fn backward<T: Real>(&self, dout: &[T]) -> Vec<T> {
        let (h, w) = (self.input.h, self.input.w);
        let (ho, wo) = (self.output.h, self.output.w);
        let planes = self.input.n * self.input.c;
        let mut dx = vec![T::zero(); planes * h * w];
        for p in 0..planes {
            let dy = &dout[p * ho * wo..(p + 1) * ho * wo];
            let dst = &mut dx[p * h * w..(p + 1) * h * w];
            for (oy, ty) in self.ys.iter().enumerate() {
                let fy = T::lit(ty.frac);
                let gy = T::one() - fy;
                for (ox, tx) in self.xs.iter().enumerate() {
                    let g = dy[oy * wo + ox];
                    let fx = T::lit(tx.frac);
                    let gx = T::one() - fx;
                    dst[ty.lo * w + tx.lo] = dst[ty.lo * w + tx.lo] + g * gy * gx;
                    dst[ty.lo * w + tx.hi] = dst[ty.lo * w + tx.hi] + g * gy * fx;
                    dst[ty.hi * w + tx.lo] = dst[ty.hi * w + tx.lo] + g * fy * gx;
                    dst[ty.hi * w + tx.hi] = dst[ty.hi * w + tx.hi] + g * fy * fx;
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_two_taps() {
        let t = axis_taps(2, 4);
        assert_eq!(t[0], Tap { lo: 0, hi: 1, frac: 0.0 });
        assert_eq!(t[1], Tap { lo: 0, hi: 1, frac: 0.25 });
        assert_eq!(t[2], Tap { lo: 0, hi: 1, frac: 0.75 });
        assert_eq!(t[3], Tap { lo: 1, hi: 1, frac: 0.0 });
    }

    #[test]
    fn identity_when_sizes_match() {
        let t = axis_taps(5, 5);
        assert!(t.iter().enumerate().all(|(i, tap)| tap.lo == i && tap.frac == 0.0));
    }
}
