//! Boundary-weighted BCE and IoU losses.
//!
//! Pixels whose neighbourhood disagrees with their own label get larger
//! weights: `w = 1 + lambda * |box_mean_k(G) - G|`.

use crate::error::{Error, Result};
use crate::ops::pool::{avg_pool_forward, PoolGeom};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightRule {
    pub lambda: f64,
    pub kernel: usize,
}

impl Default for WeightRule {
    fn default() -> Self {
        WeightRule { lambda: 5.0, kernel: 31 }
    }
}

/// Per-pixel loss weights in `[1, 1 + lambda]`, shape `(n, 1, h, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap<T: Real = f32>(pub Tensor<T>);

pub fn validate_binary<T: Real>(g: &Tensor<T>) -> Result<()> {
    if let Some(v) = g.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(Error::Validation(format!("ground truth must be binary, found value {v}")));
    }
    Ok(())
}

pub fn weight_map<T: Real>(g: &Tensor<T>, rule: WeightRule) -> Result<WeightMap<T>> {
    validate_binary(g)?;
    let geom = PoolGeom::new(g.shape(), rule.kernel, 1)?;
    let local = avg_pool_forward(&geom, g.data());
    let lambda = T::lit(rule.lambda);
    let data = local
        .iter()
        .zip(g.data())
        .map(|(&m, &gv)| T::one() + lambda * (m - gv).abs())
        .collect();
    Ok(WeightMap(Tensor::from_vec(g.shape(), data)?))
}

/// `log(1 + exp(-|z|))`, the stable tail of the logit-space BCE.
fn softplus_neg_abs(z: f64) -> f64 {
    (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub(crate) fn bce_forward<T: Real>(z: &[T], g: &[T], w: &[T]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&z, &g), &w) in z.iter().zip(g).zip(w) {
        let (z, g, w) = (z.as_f64(), g.as_f64(), w.as_f64());
        num += w * (z.max(0.0) - z * g + softplus_neg_abs(z));
        den += w;
    }
    num / den
}

pub(crate) fn bce_backward<T: Real>(z: &[T], g: &[T], w: &[T], upstream: T) -> Vec<T> {
    let den: f64 = w.iter().map(|v| v.as_f64()).sum();
    let scale = upstream.as_f64() / den;
    z.iter()
        .zip(g)
        .zip(w)
        .map(|((&z, &g), &w)| T::lit(scale * w.as_f64() * (sigmoid(z.as_f64()) - g.as_f64())))
        .collect()
}

fn iou_terms<T: Real>(z: &[T], g: &[T], w: &[T]) -> (f64, f64) {
    let mut inter = 1.0;
    let mut union = 1.0;
    for ((&z, &g), &w) in z.iter().zip(g).zip(w) {
        let (p, g, w) = (sigmoid(z.as_f64()), g.as_f64(), w.as_f64());
        inter += w * p * g;
        union += w * (p + g - p * g);
    }
    (inter, union)
}

pub(crate) fn iou_forward<T: Real>(z: &[T], g: &[T], w: &[T]) -> f64 {
    let (i, u) = iou_terms(z, g, w);
    1.0 - i / u
}

pub(crate) fn iou_backward<T: Real>(z: &[T], g: &[T], w: &[T], upstream: T) -> Vec<T> {
    let (i, u) = iou_terms(z, g, w);
    let up = upstream.as_f64();
    z.iter()
        .zip(g)
        .zip(w)
        .map(|((&z, &g), &w)| {
            let (p, g, w) = (sigmoid(z.as_f64()), g.as_f64(), w.as_f64());
            let dp = -w * (g * u - i * (1.0 - g)) / (u * u);
            T::lit(up * dp * p * (1.0 - p))
        })
        .collect()
}

/// Loss terms recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub bce: Var,
    pub iou: Var,
}

/// `weighted_iou + weighted_bce` with one shared weight map.
///
/// Logits at a coarser resolution are bilinearly upsampled to the mask size
/// first.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, logits: Var, g: &Tensor<T>, rule: WeightRule) -> Result<LossVars> {
    let gs = g.shape();
    let ls = tape.shape(logits);
    if (ls.n, ls.c) != (gs.n, gs.c) {
        return Err(Error::shape("total_loss", format!("logits {ls} vs ground truth {gs}")));
    }
    let logits = if (ls.h, ls.w) != (gs.h, gs.w) { tape.resize(logits, gs.h, gs.w)? } else { logits };
    let w = weight_map(g, rule)?;
    let bce = tape.weighted_bce(logits, g, &w.0)?;
    let iou = tape.weighted_iou(logits, g, &w.0)?;
    let total = tape.add(bce, iou)?;
    Ok(LossVars { total, bce, iou })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn mask(h: usize, w: usize, fg: &[(usize, usize)]) -> Tensor<f64> {
        let mut t = Tensor::zeros(Shape::new(1, 1, h, w));
        for &(y, x) in fg {
            t.set(0, 0, y, x, 1.0);
        }
        t
    }

    #[test]
    fn constant_masks_give_unit_weights() {
        for v in [0.0, 1.0] {
            let g = Tensor::full(Shape::new(1, 1, 12, 12), v);
            let w = weight_map(&g, WeightRule::default()).unwrap();
            assert!(w.0.data().iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn single_pixel_weight_hand_case() {
        let g = mask(9, 9, &[(4, 4)]);
        let w = weight_map(&g, WeightRule { lambda: 5.0, kernel: 3 }).unwrap();
        // 1 + 5 * (1 - 1/9)
        assert!((w.0.at(0, 0, 4, 4) - 49.0 / 9.0).abs() < 1e-12);
        let w4 = weight_map(&g, WeightRule { lambda: 4.0, kernel: 3 }).unwrap();
        assert!((w4.0.at(0, 0, 4, 4) - 41.0 / 9.0).abs() < 1e-12);
        // a neighbour sees one foreground pixel out of nine
        assert!((w.0.at(0, 0, 3, 4) - (1.0 + 5.0 / 9.0)).abs() < 1e-12);
        assert_eq!(w.0.at(0, 0, 0, 0), 1.0);
    }

    #[test]
    fn non_binary_mask_rejected() {
        let g = Tensor::full(Shape::new(1, 1, 2, 2), 0.5f32);
        assert!(matches!(weight_map(&g, WeightRule::default()), Err(Error::Validation(_))));
    }

    #[test]
    fn zero_logits_bce_is_ln2() {
        let g = mask(4, 4, &[(0, 0), (1, 2)]);
        let w = weight_map(&g, WeightRule { lambda: 5.0, kernel: 3 }).unwrap();
        let z = vec![0.0; 16];
        assert!((bce_forward(&z, g.data(), w.0.data()) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn iou_hand_case() {
        let g = vec![1.0f64; 16];
        let w = vec![1.0f64; 16];
        // p = sigmoid(-800) is exactly zero in f64
        let z = vec![-800.0; 16];
        assert!((iou_forward(&z, &g, &w) - 16.0 / 17.0).abs() < 1e-12);
    }

    #[test]
    fn bce_invariant_under_weight_scaling() {
        let g = [1.0f64, 0.0, 1.0, 0.0];
        let z = [0.3, -1.2, 2.0, 0.7];
        let w = [1.0, 2.0, 3.5, 1.25];
        let w2: Vec<f64> = w.iter().map(|v| v * 4.0).collect();
        assert_eq!(bce_forward(&z, &g, &w), bce_forward(&z, &g, &w2));
    }
}
