//! Segmentation scores: MAE, structure measure, enhanced-alignment measure
//! and weighted F-measure.

pub mod edt;
pub mod gaussian;
pub mod report;

pub use edt::{distance_transform, DistanceField};
pub use gaussian::{gaussian_blur, gaussian_kernel};
pub use report::{evaluate_set, MetricReport};

use crate::error::{Error, Result};

/// Grayscale map in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl GrayMap {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Validation(format!("map of {h}x{w} needs {} values, got {}", h * w, data.len())));
        }
        Ok(GrayMap { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        GrayMap { h, w, data }
    }
}

/// A prediction and its binary ground truth of equal size.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationPair {
    pub h: usize,
    pub w: usize,
    pub pred: Vec<f64>,
    pub gt: Vec<bool>,
}

impl SegmentationPair {
    /// `gt` must hold only 0 and 1; `pred` must lie in `[0, 1]`.
    pub fn new(pred: &GrayMap, gt: &GrayMap) -> Result<Self> {
        if (pred.h, pred.w) != (gt.h, gt.w) {
            return Err(Error::Validation(format!(
                "prediction is {}x{} but ground truth is {}x{}",
                pred.h, pred.w, gt.h, gt.w
            )));
        }
        if let Some(v) = pred.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("prediction value {v} outside [0, 1]")));
        }
        if let Some(v) = gt.data.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Validation(format!("ground truth value {v} is not binary")));
        }
        Ok(SegmentationPair { h: gt.h, w: gt.w, pred: pred.data.clone(), gt: gt.data.iter().map(|&v| v == 1.0).collect() })
    }

    fn gt_mean(&self) -> f64 {
        self.gt.iter().filter(|&&g| g).count() as f64 / self.gt.len() as f64
    }
}

/// All scores for one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub mae: f64,
    pub s_alpha: f64,
    pub e_phi_mean: f64,
    pub e_phi_max: f64,
    pub f_w: f64,
    /// Set when the ground truth has no foreground and `f_w` is the 0 convention.
    pub f_w_empty: bool,
}

pub fn score(pair: &SegmentationPair) -> Scores {
    let (e_phi_mean, e_phi_max) = e_measure(pair);
    let wf = weighted_f(pair);
    Scores { mae: mae(pair), s_alpha: s_measure(pair), e_phi_mean, e_phi_max, f_w: wf.value, f_w_empty: wf.empty_gt }
}

pub fn mae(pair: &SegmentationPair) -> f64 {
    let total: f64 = pair.pred.iter().zip(&pair.gt).map(|(&p, &g)| (p - if g { 1.0 } else { 0.0 }).abs()).sum();
    total / pair.pred.len() as f64
}

// ---- structure measure ----

const S_ALPHA: f64 = 0.5;

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn object_score(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (m, sd) = mean_std(values);
    2.0 * m / (m * m + 1.0 + sd)
}

fn s_object(pair: &SegmentationPair, mu: f64) -> f64 {
    let fg = pair.pred.iter().zip(&pair.gt).filter(|(_, &g)| g).map(|(&p, _)| p);
    let bg = pair.pred.iter().zip(&pair.gt).filter(|(_, &g)| !g).map(|(&p, _)| 1.0 - p);
    mu * object_score(fg) + (1.0 - mu) * object_score(bg)
}

/// Split point: rounded foreground centroid (ties to even) plus one.
fn centroid(pair: &SegmentationPair) -> (usize, usize) {
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0usize);
    for (i, _) in pair.gt.iter().enumerate().filter(|(_, &g)| g) {
        sy += (i / pair.w) as f64;
        sx += (i % pair.w) as f64;
        n += 1;
    }
    let y = (sy / n as f64).round_ties_even() as usize + 1;
    let x = (sx / n as f64).round_ties_even() as usize + 1;
    (y.min(pair.h), x.min(pair.w))
}

fn region_ssim(pair: &SegmentationPair, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> f64 {
    let n = rows.len() * cols.len();
    let idx = || rows.clone().flat_map(|y| cols.clone().map(move |x| (y, x)));
    let p = |(y, x): (usize, usize)| pair.pred[y * pair.w + x];
    let g = |(y, x): (usize, usize)| if pair.gt[y * pair.w + x] { 1.0 } else { 0.0 };
    let mx = idx().map(p).sum::<f64>() / n as f64;
    let my = idx().map(g).sum::<f64>() / n as f64;
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for i in idx() {
        let (dx, dy) = (p(i) - mx, g(i) - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (sxx, syy, sxy) = (sxx / denom, syy / denom, sxy / denom);
    let alpha = 4.0 * mx * my * sxy;
    let beta = (mx * mx + my * my) * (sxx + syy);
    if alpha != 0.0 {
        alpha / beta
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pair: &SegmentationPair) -> f64 {
    let (h, w) = (pair.h, pair.w);
    let (cy, cx) = centroid(pair);
    let area = (h * w) as f64;
    let quads = [(0..cy, 0..cx), (0..cy, cx..w), (cy..h, 0..cx), (cy..h, cx..w)];
    quads
        .into_iter()
        .filter(|(r, c)| !r.is_empty() && !c.is_empty())
        .map(|(r, c)| (r.len() * c.len()) as f64 / area * region_ssim(pair, r, c))
        .sum()
}

pub fn s_measure(pair: &SegmentationPair) -> f64 {
    let mu = pair.gt_mean();
    let mean_pred = || pair.pred.iter().sum::<f64>() / pair.pred.len() as f64;
    let s = if mu == 0.0 {
        1.0 - mean_pred()
    } else if mu == 1.0 {
        mean_pred()
    } else {
        S_ALPHA * s_object(pair, mu) + (1.0 - S_ALPHA) * s_region(pair)
    };
    s.clamp(0.0, 1.0)
}

// ---- enhanced-alignment measure ----

pub const E_THRESHOLDS: usize = 256;

/// Index of the largest threshold `k / 255` not exceeding `p`.
fn threshold_bin(p: f64) -> usize {
    let mut k = (p * 255.0).floor().clamp(0.0, 255.0) as usize;
    while k > 0 && (k as f64) / 255.0 > p {
        k -= 1;
    }
    while k < 255 && ((k + 1) as f64) / 255.0 <= p {
        k += 1;
    }
    k
}

/// Score at one threshold from the four pixel counts of the binarized map.
fn e_at(n: f64, mean_gt: f64, tp: f64, fp: f64, fn_: f64, tn: f64) -> f64 {
    let pos = tp + fp;
    if mean_gt == 0.0 {
        return 1.0 - pos / n;
    }
    if mean_gt == 1.0 {
        return pos / n;
    }
    let mean_b = pos / n;
    let enhanced = |b: f64, g: f64| {
        let (pb, pg) = (b - mean_b, g - mean_gt);
        let xi = 2.0 * pb * pg / (pb * pb + pg * pg + f64::EPSILON);
        (xi + 1.0).powi(2) / 4.0
    };
    (tp * enhanced(1.0, 1.0) + fp * enhanced(1.0, 0.0) + fn_ * enhanced(0.0, 1.0) + tn * enhanced(0.0, 0.0)) / n
}

/// Per-threshold scores for `t = k / 255`, `k = 0..=255`.
pub fn e_measure_curve(pair: &SegmentationPair) -> Vec<f64> {
    let mut fg_hist = [0usize; E_THRESHOLDS];
    let mut bg_hist = [0usize; E_THRESHOLDS];
    for (&p, &g) in pair.pred.iter().zip(&pair.gt) {
        let k = threshold_bin(p);
        if g {
            fg_hist[k] += 1;
        } else {
            bg_hist[k] += 1;
        }
    }
    let n = pair.pred.len() as f64;
    let n_fg: usize = fg_hist.iter().sum();
    let n_bg = pair.pred.len() - n_fg;
    let mean_gt = n_fg as f64 / n;
    let mut curve = vec![0.0; E_THRESHOLDS];
    let (mut tp, mut fp) = (0usize, 0usize);
    for k in (0..E_THRESHOLDS).rev() {
        tp += fg_hist[k];
        fp += bg_hist[k];
        curve[k] = e_at(n, mean_gt, tp as f64, fp as f64, (n_fg - tp) as f64, (n_bg - fp) as f64);
    }
    curve
}

/// `(mean, max)` over the 256 thresholds.
pub fn e_measure(pair: &SegmentationPair) -> (f64, f64) {
    let curve = e_measure_curve(pair);
    let mean = curve.iter().sum::<f64>() / curve.len() as f64;
    let max = curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, max)
}

// ---- weighted F-measure ----

pub const WF_KERNEL: usize = 7;
pub const WF_SIGMA: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedF {
    pub value: f64,
    pub empty_gt: bool,
}

pub fn weighted_f(pair: &SegmentationPair) -> WeightedF {
    let (h, w) = (pair.h, pair.w);
    let Ok(field) = distance_transform(&pair.gt, h, w) else {
        return WeightedF { value: 0.0, empty_gt: true };
    };
    let gtf = |i: usize| if pair.gt[i] { 1.0 } else { 0.0 };
    let err: Vec<f64> = (0..h * w).map(|i| (pair.pred[i] - gtf(i)).abs()).collect();
    let spread: Vec<f64> = (0..h * w)
        .map(|i| {
            if pair.gt[i] {
                err[i]
            } else {
                let (r, c) = field.nearest[i];
                err[r * w + c]
            }
        })
        .collect();
    let ea = gaussian_blur(&spread, h, w, WF_KERNEL, WF_SIGMA);
    let decay = 0.5f64.ln() / 5.0;
    let (mut fg_err, mut bg_err, mut n_fg) = (0.0, 0.0, 0usize);
    for i in 0..h * w {
        if pair.gt[i] {
            fg_err += if ea[i] < err[i] { ea[i] } else { err[i] };
            n_fg += 1;
        } else {
            bg_err += err[i] * (2.0 - (decay * field.dist[i]).exp());
        }
    }
    let tp = n_fg as f64 - fg_err;
    let recall = 1.0 - fg_err / n_fg as f64;
    let precision = tp / (tp + bg_err + f64::EPSILON);
    let value = 2.0 * recall * precision / (recall + precision + f64::EPSILON);
    WeightedF { value, empty_gt: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(pred: &[f64], gt: &[f64], h: usize, w: usize) -> SegmentationPair {
        SegmentationPair::new(&GrayMap::new(h, w, pred.to_vec()).unwrap(), &GrayMap::new(h, w, gt.to_vec()).unwrap())
            .unwrap()
    }

    fn square() -> Vec<f64> {
        (0..36).map(|i| if (1..4).contains(&(i / 6)) && (2..5).contains(&(i % 6)) { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn perfect_prediction() {
        let g = square();
        let s = score(&pair(&g, &g, 6, 6));
        assert_eq!(s.mae, 0.0);
        assert!((s.s_alpha - 1.0).abs() < 1e-12);
        assert!((s.e_phi_max - 1.0).abs() < 1e-12);
        assert!((s.f_w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_wrong_mae_is_one() {
        assert_eq!(mae(&pair(&[1.0; 4], &[0.0; 4], 2, 2)), 1.0);
    }

    #[test]
    fn degenerate_ground_truth() {
        let p = pair(&[0.0; 4], &[0.0; 4], 2, 2);
        assert_eq!(s_measure(&p), 1.0);
        // threshold 0 marks every pixel, scoring 0 there
        assert_eq!(e_measure(&p), (255.0 / 256.0, 1.0));
        let p = pair(&[1.0; 4], &[1.0; 4], 2, 2);
        assert_eq!(s_measure(&p), 1.0);
        assert_eq!(e_measure(&p), (1.0, 1.0));
        let p = pair(&[0.25; 4], &[0.0; 4], 2, 2);
        assert_eq!(s_measure(&p), 0.75);
        let wf = weighted_f(&p);
        assert!(wf.empty_gt && wf.value == 0.0);
    }

    #[test]
    fn no_recall_gives_zero_f() {
        // Foreground kept 4 pixels from the border, where the blurred error is exactly the error.
        let g: Vec<f64> = (0..256).map(|i| if (4..12).contains(&(i / 16)) && (4..12).contains(&(i % 16)) { 1.0 } else { 0.0 }).collect();
        assert!(weighted_f(&pair(&[0.0; 256], &g, 16, 16)).value < 1e-9);
    }

    #[test]
    fn threshold_bins_are_exact() {
        for k in 0..=255usize {
            assert_eq!(threshold_bin(k as f64 / 255.0), k);
        }
        assert_eq!(threshold_bin(0.0), 0);
        assert_eq!(threshold_bin(1.0), 255);
        assert_eq!(threshold_bin(1e-9), 0);
    }

    #[test]
    fn first_threshold_sees_an_all_ones_map() {
        let g = square();
        let curve = e_measure_curve(&pair(&g, &g, 6, 6));
        assert!((curve[0] - 0.25).abs() < 1e-12);
        assert!(curve[1..].iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }
}
