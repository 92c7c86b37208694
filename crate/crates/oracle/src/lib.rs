//! Slow, direct 64-bit reference computations.
//!
//! Everything here is written as plain nested loops straight from the
//! definitions, with no shared code with the fast kernels. Tests compare the
//! two.

/// Dense `(n, c, h, w)` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Arr {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn new(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * c * h * w);
        Arr { n, c, h, w, data }
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Arr::new(n, c, h, w, vec![0.0; n * c * h * w])
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    pub fn put(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = ((n * self.c + c) * self.h + y) * self.w + x;
        self.data[i] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Arr {
        Arr { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    pub fn zip(&self, other: &Arr, f: impl Fn(f64, f64) -> f64) -> Arr {
        assert_eq!((self.n, self.c, self.h, self.w), (other.n, other.c, other.h, other.w));
        Arr { data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(), ..self.clone() }
    }
}

// ---- tensor primitives ----

/// Zero-padded cross-correlation with padding `dilation * (k - 1) / 2`.
/// `weight` is `(out_c, in_c, kh, kw)`.
pub fn conv2d(x: &Arr, weight: &Arr, bias: Option<&[f64]>, stride: usize, dilation: usize) -> Arr {
    let (kh, kw) = (weight.h, weight.w);
    let ph = (dilation * (kh - 1) / 2) as isize;
    let pw = (dilation * (kw - 1) / 2) as isize;
    let ho = (x.h as isize + 2 * ph - (dilation * (kh - 1)) as isize - 1) / stride as isize + 1;
    let wo = (x.w as isize + 2 * pw - (dilation * (kw - 1)) as isize - 1) / stride as isize + 1;
    let mut out = Arr::zeros(x.n, weight.n, ho as usize, wo as usize);
    for n in 0..x.n {
        for co in 0..weight.n {
            for oy in 0..ho as usize {
                for ox in 0..wo as usize {
                    let mut acc = bias.map_or(0.0, |b| b[co]);
                    for ci in 0..x.c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky * dilation) as isize - ph;
                                let ix = (ox * stride + kx * dilation) as isize - pw;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                    acc += weight.get(co, ci, ky, kx) * x.get(n, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.put(n, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Mean over each window's in-bounds pixels. `k == stride` means
/// non-overlapping blocks; otherwise the window is centred with
/// `(k - 1) / 2` padding.
pub fn avg_pool(x: &Arr, k: usize, stride: usize) -> Arr {
    let pad = if k == stride { 0 } else { (k - 1) / 2 } as isize;
    let ho = (x.h + 2 * pad as usize - k) / stride + 1;
    let wo = (x.w + 2 * pad as usize - k) / stride + 1;
    let mut out = Arr::zeros(x.n, x.c, ho, wo);
    for n in 0..x.n {
        for c in 0..x.c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let (mut sum, mut count) = (0.0, 0usize);
                    for dy in 0..k {
                        for dx in 0..k {
                            let iy = (oy * stride + dy) as isize - pad;
                            let ix = (ox * stride + dx) as isize - pad;
                            if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                sum += x.get(n, c, iy as usize, ix as usize);
                                count += 1;
                            }
                        }
                    }
                    out.put(n, c, oy, ox, sum / count as f64);
                }
            }
        }
    }
    out
}

pub fn global_avg_pool(x: &Arr) -> Arr {
    let mut out = Arr::zeros(x.n, x.c, 1, 1);
    for n in 0..x.n {
        for c in 0..x.c {
            let mut s = 0.0;
            for y in 0..x.h {
                for xx in 0..x.w {
                    s += x.get(n, c, y, xx);
                }
            }
            out.put(n, c, 0, 0, s / (x.h * x.w) as f64);
        }
    }
    out
}

/// Half-pixel-centre bilinear resampling evaluated pixel by pixel.
pub fn bilinear_resize(x: &Arr, out_h: usize, out_w: usize) -> Arr {
    let mut out = Arr::zeros(x.n, x.c, out_h, out_w);
    for n in 0..x.n {
        for c in 0..x.c {
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let sy = ((oy as f64 + 0.5) * x.h as f64 / out_h as f64 - 0.5).max(0.0).min((x.h - 1) as f64);
                    let sx = ((ox as f64 + 0.5) * x.w as f64 / out_w as f64 - 0.5).max(0.0).min((x.w - 1) as f64);
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(x.h - 1), (x0 + 1).min(x.w - 1));
                    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                    let v = (1.0 - fy) * (1.0 - fx) * x.get(n, c, y0, x0)
                        + (1.0 - fy) * fx * x.get(n, c, y0, x1)
                        + fy * (1.0 - fx) * x.get(n, c, y1, x0)
                        + fy * fx * x.get(n, c, y1, x1);
                    out.put(n, c, oy, ox, v);
                }
            }
        }
    }
    out
}

pub fn upsample(x: &Arr, factor: usize) -> Arr {
    bilinear_resize(x, x.h * factor, x.w * factor)
}

/// Inference-time batch norm: `gamma * (x - mean) / sqrt(var + eps) + beta`.
pub fn batch_norm_eval(x: &Arr, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Arr {
    let mut out = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let v = gamma[c] * (x.get(n, c, y, xx) - mean[c]) / (var[c] + eps).sqrt() + beta[c];
                    out.put(n, c, y, xx, v);
                }
            }
        }
    }
    out
}

/// Training-time batch norm with biased batch variance.
pub fn batch_norm_train(x: &Arr, gamma: &[f64], beta: &[f64], eps: f64) -> Arr {
    let m = (x.n * x.h * x.w) as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    for c in 0..x.c {
        for n in 0..x.n {
            for y in 0..x.h {
                for xx in 0..x.w {
                    mean[c] += x.get(n, c, y, xx) / m;
                }
            }
        }
        for n in 0..x.n {
            for y in 0..x.h {
                for xx in 0..x.w {
                    var[c] += (x.get(n, c, y, xx) - mean[c]).powi(2) / m;
                }
            }
        }
    }
    batch_norm_eval(x, gamma, beta, &mean, &var, eps)
}

pub fn relu(x: &Arr) -> Arr {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn sigmoid(x: &Arr) -> Arr {
    x.map(|v| 1.0 / (1.0 + (-v).exp()))
}

pub fn add(a: &Arr, b: &Arr) -> Arr {
    a.zip(b, |x, y| x + y)
}

pub fn mul(a: &Arr, b: &Arr) -> Arr {
    a.zip(b, |x, y| x * y)
}

/// `b` of shape `(n, c, 1, 1)` added to every pixel of `a`.
pub fn add_broadcast(a: &Arr, b: &Arr) -> Arr {
    let mut out = a.clone();
    for n in 0..a.n {
        for c in 0..a.c {
            for y in 0..a.h {
                for x in 0..a.w {
                    out.put(n, c, y, x, a.get(n, c, y, x) + b.get(n, c, 0, 0));
                }
            }
        }
    }
    out
}

pub fn concat(xs: &[&Arr]) -> Arr {
    let c: usize = xs.iter().map(|a| a.c).sum();
    let (n, h, w) = (xs[0].n, xs[0].h, xs[0].w);
    let mut out = Arr::zeros(n, c, h, w);
    for b in 0..n {
        let mut base = 0;
        for a in xs {
            for ch in 0..a.c {
                for y in 0..h {
                    for x in 0..w {
                        out.put(b, base + ch, y, x, a.get(b, ch, y, x));
                    }
                }
            }
            base += a.c;
        }
    }
    out
}

// ---- losses ----

/// Weighted BCE in probability space with `p` clamped to `[1e-12, 1 - 1e-12]`.
pub fn weighted_bce(logits: &[f64], g: &[f64], w: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..logits.len() {
        let p = (1.0 / (1.0 + (-logits[i]).exp())).clamp(1e-12, 1.0 - 1e-12);
        num += w[i] * -(g[i] * p.ln() + (1.0 - g[i]) * (1.0 - p).ln());
        den += w[i];
    }
    num / den
}

pub fn weighted_iou(logits: &[f64], g: &[f64], w: &[f64]) -> f64 {
    let (mut inter, mut union) = (0.0, 0.0);
    for i in 0..logits.len() {
        let p = 1.0 / (1.0 + (-logits[i]).exp());
        inter += w[i] * p * g[i];
        union += w[i] * (p + g[i] - p * g[i]);
    }
    1.0 - (inter + 1.0) / (union + 1.0)
}

/// `1 + lambda * |windowed mean(g) - g|` over an `h x w` mask.
pub fn weight_map(g: &[f64], h: usize, w: usize, lambda: f64, k: usize) -> Vec<f64> {
    let mean = avg_pool(&Arr::new(1, 1, h, w, g.to_vec()), k, 1);
    (0..h * w).map(|i| 1.0 + lambda * (mean.data[i] - g[i]).abs()).collect()
}

// ---- finite differences ----

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, step: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += step;
    let fp = f(&xp);
    xp[i] = x[i] - step;
    let fm = f(&xp);
    (fp - fm) / (2.0 * step)
}

/// `|a - n| / max(|a|, |n|)`, or 0 when both vanish.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

// ---- metrics ----

/// Brute-force nearest foreground pixel: minimum of (squared distance,
/// column, row). Returns `(distance, (row, col))` per pixel.
pub fn distance_transform(mask: &[bool], h: usize, w: usize) -> Vec<(f64, (usize, usize))> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let mut best: Option<(i64, (usize, usize))> = None;
            for c in 0..w {
                for r in 0..h {
                    if !mask[r * w + c] {
                        continue;
                    }
                    let d2 = (r as i64 - y as i64).pow(2) + (c as i64 - x as i64).pow(2);
                    if best.is_none_or(|(b, _)| d2 < b) {
                        best = Some((d2, (r, c)));
                    }
                }
            }
            let (d2, at) = best.expect("mask has a foreground pixel");
            out.push(((d2 as f64).sqrt(), at));
        }
    }
    out
}

/// Direct 2-D correlation with the normalized `k x k` Gaussian, zero padding.
pub fn gaussian_blur(x: &[f64], h: usize, w: usize, k: usize, sigma: f64) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut kern = vec![vec![0.0; k]; k];
    let mut total = 0.0;
    for (dy, row) in kern.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (yy, xx) = (dy as f64 - r as f64, dx as f64 - r as f64);
            *v = (-(yy * yy + xx * xx) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for xo in 0..w as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (iy, ix) = (y + dy, xo + dx);
                    if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                        acc += kern[(dy + r) as usize][(dx + r) as usize] / total * x[iy as usize * w + ix as usize];
                    }
                }
            }
            out[y as usize * w + xo as usize] = acc;
        }
    }
    out
}

pub fn mae(pred: &[f64], gt: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..pred.len() {
        s += (pred[i] - gt[i]).abs();
    }
    s / pred.len() as f64
}

fn ssim_block(pred: &[Vec<f64>], gt: &[Vec<f64>], y0: usize, y1: usize, x0: usize, x1: usize) -> f64 {
    let n = ((y1 - y0) * (x1 - x0)) as f64;
    let (mut sp, mut sg) = (0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            sp += pred[y][x];
            sg += gt[y][x];
        }
    }
    let (mp, mg) = (sp / n, sg / n);
    let (mut vp, mut vg, mut cov) = (0.0, 0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            vp += (pred[y][x] - mp) * (pred[y][x] - mp);
            vg += (gt[y][x] - mg) * (gt[y][x] - mg);
            cov += (pred[y][x] - mp) * (gt[y][x] - mg);
        }
    }
    let d = if n > 1.0 { n - 1.0 } else { 1.0 };
    let (vp, vg, cov) = (vp / d, vg / d, cov / d);
    let num = 4.0 * mp * mg * cov;
    let den = (mp * mp + mg * mg) * (vp + vg);
    if num != 0.0 {
        num / den
    } else if den == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn object_term(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 { (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    2.0 * mean / (mean * mean + 1.0 + sd)
}

/// Structure measure with alpha = 0.5.
pub fn s_measure(pred: &[f64], gt: &[f64], h: usize, w: usize) -> f64 {
    let fg_count = gt.iter().filter(|&&g| g == 1.0).count();
    let mu = fg_count as f64 / (h * w) as f64;
    let mean_pred = pred.iter().sum::<f64>() / pred.len() as f64;
    if fg_count == 0 {
        return (1.0 - mean_pred).clamp(0.0, 1.0);
    }
    if fg_count == h * w {
        return mean_pred.clamp(0.0, 1.0);
    }
    let fg: Vec<f64> = (0..h * w).filter(|&i| gt[i] == 1.0).map(|i| pred[i]).collect();
    let bg: Vec<f64> = (0..h * w).filter(|&i| gt[i] == 0.0).map(|i| 1.0 - pred[i]).collect();
    let s_obj = mu * object_term(&fg) + (1.0 - mu) * object_term(&bg);

    let p2: Vec<Vec<f64>> = (0..h).map(|y| pred[y * w..(y + 1) * w].to_vec()).collect();
    let g2: Vec<Vec<f64>> = (0..h).map(|y| gt[y * w..(y + 1) * w].to_vec()).collect();
    let (mut cy, mut cx) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if g2[y][x] == 1.0 {
                cy += y as f64;
                cx += x as f64;
            }
        }
    }
    let cy = ((cy / fg_count as f64).round_ties_even() as usize + 1).min(h);
    let cx = ((cx / fg_count as f64).round_ties_even() as usize + 1).min(w);
    let area = (h * w) as f64;
    let mut s_reg = 0.0;
    for (y0, y1, x0, x1) in [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)] {
        if y1 > y0 && x1 > x0 {
            s_reg += ((y1 - y0) * (x1 - x0)) as f64 / area * ssim_block(&p2, &g2, y0, y1, x0, x1);
        }
    }
    (0.5 * s_obj + 0.5 * s_reg).clamp(0.0, 1.0)
}

/// Enhanced-alignment score at each threshold `k / 255`, evaluated pixel by pixel.
pub fn e_measure_curve(pred: &[f64], gt: &[f64]) -> Vec<f64> {
    let n = pred.len() as f64;
    let mean_g = gt.iter().sum::<f64>() / n;
    let mut curve = Vec::with_capacity(256);
    for k in 0..256 {
        let t = k as f64 / 255.0;
        let b: Vec<f64> = pred.iter().map(|&p| if p >= t { 1.0 } else { 0.0 }).collect();
        let mean_b = b.iter().sum::<f64>() / n;
        let mut total = 0.0;
        for i in 0..pred.len() {
            total += if mean_g == 0.0 {
                1.0 - b[i]
            } else if mean_g == 1.0 {
                b[i]
            } else {
                let (fb, fg) = (b[i] - mean_b, gt[i] - mean_g);
                let align = 2.0 * fb * fg / (fb * fb + fg * fg + f64::EPSILON);
                (align + 1.0) * (align + 1.0) / 4.0
            };
        }
        curve.push(total / n);
    }
    curve
}

pub fn e_measure(pred: &[f64], gt: &[f64]) -> (f64, f64) {
    let c = e_measure_curve(pred, gt);
    (c.iter().sum::<f64>() / c.len() as f64, c.iter().cloned().fold(f64::MIN, f64::max))
}

/// Weighted F-measure with brute-force nearest-foreground search. `None` for
/// an empty ground truth.
pub fn weighted_f(pred: &[f64], gt: &[f64], h: usize, w: usize) -> Option<f64> {
    let mask: Vec<bool> = gt.iter().map(|&g| g == 1.0).collect();
    if !mask.iter().any(|&m| m) {
        return None;
    }
    let nn = distance_transform(&mask, h, w);
    let e: Vec<f64> = (0..h * w).map(|i| (pred[i] - gt[i]).abs()).collect();
    let mut et = e.clone();
    for i in 0..h * w {
        if !mask[i] {
            let (r, c) = nn[i].1;
            et[i] = e[r * w + c];
        }
    }
    let ea = gaussian_blur(&et, h, w, 7, 5.0);
    let mut ew = vec![0.0; h * w];
    for i in 0..h * w {
        let min_e = if mask[i] && ea[i] < e[i] { ea[i] } else { e[i] };
        let b = if mask[i] { 1.0 } else { 2.0 - ((0.5f64).ln() / 5.0 * nn[i].0).exp() };
        ew[i] = min_e * b;
    }
    let (mut fg_sum, mut fg_n, mut bg_sum) = (0.0, 0.0, 0.0);
    for i in 0..h * w {
        if mask[i] {
            fg_sum += ew[i];
            fg_n += 1.0;
        } else {
            bg_sum += ew[i];
        }
    }
    let tp = fg_n - fg_sum;
    let r = 1.0 - fg_sum / fg_n;
    let p = tp / (tp + bg_sum + f64::EPSILON);
    Some(2.0 * r * p / (r + p + f64::EPSILON))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let x = Arr::new(1, 1, 3, 3, (1..=9).map(f64::from).collect());
        let mut k = Arr::zeros(1, 1, 3, 3);
        k.put(0, 0, 1, 1, 1.0);
        assert_eq!(conv2d(&x, &k, None, 1, 1), x);
    }

    #[test]
    fn interpolation_corners() {
        let x = Arr::new(1, 1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        let y = upsample(&x, 2);
        assert_eq!(y.get(0, 0, 0, 0), 0.0);
        assert_eq!(y.get(0, 0, 3, 3), 3.0);
        assert_eq!(y.get(0, 0, 0, 1), 0.25);
    }

    #[test]
    fn brute_distance() {
        let mut m = vec![false; 25];
        m[0] = true;
        assert_eq!(distance_transform(&m, 5, 5)[3 * 5 + 4], (5.0, (0, 0)));
    }
}
