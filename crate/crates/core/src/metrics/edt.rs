//! Exact Euclidean distance transform.
//!
//! Two 1-D passes over squared distances: a column sweep finds the nearest
//! foreground row in each column, then a row sweep takes the lower envelope
//! of the parabolas `(x - q)^2 + g(q)^2`. All arithmetic is integer, so the
//! result is exact.
//!
//! Ties resolve to the smallest column, then the smallest row.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    pub h: usize,
    pub w: usize,
    pub dist: Vec<f64>,
    /// `(row, col)` of the nearest foreground pixel.
    pub nearest: Vec<(usize, usize)>,
}

/// Intersection abscissa `num / den` of two parabolas; `den == 0` encodes -inf.
#[derive(Clone, Copy, Debug)]
struct Frac {
    num: i64,
    den: i64,
}

impl Frac {
    const NEG_INF: Frac = Frac { num: -1, den: 0 };

    fn le(self, other: Frac) -> bool {
        match (self.den, other.den) {
            (0, 0) => self.num <= other.num,
            (0, _) => self.num < 0,
            (_, 0) => other.num > 0,
            _ => self.num * other.den <= other.num * self.den,
        }
    }

    /// `self < x` for an integer `x`.
    fn lt_int(self, x: i64) -> bool {
        if self.den == 0 {
            return self.num < 0;
        }
        self.num < x * self.den
    }
}

pub fn distance_transform(mask: &[bool], h: usize, w: usize) -> Result<DistanceField> {
    assert_eq!(mask.len(), h * w, "mask length must be h * w");
    if !mask.iter().any(|&m| m) {
        return Err(Error::Validation("distance transform needs at least one foreground pixel".into()));
    }

    // Column pass: nearest foreground row per pixel, preferring the upper one.
    let mut near_row: Vec<Option<usize>> = vec![None; h * w];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if mask[y * w + x] {
                last = Some(y);
            }
            near_row[y * w + x] = last;
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if mask[y * w + x] {
                next = Some(y);
            }
            let above = near_row[y * w + x];
            near_row[y * w + x] = match (above, next) {
                (Some(a), Some(b)) => Some(if y - a <= b - y { a } else { b }),
                (a, b) => a.or(b),
            };
        }
    }

    // Row pass: lower envelope over the columns that have a candidate.
    let mut dist = vec![0.0; h * w];
    let mut nearest = vec![(0, 0); h * w];
    let mut v: Vec<usize> = Vec::with_capacity(w);
    let mut z: Vec<Frac> = Vec::with_capacity(w + 1);
    for y in 0..h {
        let f = |q: usize| -> Option<i64> { near_row[y * w + q].map(|r| (y as i64 - r as i64).pow(2)) };
        v.clear();
        z.clear();
        for q in 0..w {
            let Some(fq) = f(q) else { continue };
            // z[i] is the abscissa from which v[i] is the lowest parabola.
            let start = loop {
                let Some(&top) = v.last() else { break Frac::NEG_INF };
                let ft = f(top).expect("envelope holds candidate columns");
                let s = Frac {
                    num: (fq + (q * q) as i64) - (ft + (top * top) as i64),
                    den: 2 * (q as i64 - top as i64),
                };
                if s.le(*z.last().unwrap()) {
                    v.pop();
                    z.pop();
                } else {
                    break s;
                }
            };
            v.push(q);
            z.push(start);
        }
        let mut k = 0;
        for x in 0..w {
            while k + 1 < v.len() && z[k + 1].lt_int(x as i64) {
                k += 1;
            }
            let q = v[k];
            let r = near_row[y * w + q].unwrap();
            let d2 = (x as i64 - q as i64).pow(2) + (y as i64 - r as i64).pow(2);
            dist[y * w + x] = (d2 as f64).sqrt();
            nearest[y * w + x] = (r, q);
        }
    }
    Ok(DistanceField { h, w, dist, nearest })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_four_five() {
        let mut m = vec![false; 5 * 5];
        m[0] = true;
        let d = distance_transform(&m, 5, 5).unwrap();
        assert_eq!(d.dist[3 * 5 + 4], 5.0);
        assert_eq!(d.nearest[3 * 5 + 4], (0, 0));
    }

    #[test]
    fn foreground_is_zero_and_self() {
        let m = [true, false, true, false, false, true];
        let d = distance_transform(&m, 2, 3).unwrap();
        for (i, &fg) in m.iter().enumerate() {
            if fg {
                assert_eq!(d.dist[i], 0.0);
                assert_eq!(d.nearest[i], (i / 3, i % 3));
            }
        }
    }

    #[test]
    fn empty_mask_rejected() {
        assert!(distance_transform(&[false; 4], 2, 2).is_err());
    }

    #[test]
    fn ties_prefer_smaller_column_then_row() {
        // fg at (0,0), (0,2), (2,0), (2,2); centre (1,1) is equidistant to all four.
        let mut m = vec![false; 9];
        for i in [0, 2, 6, 8] {
            m[i] = true;
        }
        let d = distance_transform(&m, 3, 3).unwrap();
        assert_eq!(d.nearest[4], (0, 0));
        // (1,2) ties between (0,2) and (2,2): same column, upper row wins.
        assert_eq!(d.nearest[5], (0, 2));
    }
}
