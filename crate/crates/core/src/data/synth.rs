//! Procedural low-contrast scenes: a value-noise texture with star-shaped
//! blobs cut from the same texture, shifted slightly in intensity.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

use super::ImageSample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    /// Intensity offset between objects and background, in `(0, 0.5]`.
    pub contrast: f64,
    pub max_objects: usize,
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.size % 32 != 0 {
            return Err(Error::param("gen-data", format!("size {} is not a positive multiple of 32", self.size)));
        }
        if !(self.contrast > 0.0 && self.contrast <= 0.5) {
            return Err(Error::param("gen-data", format!("contrast {} outside (0, 0.5]", self.contrast)));
        }
        if self.max_objects == 0 {
            return Err(Error::param("gen-data", "max_objects must be at least 1"));
        }
        if self.count == 0 {
            return Err(Error::param("gen-data", "count must be at least 1"));
        }
        Ok(())
    }
}

/// Per-pixel noise standard deviation, applied equally inside and outside objects.
const PIXEL_NOISE: f64 = 0.02;

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in `[0, 1]`, several octaves.
fn value_noise(rng: &mut Rng, size: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    let mut amp_total = 0.0;
    for (cells, amp) in [(4usize, 0.6), (8, 0.3), (16, 0.1)] {
        let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.next_f64()).collect();
        let step = size as f64 / cells as f64;
        for y in 0..size {
            let fy = (y as f64 + 0.5) / step;
            let iy = fy.floor() as usize;
            let ty = smoothstep(fy - iy as f64);
            for x in 0..size {
                let fx = (x as f64 + 0.5) / step;
                let ix = fx.floor() as usize;
                let tx = smoothstep(fx - ix as f64);
                let l = |a: usize, b: usize| lattice[a * (cells + 1) + b];
                let top = l(iy, ix) + (l(iy, ix + 1) - l(iy, ix)) * tx;
                let bot = l(iy + 1, ix) + (l(iy + 1, ix + 1) - l(iy + 1, ix)) * tx;
                out[y * size + x] += amp * (top + (bot - top) * ty);
            }
        }
        amp_total += amp;
    }
    out.iter_mut().for_each(|v| *v /= amp_total);
    out
}

struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
    harmonics: [(f64, f64); 3],
}

impl Blob {
    fn random(rng: &mut Rng, size: usize) -> Self {
        let s = size as f64;
        let radius = rng.uniform(0.12, 0.28) * s;
        Blob {
            cy: rng.uniform(0.15, 0.85) * s,
            cx: rng.uniform(0.15, 0.85) * s,
            radius,
            harmonics: [0; 3].map(|_| (rng.uniform(0.0, 0.12), rng.uniform(0.0, std::f64::consts::TAU))),
        }
    }

    fn contains(&self, y: usize, x: usize) -> bool {
        let (dy, dx) = (y as f64 + 0.5 - self.cy, x as f64 + 0.5 - self.cx);
        let theta = dy.atan2(dx);
        let wobble: f64 = self.harmonics.iter().enumerate().map(|(j, &(a, ph))| a * ((j + 2) as f64 * theta + ph).cos()).sum();
        (dy * dy + dx * dx).sqrt() <= self.radius * (1.0 + wobble)
    }
}

/// Image `index` of the set described by `p`; independent of the other images.
pub fn synth_sample(p: &SynthParams, index: usize) -> ImageSample {
    let mut rng = Rng::new(p.seed ^ (index as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    let _ = rng.next_u64();
    let n = p.size;
    let objects = 1 + rng.below(p.max_objects);
    let blobs: Vec<Blob> = (0..objects).map(|_| Blob::random(&mut rng, n)).collect();
    let mask: Vec<bool> = (0..n * n).map(|i| blobs.iter().any(|b| b.contains(i / n, i % n))).collect();

    let sign = if rng.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
    let shift = sign * p.contrast;
    let texture = value_noise(&mut rng, n);
    let tint: [f64; 3] = [0; 3].map(|_| rng.uniform(0.8, 1.2));
    // Keep the shifted texture inside [0, 1] so clamping does not eat the offset.
    let (lo, hi) = (0.5 - (0.5 - p.contrast) * 0.8, 0.5 + (0.5 - p.contrast) * 0.8);
    let mut rgb = vec![0f32; 3 * n * n];
    for c in 0..3 {
        for i in 0..n * n {
            let base = lo + (hi - lo) * (0.5 + (texture[i] - 0.5) * tint[c]).clamp(0.0, 1.0);
            let v = base + if mask[i] { shift } else { 0.0 } + PIXEL_NOISE * rng.normal();
            rgb[c * n * n + i] = quantized(v);
        }
    }
    ImageSample {
        id: format!("{index:05}"),
        rgb: Tensor::from_vec(Shape::new(1, 3, n, n), rgb).unwrap(),
        mask: Tensor::from_vec(Shape::new(1, 1, n, n), mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()).unwrap(),
    }
}

/// Samples round to 8-bit levels so that files reload exactly.
fn quantized(v: f64) -> f32 {
    super::pnm::quantize(v) as f32 / 255.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> SynthParams {
        SynthParams { seed: 3, count: 4, size: 64, contrast: 0.1, max_objects: 3 }
    }

    #[test]
    fn deterministic() {
        assert_eq!(synth_sample(&params(), 2), synth_sample(&params(), 2));
        assert_ne!(synth_sample(&params(), 1).rgb, synth_sample(&params(), 2).rgb);
    }

    #[test]
    fn validation() {
        assert!(SynthParams { size: 60, ..params() }.validate().is_err());
        assert!(SynthParams { contrast: 0.0, ..params() }.validate().is_err());
        assert!(SynthParams { contrast: 0.6, ..params() }.validate().is_err());
        assert!(params().validate().is_ok());
    }

    #[test]
    fn values_are_quantized() {
        let s = synth_sample(&params(), 0);
        assert!(s.rgb.data().iter().all(|&v| ((v * 255.0).round() / 255.0 - v).abs() < 1e-7));
    }
}
