//! Browser bindings. A `Scene` holds one generated sample; every method
//! returns RGBA bytes for a canvas or plain numbers.

use c2f_core::data::{synth_sample, SynthParams};
use c2f_core::losses::{weight_map, WeightRule};
use c2f_core::metrics::{distance_transform, gaussian_blur, score, DistanceField, GrayMap, SegmentationPair};
use c2f_core::{Rng, Shape, Tensor};
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Scene {
    size: usize,
    /// Three planes of `size * size`.
    rgb: Vec<f32>,
    mask: Vec<bool>,
    field: DistanceField,
}

/// Imperfect prediction derived from the ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Degradation {
    pub blur: f64,
    pub shift: i32,
    pub noise: f64,
    pub seed: u64,
}

fn gray_rgba(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| {
        let b = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        [b, b, b, 255]
    }).collect()
}

/// Dark blue through orange to pale yellow.
fn heat(t: f64) -> [u8; 4] {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 * t).min(1.0)) as u8;
    let g = (255.0 * (1.5 * t - 0.5).clamp(0.0, 1.0)) as u8;
    let b = (255.0 * (0.5 - t).max(0.0) + 255.0 * (3.0 * t - 2.0).max(0.0)) as u8;
    [r, g, b, 255]
}

impl Scene {
    pub fn generate(seed: u64, size: usize, contrast: f64, max_objects: usize) -> Result<Scene, String> {
        let p = SynthParams { seed, count: 1, size, contrast, max_objects };
        p.validate().map_err(|e| e.to_string())?;
        let s = synth_sample(&p, 0);
        let mask: Vec<bool> = s.mask.data().iter().map(|&v| v == 1.0).collect();
        let field = distance_transform(&mask, size, size).map_err(|e| e.to_string())?;
        Ok(Scene { size, rgb: s.rgb.into_vec(), mask, field })
    }

    fn mask_values(&self) -> Vec<f64> {
        self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
    }

    pub fn weights(&self, lambda: f64, kernel: usize) -> Result<Vec<f64>, String> {
        if kernel % 2 == 0 || kernel > 2 * self.size + 1 {
            return Err(format!("kernel {kernel} must be odd and at most {}", 2 * self.size + 1));
        }
        let g = Tensor::from_vec(Shape::new(1, 1, self.size, self.size), self.mask_values()).map_err(|e| e.to_string())?;
        let w = weight_map(&g, WeightRule { lambda, kernel }).map_err(|e| e.to_string())?;
        Ok(w.0.into_vec())
    }

    pub fn degraded(&self, d: Degradation) -> Vec<f64> {
        let n = self.size as i64;
        let mask = self.mask_values();
        let shifted: Vec<f64> = (0..n * n)
            .map(|i| {
                let (y, x) = (i / n, i % n - d.shift as i64);
                if (0..n).contains(&x) { mask[(y * n + x) as usize] } else { 0.0 }
            })
            .collect();
        let blurred = if d.blur > 0.0 {
            let k = 2 * (3.0 * d.blur).ceil() as usize + 1;
            gaussian_blur(&shifted, self.size, self.size, k, d.blur)
        } else {
            shifted
        };
        let mut rng = Rng::new(d.seed);
        blurred.iter().map(|&v| (v + d.noise * rng.normal()).clamp(0.0, 1.0)).collect()
    }

    /// `[mae, s_alpha, e_phi_mean, e_phi_max, f_w]`.
    pub fn scores_of(&self, pred: Vec<f64>) -> Result<Vec<f64>, String> {
        let p = GrayMap::new(self.size, self.size, pred).map_err(|e| e.to_string())?;
        let g = GrayMap::new(self.size, self.size, self.mask_values()).map_err(|e| e.to_string())?;
        let s = score(&SegmentationPair::new(&p, &g).map_err(|e| e.to_string())?);
        Ok(vec![s.mae, s.s_alpha, s.e_phi_mean, s.e_phi_max, s.f_w])
    }
}

#[wasm_bindgen]
impl Scene {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, size: usize, contrast: f64, max_objects: usize) -> Result<Scene, JsError> {
        Scene::generate(seed, size, contrast, max_objects).map_err(|e| JsError::new(&e))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        let plane = self.size * self.size;
        (0..plane)
            .flat_map(|i| {
                let c = |k: usize| (self.rgb[k * plane + i] * 255.0).round() as u8;
                [c(0), c(1), c(2), 255]
            })
            .collect()
    }

    pub fn mask_rgba(&self) -> Vec<u8> {
        gray_rgba(self.mask_values().into_iter())
    }

    /// Loss weights mapped from `[1, 1 + lambda]` onto a heat scale.
    pub fn weight_rgba(&self, lambda: f64, kernel: usize) -> Result<Vec<u8>, JsError> {
        let w = self.weights(lambda, kernel).map_err(|e| JsError::new(&e))?;
        Ok(w.iter().flat_map(|&v| heat((v - 1.0) / lambda.max(1e-12))).collect())
    }

    /// `[min, max]` of the weight map.
    pub fn weight_range(&self, lambda: f64, kernel: usize) -> Result<Vec<f64>, JsError> {
        let w = self.weights(lambda, kernel).map_err(|e| JsError::new(&e))?;
        Ok(vec![w.iter().copied().fold(f64::MAX, f64::min), w.iter().copied().fold(f64::MIN, f64::max)])
    }

    /// Distance to the nearest object pixel, scaled by the largest distance.
    pub fn distance_rgba(&self) -> Vec<u8> {
        let max = self.field.dist.iter().copied().fold(0.0, f64::max).max(1e-12);
        self.field.dist.iter().flat_map(|&d| heat(d / max)).collect()
    }

    /// `[distance, row, col]` of the object pixel nearest to `(row, col)`.
    pub fn nearest(&self, row: usize, col: usize) -> Vec<f64> {
        let i = row.min(self.size - 1) * self.size + col.min(self.size - 1);
        let (r, c) = self.field.nearest[i];
        vec![self.field.dist[i], r as f64, c as f64]
    }

    pub fn degraded_rgba(&self, blur: f64, shift: i32, noise: f64, seed: u64) -> Vec<u8> {
        gray_rgba(self.degraded(Degradation { blur, shift, noise, seed }).into_iter())
    }

    /// Metrics of the degraded prediction: `[mae, s_alpha, e_phi_mean, e_phi_max, f_w]`.
    pub fn scores(&self, blur: f64, shift: i32, noise: f64, seed: u64) -> Result<Vec<f64>, JsError> {
        self.scores_of(self.degraded(Degradation { blur, shift, noise, seed })).map_err(|e| JsError::new(&e))
    }
}
