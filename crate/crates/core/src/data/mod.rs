//! Image samples, dataset directories and multi-scale resizing.

pub mod pnm;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

pub use synth::{synth_sample, SynthParams};

use crate::error::{Error, Result};
use crate::ops::resize::ResizePlan;
use crate::tensor::{Shape, Tensor};
use pnm::PnmImage;

/// RGB image in `[0, 1]` with its binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub id: String,
    /// `(1, 3, h, w)`.
    pub rgb: Tensor<f32>,
    /// `(1, 1, h, w)`, values 0 or 1.
    pub mask: Tensor<f32>,
}

impl ImageSample {
    pub fn size(&self) -> (usize, usize) {
        let s = self.mask.shape();
        (s.h, s.w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// `<root>/images/<id>.ppm`, `<root>/masks/<id>.pgm` and `<root>/manifest.txt`
/// (first line `seed=<u64>`, then one id per line).
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub seed: u64,
    /// Taken from the directory name when it is `train` or `test`.
    pub split: Option<Split>,
    pub ids: Vec<String>,
}

impl DatasetManifest {
    fn split_of(root: &Path) -> Option<Split> {
        match root.file_name()?.to_str()? {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.ppm"))
    }

    pub fn mask_path(&self, id: &str) -> PathBuf {
        self.root.join("masks").join(format!("{id}.pgm"))
    }

    pub fn render(&self) -> String {
        let mut out = format!("seed={}\n", self.seed);
        for id in &self.ids {
            out.push_str(id);
            out.push('\n');
        }
        out
    }

    /// Reads `manifest.txt` and checks that every listed file exists.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join("manifest.txt");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines();
        let seed = lines
            .next()
            .and_then(|l| l.strip_prefix("seed="))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Validation(format!("{}: first line must be seed=<u64>", path.display())))?;
        let ids: Vec<String> = lines.map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        let manifest = DatasetManifest { root: root.to_path_buf(), seed, split: Self::split_of(root), ids };
        let mut missing = Vec::new();
        for id in &manifest.ids {
            for p in [manifest.image_path(id), manifest.mask_path(id)] {
                if !p.is_file() {
                    missing.push(p.display().to_string());
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingFiles(missing));
        }
        if manifest.ids.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(manifest)
    }

    pub fn load_sample(&self, id: &str) -> Result<ImageSample> {
        let img = pnm::read_ppm(&self.image_path(id))?;
        let mask = pnm::read_pgm(&self.mask_path(id))?;
        if (img.width, img.height) != (mask.width, mask.height) {
            return Err(Error::Validation(format!(
                "{id}: image is {}x{} but mask is {}x{}",
                img.width, img.height, mask.width, mask.height
            )));
        }
        Ok(ImageSample { id: id.to_string(), rgb: rgb_tensor(&img), mask: mask_tensor(&mask) })
    }

    pub fn load_all(&self) -> Result<Vec<ImageSample>> {
        self.ids.iter().map(|id| self.load_sample(id)).collect()
    }
}

/// Interleaved 8-bit RGB to a planar `(1, 3, h, w)` tensor.
pub fn rgb_tensor(img: &PnmImage) -> Tensor<f32> {
    let (w, h) = (img.width, img.height);
    Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| img.data[(y * w + x) * 3 + c] as f32 / 255.0)
}

/// Gray image binarized at 0.5.
pub fn mask_tensor(img: &PnmImage) -> Tensor<f32> {
    let data = img.data.iter().map(|&b| if b >= 128 { 1.0 } else { 0.0 }).collect();
    Tensor::from_vec(Shape::new(1, 1, img.height, img.width), data).unwrap()
}

pub fn rgb_image(t: &Tensor<f32>) -> PnmImage {
    let s = t.shape();
    let mut data = Vec::with_capacity(3 * s.plane());
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                data.push(pnm::quantize(t.at(0, c, y, x) as f64));
            }
        }
    }
    PnmImage::rgb(s.w, s.h, data)
}

pub fn gray_image(t: &Tensor<f32>) -> PnmImage {
    let s = t.shape();
    PnmImage::gray(s.w, s.h, t.data()[..s.plane()].iter().map(|&v| pnm::quantize(v as f64)).collect())
}

/// Writes a generated set under `root` and returns its manifest.
pub fn synth_generate(root: &Path, p: &SynthParams) -> Result<DatasetManifest> {
    p.validate()?;
    for dir in [root.join("images"), root.join("masks")] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        seed: p.seed,
        split: DatasetManifest::split_of(root),
        ids: (0..p.count).map(|i| format!("{i:05}")).collect(),
    };
    let results = crate::par::map_indexed(p.count, |i| -> Result<()> {
        let s = synth_sample(p, i);
        pnm::write(&manifest.image_path(&s.id), &rgb_image(&s.rgb))?;
        pnm::write(&manifest.mask_path(&s.id), &gray_image(&s.mask))
    });
    results.into_iter().collect::<Result<()>>()?;
    let path = root.join("manifest.txt");
    fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Nearest multiple of 32 with ties rounded up, at least 32.
pub fn round_to_stride(v: f64) -> usize {
    (((v / 32.0) + 0.5).floor() as usize).max(1) * 32
}

/// Bilinear resize of the image; the mask is resized the same way and
/// re-binarized at 0.5.
pub fn resize_to(s: &ImageSample, h: usize, w: usize) -> ImageSample {
    if s.size() == (h, w) {
        return s.clone();
    }
    let resize = |t: &Tensor<f32>| {
        let plan = ResizePlan::new(t.shape(), h, w);
        Tensor::from_vec(plan.output, plan.forward(t.data())).unwrap()
    };
    ImageSample { id: s.id.clone(), rgb: resize(&s.rgb), mask: resize(&s.mask).map(|v| if v >= 0.5 { 1.0 } else { 0.0 }) }
}

/// Scales both sides by `scale`, rounding each to a multiple of 32.
pub fn resize_sample(s: &ImageSample, scale: f64) -> ImageSample {
    let (h, w) = s.size();
    resize_to(s, round_to_stride(h as f64 * scale), round_to_stride(w as f64 * scale))
}

/// Number of 8-connected foreground components.
pub fn count_components(mask: &[bool], h: usize, w: usize) -> usize {
    let mut seen = vec![false; h * w];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_rounding() {
        assert_eq!(round_to_stride(64.0), 64);
        assert_eq!(round_to_stride(48.0), 64);
        assert_eq!(round_to_stride(47.9), 32);
        assert_eq!(round_to_stride(440.0), 448);
        assert_eq!(round_to_stride(352.0 * 0.75), 256);
        assert_eq!(round_to_stride(3.0), 32);
    }

    #[test]
    fn unit_scale_is_identity() {
        let s = synth_sample(&SynthParams { seed: 1, count: 1, size: 32, contrast: 0.2, max_objects: 2 }, 0);
        assert_eq!(resize_sample(&s, 1.0), s);
    }

    #[test]
    fn components() {
        let m = [true, false, false, false, true, false, false, false, true];
        assert_eq!(count_components(&m, 3, 3), 1);
        let m = [true, false, true, false, false, false, true, false, true];
        assert_eq!(count_components(&m, 3, 3), 4);
        assert_eq!(count_components(&[false; 4], 2, 2), 0);
    }
}
