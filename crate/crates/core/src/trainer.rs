//! Adam, the step learning-rate schedule, the multi-scale training loop,
//! inference and evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::Config;
use crate::data::{pnm, resize_sample, resize_to, round_to_stride, DatasetManifest, ImageSample};
use crate::error::{Error, Result};
use crate::losses::total_loss;
use crate::metrics::{score, GrayMap, MetricReport, SegmentationPair};
use crate::network::NetworkParams;
use crate::nn::{Mode, ParamStore, Session};
use crate::par::map_indexed;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub const OPTIMIZER_NOTE: &str = "optimizer: Adam (beta1 0.9, beta2 0.999, eps 1e-8), standing in for AdaX";

/// Bias-corrected adaptive-moment optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    pub t: u64,
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// One update of every parameter named in `grads`. Nothing is modified
    /// when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &BTreeMap<String, Vec<f32>>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            let p = store.require(name)?;
            if p.data.len() != g.len() {
                return Err(Error::shape("adam", format!("gradient for `{name}` has {} values, parameter {}", g.len(), p.data.len())));
            }
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for (name, g) in grads {
            let p = store.get_mut(name).expect("checked above");
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                let gi = g[i] as f64;
                let mi = BETA1 * m[i] as f64 + (1.0 - BETA1) * gi;
                let vi = BETA2 * v[i] as f64 + (1.0 - BETA2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let update = lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
                p.data[i] = (p.data[i] as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Mean total loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Total loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.c2fn";
pub const LOG_FILE: &str = "loss.log";

fn log_header(cfg: &Config) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config sha256 {}", cfg.hash());
    let _ = writeln!(out, "# {OPTIMIZER_NOTE}");
    let _ = writeln!(out, "# config:");
    for line in cfg.text.lines() {
        let _ = writeln!(out, "#   {line}");
    }
    out
}

fn stack(samples: &[ImageSample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let rgb: Vec<Tensor<f32>> = samples.iter().map(|s| s.rgb.clone()).collect();
    let mask: Vec<Tensor<f32>> = samples.iter().map(|s| s.mask.clone()).collect();
    Ok((Tensor::stack(&rgb)?, Tensor::stack(&mask)?))
}

/// Trains from a fresh initialization; see [`train_from`].
pub fn train(manifest: &DatasetManifest, cfg: &Config, out_dir: &Path) -> Result<TrainOutcome> {
    let params = NetworkParams::init(cfg.network(), cfg.seed);
    train_from(params, manifest, cfg, out_dir).map(|(outcome, _)| outcome)
}

/// Each epoch: seeded shuffle, batches of `batch_size` (a trailing batch
/// smaller than 2 is dropped), one random scale per batch, Adam step.
/// The loss log and the checkpoint are rewritten after every epoch.
pub fn train_from(
    mut params: NetworkParams<f32>,
    manifest: &DatasetManifest,
    cfg: &Config,
    out_dir: &Path,
) -> Result<(TrainOutcome, NetworkParams<f32>)> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let base: Vec<ImageSample> =
        manifest.load_all()?.iter().map(|s| resize_to(s, cfg.image_size, cfg.image_size)).collect();
    if base.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = Rng::new(cfg.seed ^ 0x7472_6169_6e00);
    let mut adam = Adam::new();
    let rule = cfg.weight_rule();
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOG_FILE);
    let mut log = log_header(cfg);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::new();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..base.len()).collect();
        rng.shuffle(&mut order);
        let mut losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let scale = cfg.scales[rng.below(cfg.scales.len())];
            let batch: Vec<ImageSample> = chunk.iter().map(|&i| resize_sample(&base[i], scale)).collect();
            let (images, masks) = stack(&batch)?;
            let (loss, grads) = {
                let mut s = Session::new(&mut params.store, Mode::Train);
                let x = s.input(images);
                let out = params.net.forward(&mut s, x)?;
                let l = total_loss(&mut s.tape, out.logits, &masks, rule)?;
                let value = s.value(l.total).data()[0] as f64;
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("total loss at epoch {} step {}", epoch + 1, step_losses.len() + 1)));
                }
                (value, s.gradients(l.total)?)
            };
            adam.step(&mut params.store, &grads, lr)?;
            losses.push(loss);
            step_losses.push(loss);
        }
        if losses.is_empty() {
            return Err(Error::Validation(format!("no batch of at least 2 images from {} samples", base.len())));
        }
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        epoch_losses.push(mean);
        let _ = writeln!(log, "epoch {} loss {mean:.6}", epoch + 1);
        checkpoint::save(&params.store, &ckpt_path)?;
        fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
    }
    Ok((TrainOutcome { epoch_losses, step_losses, checkpoint: ckpt_path, log: log_path }, params))
}

/// 8-bit prediction for one `(1, 3, h, w)` image at its own resolution. The
/// image is resized to a multiple of 32 first when needed.
pub fn predict_image(params: &mut NetworkParams<f32>, rgb: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = rgb.shape();
    let (h, w) = (round_to_stride(s.h as f64), round_to_stride(s.w as f64));
    let input = if (h, w) == (s.h, s.w) {
        rgb.clone()
    } else {
        let plan = crate::ops::resize::ResizePlan::new(s, h, w);
        Tensor::from_vec(plan.output, plan.forward(rgb.data()))?
    };
    let p = params.predict(&input, s.h, s.w)?;
    if !p.all_finite() {
        return Err(Error::NonFinite("prediction".into()));
    }
    Ok(p.data().iter().map(|&v| pnm::quantize(v as f64)).collect())
}

pub fn load_params(path: &Path) -> Result<NetworkParams<f32>> {
    Ok(NetworkParams::from_store(checkpoint::load(path)?)?)
}

/// Writes `<stem>.pgm` in `out_dir` for every `.ppm` in `images`; returns the
/// written paths in name order.
pub fn infer_dir(params: &NetworkParams<f32>, images: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut inputs: Vec<PathBuf> = fs::read_dir(images)
        .map_err(|e| Error::io(images, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    inputs.sort();
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let results = map_indexed(inputs.len(), |i| -> Result<PathBuf> {
        let mut local = params.clone();
        let img = pnm::read_ppm(&inputs[i])?;
        let pred = predict_image(&mut local, &crate::data::rgb_tensor(&img))?;
        let out = out_dir.join(format!("{}.pgm", inputs[i].file_stem().unwrap().to_string_lossy()));
        pnm::write(&out, &pnm::PnmImage::gray(img.width, img.height, pred))?;
        Ok(out)
    });
    results.into_iter().collect()
}

/// Eval-mode predictions at mask resolution, quantized to 8 bits, scored
/// against the manifest's masks.
pub fn evaluate_params(params: &NetworkParams<f32>, manifest: &DatasetManifest) -> Result<MetricReport> {
    let rows = map_indexed(manifest.ids.len(), |i| -> Result<(String, crate::metrics::Scores)> {
        let id = &manifest.ids[i];
        let sample = manifest.load_sample(id)?;
        let mut local = params.clone();
        let pred = predict_image(&mut local, &sample.rgb)?;
        let (h, w) = sample.size();
        let pred = GrayMap::new(h, w, pred.iter().map(|&b| b as f64 / 255.0).collect())?;
        let gt = GrayMap::new(h, w, sample.mask.data().iter().map(|&v| v as f64).collect())?;
        Ok((format!("{id}.pgm"), score(&SegmentationPair::new(&pred, &gt)?)))
    });
    MetricReport::from_rows(rows.into_iter().collect::<Result<_>>()?)
}

/// Mean eval-mode total loss over the manifest, each image resized to
/// `cfg.image_size` as in training.
pub fn dataset_loss(params: &NetworkParams<f32>, manifest: &DatasetManifest, cfg: &Config) -> Result<f64> {
    let rule = cfg.weight_rule();
    let losses = map_indexed(manifest.ids.len(), |i| -> Result<f64> {
        let sample = resize_to(&manifest.load_sample(&manifest.ids[i])?, cfg.image_size, cfg.image_size);
        let mut store = params.store.clone();
        let mut s = Session::new(&mut store, Mode::Eval);
        let x = s.input(sample.rgb);
        let out = params.net.forward(&mut s, x)?;
        let l = total_loss(&mut s.tape, out.logits, &sample.mask, rule)?;
        Ok(s.value(l.total).data()[0] as f64)
    });
    let losses = losses.into_iter().collect::<Result<Vec<f64>>>()?;
    if losses.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

pub fn evaluate(checkpoint: &Path, manifest: &DatasetManifest) -> Result<MetricReport> {
    evaluate_params(&load_params(checkpoint)?, manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    fn scalar_store(x: f32) -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("x", Param { dims: vec![1], data: vec![x], trainable: true });
        s
    }

    fn grads(g: f32) -> BTreeMap<String, Vec<f32>> {
        BTreeMap::from([("x".to_string(), vec![g])])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(0.7);
        let mut a = Adam::new();
        a.step(&mut s, &grads(0.0), 1e-3).unwrap();
        assert_eq!(s.get("x").unwrap().data[0], 0.7);
        assert_eq!(a.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(1.0);
        Adam::new().step(&mut s, &grads(3.5), 1e-2).unwrap();
        assert!((s.get("x").unwrap().data[0] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn quadratic_decreases_monotonically() {
        let mut s = scalar_store(1.0);
        let mut a = Adam::new();
        let mut prev = 1.0f32;
        for _ in 0..10 {
            let x = s.get("x").unwrap().data[0];
            a.step(&mut s, &grads(2.0 * x), 1e-2).unwrap();
            let f = s.get("x").unwrap().data[0].powi(2);
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn non_finite_gradient_names_param() {
        let mut s = scalar_store(1.0);
        let err = Adam::new().step(&mut s, &grads(f32::NAN), 1e-3).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "x"));
        assert_eq!(s.get("x").unwrap().data[0], 1.0);
    }
}
