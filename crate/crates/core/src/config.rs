//! Run configuration: `key = value` lines, `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::blocks::AttentionConfig;
use crate::losses::WeightRule;
use crate::network::{NetworkConfig, Variant};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub image_size: usize,
    pub backbone_channels: [usize; 5],
    pub rfb_channels: usize,
    pub msca_reduction: usize,
    pub msca_bn: bool,
    pub lr: f64,
    pub epochs: usize,
    pub decay_epoch: usize,
    pub batch_size: usize,
    pub scales: Vec<f64>,
    pub variant: Variant,
    pub weight_lambda: f64,
    pub weight_kernel: usize,
    /// Source text as given, for run logs.
    pub text: String,
}

pub const KEYS: [&str; 14] = [
    "seed",
    "image_size",
    "backbone_channels",
    "rfb_channels",
    "msca_reduction",
    "msca_bn",
    "lr",
    "epochs",
    "decay_epoch",
    "batch_size",
    "scales",
    "variant",
    "weight_lambda",
    "weight_kernel",
];

impl Default for Config {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let rule = WeightRule::default();
        Config {
            seed: 0,
            image_size: 352,
            backbone_channels: net.backbone_channels,
            rfb_channels: net.rfb_channels,
            msca_reduction: net.msca_reduction,
            msca_bn: net.msca_bn,
            lr: 1e-4,
            epochs: 40,
            decay_epoch: 30,
            batch_size: 4,
            scales: vec![0.75, 1.0, 1.25],
            variant: Variant::Full,
            weight_lambda: rule.lambda,
            weight_kernel: rule.kernel,
            text: String::new(),
        }
    }
}

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Value { key: key.into(), value: value.into(), reason: reason.into() }
}

fn num<N: std::str::FromStr>(key: &str, value: &str) -> Result<N, ConfigError> {
    value.parse().map_err(|_| bad(key, value, "not a number"))
}

fn list<N: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<N>, ConfigError> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Config { text: text.to_string(), ..Config::default() };
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: line_no, text: raw.to_string() });
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(&known) = KEYS.iter().find(|&&k| k == key) else {
                return Err(ConfigError::UnknownKey { line: line_no, key: key.to_string() });
            };
            if seen.contains(&known) {
                return Err(ConfigError::Duplicate { line: line_no, key: key.to_string() });
            }
            seen.push(known);
            cfg.set(known, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = num(key, value)?,
            "image_size" => self.image_size = num(key, value)?,
            "backbone_channels" => {
                let v: Vec<usize> = list(key, value)?;
                self.backbone_channels = v.try_into().map_err(|_| bad(key, value, "needs exactly 5 entries"))?;
            }
            "rfb_channels" => self.rfb_channels = num(key, value)?,
            "msca_reduction" => self.msca_reduction = num(key, value)?,
            "msca_bn" => {
                self.msca_bn = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(bad(key, value, "expected true or false")),
                }
            }
            "lr" => self.lr = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "decay_epoch" => self.decay_epoch = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "scales" => self.scales = list(key, value)?,
            "variant" => self.variant = value.parse().map_err(|e: String| bad(key, value, e))?,
            "weight_lambda" => self.weight_lambda = num(key, value)?,
            "weight_kernel" => self.weight_kernel = num(key, value)?,
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let check = |ok: bool, key: &str, value: String, reason: &str| if ok { Ok(()) } else { Err(bad(key, &value, reason)) };
        check(self.image_size >= 32 && self.image_size % 32 == 0, "image_size", self.image_size.to_string(), "must be a positive multiple of 32")?;
        check(self.backbone_channels.iter().all(|&c| c > 0), "backbone_channels", format!("{:?}", self.backbone_channels), "channels must be positive")?;
        check(self.rfb_channels > 0, "rfb_channels", self.rfb_channels.to_string(), "must be positive")?;
        check(self.msca_reduction > 0, "msca_reduction", self.msca_reduction.to_string(), "must be positive")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr", self.lr.to_string(), "must be a positive number")?;
        check(self.epochs > 0, "epochs", self.epochs.to_string(), "must be at least 1")?;
        check(self.batch_size >= 2, "batch_size", self.batch_size.to_string(), "batch norm needs at least 2 samples per batch")?;
        check(
            !self.scales.is_empty() && self.scales.iter().all(|&s| s > 0.0 && s.is_finite()),
            "scales",
            format!("{:?}", self.scales),
            "needs one or more positive factors",
        )?;
        check(self.weight_lambda >= 0.0 && self.weight_lambda.is_finite(), "weight_lambda", self.weight_lambda.to_string(), "must be non-negative")?;
        check(self.weight_kernel % 2 == 1, "weight_kernel", self.weight_kernel.to_string(), "must be odd")?;
        Ok(())
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            backbone_channels: self.backbone_channels,
            rfb_channels: self.rfb_channels,
            msca_reduction: self.msca_reduction,
            msca_bn: self.msca_bn,
            variant: self.variant,
        }
    }

    pub fn attention(&self) -> AttentionConfig {
        self.network().attention()
    }

    pub fn weight_rule(&self) -> WeightRule {
        WeightRule { lambda: self.weight_lambda, kernel: self.weight_kernel }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.lr
        } else {
            self.lr * 0.1
        }
    }

    /// Every key with its effective value, one per line, in key order.
    pub fn canonical(&self) -> String {
        let join = |v: &[String]| v.join(",");
        let mut out = String::new();
        let fields = [
            self.seed.to_string(),
            self.image_size.to_string(),
            join(&self.backbone_channels.map(|c| c.to_string())),
            self.rfb_channels.to_string(),
            self.msca_reduction.to_string(),
            self.msca_bn.to_string(),
            format!("{:?}", self.lr),
            self.epochs.to_string(),
            self.decay_epoch.to_string(),
            self.batch_size.to_string(),
            join(&self.scales.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>()),
            self.variant.to_string(),
            format!("{:?}", self.weight_lambda),
            self.weight_kernel.to_string(),
        ];
        for (k, v) in KEYS.iter().zip(fields) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 of the canonical rendering, hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.canonical().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!(c.image_size, 352);
        assert_eq!(c.rfb_channels, 64);
        assert_eq!(c.scales, vec![0.75, 1.0, 1.25]);
        assert_eq!(c.lr_at(29), 1e-4);
        assert!((c.lr_at(30) - 1e-5).abs() < 1e-20);
        assert!((c.lr_at(31) - 1e-5).abs() < 1e-20);
    }

    #[test]
    fn parses_every_key() {
        let text = "# tiny\nseed = 9\nimage_size=64\nbackbone_channels = 8, 12,16,24,32\nrfb_channels=16\n\
                    msca_reduction = 2\nmsca_bn = false\nlr = 1e-3 # faster\nepochs=3\ndecay_epoch=2\nbatch_size=2\n\
                    scales = 1.0\nvariant = basic+acfm\nweight_lambda = 4\nweight_kernel = 15\n";
        let c = Config::parse(text).unwrap();
        assert_eq!(c.backbone_channels, [8, 12, 16, 24, 32]);
        assert_eq!(c.variant, Variant::BasicAcfm);
        assert!(!c.msca_bn);
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.text, text);
        assert_eq!(Config::parse(&c.canonical()).unwrap().canonical(), c.canonical());
    }

    #[test]
    fn unknown_key_named() {
        let err = Config::parse("seed = 1\nlearning_rate = 3\n").unwrap_err();
        assert!(matches!(&err, ConfigError::UnknownKey { line: 2, key } if key == "learning_rate"));
        assert!(err.to_string().contains("learning_rate"));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::parse("image_size = 60").is_err());
        assert!(Config::parse("batch_size = 1").is_err());
        assert!(Config::parse("backbone_channels = 1,2,3").is_err());
        assert!(Config::parse("variant = huge").is_err());
        assert!(Config::parse("seed 4").is_err());
        assert!(Config::parse("seed = 1\nseed = 2").is_err());
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = Config::parse("seed = 1\n").unwrap();
        let b = Config::parse("# c\nseed=1").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), Config::parse("seed = 2").unwrap().hash());
    }
}
