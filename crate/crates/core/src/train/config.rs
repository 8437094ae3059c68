//! Run configuration as line-based `key = value` text.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::SplitSpec;
use crate::embed::StopWords;
use crate::error::{EtmaError, Result};
use crate::fsutil;
use crate::model::{AblationVariant, ModelConfig};

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub preset: String,
    pub image_size: (usize, usize, usize),
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: String,
    pub dropout: f64,
    pub loss: String,
    pub seed: u64,
    pub split: SplitSpec,
    pub variant: AblationVariant,
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub visual_layers: usize,
    pub text_layers: usize,
    pub mlp_ratio: usize,
    pub joint_dim: usize,
    pub n_max: usize,
    pub min_freq: usize,
    /// `default` (built-in list), `none`, or a path to a stopword file.
    pub stopwords: String,
    pub augment: bool,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::preset("desk").expect("desk preset exists")
    }
}

pub const PRESETS: [&str; 5] = ["desk", "twitter", "jruvika", "pontes", "risdal"];

impl TrainConfig {
    /// Named starting points: `desk` for the synthetic benchmark, and one
    /// per full-scale dataset (224x224 images, 16x16 patches).
    pub fn preset(name: &str) -> Result<Self> {
        let desk = TrainConfig {
            preset: "desk".into(),
            image_size: (32, 32, 3),
            learning_rate: 0.001,
            batch_size: 32,
            epochs: 200,
            optimizer: "adam".into(),
            dropout: 0.3,
            loss: "cross_entropy".into(),
            seed: 0,
            split: SplitSpec::default(),
            variant: AblationVariant::Full,
            patch: 8,
            dim: 64,
            heads: 4,
            visual_layers: 2,
            text_layers: 2,
            mlp_ratio: 4,
            joint_dim: 64,
            n_max: 32,
            min_freq: 1,
            stopwords: "default".into(),
            augment: false,
            eval_batch_size: 64,
        };
        let full_scale = |lr: f64, batch: usize, epochs: usize, dropout: f64| TrainConfig {
            preset: name.to_string(),
            image_size: (224, 224, 3),
            learning_rate: lr,
            batch_size: batch,
            epochs,
            dropout,
            patch: 16,
            augment: true,
            ..desk.clone()
        };
        match name {
            "desk" => Ok(desk),
            "twitter" => Ok(full_scale(0.001, 128, 120, 0.5)),
            "jruvika" => Ok(full_scale(0.001, 64, 80, 0.3)),
            "pontes" => Ok(full_scale(0.003, 128, 100, 0.5)),
            "risdal" => Ok(full_scale(0.0005, 128, 100, 0.4)),
            other => Err(EtmaError::Config(format!(
                "unknown preset {other:?}; expected one of {}",
                PRESETS.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(EtmaError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return fail("batch sizes must be at least 1".into());
        }
        if self.optimizer != "adam" {
            return fail(format!("optimizer {:?} is not supported; use adam", self.optimizer));
        }
        if self.loss != "cross_entropy" {
            return fail(format!("loss {:?} is not supported; use cross_entropy", self.loss));
        }
        self.split.validate()?;
        self.model_config(crate::embed::RESERVED + 1).validate()
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            image_size: self.image_size,
            patch: self.patch,
            dim: self.dim,
            heads: self.heads,
            visual_layers: self.visual_layers,
            text_layers: self.text_layers,
            mlp_ratio: self.mlp_ratio,
            joint_dim: self.joint_dim,
            vocab_size,
            n_max: self.n_max,
            dropout: self.dropout,
            qkv_bias: true,
        }
    }

    /// Canonical text form: every key, one per line, fixed order.
    pub fn to_text(&self) -> String {
        let (h, w, c) = self.image_size;
        let s = &self.split;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("preset", self.preset.clone());
        kv("image_size", format!("{h}x{w}x{c}"));
        kv("learning_rate", fmt_f64(self.learning_rate));
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("optimizer", self.optimizer.clone());
        kv("dropout", fmt_f64(self.dropout));
        kv("loss", self.loss.clone());
        kv("seed", self.seed.to_string());
        kv(
            "split",
            format!("{},{},{}", fmt_f64(s.train), fmt_f64(s.val), fmt_f64(s.test)),
        );
        kv("split_seed", s.seed.to_string());
        kv("variant", self.variant.label().to_string());
        kv("patch", self.patch.to_string());
        kv("dim", self.dim.to_string());
        kv("heads", self.heads.to_string());
        kv("visual_layers", self.visual_layers.to_string());
        kv("text_layers", self.text_layers.to_string());
        kv("mlp_ratio", self.mlp_ratio.to_string());
        kv("joint_dim", self.joint_dim.to_string());
        kv("n_max", self.n_max.to_string());
        kv("min_freq", self.min_freq.to_string());
        kv("stopwords", self.stopwords.clone());
        kv("augment", self.augment.to_string());
        kv("eval_batch_size", self.eval_batch_size.to_string());
        out
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are
    /// skipped. A `preset` line, if any, must come first and selects the
    /// base values; every other key overrides one field. Unknown keys are
    /// errors.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen_key = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| EtmaError::Parse {
                source_name: source.to_string(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
            if key == "preset" {
                if seen_key {
                    return Err(err("preset must be the first key".into()));
                }
                cfg = TrainConfig::preset(value).map_err(|e| err(e.to_string()))?;
            } else {
                cfg.set(key, value).map_err(err)?;
            }
            seen_key = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fsutil::read_to_string(path)?, &path.display().to_string())
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?} for {key}"))
        }
        match key {
            "image_size" => {
                let parts: Vec<usize> = value
                    .split(['x', '*'])
                    .map(|p| num(key, p.trim()))
                    .collect::<std::result::Result<_, _>>()?;
                match parts[..] {
                    [h, w, c] => self.image_size = (h, w, c),
                    _ => return Err(format!("image_size {value:?} must look like 32x32x3")),
                }
            }
            "learning_rate" => self.learning_rate = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "optimizer" => self.optimizer = value.to_lowercase(),
            "dropout" => self.dropout = num(key, value)?,
            "loss" => self.loss = value.to_lowercase(),
            "seed" => self.seed = num(key, value)?,
            "split" => {
                let f: Vec<f64> = value
                    .split(',')
                    .map(|p| num(key, p.trim()))
                    .collect::<std::result::Result<_, _>>()?;
                match f[..] {
                    [train, val, test] => {
                        self.split.train = train;
                        self.split.val = val;
                        self.split.test = test;
                    }
                    _ => return Err(format!("split {value:?} needs three fractions")),
                }
            }
            "split_seed" => self.split.seed = num(key, value)?,
            "variant" => self.variant = value.parse().map_err(|e: EtmaError| e.to_string())?,
            "patch" => self.patch = num(key, value)?,
            "dim" => self.dim = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "visual_layers" => self.visual_layers = num(key, value)?,
            "text_layers" => self.text_layers = num(key, value)?,
            "mlp_ratio" => self.mlp_ratio = num(key, value)?,
            "joint_dim" => self.joint_dim = num(key, value)?,
            "n_max" => self.n_max = num(key, value)?,
            "min_freq" => self.min_freq = num(key, value)?,
            "stopwords" => self.stopwords = value.to_string(),
            "augment" => self.augment = num(key, value)?,
            "eval_batch_size" => self.eval_batch_size = num(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Resolves the `stopwords` key.
    pub fn stopword_list(&self) -> Result<StopWords> {
        match self.stopwords.as_str() {
            "default" => Ok(StopWords::default()),
            "none" => Ok(StopWords::none()),
            path => StopWords::load(Path::new(path)),
        }
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest decimal that parses back to the same `f64`.
fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_form_round_trips() {
        for name in PRESETS {
            let mut cfg = TrainConfig::preset(name).unwrap();
            cfg.seed = 99;
            cfg.variant = AblationVariant::NoVsAttn;
            let back = TrainConfig::parse(&cfg.to_text(), "mem").unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn full_scale_presets_keep_their_hyperparameters() {
        let t = TrainConfig::preset("twitter").unwrap();
        assert_eq!(
            (t.learning_rate, t.batch_size, t.epochs, t.dropout),
            (0.001, 128, 120, 0.5)
        );
        let j = TrainConfig::preset("jruvika").unwrap();
        assert_eq!(
            (j.learning_rate, j.batch_size, j.epochs, j.dropout),
            (0.001, 64, 80, 0.3)
        );
        let p = TrainConfig::preset("pontes").unwrap();
        assert_eq!(
            (p.learning_rate, p.batch_size, p.epochs, p.dropout),
            (0.003, 128, 100, 0.5)
        );
        let r = TrainConfig::preset("risdal").unwrap();
        assert_eq!(
            (r.learning_rate, r.batch_size, r.epochs, r.dropout),
            (0.0005, 128, 100, 0.4)
        );
        assert_eq!(r.image_size, (224, 224, 3));
        let d = TrainConfig::preset("desk").unwrap();
        assert_eq!((d.learning_rate, d.batch_size, d.dropout), (0.001, 32, 0.3));
        assert!(d.epochs <= 200);
    }

    #[test]
    fn overrides_comments_and_errors() {
        let cfg = TrainConfig::parse("preset = pontes\n# note\nepochs = 3  # short\n\n", "mem").unwrap();
        assert_eq!((cfg.epochs, cfg.learning_rate), (3, 0.003));

        let unknown = TrainConfig::parse("epochs = 3\nlearnin_rate = 0.1\n", "run.cfg");
        match unknown {
            Err(EtmaError::Parse {
                line,
                message,
                source_name,
            }) => {
                assert_eq!((line, source_name.as_str()), (2, "run.cfg"));
                assert!(message.contains("learnin_rate"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            TrainConfig::parse("epochs = 3\npreset = desk\n", "m"),
            Err(EtmaError::Parse { .. })
        ));
        assert!(matches!(
            TrainConfig::parse("learning_rate = 0\n", "m"),
            Err(EtmaError::Config(_))
        ));
        assert!(matches!(
            TrainConfig::parse("batch_size = 0\n", "m"),
            Err(EtmaError::Config(_))
        ));
        assert!(matches!(
            TrainConfig::parse("dropout = 1.0\n", "m"),
            Err(EtmaError::Config(_))
        ));
        assert!(matches!(
            TrainConfig::parse("optimizer = sgd\n", "m"),
            Err(EtmaError::Config(_))
        ));
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        b.joint_dim = 32;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
