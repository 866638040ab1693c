//! Flat `key = value` configuration with namespaced keys and overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::asr::DecodeOptions;
use crate::corpus::{CorpusSpec, DEFAULT_ALPHABET};
use crate::enhance::TasNetConfig;
use crate::error::{IrisError, Result};
use crate::eval::Unit;
use crate::features::{FeatureExtractorKind, SpecAugmentPolicy};
use crate::pipeline::ModelConfig;
use crate::training::TrainConfig;

const NAMESPACES: [&str; 7] = ["se", "asr", "feature", "train", "decode", "corpus", "regime"];

/// Raw key/value pairs in key order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn check_key(key: &str) -> Result<()> {
    match key.split_once('.') {
        Some((ns, rest)) if NAMESPACES.contains(&ns) && !rest.is_empty() => Ok(()),
        _ => Err(IrisError::Config(format!(
            "key `{key}` must start with one of {}",
            NAMESPACES.map(|n| format!("{n}.")).join(", ")
        ))),
    }
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| IrisError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| IrisError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        check_key(key)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| IrisError::Config(format!("override `{spec}` is not `key=value`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| IrisError::Config(format!("invalid value `{v}` for `{key}`")))
            })
            .transpose()
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.values.keys()
    }

    /// Canonical text form, one `key = value` per line in key order.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Everything one experiment needs, resolved from a [`Config`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    pub se_train: TrainConfig,
    pub asr_train: TrainConfig,
    pub finetune: TrainConfig,
    /// Checkpoints averaged after each training run.
    pub average_k: usize,
    pub decode: DecodeOptions,
    pub lm_order: usize,
    pub lm_k: f64,
    pub unit: Unit,
}

/// Every key [`ExperimentConfig::from_config`] understands.
pub const KNOWN_KEYS: &[&str] = &[
    "corpus.n_train",
    "corpus.n_dev",
    "corpus.n_test",
    "corpus.alphabet",
    "corpus.text_len_min",
    "corpus.text_len_max",
    "corpus.snr_min",
    "corpus.snr_max",
    "corpus.test_snr_db",
    "corpus.clean_fraction",
    "se.n_filters",
    "se.kernel",
    "se.stride",
    "se.bottleneck",
    "se.conv_channels",
    "se.conv_kernel",
    "se.blocks_per_repeat",
    "se.repeats",
    "feature.kind",
    "feature.seed",
    "asr.encoder_layers",
    "asr.decoder_layers",
    "asr.heads",
    "asr.ffn_dim",
    "asr.model_dim",
    "asr.dropout",
    "asr.ctc_weight",
    "asr.label_smoothing",
    "asr.frontend_channels",
    "train.batch_size",
    "train.warmup_steps",
    "train.grad_clip",
    "train.gamma_se",
    "train.se_epochs",
    "train.se_peak_lr",
    "train.asr_epochs",
    "train.asr_peak_lr",
    "train.ft_epochs",
    "train.ft_peak_lr",
    "train.ft_warmup_steps",
    "train.average_k",
    "train.specaug",
    "train.specaug_time_masks",
    "train.specaug_max_time",
    "train.specaug_freq_masks",
    "train.specaug_max_freq",
    "decode.beam",
    "decode.ctc_weight",
    "decode.lm_weight",
    "decode.max_len",
    "decode.lm_order",
    "decode.lm_k",
    "decode.unit",
    "regime.name",
    "regime.init",
    "regime.update",
    "regime.losses",
];

impl ExperimentConfig {
    /// Desk-scale defaults.
    pub fn toy(seed: u64) -> Self {
        Self::from_config(&Config::new(), seed).expect("defaults are valid")
    }

    pub fn from_config(c: &Config, seed: u64) -> Result<Self> {
        if let Some(k) = c.keys().find(|k| !KNOWN_KEYS.contains(&k.as_str())) {
            return Err(IrisError::Config(format!("unknown key `{k}`")));
        }
        let d = CorpusSpec::default();
        let corpus = CorpusSpec {
            n_train: c.get_or("corpus.n_train", d.n_train)?,
            n_dev: c.get_or("corpus.n_dev", d.n_dev)?,
            n_test: c.get_or("corpus.n_test", d.n_test)?,
            alphabet: c.get_or("corpus.alphabet", DEFAULT_ALPHABET.to_string())?,
            text_len: (
                c.get_or("corpus.text_len_min", d.text_len.0)?,
                c.get_or("corpus.text_len_max", d.text_len.1)?,
            ),
            snr_range: (c.get_or("corpus.snr_min", d.snr_range.0)?, c.get_or("corpus.snr_max", d.snr_range.1)?),
            test_snr_db: c.get_or("corpus.test_snr_db", d.test_snr_db)?,
            clean_fraction: c.get_or("corpus.clean_fraction", d.clean_fraction)?,
        };
        corpus.validate()?;
        let feature = FeatureExtractorKind::parse(
            &c.get_or("feature.kind", "sslr_stub".to_string())?,
            c.get_or("feature.seed", 1234u64)?,
        )?;
        let vocab_size = crate::asr::Vocabulary::from_chars(corpus.alphabet.chars()).len();
        let mut model = ModelConfig::toy(feature, vocab_size);
        let s = TasNetConfig::toy();
        model.se = TasNetConfig {
            n_filters: c.get_or("se.n_filters", s.n_filters)?,
            kernel: c.get_or("se.kernel", s.kernel)?,
            stride: c.get_or("se.stride", s.stride)?,
            bottleneck: c.get_or("se.bottleneck", s.bottleneck)?,
            conv_channels: c.get_or("se.conv_channels", s.conv_channels)?,
            conv_kernel: c.get_or("se.conv_kernel", s.conv_kernel)?,
            blocks_per_repeat: c.get_or("se.blocks_per_repeat", s.blocks_per_repeat)?,
            repeats: c.get_or("se.repeats", s.repeats)?,
        };
        let a = model.asr;
        model.asr.encoder_layers = c.get_or("asr.encoder_layers", a.encoder_layers)?;
        model.asr.decoder_layers = c.get_or("asr.decoder_layers", a.decoder_layers)?;
        model.asr.heads = c.get_or("asr.heads", a.heads)?;
        model.asr.ffn_dim = c.get_or("asr.ffn_dim", a.ffn_dim)?;
        model.asr.model_dim = c.get_or("asr.model_dim", a.model_dim)?;
        model.asr.dropout = c.get_or("asr.dropout", a.dropout)?;
        model.asr.ctc_weight = c.get_or("asr.ctc_weight", a.ctc_weight)?;
        model.asr.label_smoothing = c.get_or("asr.label_smoothing", a.label_smoothing)?;
        model.asr.frontend_channels = c.get_or("asr.frontend_channels", a.frontend_channels)?;
        model.validate()?;

        let p = SpecAugmentPolicy::default();
        let specaug = SpecAugmentPolicy {
            enabled: c.get_or("train.specaug", p.enabled)?,
            num_time_masks: c.get_or("train.specaug_time_masks", p.num_time_masks)?,
            max_time_width: c.get_or("train.specaug_max_time", p.max_time_width)?,
            num_freq_masks: c.get_or("train.specaug_freq_masks", p.num_freq_masks)?,
            max_freq_width: c.get_or("train.specaug_max_freq", p.max_freq_width)?,
        };
        let t = TrainConfig::default();
        let base = TrainConfig {
            batch_size: c.get_or("train.batch_size", t.batch_size)?,
            warmup_steps: c.get_or("train.warmup_steps", t.warmup_steps)?,
            grad_clip: c.get_or("train.grad_clip", t.grad_clip)?,
            gamma_se: c.get_or("train.gamma_se", t.gamma_se)?,
            specaug,
            seed,
            ..t
        };
        let se_train = TrainConfig {
            epochs: c.get_or("train.se_epochs", 20)?,
            peak_lr: c.get_or("train.se_peak_lr", 1e-3)?,
            seed: crate::seed::derive(seed, &[11]),
            ..base
        };
        let asr_train = TrainConfig {
            epochs: c.get_or("train.asr_epochs", 30)?,
            peak_lr: c.get_or("train.asr_peak_lr", 1e-3)?,
            seed: crate::seed::derive(seed, &[12]),
            ..base
        };
        let f = TrainConfig::finetune();
        let finetune = TrainConfig {
            epochs: c.get_or("train.ft_epochs", f.epochs)?,
            peak_lr: c.get_or("train.ft_peak_lr", f.peak_lr)?,
            warmup_steps: c.get_or("train.ft_warmup_steps", base.warmup_steps)?,
            seed: crate::seed::derive(seed, &[13]),
            ..base
        };
        for t in [&se_train, &asr_train, &finetune] {
            t.validate()?;
        }
        let dd = DecodeOptions::default();
        let decode = DecodeOptions {
            beam: c.get_or("decode.beam", dd.beam)?,
            ctc_weight: c.get_or("decode.ctc_weight", dd.ctc_weight)?,
            lm_weight: c.get_or("decode.lm_weight", dd.lm_weight)?,
            max_len: c.get_or("decode.max_len", dd.max_len)?,
        };
        let average_k = c.get_or("train.average_k", 5usize)?;
        if average_k == 0 {
            return Err(IrisError::Config("train.average_k must be at least 1".into()));
        }
        Ok(Self {
            seed,
            corpus,
            model,
            se_train,
            asr_train,
            finetune,
            average_k,
            decode,
            lm_order: c.get_or("decode.lm_order", 3)?,
            lm_k: c.get_or("decode.lm_k", 0.1)?,
            unit: c.get_or("decode.unit", Unit::Char)?,
        })
    }
}
