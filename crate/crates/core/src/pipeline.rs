//! End-to-end composition: enhancement, feature extraction, normalization,
//! projection and recognition.

use crate::asr::{self, AsrConfig, DecodeOptions, NgramLm, TokenSequence};
use crate::autodiff::Var;
use crate::enhance::{self, si_snr_graph, MaskMode, TasNetConfig};
use crate::error::{IrisError, Result};
use crate::features::{self, FeatureExtractorKind, SpecAugmentPolicy};
use crate::nn::Forward;
use crate::params::{ParameterStore, Partition};
use crate::signal::{FeatureMatrix, WaveformBuffer};
use crate::tensor::Tensor;
use crate::training::Fingerprint;

/// Architecture of the whole model. Every checkpoint of a run carries the
/// fingerprint of this description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub se: TasNetConfig,
    pub feature: FeatureExtractorKind,
    pub asr: AsrConfig,
}

impl ModelConfig {
    /// Desk-scale model on the stub feature extractor.
    pub fn toy(feature: FeatureExtractorKind, vocab_size: usize) -> Self {
        let mut asr = AsrConfig::toy();
        asr.vocab_size = vocab_size;
        asr.input_dim = feature.model_input_dim();
        asr.input_shift_ms = (feature.frame_shift() * 1000.0).round() as usize;
        Self {
            se: TasNetConfig::toy(),
            feature,
            asr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.se.validate()?;
        self.asr.validate()?;
        if self.asr.input_dim != self.feature.model_input_dim() {
            return Err(IrisError::Config(format!(
                "asr.input_dim is {} but {} features enter the recognizer with width {}",
                self.asr.input_dim,
                self.feature,
                self.feature.model_input_dim()
            )));
        }
        let shift = (self.feature.frame_shift() * 1000.0).round() as usize;
        if self.asr.input_shift_ms != shift {
            return Err(IrisError::Config(format!(
                "asr.input_shift_ms is {} but {} features have a {shift} ms shift",
                self.asr.input_shift_ms, self.feature
            )));
        }
        Ok(())
    }

    /// Canonical text the fingerprint is computed from.
    pub fn describe(&self) -> String {
        let feature_seed = match self.feature {
            FeatureExtractorKind::Fbank => 0,
            FeatureExtractorKind::SslrStub { seed } => seed,
        };
        format!(
            "se={:?};feature={}:{feature_seed};asr={:?}",
            self.se, self.feature, self.asr
        )
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(&self.describe())
    }

    /// Fresh parameters of every partition. The enhancement partition is
    /// created only when `with_se` is set.
    pub fn init_params(&self, seed: u64, with_se: bool) -> Result<ParameterStore> {
        self.validate()?;
        let mut store = ParameterStore::new();
        if with_se {
            enhance::init_params(&mut store, &self.se, crate::seed::derive(seed, &[1]))?;
        }
        if let FeatureExtractorKind::SslrStub { seed: fs } = self.feature {
            features::init_sslr_params(&mut store, fs)?;
            features::init_projection(&mut store, crate::seed::derive(seed, &[2]))?;
        }
        asr::init_params(&mut store, &self.asr, crate::seed::derive(seed, &[3]))?;
        Ok(store)
    }

    /// Adds the frozen stub weights, which checkpoints do not store.
    pub fn restore_frozen(&self, store: &mut ParameterStore) -> Result<()> {
        if let FeatureExtractorKind::SslrStub { seed } = self.feature {
            if !store.has_partition(Partition::Sslr) {
                features::init_sslr_params(store, seed)?;
            }
        }
        store.set_frozen(Partition::Sslr, true);
        Ok(())
    }
}

/// Per-utterance switches of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct PassOptions<'a> {
    /// Route the waveform through the enhancement module first.
    pub with_se: bool,
    /// SpecAugment policy and seed; `None` disables augmentation.
    pub augment: Option<(&'a SpecAugmentPolicy, u64)>,
}

/// Model-input features of a waveform node: optional enhancement, raw
/// features, normalization (filterbank only), augmentation and projection.
/// Returns `(enhanced waveform node, features node)`.
pub fn front_end_graph(
    fw: &mut Forward,
    wave: Var,
    model: &ModelConfig,
    opts: PassOptions,
) -> Result<(Option<Var>, Var)> {
    let enhanced = if opts.with_se {
        Some(enhance::enhance_graph(fw, wave, &model.se, MaskMode::Estimated)?.enhanced)
    } else {
        None
    };
    let raw = features::features_graph(fw, enhanced.unwrap_or(wave), model.feature)?;
    let normalized = match model.feature {
        FeatureExtractorKind::Fbank => features::normalize_graph(fw, raw)?,
        FeatureExtractorKind::SslrStub { .. } => raw,
    };
    Ok((enhanced, model_input_graph(fw, normalized, opts)?))
}

/// Augmentation and projection of already normalized features.
pub fn model_input_graph(fw: &mut Forward, normalized: Var, opts: PassOptions) -> Result<Var> {
    let augmented = match opts.augment {
        Some((policy, seed)) => features::spec_augment_graph(fw, normalized, policy, seed)?,
        None => normalized,
    };
    features::project_graph(fw, augmented)
}

/// Normalized raw features of a waveform without enhancement, as consumed by
/// [`model_input_graph`].
pub fn normalized_features(
    wave: &WaveformBuffer,
    model: &ModelConfig,
    params: &ParameterStore,
) -> Result<FeatureMatrix> {
    let mut fw = Forward::eval(params);
    let x = fw.g.constant(enhance::wave_tensor(wave));
    let raw = features::features_graph(&mut fw, x, model.feature)?;
    let y = match model.feature {
        FeatureExtractorKind::Fbank => features::normalize_graph(&mut fw, raw)?,
        FeatureExtractorKind::SslrStub { .. } => raw,
    };
    FeatureMatrix::from_tensor(fw.g.value(y), model.feature.frame_shift())
}

/// Loss nodes of one utterance through the full composition.
#[derive(Debug, Clone, Copy)]
pub struct UtteranceLoss {
    pub asr: asr::AsrLossVars,
    /// Negative SI-SNR in dB of the enhanced waveform, when enhancement ran
    /// and a clean reference was given.
    pub enhancement: Option<Var>,
}

pub fn utterance_loss_graph(
    fw: &mut Forward,
    noisy: &WaveformBuffer,
    clean: Option<&WaveformBuffer>,
    target: &TokenSequence,
    model: &ModelConfig,
    opts: PassOptions,
) -> Result<UtteranceLoss> {
    let wave = fw.g.constant(enhance::wave_tensor(noisy));
    let (enhanced, feats) = front_end_graph(fw, wave, model, opts)?;
    let asr = asr::asr_loss_graph(fw, feats, target, &model.asr)?;
    let enhancement = match (enhanced, clean) {
        (Some(e), Some(c)) => {
            let s = si_snr_graph(&mut fw.g, e, c.samples())?;
            Some(fw.g.neg(s))
        }
        _ => None,
    };
    Ok(UtteranceLoss { asr, enhancement })
}

/// Model-input features of one waveform in evaluation mode.
pub fn model_features(
    wave: &WaveformBuffer,
    model: &ModelConfig,
    params: &ParameterStore,
    with_se: bool,
) -> Result<Tensor> {
    let mut fw = Forward::eval(params);
    let x = fw.g.constant(enhance::wave_tensor(wave));
    let opts = PassOptions {
        with_se,
        augment: None,
    };
    let (_, y) = front_end_graph(&mut fw, x, model, opts)?;
    Ok(fw.g.value(y).clone())
}

/// Recognized token ids of one waveform.
pub fn recognize(
    wave: &WaveformBuffer,
    model: &ModelConfig,
    params: &ParameterStore,
    with_se: bool,
    decode: &DecodeOptions,
    lm: Option<&NgramLm>,
) -> Result<Vec<usize>> {
    let feats = model_features(wave, model, params, with_se)?;
    let fm = FeatureMatrix::from_tensor(&feats, model.feature.frame_shift())?;
    let enc = asr::encode(&fm, params, &model.asr)?;
    let best = asr::beam_search_decode(&enc, params, &model.asr, decode, lm)?;
    Ok(best.tokens.ids)
}

/// Teacher-forced `(correct, positions)` of one utterance in evaluation mode.
pub fn teacher_forced_counts(
    features: &Tensor,
    target: &TokenSequence,
    model: &ModelConfig,
    params: &ParameterStore,
) -> Result<(usize, usize)> {
    let mut fw = Forward::eval(params);
    let x = fw.g.constant(features.clone());
    let enc = asr::encoder_graph(&mut fw, x, &model.asr)?;
    let out = asr::attention_loss_graph(&mut fw, enc, target, &model.asr)?;
    Ok((out.correct, out.positions))
}
