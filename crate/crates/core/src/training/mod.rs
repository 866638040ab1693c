//! Optimization, module pre-training, regime-driven fine-tuning and
//! checkpoint handling.

mod checkpoint;
mod optim;
mod regime;

pub use checkpoint::{
    average_checkpoints, select_best_checkpoints, Checkpoint, Fingerprint, ValidationMetric,
    FORMAT_VERSION,
};
pub use optim::{adam_step, lr_schedule, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use regime::{LossKind, TrainRegime, INIT_STUDY_MODELS};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::asr::{self, TokenSequence, Vocabulary};
use crate::corpus::{Utterance, UtteranceKind};
use crate::enhance::{self, si_snr, MaskMode};
use crate::error::{IrisError, Result};
use crate::features::SpecAugmentPolicy;
use crate::nn::Forward;
use crate::params::{GradientSet, ParameterStore, Partition};
use crate::pipeline::{self, ModelConfig, PassOptions};
use crate::seed;
use crate::signal::WaveformBuffer;
use crate::tensor::Tensor;

/// Optimization settings of one training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Weight of the enhancement loss during joint fine-tuning.
    pub gamma_se: f64,
    pub specaug: SpecAugmentPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            peak_lr: 1e-3,
            warmup_steps: 100,
            grad_clip: 5.0,
            seed: 0,
            gamma_se: 1.0,
            specaug: SpecAugmentPolicy::default(),
        }
    }
}

impl TrainConfig {
    /// Joint fine-tuning defaults: lower peak rate, ten epochs.
    pub fn finetune() -> Self {
        Self {
            epochs: 10,
            peak_lr: 5e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(IrisError::Config("train.batch_size must be at least 1".into()));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(IrisError::Config("train.peak_lr must be positive".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(IrisError::Config("train.grad_clip must be positive".into()));
        }
        if !(self.gamma_se >= 0.0 && self.gamma_se.is_finite()) {
            return Err(IrisError::Config("train.gamma_se must be non-negative".into()));
        }
        Ok(())
    }
}

/// One row of a training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-utterance training loss over the epoch.
    pub train_loss: f64,
    pub validation: f64,
}

/// Result of a training run: final parameters plus one checkpoint and one
/// log row per epoch. Checkpoints omit the frozen stub weights.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterStore,
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn last(&self) -> Option<&Checkpoint> {
        self.checkpoints.last()
    }
}

/// Batches of indices: sorted by length, cut into consecutive buckets, then
/// shuffled at the batch level with `seed`.
pub fn make_batches(lengths: &[usize], batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    batches.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    batches
}

/// Per-item gradient callback: `(params, item index, item seed)`.
type GradFn<'a> = dyn Fn(&ParameterStore, usize, u64) -> Result<(GradientSet, f64)> + Sync + 'a;

struct Run<'a> {
    regime: &'a TrainRegime,
    cfg: &'a TrainConfig,
    fingerprint: Fingerprint,
    metric: ValidationMetric,
}

impl Run<'_> {
    /// Mini-batch Adam over `lengths.len()` items. Gradients of a batch are
    /// computed in parallel and summed in batch order.
    fn train(
        &self,
        mut params: ParameterStore,
        lengths: &[usize],
        grad: &GradFn,
        validate: &mut dyn FnMut(&ParameterStore) -> Result<f64>,
    ) -> Result<TrainOutcome> {
        self.regime.validate()?;
        self.cfg.validate()?;
        let saved: Vec<(Partition, bool)> = Partition::ALL.iter().map(|&p| (p, params.is_frozen(p))).collect();
        for p in Partition::ALL {
            params.set_frozen(p, p == Partition::Sslr || !self.regime.update.contains(&p));
        }
        let mut state = OptimizerState::new(self.cfg.peak_lr, self.cfg.warmup_steps);
        let mut checkpoints = Vec::new();
        let mut log = Vec::new();
        for epoch in 1..=self.cfg.epochs {
            let batches = make_batches(lengths, self.cfg.batch_size, seed::derive(self.cfg.seed, &[epoch as u64]));
            let mut total_loss = 0.0;
            for batch in &batches {
                let results: Vec<Result<(GradientSet, f64)>> = batch
                    .par_iter()
                    .map(|&i| grad(&params, i, seed::derive(self.cfg.seed, &[epoch as u64, i as u64])))
                    .collect();
                let mut sum = GradientSet::new();
                for r in results {
                    let (g, loss) = r?;
                    if !loss.is_finite() {
                        return Err(IrisError::InvalidArgument(format!(
                            "non-finite training loss at epoch {epoch}"
                        )));
                    }
                    sum.accumulate(&g);
                    total_loss += loss;
                }
                sum.scale(1.0 / batch.len() as f64);
                sum.clip_partition_norms(self.cfg.grad_clip);
                adam_step(&mut params, &sum, &mut state, self.regime)?;
            }
            let validation = validate(&params)?;
            let train_loss = total_loss / lengths.len().max(1) as f64;
            log::info!(
                "{} epoch {epoch}: loss {train_loss:.4}, validation {validation:.4}",
                self.regime.name
            );
            log.push(EpochRecord {
                epoch,
                train_loss,
                validation,
            });
            checkpoints.push(self.checkpoint(&params, epoch, validation));
        }
        if self.cfg.epochs == 0 {
            let validation = validate(&params)?;
            log.push(EpochRecord {
                epoch: 0,
                train_loss: f64::NAN,
                validation,
            });
            checkpoints.push(self.checkpoint(&params, 0, validation));
        }
        for (p, f) in saved {
            params.set_frozen(p, f);
        }
        params.set_frozen(Partition::Sslr, true);
        Ok(TrainOutcome {
            params,
            checkpoints,
            log,
        })
    }

    fn checkpoint(&self, params: &ParameterStore, epoch: usize, validation: f64) -> Checkpoint {
        let mut stored = params.without(Partition::Sslr);
        for p in Partition::ALL {
            stored.set_frozen(p, false);
        }
        Checkpoint {
            params: stored,
            epoch,
            validation,
            metric: self.metric,
            fingerprint: self.fingerprint,
        }
    }
}

fn lengths_of(utts: &[&Utterance]) -> Vec<usize> {
    utts.iter().map(|u| u.noisy.len()).collect()
}

/// Mean SI-SNR (dB) of the enhanced dev mixtures against their references.
pub fn enhancement_validation(params: &ParameterStore, model: &ModelConfig, dev: &[Utterance]) -> Result<f64> {
    let pairs: Vec<(&WaveformBuffer, &WaveformBuffer)> = dev
        .iter()
        .filter_map(|u| u.reference().map(|r| (&u.noisy, r)))
        .collect();
    if pairs.is_empty() {
        return Err(IrisError::InvalidArgument("no dev utterance has a clean reference".into()));
    }
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|(noisy, clean)| {
            let out = enhance::enhance(noisy, params, &model.se)?;
            si_snr(&out.enhanced, clean)
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Trains the enhancement module on the simulated training mixtures with
/// the negative SI-SNR loss. Validation is the mean dev SI-SNR in dB.
pub fn pretrain_se(
    train: &[Utterance],
    dev: &[Utterance],
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let items: Vec<&Utterance> = train.iter().filter(|u| u.kind == UtteranceKind::Simulated).collect();
    if items.is_empty() {
        return Err(IrisError::InvalidArgument(
            "enhancement pre-training needs utterances with clean references".into(),
        ));
    }
    let mut params = ParameterStore::new();
    enhance::init_params(&mut params, &model.se, seed::derive(cfg.seed, &[1]))?;
    let regime = TrainRegime::new("pretrain-se", &[], &[Partition::Se], &[LossKind::Enhancement])?;
    let run = Run {
        regime: &regime,
        cfg,
        fingerprint: model.fingerprint(),
        metric: ValidationMetric::SiSnrDb,
    };
    let grad = |p: &ParameterStore, i: usize, s: u64| -> Result<(GradientSet, f64)> {
        let u = items[i];
        let mut fw = Forward::train(p, s);
        let x = fw.g.constant(enhance::wave_tensor(&u.noisy));
        let e = enhance::enhance_graph(&mut fw, x, &model.se, MaskMode::Estimated)?;
        let snr = enhance::si_snr_graph(&mut fw.g, e.enhanced, u.clean.samples())?;
        let loss = fw.g.neg(snr);
        Ok((fw.gradients(loss)?, fw.g.scalar(loss)))
    };
    let mut validate = |p: &ParameterStore| enhancement_validation(p, model, dev);
    run.train(params, &lengths_of(&items), &grad, &mut validate)
}

/// Fixed recognizer inputs of one utterance: normalized features before
/// augmentation and projection, and the target.
struct Example {
    features: Tensor,
    target: TokenSequence,
}

fn precompute(
    utts: &[&Utterance],
    vocab: &Vocabulary,
    model: &ModelConfig,
    params: &ParameterStore,
    with_se: bool,
) -> Result<Vec<Example>> {
    utts.par_iter()
        .map(|u| {
            let wave = if with_se {
                enhance::enhance(&u.noisy, params, &model.se)?.enhanced
            } else {
                u.noisy.clone()
            };
            let features = pipeline::normalized_features(&wave, model, params)?.to_tensor();
            Ok(Example {
                features,
                target: vocab.encode(&u.text),
            })
        })
        .collect()
}

/// Gradient of the recognition loss for fixed normalized features.
fn example_gradients(
    params: &ParameterStore,
    ex: &Example,
    model: &ModelConfig,
    specaug: &SpecAugmentPolicy,
    item_seed: u64,
) -> Result<(GradientSet, f64)> {
    let mut fw = Forward::train(params, item_seed);
    let x = fw.g.constant(ex.features.clone());
    let opts = PassOptions {
        with_se: false,
        augment: Some((specaug, seed::derive(item_seed, &[7]))),
    };
    let feats = pipeline::model_input_graph(&mut fw, x, opts)?;
    let loss = asr::asr_loss_graph(&mut fw, feats, &ex.target, &model.asr)?;
    Ok((fw.gradients(loss.total)?, fw.g.scalar(loss.total)))
}

/// Teacher-forced next-token accuracy over precomputed examples.
fn accuracy(params: &ParameterStore, model: &ModelConfig, examples: &[Example]) -> Result<f64> {
    let counts: Vec<(usize, usize)> = examples
        .par_iter()
        .map(|ex| {
            let mut fw = Forward::eval(params);
            let x = fw.g.constant(ex.features.clone());
            let opts = PassOptions {
                with_se: false,
                augment: None,
            };
            let feats = pipeline::model_input_graph(&mut fw, x, opts)?;
            let enc = asr::encoder_graph(&mut fw, feats, &model.asr)?;
            let out = asr::attention_loss_graph(&mut fw, enc, &ex.target, &model.asr)?;
            Ok((out.correct, out.positions))
        })
        .collect::<Result<_>>()?;
    let (c, n) = counts.iter().fold((0, 0), |(a, b), (c, n)| (a + c, b + n));
    Ok(if n == 0 { 0.0 } else { c as f64 / n as f64 })
}

/// Teacher-forced dev accuracy of the full pipeline.
pub fn pipeline_accuracy(
    params: &ParameterStore,
    model: &ModelConfig,
    vocab: &Vocabulary,
    dev: &[Utterance],
    with_se: bool,
) -> Result<f64> {
    let refs: Vec<&Utterance> = dev.iter().collect();
    accuracy(params, model, &precompute(&refs, vocab, model, params, with_se)?)
}

fn check_transcripts(utts: &[Utterance]) -> Result<()> {
    match utts.iter().find(|u| u.text.is_empty()) {
        Some(u) => Err(IrisError::InvalidArgument(format!("utterance `{}` has an empty transcript", u.id))),
        None => Ok(()),
    }
}

/// Trains the recognizer (and the feature projection) without enhancement
/// on every training mixture plus the clean references of the simulated
/// ones. The feature extractor stays frozen.
/// Validation is teacher-forced dev accuracy.
pub fn pretrain_asr(
    train: &[Utterance],
    dev: &[Utterance],
    vocab: &Vocabulary,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_transcripts(train)?;
    check_transcripts(dev)?;
    let params = model.init_params(cfg.seed, false)?;
    let regime = TrainRegime::init_study("SSLR-ASR")?;
    let train_refs: Vec<&Utterance> = train.iter().collect();
    let dev_refs: Vec<&Utterance> = dev.iter().collect();
    let mut examples = precompute(&train_refs, vocab, model, &params, false)?;
    let references: Vec<(&WaveformBuffer, &str)> = train
        .iter()
        .filter_map(|u| u.reference().map(|r| (r, u.text.as_str())))
        .collect();
    examples.extend(
        references
            .par_iter()
            .map(|(wave, text)| {
                Ok(Example {
                    features: pipeline::normalized_features(wave, model, &params)?.to_tensor(),
                    target: vocab.encode(text),
                })
            })
            .collect::<Result<Vec<_>>>()?,
    );
    let dev_examples = precompute(&dev_refs, vocab, model, &params, false)?;
    let run = Run {
        regime: &regime,
        cfg,
        fingerprint: model.fingerprint(),
        metric: ValidationMetric::Accuracy,
    };
    let lengths: Vec<usize> = examples.iter().map(|e| e.features.shape()[0]).collect();
    let grad = |p: &ParameterStore, i: usize, s: u64| example_gradients(p, &examples[i], model, &cfg.specaug, s);
    let mut validate = |p: &ParameterStore| accuracy(p, model, &dev_examples);
    run.train(params, &lengths, &grad, &mut validate)
}

/// Parameters of a regime's starting point: partitions in `regime.init`
/// come from the given checkpoints, the rest are freshly initialized from
/// `seed`. The enhancement partition exists iff the regime includes it.
pub fn assemble_params(
    model: &ModelConfig,
    regime: &TrainRegime,
    se: Option<&Checkpoint>,
    asr_ckpt: Option<&Checkpoint>,
    seed: u64,
) -> Result<ParameterStore> {
    regime.validate()?;
    let expected = model.fingerprint();
    let mut params = model.init_params(seed, regime.includes_se())?;
    for (part, ckpt) in [(Partition::Se, se), (Partition::Asr, asr_ckpt)] {
        if !regime.init.contains(&part) || (part == Partition::Se && !regime.includes_se()) {
            continue;
        }
        let ckpt = ckpt.ok_or_else(|| {
            IrisError::Config(format!("regime `{}` initializes `{part}` but no checkpoint was given", regime.name))
        })?;
        if ckpt.fingerprint != expected {
            return Err(IrisError::Fingerprint {
                expected: expected.to_string(),
                found: ckpt.fingerprint.to_string(),
            });
        }
        params.replace_partition(part, &ckpt.params)?;
    }
    model.restore_frozen(&mut params)?;
    Ok(params)
}

/// Gradient and loss value of one utterance under a fine-tuning regime:
/// the joint recognition loss plus `gamma_se` times the negative SI-SNR of
/// the enhanced waveform when the regime names the enhancement loss and the
/// utterance has a clean reference.
#[allow(clippy::too_many_arguments)]
pub fn finetune_gradients(
    params: &ParameterStore,
    model: &ModelConfig,
    utt: &Utterance,
    target: &TokenSequence,
    regime: &TrainRegime,
    gamma_se: f64,
    specaug: &SpecAugmentPolicy,
    item_seed: u64,
) -> Result<(GradientSet, f64)> {
    let mut fw = Forward::train(params, item_seed);
    let opts = PassOptions {
        with_se: regime.includes_se(),
        augment: Some((specaug, seed::derive(item_seed, &[7]))),
    };
    let out = pipeline::utterance_loss_graph(&mut fw, &utt.noisy, utt.reference(), target, model, opts)?;
    let mut total = out.asr.total;
    if regime.losses.contains(&LossKind::Enhancement) {
        if let Some(e) = out.enhancement {
            let weighted = fw.g.scale(e, gamma_se);
            total = fw.g.add(total, weighted)?;
        }
    }
    Ok((fw.gradients(total)?, fw.g.scalar(total)))
}

/// Fine-tunes an assembled pipeline under `regime`. Partitions outside
/// `regime.update` are frozen; an empty update set only evaluates.
pub fn finetune_iris(
    params: ParameterStore,
    train: &[Utterance],
    dev: &[Utterance],
    vocab: &Vocabulary,
    model: &ModelConfig,
    regime: &TrainRegime,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    regime.validate()?;
    check_transcripts(train)?;
    check_transcripts(dev)?;
    let with_se = regime.includes_se();
    if with_se != params.has_partition(Partition::Se) {
        return Err(IrisError::Config(format!(
            "regime `{}` {} an enhancement module but the parameters {} one",
            regime.name,
            if with_se { "needs" } else { "excludes" },
            if with_se { "lack" } else { "hold" },
        )));
    }
    let run = Run {
        regime,
        cfg: &TrainConfig {
            epochs: if regime.update.is_empty() { 0 } else { cfg.epochs },
            ..*cfg
        },
        fingerprint: model.fingerprint(),
        metric: ValidationMetric::Accuracy,
    };
    let dev_refs: Vec<&Utterance> = dev.iter().collect();
    let mut validate = |p: &ParameterStore| -> Result<f64> {
        accuracy(p, model, &precompute(&dev_refs, vocab, model, p, with_se)?)
    };
    let train_refs: Vec<&Utterance> = train.iter().collect();
    let lengths = lengths_of(&train_refs);
    if !regime.update.contains(&Partition::Se) {
        // Enhancement and features are fixed, so they are computed once.
        let examples = precompute(&train_refs, vocab, model, &params, with_se)?;
        let grad = |p: &ParameterStore, i: usize, s: u64| example_gradients(p, &examples[i], model, &cfg.specaug, s);
        return run.train(params, &lengths, &grad, &mut validate);
    }
    let targets: Vec<TokenSequence> = train.iter().map(|u| vocab.encode(&u.text)).collect();
    let grad = |p: &ParameterStore, i: usize, s: u64| {
        finetune_gradients(p, model, &train[i], &targets[i], regime, cfg.gamma_se, &cfg.specaug, s)
    };
    run.train(params, &lengths, &grad, &mut validate)
}
