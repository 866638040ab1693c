//! Orchestration shared by the command-line tool, the examples and the
//! acceptance suite.

use std::path::Path;

use crate::asr::{NgramLm, Vocabulary};
use crate::config::ExperimentConfig;
use crate::corpus::{generate_utterances, Manifest, Split, Utterance};
use crate::error::{IrisError, Result};
use crate::eval::{evaluate_utterances, EvalOutcome, Recognizer, RegimeReport, ReportRow, TrainingSeries};
use crate::params::ParameterStore;
use crate::training::{
    self, assemble_params, average_checkpoints, select_best_checkpoints, Checkpoint, TrainOutcome, TrainRegime,
};

/// Train, dev and test utterances of one corpus.
#[derive(Debug, Clone)]
pub struct CorpusSplits {
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

impl CorpusSplits {
    fn from_all(all: Vec<Utterance>) -> Self {
        let mut s = CorpusSplits {
            train: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
        };
        for u in all {
            match u.split {
                Split::Train => s.train.push(u),
                Split::Dev => s.dev.push(u),
                Split::Test => s.test.push(u),
            }
        }
        s
    }

    /// Synthesizes the corpus of `cfg` in memory.
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self::from_all(generate_utterances(&cfg.corpus, cfg.seed)?))
    }

    pub fn load(manifest: &Manifest) -> Result<Self> {
        let mut all = Vec::new();
        for split in [Split::Train, Split::Dev, Split::Test] {
            all.extend(manifest.load_split(split)?);
        }
        Ok(Self::from_all(all))
    }

    pub fn get(&self, split: Split) -> &[Utterance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

pub fn vocabulary(cfg: &ExperimentConfig) -> Vocabulary {
    Vocabulary::from_chars(cfg.corpus.alphabet.chars())
}

/// Character LM over the training transcripts.
pub fn train_lm(cfg: &ExperimentConfig, vocab: &Vocabulary, train: &[Utterance]) -> NgramLm {
    let mut lm = NgramLm::new(cfg.lm_order, cfg.lm_k, vocab.len());
    for u in train {
        lm.add_sequence(&vocab.encode(&u.text).ids);
    }
    lm
}

/// Mean of the `k` best checkpoints. The result carries the latest epoch
/// and the best validation value of the selection.
pub fn average_best(checkpoints: &[Checkpoint], k: usize) -> Result<Checkpoint> {
    let best = select_best_checkpoints(checkpoints, k.min(checkpoints.len()));
    let first = best
        .first()
        .ok_or_else(|| IrisError::InvalidArgument("no checkpoints to average".into()))?;
    Ok(Checkpoint {
        params: average_checkpoints(&best)?,
        epoch: best.iter().map(|c| c.epoch).max().unwrap_or(0),
        validation: first.validation,
        metric: first.metric,
        fingerprint: first.fingerprint,
    })
}

/// Averaged pre-trained modules and their training logs.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub se: Checkpoint,
    pub asr: Checkpoint,
    pub se_log: TrainOutcome,
    pub asr_log: TrainOutcome,
}

pub fn pretrain(cfg: &ExperimentConfig, data: &CorpusSplits) -> Result<Pretrained> {
    let vocab = vocabulary(cfg);
    let se_log = training::pretrain_se(&data.train, &data.dev, &cfg.model, &cfg.se_train)?;
    let asr_log = training::pretrain_asr(&data.train, &data.dev, &vocab, &cfg.model, &cfg.asr_train)?;
    Ok(Pretrained {
        se: average_best(&se_log.checkpoints, cfg.average_k)?,
        asr: average_best(&asr_log.checkpoints, cfg.average_k)?,
        se_log,
        asr_log,
    })
}

/// Outcome of fine-tuning one regime.
#[derive(Debug, Clone)]
pub struct RegimeRun {
    pub regime: TrainRegime,
    pub outcome: TrainOutcome,
    /// Averaged parameters, ready for decoding.
    pub params: ParameterStore,
}

/// Assembles the regime's starting point from `pre`, fine-tunes it and
/// averages the best checkpoints.
pub fn run_regime(
    cfg: &ExperimentConfig,
    data: &CorpusSplits,
    pre: &Pretrained,
    regime: &TrainRegime,
    epochs: usize,
) -> Result<RegimeRun> {
    let vocab = vocabulary(cfg);
    let start = assemble_params(&cfg.model, regime, Some(&pre.se), Some(&pre.asr), cfg.finetune.seed)?;
    let train_cfg = training::TrainConfig {
        epochs,
        ..cfg.finetune
    };
    let outcome = training::finetune_iris(start, &data.train, &data.dev, &vocab, &cfg.model, regime, &train_cfg)?;
    let mut params = average_best(&outcome.checkpoints, cfg.average_k)?.params;
    cfg.model.restore_frozen(&mut params)?;
    Ok(RegimeRun {
        regime: regime.clone(),
        outcome,
        params,
    })
}

/// Decodes one split with a fine-tuned regime.
pub fn evaluate_regime(
    cfg: &ExperimentConfig,
    run: &RegimeRun,
    utts: &[Utterance],
    lm: &NgramLm,
) -> EvalOutcome {
    let vocab = vocabulary(cfg);
    let rec = Recognizer {
        model: &cfg.model,
        params: &run.params,
        with_se: run.regime.includes_se(),
        decode: &cfg.decode,
        lm: Some(lm),
        vocab: &vocab,
    };
    evaluate_utterances(utts, &rec, cfg.unit)
}

fn report_row(regime: &str, split: &str, seed: u64, out: &EvalOutcome) -> ReportRow {
    ReportRow {
        regime: regime.into(),
        split: split.into(),
        seed,
        wer: out.wer.wer(),
        si_snr_db: out.si_snr_db,
        substitutions: out.wer.substitutions,
        deletions: out.wer.deletions,
        insertions: out.wer.insertions,
        ref_words: out.wer.ref_words,
    }
}

/// All four fine-tuning combinations from one pair of pre-trained modules,
/// scored on the dev and test splits. Hypothesis files are written under
/// `hyp_dir` when given. Per-utterance failures abort the run.
pub fn regime_matrix(
    cfg: &ExperimentConfig,
    data: &CorpusSplits,
    pre: &Pretrained,
    hyp_dir: Option<&Path>,
) -> Result<(RegimeReport, Vec<RegimeRun>)> {
    let lm = train_lm(cfg, &vocabulary(cfg), &data.train);
    let mut report = RegimeReport::default();
    let mut runs = Vec::new();
    for regime in TrainRegime::fine_tune_matrix() {
        let run = run_regime(cfg, data, pre, &regime, cfg.finetune.epochs)?;
        for (split, utts) in [("dev-sim", &data.dev), ("test-sim", &data.test)] {
            let out = evaluate_regime(cfg, &run, utts, &lm);
            if let Some((id, msg)) = out.failures.first() {
                return Err(IrisError::InvalidArgument(format!("decoding `{id}` failed: {msg}")));
            }
            if let Some(dir) = hyp_dir {
                out.write_hypotheses(&dir.join(format!("{}_{split}.txt", regime.name)))?;
            }
            report.rows.push(report_row(&regime.name, split, cfg.seed, &out));
        }
        runs.push(run);
    }
    Ok((report, runs))
}

/// Dev-accuracy curves of the five initialization-study models trained for
/// `epochs` epochs each.
pub fn init_study(
    cfg: &ExperimentConfig,
    data: &CorpusSplits,
    pre: &Pretrained,
    epochs: usize,
) -> Result<Vec<TrainingSeries>> {
    crate::training::INIT_STUDY_MODELS
        .iter()
        .map(|name| {
            let regime = TrainRegime::init_study(name)?;
            let run = run_regime(cfg, data, pre, &regime, epochs)?;
            Ok(TrainingSeries {
                name: name.to_string(),
                records: run.outcome.log,
            })
        })
        .collect()
}
