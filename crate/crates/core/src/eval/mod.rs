//! Scoring, set evaluation and reports.

mod report;
mod wer;

pub use report::{
    accuracy_plot, emit_report, training_log_csv, Plot, RegimeReport, ReportRow, TrainingSeries,
};
pub use wer::{align, wer, Unit, WerBreakdown};

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::asr::{DecodeOptions, NgramLm, TokenSequence, Vocabulary};
use crate::corpus::{Manifest, Split, Utterance};
use crate::enhance::{self, si_snr};
use crate::error::{IrisError, Result};
use crate::params::ParameterStore;
use crate::pipeline::{self, ModelConfig};

/// A trained pipeline ready to decode.
#[derive(Clone, Copy)]
pub struct Recognizer<'a> {
    pub model: &'a ModelConfig,
    pub params: &'a ParameterStore,
    pub with_se: bool,
    pub decode: &'a DecodeOptions,
    pub lm: Option<&'a NgramLm>,
    pub vocab: &'a Vocabulary,
}

/// Result of decoding one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceResult {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub errors: WerBreakdown,
    /// SI-SNR (dB) of the waveform entering the feature extractor against
    /// the clean reference, for simulated utterances.
    pub si_snr_db: Option<f64>,
}

impl Recognizer<'_> {
    pub fn transcribe(&self, utt: &Utterance, unit: Unit) -> Result<UtteranceResult> {
        let wave = if self.with_se {
            enhance::enhance(&utt.noisy, self.params, &self.model.se)?.enhanced
        } else {
            utt.noisy.clone()
        };
        let si_snr_db = utt.reference().map(|r| si_snr(&wave, r)).transpose()?;
        let ids = pipeline::recognize(&wave, self.model, self.params, false, self.decode, self.lm)?;
        let hypothesis = self.vocab.decode(&TokenSequence { ids });
        Ok(UtteranceResult {
            id: utt.id.clone(),
            errors: wer(&utt.text, &hypothesis, unit)?,
            reference: utt.text.clone(),
            hypothesis,
            si_snr_db,
        })
    }
}

/// Pooled scores of a set plus per-utterance detail.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalOutcome {
    /// Error counts summed over utterances before dividing.
    pub wer: WerBreakdown,
    pub si_snr_db: Option<f64>,
    pub utterances: Vec<UtteranceResult>,
    /// `(id, message)` of utterances that could not be processed.
    pub failures: Vec<(String, String)>,
}

impl EvalOutcome {
    fn from_results(results: Vec<std::result::Result<UtteranceResult, (String, String)>>) -> Self {
        let mut out = EvalOutcome::default();
        for r in results {
            match r {
                Ok(u) => out.utterances.push(u),
                Err(f) => out.failures.push(f),
            }
        }
        out.wer = out.utterances.iter().map(|u| u.errors).sum();
        let snrs: Vec<f64> = out.utterances.iter().filter_map(|u| u.si_snr_db).collect();
        out.si_snr_db = (!snrs.is_empty()).then(|| snrs.iter().sum::<f64>() / snrs.len() as f64);
        out
    }

    /// 0 when every utterance was scored, 2 when some failed.
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }

    /// `id<TAB>hypothesis` lines in set order.
    pub fn hypotheses_text(&self) -> String {
        self.utterances
            .iter()
            .map(|u| format!("{}\t{}\n", u.id, u.hypothesis))
            .collect()
    }

    pub fn write_hypotheses(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| IrisError::io(dir, e))?;
        }
        fs::write(path, self.hypotheses_text()).map_err(|e| IrisError::io(path, e))
    }
}

/// Decodes in-memory utterances in parallel and pools the counts.
pub fn evaluate_utterances(utts: &[Utterance], rec: &Recognizer, unit: Unit) -> EvalOutcome {
    let results = utts
        .par_iter()
        .map(|u| rec.transcribe(u, unit).map_err(|e| (u.id.clone(), e.to_string())))
        .collect();
    EvalOutcome::from_results(results)
}

/// Decodes every record of `split`. Records whose audio cannot be loaded
/// or decoded are listed in `failures` and the rest are still scored.
pub fn evaluate_set(manifest: &Manifest, split: Split, rec: &Recognizer, unit: Unit) -> EvalOutcome {
    let records: Vec<_> = manifest.split(split).collect();
    let results = records
        .par_iter()
        .map(|r| {
            manifest
                .load_record(r)
                .and_then(|u| rec.transcribe(&u, unit))
                .map_err(|e| (r.id.clone(), e.to_string()))
        })
        .collect();
    EvalOutcome::from_results(results)
}
