//! Label-synchronous beam search with CTC prefix scoring and n-gram fusion.

use std::cmp::Ordering;

use crate::error::{IrisError, Result};
use crate::nn::Forward;
use crate::params::ParameterStore;
use crate::tensor::Tensor;

use super::config::AsrConfig;
use super::ctc::{CtcPrefixScorer, CtcPrefixState};
use super::lm::NgramLm;
use super::model;
use super::vocab::{TokenSequence, BLANK, EOS, SOS};

/// Next-token distribution of an attention decoder.
pub trait AttentionScorer {
    fn vocab_size(&self) -> usize;
    /// Log-probabilities of the token after `prefix` (`prefix` excludes `<sos>`).
    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub beam: usize,
    /// Weight of the CTC prefix score.
    pub ctc_weight: f64,
    pub lm_weight: f64,
    /// Longest hypothesis before `<eos>` is forced.
    pub max_len: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            beam: 10,
            ctc_weight: 0.3,
            lm_weight: 1.0,
            max_len: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: TokenSequence,
    /// `attention + ctc_weight * ctc + lm_weight * lm`.
    pub score: f64,
    pub attention: f64,
    pub ctc: f64,
    pub lm: f64,
    /// `false` when no hypothesis reached `<eos>` within the length limit.
    pub finished: bool,
}

#[derive(Clone)]
struct Live {
    tokens: Vec<usize>,
    attention: f64,
    ctc: f64,
    lm: f64,
    score: f64,
    ctc_state: Option<CtcPrefixState>,
    ended: bool,
}

fn rank(a: &Live, b: &Live) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| a.ended.cmp(&b.ended))
}

impl Live {
    fn into_hypothesis(self, finished: bool) -> Hypothesis {
        Hypothesis {
            tokens: TokenSequence { ids: self.tokens },
            score: self.score,
            attention: self.attention,
            ctc: self.ctc,
            lm: self.lm,
            finished,
        }
    }
}

/// Keeps the `beam` best extensions at every output position. Every
/// component score is a log probability of a growing prefix, so the total
/// never increases along a hypothesis and the search stops as soon as the
/// best finished hypothesis outscores every live one.
pub fn beam_search(
    attention: &mut dyn AttentionScorer,
    ctc: Option<&CtcPrefixScorer>,
    lm: Option<&NgramLm>,
    opts: &DecodeOptions,
) -> Result<Hypothesis> {
    if opts.beam == 0 {
        return Err(IrisError::InvalidArgument("beam must be at least 1".into()));
    }
    if opts.ctc_weight < 0.0 || opts.lm_weight < 0.0 {
        return Err(IrisError::InvalidArgument("decoding weights must be non-negative".into()));
    }
    let vocab = attention.vocab_size();
    let ctc = ctc.filter(|_| opts.ctc_weight > 0.0);
    let lm = lm.filter(|_| opts.lm_weight > 0.0);
    let mut live = vec![Live {
        tokens: Vec::new(),
        attention: 0.0,
        ctc: 0.0,
        lm: 0.0,
        score: 0.0,
        ctc_state: ctc.map(|c| c.initial()),
        ended: false,
    }];
    let mut finished: Vec<Live> = Vec::new();
    for step in 0..=opts.max_len {
        let mut cands: Vec<Live> = Vec::new();
        for h in &live {
            let lp = attention.log_probs(&h.tokens)?;
            if lp.len() != vocab {
                return Err(IrisError::shape(
                    "beam_search",
                    format!("scorer returned {} log-probs for vocabulary {vocab}", lp.len()),
                ));
            }
            for c in 0..vocab {
                if c == BLANK || c == SOS || (step == opts.max_len && c != EOS) {
                    continue;
                }
                let att = h.attention + lp[c];
                let (ctc_score, ctc_state) = match (ctc, &h.ctc_state) {
                    (Some(scorer), Some(state)) if c == EOS => (scorer.final_score(state), None),
                    (Some(scorer), Some(state)) => {
                        let next = scorer.extend(state, c);
                        (next.score, Some(next))
                    }
                    _ => (0.0, None),
                };
                let lm_score = h.lm + lm.map_or(0.0, |m| m.score(&h.tokens, c));
                let score = att + opts.ctc_weight * ctc_score + opts.lm_weight * lm_score;
                if score == f64::NEG_INFINITY || score.is_nan() {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                let ended = c == EOS;
                if !ended {
                    tokens.push(c);
                }
                cands.push(Live {
                    tokens,
                    attention: att,
                    ctc: ctc_score,
                    lm: lm_score,
                    score,
                    ctc_state,
                    ended,
                });
            }
        }
        cands.sort_by(rank);
        cands.truncate(opts.beam);
        live.clear();
        for c in cands {
            if c.ended {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
        finished.sort_by(rank);
        match (finished.first(), live.first()) {
            (_, None) => break,
            (Some(f), Some(l)) if f.score >= l.score => break,
            _ => {}
        }
    }
    if let Some(best) = finished.into_iter().next() {
        return Ok(best.into_hypothesis(true));
    }
    live.into_iter()
        .next()
        .map(|h| h.into_hypothesis(false))
        .ok_or_else(|| IrisError::InvalidArgument("every extension has zero probability".into()))
}

/// Attention scorer backed by the recognizer's decoder.
pub struct DecoderScorer<'a> {
    params: &'a ParameterStore,
    cfg: &'a AsrConfig,
    encoded: Tensor,
}

impl<'a> DecoderScorer<'a> {
    pub fn new(params: &'a ParameterStore, cfg: &'a AsrConfig, encoded: Tensor) -> Self {
        Self {
            params,
            cfg,
            encoded,
        }
    }
}

impl AttentionScorer for DecoderScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut fw = Forward::eval(self.params);
        let enc = fw.g.constant(self.encoded.clone());
        let inputs: Vec<usize> = std::iter::once(SOS).chain(prefix.iter().copied()).collect();
        let logits = model::decoder_graph(&mut fw, enc, &inputs, self.cfg)?;
        let lp = fw.g.log_softmax_rows(logits)?;
        let v = self.cfg.vocab_size;
        let data = fw.g.value(lp).data();
        Ok(data[data.len() - v..].to_vec())
    }
}

/// CTC log-probabilities of an encoder output, `t_enc x vocab`.
pub fn ctc_log_probs(encoder_out: &Tensor, params: &ParameterStore) -> Result<Tensor> {
    let mut fw = Forward::eval(params);
    let enc = fw.g.constant(encoder_out.clone());
    let lp = model::ctc_log_probs_graph(&mut fw, enc)?;
    Ok(fw.g.value(lp).clone())
}

/// Decodes an encoder output; `max_len` is capped at the encoder length.
pub fn beam_search_decode(
    encoder_out: &Tensor,
    params: &ParameterStore,
    cfg: &AsrConfig,
    opts: &DecodeOptions,
    lm: Option<&NgramLm>,
) -> Result<Hypothesis> {
    let (frames, _) = encoder_out.dims2()?;
    let ctc = if opts.ctc_weight > 0.0 {
        Some(CtcPrefixScorer::new(ctc_log_probs(encoder_out, params)?)?)
    } else {
        None
    };
    let mut scorer = DecoderScorer::new(params, cfg, encoder_out.clone());
    let opts = DecodeOptions {
        max_len: opts.max_len.min(frames),
        ..*opts
    };
    beam_search(&mut scorer, ctc.as_ref(), lm, &opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Distribution depends on the prefix length and last token only.
    pub(crate) struct TableScorer {
        vocab: usize,
        table: Vec<f64>,
    }

    impl TableScorer {
        pub(crate) fn random(seed: u64) -> Self {
            let vocab = 7;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut table = Vec::new();
            for _ in 0..(8 * vocab) {
                let logits: Vec<f64> = (0..vocab)
                    .map(|k| if k == EOS || k >= 4 { rng.random::<f64>() * 3.0 } else { f64::NEG_INFINITY })
                    .collect();
                let lse = logits.iter().map(|v| v.exp()).sum::<f64>().ln();
                table.extend(logits.iter().map(|v| v - lse));
            }
            Self { vocab, table }
        }
    }

    impl AttentionScorer for TableScorer {
        fn vocab_size(&self) -> usize {
            self.vocab
        }

        fn log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
            let last = prefix.last().copied().unwrap_or(0);
            let row = (prefix.len() * self.vocab + last) % (self.table.len() / self.vocab);
            Ok(self.table[row * self.vocab..(row + 1) * self.vocab].to_vec())
        }
    }

    fn exhaustive_best(scorer: &mut TableScorer, max_len: usize) -> f64 {
        fn go(s: &mut TableScorer, prefix: &mut Vec<usize>, att: f64, max_len: usize, best: &mut f64) {
            let lp = s.log_probs(prefix).unwrap();
            *best = best.max(att + lp[EOS]);
            if prefix.len() == max_len {
                return;
            }
            for c in 4..7 {
                prefix.push(c);
                go(s, prefix, att + lp[c], max_len, best);
                prefix.pop();
            }
        }
        let mut best = f64::NEG_INFINITY;
        go(scorer, &mut Vec::new(), 0.0, max_len, &mut best);
        best
    }

    fn opts(beam: usize) -> DecodeOptions {
        DecodeOptions {
            beam,
            ctc_weight: 0.0,
            lm_weight: 0.0,
            max_len: 4,
        }
    }

    #[test]
    fn beam_one_is_greedy() {
        for seed in 0..20 {
            let mut s = TableScorer::random(seed);
            let hyp = beam_search(&mut s, None, None, &opts(1)).unwrap();
            let mut prefix = Vec::new();
            let mut att = 0.0;
            loop {
                let lp = s.log_probs(&prefix).unwrap();
                let allowed: Vec<usize> = if prefix.len() == 4 { vec![EOS] } else { (3..7).collect() };
                let c = *allowed.iter().max_by(|a, b| lp[**a].total_cmp(&lp[**b]).then(b.cmp(a))).unwrap();
                att += lp[c];
                if c == EOS {
                    break;
                }
                prefix.push(c);
            }
            assert_eq!(hyp.tokens.ids, prefix, "seed {seed}");
            assert!((hyp.score - att).abs() < 1e-12);
            assert!(hyp.finished);
        }
    }

    #[test]
    fn wider_beams_never_lose_to_greedy_and_full_width_is_exact() {
        for seed in 0..50 {
            let mut s = TableScorer::random(seed);
            let best = exhaustive_best(&mut s, 4);
            let greedy = beam_search(&mut s, None, None, &opts(1)).unwrap().score;
            let four = beam_search(&mut s, None, None, &opts(4)).unwrap().score;
            let full = beam_search(&mut s, None, None, &opts(200)).unwrap().score;
            assert!(four >= greedy - 1e-12, "seed {seed}");
            assert!(four <= best + 1e-12);
            assert!((full - best).abs() < 1e-12, "seed {seed}: {full} vs {best}");
        }
    }

    #[test]
    fn score_is_the_weighted_sum_of_components() {
        let mut s = TableScorer::random(3);
        let lp = Tensor::matrix(6, 7, {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
            let mut d = Vec::new();
            for _ in 0..6 {
                let row: Vec<f64> = (0..7).map(|_| rng.random::<f64>()).collect();
                let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
                d.extend(row.iter().map(|v| v - lse));
            }
            d
        })
        .unwrap();
        let ctc = CtcPrefixScorer::new(lp).unwrap();
        let mut lm = NgramLm::new(2, 0.1, 7);
        lm.add_sequence(&[4, 5, 6]);
        let o = DecodeOptions {
            beam: 3,
            ctc_weight: 0.3,
            lm_weight: 1.0,
            max_len: 4,
        };
        let h = beam_search(&mut s, Some(&ctc), Some(&lm), &o).unwrap();
        assert!((h.score - (h.attention + 0.3 * h.ctc + h.lm)).abs() < 1e-12);
        let no_lm = beam_search(&mut s, Some(&ctc), Some(&lm), &DecodeOptions { lm_weight: 0.0, ..o }).unwrap();
        assert_eq!(no_lm.lm, 0.0);
        assert!((no_lm.score - (no_lm.attention + 0.3 * no_lm.ctc)).abs() < 1e-12);
    }
}
