use std::collections::HashMap;

use super::vocab::{SOS, EOS};

/// Character n-gram model with add-k smoothing.
///
/// `p(w | ctx) = (c(ctx, w) + k) / (c(ctx) + k V)` for the longest suffix of
/// the context that was observed at least once; a context never seen falls
/// back to the next shorter one, ending at the unigram. Every level is a
/// proper distribution over the `V` ids, so scores always normalize.
#[derive(Debug, Clone)]
pub struct NgramLm {
    order: usize,
    k: f64,
    vocab: usize,
    counts: HashMap<Vec<usize>, HashMap<usize, f64>>,
    totals: HashMap<Vec<usize>, f64>,
}

impl NgramLm {
    pub fn new(order: usize, k: f64, vocab: usize) -> Self {
        assert!(order >= 1 && k > 0.0 && vocab >= 1);
        Self {
            order,
            k,
            vocab,
            counts: HashMap::new(),
            totals: HashMap::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    /// Counts every n-gram of `tokens` framed by `<sos>` and `<eos>`.
    pub fn add_sequence(&mut self, tokens: &[usize]) {
        let framed: Vec<usize> = std::iter::once(SOS)
            .chain(tokens.iter().copied())
            .chain(std::iter::once(EOS))
            .collect();
        self.add_raw(&framed, 1);
    }

    /// Counts n-grams of `tokens` as given, predicting from position `start`.
    fn add_raw(&mut self, tokens: &[usize], start: usize) {
        for i in start..tokens.len() {
            for n in 0..self.order {
                if n > i {
                    break;
                }
                let ctx = tokens[i - n..i].to_vec();
                *self.counts.entry(ctx.clone()).or_default().entry(tokens[i]).or_default() += 1.0;
                *self.totals.entry(ctx).or_default() += 1.0;
            }
        }
    }

    /// Trains on plain token sequences without framing (e.g. "abab").
    pub fn add_stream(&mut self, tokens: &[usize]) {
        self.add_raw(tokens, 0);
    }

    /// `log p(next | history)`; `history` excludes the implicit `<sos>`.
    pub fn score(&self, history: &[usize], next: usize) -> f64 {
        let framed: Vec<usize> = std::iter::once(SOS).chain(history.iter().copied()).collect();
        self.score_raw(&framed, next)
    }

    /// `log p(next | context)` with the context taken literally.
    pub fn score_raw(&self, context: &[usize], next: usize) -> f64 {
        let max_n = (self.order - 1).min(context.len());
        for n in (0..=max_n).rev() {
            let ctx = &context[context.len() - n..];
            if let Some(&total) = self.totals.get(ctx) {
                let c = self.counts[ctx].get(&next).copied().unwrap_or(0.0);
                return ((c + self.k) / (total + self.k * self.vocab as f64)).ln();
            }
        }
        -(self.vocab as f64).ln()
    }
}
