//! Connectionist temporal classification: the training loss and the prefix
//! scorer used during beam search. Everything runs in the log domain with
//! blank id 0.

use crate::autodiff::{Graph, Var};
use crate::error::{IrisError, Result};
use crate::tensor::Tensor;

use super::vocab::BLANK;

const NEG_INF: f64 = f64::NEG_INFINITY;

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == NEG_INF {
        return b;
    }
    if b == NEG_INF {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Frames needed to emit `target`: one per label plus a blank between
/// each pair of repeated labels.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// `-log p(target | log_probs)` and its gradient with respect to the
/// `frames x vocab` log-probabilities.
pub fn ctc_loss_and_grad(log_probs: &Tensor, target: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (frames, vocab) = log_probs.dims2()?;
    if let Some(&bad) = target.iter().find(|&&id| id == BLANK || id >= vocab) {
        return Err(IrisError::InvalidArgument(format!(
            "CTC target id {bad} must be a non-blank id below {vocab}"
        )));
    }
    let required = min_frames(target);
    if frames < required {
        return Err(IrisError::InfeasibleCtc {
            target_len: target.len(),
            required,
            frames,
        });
    }
    let lp = log_probs.data();
    let at = |t: usize, k: usize| lp[t * vocab + k];
    // Extended label sequence: blank, l1, blank, l2, ..., blank.
    let ext: Vec<usize> = std::iter::once(BLANK)
        .chain(target.iter().flat_map(|&l| [l, BLANK]))
        .collect();
    let s_len = ext.len();
    let can_skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let mut alpha = vec![NEG_INF; frames * s_len];
    alpha[0] = at(0, ext[0]);
    if s_len > 1 {
        alpha[1] = at(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut v = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                v = log_add(v, alpha[(t - 1) * s_len + s - 1]);
            }
            if can_skip(s) {
                v = log_add(v, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = v + at(t, ext[s]);
        }
    }
    // beta excludes the emission at its own frame.
    let mut beta = vec![NEG_INF; frames * s_len];
    beta[(frames - 1) * s_len + s_len - 1] = 0.0;
    if s_len > 1 {
        beta[(frames - 1) * s_len + s_len - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let next = |s2: usize| beta[(t + 1) * s_len + s2] + at(t + 1, ext[s2]);
            let mut v = next(s);
            if s + 1 < s_len {
                v = log_add(v, next(s + 1));
            }
            if s + 2 < s_len && can_skip(s + 2) {
                v = log_add(v, next(s + 2));
            }
            beta[t * s_len + s] = v;
        }
    }
    let last = (frames - 1) * s_len;
    let log_p = if s_len > 1 {
        log_add(alpha[last + s_len - 1], alpha[last + s_len - 2])
    } else {
        alpha[last]
    };
    if !log_p.is_finite() {
        return Err(IrisError::InvalidArgument(
            "CTC target has zero probability under the given log-probabilities".into(),
        ));
    }
    let mut grad = vec![0.0; frames * vocab];
    for t in 0..frames {
        for s in 0..s_len {
            let occ = alpha[t * s_len + s] + beta[t * s_len + s] - log_p;
            if occ > NEG_INF {
                grad[t * vocab + ext[s]] -= occ.exp();
            }
        }
    }
    Ok((-log_p, grad))
}

/// CTC loss node over a `frames x vocab` log-probability node.
pub fn ctc_loss(g: &mut Graph, log_probs: Var, target: &[usize]) -> Result<Var> {
    let (value, grad) = ctc_loss_and_grad(g.value(log_probs), target)?;
    g.fused_scalar(log_probs, value, grad)
}

/// Prefix-probability state of one hypothesis: the log probability that the
/// first `t + 1` frames emit the prefix ending in a non-blank (`non_blank`)
/// or a blank (`blank`).
#[derive(Debug, Clone, PartialEq)]
pub struct CtcPrefixState {
    non_blank: Vec<f64>,
    blank: Vec<f64>,
    last: Option<usize>,
    /// Log prefix probability of the tokens so far.
    pub score: f64,
}

/// Scores prefix extensions against fixed CTC log-probabilities.
///
/// For prefix `g` extended by label `c` the recursion is
///
/// ```text
/// phi(t)   = blank_g(t) + [last(g) != c] non_blank_g(t)   (log-sum)
/// nb_h(0)  = x_0(c) if g is empty
/// nb_h(t)  = logadd(nb_h(t-1), phi(t-1)) + x_t(c)
/// b_h(t)   = logadd(b_h(t-1), nb_h(t-1)) + x_t(blank)
/// psi(h)   = logadd(nb_h(0), sum over t >= 1 of phi(t-1) + x_t(c))
/// ```
///
/// and the end-of-sentence extension scores `logadd(nb_g(T-1), b_g(T-1))`.
pub struct CtcPrefixScorer {
    log_probs: Tensor,
    frames: usize,
    vocab: usize,
}

impl CtcPrefixScorer {
    pub fn new(log_probs: Tensor) -> Result<Self> {
        let (frames, vocab) = log_probs.dims2()?;
        Ok(Self {
            log_probs,
            frames,
            vocab,
        })
    }

    fn x(&self, t: usize, k: usize) -> f64 {
        self.log_probs.data()[t * self.vocab + k]
    }

    pub fn initial(&self) -> CtcPrefixState {
        let mut blank = Vec::with_capacity(self.frames);
        let mut acc = 0.0;
        for t in 0..self.frames {
            acc += self.x(t, BLANK);
            blank.push(acc);
        }
        CtcPrefixState {
            non_blank: vec![NEG_INF; self.frames],
            blank,
            last: None,
            score: 0.0,
        }
    }

    /// Log probability of the whole utterance being exactly `state`'s prefix.
    pub fn final_score(&self, state: &CtcPrefixState) -> f64 {
        let t = self.frames - 1;
        log_add(state.non_blank[t], state.blank[t])
    }

    /// State after appending label `c` (not blank, not end-of-sentence).
    pub fn extend(&self, state: &CtcPrefixState, c: usize) -> CtcPrefixState {
        let n = self.frames;
        let mut nb = vec![NEG_INF; n];
        let mut b = vec![NEG_INF; n];
        let phi = |t: usize| {
            if state.last == Some(c) {
                state.blank[t]
            } else {
                log_add(state.blank[t], state.non_blank[t])
            }
        };
        if state.last.is_none() {
            nb[0] = self.x(0, c);
        }
        let mut psi = nb[0];
        for t in 1..n {
            let p = phi(t - 1);
            nb[t] = log_add(nb[t - 1], p) + self.x(t, c);
            b[t] = log_add(b[t - 1], nb[t - 1]) + self.x(t, BLANK);
            psi = log_add(psi, p + self.x(t, c));
        }
        CtcPrefixState {
            non_blank: nb,
            blank: b,
            last: Some(c),
            score: psi,
        }
    }
}
