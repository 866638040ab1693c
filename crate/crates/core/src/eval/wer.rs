use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use crate::error::{IrisError, Result};

/// Token granularity of an error rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Unit {
    /// Every character is a token; whitespace is ignored.
    #[default]
    Char,
    /// Whitespace-separated words.
    Word,
}

impl Unit {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Unit::Char => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
            Unit::Word => text.split_whitespace().map(String::from).collect(),
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Char => "char",
            Unit::Word => "word",
        })
    }
}

impl FromStr for Unit {
    type Err = IrisError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "char" => Ok(Unit::Char),
            "word" => Ok(Unit::Word),
            other => Err(IrisError::Config(format!("unknown unit `{other}` (expected char or word)"))),
        }
    }
}

/// Error counts of one or more aligned pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_words: usize,
}

impl WerBreakdown {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `100 * errors / reference length`; zero for an empty total.
    pub fn wer(&self) -> f64 {
        if self.ref_words == 0 {
            0.0
        } else {
            100.0 * self.errors() as f64 / self.ref_words as f64
        }
    }
}

impl Add for WerBreakdown {
    type Output = WerBreakdown;

    fn add(self, o: WerBreakdown) -> WerBreakdown {
        WerBreakdown {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            ref_words: self.ref_words + o.ref_words,
        }
    }
}

impl AddAssign for WerBreakdown {
    fn add_assign(&mut self, o: WerBreakdown) {
        *self = *self + o;
    }
}

impl std::iter::Sum for WerBreakdown {
    fn sum<I: Iterator<Item = WerBreakdown>>(iter: I) -> Self {
        iter.fold(WerBreakdown::default(), Add::add)
    }
}

/// Unit-cost edit alignment of two token sequences. Among minimal
/// alignments the backtrace prefers a substitution (or match), then an
/// insertion, then a deletion.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> WerBreakdown {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let ins = d[i * w + j - 1] + 1;
            let del = d[(i - 1) * w + j] + 1;
            d[i * w + j] = sub.min(ins).min(del);
        }
    }
    let mut out = WerBreakdown {
        ref_words: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let mismatch = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if d[(i - 1) * w + j - 1] + mismatch == here {
                out.substitutions += mismatch;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i * w + j - 1] + 1 == here {
            out.insertions += 1;
            j -= 1;
        } else {
            out.deletions += 1;
            i -= 1;
        }
    }
    out
}

/// Error breakdown of one hypothesis against a non-empty reference.
pub fn wer(reference: &str, hypothesis: &str, unit: Unit) -> Result<WerBreakdown> {
    let r = unit.tokenize(reference);
    if r.is_empty() {
        return Err(IrisError::InvalidArgument("reference is empty".into()));
    }
    Ok(align(&r, &unit.tokenize(hypothesis)))
}
