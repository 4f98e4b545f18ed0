//! Levenshtein alignment counts, pooled error rate and OOV recall.

use std::collections::BTreeSet;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EditCounts {
    /// Reference length.
    pub n: usize,
    pub s: usize,
    pub d: usize,
    pub i: usize,
}

impl EditCounts {
    pub fn edits(&self) -> usize {
        self.s + self.d + self.i
    }

    pub fn matches(&self) -> usize {
        self.n - self.s - self.d
    }
}

impl Add for EditCounts {
    type Output = EditCounts;

    fn add(self, o: EditCounts) -> EditCounts {
        EditCounts {
            n: self.n + o.n,
            s: self.s + o.s,
            d: self.d + o.d,
            i: self.i + o.i,
        }
    }
}

impl AddAssign for EditCounts {
    fn add_assign(&mut self, o: EditCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for EditCounts {
    fn sum<I: Iterator<Item = EditCounts>>(iter: I) -> Self {
        iter.fold(EditCounts::default(), Add::add)
    }
}

/// Unit-cost alignment of `hyp` against `reference`. The backtrace prefers
/// match, then substitution, then deletion, then insertion.
pub fn levenshtein_counts<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        dp[i * w] = i;
    }
    for j in 0..=m {
        dp[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = dp[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let del = dp[(i - 1) * w + j] + 1;
            let ins = dp[i * w + j - 1] + 1;
            dp[i * w + j] = diag.min(del).min(ins);
        }
    }
    let mut c = EditCounts {
        n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let diag = dp[(i - 1) * w + j - 1];
            if reference[i - 1] == hyp[j - 1] && here == diag {
                i -= 1;
                j -= 1;
                continue;
            }
            if here == diag + 1 {
                c.s += 1;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == dp[(i - 1) * w + j] + 1 {
            c.d += 1;
            i -= 1;
        } else {
            c.i += 1;
            j -= 1;
        }
    }
    c
}

/// `(S + D + I) / N` over pooled counts.
pub fn error_rate(counts: EditCounts) -> Result<f64> {
    if counts.n == 0 {
        return Err(Error::Undefined("error rate over an empty reference".into()));
    }
    Ok(counts.edits() as f64 / counts.n as f64)
}

/// Words seen in source training text.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VocabSet<T: Ord>(BTreeSet<T>);

impl<T: Ord + Clone> VocabSet<T> {
    pub fn from_texts<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a [T]>,
        T: 'a,
    {
        Self(texts.into_iter().flatten().cloned().collect())
    }

    pub fn contains(&self, t: &T) -> bool {
        self.0.contains(t)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Tokens outside the vocabulary, in order.
    pub fn filter_oov(&self, tokens: &[T]) -> Vec<T> {
        tokens.iter().filter(|t| !self.contains(t)).cloned().collect()
    }
}

impl<T: Ord> FromIterator<T> for VocabSet<T> {
    fn from_iter<I: IntoIterator<Item = T>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// OOV counts of one utterance (insertions are kept but never used).
pub fn oov_counts<T: Ord + Clone>(reference: &[T], hyp: &[T], vocab: &VocabSet<T>) -> EditCounts {
    levenshtein_counts(&vocab.filter_oov(reference), &vocab.filter_oov(hyp))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OovRecall {
    /// `None` when no reference contains an OOV token.
    pub recall: Option<f64>,
    pub total: EditCounts,
    pub per_utterance: Vec<EditCounts>,
}

impl OovRecall {
    pub fn value(&self) -> Result<f64> {
        self.recall
            .ok_or_else(|| Error::Undefined("OOV recall with no OOV reference tokens".into()))
    }
}

/// Pooled `(ΣN − ΣS − ΣD) / ΣN` over OOV-filtered pairs.
pub fn oov_recall<T, R, H>(refs: &[R], hyps: &[H], vocab: &VocabSet<T>) -> Result<OovRecall>
where
    T: Ord + Clone,
    R: AsRef<[T]>,
    H: AsRef<[T]>,
{
    if refs.len() != hyps.len() {
        return Err(Error::shape(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let per_utterance: Vec<EditCounts> = refs
        .iter()
        .zip(hyps)
        .map(|(r, h)| oov_counts(r.as_ref(), h.as_ref(), vocab))
        .collect();
    Ok(recall_from_counts(per_utterance))
}

pub fn recall_from_counts(per_utterance: Vec<EditCounts>) -> OovRecall {
    let total: EditCounts = per_utterance.iter().copied().sum();
    let recall = (total.n > 0).then(|| total.matches() as f64 / total.n as f64);
    OovRecall {
        recall,
        total,
        per_utterance,
    }
}
