use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{error_rate, levenshtein_counts, oov_counts, recall_from_counts, EditCounts, VocabSet};
use crate::model::{greedy_decode, AsrModel, EncodedPair};
use crate::par::Exec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub reference: Vec<usize>,
    pub hypothesis: Vec<usize>,
    pub counts: EditCounts,
    pub oov: EditCounts,
}

/// Pooled word error rate and OOV recall of one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub wer: f64,
    /// `None` when the split has no OOV reference tokens.
    pub rec_oov: Option<f64>,
    pub totals: EditCounts,
    pub oov_totals: EditCounts,
    pub records: Vec<UtteranceRecord>,
}

/// Source-training vocabulary used to decide which tokens are OOV.
pub fn source_vocab(train: &[EncodedPair]) -> VocabSet<usize> {
    VocabSet::from_texts(train.iter().map(|p| p.tokens.as_slice()))
}

/// Greedy-decodes every utterance from its real audio prompt.
pub fn evaluate(
    model: &AsrModel,
    pairs: &[EncodedPair],
    vocab: &VocabSet<usize>,
    max_len: usize,
    exec: Exec,
) -> Result<SplitMetrics> {
    if pairs.is_empty() {
        return Err(Error::config("cannot evaluate an empty split"));
    }
    let records = exec
        .map(pairs, |p| -> Result<UtteranceRecord> {
            let prompt = model.audio_prompt(&p.states)?;
            let hyp = greedy_decode(model, Some(&prompt), max_len)?;
            Ok(UtteranceRecord {
                id: p.id.clone(),
                counts: levenshtein_counts(&p.tokens, &hyp),
                oov: oov_counts(&p.tokens, &hyp, vocab),
                reference: p.tokens.clone(),
                hypothesis: hyp,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(records)?)
}

/// Pools per-utterance records into split metrics.
pub fn summarize(records: Vec<UtteranceRecord>) -> Result<SplitMetrics> {
    let totals: EditCounts = records.iter().map(|r| r.counts).sum();
    let recall = recall_from_counts(records.iter().map(|r| r.oov).collect());
    Ok(SplitMetrics {
        wer: error_rate(totals)?,
        rec_oov: recall.recall,
        totals,
        oov_totals: recall.total,
        records,
    })
}

/// Word error rate only, for checkpoint selection.
pub fn dev_wer(model: &AsrModel, pairs: &[EncodedPair], max_len: usize, exec: Exec) -> Result<f64> {
    let empty: VocabSet<usize> = BTreeSet::new().into_iter().collect();
    Ok(evaluate(model, pairs, &empty, max_len, exec)?.wer)
}

/// 1-based epoch with the lowest metric; ties go to the earliest.
pub fn select_checkpoint(metrics: &[f64]) -> Result<usize> {
    if metrics.is_empty() {
        return Err(Error::config("no epochs to select from"));
    }
    let mut best = 0;
    for (i, &m) in metrics.iter().enumerate().skip(1) {
        if m < metrics[best] {
            best = i;
        }
    }
    Ok(best + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_examples() {
        assert_eq!(select_checkpoint(&[0.5, 0.3, 0.4]).unwrap(), 2);
        assert_eq!(select_checkpoint(&[0.3, 0.3]).unwrap(), 1);
        assert_eq!(select_checkpoint(&[0.9]).unwrap(), 1);
        assert!(select_checkpoint(&[]).is_err());
    }
}
