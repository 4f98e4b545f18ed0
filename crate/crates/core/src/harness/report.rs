use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::SplitMetrics;
use crate::adaptation::StrategyKind;
use crate::error::{Error, Result};

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub strategy: StrategyKind,
    pub split: String,
    pub wer: f64,
    pub rec_oov: Option<f64>,
    pub seed: u64,
    pub config_digest: String,
}

#[derive(Serialize)]
struct DetailLine<'a> {
    strategy: &'a str,
    split: &'a str,
    #[serde(flatten)]
    record: &'a super::eval::UtteranceRecord,
}

fn to_line<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::format(format!("report serialization: {e}")))
}

/// Per-utterance records of one strategy and split, one JSON object per
/// line, closed by the summary record.
pub fn detail_lines(summary: &SummaryRecord, metrics: &SplitMetrics) -> Result<String> {
    let mut out = String::new();
    for r in &metrics.records {
        out.push_str(&to_line(&DetailLine {
            strategy: summary.strategy.name(),
            split: &summary.split,
            record: r,
        })?);
        out.push('\n');
    }
    out.push_str(&to_line(summary)?);
    out.push('\n');
    Ok(out)
}

pub fn summary_lines(rows: &[SummaryRecord]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&to_line(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_summary_lines(text: &str) -> Result<Vec<SummaryRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(format!("summary record: {e}"))))
        .collect()
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_summary_lines(&text)
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Plain-text table with one row per strategy and split.
pub fn summary_table(rows: &[SummaryRecord]) -> String {
    let mut out = String::new();
    let w = rows
        .iter()
        .map(|r| r.strategy.label().len())
        .max()
        .unwrap_or(0)
        .max("Method".len());
    let _ = writeln!(out, "{:<w$}  {:<12}  {:>8}  {:>9}", "Method", "Split", "WER↓", "Rec_OOV↑");
    let _ = writeln!(out, "{}", "-".repeat(w + 2 + 12 + 2 + 8 + 2 + 9));
    for r in rows {
        let rec = r.rec_oov.map_or("n/a".to_string(), pct);
        let _ = writeln!(out, "{:<w$}  {:<12}  {:>8}  {:>9}", r.strategy.label(), r.split, pct(r.wer), rec);
    }
    if let Some(first) = rows.first() {
        let _ = writeln!(out, "\nseed {}, config {}; values in %", first.seed, first.config_digest);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_lines_round_trip() {
        let rows = vec![
            SummaryRecord {
                strategy: StrategyKind::None,
                split: "target-test".into(),
                wer: 0.25,
                rec_oov: None,
                seed: 3,
                config_digest: "00ff".into(),
            },
            SummaryRecord {
                strategy: StrategyKind::Te2sl,
                split: "target-test".into(),
                wer: 0.125,
                rec_oov: Some(0.5),
                seed: 3,
                config_digest: "00ff".into(),
            },
        ];
        let text = summary_lines(&rows).unwrap();
        assert_eq!(parse_summary_lines(&text).unwrap(), rows);
        let table = summary_table(&rows);
        assert!(table.contains("TE2SL"));
        assert!(table.contains("12.50"));
        assert!(table.contains("n/a"));
    }
}
