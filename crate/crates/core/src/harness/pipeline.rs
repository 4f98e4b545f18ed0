use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::eval::{evaluate, source_vocab, SplitMetrics};
use super::report::{detail_lines, summary_lines, summary_table, SummaryRecord};
use super::train::{adapt_target, save_model, train_source, Artifacts, PhaseResult};
use crate::adaptation::{
    alignment_pairs, learn_soft_prompt, modality_gap, train_te2sl, GapReport, SoftPrompt, SoftPromptReport,
    Strategy, StrategyKind, Te2slModule, Te2slTrainReport,
};
use crate::corpus::{generate_corpus, load_corpus, mix, write_corpus, Corpus, Split};
use crate::error::{Error, Result};
use crate::metrics::VocabSet;
use crate::model::{checkpoint, AsrModel, EncodedPair};
use crate::par::Exec;

/// Salts for the seeds each stage derives from the experiment seed.
mod salt {
    pub const MODEL: u64 = 10;
    pub const SOURCE: u64 = 11;
    pub const TE2SL_INIT: u64 = 20;
    pub const TE2SL_TRAIN: u64 = 21;
    pub const SOFT_PROMPT: u64 = 30;
    pub const ADAPT: u64 = 40;
}

/// Paired splits with cached encoder states plus the text-only split.
#[derive(Clone, Debug)]
pub struct EncodedCorpus {
    pub paired: Vec<(Split, Vec<EncodedPair>)>,
    pub adapt_texts: Vec<Vec<usize>>,
    pub vocab: VocabSet<usize>,
}

impl EncodedCorpus {
    pub fn split(&self, split: Split) -> Result<&[EncodedPair]> {
        self.paired
            .iter()
            .find(|(s, _)| *s == split)
            .map(|(_, p)| p.as_slice())
            .ok_or_else(|| Error::config(format!("split {} has no audio", split.name())))
    }
}

/// Runs the frozen encoder once over every paired utterance.
pub fn encode_corpus(model: &AsrModel, corpus: &Corpus, exec: Exec) -> Result<EncodedCorpus> {
    let mut paired = Vec::new();
    for (split, utts) in &corpus.splits {
        if !split.is_paired() {
            continue;
        }
        let encoded = exec
            .map(utts, |u| -> Result<EncodedPair> {
                let features = u.features.as_ref().ok_or_else(|| {
                    Error::config(format!("utterance {} in a paired split has no features", u.id))
                })?;
                Ok(EncodedPair {
                    id: u.id.clone(),
                    tokens: u.tokens.clone(),
                    states: model.encode_audio(features)?,
                })
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        paired.push((*split, encoded));
    }
    let adapt_texts = corpus.split(Split::TargetAdapt).iter().map(|u| u.tokens.clone()).collect();
    let vocab = source_vocab(
        paired
            .iter()
            .find(|(s, _)| *s == Split::SourceTrain)
            .map(|(_, p)| p.as_slice())
            .unwrap_or(&[]),
    );
    Ok(EncodedCorpus {
        paired,
        adapt_texts,
        vocab,
    })
}

/// Loads the configured corpus directory or generates the corpus.
pub fn prepare_corpus(cfg: &ExperimentConfig, exec: Exec) -> Result<Corpus> {
    match &cfg.corpus_path {
        Some(dir) => load_corpus(dir),
        None => generate_corpus(&cfg.corpus_config(), exec),
    }
}

/// Fresh model whose embedding table is seeded from the corpus prototypes.
pub fn init_model(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<AsrModel> {
    AsrModel::new(cfg.model.clone(), mix(cfg.seed, salt::MODEL), Some(corpus.embedding_prior()))
}

pub fn stage_source(
    cfg: &ExperimentConfig,
    model: &mut AsrModel,
    data: &EncodedCorpus,
    exec: Exec,
    ckpt_dir: Option<&Path>,
) -> Result<PhaseResult> {
    train_source(
        model,
        data.split(Split::SourceTrain)?,
        data.split(cfg.eval.source_dev)?,
        &cfg.source,
        cfg.eval.max_len,
        mix(cfg.seed, salt::SOURCE),
        exec,
        ckpt_dir,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Te2slOutcome {
    pub train: Te2slTrainReport,
    /// Measured on the held-out source test split.
    pub gap: GapReport,
}

pub fn stage_te2sl(
    cfg: &ExperimentConfig,
    model: &AsrModel,
    data: &EncodedCorpus,
    exec: Exec,
) -> Result<(Te2slModule, Te2slOutcome)> {
    let mut module = Te2slModule::new(cfg.te2sl, cfg.model.d_model, mix(cfg.seed, salt::TE2SL_INIT))?;
    let train = train_te2sl(
        &mut module,
        model,
        data.split(Split::SourceTrain)?,
        &cfg.te2sl_optim,
        mix(cfg.seed, salt::TE2SL_TRAIN),
        exec,
    )?;
    let (held_out, _) = alignment_pairs(model, data.split(Split::SourceTest)?, exec)?;
    let gap = modality_gap(&module, &held_out, exec)?;
    info!(
        "te2sl held-out mse: refined {:.5}, raw {:.5} (ratio {:.3})",
        gap.refined_mse,
        gap.raw_mse,
        gap.ratio()
    );
    Ok((module, Te2slOutcome { train, gap }))
}

pub fn stage_soft_prompt(
    cfg: &ExperimentConfig,
    model: &AsrModel,
    data: &EncodedCorpus,
    exec: Exec,
) -> Result<(SoftPrompt, SoftPromptReport)> {
    let texts: Vec<Vec<usize>> = data.split(Split::SourceTrain)?.iter().map(|p| p.tokens.clone()).collect();
    learn_soft_prompt(
        model,
        &texts,
        cfg.strategy.soft_prompt_len,
        &cfg.soft_prompt_optim,
        mix(cfg.seed, salt::SOFT_PROMPT),
        exec,
    )
}

pub fn stage_adapt(
    cfg: &ExperimentConfig,
    kind: StrategyKind,
    model: &AsrModel,
    artifacts: Artifacts<'_>,
    data: &EncodedCorpus,
    exec: Exec,
    ckpt_dir: Option<&Path>,
) -> Result<(AsrModel, PhaseResult)> {
    let strategy = Strategy {
        kind,
        ..cfg.strategy.clone()
    };
    adapt_target(
        model,
        &strategy,
        artifacts,
        &data.adapt_texts,
        data.split(cfg.eval.target_dev)?,
        &cfg.adapt,
        cfg.eval.max_len,
        mix(cfg.seed, salt::ADAPT + kind as u64),
        exec,
        ckpt_dir,
    )
}

pub fn stage_evaluate(
    cfg: &ExperimentConfig,
    kind: StrategyKind,
    model: &AsrModel,
    data: &EncodedCorpus,
    exec: Exec,
) -> Result<Vec<(SummaryRecord, SplitMetrics)>> {
    let digest = cfg.digest();
    cfg.eval
        .splits
        .iter()
        .map(|&split| {
            let m = evaluate(model, data.split(split)?, &data.vocab, cfg.eval.max_len, exec)?;
            let summary = SummaryRecord {
                strategy: kind,
                split: split.name().to_string(),
                wer: m.wer,
                rec_oov: m.rec_oov,
                seed: cfg.seed,
                config_digest: digest.clone(),
            };
            Ok((summary, m))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct StrategyOutcome {
    pub kind: StrategyKind,
    pub adapt: PhaseResult,
    pub results: Vec<(SummaryRecord, SplitMetrics)>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub source: PhaseResult,
    pub te2sl: Option<Te2slOutcome>,
    pub soft_prompt: Option<SoftPromptReport>,
    pub strategies: Vec<StrategyOutcome>,
}

impl ExperimentOutcome {
    pub fn summary(&self) -> Vec<SummaryRecord> {
        self.strategies
            .iter()
            .flat_map(|s| s.results.iter().map(|(r, _)| r.clone()))
            .collect()
    }

    pub fn find(&self, kind: StrategyKind) -> Option<&StrategyOutcome> {
        self.strategies.iter().find(|s| s.kind == kind)
    }
}

/// Everything after corpus generation: source training, artifact
/// preparation, then adaptation and evaluation for every listed strategy.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    exec: Exec,
    out: Option<&Path>,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let mut model = init_model(cfg, corpus)?;
    let data = encode_corpus(&model, corpus, exec)?;
    let source_dir = out.map(|o| o.join("source"));
    let source = stage_source(cfg, &mut model, &data, exec, source_dir.as_deref())?;
    if let Some(dir) = &source_dir {
        save_model(&dir.join("model.ckpt"), &model)?;
    }

    let te2sl = if cfg.run.contains(&StrategyKind::Te2sl) {
        let (module, outcome) = stage_te2sl(cfg, &model, &data, exec)?;
        if let Some(o) = out {
            checkpoint::save(&o.join("te2sl").join("module.ckpt"), &module.to_tensors())?;
        }
        Some((module, outcome))
    } else {
        None
    };
    let soft = if cfg.run.contains(&StrategyKind::SoftPrompt) {
        let (prompt, report) = stage_soft_prompt(cfg, &model, &data, exec)?;
        if let Some(o) = out {
            checkpoint::save(&o.join("soft_prompt").join("prompt.ckpt"), &prompt.to_tensors())?;
        }
        Some((prompt, report))
    } else {
        None
    };
    let artifacts = Artifacts {
        te2sl: te2sl.as_ref().map(|(m, _)| m),
        soft_prompt: soft.as_ref().map(|(p, _)| p),
    };

    let strategies = exec
        .map(&cfg.run, |&kind| -> Result<StrategyOutcome> {
            let dir = out.map(|o| o.join("adapt").join(kind.name()));
            let (adapted, adapt) = stage_adapt(cfg, kind, &model, artifacts, &data, exec, dir.as_deref())?;
            if let Some(d) = &dir {
                save_model(&d.join("model.ckpt"), &adapted)?;
            }
            let results = stage_evaluate(cfg, kind, &adapted, &data, exec)?;
            for (r, _) in &results {
                info!("{}: {} WER {:.4}, Rec_OOV {:?}", kind.name(), r.split, r.wer, r.rec_oov);
            }
            Ok(StrategyOutcome { kind, adapt, results })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let outcome = ExperimentOutcome {
        source,
        te2sl: te2sl.map(|(_, o)| o),
        soft_prompt: soft.map(|(_, r)| r),
        strategies,
    };
    if let Some(o) = out {
        write_reports(&o.join("report"), &outcome)?;
    }
    Ok(outcome)
}

/// `records.jsonl`, `summary.jsonl` and `summary.txt` under `dir`.
pub fn write_reports(dir: &Path, outcome: &ExperimentOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut details = String::new();
    for s in &outcome.strategies {
        for (summary, metrics) in &s.results {
            details.push_str(&detail_lines(summary, metrics)?);
        }
    }
    let summary = outcome.summary();
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write("records.jsonl", details)?;
    write("summary.jsonl", summary_lines(&summary)?)?;
    write("summary.txt", summary_table(&summary))
}

/// Corpus generation (written under `out/corpus`) followed by the pipeline.
pub fn run_all(cfg: &ExperimentConfig, exec: Exec, out: Option<&Path>) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let corpus = prepare_corpus(cfg, exec)?;
    if let Some(o) = out {
        if cfg.corpus_path.is_none() {
            write_corpus(&o.join("corpus"), &corpus)?;
        }
        let p = o.join("config.ini");
        std::fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
        std::fs::write(&p, cfg.to_ini_string()).map_err(|e| Error::io(&p, e))?;
    }
    run_pipeline(cfg, &corpus, exec, out)
}
