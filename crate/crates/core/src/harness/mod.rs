//! Experiment orchestration: configuration, source training, text-only
//! adaptation, evaluation and reports.

mod config;
mod eval;
mod gradsuite;
mod pipeline;
mod report;
mod train;

pub use config::{EvalConfig, ExperimentConfig};
pub use eval::{dev_wer, evaluate, select_checkpoint, source_vocab, summarize, SplitMetrics, UtteranceRecord};
pub use pipeline::{
    encode_corpus, init_model, prepare_corpus, run_all, run_pipeline, stage_adapt, stage_evaluate,
    stage_soft_prompt, stage_source, stage_te2sl, write_reports, EncodedCorpus, ExperimentOutcome,
    StrategyOutcome, Te2slOutcome,
};
pub use report::{
    detail_lines, parse_summary_lines, read_summary, summary_lines, summary_table, SummaryRecord,
};
pub use train::{
    adapt_target, load_model, model_from_tensors, model_tensors, save_model, train_source, Artifacts,
    PhaseResult,
};
pub use gradsuite::{
    check_names, gradient_suite, GradCase, END_TO_END_TOLERANCE, GRAD_EPS, OP_TOLERANCE,
};
