use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use te2sl::adaptation::{SoftPrompt, StrategyKind, Te2slModule};
use te2sl::corpus::{generate_corpus, load_corpus, write_corpus, Corpus};
use te2sl::harness::{
    self, check_names, gradient_suite, load_model, read_summary, save_model, summary_lines, summary_table,
    Artifacts, ExperimentConfig, SummaryRecord,
};
use te2sl::model::checkpoint;
use te2sl::par::Exec;
use te2sl::Error;

#[derive(Parser)]
#[command(name = "te2sl", version, about = "Text-only domain adaptation for a toy speech LLM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment configuration (INI).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides [experiment] seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a setting, e.g. --set optim.source.epochs=3 (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for data-parallel work (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Clone)]
struct Inputs {
    /// Corpus directory written by generate-corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenerateCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Train projector and LM on paired source data.
    TrainSource {
        #[command(flatten)]
        common: Common,
        /// Corpus directory; generated from the configuration when absent.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train the refinement module against a source-trained model.
    TrainTe2sl {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Learn the soft-prompt baseline's prompt.
    LearnSoftPrompt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Text-only adaptation with one strategy.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        strategy: Option<String>,
        /// Refinement module checkpoint (te2sl strategy).
        #[arg(long)]
        te2sl: Option<PathBuf>,
        /// Soft prompt checkpoint (soft_prompt strategy).
        #[arg(long)]
        soft_prompt: Option<PathBuf>,
    },
    /// Decode the evaluation splits and write metrics.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Strategy name recorded in the report.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Corpus, source training, every strategy, report.
    RunAll {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every differentiable block.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Merge summary.jsonl files into one table.
    Report {
        /// summary.jsonl files or run directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for o in &common.overrides {
        cfg.set_override(o)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.output
        .clone()
        .ok_or_else(|| Error::config("no output directory: pass --out or set [experiment] output").into())
}

/// Refuses to reuse a non-empty output directory unless `force`.
fn fresh_dir(dir: &Path, force: bool) -> Result<()> {
    if !force {
        if let Ok(mut entries) = std::fs::read_dir(dir) {
            if entries.next().is_some() {
                return Err(Error::config(format!(
                    "{} already exists and is not empty (use --force to overwrite)",
                    dir.display()
                ))
                .into());
            }
        }
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn existing(what: &str, path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            what: what.to_string(),
            path: path.to_path_buf(),
        }
        .into());
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn strategy_kind(cfg: &ExperimentConfig, flag: Option<&str>) -> Result<StrategyKind> {
    Ok(match flag {
        Some(s) => StrategyKind::parse(s)?,
        None => cfg.strategy.kind,
    })
}

fn corpus_from(path: &Path) -> Result<Corpus> {
    existing("corpus directory", path)?;
    Ok(load_corpus(path)?)
}

struct Loaded {
    corpus: Corpus,
    model: te2sl::model::AsrModel,
    data: harness::EncodedCorpus,
}

fn load_inputs(inputs: &Inputs, exec: Exec) -> Result<Loaded> {
    let corpus = corpus_from(&inputs.corpus)?;
    existing("model checkpoint", &inputs.model)?;
    let model = load_model(&inputs.model)?;
    let data = harness::encode_corpus(&model, &corpus, exec)?;
    Ok(Loaded { corpus, model, data })
}

fn run(cli: Cli) -> Result<()> {
    let exec = Exec::default();
    match cli.command {
        Command::GenerateCorpus { common } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&cfg)?;
            fresh_dir(&dir, common.force)?;
            let corpus = generate_corpus(&cfg.corpus_config(), exec)?;
            write_corpus(&dir, &corpus)?;
            info!("corpus written to {}", dir.display());
        }
        Command::TrainSource { common, corpus } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&cfg)?;
            fresh_dir(&dir, common.force)?;
            let corpus = match corpus {
                Some(p) => corpus_from(&p)?,
                None => harness::prepare_corpus(&cfg, exec)?,
            };
            let mut model = harness::init_model(&cfg, &corpus)?;
            let data = harness::encode_corpus(&model, &corpus, exec)?;
            let result = harness::stage_source(&cfg, &mut model, &data, exec, Some(&dir))?;
            save_model(&dir.join("model.ckpt"), &model)?;
            write_json(&dir.join("phase.json"), &result)?;
            println!("selected epoch {} (dev WER {:.4})", result.selected_epoch, result.dev_wer[result.selected_epoch - 1]);
        }
        Command::TrainTe2sl { common, inputs } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&cfg)?;
            fresh_dir(&dir, common.force)?;
            let l = load_inputs(&inputs, exec)?;
            let (module, outcome) = harness::stage_te2sl(&cfg, &l.model, &l.data, exec)?;
            checkpoint::save(&dir.join("module.ckpt"), &module.to_tensors())?;
            write_json(&dir.join("te2sl.json"), &outcome)?;
            println!(
                "held-out mse: refined {:.5}, raw upsampled {:.5}",
                outcome.gap.refined_mse, outcome.gap.raw_mse
            );
        }
        Command::LearnSoftPrompt { common, inputs } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&cfg)?;
            fresh_dir(&dir, common.force)?;
            let l = load_inputs(&inputs, exec)?;
            let (prompt, report) = harness::stage_soft_prompt(&cfg, &l.model, &l.data, exec)?;
            checkpoint::save(&dir.join("prompt.ckpt"), &prompt.to_tensors())?;
            write_json(&dir.join("losses.json"), &report.epoch_losses)?;
        }
        Command::Adapt {
            common,
            inputs,
            strategy,
            te2sl,
            soft_prompt,
        } => {
            let cfg = load_config(&common)?;
            let kind = strategy_kind(&cfg, strategy.as_deref())?;
            let module = match (&te2sl, kind) {
                (Some(p), _) => {
                    existing("refinement module checkpoint", p)?;
                    Some(Te2slModule::from_tensors(&checkpoint::load(p)?)?)
                }
                (None, StrategyKind::Te2sl) => bail!(Error::config(
                    "strategy te2sl needs a trained refinement module checkpoint (--te2sl PATH)"
                )),
                (None, _) => None,
            };
            let prompt = match (&soft_prompt, kind) {
                (Some(p), _) => {
                    existing("soft prompt checkpoint", p)?;
                    Some(SoftPrompt::from_tensors(&checkpoint::load(p)?)?)
                }
                (None, StrategyKind::SoftPrompt) => bail!(Error::config(
                    "strategy soft_prompt needs a learned prompt checkpoint (--soft-prompt PATH)"
                )),
                (None, _) => None,
            };
            let dir = out_dir(&cfg)?;
            fresh_dir(&dir, common.force)?;
            let l = load_inputs(&inputs, exec)?;
            let artifacts = Artifacts {
                te2sl: module.as_ref(),
                soft_prompt: prompt.as_ref(),
            };
            let (adapted, result) = harness::stage_adapt(&cfg, kind, &l.model, artifacts, &l.data, exec, Some(&dir))?;
            save_model(&dir.join("model.ckpt"), &adapted)?;
            write_json(&dir.join("phase.json"), &result)?;
        }
        Command::Evaluate {
            common,
            inputs,
            strategy,
        } => {
            let cfg = load_config(&common)?;
            let kind = strategy_kind(&cfg, strategy.as_deref())?;
            let dir = out_dir(&cfg)?;
            fresh_dir(&dir, common.force)?;
            let l = load_inputs(&inputs, exec)?;
            let _ = &l.corpus;
            let results = harness::stage_evaluate(&cfg, kind, &l.model, &l.data, exec)?;
            let mut details = String::new();
            for (summary, metrics) in &results {
                details.push_str(&harness::detail_lines(summary, metrics)?);
            }
            let summary: Vec<SummaryRecord> = results.into_iter().map(|(s, _)| s).collect();
            std::fs::write(dir.join("records.jsonl"), details)?;
            std::fs::write(dir.join("summary.jsonl"), summary_lines(&summary)?)?;
            let table = summary_table(&summary);
            std::fs::write(dir.join("summary.txt"), &table)?;
            print!("{table}");
        }
        Command::RunAll { common } => {
            let cfg = load_config(&common)?;
            let dir = out_dir(&cfg)?;
            fresh_dir(&dir, common.force)?;
            let outcome = Exec::with_threads(common.jobs, || harness::run_all(&cfg, exec, Some(&dir)))?;
            if let Some(t) = &outcome.te2sl {
                println!(
                    "refinement held-out mse: {:.5} refined vs {:.5} raw upsampled",
                    t.gap.refined_mse, t.gap.raw_mse
                );
            }
            print!("{}", summary_table(&outcome.summary()));
        }
        Command::Gradcheck { seed } => {
            let cases = gradient_suite(seed)?;
            let width = check_names().iter().map(|n| n.len()).max().unwrap_or(0);
            let mut failed = 0;
            for c in &cases {
                let status = if c.passed() { "ok" } else { "FAIL" };
                println!(
                    "{:<width$}  max rel err {:.3e}  (< {:.0e}, {} coords)  {status}",
                    c.name, c.max_rel_error, c.tolerance, c.coordinates
                );
                failed += usize::from(!c.passed());
            }
            if failed > 0 {
                return Err(Error::numeric(format!("{failed} gradient checks failed")).into());
            }
        }
        Command::Report { inputs, out, force } => {
            let mut rows = Vec::new();
            for p in &inputs {
                let file = if p.is_dir() {
                    [p.join("report").join("summary.jsonl"), p.join("summary.jsonl")]
                        .into_iter()
                        .find(|f| f.exists())
                        .ok_or_else(|| anyhow!(Error::MissingArtifact {
                            what: "summary.jsonl".into(),
                            path: p.clone(),
                        }))?
                } else {
                    existing("summary file", p)?;
                    p.clone()
                };
                rows.extend(read_summary(&file)?);
            }
            let table = summary_table(&rows);
            if let Some(dir) = out {
                fresh_dir(&dir, force)?;
                std::fs::write(dir.join("summary.jsonl"), summary_lines(&rows)?)?;
                std::fs::write(dir.join("summary.txt"), &table)?;
            }
            print!("{table}");
        }
    }
    Ok(())
}

/// 1 for configuration problems, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if e.is_config() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
