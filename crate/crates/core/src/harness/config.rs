//! Experiment configuration and its INI representation.
//!
//! ```ini
//! [experiment]
//! seed = 0
//! output = runs/demo
//!
//! [strategy]
//! kind = te2sl
//! run = none, text_only_ft, soft_prompt, upsample_mask, te2sl
//!
//! [optim.source]
//! lr = 0.003
//! ```
//!
//! Every key has a default; unknown sections or keys are errors.

use std::path::{Path, PathBuf};

use ini::Ini;

use crate::adaptation::{MaskSpec, Strategy, StrategyKind, Te2slConfig};
use crate::corpus::{CorpusConfig, Split};
use crate::error::{Error, Result};
use crate::fnv::fnv1a;
use crate::model::ModelConfig;
use crate::numerics::OptimSettings;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub splits: Vec<Split>,
    /// Decoding stops after this many tokens.
    pub max_len: usize,
    pub source_dev: Split,
    pub target_dev: Split,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            splits: vec![Split::TargetTest],
            max_len: 16,
            source_dev: Split::SourceDev,
            target_dev: Split::TargetDev,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub model: ModelConfig,
    pub te2sl: Te2slConfig,
    pub corpus: CorpusConfig,
    /// Overrides the corpus seed, which otherwise follows `seed`.
    pub corpus_seed: Option<u64>,
    /// Pre-generated corpus directory to use instead of generating one.
    pub corpus_path: Option<PathBuf>,
    pub strategy: Strategy,
    /// Strategies compared by `run-all`.
    pub run: Vec<StrategyKind>,
    pub source: OptimSettings,
    pub adapt: OptimSettings,
    pub te2sl_optim: OptimSettings,
    pub soft_prompt_optim: OptimSettings,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: None,
            model: ModelConfig::default(),
            te2sl: Te2slConfig::default(),
            corpus: CorpusConfig::default(),
            corpus_seed: None,
            corpus_path: None,
            strategy: Strategy::new(StrategyKind::Te2sl),
            run: StrategyKind::ALL.to_vec(),
            source: OptimSettings {
                lr: 3e-3,
                batch_size: 8,
                epochs: 15,
                weight_decay: 0.001,
            },
            adapt: OptimSettings {
                lr: 1e-3,
                batch_size: 16,
                epochs: 6,
                weight_decay: 0.001,
            },
            te2sl_optim: OptimSettings {
                lr: 1e-3,
                batch_size: 16,
                epochs: 10,
                weight_decay: 0.001,
            },
            soft_prompt_optim: OptimSettings {
                lr: 1e-2,
                batch_size: 16,
                epochs: 3,
                weight_decay: 0.0,
            },
            eval: EvalConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("[{section}] {key} = `{value}` is not a valid value")))
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn optim_mut<'a>(cfg: &'a mut ExperimentConfig, section: &str) -> Option<&'a mut OptimSettings> {
    match section {
        "optim.source" => Some(&mut cfg.source),
        "optim.adapt" => Some(&mut cfg.adapt),
        "optim.te2sl" => Some(&mut cfg.te2sl_optim),
        "optim.soft_prompt" => Some(&mut cfg.soft_prompt_optim),
        _ => None,
    }
}

const OPTIM_SECTIONS: [&str; 4] = ["optim.source", "optim.adapt", "optim.te2sl", "optim.soft_prompt"];

impl ExperimentConfig {
    /// Corpus settings with the effective seed filled in.
    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            seed: self.corpus_seed.unwrap_or(self.seed),
            ..self.corpus.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.te2sl.validate()?;
        self.corpus.validate()?;
        self.strategy.validate()?;
        self.source.validate("optim.source")?;
        self.adapt.validate("optim.adapt")?;
        self.te2sl_optim.validate("optim.te2sl")?;
        self.soft_prompt_optim.validate("optim.soft_prompt")?;
        if self.model.content_vocab != self.corpus.content_vocab() {
            return Err(Error::config(format!(
                "model.content_vocab {} differs from the corpus vocabulary size {}",
                self.model.content_vocab,
                self.corpus.content_vocab()
            )));
        }
        if self.model.feat_dim != self.corpus.feat_dim {
            return Err(Error::config(format!(
                "model.feat_dim {} differs from corpus.feat_dim {}",
                self.model.feat_dim, self.corpus.feat_dim
            )));
        }
        if self.run.is_empty() {
            return Err(Error::config("[strategy] run lists no strategies"));
        }
        if self.eval.splits.is_empty() || self.eval.splits.iter().any(|s| !s.is_paired()) {
            return Err(Error::config("[eval] splits must name paired splits"));
        }
        if self.eval.max_len == 0 {
            return Err(Error::config("[eval] max_len must be positive"));
        }
        Ok(())
    }

    /// Sets one `section.key` to `value`.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let unknown = || Error::config(format!("unknown configuration key [{section}] {key}"));
        match section {
            "experiment" => match key {
                "seed" => self.seed = parse(section, key, v)?,
                "output" => self.output = Some(PathBuf::from(v)),
                _ => return Err(unknown()),
            },
            "model" => {
                let m = &mut self.model;
                match key {
                    "feat_dim" => m.feat_dim = parse(section, key, v)?,
                    "enc_dim" => m.enc_dim = parse(section, key, v)?,
                    "enc_layers" => m.enc_layers = parse(section, key, v)?,
                    "enc_heads" => m.enc_heads = parse(section, key, v)?,
                    "enc_ff" => m.enc_ff = parse(section, key, v)?,
                    "enc_kernel" => m.enc_kernel = parse(section, key, v)?,
                    "stack" => m.stack = parse(section, key, v)?,
                    "proj_hidden" => m.proj_hidden = parse(section, key, v)?,
                    "d_model" => m.d_model = parse(section, key, v)?,
                    "lm_layers" => m.lm_layers = parse(section, key, v)?,
                    "lm_heads" => m.lm_heads = parse(section, key, v)?,
                    "lm_ff" => m.lm_ff = parse(section, key, v)?,
                    "max_positions" => m.max_positions = parse(section, key, v)?,
                    "content_vocab" => m.content_vocab = parse(section, key, v)?,
                    "inst_len" => m.inst_len = parse(section, key, v)?,
                    "lora_rank" => m.lora_rank = parse(section, key, v)?,
                    "lora_alpha" => m.lora_alpha = parse(section, key, v)?,
                    "te2sl_layers" => self.te2sl.layers = parse(section, key, v)?,
                    "te2sl_hidden" => self.te2sl.hidden = parse(section, key, v)?,
                    "te2sl_heads" => self.te2sl.heads = parse(section, key, v)?,
                    "te2sl_ff" => self.te2sl.ff_dim = parse(section, key, v)?,
                    "te2sl_kernel" => self.te2sl.kernel = parse(section, key, v)?,
                    _ => return Err(unknown()),
                }
            }
            "corpus" => {
                let c = &mut self.corpus;
                match key {
                    "path" => self.corpus_path = Some(PathBuf::from(v)),
                    "seed" => self.corpus_seed = Some(parse(section, key, v)?),
                    "source_only" => c.source_only = parse(section, key, v)?,
                    "shared" => c.shared = parse(section, key, v)?,
                    "oov" => c.oov = parse(section, key, v)?,
                    "feat_dim" => c.feat_dim = parse(section, key, v)?,
                    "sigma" => c.sigma = parse(section, key, v)?,
                    "dur_lo" => c.dur_lo = parse(section, key, v)?,
                    "dur_hi" => c.dur_hi = parse(section, key, v)?,
                    "len_lo" => c.len_lo = parse(section, key, v)?,
                    "len_hi" => c.len_hi = parse(section, key, v)?,
                    "oov_mass" => c.oov_mass = parse(section, key, v)?,
                    "branching" => c.branching = parse(section, key, v)?,
                    "oov_confusion" => c.oov_confusion = parse(section, key, v)?,
                    "source_train" => c.source_train = parse(section, key, v)?,
                    "source_dev" => c.source_dev = parse(section, key, v)?,
                    "source_test" => c.source_test = parse(section, key, v)?,
                    "target_adapt" => c.target_adapt = parse(section, key, v)?,
                    "target_dev" => c.target_dev = parse(section, key, v)?,
                    "target_test" => c.target_test = parse(section, key, v)?,
                    _ => return Err(unknown()),
                }
            }
            "strategy" => {
                let s = &mut self.strategy;
                match key {
                    "kind" => s.kind = StrategyKind::parse(v)?,
                    "run" => self.run = list(v).map(StrategyKind::parse).collect::<Result<_>>()?,
                    "mask_p" => s.mask.p = parse(section, key, v)?,
                    "mask_spans" => s.mask.spans = parse(section, key, v)?,
                    "mask_width" => {
                        s.mask.max_width = match v {
                            "auto" => None,
                            _ => Some(parse(section, key, v)?),
                        }
                    }
                    "dur_min" => s.dur_min = parse(section, key, v)?,
                    "dur_max" => s.dur_max = parse(section, key, v)?,
                    "soft_prompt_len" => s.soft_prompt_len = parse(section, key, v)?,
                    _ => return Err(unknown()),
                }
            }
            "eval" => {
                let e = &mut self.eval;
                match key {
                    "splits" => e.splits = list(v).map(Split::parse).collect::<Result<_>>()?,
                    "max_len" => e.max_len = parse(section, key, v)?,
                    "source_dev" => e.source_dev = Split::parse(v)?,
                    "target_dev" => e.target_dev = Split::parse(v)?,
                    _ => return Err(unknown()),
                }
            }
            s if OPTIM_SECTIONS.contains(&s) => {
                let o = optim_mut(self, s).expect("listed section");
                match key {
                    "lr" => o.lr = parse(section, key, v)?,
                    "batch_size" => o.batch_size = parse(section, key, v)?,
                    "epochs" => o.epochs = parse(section, key, v)?,
                    "weight_decay" => o.weight_decay = parse(section, key, v)?,
                    _ => return Err(unknown()),
                }
            }
            _ => return Err(Error::config(format!("unknown configuration section [{section}]"))),
        }
        Ok(())
    }

    /// Applies a `section.key=value` override (the section may contain dots).
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (lhs, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
        let (section, key) = lhs
            .trim()
            .rsplit_once('.')
            .ok_or_else(|| Error::config(format!("override key `{lhs}` needs a section prefix")))?;
        self.set(section, key, value)
    }

    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::config(format!("config syntax: {e}")))?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                match section {
                    Some(s) => cfg.set(s, key, value)?,
                    None => return Err(Error::config(format!("key `{key}` outside any section"))),
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_ini_str(&text)
    }

    /// Every setting as `(section, key, value)`, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String, String)> {
        let mut out = Vec::new();
        let mut push = |s: &str, k: &str, v: String| out.push((s.to_string(), k.to_string(), v));
        push("experiment", "seed", self.seed.to_string());
        if let Some(o) = &self.output {
            push("experiment", "output", o.display().to_string());
        }
        let m = &self.model;
        for (k, v) in [
            ("feat_dim", m.feat_dim),
            ("enc_dim", m.enc_dim),
            ("enc_layers", m.enc_layers),
            ("enc_heads", m.enc_heads),
            ("enc_ff", m.enc_ff),
            ("enc_kernel", m.enc_kernel),
            ("stack", m.stack),
            ("proj_hidden", m.proj_hidden),
            ("d_model", m.d_model),
            ("lm_layers", m.lm_layers),
            ("lm_heads", m.lm_heads),
            ("lm_ff", m.lm_ff),
            ("max_positions", m.max_positions),
            ("content_vocab", m.content_vocab),
            ("inst_len", m.inst_len),
            ("lora_rank", m.lora_rank),
            ("te2sl_layers", self.te2sl.layers),
            ("te2sl_hidden", self.te2sl.hidden),
            ("te2sl_heads", self.te2sl.heads),
            ("te2sl_ff", self.te2sl.ff_dim),
            ("te2sl_kernel", self.te2sl.kernel),
        ] {
            push("model", k, v.to_string());
        }
        push("model", "lora_alpha", m.lora_alpha.to_string());
        let c = &self.corpus;
        if let Some(p) = &self.corpus_path {
            push("corpus", "path", p.display().to_string());
        }
        if let Some(s) = self.corpus_seed {
            push("corpus", "seed", s.to_string());
        }
        for (k, v) in [
            ("source_only", c.source_only),
            ("shared", c.shared),
            ("oov", c.oov),
            ("feat_dim", c.feat_dim),
            ("dur_lo", c.dur_lo),
            ("dur_hi", c.dur_hi),
            ("len_lo", c.len_lo),
            ("len_hi", c.len_hi),
            ("branching", c.branching),
            ("source_train", c.source_train),
            ("source_dev", c.source_dev),
            ("source_test", c.source_test),
            ("target_adapt", c.target_adapt),
            ("target_dev", c.target_dev),
            ("target_test", c.target_test),
        ] {
            push("corpus", k, v.to_string());
        }
        push("corpus", "sigma", c.sigma.to_string());
        push("corpus", "oov_mass", c.oov_mass.to_string());
        push("corpus", "oov_confusion", c.oov_confusion.to_string());
        let s = &self.strategy;
        push("strategy", "kind", s.kind.name().to_string());
        push(
            "strategy",
            "run",
            self.run.iter().map(|k| k.name()).collect::<Vec<_>>().join(", "),
        );
        push("strategy", "mask_p", s.mask.p.to_string());
        push("strategy", "mask_spans", s.mask.spans.to_string());
        push(
            "strategy",
            "mask_width",
            s.mask.max_width.map_or("auto".to_string(), |w| w.to_string()),
        );
        push("strategy", "dur_min", s.dur_min.to_string());
        push("strategy", "dur_max", s.dur_max.to_string());
        push("strategy", "soft_prompt_len", s.soft_prompt_len.to_string());
        for (name, o) in [
            ("optim.source", &self.source),
            ("optim.adapt", &self.adapt),
            ("optim.te2sl", &self.te2sl_optim),
            ("optim.soft_prompt", &self.soft_prompt_optim),
        ] {
            push(name, "lr", o.lr.to_string());
            push(name, "batch_size", o.batch_size.to_string());
            push(name, "epochs", o.epochs.to_string());
            push(name, "weight_decay", o.weight_decay.to_string());
        }
        let e = &self.eval;
        push(
            "eval",
            "splits",
            e.splits.iter().map(|s| s.name()).collect::<Vec<_>>().join(", "),
        );
        push("eval", "max_len", e.max_len.to_string());
        push("eval", "source_dev", e.source_dev.name().to_string());
        push("eval", "target_dev", e.target_dev.name().to_string());
        out
    }

    pub fn to_ini_string(&self) -> String {
        let mut out = String::new();
        let mut current = String::new();
        for (s, k, v) in self.entries() {
            if s != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{s}]\n"));
                current = s;
            }
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// FNV-1a of the canonical INI text, as 16 hex digits.
    /// Hash of every setting except the output directory.
    pub fn digest(&self) -> String {
        let cfg = ExperimentConfig {
            output: None,
            ..self.clone()
        };
        format!("{:016x}", fnv1a(cfg.to_ini_string().as_bytes()))
    }

    pub fn mask(&self) -> &MaskSpec {
        &self.strategy.mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ini_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 7;
        cfg.strategy.mask.max_width = Some(3);
        cfg.run = vec![StrategyKind::None, StrategyKind::Te2sl];
        cfg.source.lr = 0.0125;
        let back = ExperimentConfig::from_ini_str(&cfg.to_ini_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn unknown_keys_and_sections_rejected() {
        assert!(ExperimentConfig::from_ini_str("[model]\nwidth = 3\n").is_err());
        assert!(ExperimentConfig::from_ini_str("[mystery]\nx = 1\n").is_err());
        assert!(ExperimentConfig::from_ini_str("[optim.source]\nlr = -1\n").is_err());
        assert!(ExperimentConfig::from_ini_str("[optim.adapt]\nepochs = lots\n").is_err());
    }

    #[test]
    fn overrides_split_on_last_dot() {
        let mut cfg = ExperimentConfig::default();
        cfg.set_override("optim.te2sl.epochs=3").unwrap();
        cfg.set_override("strategy.kind = upsample_mask").unwrap();
        assert_eq!(cfg.te2sl_optim.epochs, 3);
        assert_eq!(cfg.strategy.kind, StrategyKind::UpsampleMask);
        assert!(cfg.set_override("epochs=3").is_err());
    }

    #[test]
    fn corpus_seed_follows_global_seed() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 9;
        assert_eq!(cfg.corpus_config().seed, 9);
        cfg.corpus_seed = Some(2);
        assert_eq!(cfg.corpus_config().seed, 2);
    }

    #[test]
    fn digest_ignores_output_directory() {
        let mut a = ExperimentConfig::default();
        let d = a.digest();
        a.output = Some(PathBuf::from("runs/x"));
        assert_eq!(a.digest(), d);
        a.seed = 3;
        assert_ne!(a.digest(), d);
    }
}
