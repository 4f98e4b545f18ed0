use serde::{Deserialize, Serialize};

use super::mask::{time_mask, MaskSpec};
use super::soft_prompt::SoftPrompt;
use super::te2sl::{te2sl_forward, Te2slModule};
use super::upsample::{check_duration_bounds, pool_frames, upsample_random};
use crate::corpus::mix;
use crate::error::{Error, Result};
use crate::model::AsrModel;
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    None,
    TextOnlyFt,
    SoftPrompt,
    UpsampleMask,
    Te2sl,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::None,
        StrategyKind::TextOnlyFt,
        StrategyKind::SoftPrompt,
        StrategyKind::UpsampleMask,
        StrategyKind::Te2sl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::None => "none",
            StrategyKind::TextOnlyFt => "text_only_ft",
            StrategyKind::SoftPrompt => "soft_prompt",
            StrategyKind::UpsampleMask => "upsample_mask",
            StrategyKind::Te2sl => "te2sl",
        }
    }

    /// Row label in the summary table.
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::None => "Baseline (no adaptation)",
            StrategyKind::TextOnlyFt => "Text-only fine-tuning",
            StrategyKind::SoftPrompt => "Soft prompt",
            StrategyKind::UpsampleMask => "Upsample + mask",
            StrategyKind::Te2sl => "TE2SL",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = StrategyKind::ALL.iter().map(|k| k.name()).collect();
                Error::config(format!("unknown strategy `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// A strategy kind plus the settings that shape its pseudo prompts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub mask: MaskSpec,
    /// Per-token duration bounds in raw frames; upsampled embeddings are
    /// pooled by the model's stacking factor afterwards.
    pub dur_min: usize,
    pub dur_max: usize,
    pub soft_prompt_len: usize,
}

impl Strategy {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            mask: MaskSpec {
                p: 0.0,
                ..MaskSpec::default()
            },
            dur_min: 6,
            dur_max: 12,
            soft_prompt_len: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mask.validate()?;
        check_duration_bounds(self.dur_min, self.dur_max)?;
        if self.soft_prompt_len == 0 {
            return Err(Error::config("strategy.soft_prompt_len must be positive"));
        }
        Ok(())
    }

    /// Errors unless the artifacts this kind needs are present.
    pub fn check_artifacts(&self, te2sl: Option<&Te2slModule>, soft: Option<&SoftPrompt>) -> Result<()> {
        match self.kind {
            StrategyKind::Te2sl if te2sl.is_none() => {
                Err(Error::config("strategy te2sl needs a trained refinement module"))
            }
            StrategyKind::SoftPrompt if soft.is_none() => {
                Err(Error::config("strategy soft_prompt needs a learned soft prompt"))
            }
            _ => Ok(()),
        }
    }
}

/// Prompt standing in for audio while adapting on transcript `y`.
pub fn build_pseudo_prompt(
    strategy: &Strategy,
    y: &[usize],
    model: &AsrModel,
    te2sl: Option<&Te2slModule>,
    soft: Option<&SoftPrompt>,
    seed: u64,
) -> Result<Option<Tensor>> {
    strategy.check_artifacts(te2sl, soft)?;
    let upsampled = || -> Result<Tensor> {
        let raw = upsample_random(&model.token_embed(y)?, strategy.dur_min, strategy.dur_max, mix(seed, 1))?;
        pool_frames(&raw, model.config.stack)
    };
    match strategy.kind {
        StrategyKind::None | StrategyKind::TextOnlyFt => Ok(None),
        StrategyKind::SoftPrompt => Ok(soft.map(|p| p.tensor().clone())),
        StrategyKind::UpsampleMask => Ok(Some(time_mask(&upsampled()?, &strategy.mask, mix(seed, 2))?)),
        StrategyKind::Te2sl => {
            let module = te2sl.expect("checked above");
            let refined = te2sl_forward(module, &upsampled()?)?;
            Ok(Some(time_mask(&refined, &strategy.mask, mix(seed, 2))?))
        }
    }
}
