//! Text-only adaptation strategies: pseudo-prompt construction, the
//! refinement module and its training, and the soft-prompt baseline.

mod mask;
mod soft_prompt;
mod strategy;
mod te2sl;
mod upsample;

pub use mask::{apply_mask, time_mask, MaskSpec};
pub use soft_prompt::{learn_soft_prompt, SoftPrompt, SoftPromptReport, SOFT_PROMPT_NAME};
pub use strategy::{build_pseudo_prompt, Strategy, StrategyKind};
pub use te2sl::{
    alignment_pairs, modality_gap, te2sl_forward, train_te2sl, AlignmentPair, GapReport, Te2slConfig,
    Te2slModule, Te2slTrainReport,
};
pub use upsample::{
    check_duration_bounds, deterministic_durations, pool_frames, random_durations, repeat_rows, upsample_deterministic,
    upsample_random,
};
