//! Speech-LM stack: frozen audio encoder, frame stacking, projector and a
//! decoder LM with LoRA adapters.

mod asr;
pub mod checkpoint;
mod config;
mod decode;
pub mod nn;

pub use asr::{
    frame_stack, is_lora, AsrModel, LmOutput, Phase, EMBED_NAME, ENCODER_PREFIX, LM_PREFIX,
    PROJECTOR_PREFIX,
};
pub use config::ModelConfig;
pub use decode::{argmax, greedy_decode, NextTokenModel};

use crate::numerics::Tensor;

/// Transcript with its cached encoder states. The encoder never trains, so
/// states are computed once per utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPair {
    pub id: String,
    pub tokens: Vec<usize>,
    pub states: Tensor,
}
