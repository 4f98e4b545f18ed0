//! Text-only domain adaptation for prompt-conditioned speech language models.

pub mod error;
pub mod fnv;
pub mod numerics;

pub use error::{Error, Result};
pub mod model;
pub mod par;
pub mod corpus;
pub mod metrics;
pub mod adaptation;
pub mod harness;
