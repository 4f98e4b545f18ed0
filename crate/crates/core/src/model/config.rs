use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::nn::ConformerConfig;

/// Shape of the toy speech-LM stack.
///
/// Token ids are laid out as `[0, content_vocab)` for words, then the
/// end-of-sequence id, then `inst_len` reserved instruction ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Raw feature width `F_raw`.
    pub feat_dim: usize,
    /// Encoder width `C`.
    pub enc_dim: usize,
    pub enc_layers: usize,
    pub enc_heads: usize,
    pub enc_ff: usize,
    pub enc_kernel: usize,
    /// Frame-stacking factor `k`.
    pub stack: usize,
    pub proj_hidden: usize,
    /// LM width `D`.
    pub d_model: usize,
    pub lm_layers: usize,
    pub lm_heads: usize,
    pub lm_ff: usize,
    pub max_positions: usize,
    pub content_vocab: usize,
    /// Instruction length `L_inst`.
    pub inst_len: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feat_dim: 16,
            enc_dim: 32,
            enc_layers: 1,
            enc_heads: 2,
            enc_ff: 64,
            enc_kernel: 5,
            stack: 5,
            proj_hidden: 64,
            d_model: 32,
            lm_layers: 2,
            lm_heads: 4,
            lm_ff: 64,
            max_positions: 96,
            content_vocab: 64,
            inst_len: 2,
            lora_rank: 8,
            lora_alpha: 16.0,
        }
    }
}

const ECHO_VERSION: f64 = 1.0;

impl ModelConfig {
    /// A few-hundred-parameter configuration for gradient checks and
    /// overfitting tests.
    pub fn tiny() -> Self {
        Self {
            feat_dim: 4,
            enc_dim: 8,
            enc_layers: 1,
            enc_heads: 2,
            enc_ff: 8,
            enc_kernel: 3,
            stack: 2,
            proj_hidden: 8,
            d_model: 8,
            lm_layers: 1,
            lm_heads: 2,
            lm_ff: 8,
            max_positions: 32,
            content_vocab: 6,
            inst_len: 2,
            lora_rank: 2,
            lora_alpha: 4.0,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.content_vocab + 1 + self.inst_len
    }

    pub fn eos(&self) -> usize {
        self.content_vocab
    }

    pub fn instruction_ids(&self) -> Vec<usize> {
        (0..self.inst_len).map(|i| self.content_vocab + 1 + i).collect()
    }

    pub fn encoder_block(&self) -> ConformerConfig {
        ConformerConfig {
            dim: self.enc_dim,
            heads: self.enc_heads,
            ff_dim: self.enc_ff,
            kernel: self.enc_kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feat_dim", self.feat_dim),
            ("enc_dim", self.enc_dim),
            ("stack", self.stack),
            ("proj_hidden", self.proj_hidden),
            ("d_model", self.d_model),
            ("lm_heads", self.lm_heads),
            ("lm_ff", self.lm_ff),
            ("max_positions", self.max_positions),
            ("content_vocab", self.content_vocab),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("model.{name} must be positive")));
            }
        }
        self.encoder_block().validate()?;
        if self.d_model % self.lm_heads != 0 {
            return Err(Error::config(format!(
                "model.d_model {} not divisible by lm_heads {}",
                self.d_model, self.lm_heads
            )));
        }
        if self.lora_rank == 0 || self.lora_rank > self.d_model {
            return Err(Error::config(format!(
                "model.lora_rank must be in [1, {}], got {}",
                self.d_model, self.lora_rank
            )));
        }
        if !(self.lora_alpha > 0.0) {
            return Err(Error::config("model.lora_alpha must be positive"));
        }
        Ok(())
    }

    /// Flat numeric echo stored alongside checkpoint tensors.
    pub fn to_echo(&self) -> Vec<f64> {
        vec![
            ECHO_VERSION,
            self.feat_dim as f64,
            self.enc_dim as f64,
            self.enc_layers as f64,
            self.enc_heads as f64,
            self.enc_ff as f64,
            self.enc_kernel as f64,
            self.stack as f64,
            self.proj_hidden as f64,
            self.d_model as f64,
            self.lm_layers as f64,
            self.lm_heads as f64,
            self.lm_ff as f64,
            self.max_positions as f64,
            self.content_vocab as f64,
            self.inst_len as f64,
            self.lora_rank as f64,
            self.lora_alpha,
        ]
    }

    pub fn from_echo(v: &[f64]) -> Result<Self> {
        if v.len() != 18 || v[0] != ECHO_VERSION {
            return Err(Error::format("model config echo has an unexpected layout"));
        }
        let u = |i: usize| -> Result<usize> {
            let x = v[i];
            if x < 0.0 || x.fract() != 0.0 {
                return Err(Error::format(format!("config echo field {i} is not a count: {x}")));
            }
            Ok(x as usize)
        };
        let cfg = Self {
            feat_dim: u(1)?,
            enc_dim: u(2)?,
            enc_layers: u(3)?,
            enc_heads: u(4)?,
            enc_ff: u(5)?,
            enc_kernel: u(6)?,
            stack: u(7)?,
            proj_hidden: u(8)?,
            d_model: u(9)?,
            lm_layers: u(10)?,
            lm_heads: u(11)?,
            lm_ff: u(12)?,
            max_positions: u(13)?,
            content_vocab: u(14)?,
            inst_len: u(15)?,
            lora_rank: u(16)?,
            lora_alpha: v[17],
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trip() {
        let cfg = ModelConfig {
            lora_alpha: 12.5,
            ..Default::default()
        };
        assert_eq!(ModelConfig::from_echo(&cfg.to_echo()).unwrap(), cfg);
    }

    #[test]
    fn token_layout() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.eos(), 64);
        assert_eq!(cfg.instruction_ids(), vec![65, 66]);
        assert_eq!(cfg.vocab_size(), 67);
    }

    #[test]
    fn rejects_bad_rank_and_heads() {
        let bad = ModelConfig {
            lora_rank: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            lm_heads: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
