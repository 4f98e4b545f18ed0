use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::decode::NextTokenModel;
use crate::model::nn::{ConformerBlock, FeedForward, LayerNorm, Linear, LoraSpec, SelfAttention};
use crate::numerics::{Binder, Graph, ParamId, ParamStore, Tensor, Var};

pub const ENCODER_PREFIX: &str = "encoder.";
pub const PROJECTOR_PREFIX: &str = "projector.";
pub const LM_PREFIX: &str = "lm.";
pub const EMBED_NAME: &str = "lm.embed";

pub fn is_lora(name: &str) -> bool {
    name.contains(".lora_")
}

/// Which parameters a training phase may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Projector and LM blocks; encoder, embedding table and adapters frozen.
    Source,
    /// LoRA adapters only.
    Adapt,
    /// Nothing trains.
    Frozen,
}

#[derive(Clone, Debug)]
struct AudioEncoder {
    input: Linear,
    blocks: Vec<ConformerBlock>,
}

#[derive(Clone, Debug)]
struct Projector {
    first: Linear,
    second: Linear,
}

#[derive(Clone, Debug)]
struct LmLayer {
    attn_norm: LayerNorm,
    attn: SelfAttention,
    ff: FeedForward,
}

#[derive(Clone, Debug)]
struct DecoderLm {
    embed: ParamId,
    positions: ParamId,
    layers: Vec<LmLayer>,
    final_norm: LayerNorm,
}

/// Frozen audio encoder, frame-stacking projector and a causal decoder LM
/// with LoRA on every attention query and value projection. The input and
/// output embedding tables are tied.
#[derive(Clone, Debug)]
pub struct AsrModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    encoder: AudioEncoder,
    projector: Projector,
    lm: DecoderLm,
}

/// Logits of one LM pass plus the rows that predict transcription tokens.
#[derive(Debug)]
pub struct LmOutput {
    pub logits: Var,
    /// `true` on rows that predict a transcription token or the end of
    /// sequence.
    pub loss_mask: Vec<bool>,
    /// Row predicting the first transcription token.
    pub first_target_row: usize,
}

/// Splits `h` (`T × C`) into `⌊T/k⌋` rows of `k` concatenated frames,
/// dropping the trailing `T mod k` frames.
pub fn frame_stack(h: &Tensor, k: usize) -> Result<Tensor> {
    if k == 0 {
        return Err(Error::config("frame-stacking factor must be at least 1"));
    }
    let (t, c) = (h.rows(), h.cols());
    if t < k {
        return Err(Error::shape(format!(
            "utterance too short for frame stacking: {t} frames < k = {k}"
        )));
    }
    let kept = t / k;
    h.take_rows(kept * k).reshape(vec![kept, c * k])
}

impl AsrModel {
    /// Builds a model with seeded random weights.
    ///
    /// `embedding_prior` (`content_vocab × feat_dim`), when given, seeds the
    /// word rows of the embedding table as a fixed random linear image of
    /// those vectors. The toy corpus passes its acoustic prototypes here so
    /// that the frozen table plays the role of a pretrained LM whose word
    /// embeddings already sit near the corresponding acoustics.
    pub fn new(config: ModelConfig, seed: u64, embedding_prior: Option<&Tensor>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = config.enc_dim;
        let d = config.d_model;

        let input = Linear::new(&mut store, "encoder.input", config.feat_dim, c, true, false, &mut rng)?;
        let enc_cfg = config.encoder_block();
        let blocks = (0..config.enc_layers)
            .map(|i| ConformerBlock::new(&mut store, &format!("encoder.block{i}"), &enc_cfg, false, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let encoder = AudioEncoder { input, blocks };

        let projector = Projector {
            first: Linear::new(
                &mut store,
                "projector.first",
                c * config.stack,
                config.proj_hidden,
                true,
                true,
                &mut rng,
            )?,
            second: Linear::new(&mut store, "projector.second", config.proj_hidden, d, true, true, &mut rng)?,
        };

        let vocab = config.vocab_size();
        let mut table = Tensor::randn(&[vocab, d], 1.0, &mut rng);
        if let Some(prior) = embedding_prior {
            if prior.shape() != [config.content_vocab, config.feat_dim] {
                return Err(Error::shape(format!(
                    "embedding prior {:?} does not match {}×{}",
                    prior.shape(),
                    config.content_vocab,
                    config.feat_dim
                )));
            }
            let map = Tensor::randn(&[config.feat_dim, d], 1.0 / (config.feat_dim as f64).sqrt(), &mut rng);
            let mapped = prior.matmul(&map)?;
            let noise = Tensor::randn(&[config.content_vocab, d], 0.1, &mut rng);
            for i in 0..config.content_vocab {
                let row = table.row_mut(i);
                for j in 0..d {
                    row[j] = mapped.get(i, j) + noise.get(i, j);
                }
            }
        }
        let embed = store.add(EMBED_NAME, table, false)?;
        let positions = store.add(
            "lm.positions",
            Tensor::randn(&[config.max_positions, d], 0.1, &mut rng),
            true,
        )?;
        let lora = LoraSpec {
            rank: config.lora_rank,
            alpha: config.lora_alpha,
        };
        let layers = (0..config.lm_layers)
            .map(|i| -> Result<LmLayer> {
                Ok(LmLayer {
                    attn_norm: LayerNorm::new(&mut store, &format!("lm.layer{i}.attn_norm"), d, true)?,
                    attn: SelfAttention::new(
                        &mut store,
                        &format!("lm.layer{i}.attn"),
                        d,
                        config.lm_heads,
                        true,
                        true,
                        Some(lora),
                        &mut rng,
                    )?,
                    ff: FeedForward::new(&mut store, &format!("lm.layer{i}.ff"), d, config.lm_ff, true, &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let final_norm = LayerNorm::new(&mut store, "lm.final_norm", d, true)?;
        let lm = DecoderLm {
            embed,
            positions,
            layers,
            final_norm,
        };

        let mut model = Self {
            config,
            store,
            encoder,
            projector,
            lm,
        };
        model.set_phase(Phase::Source);
        Ok(model)
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.store.set_trainable(
            |name| match phase {
                Phase::Source => {
                    !name.starts_with(ENCODER_PREFIX) && name != EMBED_NAME && !is_lora(name)
                }
                Phase::Adapt => is_lora(name),
                Phase::Frozen => false,
            },
            true,
        );
        self.store.set_trainable(
            |name| match phase {
                Phase::Source => {
                    name.starts_with(ENCODER_PREFIX) || name == EMBED_NAME || is_lora(name)
                }
                Phase::Adapt => !is_lora(name),
                Phase::Frozen => true,
            },
            false,
        );
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size()
    }

    pub fn eos(&self) -> usize {
        self.config.eos()
    }

    /// Checksum over parameters whose names start with `prefix`.
    pub fn checksum_prefix(&self, prefix: &str) -> u64 {
        self.store.checksum_where(|n| n.starts_with(prefix))
    }

    pub fn embedding_table(&self) -> &Tensor {
        self.store.value(self.lm.embed)
    }

    /// Frozen encoder: `T_raw × F_raw` features to `T × C` states.
    pub fn encode_audio(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.rows() == 0 {
            return Err(Error::shape(format!(
                "encoder input must be a non-empty T×F matrix, got {:?}",
                x.shape()
            )));
        }
        if x.cols() != self.config.feat_dim {
            return Err(Error::shape(format!(
                "encoder input width {} vs feat_dim {}",
                x.cols(),
                self.config.feat_dim
            )));
        }
        let mut g = Graph::new();
        let mut b = Binder::new(&self.store);
        let xv = g.constant(x.clone());
        let mut h = self.encoder.input.forward(&mut g, &mut b, xv)?;
        for block in &self.encoder.blocks {
            h = block.forward(&mut g, &mut b, h)?;
        }
        Ok(g.value(h).clone())
    }

    /// Projector on the graph: `T' × (C·k)` to `T' × D`.
    pub fn project(&self, g: &mut Graph, b: &mut Binder, stacked: Var) -> Result<Var> {
        let width = g.shape(stacked)[1];
        let expected = self.config.enc_dim * self.config.stack;
        if width != expected {
            return Err(Error::shape(format!(
                "projector input width {width} vs C·k = {expected}"
            )));
        }
        let h = self.projector.first.forward(g, b, stacked)?;
        let h = g.silu(h);
        self.projector.second.forward(g, b, h)
    }

    /// Audio prompt `Z` for encoder states `h`, without gradients.
    pub fn audio_prompt(&self, h: &Tensor) -> Result<Tensor> {
        let stacked = frame_stack(h, self.config.stack)?;
        let mut g = Graph::new();
        let mut b = Binder::new(&self.store);
        let s = g.constant(stacked);
        let z = self.project(&mut g, &mut b, s)?;
        Ok(g.value(z).clone())
    }

    /// Features to audio prompt: encode, stack, project.
    pub fn audio_prompt_from_features(&self, x: &Tensor) -> Result<Tensor> {
        self.audio_prompt(&self.encode_audio(x)?)
    }

    /// Rows of the tied embedding table.
    pub fn token_embed(&self, ids: &[usize]) -> Result<Tensor> {
        let table = self.embedding_table();
        let v = table.rows();
        let d = table.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::TokenOutOfRange { id, vocab: v });
            }
            data.extend_from_slice(table.row(id));
        }
        Tensor::new(vec![ids.len(), d], data)
    }

    /// Causal LM over `[prompt; E_inst; E(prefix)]`.
    pub fn lm_logits(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        prompt: Option<Var>,
        prefix: &[usize],
    ) -> Result<LmOutput> {
        let d = self.config.d_model;
        let vocab = self.vocab_size();
        if let Some(&bad) = prefix.iter().find(|&&id| id >= vocab) {
            return Err(Error::TokenOutOfRange { id: bad, vocab });
        }
        let p = match prompt {
            Some(pv) => {
                let s = g.shape(pv);
                if s.len() != 2 || s[1] != d {
                    return Err(Error::shape(format!("prompt shape {s:?} does not have width D = {d}")));
                }
                s[0]
            }
            None => 0,
        };
        let start = p + self.config.inst_len;
        if start == 0 {
            return Err(Error::config(
                "no prompt and no instruction tokens: the first token has no predicting position",
            ));
        }
        let total = start + prefix.len();
        if total > self.config.max_positions {
            return Err(Error::shape(format!(
                "sequence of {total} positions exceeds max_positions {}",
                self.config.max_positions
            )));
        }

        let table = b.var(g, self.lm.embed);
        let mut ids = self.config.instruction_ids();
        ids.extend_from_slice(prefix);
        let text = g.gather_rows(table, &ids)?;
        let seq = match prompt {
            Some(pv) => g.concat_rows(&[pv, text])?,
            None => text,
        };
        let pos_table = b.var(g, self.lm.positions);
        let pos_ids: Vec<usize> = (0..total).collect();
        let pos = g.gather_rows(pos_table, &pos_ids)?;
        let mut x = g.add(seq, pos)?;
        for layer in &self.lm.layers {
            let h = layer.attn_norm.forward(g, b, x)?;
            let h = layer.attn.forward(g, b, h)?;
            x = g.add(x, h)?;
            let f = layer.ff.forward(g, b, x)?;
            x = g.add(x, f)?;
        }
        let h = self.lm.final_norm.forward(g, b, x)?;
        let logits = g.matmul_nt(h, table)?;
        let mut loss_mask = vec![false; total];
        for m in &mut loss_mask[start - 1..] {
            *m = true;
        }
        Ok(LmOutput {
            logits,
            loss_mask,
            first_target_row: start - 1,
        })
    }

    /// Teacher-forced cross-entropy over `y` followed by end-of-sequence.
    pub fn transcription_loss(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        prompt: Option<Var>,
        y: &[usize],
    ) -> Result<Var> {
        let out = self.lm_logits(g, b, prompt, y)?;
        let rows = out.loss_mask.len();
        let mut targets = vec![0; rows];
        for (j, &tok) in y.iter().chain(std::iter::once(&self.eos())).enumerate() {
            targets[out.first_target_row + j] = tok;
        }
        g.softmax_cross_entropy(out.logits, &targets, &out.loss_mask)
    }

    /// Loss of one paired example with the real audio prompt built from
    /// cached encoder states, on the graph (projector gradients flow).
    pub fn paired_loss(&self, g: &mut Graph, b: &mut Binder, h: &Tensor, y: &[usize]) -> Result<Var> {
        let stacked = frame_stack(h, self.config.stack)?;
        let s = g.constant(stacked);
        let z = self.project(g, b, s)?;
        self.transcription_loss(g, b, Some(z), y)
    }

    /// Replaces parameter values by name from `tensors`; every parameter
    /// must be present with a matching shape.
    pub fn load_values(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        self.store.load_named(tensors)
    }
}

impl NextTokenModel for AsrModel {
    fn next_logits(&self, prompt: Option<&Tensor>, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut b = Binder::new(&self.store);
        let p = prompt.map(|t| g.constant(t.clone()));
        let out = self.lm_logits(&mut g, &mut b, p, prefix)?;
        let logits = g.value(out.logits);
        Ok(logits.row(logits.rows() - 1).to_vec())
    }

    fn eos(&self) -> usize {
        self.config.eos()
    }
}
