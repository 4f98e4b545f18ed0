use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::upsample::{pool_frames, upsample_deterministic};
use crate::error::{Error, Result};
use crate::model::nn::{ConformerBlock, ConformerConfig, Linear};
use crate::model::{AsrModel, EncodedPair};
use crate::numerics::{minibatches, train_step, AdamW, Binder, Graph, OptimSettings, ParamStore, Tensor, Var};
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Te2slConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub kernel: usize,
}

impl Default for Te2slConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 32,
            heads: 4,
            ff_dim: 64,
            kernel: 5,
        }
    }
}

impl Te2slConfig {
    fn block(&self) -> ConformerConfig {
        ConformerConfig {
            dim: self.hidden,
            heads: self.heads,
            ff_dim: self.ff_dim,
            kernel: self.kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.block().validate()
    }
}

/// Refinement module: input linear `D → h`, Conformer blocks of width `h`,
/// output linear `h → D`. Length preserving.
#[derive(Clone, Debug)]
pub struct Te2slModule {
    pub config: Te2slConfig,
    pub d_model: usize,
    pub store: ParamStore,
    net: Net,
}

#[derive(Clone, Debug)]
struct Net {
    d_model: usize,
    input: Linear,
    blocks: Vec<ConformerBlock>,
    output: Linear,
}

impl Net {
    fn forward(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Result<Var> {
        let width = g.shape(x)[1];
        if width != self.d_model {
            return Err(Error::shape(format!(
                "refinement input width {width} vs D = {}",
                self.d_model
            )));
        }
        let mut h = self.input.forward(g, b, x)?;
        for block in &self.blocks {
            h = block.forward(g, b, h)?;
        }
        self.output.forward(g, b, h)
    }

    fn mse_loss(&self, g: &mut Graph, b: &mut Binder, upsampled: &Tensor, target: &Tensor) -> Result<Var> {
        let x = g.constant(upsampled.clone());
        let z = self.forward(g, b, x)?;
        let t = g.constant(target.clone());
        g.mse(z, t)
    }
}

const CONFIG_TENSOR: &str = "__config";

impl Te2slModule {
    pub fn new(config: Te2slConfig, d_model: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if d_model == 0 {
            return Err(Error::config("refinement module width D must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let input = Linear::new(&mut store, "te2sl.input", d_model, h, true, true, &mut rng)?;
        let blocks = (0..config.layers)
            .map(|i| ConformerBlock::new(&mut store, &format!("te2sl.block{i}"), &config.block(), true, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let output = Linear::new(&mut store, "te2sl.output", h, d_model, true, true, &mut rng)?;
        Ok(Self {
            config,
            d_model,
            store,
            net: Net {
                d_model,
                input,
                blocks,
                output,
            },
        })
    }

    /// Parameters are bound through `b`, which must wrap `self.store`.
    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Result<Var> {
        self.net.forward(g, b, x)
    }

    /// Frame-wise MSE between the refined `upsampled` and `target`.
    pub fn mse_loss(&self, g: &mut Graph, b: &mut Binder, upsampled: &Tensor, target: &Tensor) -> Result<Var> {
        self.net.mse_loss(g, b, upsampled, target)
    }

    /// Parameters plus a `__config` tensor describing the architecture.
    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let c = &self.config;
        let echo = [c.layers, c.hidden, c.heads, c.ff_dim, c.kernel, self.d_model]
            .map(|v| v as f64)
            .to_vec();
        let mut out = vec![(
            CONFIG_TENSOR.to_string(),
            Tensor::new(vec![echo.len()], echo).expect("finite config echo"),
        )];
        out.extend(self.store.named_values());
        out
    }

    pub fn from_tensors(tensors: &[(String, Tensor)]) -> Result<Self> {
        let echo = tensors
            .iter()
            .find(|(n, _)| n == CONFIG_TENSOR)
            .map(|(_, t)| t.data())
            .ok_or_else(|| Error::format("refinement checkpoint lacks `__config`"))?;
        if echo.len() != 6 || echo.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
            return Err(Error::format("malformed refinement `__config`"));
        }
        let u = |i: usize| echo[i] as usize;
        let config = Te2slConfig {
            layers: u(0),
            hidden: u(1),
            heads: u(2),
            ff_dim: u(3),
            kernel: u(4),
        };
        let mut m = Self::new(config, u(5), 0)?;
        m.store.load_named(tensors)?;
        Ok(m)
    }
}

/// Refined pseudo prompt for an already upsampled `L' × D` input.
pub fn te2sl_forward(module: &Te2slModule, upsampled: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let mut b = Binder::new(&module.store);
    let x = g.constant(upsampled.clone());
    let z = module.forward(&mut g, &mut b, x)?;
    Ok(g.value(z).clone())
}

/// One alignment example: upsampled token embeddings and the audio prompt
/// they should map to.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentPair {
    pub upsampled: Tensor,
    pub target: Tensor,
}

/// Alignment pairs for `pairs`; utterances whose prompt has fewer frames
/// than tokens are dropped and counted.
///
/// Token embeddings are stretched to the `k·T'` raw frames behind a
/// `T'`-row prompt and pooled in groups of `k`, so word boundaries blend
/// the way they do after frame stacking.
pub fn alignment_pairs(model: &AsrModel, pairs: &[EncodedPair], exec: Exec) -> Result<(Vec<AlignmentPair>, usize)> {
    let built = exec.map(pairs, |p| -> Result<Option<AlignmentPair>> {
        let target = model.audio_prompt(&p.states)?;
        if target.rows() < p.tokens.len() {
            return Ok(None);
        }
        let k = model.config.stack;
        let raw = upsample_deterministic(&model.token_embed(&p.tokens)?, k * target.rows())?;
        let upsampled = pool_frames(&raw, k)?;
        Ok(Some(AlignmentPair { upsampled, target }))
    });
    let mut out = Vec::with_capacity(pairs.len());
    let mut skipped = 0;
    for b in built {
        match b? {
            Some(a) => out.push(a),
            None => skipped += 1,
        }
    }
    Ok((out, skipped))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Te2slTrainReport {
    pub epoch_losses: Vec<f64>,
    pub skipped: usize,
    pub used: usize,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Fits `module` so that refined upsampled embeddings match the audio
/// prompts of `pairs`. The ASR model is only read.
pub fn train_te2sl(
    module: &mut Te2slModule,
    model: &AsrModel,
    pairs: &[EncodedPair],
    settings: &OptimSettings,
    seed: u64,
    exec: Exec,
) -> Result<Te2slTrainReport> {
    settings.validate("optim.te2sl")?;
    let started = Instant::now();
    if module.d_model != model.config.d_model {
        return Err(Error::config(format!(
            "refinement width {} vs model width {}",
            module.d_model, model.config.d_model
        )));
    }
    let (data, skipped) = alignment_pairs(model, pairs, exec)?;
    if skipped > 0 {
        info!("refinement training skipped {skipped} of {} utterances with T' < L", pairs.len());
    }
    if data.is_empty() || 2 * skipped > pairs.len() {
        return Err(Error::config(format!(
            "{skipped} of {} utterances have fewer prompt frames than tokens",
            pairs.len()
        )));
    }
    let lengths: Vec<usize> = data.iter().map(|a| a.target.rows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = AdamW::new(settings.adamw(), &module.store);
    let mut epoch_losses = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let mut total = 0.0;
        for batch in minibatches(&lengths, settings.batch_size, &mut rng) {
            let items: Vec<&AlignmentPair> = batch.iter().map(|&i| &data[i]).collect();
            let net = &module.net;
            let loss = train_step(&mut module.store, &mut opt, &items, exec, |g, b, a| {
                net.mse_loss(g, b, &a.upsampled, &a.target)
            })?;
            total += loss * items.len() as f64;
        }
        let mean = total / data.len() as f64;
        info!("te2sl epoch {}: mse {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    Ok(Te2slTrainReport {
        epoch_losses,
        skipped,
        used: data.len(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Pooled frame MSE of refined and of raw upsampled embeddings against the
/// audio prompts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub refined_mse: f64,
    pub raw_mse: f64,
}

impl GapReport {
    pub fn ratio(&self) -> f64 {
        self.refined_mse / self.raw_mse
    }
}

pub fn modality_gap(module: &Te2slModule, data: &[AlignmentPair], exec: Exec) -> Result<GapReport> {
    if data.is_empty() {
        return Err(Error::config("no alignment pairs to measure"));
    }
    let sq = |a: &Tensor, b: &Tensor| -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    let per = exec.map(data, |a| -> Result<(f64, f64, usize)> {
        let refined = te2sl_forward(module, &a.upsampled)?;
        Ok((sq(&refined, &a.target), sq(&a.upsampled, &a.target), a.target.len()))
    });
    let (mut r, mut u, mut n) = (0.0, 0.0, 0usize);
    for p in per {
        let (a, b, c) = p?;
        r += a;
        u += b;
        n += c;
    }
    Ok(GapReport {
        refined_mse: r / n as f64,
        raw_mse: u / n as f64,
    })
}
