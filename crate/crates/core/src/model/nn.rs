//! Parameterized layers shared by the audio encoder, the decoder LM and the
//! refinement module. Each layer only stores [`ParamId`]s; values live in
//! the owning [`ParamStore`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{multi_head_attention, Binder, Graph, ParamId, ParamStore, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Weight `d_in × d_out` drawn from N(0, 1/d_in); zero bias.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let std = 1.0 / (d_in as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::randn(&[d_in, d_out], std, rng),
            trainable,
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]), trainable)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            d_in,
            d_out,
        })
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Result<Var> {
        let w = b.var(g, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(bias) => {
                let bv = b.var(g, bias);
                g.add_row(y, bv)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, trainable: bool) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0), trainable)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim]), trainable)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Result<Var> {
        let gamma = b.var(g, self.gamma);
        let beta = b.var(g, self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

/// Low-rank adapter pair: `A` is `r × d_in`, `B` is `d_out × r`.
#[derive(Clone, Debug)]
pub struct LoraPair {
    pub a: ParamId,
    pub b: ParamId,
    pub scale: f64,
}

/// Linear layer with an optional LoRA path:
/// `y = x·W + (α/r)·(x·Aᵀ)·Bᵀ`. `B` starts at zero, so a fresh adapter
/// leaves the base output unchanged.
#[derive(Clone, Debug)]
pub struct LoraLinear {
    pub base: Linear,
    pub lora: Option<LoraPair>,
}

impl LoraLinear {
    pub fn plain(base: Linear) -> Self {
        Self { base, lora: None }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_adapter<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        base: Linear,
        rank: usize,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if rank == 0 || rank > base.d_in.min(base.d_out) {
            return Err(Error::config(format!(
                "LoRA rank {rank} invalid for a {}×{} matrix",
                base.d_in, base.d_out
            )));
        }
        let std = 1.0 / (base.d_in as f64).sqrt();
        let a = store.add(
            format!("{name}.lora_a"),
            Tensor::randn(&[rank, base.d_in], std, rng),
            true,
        )?;
        let b = store.add(format!("{name}.lora_b"), Tensor::zeros(&[base.d_out, rank]), true)?;
        Ok(Self {
            base,
            lora: Some(LoraPair {
                a,
                b,
                scale: alpha / rank as f64,
            }),
        })
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Result<Var> {
        let y = self.base.forward(g, b, x)?;
        match &self.lora {
            None => Ok(y),
            Some(pair) => {
                let a = b.var(g, pair.a);
                let bm = b.var(g, pair.b);
                let down = g.matmul_nt(x, a)?;
                let up = g.matmul_nt(down, bm)?;
                let up = g.scale(up, pair.scale);
                g.add(y, up)
            }
        }
    }
}

/// Pre-norm feed-forward: LN → linear → SiLU → linear.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub norm: LayerNorm,
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim, trainable)?,
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, trainable, rng)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true, trainable, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Result<Var> {
        let h = self.norm.forward(g, b, x)?;
        let h = self.up.forward(g, b, h)?;
        let h = g.silu(h);
        self.down.forward(g, b, h)
    }
}

/// Multi-head self-attention with optional adapters on the query and value
/// projections.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub q: LoraLinear,
    pub k: Linear,
    pub v: LoraLinear,
    pub o: Linear,
    pub heads: usize,
    pub causal: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct LoraSpec {
    pub rank: usize,
    pub alpha: f64,
}

impl SelfAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        causal: bool,
        trainable: bool,
        lora: Option<LoraSpec>,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config(format!(
                "{name}: width {dim} not divisible by {heads} heads"
            )));
        }
        let q = Linear::new(store, &format!("{name}.q"), dim, dim, false, trainable, rng)?;
        let k = Linear::new(store, &format!("{name}.k"), dim, dim, false, trainable, rng)?;
        let v = Linear::new(store, &format!("{name}.v"), dim, dim, false, trainable, rng)?;
        let o = Linear::new(store, &format!("{name}.o"), dim, dim, false, trainable, rng)?;
        let (q, v) = match lora {
            Some(spec) => (
                LoraLinear::with_adapter(store, &format!("{name}.q"), q, spec.rank, spec.alpha, rng)?,
                LoraLinear::with_adapter(store, &format!("{name}.v"), v, spec.rank, spec.alpha, rng)?,
            ),
            None => (LoraLinear::plain(q), LoraLinear::plain(v)),
        };
        Ok(Self {
            q,
            k,
            v,
            o,
            heads,
            causal,
        })
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Result<Var> {
        let q = self.q.forward(g, b, x)?;
        let k = self.k.forward(g, b, x)?;
        let v = self.v.forward(g, b, x)?;
        let a = multi_head_attention(g, q, k, v, self.heads, self.causal)?;
        self.o.forward(g, b, a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformerConfig {
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub kernel: usize,
}

impl ConformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.ff_dim == 0 {
            return Err(Error::config("conformer dimensions must be positive"));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::config(format!(
                "conformer width {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!(
                "conformer kernel width must be odd, got {}",
                self.kernel
            )));
        }
        Ok(())
    }
}

/// Convolution sublayer: LN → pointwise (×2 width) → GLU → depthwise conv
/// → LN → SiLU → pointwise.
#[derive(Clone, Debug)]
pub struct ConvModule {
    pub norm: LayerNorm,
    pub pointwise_in: Linear,
    pub depthwise: ParamId,
    pub depthwise_bias: ParamId,
    pub mid_norm: LayerNorm,
    pub pointwise_out: Linear,
    pub dim: usize,
}

impl ConvModule {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        kernel: usize,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let norm = LayerNorm::new(store, &format!("{name}.norm"), dim, trainable)?;
        let pointwise_in =
            Linear::new(store, &format!("{name}.pw_in"), dim, 2 * dim, true, trainable, rng)?;
        let depthwise = store.add(
            format!("{name}.dw.weight"),
            Tensor::randn(&[kernel, dim], 1.0 / (kernel as f64).sqrt(), rng),
            trainable,
        )?;
        let depthwise_bias = store.add(format!("{name}.dw.bias"), Tensor::zeros(&[dim]), trainable)?;
        let mid_norm = LayerNorm::new(store, &format!("{name}.mid_norm"), dim, trainable)?;
        let pointwise_out =
            Linear::new(store, &format!("{name}.pw_out"), dim, dim, true, trainable, rng)?;
        Ok(Self {
            norm,
            pointwise_in,
            depthwise,
            depthwise_bias,
            mid_norm,
            pointwise_out,
            dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Result<Var> {
        let h = self.norm.forward(g, b, x)?;
        let h = self.pointwise_in.forward(g, b, h)?;
        let content = g.slice_cols(h, 0, self.dim)?;
        let gate = g.slice_cols(h, self.dim, self.dim)?;
        let gate = g.sigmoid(gate);
        let h = g.mul(content, gate)?;
        let k = b.var(g, self.depthwise);
        let h = g.depthwise_conv1d(h, k)?;
        let kb = b.var(g, self.depthwise_bias);
        let h = g.add_row(h, kb)?;
        let h = self.mid_norm.forward(g, b, h)?;
        let h = g.silu(h);
        self.pointwise_out.forward(g, b, h)
    }
}

/// Conformer block: half-step FFN → self-attention → convolution →
/// half-step FFN → layer norm, each sublayer residual.
#[derive(Clone, Debug)]
pub struct ConformerBlock {
    pub ff1: FeedForward,
    pub attn_norm: LayerNorm,
    pub attn: SelfAttention,
    pub conv: ConvModule,
    pub ff2: FeedForward,
    pub out_norm: LayerNorm,
}

impl ConformerBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cfg: &ConformerConfig,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            ff1: FeedForward::new(store, &format!("{name}.ff1"), cfg.dim, cfg.ff_dim, trainable, rng)?,
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), cfg.dim, trainable)?,
            attn: SelfAttention::new(
                store,
                &format!("{name}.attn"),
                cfg.dim,
                cfg.heads,
                false,
                trainable,
                None,
                rng,
            )?,
            conv: ConvModule::new(store, &format!("{name}.conv"), cfg.dim, cfg.kernel, trainable, rng)?,
            ff2: FeedForward::new(store, &format!("{name}.ff2"), cfg.dim, cfg.ff_dim, trainable, rng)?,
            out_norm: LayerNorm::new(store, &format!("{name}.out_norm"), cfg.dim, trainable)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Result<Var> {
        let f = self.ff1.forward(g, b, x)?;
        let f = g.scale(f, 0.5);
        let x = g.add(x, f)?;
        let h = self.attn_norm.forward(g, b, x)?;
        let h = self.attn.forward(g, b, h)?;
        let x = g.add(x, h)?;
        let c = self.conv.forward(g, b, x)?;
        let x = g.add(x, c)?;
        let f = self.ff2.forward(g, b, x)?;
        let f = g.scale(f, 0.5);
        let x = g.add(x, f)?;
        self.out_norm.forward(g, b, x)
    }
}
