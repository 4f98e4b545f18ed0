//! Finite-difference checks of every differentiable building block on
//! tiny random shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adaptation::{Te2slConfig, Te2slModule};
use crate::error::Result;
use crate::model::nn::{LayerNorm, Linear, LoraLinear};
use crate::model::{frame_stack, is_lora, AsrModel, ModelConfig, Phase};
use crate::numerics::{
    grad_check, multi_head_attention, GradCheckReport, ParamStore, Tensor,
};

pub const GRAD_EPS: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-5;
pub const END_TO_END_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct GradCase {
    pub name: &'static str,
    pub seed: u64,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub coordinates: usize,
    pub tolerance: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn case(name: &'static str, seed: u64, tolerance: f64, r: GradCheckReport) -> GradCase {
    GradCase {
        name,
        seed,
        max_rel_error: r.max_rel_error,
        worst_param: r.worst_param,
        coordinates: r.coordinates,
        tolerance,
    }
}

/// Probe weights are drawn once so every evaluation of `f` sees the same.
fn probe_weights(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn check_matmul(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let a = s.add("a", Tensor::randn(&[3, 4], 1.0, &mut rng), true)?;
    let b = s.add("b", Tensor::randn(&[4, 5], 1.0, &mut rng), true)?;
    let c = s.add("c", Tensor::randn(&[2, 4], 1.0, &mut rng), true)?;
    let w1 = probe_weights(15, &mut rng);
    let w2 = probe_weights(6, &mut rng);
    grad_check(&mut s, GRAD_EPS, |g, bd| {
        let (av, bv, cv) = (bd.var(g, a), bd.var(g, b), bd.var(g, c));
        let y = g.matmul(av, bv)?;
        let z = g.matmul_nt(av, cv)?;
        let l1 = g.weighted_sum(y, &w1)?;
        let l2 = g.weighted_sum(z, &w2)?;
        g.add(l1, l2)
    })
}

fn check_layer_norm(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::randn(&[3, 6], 1.0, &mut rng), true)?;
    let ln = LayerNorm::new(&mut s, "ln", 6, true)?;
    for name in ["ln.gamma", "ln.beta"] {
        let id = s.id(name).expect("registered");
        s.get_mut(id).value = Tensor::randn(&[6], 1.0, &mut rng);
    }
    let w = probe_weights(18, &mut rng);
    grad_check(&mut s, GRAD_EPS, |g, b| {
        let xv = b.var(g, x);
        let y = ln.forward(g, b, xv)?;
        g.weighted_sum(y, &w)
    })
}

fn check_attention(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::randn(&[4, 6], 1.0, &mut rng), true)?;
    let wq = s.add("wq", Tensor::randn(&[6, 6], 0.5, &mut rng), true)?;
    let wk = s.add("wk", Tensor::randn(&[6, 6], 0.5, &mut rng), true)?;
    let wv = s.add("wv", Tensor::randn(&[6, 6], 0.5, &mut rng), true)?;
    let w1 = probe_weights(24, &mut rng);
    let w2 = probe_weights(24, &mut rng);
    grad_check(&mut s, GRAD_EPS, |g, b| {
        let xv = b.var(g, x);
        let q = b.var(g, wq);
        let k = b.var(g, wk);
        let v = b.var(g, wv);
        let q = g.matmul(xv, q)?;
        let k = g.matmul(xv, k)?;
        let v = g.matmul(xv, v)?;
        let causal = multi_head_attention(g, q, k, v, 2, true)?;
        let full = multi_head_attention(g, q, k, v, 3, false)?;
        let l1 = g.weighted_sum(causal, &w1)?;
        let l2 = g.weighted_sum(full, &w2)?;
        g.add(l1, l2)
    })
}

fn check_depthwise_conv(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let x = s.add("x", Tensor::randn(&[6, 3], 1.0, &mut rng), true)?;
    let k = s.add("kernel", Tensor::randn(&[3, 3], 1.0, &mut rng), true)?;
    let w = probe_weights(18, &mut rng);
    grad_check(&mut s, GRAD_EPS, |g, b| {
        let xv = b.var(g, x);
        let kv = b.var(g, k);
        let y = g.depthwise_conv1d(xv, kv)?;
        g.weighted_sum(y, &w)
    })
}

fn tiny_model(seed: u64) -> Result<AsrModel> {
    let mut m = AsrModel::new(ModelConfig::tiny(), seed, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb0b0);
    // Non-zero adapters so every LoRA coordinate has a gradient to check.
    for p in m.store.iter_mut() {
        if p.name.ends_with(".lora_b") {
            p.value = Tensor::randn(p.value.shape(), 0.3, &mut rng);
        }
    }
    Ok(m)
}

fn check_projector(seed: u64) -> Result<GradCheckReport> {
    let mut m = tiny_model(seed)?;
    m.store.freeze_all();
    m.store.set_trainable(|n| n.starts_with("projector."), true);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = Tensor::randn(&[7, m.config.enc_dim], 1.0, &mut rng);
    let stacked = frame_stack(&h, m.config.stack)?;
    let w = probe_weights(stacked.rows() * m.config.d_model, &mut rng);
    let arch = m.clone();
    grad_check(&mut m.store, GRAD_EPS, |g, b| {
        let sv = g.constant(stacked.clone());
        let z = arch.project(g, b, sv)?;
        g.weighted_sum(z, &w)
    })
}

fn check_lora(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let base = Linear::new(&mut s, "proj", 5, 4, true, true, &mut rng)?;
    let layer = LoraLinear::with_adapter(&mut s, "proj", base, 2, 4.0, &mut rng)?;
    let bid = s.id("proj.lora_b").expect("registered");
    s.get_mut(bid).value = Tensor::randn(&[4, 2], 0.5, &mut rng);
    let x = s.add("x", Tensor::randn(&[3, 5], 1.0, &mut rng), true)?;
    let w = probe_weights(12, &mut rng);
    grad_check(&mut s, GRAD_EPS, |g, b| {
        let xv = b.var(g, x);
        let y = layer.forward(g, b, xv)?;
        g.weighted_sum(y, &w)
    })
}

fn check_te2sl(seed: u64) -> Result<GradCheckReport> {
    let cfg = Te2slConfig {
        layers: 1,
        hidden: 8,
        heads: 2,
        ff_dim: 8,
        kernel: 3,
    };
    let mut module = Te2slModule::new(cfg, 6, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::randn(&[5, 6], 1.0, &mut rng);
    let target = Tensor::randn(&[5, 6], 1.0, &mut rng);
    let arch = module.clone();
    grad_check(&mut module.store, GRAD_EPS, |g, b| arch.mse_loss(g, b, &input, &target))
}

fn check_end_to_end(seed: u64) -> Result<GradCheckReport> {
    let mut m = tiny_model(seed)?;
    m.set_phase(Phase::Source);
    m.store.set_trainable(is_lora, true);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::randn(&[9, m.config.feat_dim], 1.0, &mut rng);
    let h = m.encode_audio(&x)?;
    let y: Vec<usize> = (0..3).map(|_| rng.random_range(0..m.config.content_vocab)).collect();
    let arch = m.clone();
    grad_check(&mut m.store, GRAD_EPS, |g, b| arch.paired_loss(g, b, &h, &y))
}

type Check = fn(u64) -> Result<GradCheckReport>;

const CHECKS: [(&str, Check, f64); 8] = [
    ("matmul", check_matmul, OP_TOLERANCE),
    ("layer_norm", check_layer_norm, OP_TOLERANCE),
    ("attention", check_attention, OP_TOLERANCE),
    ("depthwise_conv", check_depthwise_conv, OP_TOLERANCE),
    ("projector", check_projector, OP_TOLERANCE),
    ("lora", check_lora, OP_TOLERANCE),
    ("te2sl_module", check_te2sl, OP_TOLERANCE),
    ("end_to_end_loss", check_end_to_end, END_TO_END_TOLERANCE),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _, _)| *n).collect()
}

/// Every check at one seed.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCase>> {
    CHECKS
        .iter()
        .map(|(name, f, tol)| Ok(case(name, seed, *tol, f(seed)?)))
        .collect()
}
