use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{dev_wer, select_checkpoint};
use crate::adaptation::{build_pseudo_prompt, SoftPrompt, Strategy, StrategyKind, Te2slModule};
use crate::corpus::mix;
use crate::error::{Error, Result};
use crate::model::{checkpoint, AsrModel, EncodedPair, ModelConfig, Phase};
use crate::numerics::{apply_update, batch_gradients, minibatches, AdamW, OptimSettings, Tensor};
use crate::par::Exec;

const CONFIG_TENSOR: &str = "__config";

/// Per-epoch curves and the selected epoch of one training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseResult {
    pub train_loss: Vec<f64>,
    pub dev_wer: Vec<f64>,
    /// 1-based; 0 when the phase ran no epochs.
    pub selected_epoch: usize,
    pub selected_checkpoint: Option<PathBuf>,
    /// Not part of any report, which must be reproducible.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

pub fn model_tensors(model: &AsrModel) -> Vec<(String, Tensor)> {
    let echo = model.config.to_echo();
    let mut out = vec![(
        CONFIG_TENSOR.to_string(),
        Tensor::new(vec![echo.len()], echo).expect("finite config echo"),
    )];
    out.extend(model.store.named_values());
    out
}

pub fn model_from_tensors(tensors: &[(String, Tensor)]) -> Result<AsrModel> {
    let echo = tensors
        .iter()
        .find(|(n, _)| n == CONFIG_TENSOR)
        .ok_or_else(|| Error::format("model checkpoint lacks `__config`"))?;
    let config = ModelConfig::from_echo(echo.1.data())?;
    let mut model = AsrModel::new(config, 0, None)?;
    model.load_values(tensors)?;
    Ok(model)
}

pub fn save_model(path: &Path, model: &AsrModel) -> Result<()> {
    checkpoint::save(path, &model_tensors(model))
}

pub fn load_model(path: &Path) -> Result<AsrModel> {
    model_from_tensors(&checkpoint::load(path)?)
}

fn epoch_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch-{epoch:02}.ckpt"))
}

/// Shared epoch loop: one update per minibatch, dev WER after each epoch,
/// and the parameters of the best epoch restored at the end.
#[allow(clippy::too_many_arguments)]
fn run_phase<T: Sync>(
    model: &mut AsrModel,
    items: &[T],
    lengths: &[usize],
    settings: &OptimSettings,
    dev: &[EncodedPair],
    max_len: usize,
    seed: u64,
    exec: Exec,
    ckpt_dir: Option<&Path>,
    label: &str,
    loss: impl Fn(&AsrModel, &mut crate::numerics::Graph, &mut crate::numerics::Binder, &T, u64) -> Result<crate::numerics::Var>
        + Sync
        + Send,
) -> Result<PhaseResult> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = AdamW::new(settings.adamw(), &model.store);
    let mut train_loss = Vec::with_capacity(settings.epochs);
    let mut dev_curve = Vec::with_capacity(settings.epochs);
    let mut best: Option<(f64, crate::numerics::ParamStore)> = None;
    let mut step = 0u64;
    for epoch in 1..=settings.epochs {
        let mut total = 0.0;
        for batch in minibatches(lengths, settings.batch_size, &mut rng) {
            let batch_items: Vec<(&T, u64)> = batch
                .iter()
                .map(|&i| (&items[i], mix(seed, (step << 20) ^ i as u64)))
                .collect();
            let m = &*model;
            let (l, grads) = batch_gradients(&m.store, &batch_items, exec, |g, b, (item, s)| {
                loss(m, g, b, item, *s)
            })
            .map_err(|e| match e {
                Error::Numeric(msg) => Error::numeric(format!("{label} epoch {epoch}: {msg}")),
                other => other,
            })?;
            apply_update(&mut model.store, &mut opt, &grads)?;
            total += l * batch.len() as f64;
            step += 1;
        }
        let mean = total / items.len() as f64;
        let wer = dev_wer(model, dev, max_len, exec)?;
        info!("{label} epoch {epoch}: loss {mean:.5}, dev WER {wer:.4}");
        train_loss.push(mean);
        dev_curve.push(wer);
        if let Some(dir) = ckpt_dir {
            save_model(&epoch_path(dir, epoch), model)?;
        }
        if best.as_ref().is_none_or(|(b, _)| wer < *b) {
            best = Some((wer, model.store.clone()));
        }
    }
    let selected_epoch = select_checkpoint(&dev_curve)?;
    if let Some((_, store)) = best {
        model.store.copy_values_from(&store)?;
    }
    Ok(PhaseResult {
        train_loss,
        dev_wer: dev_curve,
        selected_epoch,
        selected_checkpoint: ckpt_dir.map(|d| epoch_path(d, selected_epoch)),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// Paired source training of projector and LM; encoder, embeddings and
/// adapters stay fixed. Leaves the model at its best dev-WER epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_source(
    model: &mut AsrModel,
    train: &[EncodedPair],
    dev: &[EncodedPair],
    settings: &OptimSettings,
    max_len: usize,
    seed: u64,
    exec: Exec,
    ckpt_dir: Option<&Path>,
) -> Result<PhaseResult> {
    settings.validate("optim.source")?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::config("source training needs non-empty train and dev splits"));
    }
    model.set_phase(Phase::Source);
    let lengths: Vec<usize> = train.iter().map(|p| p.states.rows()).collect();
    let result = run_phase(
        model,
        train,
        &lengths,
        settings,
        dev,
        max_len,
        seed,
        exec,
        ckpt_dir,
        "source",
        |m, g, b, p, _| m.paired_loss(g, b, &p.states, &p.tokens),
    );
    model.set_phase(Phase::Frozen);
    result
}

/// Artifacts a strategy may need during adaptation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Artifacts<'a> {
    pub te2sl: Option<&'a Te2slModule>,
    pub soft_prompt: Option<&'a SoftPrompt>,
}

/// Text-only adaptation of the LoRA adapters with the strategy's pseudo
/// prompts. `none` returns an unchanged copy of `source`.
#[allow(clippy::too_many_arguments)]
pub fn adapt_target(
    source: &AsrModel,
    strategy: &Strategy,
    artifacts: Artifacts<'_>,
    texts: &[Vec<usize>],
    dev: &[EncodedPair],
    settings: &OptimSettings,
    max_len: usize,
    seed: u64,
    exec: Exec,
    ckpt_dir: Option<&Path>,
) -> Result<(AsrModel, PhaseResult)> {
    strategy.validate()?;
    strategy.check_artifacts(artifacts.te2sl, artifacts.soft_prompt)?;
    settings.validate("optim.adapt")?;
    let mut model = source.clone();
    if strategy.kind == StrategyKind::None {
        model.set_phase(Phase::Frozen);
        let result = PhaseResult {
            train_loss: Vec::new(),
            dev_wer: Vec::new(),
            selected_epoch: 0,
            selected_checkpoint: None,
            wall_clock_secs: 0.0,
        };
        return Ok((model, result));
    }
    if texts.is_empty() || dev.is_empty() {
        return Err(Error::config("adaptation needs target text and a dev split"));
    }
    model.set_phase(Phase::Adapt);
    let lengths: Vec<usize> = texts.iter().map(Vec::len).collect();
    let label = format!("adapt[{}]", strategy.kind.name());
    let result = run_phase(
        &mut model,
        texts,
        &lengths,
        settings,
        dev,
        max_len,
        seed,
        exec,
        ckpt_dir,
        &label,
        |m, g, b, y, s| {
            let prompt = build_pseudo_prompt(strategy, y, m, artifacts.te2sl, artifacts.soft_prompt, s)?;
            let pv = prompt.map(|t| g.constant(t));
            m.transcription_loss(g, b, pv, y)
        },
    );
    model.set_phase(Phase::Frozen);
    Ok((model, result?))
}
