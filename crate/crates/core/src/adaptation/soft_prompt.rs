use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{AsrModel, Phase};
use crate::numerics::{minibatches, train_step, AdamW, Binder, OptimSettings, ParamId, ParamStore, Tensor};
use crate::par::Exec;

pub const SOFT_PROMPT_NAME: &str = "soft_prompt";

/// One `L_s × D` prompt shared by every sample.
#[derive(Clone, Debug)]
pub struct SoftPrompt {
    pub store: ParamStore,
    id: ParamId,
}

impl SoftPrompt {
    pub fn new(len: usize, d_model: usize, seed: u64) -> Result<Self> {
        if len == 0 || d_model == 0 {
            return Err(Error::config("soft prompt length and width must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let id = store.add(SOFT_PROMPT_NAME, Tensor::randn(&[len, d_model], 0.5, &mut rng), true)?;
        Ok(Self { store, id })
    }

    pub fn tensor(&self) -> &Tensor {
        self.store.value(self.id)
    }

    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        self.store.named_values()
    }

    pub fn from_tensors(tensors: &[(String, Tensor)]) -> Result<Self> {
        let t = tensors
            .iter()
            .find(|(n, _)| n == SOFT_PROMPT_NAME)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::format("checkpoint lacks `soft_prompt`"))?;
        if t.shape().len() != 2 {
            return Err(Error::format("soft prompt must be a matrix"));
        }
        let mut p = Self::new(t.rows(), t.cols(), 0)?;
        p.store.load_named(tensors)?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftPromptReport {
    pub epoch_losses: Vec<f64>,
}

/// Trains a fresh `len × D` prompt in place of the audio prompt on source
/// transcripts; the model is only read.
pub fn learn_soft_prompt(
    model: &AsrModel,
    texts: &[Vec<usize>],
    len: usize,
    settings: &OptimSettings,
    seed: u64,
    exec: Exec,
) -> Result<(SoftPrompt, SoftPromptReport)> {
    settings.validate("optim.soft_prompt")?;
    if texts.is_empty() {
        return Err(Error::config("no transcripts for soft-prompt learning"));
    }
    let mut frozen = model.clone();
    frozen.set_phase(Phase::Frozen);
    let mut prompt = SoftPrompt::new(len, model.config.d_model, seed)?;
    let id = prompt.id;
    let lengths: Vec<usize> = texts.iter().map(Vec::len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5f5f);
    let mut opt = AdamW::new(settings.adamw(), &prompt.store);
    let mut epoch_losses = Vec::with_capacity(settings.epochs);
    for epoch in 0..settings.epochs {
        let mut total = 0.0;
        for batch in minibatches(&lengths, settings.batch_size, &mut rng) {
            let items: Vec<&Vec<usize>> = batch.iter().map(|&i| &texts[i]).collect();
            let loss = train_step(&mut prompt.store, &mut opt, &items, exec, |g, b, y| {
                let p = b.var(g, id);
                let mut mb = Binder::new(&frozen.store);
                frozen.transcription_loss(g, &mut mb, Some(p), y)
            })?;
            total += loss * items.len() as f64;
        }
        let mean = total / texts.len() as f64;
        info!("soft prompt epoch {}: loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    Ok((prompt, SoftPromptReport { epoch_losses }))
}
