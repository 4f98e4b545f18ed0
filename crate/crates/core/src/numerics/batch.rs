//! Minibatch gradients and training settings shared by every phase.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AdamW, AdamWConfig, Binder, Graph, ParamGrads, ParamStore, Var};
use crate::error::{Error, Result};
use crate::par::Exec;

/// Learning rate, batch size and epoch budget of one training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimSettings {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
}

impl Default for OptimSettings {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            epochs: 10,
            weight_decay: 0.001,
        }
    }
}

impl OptimSettings {
    pub fn validate(&self, section: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config(format!("{section}.batch_size must be positive")));
        }
        if self.epochs == 0 {
            return Err(Error::config(format!("{section}.epochs must be at least 1")));
        }
        self.adamw().validate().map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{section}: {m}")),
            other => other,
        })
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Groups indices of similar length into batches of at most `batch_size`
/// and shuffles the batch order. Within a length, order is random too.
pub fn minibatches(lengths: &[usize], batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut idx: Vec<usize> = (0..lengths.len()).collect();
    idx.shuffle(rng);
    idx.sort_by_key(|&i| lengths[i]);
    let mut batches: Vec<Vec<usize>> = idx.chunks(batch_size).map(|c| c.to_vec()).collect();
    batches.shuffle(rng);
    batches
}

/// Mean loss and mean gradient over `items`, one graph per item. Per-item
/// results are reduced in input order, so the outcome does not depend on
/// `exec`.
pub fn batch_gradients<T, F>(store: &ParamStore, items: &[T], exec: Exec, f: F) -> Result<(f64, ParamGrads)>
where
    T: Sync,
    F: Fn(&mut Graph, &mut Binder, &T) -> Result<Var> + Sync + Send,
{
    if items.is_empty() {
        return Err(Error::config("empty minibatch"));
    }
    let per_item = exec.map(items, |item| -> Result<(f64, ParamGrads)> {
        let mut g = Graph::new();
        let mut b = Binder::new(store);
        let loss = f(&mut g, &mut b, item)?;
        let value = g.value(loss).data()[0];
        let mut grads = g.backward(loss)?;
        Ok((value, b.collect(&mut grads)))
    });
    let mut total = 0.0;
    let mut sum = ParamGrads::zeros_like(store);
    for r in per_item {
        let (l, g) = r?;
        total += l;
        sum.add_assign(&g);
    }
    let scale = 1.0 / items.len() as f64;
    sum.scale(scale);
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::numeric(format!("non-finite training loss {loss}")));
    }
    Ok((loss, sum))
}

/// Loads `grads` into `store` and takes one optimizer step.
pub fn apply_update(store: &mut ParamStore, opt: &mut AdamW, grads: &ParamGrads) -> Result<()> {
    store.zero_grad();
    store.accumulate(grads);
    opt.step(store)
}

/// Mean loss of `items` followed by one update of `store`.
pub fn train_step<T, F>(
    store: &mut ParamStore,
    opt: &mut AdamW,
    items: &[T],
    exec: Exec,
    f: F,
) -> Result<f64>
where
    T: Sync,
    F: Fn(&mut Graph, &mut Binder, &T) -> Result<Var> + Sync + Send,
{
    let (loss, grads) = batch_gradients(store, items, exec, f)?;
    apply_update(store, opt, &grads)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batches_cover_every_index_once() {
        let lengths: Vec<usize> = (0..23).map(|i| (i * 7) % 5).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = minibatches(&lengths, 4, &mut rng);
        let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        assert!(batches.iter().all(|b| b.len() <= 4));
    }

    #[test]
    fn gradient_is_mean_over_items_in_both_modes() {
        let mut s = ParamStore::new();
        let w = s.add("w", Tensor::new(vec![1, 1], vec![2.0]).unwrap(), true).unwrap();
        let items = [1.0, 3.0];
        // loss_i = (w·x_i)², dloss/dw = 2·w·x_i².
        let f = |g: &mut Graph, b: &mut Binder, x: &f64| {
            let wv = b.var(g, w);
            let xv = g.constant(Tensor::new(vec![1, 1], vec![*x]).unwrap());
            let y = g.matmul(wv, xv)?;
            g.mul(y, y)
        };
        for exec in [Exec::Sequential, Exec::Parallel] {
            let (loss, grads) = batch_gradients(&s, &items, exec, f).unwrap();
            assert_eq!(loss, (4.0 + 36.0) / 2.0);
            assert_eq!(grads.get(w).unwrap(), &[(2.0 * 2.0 * 1.0 + 2.0 * 2.0 * 9.0) / 2.0]);
        }
    }
}
