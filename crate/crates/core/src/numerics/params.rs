use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::graph::{Gradients, Graph, Var};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Named collection of parameters owned by one model or module.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.clone(),
            value,
            grad,
            trainable,
        });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Sets the trainable flag on every parameter whose name passes `pred`.
    pub fn set_trainable(&mut self, pred: impl Fn(&str) -> bool, trainable: bool) {
        for p in &mut self.params {
            if pred(&p.name) {
                p.trainable = trainable;
            }
        }
    }

    pub fn freeze_all(&mut self) {
        self.set_trainable(|_| true, false);
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Adds `grads` into the stored gradients of trainable parameters.
    /// Frozen parameters keep a zero gradient.
    pub fn accumulate(&mut self, grads: &ParamGrads) {
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            if let (true, Some(g)) = (p.trainable, g) {
                p.grad
                    .data_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, b)| *a += b);
            }
        }
    }

    /// Replaces every value with the one in `other` (same layout required).
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::shape("parameter stores differ in size"));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::shape(format!(
                    "parameter `{}` does not match `{}`",
                    a.name, b.name
                )));
            }
            a.value = b.value.clone();
        }
        Ok(())
    }

    /// FNV-1a over names and value bits of the parameters selected by
    /// `pred`.
    pub fn checksum_where(&self, pred: impl Fn(&str) -> bool) -> u64 {
        let mut h = crate::fnv::Fnv1a::new();
        for p in self.params.iter().filter(|p| pred(&p.name)) {
            h.write(p.name.as_bytes());
            for v in p.value.data() {
                h.write(&v.to_le_bytes());
            }
        }
        h.finish()
    }

    pub fn checksum(&self) -> u64 {
        self.checksum_where(|_| true)
    }

    /// `(name, value)` pairs in registration order.
    pub fn named_values(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Replaces values by name. Every parameter must be present with a
    /// matching shape; names starting with `__` are metadata and skipped.
    pub fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        let mut seen = vec![false; self.params.len()];
        for (name, t) in tensors {
            if name.starts_with("__") {
                continue;
            }
            let id = self
                .id(name)
                .ok_or_else(|| Error::format(format!("unknown tensor `{name}` in checkpoint")))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != t.shape() {
                return Err(Error::format(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::numeric(format!("tensor `{name}` holds non-finite values")));
            }
            p.value = t.clone();
            seen[id.0] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::format(format!(
                "checkpoint lacks tensor `{}`",
                self.params[i].name
            )));
        }
        Ok(())
    }
}

/// Per-parameter gradients of one scalar, aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    grads: Vec<Option<Vec<f64>>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Vec<f64>> {
        self.grads[id.0].as_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Euclidean norm over all present gradients.
    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Norm restricted to parameters whose name passes `pred`.
    pub fn norm_where(&self, store: &ParamStore, pred: impl Fn(&str) -> bool) -> f64 {
        self.iter()
            .filter(|(id, _)| pred(&store.get(*id).name))
            .flat_map(|(_, g)| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Lazily places parameters of one store onto a graph, each at most once.
pub struct Binder<'s> {
    store: &'s ParamStore,
    vars: Vec<Option<Var>>,
}

impl<'s> Binder<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn var(&mut self, g: &mut Graph, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let v = g.leaf(p.value.clone(), p.trainable);
        self.vars[id.0] = Some(v);
        v
    }

    /// Moves the gradients of bound trainable parameters out of `grads`.
    pub fn collect(&self, grads: &mut Gradients) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(self.store);
        for (i, v) in self.vars.iter().enumerate() {
            if let Some(v) = v {
                if self.store.params[i].trainable {
                    out.grads[i] = grads.take(*v);
                }
            }
        }
        out
    }
}
