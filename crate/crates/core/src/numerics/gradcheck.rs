//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::{Binder, ParamGrads, ParamStore};

/// Relative-error denominator floor.
pub const REL_FLOOR: f64 = 1e-8;

/// Worst coordinate found by a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &mut Binder) -> Result<Var>,
{
    let mut g = Graph::new();
    let mut b = Binder::new(store);
    let out = f(&mut g, &mut b)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::shape("gradient check needs a scalar function"));
    }
    let x = v.data()[0];
    if !x.is_finite() {
        return Err(Error::numeric("gradient check function returned a non-finite value"));
    }
    Ok(x)
}

/// Reverse-mode gradients of `f` with respect to the trainable parameters.
pub fn analytic_gradients<F>(store: &ParamStore, f: &F) -> Result<ParamGrads>
where
    F: Fn(&mut Graph, &mut Binder) -> Result<Var>,
{
    let mut g = Graph::new();
    let mut b = Binder::new(store);
    let out = f(&mut g, &mut b)?;
    let mut grads = g.backward(out)?;
    Ok(b.collect(&mut grads))
}

/// Compares `analytic` against central differences for every trainable
/// coordinate. The store is restored before returning.
pub fn compare_with_finite_differences<F>(
    store: &mut ParamStore,
    analytic: &ParamGrads,
    eps: f64,
    f: &F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &mut Binder) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::config(format!("gradient-check eps {eps} outside [1e-7, 1e-3]")));
    }
    eval(store, f)?;
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        coordinates: 0,
    };
    for id in ids {
        let n = store.value(id).len();
        for j in 0..n {
            let orig = store.value(id).data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + eps;
            let plus = eval(store, f);
            store.get_mut(id).value.data_mut()[j] = orig - eps;
            let minus = eval(store, f);
            store.get_mut(id).value.data_mut()[j] = orig;
            let numeric = (plus? - minus?) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g[j]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}

/// Full check: reverse-mode gradient of `f` vs central differences.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &mut Binder) -> Result<Var>,
{
    let analytic = analytic_gradients(store, &f)?;
    compare_with_finite_differences(store, &analytic, eps, &f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store(values: &[f64]) -> (ParamStore, crate::numerics::ParamId) {
        let mut s = ParamStore::new();
        let id = s
            .add("theta", Tensor::new(vec![1, values.len()], values.to_vec()).unwrap(), true)
            .unwrap();
        (s, id)
    }

    #[test]
    fn linear_function_is_exact() {
        let (mut s, id) = store(&[0.3, -1.2, 2.0]);
        let r = grad_check(&mut s, 1e-5, |g, b| {
            let v = b.var(g, id);
            g.weighted_sum(v, &[1.5, -2.0, 0.25])
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
        assert_eq!(r.coordinates, 3);
    }

    #[test]
    fn quadratic_at_one() {
        let (mut s, id) = store(&[1.0, 1.0]);
        let f = |g: &mut Graph, b: &mut Binder| {
            let v = b.var(g, id);
            let sq = g.mul(v, v)?;
            g.weighted_sum(sq, &[1.0, 1.0])
        };
        let analytic = analytic_gradients(&s, &f).unwrap();
        assert_eq!(analytic.get(id).unwrap(), &[2.0, 2.0]);
        let r = compare_with_finite_differences(&mut s, &analytic, 1e-4, &f).unwrap();
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let (mut s, id) = store(&[0.7, -0.4]);
        let f = |g: &mut Graph, b: &mut Binder| {
            let v = b.var(g, id);
            let sq = g.silu(v);
            g.weighted_sum(sq, &[1.0, 2.0])
        };
        let mut analytic = analytic_gradients(&s, &f).unwrap();
        analytic.scale(1.01);
        let r = compare_with_finite_differences(&mut s, &analytic, 1e-6, &f).unwrap();
        assert!(r.max_rel_error > 1e-3, "{r:?}");
        assert_eq!(s.value(id).data(), &[0.7, -0.4]);
    }

    #[test]
    fn eps_range_enforced() {
        let (mut s, id) = store(&[1.0]);
        let err = grad_check(&mut s, 1e-2, |g, b| {
            let v = b.var(g, id);
            g.weighted_sum(v, &[1.0])
        });
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
