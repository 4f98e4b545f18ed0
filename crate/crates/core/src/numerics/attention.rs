use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};

/// Scaled dot-product attention over already-projected `q`, `k`, `v`
/// (each `T × D`), split into `heads` column groups.
pub fn multi_head_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    causal: bool,
) -> Result<Var> {
    let d = g.shape(q)[1];
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!(
            "width {d} cannot be split into {heads} heads"
        )));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let probs = g.softmax_rows(scores, causal)?;
        outs.push(g.matmul(probs, vh)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        g.concat_cols(&outs)
    }
}

/// `attention(x·Wq, x·Wk, x·Wv)·Wo` with a lower-triangular mask.
pub fn causal_self_attention(
    g: &mut Graph,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    heads: usize,
) -> Result<Var> {
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let a = multi_head_attention(g, q, k, v, heads, true)?;
    g.matmul(a, wo)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn single_position_is_value_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(&[1, 4], 1.0, &mut rng));
        let w: Vec<Var> = (0..4)
            .map(|_| g.constant(Tensor::randn(&[4, 4], 0.5, &mut rng)))
            .collect();
        let out = causal_self_attention(&mut g, x, w[0], w[1], w[2], w[3], 2).unwrap();
        let xv = g.matmul(x, w[2]).unwrap();
        let expect = g.matmul(xv, w[3]).unwrap();
        assert!(g.value(out).max_abs_diff(g.value(expect)) < 1e-15);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 6]));
        assert!(matches!(
            multi_head_attention(&mut g, x, x, x, 4, true),
            Err(Error::Config(_))
        ));
    }
}
