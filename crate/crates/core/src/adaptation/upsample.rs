use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Repeats row `i` of `e` `durations[i]` times.
pub fn repeat_rows(e: &Tensor, durations: &[usize]) -> Result<Tensor> {
    if durations.len() != e.rows() {
        return Err(Error::shape(format!(
            "{} durations for {} rows",
            durations.len(),
            e.rows()
        )));
    }
    let d = e.cols();
    let total: usize = durations.iter().sum();
    let mut data = Vec::with_capacity(total * d);
    for (i, &n) in durations.iter().enumerate() {
        for _ in 0..n {
            data.extend_from_slice(e.row(i));
        }
    }
    Tensor::new(vec![total, d], data)
}

/// Largest-remainder split of `frames` over `tokens` slots; remainder ties
/// go to earlier tokens.
pub fn deterministic_durations(tokens: usize, frames: usize) -> Result<Vec<usize>> {
    if tokens == 0 {
        return Err(Error::shape("cannot upsample an empty sequence"));
    }
    if frames < tokens {
        return Err(Error::shape(format!(
            "target length {frames} is shorter than {tokens} tokens"
        )));
    }
    let base = frames / tokens;
    // Every token's exact share is frames/tokens, so all remainders tie and
    // the extra frames go to the first `frames mod tokens` tokens.
    let extra = frames % tokens;
    Ok((0..tokens).map(|i| base + usize::from(i < extra)).collect())
}

/// `E` stretched to exactly `t_target` rows.
pub fn upsample_deterministic(e: &Tensor, t_target: usize) -> Result<Tensor> {
    repeat_rows(e, &deterministic_durations(e.rows(), t_target)?)
}

pub fn check_duration_bounds(d_min: usize, d_max: usize) -> Result<()> {
    if d_min == 0 || d_min > d_max {
        return Err(Error::config(format!(
            "duration bounds need 1 ≤ d_min ≤ d_max, got [{d_min}, {d_max}]"
        )));
    }
    Ok(())
}

pub fn random_durations(tokens: usize, d_min: usize, d_max: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    check_duration_bounds(d_min, d_max)?;
    Ok((0..tokens).map(|_| rng.random_range(d_min..=d_max)).collect())
}

/// Each row repeated a uniform number of times in `[d_min, d_max]`.
pub fn upsample_random(e: &Tensor, d_min: usize, d_max: usize, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    repeat_rows(e, &random_durations(e.rows(), d_min, d_max, &mut rng)?)
}

/// Means of consecutive groups of `k` rows, dropping the trailing
/// `rows mod k` rows: the pooled counterpart of frame stacking.
pub fn pool_frames(x: &Tensor, k: usize) -> Result<Tensor> {
    if k == 0 {
        return Err(Error::config("pooling factor must be at least 1"));
    }
    let rows = x.rows() / k;
    if rows == 0 {
        return Err(Error::shape(format!("{} rows are fewer than one group of {k}", x.rows())));
    }
    let d = x.cols();
    let mut data = vec![0.0; rows * d];
    for (r, out) in data.chunks_mut(d).enumerate() {
        for j in 0..k {
            for (o, v) in out.iter_mut().zip(x.row(r * k + j)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= k as f64);
    }
    Tensor::new(vec![rows, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_averages_whole_groups() {
        let x = Tensor::new(vec![5, 1], vec![1.0, 3.0, 5.0, 7.0, 100.0]).unwrap();
        assert_eq!(pool_frames(&x, 2).unwrap().data(), &[2.0, 6.0]);
        assert_eq!(pool_frames(&x, 1).unwrap(), x);
        assert!(pool_frames(&x, 6).is_err());
        assert!(pool_frames(&x, 0).is_err());
    }

    #[test]
    fn deterministic_examples() {
        assert_eq!(deterministic_durations(2, 4).unwrap(), vec![2, 2]);
        assert_eq!(deterministic_durations(3, 7).unwrap(), vec![3, 2, 2]);
        assert!(deterministic_durations(3, 2).is_err());
    }

    #[test]
    fn degenerate_random_interval() {
        let e = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let u = upsample_random(&e, 3, 3, 0).unwrap();
        assert_eq!(u.rows(), 6);
        for r in 0..3 {
            assert_eq!(u.row(r), e.row(0));
            assert_eq!(u.row(r + 3), e.row(1));
        }
    }

    #[test]
    fn random_is_seeded_and_bounded() {
        let e = Tensor::randn(&[5, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(upsample_random(&e, 1, 4, 9).unwrap(), upsample_random(&e, 1, 4, 9).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let d = random_durations(6, 2, 5, &mut rng).unwrap();
            assert!(d.iter().all(|&d| (2..=5).contains(&d)));
        }
        assert!(upsample_random(&e, 0, 2, 0).is_err());
        assert!(upsample_random(&e, 3, 2, 0).is_err());
    }
}
