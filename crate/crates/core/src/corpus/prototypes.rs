use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::CorpusConfig;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Per-word acoustic prototypes plus the noise and duration model.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeTable {
    /// `vocab × F_raw`, row `t` is word `t`'s prototype.
    pub prototypes: Tensor,
    pub sigma: f64,
    pub dur_range: (usize, usize),
}

impl PrototypeTable {
    pub fn new(prototypes: Tensor, sigma: f64, dur_range: (usize, usize)) -> Result<Self> {
        if prototypes.shape().len() != 2 || prototypes.rows() == 0 {
            return Err(Error::config("prototype table must be a non-empty matrix"));
        }
        if !(sigma >= 0.0) {
            return Err(Error::config("prototype noise must be non-negative"));
        }
        if dur_range.0 == 0 || dur_range.0 > dur_range.1 {
            return Err(Error::config("prototype durations need 1 ≤ lo ≤ hi"));
        }
        let table = Self {
            prototypes,
            sigma,
            dur_range,
        };
        if table.min_pairwise_distance() <= 0.0 {
            return Err(Error::config("prototypes are not pairwise distinct"));
        }
        Ok(table)
    }

    /// Standard-normal prototypes; OOV words are pulled toward a source-only
    /// partner by `cfg.oov_confusion`.
    pub fn generate(cfg: &CorpusConfig, rng: &mut impl Rng) -> Result<Self> {
        let n = cfg.content_vocab();
        let f = cfg.feat_dim;
        let mut p = Tensor::randn(&[n, f], 1.0, rng);
        let c = cfg.oov_confusion;
        if c > 0.0 {
            let keep = (1.0 - c * c).sqrt();
            for (i, t) in cfg.oov_ids().into_iter().enumerate() {
                let partner = p.row(i % cfg.source_only).to_vec();
                for (x, q) in p.row_mut(t).iter_mut().zip(partner) {
                    *x = c * q + keep * *x;
                }
            }
        }
        Self::new(p, cfg.sigma, (cfg.dur_lo, cfg.dur_hi))
    }

    pub fn vocab(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.prototypes.cols()
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let n = self.vocab();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let d: f64 = self
                    .prototypes
                    .row(i)
                    .iter()
                    .zip(self.prototypes.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                best = best.min(d.sqrt());
            }
        }
        best
    }
}

/// Features plus the duration drawn for each token.
pub(crate) fn synth_with_durations(
    tokens: &[usize],
    table: &PrototypeTable,
    rng: &mut impl Rng,
) -> Result<(Tensor, Vec<usize>)> {
    let f = table.feat_dim();
    if let Some(&t) = tokens.iter().find(|&&t| t >= table.vocab()) {
        return Err(Error::TokenOutOfRange {
            id: t,
            vocab: table.vocab(),
        });
    }
    let (lo, hi) = table.dur_range;
    let durations: Vec<usize> = tokens.iter().map(|_| rng.random_range(lo..=hi)).collect();
    let total: usize = durations.iter().sum();
    let mut data = Vec::with_capacity(total * f);
    for (&t, &d) in tokens.iter().zip(&durations) {
        for _ in 0..d {
            data.extend_from_slice(table.prototypes.row(t));
        }
    }
    if table.sigma > 0.0 {
        for x in &mut data {
            let z: f64 = StandardNormal.sample(rng);
            *x += table.sigma * z;
        }
    }
    Ok((Tensor::new(vec![total, f], data)?, durations))
}

pub(crate) fn synth_with(tokens: &[usize], table: &PrototypeTable, rng: &mut impl Rng) -> Result<Tensor> {
    synth_with_durations(tokens, table, rng).map(|(t, _)| t)
}

/// `T_raw × F_raw` features for `tokens`; deterministic per seed.
pub fn synth_features(tokens: &[usize], table: &PrototypeTable, seed: u64) -> Result<Tensor> {
    synth_with(tokens, table, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(sigma: f64, dur: (usize, usize)) -> PrototypeTable {
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 1.0]]).unwrap();
        PrototypeTable::new(p, sigma, dur).unwrap()
    }

    #[test]
    fn single_noiseless_token_repeats_prototype() {
        let x = synth_features(&[1], &table(0.0, (3, 3)), 0).unwrap();
        assert_eq!(x.shape(), &[3, 2]);
        assert_eq!(x.data(), &[0.0, 2.0, 0.0, 2.0, 0.0, 2.0]);
    }

    #[test]
    fn frame_count_is_sum_of_durations() {
        let t = table(0.1, (2, 6));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (x, d) = synth_with_durations(&[0, 2, 1, 1], &t, &mut rng).unwrap();
            assert_eq!(x.rows(), d.iter().sum::<usize>());
            assert!(d.iter().all(|&d| (2..=6).contains(&d)));
        }
    }

    #[test]
    fn noiseless_blocks_differ_between_words() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, d) = synth_with_durations(&[0, 2], &table(0.0, (2, 2)), &mut rng).unwrap();
        assert_eq!(d, vec![2, 2]);
        assert_ne!(x.row(0), x.row(2));
    }

    #[test]
    fn unknown_token_is_error() {
        assert!(synth_features(&[3], &table(0.0, (1, 1)), 0).is_err());
    }

    #[test]
    fn duplicate_prototypes_rejected() {
        let p = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(PrototypeTable::new(p, 0.0, (1, 1)).is_err());
    }

    #[test]
    fn same_seed_same_features() {
        let t = table(0.3, (1, 4));
        assert_eq!(synth_features(&[0, 1, 2], &t, 7).unwrap(), synth_features(&[0, 1, 2], &t, 7).unwrap());
    }
}
