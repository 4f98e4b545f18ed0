use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Vocabulary, bigram grammar and length range of one domain.
///
/// Rows of `transitions` and `start` are indexed by position in `vocab`.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub vocab: Vec<usize>,
    pub transitions: Vec<Vec<f64>>,
    pub start: Vec<f64>,
    pub len_range: (usize, usize),
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::config(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

/// Stationary distribution of the lazy chain `(I + P) / 2`, which shares
/// its fixed points with `P` but converges for periodic chains too.
fn stationary(transitions: &[Vec<f64>]) -> Vec<f64> {
    let n = transitions.len();
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..10_000 {
        let mut next: Vec<f64> = pi.iter().map(|p| 0.5 * p).collect();
        for (i, row) in transitions.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                next[j] += 0.5 * pi[i] * p;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|p| *p /= total);
        let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-13 {
            break;
        }
    }
    pi
}

impl DomainSpec {
    /// Start distribution is the chain's stationary distribution.
    pub fn new(vocab: Vec<usize>, transitions: Vec<Vec<f64>>, len_range: (usize, usize)) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::config("domain vocabulary is empty"));
        }
        if transitions.len() != vocab.len() {
            return Err(Error::config("one transition row per vocabulary word is required"));
        }
        for (i, row) in transitions.iter().enumerate() {
            if row.len() != vocab.len() {
                return Err(Error::config(format!("transition row {i} has the wrong length")));
            }
            check_distribution(row, &format!("transition row {i}"))?;
        }
        if len_range.0 == 0 || len_range.0 > len_range.1 {
            return Err(Error::config("domain length range needs 1 ≤ lo ≤ hi"));
        }
        let start = stationary(&transitions);
        Ok(Self {
            vocab,
            transitions,
            start,
            len_range,
        })
    }

    /// Random sparse bigram grammar. Each row keeps `branching` likely
    /// successors among the non-`oov` words, a small floor over all of them,
    /// and exactly `oov_mass` spread over a few `oov` words.
    pub fn random(
        vocab: Vec<usize>,
        oov: &[usize],
        oov_mass: f64,
        branching: usize,
        len_range: (usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        const FLOOR: f64 = 0.05;
        let n = vocab.len();
        let is_oov: Vec<bool> = vocab.iter().map(|t| oov.contains(t)).collect();
        let common: Vec<usize> = (0..n).filter(|&i| !is_oov[i]).collect();
        let rare: Vec<usize> = (0..n).filter(|&i| is_oov[i]).collect();
        if common.is_empty() {
            return Err(Error::config("domain needs at least one in-vocabulary word"));
        }
        let oov_mass = if rare.is_empty() { 0.0 } else { oov_mass };
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row = vec![0.0; n];
            let common_mass = 1.0 - oov_mass;
            for &c in &common {
                row[c] += common_mass * FLOOR / common.len() as f64;
            }
            spread(&mut row, &common, branching, common_mass * (1.0 - FLOOR), rng);
            spread(&mut row, &rare, branching.div_ceil(2), oov_mass, rng);
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
            rows.push(row);
        }
        Self::new(vocab, rows, len_range)
    }

    pub fn contains(&self, token: usize) -> bool {
        self.vocab.contains(&token)
    }
}

fn spread(row: &mut [f64], pool: &[usize], k: usize, mass: f64, rng: &mut impl Rng) {
    if pool.is_empty() || mass == 0.0 {
        return;
    }
    let mut picks: Vec<usize> = Vec::with_capacity(k);
    while picks.len() < k.min(pool.len()) {
        let c = pool[rng.random_range(0..pool.len())];
        if !picks.contains(&c) {
            picks.push(c);
        }
    }
    let weights: Vec<f64> = picks.iter().map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    for (c, w) in picks.iter().zip(weights) {
        row[*c] += mass * w / total;
    }
}

fn draw(dist: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub(crate) fn sample_with(domain: &DomainSpec, rng: &mut impl Rng) -> Vec<usize> {
    let len = rng.random_range(domain.len_range.0..=domain.len_range.1);
    let mut idx = draw(&domain.start, rng);
    let mut out = Vec::with_capacity(len);
    out.push(domain.vocab[idx]);
    while out.len() < len {
        idx = draw(&domain.transitions[idx], rng);
        out.push(domain.vocab[idx]);
    }
    out
}

/// One utterance's token ids; deterministic per seed.
pub fn sample_tokens(domain: &DomainSpec, seed: u64) -> Vec<usize> {
    sample_with(domain, &mut ChaCha8Rng::seed_from_u64(seed))
}
