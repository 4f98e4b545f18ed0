//! Synthetic paired / text-only corpora with a controlled source → target
//! vocabulary and grammar shift.
//!
//! Word ids are laid out as `[0, source_only)` source-only words, then the
//! words shared by both domains, then the target-only (OOV) words. Each word
//! has an acoustic prototype; an utterance's features repeat each word's
//! prototype for a random number of frames and add Gaussian noise.

mod domain;
mod io;
mod prototypes;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use domain::{sample_tokens, DomainSpec};
pub use io::{load_corpus, write_corpus};
pub use prototypes::{synth_features, PrototypeTable};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::format(format!("unknown domain `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    SourceTrain,
    SourceDev,
    SourceTest,
    TargetAdapt,
    TargetDev,
    TargetTest,
}

impl Split {
    pub const ALL: [Split; 6] = [
        Split::SourceTrain,
        Split::SourceDev,
        Split::SourceTest,
        Split::TargetAdapt,
        Split::TargetDev,
        Split::TargetTest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Split::SourceTrain => "source-train",
            Split::SourceDev => "source-dev",
            Split::SourceTest => "source-test",
            Split::TargetAdapt => "target-adapt",
            Split::TargetDev => "target-dev",
            Split::TargetTest => "target-test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::config(format!("unknown split `{s}`")))
    }

    pub fn domain(self) -> Domain {
        match self {
            Split::SourceTrain | Split::SourceDev | Split::SourceTest => Domain::Source,
            _ => Domain::Target,
        }
    }

    /// Text-only splits carry no features.
    pub fn is_paired(self) -> bool {
        self != Split::TargetAdapt
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub domain: Domain,
    pub tokens: Vec<usize>,
    /// `T_raw × F_raw`; absent for text-only records.
    pub features: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub source_only: usize,
    pub shared: usize,
    pub oov: usize,
    pub feat_dim: usize,
    pub sigma: f64,
    pub dur_lo: usize,
    pub dur_hi: usize,
    pub len_lo: usize,
    pub len_hi: usize,
    /// Probability mass every target transition row puts on OOV words.
    pub oov_mass: f64,
    /// Likely successors per word in each bigram row.
    pub branching: usize,
    /// Pull of each OOV prototype toward a source-only partner word
    /// (0 = independent, 1 = identical).
    pub oov_confusion: f64,
    pub source_train: usize,
    pub source_dev: usize,
    pub source_test: usize,
    pub target_adapt: usize,
    pub target_dev: usize,
    pub target_test: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            source_only: 16,
            shared: 32,
            oov: 16,
            feat_dim: 16,
            sigma: 0.1,
            dur_lo: 6,
            dur_hi: 12,
            len_lo: 3,
            len_hi: 8,
            oov_mass: 0.25,
            branching: 16,
            oov_confusion: 0.0,
            source_train: 2000,
            source_dev: 100,
            source_test: 100,
            target_adapt: 2000,
            target_dev: 100,
            target_test: 300,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn content_vocab(&self) -> usize {
        self.source_only + self.shared + self.oov
    }

    pub fn source_vocab(&self) -> Vec<usize> {
        (0..self.source_only + self.shared).collect()
    }

    pub fn target_vocab(&self) -> Vec<usize> {
        (self.source_only..self.content_vocab()).collect()
    }

    pub fn oov_ids(&self) -> Vec<usize> {
        (self.source_only + self.shared..self.content_vocab()).collect()
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::SourceTrain => self.source_train,
            Split::SourceDev => self.source_dev,
            Split::SourceTest => self.source_test,
            Split::TargetAdapt => self.target_adapt,
            Split::TargetDev => self.target_dev,
            Split::TargetTest => self.target_test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.source_only + self.shared == 0 || self.shared + self.oov == 0 {
            return Err(Error::config("corpus vocabularies must be non-empty"));
        }
        if self.oov == 0 {
            return Err(Error::config("corpus.oov must be positive (OOV recall would be vacuous)"));
        }
        if self.feat_dim == 0 {
            return Err(Error::config("corpus.feat_dim must be positive"));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::config("corpus.sigma must be non-negative"));
        }
        if self.dur_lo == 0 || self.dur_lo > self.dur_hi {
            return Err(Error::config("corpus durations need 1 ≤ dur_lo ≤ dur_hi"));
        }
        if self.len_lo == 0 || self.len_lo > self.len_hi {
            return Err(Error::config("corpus lengths need 1 ≤ len_lo ≤ len_hi"));
        }
        if !(0.0..1.0).contains(&self.oov_mass) || self.oov_mass == 0.0 {
            return Err(Error::config("corpus.oov_mass must lie in (0, 1)"));
        }
        if self.branching == 0 {
            return Err(Error::config("corpus.branching must be positive"));
        }
        if !(0.0..=1.0).contains(&self.oov_confusion) {
            return Err(Error::config("corpus.oov_confusion must lie in [0, 1]"));
        }
        if self.oov_confusion > 0.0 && self.source_only == 0 {
            return Err(Error::config("corpus.oov_confusion needs source-only words"));
        }
        if self.target_test == 0 {
            return Err(Error::config("corpus.target_test must be positive"));
        }
        Ok(())
    }
}

/// Seeds recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSeeds {
    pub lexicon: u64,
    pub splits: Vec<(String, u64)>,
}

impl CorpusSeeds {
    pub fn derive(seed: u64) -> Self {
        Self {
            lexicon: mix(seed, 0x6c65_7869_636f_6e00),
            splits: Split::ALL
                .iter()
                .enumerate()
                .map(|(i, s)| (s.name().to_string(), mix(seed, 0x5350_4c49_5400 + i as u64)))
                .collect(),
        }
    }

    pub fn split(&self, split: Split) -> u64 {
        self.splits
            .iter()
            .find(|(n, _)| n == split.name())
            .map(|(_, s)| *s)
            .expect("every split has a seed")
    }

    pub fn check_distinct(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        seen.insert(self.lexicon);
        for (name, s) in &self.splits {
            if !seen.insert(*s) {
                return Err(Error::config(format!("split `{name}` reuses seed {s}")));
            }
        }
        Ok(())
    }
}

/// SplitMix64 finalizer over `seed ^ salt`.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = (seed ^ salt).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CorpusConfig,
    pub source_vocab: Vec<usize>,
    pub target_vocab: Vec<usize>,
    pub oov: Vec<usize>,
    pub seeds: CorpusSeeds,
    pub counts: Vec<(String, usize)>,
    pub target_test_oov_tokens: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub manifest: Manifest,
    pub prototypes: PrototypeTable,
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub splits: Vec<(Split, Vec<Utterance>)>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Utterance] {
        self.splits
            .iter()
            .find(|(s, _)| *s == split)
            .map(|(_, u)| u.as_slice())
            .unwrap_or(&[])
    }

    pub fn oov_set(&self) -> BTreeSet<usize> {
        self.manifest.oov.iter().copied().collect()
    }

    pub fn source_vocab(&self) -> BTreeSet<usize> {
        self.manifest.source_vocab.iter().copied().collect()
    }

    /// Word prototypes, used to seed the LM's embedding table.
    pub fn embedding_prior(&self) -> &Tensor {
        &self.prototypes.prototypes
    }
}

fn generate_split(
    split: Split,
    cfg: &CorpusConfig,
    seed: u64,
    source: &DomainSpec,
    target: &DomainSpec,
    table: &PrototypeTable,
) -> Result<Vec<Utterance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = match split.domain() {
        Domain::Source => source,
        Domain::Target => target,
    };
    (0..cfg.split_size(split))
        .map(|i| {
            let tokens = domain::sample_with(domain, &mut rng);
            let features = if split.is_paired() {
                Some(prototypes::synth_with(&tokens, table, &mut rng)?)
            } else {
                None
            };
            Ok(Utterance {
                id: format!("{}-{:05}", split.name(), i),
                domain: split.domain(),
                tokens,
                features,
            })
        })
        .collect()
}

/// Deterministic corpus for `(cfg, cfg.seed)`.
pub fn generate_corpus(cfg: &CorpusConfig, exec: Exec) -> Result<Corpus> {
    generate_corpus_with_seeds(cfg, CorpusSeeds::derive(cfg.seed), exec)
}

pub fn generate_corpus_with_seeds(cfg: &CorpusConfig, seeds: CorpusSeeds, exec: Exec) -> Result<Corpus> {
    cfg.validate()?;
    seeds.check_distinct()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.lexicon);
    let table = PrototypeTable::generate(cfg, &mut rng)?;
    let oov = cfg.oov_ids();
    let source = DomainSpec::random(
        cfg.source_vocab(),
        &[],
        0.0,
        cfg.branching,
        (cfg.len_lo, cfg.len_hi),
        &mut rng,
    )?;
    let target = DomainSpec::random(
        cfg.target_vocab(),
        &oov,
        cfg.oov_mass,
        cfg.branching,
        (cfg.len_lo, cfg.len_hi),
        &mut rng,
    )?;

    let results = exec.map(&Split::ALL, |&split| {
        generate_split(split, cfg, seeds.split(split), &source, &target, &table)
    });
    let mut splits = Vec::with_capacity(Split::ALL.len());
    for (split, r) in Split::ALL.into_iter().zip(results) {
        splits.push((split, r?));
    }

    let oov_set: BTreeSet<usize> = oov.iter().copied().collect();
    let target_test_oov_tokens = splits
        .iter()
        .find(|(s, _)| *s == Split::TargetTest)
        .map(|(_, u)| {
            u.iter()
                .flat_map(|u| &u.tokens)
                .filter(|t| oov_set.contains(t))
                .count()
        })
        .unwrap_or(0);
    if target_test_oov_tokens == 0 {
        return Err(Error::config(
            "generated target-test split has no OOV tokens; raise oov_mass or target_test",
        ));
    }
    let manifest = Manifest {
        config: cfg.clone(),
        source_vocab: cfg.source_vocab(),
        target_vocab: cfg.target_vocab(),
        oov,
        seeds,
        counts: splits
            .iter()
            .map(|(s, u)| (s.name().to_string(), u.len()))
            .collect(),
        target_test_oov_tokens,
    };
    Ok(Corpus {
        manifest,
        prototypes: table,
        source,
        target,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig {
            source_train: 40,
            source_dev: 5,
            source_test: 5,
            target_adapt: 30,
            target_dev: 5,
            target_test: 20,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn split_sizes_match_config() {
        let cfg = small();
        let c = generate_corpus(&cfg, Exec::default()).unwrap();
        for s in Split::ALL {
            assert_eq!(c.split(s).len(), cfg.split_size(s), "{}", s.name());
            for u in c.split(s) {
                assert_eq!(u.features.is_some(), s.is_paired());
            }
        }
    }

    #[test]
    fn manifest_oov_is_vocabulary_difference() {
        let c = generate_corpus(&small(), Exec::default()).unwrap();
        let src: BTreeSet<_> = c.manifest.source_vocab.iter().copied().collect();
        let diff: Vec<usize> = c
            .manifest
            .target_vocab
            .iter()
            .copied()
            .filter(|t| !src.contains(t))
            .collect();
        assert_eq!(diff, c.manifest.oov);
        assert!(c.manifest.target_test_oov_tokens > 0);
    }

    #[test]
    fn tokens_stay_in_domain_vocabulary() {
        let c = generate_corpus(&small(), Exec::default()).unwrap();
        let src = c.source_vocab();
        let tgt: BTreeSet<_> = c.manifest.target_vocab.iter().copied().collect();
        for (split, utts) in &c.splits {
            let vocab = if split.domain() == Domain::Source { &src } else { &tgt };
            for u in utts {
                assert!(u.tokens.iter().all(|t| vocab.contains(t)));
            }
        }
    }

    #[test]
    fn paired_records_leave_a_frame_per_token_after_stacking() {
        let c = generate_corpus(&small(), Exec::default()).unwrap();
        for (_, utts) in &c.splits {
            for u in utts {
                if let Some(f) = &u.features {
                    assert!(f.rows() / 5 >= u.tokens.len());
                }
            }
        }
    }

    #[test]
    fn sequential_and_parallel_generation_agree() {
        let a = generate_corpus(&small(), Exec::Sequential).unwrap();
        let b = generate_corpus(&small(), Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reused_split_seed_rejected() {
        let mut seeds = CorpusSeeds::derive(3);
        seeds.splits[2].1 = seeds.splits[0].1;
        assert!(generate_corpus_with_seeds(&small(), seeds, Exec::default()).is_err());
    }
}
