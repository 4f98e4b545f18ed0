use std::collections::BTreeSet;

use te2sl::corpus::{generate_corpus, sample_tokens, CorpusConfig, Domain, Split};
use te2sl::par::Exec;

fn corpus() -> te2sl::corpus::Corpus {
    let cfg = CorpusConfig {
        source_train: 300,
        target_adapt: 300,
        target_test: 100,
        ..CorpusConfig::default()
    };
    generate_corpus(&cfg, Exec::Sequential).unwrap()
}

#[test]
fn oov_frequency_within_twenty_percent_over_10k_tokens() {
    let c = corpus();
    let oov = c.oov_set();
    let mass = c.manifest.config.oov_mass;
    let mut seen = 0usize;
    let mut hits = 0usize;
    let mut seed = 0u64;
    while seen < 10_000 {
        let toks = sample_tokens(&c.target, seed);
        hits += toks.iter().filter(|t| oov.contains(t)).count();
        seen += toks.len();
        seed += 1;
    }
    let freq = hits as f64 / seen as f64;
    assert!((freq - mass).abs() <= 0.2 * mass, "OOV frequency {freq} vs {mass}");
}

#[test]
fn lengths_and_vocabularies_respect_the_config() {
    let c = corpus();
    let cfg = &c.manifest.config;
    let source: BTreeSet<usize> = cfg.source_vocab().into_iter().collect();
    let target: BTreeSet<usize> = cfg.target_vocab().into_iter().collect();
    for split in Split::ALL {
        for u in c.split(split) {
            assert!((cfg.len_lo..=cfg.len_hi).contains(&u.tokens.len()), "{}", u.id);
            let allowed = match split.domain() {
                Domain::Source => &source,
                Domain::Target => &target,
            };
            assert!(u.tokens.iter().all(|t| allowed.contains(t)), "{}", u.id);
            match &u.features {
                Some(f) => {
                    assert!(split.is_paired());
                    assert_eq!(f.cols(), cfg.feat_dim);
                    let n = u.tokens.len();
                    assert!((n * cfg.dur_lo..=n * cfg.dur_hi).contains(&f.rows()));
                }
                None => assert!(!split.is_paired()),
            }
        }
    }
}

#[test]
fn source_text_never_contains_oov_words() {
    let c = corpus();
    let oov = c.oov_set();
    for split in [Split::SourceTrain, Split::SourceDev, Split::SourceTest] {
        assert!(c.split(split).iter().flat_map(|u| &u.tokens).all(|t| !oov.contains(t)));
    }
    let test_oov: usize = c.split(Split::TargetTest).iter().flat_map(|u| &u.tokens).filter(|t| oov.contains(t)).count();
    assert!(test_oov > 0);
}

#[test]
fn generation_is_seeded() {
    let a = corpus();
    let b = corpus();
    assert_eq!(a, b);
    let other = generate_corpus(
        &CorpusConfig {
            seed: 1,
            source_train: 300,
            target_adapt: 300,
            target_test: 100,
            ..CorpusConfig::default()
        },
        Exec::Sequential,
    )
    .unwrap();
    assert_ne!(a.split(Split::SourceTrain)[0].tokens, other.split(Split::SourceTrain)[0].tokens);
}
