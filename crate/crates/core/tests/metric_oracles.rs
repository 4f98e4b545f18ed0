mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::exhaustive_edits;
use te2sl::metrics::{error_rate, levenshtein_counts, oov_counts, oov_recall, EditCounts, VocabSet};

fn random_word(rng: &mut impl Rng, alphabet: u8) -> Vec<u8> {
    let len = rng.random_range(0..=5);
    (0..len).map(|_| rng.random_range(0..alphabet)).collect()
}

#[test]
fn levenshtein_matches_exhaustive_search_on_200_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let alphabet = rng.random_range(1..=4);
        let r = random_word(&mut rng, alphabet);
        let h = random_word(&mut rng, alphabet);
        let c = levenshtein_counts(&r, &h);
        assert_eq!(c.edits(), exhaustive_edits(&r, &h), "{r:?} vs {h:?}");
        assert_eq!(c.n, r.len());
    }
}

#[test]
fn worked_oov_example_is_one_half() {
    let vocab: VocabSet<&str> = ["a", "b"].into_iter().collect();
    let refs = [vec!["a", "x", "b", "y"]];
    let hyps = [vec!["a", "x", "b", "z"]];
    let r = oov_recall(&refs, &hyps, &vocab).unwrap();
    assert_eq!(r.value().unwrap(), 0.5);
    assert_eq!(r.total, EditCounts { n: 2, s: 1, d: 0, i: 0 });
}

#[test]
fn oov_recall_in_unit_interval_on_1000_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab: VocabSet<u8> = [0u8, 1].into_iter().collect();
    let mut defined = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=4);
        let refs: Vec<Vec<u8>> = (0..n).map(|_| random_word(&mut rng, 6)).collect();
        let hyps: Vec<Vec<u8>> = (0..n).map(|_| random_word(&mut rng, 6)).collect();
        let r = oov_recall(&refs, &hyps, &vocab).unwrap();
        if let Some(v) = r.recall {
            assert!((0.0..=1.0).contains(&v), "{v}");
            defined += 1;
        } else {
            assert_eq!(r.total.n, 0);
        }
    }
    assert!(defined > 900);
}

#[test]
fn empty_reference_has_no_error_rate() {
    assert!(error_rate(levenshtein_counts::<u8>(&[], &[1, 2])).is_err());
    assert_eq!(error_rate(levenshtein_counts(&[1u8, 2], &[1, 2])).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn edit_counts_are_consistent(
        r in prop::collection::vec(0u8..4, 0..7),
        h in prop::collection::vec(0u8..4, 0..7),
    ) {
        let c = levenshtein_counts(&r, &h);
        prop_assert_eq!(c.n, r.len());
        prop_assert_eq!(c.matches() + c.s + c.i, h.len());
        prop_assert_eq!(c.edits(), levenshtein_counts(&h, &r).edits());
        prop_assert!(c.edits() <= r.len().max(h.len()));
        prop_assert!(c.edits() >= r.len().abs_diff(h.len()));
    }

    #[test]
    fn identical_sequences_have_no_edits(r in prop::collection::vec(0u8..6, 0..10)) {
        prop_assert_eq!(levenshtein_counts(&r, &r).edits(), 0);
    }

    #[test]
    fn triangle_inequality(
        a in prop::collection::vec(0u8..3, 0..6),
        b in prop::collection::vec(0u8..3, 0..6),
        c in prop::collection::vec(0u8..3, 0..6),
    ) {
        let ab = levenshtein_counts(&a, &b).edits();
        let bc = levenshtein_counts(&b, &c).edits();
        let ac = levenshtein_counts(&a, &c).edits();
        prop_assert!(ac <= ab + bc);
    }

    #[test]
    fn oov_counts_only_see_oov_reference_words(
        r in prop::collection::vec(0u8..6, 0..8),
        h in prop::collection::vec(0u8..6, 0..8),
    ) {
        let vocab: VocabSet<u8> = [0u8, 1, 2].into_iter().collect();
        let c = oov_counts(&r, &h, &vocab);
        prop_assert_eq!(c.n, r.iter().filter(|t| **t > 2).count());
    }

    #[test]
    fn perfect_hypotheses_recall_everything(
        refs in prop::collection::vec(prop::collection::vec(0u8..6, 1..6), 1..5),
    ) {
        let vocab: VocabSet<u8> = [0u8].into_iter().collect();
        let r = oov_recall(&refs, &refs, &vocab).unwrap();
        if r.total.n > 0 {
            prop_assert_eq!(r.value().unwrap(), 1.0);
        }
    }
}
