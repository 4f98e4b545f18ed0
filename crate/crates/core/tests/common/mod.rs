#![allow(dead_code)]

use te2sl::corpus::{generate_corpus, Corpus};
use te2sl::harness::{encode_corpus, init_model, EncodedCorpus, ExperimentConfig};
use te2sl::model::AsrModel;
use te2sl::par::Exec;

/// A configuration that runs the whole pipeline in about a second.
pub fn small_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    for kv in [
        "corpus.source_only=4",
        "corpus.shared=8",
        "corpus.oov=4",
        "corpus.feat_dim=8",
        "corpus.len_lo=2",
        "corpus.len_hi=5",
        "corpus.source_train=40",
        "corpus.source_dev=8",
        "corpus.source_test=8",
        "corpus.target_adapt=40",
        "corpus.target_dev=8",
        "corpus.target_test=12",
        "model.feat_dim=8",
        "model.content_vocab=16",
        "model.enc_dim=8",
        "model.enc_ff=16",
        "model.proj_hidden=16",
        "model.d_model=16",
        "model.lm_layers=1",
        "model.lm_heads=2",
        "model.lm_ff=16",
        "model.max_positions=48",
        "model.lora_rank=2",
        "model.lora_alpha=4",
        "model.te2sl_layers=1",
        "model.te2sl_hidden=8",
        "model.te2sl_heads=2",
        "model.te2sl_ff=16",
        "model.te2sl_kernel=3",
        "strategy.soft_prompt_len=3",
        "optim.source.epochs=2",
        "optim.adapt.epochs=2",
        "optim.te2sl.epochs=2",
        "optim.soft_prompt.epochs=1",
        "eval.max_len=8",
    ] {
        cfg.set_override(kv).unwrap();
    }
    cfg.seed = seed;
    cfg.validate().unwrap();
    cfg
}

pub fn small_world(seed: u64) -> (ExperimentConfig, Corpus, AsrModel, EncodedCorpus) {
    let cfg = small_config(seed);
    let corpus = generate_corpus(&cfg.corpus_config(), Exec::Sequential).unwrap();
    let model = init_model(&cfg, &corpus).unwrap();
    let data = encode_corpus(&model, &corpus, Exec::Sequential).unwrap();
    (cfg, corpus, model, data)
}

pub fn bits(data: &[f64]) -> Vec<u64> {
    data.iter().map(|v| v.to_bits()).collect()
}

/// Fewest edits over every edit script, by plain recursion with no table.
pub fn exhaustive_edits<T: PartialEq>(r: &[T], h: &[T]) -> usize {
    match (r.split_first(), h.split_first()) {
        (None, None) => 0,
        (Some(_), None) => r.len(),
        (None, Some(_)) => h.len(),
        (Some((a, rr)), Some((b, hr))) => {
            let keep = exhaustive_edits(rr, hr) + usize::from(a != b);
            let del = exhaustive_edits(rr, h) + 1;
            let ins = exhaustive_edits(r, hr) + 1;
            keep.min(del).min(ins)
        }
    }
}
