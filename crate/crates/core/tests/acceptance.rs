//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Criteria 4 and 5 share one five-seed run of the default
//! experiment.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{bits, exhaustive_edits, small_config, small_world};
use te2sl::adaptation::{Strategy, StrategyKind, Te2slConfig, Te2slModule};
use te2sl::corpus::{mix, Split};
use te2sl::harness::{
    adapt_target, check_names, gradient_suite, model_from_tensors, model_tensors, run_all, stage_te2sl, Artifacts,
    ExperimentConfig, ExperimentOutcome, END_TO_END_TOLERANCE, OP_TOLERANCE,
};
use te2sl::metrics::{levenshtein_counts, oov_recall, VocabSet};
use te2sl::model::nn::{Linear, LoraLinear};
use te2sl::model::{checkpoint, frame_stack, AsrModel, ModelConfig, NextTokenModel, Phase, ENCODER_PREFIX, PROJECTOR_PREFIX};
use te2sl::numerics::{apply_update, batch_gradients, AdamW, AdamWConfig, Binder, Graph, ParamStore, Tensor};
use te2sl::par::Exec;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn gradients() -> Verdict {
    let started = Instant::now();
    let (mut worst_op, mut worst_e2e, mut failures) = (0.0f64, 0.0f64, Vec::new());
    for seed in SEEDS {
        let cases = match gradient_suite(seed) {
            Ok(c) => c,
            Err(e) => return verdict(false, format!("seed {seed}: {e}")),
        };
        for c in cases {
            if c.name == "end_to_end_loss" {
                worst_e2e = worst_e2e.max(c.max_rel_error);
            } else {
                worst_op = worst_op.max(c.max_rel_error);
            }
            if !c.passed() {
                failures.push(format!("{}@{seed}", c.name));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        failures.is_empty() && worst_op < OP_TOLERANCE && worst_e2e < END_TO_END_TOLERANCE && secs < 60.0,
        format!(
            "{} checks x 5 seeds, max op rel err {worst_op:.2e} (< {OP_TOLERANCE:.0e}), end-to-end {worst_e2e:.2e} (< {END_TO_END_TOLERANCE:.0e}), {secs:.1} s (< 60 s){}",
            check_names().len(),
            if failures.is_empty() { String::new() } else { format!(", failed: {}", failures.join(" ")) }
        ),
    )
}

fn metrics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let word = |rng: &mut ChaCha8Rng, alphabet: u8| -> Vec<u8> {
        let len = rng.random_range(0..=5);
        (0..len).map(|_| rng.random_range(0..alphabet)).collect()
    };
    let mut agree = 0;
    for _ in 0..200 {
        let alphabet = rng.random_range(1..=4);
        let (r, h) = (word(&mut rng, alphabet), word(&mut rng, alphabet));
        agree += usize::from(levenshtein_counts(&r, &h).edits() == exhaustive_edits(&r, &h));
    }

    let vocab: VocabSet<&str> = ["a", "b"].into_iter().collect();
    let example = oov_recall(&[vec!["a", "x", "b", "y"]], &[vec!["a", "x", "b", "z"]], &vocab)
        .ok()
        .and_then(|r| r.recall);

    let ids: VocabSet<u8> = [0u8, 1].into_iter().collect();
    let mut in_range = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=4);
        let refs: Vec<Vec<u8>> = (0..n).map(|_| word(&mut rng, 6)).collect();
        let hyps: Vec<Vec<u8>> = (0..n).map(|_| word(&mut rng, 6)).collect();
        let ok = match oov_recall(&refs, &hyps, &ids) {
            Ok(r) => r.recall.is_none_or(|v| (0.0..=1.0).contains(&v)),
            Err(_) => false,
        };
        in_range += usize::from(ok);
    }
    verdict(
        agree == 200 && example == Some(0.5) && in_range == 1000,
        format!("levenshtein = exhaustive search on {agree}/200 pairs, worked example Rec_OOV {example:?} (= 0.5), Rec_OOV in [0, 1] on {in_range}/1000"),
    )
}

fn structure() -> Verdict {
    let mut notes = Vec::new();
    let stacked = frame_stack(&Tensor::zeros(&[23, 3]), 5).map(|t| t.rows()).unwrap_or(0);
    notes.push(format!("T=23 k=5 -> {stacked}"));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let base = Linear::new(&mut store, "w", 6, 5, false, true, &mut rng).unwrap();
    let plain = LoraLinear::plain(base.clone());
    let adapted = LoraLinear::with_adapter(&mut store, "w", base, 2, 4.0, &mut rng).unwrap();
    let x = Tensor::randn(&[4, 6], 1.0, &mut rng);
    let run = |layer: &LoraLinear| {
        let mut g = Graph::new();
        let mut b = Binder::new(&store);
        let xv = g.constant(x.clone());
        let y = layer.forward(&mut g, &mut b, xv).unwrap();
        bits(g.value(y).data())
    };
    let (cfg, _, model, data) = small_world(3);
    let mut shifted = model.clone();
    for p in shifted.store.iter_mut() {
        if p.name.ends_with(".lora_a") {
            p.value.data_mut().iter_mut().for_each(|v| *v += 1.0);
        }
    }
    let pair = &data.split(Split::SourceDev).unwrap()[0];
    let prompt = model.audio_prompt(&pair.states).unwrap();
    let lora_exact = run(&plain) == run(&adapted)
        && bits(&model.next_logits(Some(&prompt), &pair.tokens).unwrap())
            == bits(&shifted.next_logits(Some(&prompt), &pair.tokens).unwrap());
    notes.push(format!("LoRA B=0 bit-exact {lora_exact}"));

    let (module, _) = stage_te2sl(&cfg, &model, &data, Exec::default()).unwrap();
    let module_sum = module.store.checksum();
    let frozen = |m: &AsrModel| (m.checksum_prefix(ENCODER_PREFIX), m.checksum_prefix(PROJECTOR_PREFIX));
    let artifacts = Artifacts {
        te2sl: Some(&module),
        soft_prompt: None,
    };
    let (after, _) = adapt_target(
        &model,
        &Strategy::new(StrategyKind::Te2sl),
        artifacts,
        &data.adapt_texts,
        data.split(Split::TargetDev).unwrap(),
        &cfg.adapt,
        cfg.eval.max_len,
        1,
        Exec::default(),
        None,
    )
    .unwrap();
    let untouched = frozen(&after) == frozen(&model)
        && module.store.checksum() == module_sum
        && after.store.checksum() != model.store.checksum();
    notes.push(format!("encoder/projector/TE2SL unchanged {untouched}"));

    let bytes = checkpoint::encode(&model_tensors(&after)).unwrap();
    let again = checkpoint::encode(&model_tensors(&model_from_tensors(&checkpoint::decode(&bytes).unwrap()).unwrap())).unwrap();
    let module_bytes = checkpoint::encode(&module.to_tensors()).unwrap();
    let module_again =
        checkpoint::encode(&Te2slModule::from_tensors(&checkpoint::decode(&module_bytes).unwrap()).unwrap().to_tensors())
            .unwrap();
    let round_trip = bytes == again && module_bytes == module_again;
    notes.push(format!("checkpoint round trip {round_trip}"));

    let dir = tempfile::tempdir().unwrap();
    let report = |name: &str, exec: Exec| -> Vec<Vec<u8>> {
        let out = dir.path().join(name);
        run_all(&small_config(6), exec, Some(&out)).unwrap();
        ["records.jsonl", "summary.jsonl", "summary.txt"]
            .iter()
            .map(|f| std::fs::read(out.join("report").join(f)).unwrap())
            .collect()
    };
    let same = report("a", Exec::Sequential) == report("b", Exec::Parallel);
    notes.push(format!("same-seed reports identical {same}"));

    verdict(stacked == 4 && lora_exact && untouched && round_trip && same, notes.join(", "))
}

struct SeedRun {
    seed: u64,
    outcome: ExperimentOutcome,
    secs: f64,
}

fn default_runs() -> Vec<SeedRun> {
    SEEDS
        .iter()
        .map(|&seed| {
            let cfg = ExperimentConfig {
                seed,
                ..ExperimentConfig::default()
            };
            let started = Instant::now();
            let outcome = run_all(&cfg, Exec::default(), None).expect("default experiment runs");
            SeedRun {
                seed,
                outcome,
                secs: started.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn gap(runs: &[SeedRun]) -> Verdict {
    let mut wins = 0;
    let mut ratios = Vec::new();
    let mut slowest = 0.0f64;
    for r in runs {
        let t = r.outcome.te2sl.as_ref().expect("te2sl stage ran");
        let ratio = t.gap.ratio();
        wins += usize::from(ratio <= 0.7);
        ratios.push(format!("{ratio:.3}"));
        slowest = slowest.max(t.train.wall_clock_secs);
    }
    verdict(
        wins >= 4 && slowest <= 300.0,
        format!(
            "held-out refined/raw MSE ratio [{}] <= 0.7 on {wins}/5 seeds (need 4), slowest training {slowest:.1} s (<= 300 s)",
            ratios.join(", ")
        ),
    )
}

fn target_metrics(run: &SeedRun, kind: StrategyKind) -> (f64, f64) {
    let s = run.outcome.find(kind).expect("strategy ran");
    let r = s
        .results
        .iter()
        .find(|(r, _)| r.split == Split::TargetTest.name())
        .expect("target-test evaluated");
    (r.0.wer, r.0.rec_oov.unwrap_or(0.0))
}

fn ordering(runs: &[SeedRun]) -> Verdict {
    let (mut wer_wins, mut oov_wins, mut vs_mask, mut slowest) = (0, 0, 0, 0.0f64);
    let mut rows = Vec::new();
    for r in runs {
        let (base_wer, base_oov) = target_metrics(r, StrategyKind::None);
        let (wer, oov) = target_metrics(r, StrategyKind::Te2sl);
        let (_, mask_oov) = target_metrics(r, StrategyKind::UpsampleMask);
        wer_wins += usize::from(wer < base_wer);
        oov_wins += usize::from(oov > base_oov);
        vs_mask += usize::from(oov >= mask_oov);
        slowest = slowest.max(r.secs);
        rows.push(format!(
            "seed {}: WER {:.1}/{:.1} Rec_OOV {:.1}/{:.1}/{:.1}",
            r.seed,
            100.0 * wer,
            100.0 * base_wer,
            100.0 * oov,
            100.0 * base_oov,
            100.0 * mask_oov
        ));
    }
    verdict(
        wer_wins >= 4 && oov_wins >= 4 && vs_mask >= 3 && slowest <= 900.0,
        format!(
            "TE2SL WER < baseline on {wer_wins}/5 (need 4), Rec_OOV > baseline on {oov_wins}/5 (need 4), Rec_OOV >= upsample+mask on {vs_mask}/5 (need 3), slowest run-all {slowest:.0} s (<= 900 s); [{}] (TE2SL/baseline, TE2SL/baseline/upsample+mask, %)",
            rows.join("; ")
        ),
    )
}

fn overfit() -> Verdict {
    let config = ModelConfig::tiny();
    let mut model = AsrModel::new(config.clone(), 5, None).unwrap();
    model.set_phase(Phase::Source);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(5, 1));
    let batch: Vec<(Tensor, Vec<usize>)> = (0..4)
        .map(|_| {
            let tokens: Vec<usize> = (0..3).map(|_| rng.random_range(0..config.content_vocab)).collect();
            let features = Tensor::randn(&[8, config.feat_dim], 1.0, &mut rng);
            (model.encode_audio(&features).unwrap(), tokens)
        })
        .collect();
    let opt_config = AdamWConfig {
        lr: 1e-2,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(opt_config, &model.store);
    let mut loss = f64::INFINITY;
    for _ in 0..200 {
        let m = &model;
        let (l, grads) =
            batch_gradients(&m.store, &batch, Exec::Sequential, |g, b, (h, y)| m.paired_loss(g, b, h, y)).unwrap();
        loss = l;
        apply_update(&mut model.store, &mut opt, &grads).unwrap();
        if loss < 0.1 {
            break;
        }
    }

    let te2sl_cfg = Te2slConfig {
        layers: 1,
        hidden: 8,
        heads: 2,
        ff_dim: 8,
        kernel: 3,
    };
    let mut module = Te2slModule::new(te2sl_cfg, config.d_model, 5).unwrap();
    let pairs: Vec<(Tensor, Tensor)> = (0..4)
        .map(|_| {
            (
                Tensor::randn(&[6, config.d_model], 1.0, &mut rng),
                Tensor::randn(&[6, config.d_model], 1.0, &mut rng),
            )
        })
        .collect();
    let mut opt = AdamW::new(opt_config, &module.store);
    let mse = |module: &Te2slModule| {
        batch_gradients(&module.store, &pairs, Exec::Sequential, |g, b, (x, z)| module.mse_loss(g, b, x, z))
            .unwrap()
    };
    let initial = mse(&module).0;
    let mut last = initial;
    for _ in 0..200 {
        let (l, grads) = mse(&module);
        last = l;
        apply_update(&mut module.store, &mut opt, &grads).unwrap();
        if last < 0.1 * initial {
            break;
        }
    }
    last = last.min(mse(&module).0);
    verdict(
        loss < 0.1 && last < 0.1 * initial,
        format!("tiny ASR loss {loss:.4} (< 0.1), TE2SL MSE {last:.4} vs initial {initial:.4} (< 0.1x) within 200 steps"),
    )
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filter.is_empty() && !filter.iter().any(|f| "acceptance".contains(f.as_str())) {
        return ExitCode::SUCCESS;
    }
    let mut all = true;
    let mut report = |n: usize, name: &str, v: Verdict| {
        all &= v.pass;
        println!("[{}] {n} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    };
    report(1, "gradient suite", gradients());
    report(2, "metric oracles", metrics());
    report(3, "structural invariants", structure());
    let runs = default_runs();
    report(4, "modality gap closure", gap(&runs));
    report(5, "strategy ordering", ordering(&runs));
    report(6, "optimization sanity", overfit());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
