mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{bits, small_config, small_world};
use te2sl::adaptation::{Strategy, StrategyKind, Te2slModule};
use te2sl::corpus::{write_corpus, Split};
use te2sl::harness::{
    adapt_target, model_from_tensors, model_tensors, run_all, stage_te2sl, Artifacts,
};
use te2sl::model::nn::{Linear, LoraLinear};
use te2sl::model::{checkpoint, frame_stack, is_lora, AsrModel, NextTokenModel, ENCODER_PREFIX, PROJECTOR_PREFIX};
use te2sl::numerics::{Binder, Graph, ParamStore, Tensor};
use te2sl::par::Exec;

#[test]
fn frame_stack_keeps_whole_groups() {
    let h = Tensor::new(vec![23, 2], (0..46).map(f64::from).collect()).unwrap();
    let s = frame_stack(&h, 5).unwrap();
    assert_eq!(s.shape(), &[4, 10]);
    assert_eq!(s.row(1), &(10..20).map(f64::from).collect::<Vec<_>>()[..]);
    for t in 5..40 {
        assert_eq!(frame_stack(&Tensor::zeros(&[t, 3]), 5).unwrap().rows(), t / 5);
    }
}

#[test]
fn lora_with_zero_b_is_the_base_layer_bit_for_bit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let base = Linear::new(&mut store, "w", 6, 5, false, true, &mut rng).unwrap();
    let plain = LoraLinear::plain(base.clone());
    let adapted = LoraLinear::with_adapter(&mut store, "w", base, 2, 4.0, &mut rng).unwrap();
    let x = Tensor::randn(&[7, 6], 1.0, &mut rng);
    let run = |layer: &LoraLinear| {
        let mut g = Graph::new();
        let mut b = Binder::new(&store);
        let xv = g.constant(x.clone());
        let y = layer.forward(&mut g, &mut b, xv).unwrap();
        bits(g.value(y).data())
    };
    assert_eq!(run(&plain), run(&adapted));
}

#[test]
fn lora_a_is_invisible_while_b_is_zero() {
    let (_, _, model, data) = small_world(0);
    let mut other = model.clone();
    for p in other.store.iter_mut() {
        if p.name.ends_with(".lora_a") {
            p.value.data_mut().iter_mut().for_each(|v| *v = *v * -3.0 + 0.5);
        }
    }
    assert_ne!(model.store.checksum(), other.store.checksum());
    let pair = &data.split(Split::SourceDev).unwrap()[0];
    let prompt = model.audio_prompt(&pair.states).unwrap();
    for prefix in [&[][..], &pair.tokens[..]] {
        let a = model.next_logits(Some(&prompt), prefix).unwrap();
        let b = other.next_logits(Some(&prompt), prefix).unwrap();
        assert_eq!(bits(&a), bits(&b));
    }
}

fn frozen_parts(model: &AsrModel) -> [u64; 2] {
    [model.checksum_prefix(ENCODER_PREFIX), model.checksum_prefix(PROJECTOR_PREFIX)]
}

#[test]
fn adaptation_only_moves_lora_weights() {
    let (cfg, _, model, data) = small_world(1);
    let (module, _) = stage_te2sl(&cfg, &model, &data, Exec::Sequential).unwrap();
    let module_sum = module.store.checksum();
    let artifacts = Artifacts {
        te2sl: Some(&module),
        soft_prompt: None,
    };
    let adapt = |kind| {
        adapt_target(
            &model,
            &Strategy::new(kind),
            artifacts,
            &data.adapt_texts,
            data.split(Split::TargetDev).unwrap(),
            &cfg.adapt,
            cfg.eval.max_len,
            9,
            Exec::Sequential,
            None,
        )
        .unwrap()
        .0
    };

    let adapted = adapt(StrategyKind::Te2sl);
    assert_eq!(frozen_parts(&adapted), frozen_parts(&model));
    assert_eq!(module.store.checksum(), module_sum);
    let mut moved = 0;
    for ((name, before), (_, after)) in model.store.named_values().iter().zip(adapted.store.named_values()) {
        if bits(before.data()) != bits(after.data()) {
            assert!(is_lora(name), "{name} changed");
            moved += 1;
        }
    }
    assert!(moved > 0);

    let upsampled = adapt(StrategyKind::UpsampleMask);
    assert_eq!(frozen_parts(&upsampled), frozen_parts(&model));
    assert_eq!(adapt(StrategyKind::None).store.checksum(), model.store.checksum());
}

#[test]
fn checkpoints_round_trip_byte_identically() {
    let (cfg, corpus, model, _) = small_world(2);
    let bytes = checkpoint::encode(&model_tensors(&model)).unwrap();
    let back = model_from_tensors(&checkpoint::decode(&bytes).unwrap()).unwrap();
    assert_eq!(checkpoint::encode(&model_tensors(&back)).unwrap(), bytes);
    assert_eq!(back.config, model.config);

    let module = Te2slModule::new(cfg.te2sl, cfg.model.d_model, 1).unwrap();
    let bytes = checkpoint::encode(&module.to_tensors()).unwrap();
    let again = Te2slModule::from_tensors(&checkpoint::decode(&bytes).unwrap()).unwrap();
    assert_eq!(checkpoint::encode(&again.to_tensors()).unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("a"), &corpus).unwrap();
    let loaded = te2sl::corpus::load_corpus(&dir.path().join("a")).unwrap();
    write_corpus(&dir.path().join("b"), &loaded).unwrap();
    for entry in std::fs::read_dir(dir.path().join("a")).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(dir.path().join("a").join(&name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(&name)).unwrap();
        assert!(a == b, "{name:?} differs");
    }
}

fn report_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    ["records.jsonl", "summary.jsonl", "summary.txt"]
        .iter()
        .map(|f| (f.to_string(), std::fs::read(dir.join("report").join(f)).unwrap()))
        .collect()
}

#[test]
fn same_seed_reports_are_byte_identical() {
    let cfg = small_config(4);
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_all(&cfg, Exec::Sequential, Some(&a)).unwrap();
    run_all(&cfg, Exec::Parallel, Some(&b)).unwrap();
    assert_eq!(report_bytes(&a), report_bytes(&b));
    assert_eq!(
        std::fs::read(a.join("source").join("model.ckpt")).unwrap(),
        std::fs::read(b.join("source").join("model.ckpt")).unwrap()
    );

    let c = dir.path().join("c");
    run_all(&small_config(5), Exec::Sequential, Some(&c)).unwrap();
    assert_ne!(report_bytes(&a), report_bytes(&c));
}
