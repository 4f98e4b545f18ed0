use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "corpus.source_only=4",
    "corpus.shared=8",
    "corpus.oov=4",
    "corpus.feat_dim=8",
    "corpus.len_lo=2",
    "corpus.len_hi=5",
    "corpus.source_train=24",
    "corpus.source_dev=6",
    "corpus.source_test=6",
    "corpus.target_adapt=24",
    "corpus.target_dev=6",
    "corpus.target_test=6",
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
    "optim.source.epochs=1",
    "optim.adapt.epochs=1",
    "optim.te2sl.epochs=1",
    "optim.soft_prompt.epochs=1",
    "eval.max_len=8",
];

fn te2sl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_te2sl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn small(cmd: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd.to_string(), "--out".into(), out.display().to_string()];
    for kv in SMALL {
        args.push("--set".into());
        args.push(kv.to_string());
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    te2sl(&refs)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&te2sl(&["--help"])), 0);
    assert_eq!(code(&te2sl(&["run-all", "--help"])), 0);
    assert_eq!(code(&te2sl(&["no-such-command"])), 1);
}

#[test]
fn configuration_problems_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let o = te2sl(&["generate-corpus", "--out", out.to_str().unwrap(), "--set", "corpus.nonsense=3"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&te2sl(&["generate-corpus"])), 1);
    let o = te2sl(&["report", dir.path().join("missing.jsonl").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradcheck_passes() {
    let o = te2sl(&["gradcheck", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() > 5);
    assert!(!text.contains("FAIL"));
}

#[test]
fn staged_pipeline_respects_outputs_and_requirements() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s);

    assert_eq!(code(&small("generate-corpus", &p("corpus"), &[])), 0);
    assert_eq!(code(&small("generate-corpus", &p("corpus"), &[])), 1);
    assert_eq!(code(&small("generate-corpus", &p("corpus"), &["--force"])), 0);

    let corpus = p("corpus").display().to_string();
    let o = small("train-source", &p("source"), &["--corpus", &corpus]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let model = p("source/model.ckpt").display().to_string();
    let inputs = ["--corpus", corpus.as_str(), "--model", model.as_str()];

    let mut args = inputs.to_vec();
    args.extend(["--strategy", "te2sl"]);
    let o = small("adapt", &p("adapt"), &args);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--te2sl"));

    assert_eq!(code(&small("train-te2sl", &p("module"), &inputs)), 0);
    let module = p("module/module.ckpt").display().to_string();
    args.extend(["--te2sl", module.as_str()]);
    let o = small("adapt", &p("adapt"), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let adapted = p("adapt/model.ckpt").display().to_string();
    let o = small("evaluate", &p("eval"), &["--corpus", &corpus, "--model", &adapted, "--strategy", "te2sl"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(p("eval/summary.jsonl").exists());
}

#[test]
fn run_all_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = small("run-all", &dir.path().join("a"), &["--seed", "9"]);
    let b = small("run-all", &dir.path().join("b"), &["--seed", "9", "--jobs", "1"]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(code(&b), 0);
    assert_eq!(a.stdout, b.stdout);
    let read = |d: &str| std::fs::read(dir.path().join(d).join("report/summary.jsonl")).unwrap();
    assert_eq!(read("a"), read("b"));

    let again = small("run-all", &dir.path().join("a"), &["--seed", "9"]);
    assert_eq!(code(&again), 1);
}
