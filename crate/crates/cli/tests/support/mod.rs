//! Helpers for driving the `ctd` binary from integration tests.

#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

/// Small model and short training, enough to exercise every stage quickly.
pub const TINY_CONFIG: &str = r#"
[encoder]
ego_hidden = 8
edge_hidden = 4

[score]
hidden = [16, 8]
epochs = 3

[diffusion]
steps = 10
epochs = 1

[diffusion.denoiser]
width = 16
heads = 2
blocks = 1
ffn = 16
time_dim = 8
cond_dim = 8

[eval]
max_histories = 3
n_c = 2
n_s = 2
adherence_grid = 3
adherence_samples = 2
grid_size = 2
grid_samples = 1
"#;

pub fn ctd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctd"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("ctd runs")
}

/// Runs `ctd` and panics with its stderr unless it succeeds.
pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = ctd(dir, args);
    assert!(
        out.status.success(),
        "ctd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// A short ETH/UCY style annotation file: three pedestrians walking in
/// parallel for 40 annotated frames, 0.4 s apart.
pub fn raw_annotations() -> String {
    let mut s = String::new();
    for f in 0..40 {
        for ped in 1..=3 {
            let x = 0.05 * f as f64 * (1.0 + 0.1 * ped as f64);
            let y = ped as f64;
            s.push_str(&format!("{}\t{ped}\t{x:.4}\t{y:.4}\n", f * 10));
        }
    }
    s
}

/// Every stage of the pipeline in `dir`, with two scorers so the grid
/// sweep has something to sweep. Returns the names of files written.
pub fn run_pipeline(dir: &Path, seed: &str) -> Vec<&'static str> {
    std::fs::write(dir.join("tiny.toml"), TINY_CONFIG).unwrap();
    std::fs::write(dir.join("raw.txt"), raw_annotations()).unwrap();
    let c = ["--config", "tiny.toml", "--seed", seed];
    let run = |args: &[&str]| ok(dir, &[&c[..], args].concat());
    run(&["gen-data", "--count", "150", "--out", "corpus.jsonl"]);
    run(&["import-ethucy", "--raw", "raw.txt", "--out", "eth.jsonl", "--report", "eth.json"]);
    for k in ["slow-down", "turn-right"] {
        let out = format!("{k}.pairs");
        run(&["make-pairs", "--corpus", "corpus.jsonl", "--constraint", k, "--fraction", "0.2", "--out", &out]);
    }
    run(&["train-score", "--corpus", "corpus.jsonl", "--pairs", "slow-down.pairs", "--out", "s1.ckpt", "--report", "s1.txt"]);
    run(&[
        "train-score", "--corpus", "corpus.jsonl", "--pairs", "turn-right.pairs", "--init", "s1.ckpt",
        "--freeze-encoder", "--out", "s2.ckpt", "--report", "s2.txt",
    ]);
    run(&["score-corpus", "--checkpoint", "s2.ckpt", "--corpus", "corpus.jsonl", "--out", "scores.csv"]);
    run(&[
        "train-diffusion", "--checkpoint", "s2.ckpt", "--corpus", "corpus.jsonl", "--scores", "scores.csv",
        "--out", "full.ckpt", "--report", "loss.csv",
    ]);
    run(&[
        "predict", "--checkpoint", "full.ckpt", "--corpus", "corpus.jsonl", "--c", "0.2,0.9", "--samples", "3",
        "--out", "pred.csv", "--svg", "pred.svg",
    ]);
    run(&["eval", "--checkpoint", "full.ckpt", "--corpus", "corpus.jsonl", "--out", "eval.csv"]);
    for kind in ["adherence", "grid"] {
        let (out, fig) = (format!("{kind}.csv"), format!("{kind}.svg"));
        run(&["sweep", "--kind", kind, "--checkpoint", "full.ckpt", "--corpus", "corpus.jsonl", "--out", &out, "--svg", &fig]);
    }
    vec![
        "corpus.jsonl", "eth.jsonl", "eth.json", "slow-down.pairs", "turn-right.pairs", "s1.ckpt", "s1.txt",
        "s2.ckpt", "s2.txt", "scores.csv", "full.ckpt", "loss.csv", "pred.csv", "pred.svg", "eval.csv",
        "adherence.csv", "adherence.svg", "grid.csv", "grid.svg",
    ]
}

/// Files from `files` whose contents differ between two directories.
pub fn differing(a: &Path, b: &Path, files: &[&str]) -> Vec<String> {
    files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap())
        .map(|f| f.to_string())
        .collect()
}
