//! End-to-end CLI smoke tests: the full workflow on a tiny corpus, plus the
//! determinism guarantees the file formats promise.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_infill"))
}

fn run(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("spawn infill");
    assert!(
        out.status.success(),
        "command {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_err(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("spawn infill");
    assert!(!out.status.success(), "command {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        r#"
seed = 42

[model]
emb_dim = 10
hidden_dim = 14
encoder = "uni"

[eval_lm]
emb_dim = 10
hidden_dim = 18

[train]
learning_rate = 2.0
batch_size = 16
epochs = 3
valid_fraction = 0.1

[tigs]
k = 3
max_rounds = 10

[beam]
width = 3
max_rounds = 10
"#,
    )
    .unwrap();
    path
}

#[test]
fn full_workflow_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus.tsv");
    let data = root.join("data");
    let cfg = write_config(root);

    run(&["synth", "--out", p(&corpus), "--pairs", "300", "--seed", "7"]);
    run(&[
        "prepare",
        "--corpus",
        p(&corpus),
        "--out-dir",
        p(&data),
        "--test-fraction",
        "0.1",
        "--seed",
        "7",
    ]);
    assert!(data.join("vocab.txt").exists());
    assert!(data.join("train.tsv").exists());
    assert!(data.join("test.tsv").exists());

    // Train the four roles with a tiny budget.
    for (role, name) in [
        ("forward", "fwd.ckpt"),
        ("backward", "bwd.ckpt"),
        ("birnn", "birnn.ckpt"),
        ("eval-lm", "eval_lm.ckpt"),
    ] {
        run(&[
            "train",
            "--config",
            p(&cfg),
            "--data",
            p(&data),
            "--role",
            role,
            "--out",
            p(&root.join(name)),
        ]);
    }

    // Mask: same seed twice gives byte-identical files.
    let templates = root.join("templates.txt");
    run(&[
        "mask", "--data", p(&data.join("test.tsv")), "--vocab", p(&data.join("vocab.txt")),
        "--strategy", "random", "--ratio", "0.5", "--seed", "11", "--out", p(&templates),
    ]);
    let second = root.join("templates2.txt");
    run(&[
        "mask", "--data", p(&data.join("test.tsv")), "--vocab", p(&data.join("vocab.txt")),
        "--strategy", "random", "--ratio", "0.5", "--seed", "11", "--out", p(&second),
    ]);
    let t1 = std::fs::read_to_string(&templates).unwrap();
    let t2 = std::fs::read_to_string(&second).unwrap();
    assert_eq!(t1, t2, "same seed must give byte-identical template files");
    assert!(templates.with_extension("txt.src").exists() || src_exists(&templates));

    // Fill with two algorithms; rerunning is deterministic.
    let fills_bsf = root.join("fills_bsf.tsv");
    run(&[
        "infill", "--templates", p(&templates), "--vocab", p(&data.join("vocab.txt")),
        "--model", p(&root.join("fwd.ckpt")), "--algo", "bs-f",
        "--out", p(&fills_bsf), "--config", p(&cfg),
    ]);
    let fills_tigs = root.join("fills_tigs.tsv");
    run(&[
        "infill", "--templates", p(&templates), "--vocab", p(&data.join("vocab.txt")),
        "--model", p(&root.join("fwd.ckpt")), "--algo", "tigs",
        "--out", p(&fills_tigs), "--config", p(&cfg), "--workers", "2",
    ]);
    let fills_gsn = root.join("fills_gsn.tsv");
    run(&[
        "infill", "--templates", p(&templates), "--vocab", p(&data.join("vocab.txt")),
        "--model", p(&root.join("fwd.ckpt")), "--model-birnn", p(&root.join("birnn.ckpt")),
        "--algo", "gsn", "--out", p(&fills_gsn), "--config", p(&cfg),
    ]);
    let rerun = root.join("fills_tigs2.tsv");
    run(&[
        "infill", "--templates", p(&templates), "--vocab", p(&data.join("vocab.txt")),
        "--model", p(&root.join("fwd.ckpt")), "--algo", "tigs",
        "--out", p(&rerun), "--config", p(&cfg),
    ]);
    // Identical fills and scores; only the wall-clock column may differ.
    let strip_ms = |path: &Path| -> Vec<String> {
        data_lines(path)
            .iter()
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                f[..f.len() - 1].join("\t")
            })
            .collect()
    };
    assert_eq!(
        strip_ms(&fills_tigs),
        strip_ms(&rerun),
        "infill must reproduce identical fills and scores"
    );

    // Evaluate both fill files; rerunning reproduces the metric columns.
    let report = root.join("report.tsv");
    let fills_arg = format!("{},{}", p(&fills_bsf), p(&fills_tigs));
    run(&[
        "eval", "--fills", &fills_arg, "--refs", p(&data.join("test.tsv")),
        "--vocab", p(&data.join("vocab.txt")), "--eval-lm", p(&root.join("eval_lm.ckpt")),
        "--out", p(&report), "--config", p(&cfg), "--sampled-refs", "10",
    ]);
    let report2 = root.join("report2.tsv");
    run(&[
        "eval", "--fills", &fills_arg, "--refs", p(&data.join("test.tsv")),
        "--vocab", p(&data.join("vocab.txt")), "--eval-lm", p(&root.join("eval_lm.ckpt")),
        "--out", p(&report2), "--config", p(&cfg), "--sampled-refs", "10",
    ]);
    let metric_cols = |path: &Path| -> Vec<String> {
        data_lines(path)
            .iter()
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                // drop the wall-clock column, everything else must match
                f[..f.len() - 1].join("\t")
            })
            .collect()
    };
    assert_eq!(metric_cols(&report), metric_cols(&report2));

    // The report has one row per (file, algorithm).
    assert_eq!(data_lines(&report).len(), 2);
}

fn src_exists(templates: &Path) -> bool {
    let mut s = templates.as_os_str().to_os_string();
    s.push(".src");
    PathBuf::from(s).exists()
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

#[test]
fn oracle_refuses_over_cap_and_matches_brute_force_shape() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let corpus = root.join("corpus.tsv");
    let data = root.join("data");
    let cfg = write_config(root);

    run(&["synth", "--out", p(&corpus), "--pairs", "200", "--seed", "3"]);
    run(&[
        "prepare", "--corpus", p(&corpus), "--out-dir", p(&data),
        "--test-fraction", "0.1", "--seed", "3",
    ]);
    run(&[
        "train", "--config", p(&cfg), "--data", p(&data), "--role", "forward",
        "--out", p(&root.join("fwd.ckpt")),
    ]);
    let templates = root.join("t.txt");
    run(&[
        "mask", "--data", p(&data.join("test.tsv")), "--vocab", p(&data.join("vocab.txt")),
        "--strategy", "middle", "--ratio", "0.25", "--seed", "5", "--out", p(&templates),
    ]);

    // Vocabulary (~100 tokens) exceeds the default 64 cap: refusal.
    let err = run_err(&[
        "oracle", "--model", p(&root.join("fwd.ckpt")), "--templates", p(&templates),
        "--vocab", p(&data.join("vocab.txt")), "--out", p(&root.join("oracle.tsv")),
    ]);
    assert!(err.contains("refuses"), "stderr: {err}");

    // Raising the cap lets single-blank instances through.
    run(&[
        "oracle", "--model", p(&root.join("fwd.ckpt")), "--templates", p(&templates),
        "--vocab", p(&data.join("vocab.txt")), "--out", p(&root.join("oracle.tsv")),
        "--max-vocab", "4000", "--max-blanks", "3",
    ]);
    let rows = data_lines(&root.join("oracle.tsv"));
    assert!(!rows.is_empty());
    for row in &rows {
        let fields: Vec<&str> = row.split('\t').collect();
        assert_eq!(fields.len(), 6);
    }
}

#[test]
fn seed_is_mandatory() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    // No config, no --seed: infill must refuse before doing anything.
    let err = run_err(&[
        "infill",
        "--templates",
        p(&root.join("missing.txt")),
        "--vocab",
        p(&root.join("missing_vocab.txt")),
        "--model",
        p(&root.join("missing.ckpt")),
        "--algo",
        "bs-f",
        "--out",
        p(&root.join("out.tsv")),
    ]);
    assert!(err.contains("seed"), "stderr: {err}");
}
