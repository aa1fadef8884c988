use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psvma_core::checkpoint;
use psvma_core::data::GzslDataset;
use psvma_core::evaluator::{score_test_set, EvalReport};

const SMALL: &str = r#"
[data]
num_seen = 3
num_unseen = 2
num_attributes = 6
num_groups = 2
num_patches = 4
token_dim = 8
semantic_dim = 8
variants = 2
active_attributes = 2
samples_per_class = 6

[model]
semantic_dim = 8

[model.backbone]
mode = "identity"
num_layers = 2
token_dim = 8

[model.dsvtm]
num_attributes = 6
num_patches = 4
width = 8
num_groups = 2
mlp_ratio = 2

[train]
epochs = 3
batch_size = 4
"#;

fn psvma(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psvma"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn ok(out: Output) -> Output {
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    out
}

/// Writes the small config, generates its dataset and trains on it.
fn trained(dir: &Path) {
    fs::write(dir.join("small.toml"), SMALL).unwrap();
    ok(psvma(dir, &["gen-data", "--config", "small.toml", "--out", "data"]));
    ok(psvma(dir, &["train", "--config", "small.toml", "--data", "data", "--out", "run"]));
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn no_staging_left(dir: &Path) -> bool {
    fs::read_dir(dir)
        .unwrap()
        .all(|e| !e.unwrap().file_name().to_string_lossy().starts_with(".psvma-staging-"))
}

#[test]
fn gen_data_is_byte_identical_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    ok(psvma(dir.path(), &["gen-data", "--out", "a", "--seed", "11", "--preset", "sun-shape"]));
    ok(psvma(dir.path(), &["gen-data", "--seed", "11", "--out", "b", "--preset", "sun-shape"]));
    let (a, b) = (files(&dir.path().join("a")), files(&dir.path().join("b")));
    assert!(a.iter().any(|(p, _)| p == Path::new("run_config.toml")));
    assert_eq!(a, b);
    let data = GzslDataset::load(&dir.path().join("a")).unwrap();
    assert_eq!((data.seen_classes().len(), data.unseen_classes().len()), (645, 72));
}

#[test]
fn training_writes_checkpoint_metrics_and_a_reproducing_echo() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let run = dir.path().join("run");
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics.starts_with("epoch,L_cls,L_sem,L_deb,total,seen_train_acc\n"));
    ok(psvma(dir.path(), &["train", "--config", "run/run_config.toml", "--out", "again"]));
    // The echo records how each run was invoked, which differs; everything
    // it configures must not.
    let outputs = |d: &Path| {
        let mut f = files(d);
        f.retain(|(p, _)| p != Path::new("run_config.toml"));
        f
    };
    let again = dir.path().join("again");
    assert_eq!(outputs(&run), outputs(&again));
    let strip = |d: &Path| {
        let text = fs::read_to_string(d.join("run_config.toml")).unwrap();
        text.split("[invocation]").next().unwrap().to_string()
    };
    assert_eq!(strip(&run), strip(&again));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    ok(psvma(
        dir.path(),
        &["train", "--config", "small.toml", "--data", "data", "--out", "r2", "--epochs", "1", "--lambda-deb", "0"],
    ));
    let ckpt = checkpoint::load(&dir.path().join("r2/checkpoint"), None).unwrap();
    assert_eq!((ckpt.train.epochs, ckpt.train.weights.lambda_deb), (1, 0.0));
    let echo = fs::read_to_string(dir.path().join("r2/run_config.toml")).unwrap();
    assert!(echo.contains("epochs = 1"), "{echo}");
}

#[test]
fn eval_at_zero_is_plain_argmax_and_one_step_sweep_matches() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let common = ["--checkpoint", "run/checkpoint", "--data", "data"];
    ok(psvma(dir.path(), &[&["eval"][..], &common, &["--gamma", "0", "--out", "ev"]].concat()));
    let report: EvalReport =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ev/report.json")).unwrap()).unwrap();
    let ckpt = checkpoint::load(&dir.path().join("run/checkpoint"), None).unwrap();
    let data = GzslDataset::load(&dir.path().join("data")).unwrap();
    let set = score_test_set(&ckpt.model, &data, ckpt.train.weights.tau).unwrap();
    for (rec, sv) in report.records.iter().zip(&set.scores) {
        let argmax = (0..sv.len()).fold(0, |b, c| if sv.scores[c] > sv.scores[b] { c } else { b });
        assert_eq!(rec.prediction, argmax);
    }
    assert!(dir.path().join("ev/distributions.csv").is_file());

    ok(psvma(
        dir.path(),
        &[&["sweep-gamma"][..], &common, &["--from", "0", "--to", "3", "--steps", "1", "--out", "sw"]].concat(),
    ));
    let csv = fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row, vec![0.0, report.u, report.s, report.h]);
    assert_eq!(csv.lines().count(), 2);

    ok(psvma(
        dir.path(),
        &[&["sweep-gamma"][..], &common, &["--from", "-1", "--to", "2", "--steps", "4", "--out", "sw4"]].concat(),
    ));
    let csv = fs::read_to_string(dir.path().join("sw4/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn export_attn_writes_one_matrix_per_module_and_loop() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let args = ["export-attn", "--checkpoint", "run/checkpoint", "--data", "data", "--sample", "2", "--out", "attn"];
    ok(psvma(dir.path(), &args));
    let csvs: Vec<_> = files(&dir.path().join("attn"))
        .into_iter()
        .filter(|(p, _)| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    assert_eq!(csvs.len(), 4);
    let text = String::from_utf8(csvs[0].1.clone()).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert_eq!(text.lines().next().unwrap(), "attribute,patch_0,patch_1,patch_2,patch_3");

    let out = psvma(
        dir.path(),
        &["export-attn", "--checkpoint", "run/checkpoint", "--data", "data", "--sample", "999", "--out", "bad"],
    );
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("bad").exists());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&psvma(dir.path(), &["gen-data", "--out", "x", "--bogus"])), 1);
    assert_eq!(code(&psvma(dir.path(), &["eval", "--data", "d", "--gamma", "0"])), 1);
    assert_eq!(code(&psvma(dir.path(), &["train", "--data", "d"])), 1);
    assert_eq!(code(&psvma(dir.path(), &["gen-data", "--out", "x", "--preset", "imagenet"])), 1);
    assert_eq!(code(&psvma(dir.path(), &["--help"])), 0);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn validation_errors_exit_two_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = psvma(dir.path(), &["train", "--data", "missing", "--out", "run"]);
    assert_eq!(code(&out), 2);
    assert_eq!(stderr(&out).lines().count(), 1, "{}", stderr(&out));

    fs::write(dir.path().join("typo.toml"), "[model.dsvtm]\nwidht = 8\n").unwrap();
    let out = psvma(dir.path(), &["gen-data", "--config", "typo.toml", "--out", "d"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("widht"));

    fs::write(dir.path().join("bad.toml"), "[data]\nnum_groups = 0\n").unwrap();
    assert_eq!(code(&psvma(dir.path(), &["gen-data", "--config", "bad.toml", "--out", "d"])), 2);

    ok(psvma(dir.path(), &["gen-data", "--out", "d"]));
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let out = psvma(dir.path(), &["train", "--config", "small.toml", "--data", "d", "--out", "run"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("num_attributes") || stderr(&out).contains("token_dim"));
    assert!(!dir.path().join("run").exists());
    assert!(no_staging_left(dir.path()));
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    ok(psvma(dir.path(), &["gen-data", "--out", "d", "--seed", "1"]));
    assert_eq!(code(&psvma(dir.path(), &["gen-data", "--out", "d", "--seed", "2"])), 2);
    ok(psvma(dir.path(), &["gen-data", "--out", "d", "--seed", "2", "--force"]));
    assert_eq!(GzslDataset::load(&dir.path().join("d")).unwrap().config.seed, 2);
}

#[test]
fn divergent_training_exits_three_without_output() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    ok(psvma(dir.path(), &["gen-data", "--config", "small.toml", "--out", "data"]));
    let out = psvma(
        dir.path(),
        &["train", "--config", "small.toml", "--data", "data", "--out", "run", "--lr", "1e300", "--epochs", "20"],
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"));
    assert!(!dir.path().join("run").exists());
    assert!(no_staging_left(dir.path()));
}

#[test]
fn gradcheck_reports_and_fails_at_an_impossible_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(psvma(dir.path(), &["gradcheck", "--out", "gc"]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("passed"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("gc/gradcheck.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["coverage"]["sampled"], 4);

    fs::write(dir.path().join("strict.toml"), "[gradcheck]\nthreshold = 1e-15\nper_param = 1\n").unwrap();
    let out = psvma(dir.path(), &["gradcheck", "--config", "strict.toml", "--out", "strict"]);
    assert_eq!(code(&out), 3);
    assert!(dir.path().join("strict/gradcheck.json").is_file());

    let out = psvma(dir.path(), &["gradcheck", "--h", "0.1", "--out", "coarse"]);
    assert_eq!(code(&out), 2);
}
