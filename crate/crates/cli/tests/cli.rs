use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qualgauss_core::dataio::read_ground_truth;
use qualgauss_core::model::HeadModel;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qualgauss")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "`qualgauss {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn synth_is_byte_identical_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["synth", "--n", "200", "--d", "6", "--seed", "7", "--holdout", "50", "--out", p(out)]);
    }
    for name in ["train.csv", "holdout.csv", "ground_truth.txt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    let c = dir.path().join("c");
    ok(&["synth", "--n", "200", "--d", "6", "--seed", "8", "--out", p(&c)]);
    assert_ne!(fs::read(a.join("train.csv")).unwrap(), fs::read(c.join("train.csv")).unwrap());
}

#[test]
fn small_noise_data_loads_strictly_without_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--n", "300", "--d", "4", "--seed", "1", "--noise-std", "0.05", "--out", p(d)]);
    let out = ok(&[
        "train", "--train", p(&d.join("train.csv")), "--checkpoint", p(&d.join("m.ckpt")), "--epochs", "1",
        "--hidden-dims", "8", "--strict",
    ]);
    assert!(!stderr(&out).contains("warning"), "{}", stderr(&out));
}

#[test]
fn zero_samples_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--n", "0", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn independent_variant_checkpoint_has_ten_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--n", "100", "--d", "5", "--seed", "2", "--out", p(d)]);
    let ckpt = d.join("ind.ckpt");
    ok(&[
        "train", "--train", p(&d.join("train.csv")), "--checkpoint", p(&ckpt), "--variant", "independent",
        "--epochs", "1", "--hidden-dims", "8",
    ]);
    let model = HeadModel::load(&ckpt).unwrap();
    assert_eq!(model.config().output_dim(), 10);
    assert!(d.join("ind.ckpt.trace.tsv").is_file());
}

#[test]
fn converged_run_fits_training_data_near_the_noise_floor() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--n", "2000", "--d", "8", "--seed", "3", "--noise-std", "0.3", "--out", p(d)]);
    let ckpt = d.join("m.ckpt");
    let reports = d.join("reports");
    ok(&[
        "train", "--train", p(&d.join("train.csv")), "--checkpoint", p(&ckpt), "--learning-rate", "1e-3",
        "--epochs", "40", "--hidden-dims", "64,32",
    ]);
    ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&d.join("train.csv")), "--report-dir", p(&reports), "--scatter", "mos,noi"]);

    let truth = read_ground_truth(d.join("ground_truth.txt")).unwrap();
    let csv = fs::read_to_string(reports.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    for (i, name) in ["mos", "noi", "col", "dis", "loud"].iter().enumerate() {
        let col = header.iter().position(|h| *h == format!("{name}_rmse")).unwrap();
        let got: f64 = row[col].parse().unwrap();
        let floor = truth.noise_cov[(i, i)].sqrt();
        assert!(got < 1.2 * floor, "{name}: rmse {got} vs noise std {floor}");
    }

    let scatter = fs::read_to_string(reports.join("scatter_mos_noi.csv")).unwrap();
    assert_eq!(scatter.lines().count() - 1, 2000);
    assert!(reports.join("report.txt").is_file());
}

#[test]
fn missing_checkpoint_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.ckpt");
    let out = run(&["eval", "--checkpoint", p(&missing), "--data", p(&dir.path().join("x.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains(p(&missing)), "{}", stderr(&out));
}

#[test]
fn variant_mismatch_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--n", "50", "--d", "3", "--seed", "4", "--out", p(d)]);
    let ckpt = d.join("full.ckpt");
    ok(&["train", "--train", p(&d.join("train.csv")), "--checkpoint", p(&ckpt), "--epochs", "1", "--hidden-dims", "4"]);
    let out = run(&["eval", "--checkpoint", p(&ckpt), "--data", p(&d.join("train.csv")), "--variant", "mse"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("schema"), "{}", stderr(&out));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--n", "60", "--d", "3", "--seed", "5", "--out", p(d)]);
    let cfg = d.join("run.cfg");
    fs::write(&cfg, "# test\nvariant = independent\nepochs = 1\nhidden_dims = 4\n").unwrap();
    let ckpt = d.join("m.ckpt");
    ok(&["train", "--config", p(&cfg), "--train", p(&d.join("train.csv")), "--checkpoint", p(&ckpt), "--variant", "mse"]);
    let model = HeadModel::load(&ckpt).unwrap();
    assert_eq!(model.config().output_dim(), 5);
    assert_eq!(model.config().hidden_dims, vec![4]);

    fs::write(&cfg, "bogus = 1\n").unwrap();
    let out = run(&["train", "--config", p(&cfg), "--train", p(&d.join("train.csv"))]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));
}

#[test]
fn help_lists_defaults() {
    let out = ok(&["train", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["--learning-rate", "0.0001", "--epochs", "30", "--batch-size", "32", "256,64"] {
        assert!(text.contains(needle), "help lacks {needle}:\n{text}");
    }
}
