use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use convm::io::tdf;
use convm::layers::{LayerKind, NetworkSpec};

fn convm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convm")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn audit_reference_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = convm(&["audit", "--out", "a"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("a/param_audit.csv"));
    assert_eq!(rows.last().unwrap()[2], "4118080");
    assert!(rows.iter().all(|r| r[4].is_empty() || r[4] == "0"));
}

#[test]
fn audit_flags_only_the_modified_layer() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = NetworkSpec::reference();
    let LayerKind::ConvM(cfg) = &mut spec.layer_mut(4).unwrap().kind else { panic!("layer 4 is a Conv-M") };
    assert_eq!(cfg.c5, 32);
    cfg.c5 = 64;
    fs::write(dir.path().join("spec.toml"), toml::to_string(&spec).unwrap()).unwrap();
    let o = convm(&["audit", "--spec", "spec.toml", "--out", "."], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let rows = csv_rows(&dir.path().join("param_audit.csv"));
    let nonzero: Vec<&str> = rows.iter().filter(|r| !r[4].is_empty() && r[4] != "0").map(|r| r[0].as_str()).collect();
    assert_eq!(nonzero, ["4"]);
}

#[test]
fn audit_reports_malformed_spec_by_layer() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = NetworkSpec::reference();
    let LayerKind::ConvM(cfg) = &mut spec.layer_mut(6).unwrap().kind else { panic!("layer 6 is a Conv-M") };
    cfg.c2 = 30;
    fs::write(dir.path().join("bad.toml"), toml::to_string(&spec).unwrap()).unwrap();
    let o = convm(&["audit", "--spec", "bad.toml"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("layer 6"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn solve_groups_prints_four_for_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = convm(&["audit", "--solve-groups"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    let solved: Vec<&str> = text.lines().filter(|l| l.contains(": g = ")).collect();
    assert_eq!(solved.len(), 7);
    assert!(solved.iter().all(|l| l.ends_with("g = 4")));
}

#[test]
fn gradcheck_passes_and_catches_a_sign_flip() {
    let dir = tempfile::tempdir().unwrap();
    let ok = convm(&["gradcheck"], dir.path());
    assert!(ok.status.success(), "{}", stdout(&ok));
    let targeted = convm(&["gradcheck", "--op", "conv2d", "--dilation", "3", "--groups", "4"], dir.path());
    assert!(targeted.status.success());
    assert!(stdout(&targeted).contains("dilation=3, groups=4"));
    let flipped = convm(&["gradcheck", "--op", "conv2d", "--inject-sign-flip"], dir.path());
    assert_eq!(flipped.status.code(), Some(1));
    assert!(stdout(&flipped).contains("FAIL"));
}

#[test]
fn make_synth_counts_and_regenerates_identically() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| ["make-synth", "--classes", "10", "--per-class", "200", "--shift", "hue+affine", "--seed", "3", "--out", out];
    assert!(convm(&args("a"), dir.path()).status.success());
    assert!(convm(&args("b"), dir.path()).status.success());
    let rows = csv_rows(&dir.path().join("a/manifest.csv"));
    assert_eq!(rows.len(), 4000);
    assert_eq!(rows.iter().filter(|r| r[2] == "source").count(), 2000);
    assert_eq!(fs::read_dir(dir.path().join("a/target")).unwrap().count(), 2000);
    for rel in ["manifest.csv", "normalization.json", "source/00000.tdf", "target/01999.tdf"] {
        assert_eq!(fs::read(dir.path().join("a").join(rel)).unwrap(), fs::read(dir.path().join("b").join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn unshifted_domains_have_matching_class_means() {
    let dir = tempfile::tempdir().unwrap();
    let o = convm(&["make-synth", "--classes", "4", "--per-class", "100", "--shift", "none", "--out", "d"], dir.path());
    assert!(o.status.success());
    let rows = csv_rows(&dir.path().join("d/manifest.csv"));
    let mean_of = |domain: &str, label: &str| {
        let (mut sum, mut n) = (0.0, 0usize);
        for r in rows.iter().filter(|r| r[2] == domain && r[1] == label) {
            let t = tdf::read_file(dir.path().join("d").join(&r[0])).unwrap().to_tensor::<f64>().unwrap();
            sum += t.data().iter().sum::<f64>() / t.len() as f64;
            n += 1;
        }
        sum / n as f64
    };
    for label in ["0", "1", "2", "3"] {
        let (s, t) = (mean_of("source", label), mean_of("target", label));
        assert!((s - t).abs() < 0.01, "class {label}: {s} vs {t}");
    }
}

const TINY_RUN: &str = r#"
network = "tiny"
[data]
holdout = 5
[solver]
base_lr = 0.01
max_steps = 12
batch = 16
"#;

fn prepare_run(dir: &Path) {
    assert!(convm(&["make-synth", "--classes", "3", "--per-class", "10", "--out", "data"], dir).status.success());
    fs::write(dir.join("run.toml"), TINY_RUN).unwrap();
}

#[test]
fn source_only_then_da_training_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare_run(d);

    let base = ["--config", "run.toml", "--seed", "5"];
    let o = convm(&[&base[..], &["train", "--data", "data", "--out", "src"]].concat(), d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.toml", "spec_hash.txt", "metrics.csv", "model.ckpt", "summary.json", "normalization.json"] {
        assert!(d.join("src").join(f).exists(), "{f}");
    }
    let copied: toml::Table = toml::from_str(&fs::read_to_string(d.join("src/config.toml")).unwrap()).unwrap();
    assert_eq!(copied["solver"]["seed"].as_integer(), Some(5));

    let o = convm(&[&base[..], &["train", "--mode", "da", "--init", "src/model.ckpt", "--data", "data", "--out", "da"]].concat(), d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = csv_rows(&d.join("da/metrics.csv"));
    assert_eq!(metrics.len(), 12);
    assert!(metrics.iter().all(|r| (5..8).all(|c| r[c].parse::<f64>().is_ok())), "three MMD columns per step");

    // reruns are deterministic
    let o = convm(&[&base[..], &["train", "--mode", "da", "--init", "src/model.ckpt", "--data", "data", "--out", "da2"]].concat(), d);
    assert!(o.status.success());
    assert_eq!(fs::read(d.join("da/metrics.csv")).unwrap(), fs::read(d.join("da2/metrics.csv")).unwrap());
    assert_eq!(fs::read(d.join("da/model.ckpt")).unwrap(), fs::read(d.join("da2/model.ckpt")).unwrap());

    let o = convm(&["eval", "--checkpoint", "da/model.ckpt", "--data", "data", "--split", "source-test"], d);
    assert!(o.status.success());
    let acc: f64 = stdout(&o).split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let o = convm(&["export-features", "--checkpoint", "da/model.ckpt", "--data", "data", "--layer", "12", "--count", "4", "--out", "feat"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["c3", "dic2", "dec2"] {
        let t = tdf::read_file(d.join(format!("feat/l12_{name}.tdf"))).unwrap();
        assert_eq!(t.shape[0], 4);
    }
    let o = convm(&["export-features", "--checkpoint", "da/model.ckpt", "--data", "data", "--layer", "5"], d);
    assert!(!o.status.success(), "layer 5 is a pooling layer");
}

#[test]
fn da_without_init_is_rejected_and_corrupt_checkpoints_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare_run(d);
    let o = convm(&["--config", "run.toml", "train", "--mode", "da", "--data", "data", "--out", "x"], d);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("init"));

    assert!(convm(&["--config", "run.toml", "train", "--data", "data", "--out", "src", "--max-steps", "2"], d).status.success());
    let mut bytes = fs::read(d.join("src/model.ckpt")).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(d.join("bad.ckpt"), bytes).unwrap();
    let o = convm(&["eval", "--checkpoint", "bad.ckpt", "--data", "data"], d);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("tensor `"), "{}", String::from_utf8_lossy(&o.stderr));
}
