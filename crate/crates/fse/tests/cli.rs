//! End-to-end runs of the `fse` binary on a tiny dataset.

use std::path::Path;
use std::process::{Command, Output};

fn fse(args: &[&str], threads: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fse"));
    c.args(args);
    if let Some(t) = threads {
        c.env("FSE_THREADS", t);
    }
    c.output().expect("fse runs")
}

fn ok(args: &[&str]) -> String {
    let o = fse(args, None);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    fse(args, None).status.code().unwrap()
}

fn bytes(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(p: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(p).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn simulate_is_reproducible_and_creates_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a/nested"), dir.path().join("b"));
    ok(&["simulate", "--seed", "7", "--scale", "200", "--out", s(&a)]);
    ok(&["simulate", "--seed", "7", "--scale", "200", "--out", s(&b)]);
    assert_eq!(bytes(&a.join("manifest.json")), bytes(&b.join("manifest.json")));
    assert_eq!(bytes(&a.join("tracks.jsonl")), bytes(&b.join("tracks.jsonl")));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(code(&["simulate", "--scale", "0", "--out", s(&out)]), 2);
    assert_eq!(code(&["train", "--variant", "lstm-bogus"]), 2);
    assert_eq!(code(&["train", "--variant", "kalman", "--streams", "one"]), 2);
    assert_eq!(code(&["evaluate", "--variant", "kalman", "--streams", "two"]), 2);
    assert_eq!(code(&["evaluate", "--past", "5"]), 2);
    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["--help"]), 0);
    let missing = dir.path().join("missing");
    assert_eq!(code(&["evaluate", "--variant", "kalman", "--streams", "one", "--dataset", s(&missing)]), 3);
    let ckpt = dir.path().join("bad.fse");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let args = ["evaluate", "--profile", "tiny", "--scale", "400", "--variant", "lstm", "--streams", "one"];
    let mut with_ckpt = args.to_vec();
    with_ckpt.extend(["--checkpoint", s(&ckpt), "--out", s(&out)]);
    assert_eq!(code(&with_ckpt), 3);

    let o = fse(&["train", "--variant", "lstm-bogus"], None);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("kalman, constant, lstm, lstm-aleatoric, lstm-bayesian"), "{err}");
}

#[test]
fn gradcheck_passes_and_lists_parameters() {
    let out = ok(&["gradcheck"]);
    assert!(out.contains("PASS"));
    assert!(out.contains("bbox:") && out.contains("odometry:"));
    assert!(out.lines().filter(|l| l.starts_with("  ")).count() > 4, "{out}");
}

#[test]
fn train_and_evaluate_are_bitwise_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--seed", "2", "--scale", "200", "--out", s(&data)]);
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let common = [
            "--profile", "tiny", "--dataset", s(&data), "--variant", "lstm-bayesian", "--streams", "two", "--out", s(&out),
        ];
        for cmd in ["train", "evaluate", "calibration"] {
            let mut args = vec![cmd];
            args.extend(common);
            let o = fse(&args, Some(threads));
            assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
        out
    };
    let a = run("a", "1");
    let b = run("b", "3");
    for f in ["bbox.fse", "odometry.fse", "metrics.csv", "metrics_per_step.csv", "fig3.csv", "calibration_summary.csv"] {
        assert_eq!(bytes(&a.join(f)), bytes(&b.join(f)), "{f}");
    }

    // Per-step rows: exactly n per metric.
    let per_step = csv_rows(&a.join("metrics_per_step.csv"));
    let horizon = 6;
    for metric in ["mse", "nll", "speed_mse", "angle_mse"] {
        let rows: Vec<_> = per_step.iter().filter(|r| &r[4] == metric && &r[3] == "all").collect();
        assert_eq!(rows.len(), horizon, "{metric}");
    }
    // Every row carries the same config hash.
    let metrics = csv_rows(&a.join("metrics.csv"));
    let hash = metrics[0][14].to_string();
    assert_eq!(hash.len(), 64);
    assert!(metrics.iter().chain(&per_step).all(|r| r[r.len() - 1] == hash));
}

#[test]
fn kalman_and_constant_run_without_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let k = dir.path().join("k");
    ok(&["evaluate", "--profile", "tiny", "--scale", "200", "--variant", "kalman", "--streams", "one", "--out", s(&k)]);
    let rows = csv_rows(&k.join("metrics.csv"));
    assert_eq!(&rows[0][0], "kalman");
    assert!(rows[0][6].parse::<f64>().unwrap() > 0.0);
    assert!(rows[0][7].is_empty(), "the Kalman filter reports no likelihood");
    let c = dir.path().join("c");
    ok(&["evaluate", "--profile", "tiny", "--scale", "200", "--variant", "constant", "--streams", "one", "--out", s(&c)]);
    let rows = csv_rows(&c.join("metrics.csv"));
    assert!(rows.iter().all(|r| &r[0] == "constant" && !r[9].is_empty()));
}

/// Independent Spearman: Pearson correlation of average ranks.
fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|a| {
                let below = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[test]
fn calibration_output_schema_envelope_and_spearman() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cal");
    let common = ["--profile", "tiny", "--scale", "200", "--variant", "lstm-bayesian", "--streams", "one", "--out", s(&out)];
    for cmd in ["train", "calibration"] {
        let mut args = vec![cmd];
        args.extend(common);
        ok(&args);
    }
    let mut reader = csv::Reader::from_path(out.join("fig3.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["split", "uncertainty", "sq_error", "envelope", "config_hash"]);
    let rows = csv_rows(&out.join("fig3.csv"));
    let summary = csv_rows(&out.join("calibration_summary.csv"));
    assert!(!summary.is_empty());
    for s in &summary {
        let split = &s[0];
        assert!(["all", "t+5", "t+10", "t+15"].contains(&split));
        let pairs: Vec<(f64, f64, f64)> = rows
            .iter()
            .filter(|r| &r[0] == split)
            .map(|r| (r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap()))
            .collect();
        assert_eq!(pairs.len(), s[1].parse::<usize>().unwrap());
        assert!(pairs.windows(2).all(|w| w[1].2 >= w[0].2), "{split}: envelope decreases");
        let (u, e): (Vec<f64>, Vec<f64>) = pairs.iter().map(|p| (p.0, p.1)).unzip();
        let reported: f64 = s[2].parse().unwrap();
        assert!((reported - spearman_oracle(&u, &e)).abs() < 1e-9, "{split}");
    }
}

#[test]
fn make_all_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("all");
    ok(&["make-all", "--profile", "tiny", "--scale", "400", "--out", s(&out)]);
    for f in ["table1.csv", "table3.csv", "table4.csv", "fig3.csv", "per_step.csv", "dataset/manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let t1 = csv_rows(&out.join("table1.csv"));
    // Kalman, three networks and the oracle, for three history lengths.
    assert_eq!(t1.len(), 15);
    let methods: Vec<&str> = t1.iter().map(|r| &r[0]).take(5).collect();
    assert_eq!(methods, ["kalman", "lstm", "lstm-aleatoric", "lstm-bayesian", "lstm-bayesian"]);
    let t3 = csv_rows(&out.join("table3.csv"));
    assert!(t3.iter().any(|r| &r[0] == "lstm" && &r[2] == "raster" && &r[4] == "curved"));
    let t4 = csv_rows(&out.join("table4.csv"));
    assert!(t4.iter().any(|r| &r[1] == "two" && !r[12].is_empty()));
}
