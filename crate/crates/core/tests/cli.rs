use std::path::Path;
use std::process::{Command, Output};

use kldproj::cli::ProjectionFile;
use kldproj::{gaussian, io, projections};
use serde_json::Value;

fn kldproj(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kldproj"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn kldproj")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = kldproj(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn gen_fit_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let stdout = ok(
        dir,
        &[
            "gen", "--seed", "5", "--d", "8", "--n", "300", "--n-test", "100", "--out", "data",
        ],
    );
    assert!(stdout.contains("wrote data/class1.json"));

    ok(
        dir,
        &[
            "fit",
            "--params",
            "data/class1.json",
            "data/class2.json",
            "--r",
            "2",
            "--method",
            "alg1",
            "--out",
            "fit.json",
        ],
    );
    let fit: ProjectionFile = io::read_json(&dir.join("fit.json")).unwrap();
    let p1 = io::read_params(&dir.join("data/class1.json")).unwrap();
    let p2 = io::read_params(&dir.join("data/class2.json")).unwrap();
    let direct = projections::algorithm1(&p1, &p2, 2).unwrap();
    assert_eq!(fit.achieved_kld.to_bits(), direct.achieved_kld.to_bits());
    assert_eq!(
        fit.full_kld.to_bits(),
        gaussian::kld(&p1, &p2).unwrap().to_bits()
    );
    assert_eq!(fit.original_rows().unwrap(), direct.original_rows);

    ok(
        dir,
        &[
            "eval",
            "--projection",
            "fit.json",
            "--data",
            "data/dataset.csv",
            "--test",
            "data/test.csv",
            "--sweep-r",
            "1..8",
            "--classify",
            "--scatter",
            "--out-dir",
            "eval",
        ],
    );
    let report: Value = io::read_json(&dir.join("eval/report.json")).unwrap();
    assert_eq!(
        report["sweep_invariants"],
        Value::String("ok".into()),
        "{report}"
    );
    let sweep = std::fs::read_to_string(dir.join("eval/sweep.csv")).unwrap();
    let rows: Vec<&str> = sweep.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "method,r,kld");
    assert_eq!(rows.len(), 1 + 3 * 8);
    assert!(dir.join("eval/scatter.csv").exists());
}

#[test]
fn auto_switches_to_multiclass_lda() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "gen",
            "--seed",
            "9",
            "--d",
            "10",
            "--classes",
            "4",
            "--common-cov",
            "--out",
            ".",
        ],
    );
    ok(
        dir,
        &[
            "fit",
            "--params",
            "class1.json",
            "class2.json",
            "class3.json",
            "class4.json",
            "--r",
            "3",
            "--out",
            "p.json",
        ],
    );
    let fit: ProjectionFile = io::read_json(&dir.join("p.json")).unwrap();
    assert_eq!(fit.method, projections::Method::MulticlassLda);
    assert_eq!(fit.r, 3);
    for (i, row) in fit.pairwise_ratios.unwrap().iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            if i != j {
                assert!((x - 1.0).abs() < 1e-8, "ratio ({i},{j}) = {x}");
            }
        }
    }
}

#[test]
fn regime_reports_recommendation() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "gen", "--seed", "2", "--d", "40", "--t", "4", "--ratio", "10", "--out", ".",
        ],
    );
    let stdout = ok(
        dir,
        &[
            "regime",
            "--params",
            "class1.json",
            "class2.json",
            "--r",
            "3",
        ],
    );
    let v: Value = serde_json::from_str(&stdout).unwrap();
    let split = v["d_mu"].as_f64().unwrap() / v["d_sigma"].as_f64().unwrap();
    assert!((split - 10.0).abs() < 1e-6, "{v}");
    assert_eq!(v["recommendation"], "alg1");
}

#[test]
fn validation_errors_are_structured() {
    let tmp = tempfile::tempdir().unwrap();
    let out = kldproj(tmp.path(), &["gen", "--d", "4"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "InvalidArgument");

    let out = kldproj(
        tmp.path(),
        &[
            "fit",
            "--params",
            "missing.json",
            "missing2.json",
            "--r",
            "1",
        ],
    );
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let args = [
        "gen", "--seed", "17", "--d", "30", "--t", "5", "--n", "200", "--out", "run",
    ];
    ok(dir, &args);
    let first = std::fs::read(dir.join("run/dataset.csv")).unwrap();
    let chan = std::fs::read(dir.join("run/channel.json")).unwrap();
    ok(dir, &args);
    assert_eq!(first, std::fs::read(dir.join("run/dataset.csv")).unwrap());
    assert_eq!(chan, std::fs::read(dir.join("run/channel.json")).unwrap());
}
