use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fiberm2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fiberm2"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fiberm2(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    fiberm2(args).status.code().expect("exit code")
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(rows: &[Vec<String>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

#[test]
fn modes_lists_ten_for_the_reference_fiber() {
    let v: Value = serde_json::from_str(&ok(&["modes", "--json"])).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 10);
    let v: Value = serde_json::from_str(&ok(&["modes", "--na", "0.065", "--json"])).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 6);
}

#[test]
fn m2_routes_agree() {
    let v: Value = serde_json::from_str(&ok(&["m2", "--case", "6", "--seed", "1", "--json"])).unwrap();
    let diff = v["relative_difference"].as_array().unwrap();
    assert!(diff.iter().all(|d| d.as_f64().unwrap() < 0.01), "{v}");
    assert_eq!(v["modes"].as_array().unwrap().len(), 6);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&["m2", "--case", "4"]), 2);
    assert_eq!(code(&["gen", "--case", "3"]), 2);
    assert_eq!(code(&["modes", "--na", "-1"]), 2);
    assert_eq!(code(&["eval", "--model", "x", "--testset", "y", "--noise", "0:1"]), 2);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn synth_writes_image_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("beam.pgm");
    ok(&["synth", "--case", "5", "--seed", "3", "--res", "32", "--out", img.to_str().unwrap()]);
    let bytes = fs::read(&img).unwrap();
    assert!(bytes.starts_with(b"P5"));
    let side: Value = serde_json::from_slice(&fs::read(dir.path().join("beam.json")).unwrap()).unwrap();
    assert_eq!(side["modal"]["rho"].as_array().unwrap().len(), 5);
    assert_eq!(side["run_config"]["subcommand"], "synth");
}

#[test]
fn gen_is_reproducible_and_records_its_config() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| -> Value {
        let out = dir.path().join(name);
        let args = ["gen", "--case", "3", "--count", "8", "--seed", "5", "--res", "32", "--json", "--out"];
        serde_json::from_str(&ok(&[&args[..], &[out.to_str().unwrap()]].concat())).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a["files"], b["files"]);
    let cfg: Value = serde_json::from_slice(&fs::read(dir.path().join("a/run_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["subcommand"], "gen");
    assert_eq!(cfg["args"]["count"], 8);
}

#[test]
fn trained_model_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let (model, test, figs) = (p("model"), p("test"), p("figs"));
    ok(&[
        "train", "--case", "3", "--epochs", "3", "--seed", "1", "--res", "32", "--samples-per-epoch", "48",
        "--batch", "16", "--eval-count", "16", "--out", &model,
    ]);
    assert!(dir.path().join("model/run_config.json").exists());
    ok(&["gen", "--case", "3", "--count", "24", "--seed", "9", "--res", "32", "--out", &test]);

    // Noise sweep: 0, 0.04, ..., 0.24.
    let sweep = p("sweep.csv");
    ok(&["eval", "--model", &model, "--testset", &test, "--noise", "0:0.24:0.04", "--csv", &sweep]);
    let (header, rows) = csv_rows(Path::new(&sweep));
    assert_eq!(&header[..2], ["sigma", "mean_pe"]);
    assert_eq!(rows.len(), 7);
    assert!(column(&rows, 1).iter().all(|pe| pe.is_finite() && *pe >= 0.0));
    assert!(dir.path().join("sweep.run_config.json").exists());

    ok(&["report", "--model", &model, "--testset", &test, "--out", &figs, "--samples", "20"]);
    let (_, epochs) = csv_rows(&dir.path().join("figs/pe_vs_epoch.csv"));
    assert_eq!(epochs.len(), 3);
    let (_, cdf) = csv_rows(&dir.path().join("figs/pe_cdf.csv"));
    let pct = column(&cdf, 1);
    assert!(pct.windows(2).all(|w| w[0] <= w[1]), "{pct:?}");
    let (_, cmp) = csv_rows(&dir.path().join("figs/label_vs_prediction.csv"));
    assert_eq!(cmp.len(), 20);
    let labels = column(&cmp, 2);
    assert!(labels.windows(2).all(|w| w[0] <= w[1]));
    assert!(dir.path().join("figs/run_config.json").exists());

    let img = p("beam.pgm");
    ok(&["synth", "--case", "3", "--seed", "2", "--res", "32", "--out", &img]);
    let v: Value = serde_json::from_str(&ok(&["predict", "--model", &model, "--image", &img, "--json"])).unwrap();
    assert!(v["m2_eff"].as_f64().unwrap().is_finite());

    // Wrong resolution and wrong case are usage errors.
    let larger = p("larger.pgm");
    ok(&["synth", "--case", "3", "--seed", "2", "--res", "48", "--out", &larger]);
    assert_eq!(code(&["predict", "--model", &model, "--image", &larger]), 2);
    let five = p("five");
    ok(&["gen", "--case", "5", "--count", "2", "--seed", "9", "--res", "32", "--out", &five]);
    assert_eq!(code(&["eval", "--model", &model, "--testset", &five]), 2);

    // A corrupted parameter blob is a data error.
    let params = dir.path().join("model/params.f32");
    let mut bytes = fs::read(&params).unwrap();
    bytes[0] ^= 1;
    fs::write(&params, bytes).unwrap();
    assert_eq!(code(&["eval", "--model", &model, "--testset", &test]), 3);
}
