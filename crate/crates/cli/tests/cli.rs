use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fat_core::tensor::{Tensor, TensorData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn fat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fat"))
        .args(args)
        .env_remove("FAT_CALIBRATION")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn repo_file(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel).to_string_lossy().into_owned()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn toy(dir: &Path, seed: u64) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tern = |n: usize| -> Vec<i64> { (0..n).map(|_| rng.gen_range(-1..=1)).collect() };
    let model = json!({
        "input": {"c": 4, "h": 8, "w": 8},
        "layers": [
            {"type": "conv", "kn": 6, "kh": 3, "kw": 3, "padding": 1, "weights": tern(6 * 4 * 9), "requant_scale": 8.0},
            {"type": "batchnorm", "mean": vec![-10.0; 6], "var": vec![4.0; 6], "eps": 0.0},
            {"type": "relu"},
            {"type": "conv", "kn": 3, "kh": 1, "kw": 1, "weights": {"blob": "w2.fatb"}, "requant_scale": 2.0}
        ]
    });
    let w2 = Tensor::new(vec![3, 6, 1, 1], TensorData::I8(tern(18).into_iter().map(|v| v as i8).collect())).unwrap();
    w2.write(&dir.join("w2.fatb")).unwrap();
    let model_path = dir.join("model.json");
    std::fs::write(&model_path, serde_json::to_string(&model).unwrap()).unwrap();
    let x: Vec<u8> = (0..2 * 4 * 64).map(|_| rng.gen()).collect();
    let input = dir.join("x.fatb");
    Tensor::new(vec![2, 4, 8, 8], TensorData::U8(x)).unwrap().write(&input).unwrap();
    (model_path, input)
}

#[test]
fn add_bench_default_reproduces_vector_latencies() {
    let o = fat(&["add-bench", "--bitwidth", "16", "--kind", "vector"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("# tool: fat"));
    let rows = csv_rows(&text);
    let get = |name: &str| -> f64 { rows.iter().find(|r| r[0] == name).unwrap()[4].parse().unwrap() };
    assert!((get("FAT") - 138.26).abs() < 0.01 * 138.26);
    assert!((get("ParaPIM") - 276.95).abs() < 0.01 * 276.95);
}

#[test]
fn add_bench_one_bit_is_linear() {
    let o = fat(&["add-bench", "--bitwidth", "1", "--kind", "vector"]);
    let rows = csv_rows(&stdout(&o));
    let fat1: f64 = rows.iter().find(|r| r[0] == "FAT").unwrap()[4].parse().unwrap();
    assert!((fat1 - 69.13 / 8.0).abs() < 0.01);
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(fat(&["add-bench", "--bitwidth", "0"]).status.code(), Some(1));
    assert_eq!(fat(&["add-bench", "--kind", "sideways"]).status.code(), Some(1));
    assert_eq!(fat(&["sweep-sparsity", "--from", "0.6", "--to", "0.2"]).status.code(), Some(1));
    assert_eq!(fat(&["sweep-sparsity", "--to", "1.0"]).status.code(), Some(1));
    assert_eq!(fat(&["nope"]).status.code(), Some(1));
    assert_eq!(fat(&["--help"]).status.code(), Some(0));
}

#[test]
fn map_compare_json() {
    let layer = repo_file("configs/layer10.json");
    let o = fat(&["--format", "json", "map-compare", "--layer", &layer]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["header"]["layer_sha256"].is_string());
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    let cs = rows.iter().find(|r| r["scheme"] == "Img2Col-CS").unwrap();
    assert!((cs["speedup"].as_f64().unwrap() - 6.86).abs() < 0.05 * 6.86);
    assert_eq!(cs["max_cell_writes"], 1);
}

#[test]
fn sweep_reports_both_columns() {
    let o = fat(&["sweep-sparsity", "--from", "0.4", "--to", "0.8", "--step", "0.2"]);
    assert!(o.status.success());
    let rows = csv_rows(&stdout(&o));
    let want = [(0.4, 3.34), (0.6, 5.01), (0.8, 10.02)];
    assert_eq!(rows.len(), 3);
    for (r, (s, sp)) in rows.iter().zip(want) {
        assert_eq!(r[0].parse::<f64>().unwrap(), s);
        let closed: f64 = r[1].parse().unwrap();
        let sim: f64 = r[3].parse().unwrap();
        assert!((closed - sp).abs() < 0.01 * sp);
        assert!((sim - closed).abs() < 0.02 * closed);
    }
}

#[test]
fn calibration_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cal.json");
    let mut cal: Value = serde_json::from_str(&std::fs::read_to_string(repo_file("configs/calibration.json")).unwrap()).unwrap();
    cal["timing"]["t_write"] = json!(15.0);
    std::fs::write(&path, cal.to_string()).unwrap();

    let base = csv_rows(&stdout(&fat(&["add-bench", "--kind", "scalar"])));
    let o = Command::new(env!("CARGO_BIN_EXE_fat"))
        .args(["add-bench", "--kind", "scalar"])
        .env("FAT_CALIBRATION", &path)
        .output()
        .unwrap();
    assert!(o.status.success());
    let slow = csv_rows(&stdout(&o));
    assert!(slow[3][4].parse::<f64>().unwrap() > base[3][4].parse::<f64>().unwrap());

    std::fs::write(&path, "{ not json").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fat"))
        .args(["add-bench"])
        .env("FAT_CALIBRATION", &path)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_toy_model_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let (model, input) = toy(dir.path(), 1);
    let out = dir.path().join("y.fatb");
    let report = dir.path().join("report.json");
    for scheme in ["img2col-is", "img2col-cs"] {
        let o = fat(&[
            "run", "--model", model.to_str().unwrap(), "--input", input.to_str().unwrap(),
            "--scheme", scheme, "--output", out.to_str().unwrap(), "--out", report.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(v["verification"], "PASS");
        assert_eq!(v["layers"].as_array().unwrap().len(), 2);
        let y = Tensor::read(&out).unwrap();
        assert_eq!(y.dims, vec![2, 3, 8, 8]);
    }
}

#[test]
fn run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (model, input) = toy(dir.path(), 2);
    let out = dir.path().join("y.fatb");
    let run = || {
        let o = fat(&["run", "--model", model.to_str().unwrap(), "--input", input.to_str().unwrap(), "--output", out.to_str().unwrap()]);
        assert!(o.status.success());
        (o.stdout, std::fs::read(&out).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn run_rejects_corrupt_model_and_direct_os() {
    let dir = tempfile::tempdir().unwrap();
    let (model, input) = toy(dir.path(), 3);
    let out = dir.path().join("y.fatb");
    let o = fat(&["run", "--model", model.to_str().unwrap(), "--input", input.to_str().unwrap(), "--scheme", "direct-os", "--output", out.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));

    std::fs::write(&model, "{\"input\": ").unwrap();
    let o = fat(&["run", "--model", model.to_str().unwrap(), "--input", input.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn trace_skips_zero_weights() {
    let o = fat(&["trace", "--weights", "1,0,-1,0,1", "--activations", "3,5,7,9,11"]);
    assert!(o.status.success());
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let last = lines.last().unwrap();
    assert_eq!(last["result"], 3 - 7 + 11);
    for rec in &lines[..lines.len() - 1] {
        for op in rec["operands"].as_array().unwrap() {
            assert!(op != 1 && op != 3);
        }
    }
}
