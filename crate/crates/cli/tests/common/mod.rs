#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sevnet::dataset::Schema;

pub const BIN: &str = env!("CARGO_BIN_EXE_sevnet");

/// Small-network flags so debug builds train in seconds.
pub const SMALL: [&str; 8] = ["--n-d", "8", "--n-a", "8", "--n-independent", "2", "--n-shared", "2"];

pub fn sevnet(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = sevnet(args);
    assert!(
        out.status.success(),
        "sevnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn code(args: &[&str]) -> (i32, String) {
    let out = sevnet(args);
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a labelled fixture of the default schema and returns `(data.csv, schema.json)`.
pub fn fixture(dir: &Path, rows: usize, seed: u64) -> (PathBuf, PathBuf) {
    let out = dir.join("fixture");
    ok(&["fixture", "--rows", &rows.to_string(), "--seed", &seed.to_string(), "--out", s(&out)]);
    (out.join("data.csv"), out.join("schema.json"))
}

/// Eight continuous features, three classes decided by the first two.
pub fn numeric_dataset(dir: &Path, rows: usize) -> (PathBuf, PathBuf) {
    let names: Vec<String> = (0..8).map(|j| format!("x{j}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let schema = Schema::numeric(&refs, &["low", "mid", "high"]);
    let schema_path = dir.join("numeric_schema.json");
    std::fs::write(&schema_path, schema.to_json_pretty()).unwrap();
    let mut text = names.join(",") + ",class\n";
    for i in 0..rows {
        let vals: Vec<f64> = (0..8)
            .map(|j| (((i * (2 * j + 3) + j * 7) % 17) as f64 - 8.0) / 4.0)
            .collect();
        let score = vals[0] + 0.5 * vals[1];
        let class = if score < -0.8 {
            "low"
        } else if score < 0.8 {
            "mid"
        } else {
            "high"
        };
        let cells: Vec<String> = vals.iter().map(|v| v.to_string()).collect();
        text += &format!("{},{class}\n", cells.join(","));
    }
    let data_path = dir.join("numeric.csv");
    std::fs::write(&data_path, text).unwrap();
    (data_path, schema_path)
}

pub fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Every file in `dir`, sorted, with contents.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}
