mod common;

use std::collections::HashMap;

use common::*;

#[test]
fn encode_preserves_rows_and_counts_classes() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path(), 300, 1);
    let out = dir.path().join("enc");
    ok(&["encode", "--data", s(&data), "--out", s(&out)]);

    let text = std::fs::read_to_string(&data).unwrap();
    let mut hand: HashMap<String, u64> = HashMap::new();
    for line in text.lines().skip(1) {
        *hand.entry(line.rsplit(',').next().unwrap().to_string()).or_default() += 1;
    }
    let stats = read_json(&out.join("stats.json"));
    assert_eq!(stats["rows"], 300);
    for (label, n) in &hand {
        assert_eq!(stats["class_counts"][label], *n, "{label}");
    }
    let encoded = std::fs::read_to_string(out.join("encoded.csv")).unwrap();
    assert_eq!(encoded.lines().count(), 301);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn bad_label_names_column_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path(), 20, 2);
    let text = std::fs::read_to_string(&data).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = lines[4].replacen("Male", "Robot", 1).replacen("Female", "Robot", 1);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let (status, err) = code(&["encode", "--data", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(status, 2);
    assert!(err.contains(":5:") && err.contains("'sex'") && err.contains("Robot"), "{err}");

    let skip = dir.path().join("skip");
    ok(&["encode", "--data", s(&bad), "--skip-bad-rows", "--out", s(&skip)]);
    let stats = read_json(&skip.join("stats.json"));
    assert_eq!(stats["rows"], 19);
    assert_eq!(stats["skipped_rows"][0]["line"], 5);
}

#[test]
fn train_evaluate_explain_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let (data, _) = fixture(p, 400, 3);
    let tr = p.join("tr");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&tr), "--seed", "5", "--max-epochs", "25"];
    args.extend(SMALL);
    ok(&args);

    let manifest = read_json(&tr.join("manifest.json"));
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["n_d"], 8);
    assert_eq!(manifest["config"]["n_steps"], 1);
    assert_eq!(manifest["config"]["gamma"], 1.952667709);
    assert_eq!(manifest["config"]["lambda_sparse"], 0.023989318);
    assert_eq!(manifest["config"]["learning_rate"], 0.007566832);
    assert_eq!(manifest["config"]["bn_momentum"], 0.3);
    assert_eq!(manifest["config"]["clip_value"], 2.0);
    assert_eq!(manifest["config"]["mask_type"], "entmax");

    // Test rows never reach training.
    let split = read_json(&tr.join("split.json"));
    let test_ids: Vec<u64> = split["test_ids"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    for key in ["fit_ids", "valid_ids"] {
        for id in split[key].as_array().unwrap() {
            assert!(!test_ids.contains(&id.as_u64().unwrap()));
        }
    }
    assert_eq!(test_ids.len(), 80);

    let ev = p.join("ev");
    let test_csv = tr.join("test.csv");
    let model = tr.join("model.ckpt");
    ok(&["evaluate", "--model", s(&model), "--data", s(&test_csv), "--encoded", "--out", s(&ev)]);
    let text = std::fs::read_to_string(ev.join("report.txt")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[6].starts_with("Accuracy"));

    // Recompute every metric from the dumped predictions.
    let report = read_json(&ev.join("report.json"));
    let preds = std::fs::read_to_string(ev.join("predictions.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(preds.as_bytes());
    let pairs: Vec<(String, String)> = rdr.records().map(|r| {
        let r = r.unwrap();
        (r[1].to_string(), r[2].to_string())
    }).collect();
    assert_eq!(pairs.len(), 80);
    let correct = pairs.iter().filter(|(t, p)| t == p).count() as f64;
    assert!((report["accuracy"].as_f64().unwrap() - correct / 80.0).abs() < 1e-12);
    for row in report["classes"].as_array().unwrap() {
        let c = row["class"].as_str().unwrap();
        let tp = pairs.iter().filter(|(t, p)| t == c && p == c).count() as f64;
        let pp = pairs.iter().filter(|(_, p)| p == c).count() as f64;
        let ap = pairs.iter().filter(|(t, _)| t == c).count() as f64;
        let prec = if pp > 0.0 { tp / pp } else { 0.0 };
        let rec = if ap > 0.0 { tp / ap } else { 0.0 };
        let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        assert!((row["precision"].as_f64().unwrap() - prec).abs() < 1e-12);
        assert!((row["recall"].as_f64().unwrap() - rec).abs() < 1e-12);
        assert!((row["f1"].as_f64().unwrap() - f1).abs() < 1e-12);
        assert_eq!(row["support"].as_f64().unwrap(), ap);
    }

    let ex = p.join("ex");
    let row_id = test_ids[0].to_string();
    ok(&[
        "explain", "--model", s(&model), "--data", s(&test_csv), "--encoded", "--out", s(&ex), "--row-id", &row_id,
        "--background", "16", "--max-instances", "6", "--n-permutations", "8",
    ]);
    let expl = read_json(&ex.join("attributions.json"));
    let n_inst = expl["instances"].as_array().unwrap().len();
    let n_feat = expl["features"].as_array().unwrap().len();
    assert_eq!((n_inst, n_feat), (6, 26));
    for c in 0..5 {
        let name = expl["classes"][c]["class"].as_str().unwrap().to_lowercase().replace([' ', '/'], "_");
        let svg = std::fs::read_to_string(ex.join(format!("summary_{c}_{name}.svg"))).unwrap();
        assert_eq!(svg.matches("class=\"dot\"").count(), n_inst * n_feat);
        assert!(ex.join(format!("force_{row_id}_{c}_{name}.svg")).exists());
    }
    assert!(ex.join("importance.svg").exists());
    let csv_rows = std::fs::read_to_string(ex.join("attributions.csv")).unwrap().lines().count();
    assert_eq!(csv_rows, 1 + 5 * n_inst * n_feat);

    let (status, err) = code(&[
        "explain", "--model", s(&model), "--data", s(&test_csv), "--encoded", "--out", s(&p.join("ex2")),
        "--row-id", "987654",
    ]);
    assert_eq!(status, 5, "{err}");
    let (status, _) = code(&[
        "explain", "--model", s(&model), "--data", s(&test_csv), "--encoded", "--out", s(&p.join("ex3")),
        "--class", "Nonexistent",
    ]);
    assert_eq!(status, 5);
}

#[test]
fn smote_flag_changes_training_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path(), 300, 4);
    let mut hists = Vec::new();
    for flag in ["--smote", "--no-smote"] {
        let out = dir.path().join(flag.trim_start_matches('-'));
        let mut args = vec!["train", "--data", s(&data), "--out", s(&out), "--max-epochs", "2", flag];
        args.extend(SMALL);
        ok(&args);
        let rep = read_json(&out.join("trainreport.json"));
        hists.push(rep["class_histograms"].clone());
    }
    let (on, off) = (&hists[0], &hists[1]);
    assert_ne!(on["fit_after_smote"], off["fit_after_smote"]);
    assert_eq!(on["fit_before_smote"], off["fit_before_smote"]);
    assert_eq!(off["fit_after_smote"], off["fit_before_smote"]);
    let balanced: Vec<u64> = on["fit_after_smote"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert!(balanced.iter().all(|&n| n == balanced[0]));
    let before: Vec<u64> = on["fit_before_smote"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(balanced[0], *before.iter().max().unwrap());
}

#[test]
fn overfit_tiny_model_scores_perfectly_on_its_training_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (data, schema) = numeric_dataset(dir.path(), 30);
    let tr = dir.path().join("tr");
    ok(&[
        "train", "--data", s(&data), "--schema", s(&schema), "--out", s(&tr), "--no-smote", "--valid-fraction", "0",
        "--n-d", "8", "--n-a", "8", "--n-independent", "2", "--n-shared", "2", "--max-epochs", "300", "--patience",
        "300", "--learning-rate", "0.03", "--batch-size", "32",
    ]);
    let ev = dir.path().join("ev");
    ok(&[
        "evaluate", "--model", s(&tr.join("model.ckpt")), "--data", s(&tr.join("train.csv")), "--encoded", "--out",
        s(&ev),
    ]);
    let text = std::fs::read_to_string(ev.join("report.txt")).unwrap();
    assert!(text.lines().last().unwrap().ends_with("1.000"), "{text}");
}

#[test]
fn exit_codes_for_failures() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let (data, schema) = numeric_dataset(p, 60);
    let (status, err) = code(&[
        "train", "--data", s(&data), "--schema", s(&schema), "--out", s(&p.join("d")), "--learning-rate", "1e300",
        "--clip-value", "1e300", "--max-epochs", "5", "--n-d", "4", "--n-a", "4", "--n-independent", "1",
        "--n-shared", "1",
    ]);
    assert_eq!(status, 3, "{err}");
    assert!(err.contains("epoch"));

    let tr = p.join("tr");
    let mut args = vec!["train", "--data", s(&data), "--schema", s(&schema), "--out", s(&tr), "--max-epochs", "2"];
    args.extend(SMALL);
    ok(&args);
    let (fx, _) = fixture(p, 20, 1);
    let (status, _) = code(&["evaluate", "--model", s(&tr.join("model.ckpt")), "--data", s(&fx), "--schema",
        s(&p.join("fixture/schema.json")), "--out", s(&p.join("e"))]);
    assert_eq!(status, 4);

    let space = p.join("space.txt");
    std::fs::write(&space, "n_d = [4, 8\n").unwrap();
    let (status, _) = code(&["search", "--space", s(&space), "--data", s(&data), "--schema", s(&schema), "--out",
        s(&p.join("s"))]);
    assert_eq!(status, 6);
    let (status, _) = code(&["train", "--data", s(&data), "--out", s(&p.join("t")), "--n-d", "zero"]);
    assert_eq!(status, 6);
    let (status, _) = code(&["train", "--frobnicate"]);
    assert_eq!(status, 6);
    let (status, _) = code(&["train", "--data", s(&p.join("missing.csv")), "--out", s(&p.join("t"))]);
    assert_eq!(status, 2);
}

fn phi_table(path: &std::path::Path) -> HashMap<(String, String, String), f64> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            ((r[0].to_string(), r[1].to_string(), r[2].to_string()), r[4].parse().unwrap())
        })
        .collect()
}

#[test]
fn exact_and_sampled_attributions_agree_and_force_plot_adds_up() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let (data, schema) = numeric_dataset(p, 120);
    let tr = p.join("tr");
    let mut args = vec!["train", "--data", s(&data), "--schema", s(&schema), "--out", s(&tr), "--max-epochs", "30"];
    args.extend(SMALL);
    ok(&args);
    let model = tr.join("model.ckpt");
    let test = tr.join("test.csv");
    let common = ["--model", s(&model), "--data", s(&test), "--encoded", "--background", "12", "--max-instances", "4", "--seed", "9"];

    let exact = p.join("exact");
    let mut a = vec!["explain", "--method", "exact", "--out", s(&exact), "--row-id"];
    let split = read_json(&tr.join("split.json"));
    let rid = split["test_ids"][0].to_string();
    a.push(&rid);
    a.extend(common);
    ok(&a);
    let sampled = p.join("sampled");
    let mut a = vec!["explain", "--method", "permutation", "--n-permutations", "10000", "--out", s(&sampled)];
    a.extend(common);
    ok(&a);

    let e = phi_table(&exact.join("attributions.csv"));
    let m = phi_table(&sampled.join("attributions.csv"));
    assert_eq!(e.len(), 4 * 3 * 8);
    for (k, v) in &e {
        assert!((v - m[k]).abs() < 0.01, "{k:?}: exact {v} sampled {}", m[k]);
    }

    let force = read_json(&exact.join("force.json"));
    for doc in force.as_array().unwrap() {
        let sum: f64 = doc["contributions"].as_array().unwrap().iter().map(|c| c["phi"].as_f64().unwrap()).sum();
        let base = doc["base_value"].as_f64().unwrap();
        let fx = doc["fx"].as_f64().unwrap();
        assert!((base + sum - fx).abs() < 1e-9);
        let class = doc["class"].as_str().unwrap();
        let c = ["low", "mid", "high"].iter().position(|x| *x == class).unwrap();
        let svg = std::fs::read_to_string(exact.join(format!("force_{rid}_{c}_{class}.svg"))).unwrap();
        let label = |prefix: &str| -> f64 {
            let start = svg.find(prefix).unwrap() + prefix.len();
            svg[start..].split('<').next().unwrap().parse().unwrap()
        };
        assert!((label("base value = ") + sum - label("f(x) = ")).abs() < 1e-9);
    }
}

#[test]
fn search_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let (data, schema) = numeric_dataset(p, 60);
    let data_args = ["--data", s(&data), "--schema", s(&schema), "--folds", "2", "--seed", "4"];
    let model_args = ["--max-epochs", "3", "--n-independent", "1", "--n-shared", "1"];
    let base: Vec<&str> = data_args.iter().chain(&model_args).copied().collect();

    let grid = p.join("grid.txt");
    std::fs::write(&grid, "n_d = [4, 8, 16]\nlearning_rate = [0.01, 0.02]\n").unwrap();
    let out = p.join("g");
    let mut a = vec!["search", "--space", s(&grid), "--out", s(&out)];
    a.extend(&base);
    ok(&a);
    let trials = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 6);

    // The best config re-run alone reproduces its logged loss.
    let best = read_json(&out.join("best.json"));
    let one = p.join("one.txt");
    std::fs::write(&one, "n_independent = [1]\n").unwrap();
    let rerun = p.join("rerun");
    let best_cfg = out.join("best_config.txt");
    let mut a = vec!["search", "--space", s(&one), "--out", s(&rerun), "--config", s(&best_cfg)];
    a.extend(data_args);
    ok(&a);
    let again = read_json(&rerun.join("best.json"));
    assert_eq!(again["mean_loss"], best["mean_loss"]);
    assert_eq!(again["fold_losses"], best["fold_losses"]);

    let random = p.join("random.txt");
    std::fs::write(&random, "learning_rate = log(0.001, 0.05)\n").unwrap();
    let out = p.join("r");
    let mut a = vec!["search", "--space", s(&random), "--strategy", "random", "--trials", "1", "--out", s(&out)];
    a.extend(&base);
    ok(&a);
    let trials = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 2);
}
