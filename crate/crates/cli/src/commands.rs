use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::Serialize;
use sha2::{Digest, Sha256};

use sevnet::attribution::{
    attributions_json, explain_dataset, force_data, write_attributions_csv, Explanation, ForceData, MethodConfig,
    ModelPredictor, OutputSpace, PermutationOptions,
};
use sevnet::dataset::{
    dataset_stats, default_schema, load_csv_with, load_encoded_csv, synthesize_fixture, write_encoded, write_labelled,
    DatasetStats, EncodedDataset, FixtureSpec, RowErrorPolicy, Schema, SkippedRow,
};
use sevnet::metrics::report;
use sevnet::resample::{smote, stratified_split, stratified_split_indices, SmoteConfig, SmoteTarget};
use sevnet::rng::{derive_seed, rng_for, Stream};
use sevnet::search::{grid_search, random_search, trials_csv, SearchSettings, SearchSpace};
use sevnet::tabnet::{train_bootstrap, train_on_resamples, Checkpoint, TabNetConfig, TrainReport};
use sevnet::{Error, Result};

use crate::svg;
use crate::{
    Command, CommonArgs, DataArgs, EncodeArgs, EvaluateArgs, ExplainArgs, FixtureArgs, MethodArg, ModelFlags,
    SearchArgs, SmoteFlags, SpaceArg, StrategyArg, TrainArgs,
};

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Encode(a) => encode(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Explain(a) => explain(a),
        Command::Search(a) => search(a),
        Command::Fixture(a) => fixture(a),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
    })
}

/// Everything a run needs to be repeated: the flags, the resolved seed and config,
/// and content digests of the inputs.
#[derive(Serialize)]
struct Manifest<'a, A: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    args: &'a A,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<TabNetConfig>,
    schema_hash: String,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

/// Collects output files so the manifest can list them.
struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    fn create(common: &CommonArgs) -> Result<Self> {
        std::fs::create_dir_all(&common.out).map_err(|e| io_err(&common.out, e))?;
        Ok(Self {
            root: common.out.clone(),
            written: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    fn finish<A: Serialize>(
        mut self,
        command: &'static str,
        seed: u64,
        args: &A,
        config: Option<TabNetConfig>,
        schema: &Schema,
        inputs: &[&Path],
    ) -> Result<()> {
        let mut outputs = self.written.clone();
        outputs.sort();
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            args,
            config,
            schema_hash: schema.hash(),
            inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
            outputs,
        };
        self.json("manifest.json", &manifest)
    }
}

fn resolve_schema(input: &DataArgs, fallback: Schema) -> Result<Schema> {
    match &input.schema {
        Some(path) => Schema::from_file(path),
        None => Ok(fallback),
    }
}

fn load_data(input: &DataArgs, schema: &Schema, policy: RowErrorPolicy) -> Result<(EncodedDataset, Vec<SkippedRow>)> {
    if input.encoded {
        Ok((load_encoded_csv(&input.data, schema)?, Vec::new()))
    } else {
        let loaded = load_csv_with(&input.data, schema, policy)?;
        Ok((loaded.dataset, loaded.skipped))
    }
}

fn input_paths<'a>(common: &'a CommonArgs, input: &'a DataArgs, extra: &[&'a Path]) -> Vec<&'a Path> {
    let mut v: Vec<&Path> = vec![&input.data];
    v.extend(input.schema.as_deref());
    v.extend(common.config.as_deref());
    v.extend(extra);
    v
}

/// Defaults, then the config file, then flags, then `--seed`. The class count always
/// comes from the schema; a config file that names a different one is rejected.
fn resolve_config(common: &CommonArgs, flags: &ModelFlags, n_classes: usize) -> Result<TabNetConfig> {
    let mut cfg = TabNetConfig::default();
    if let Some(path) = &common.config {
        let text = read_text(path)?;
        cfg.merge_kv(&text)?;
        let names_classes = text.lines().any(|l| {
            l.split('#')
                .next()
                .and_then(|l| l.split_once('='))
                .is_some_and(|(k, _)| k.trim() == "n_classes")
        });
        if names_classes && cfg.n_classes != n_classes {
            return Err(Error::Config(format!(
                "config sets n_classes = {} but the schema has {n_classes} classes",
                cfg.n_classes
            )));
        }
    }
    for (key, value) in flags.pairs() {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.n_classes = n_classes;
    cfg.validate()?;
    Ok(cfg)
}

fn smote_config(flags: &SmoteFlags, seed: u64) -> Option<SmoteConfig> {
    flags.enabled().then(|| SmoteConfig {
        k_neighbors: flags.k_neighbors,
        target: SmoteTarget::Majority,
        seed,
    })
}

#[derive(Serialize)]
struct EncodeStats<'a> {
    #[serde(flatten)]
    stats: &'a DatasetStats,
    skipped_rows: &'a [SkippedRow],
}

fn encode(a: &EncodeArgs) -> Result<()> {
    if a.input.encoded {
        return Err(Error::Config("encode reads labelled CSV; drop --encoded".into()));
    }
    let schema = resolve_schema(&a.input, default_schema())?;
    let policy = if a.skip_bad_rows {
        RowErrorPolicy::Skip
    } else {
        RowErrorPolicy::Fail
    };
    let (data, skipped) = load_data(&a.input, &schema, policy)?;
    let mut out = OutDir::create(&a.common)?;
    let mut buf = Vec::new();
    write_encoded(&data, &mut buf)?;
    out.write("encoded.csv", buf)?;
    out.json(
        "stats.json",
        &EncodeStats {
            stats: &dataset_stats(&data),
            skipped_rows: &skipped,
        },
    )?;
    out.write("schema.json", schema.to_json_pretty() + "\n")?;
    let inputs = input_paths(&a.common, &a.input, &[]);
    out.finish("encode", a.common.seed.unwrap_or(0), a, None, &schema, &inputs)
}

#[derive(Serialize)]
struct SplitRecord<'a> {
    seed: u64,
    train_fraction: f64,
    valid_fraction: f64,
    fit_ids: &'a [u64],
    valid_ids: &'a [u64],
    test_ids: &'a [u64],
}

#[derive(Serialize)]
struct Histograms {
    classes: Vec<String>,
    input: Vec<usize>,
    fit_before_smote: Vec<usize>,
    fit_after_smote: Vec<usize>,
    valid: Vec<usize>,
    test: Vec<usize>,
}

#[derive(Serialize)]
struct TrainDoc<'a> {
    smote: bool,
    synthetic_rows: usize,
    bootstrap_members: usize,
    class_histograms: Histograms,
    members: &'a [TrainReport],
}

fn train(a: &TrainArgs) -> Result<()> {
    for (name, v) in [("split", a.split), ("valid-fraction", a.valid_fraction)] {
        if !(0.0..1.0).contains(&v) || (name == "split" && v == 0.0) {
            return Err(Error::Config(format!("--{name} must lie in [0, 1), got {v}")));
        }
    }
    if a.bootstrap == 0 {
        return Err(Error::Config("--bootstrap must be at least 1".into()));
    }
    let schema = resolve_schema(&a.input, default_schema())?;
    let cfg = resolve_config(&a.common, &a.model, schema.n_classes())?;
    let (data, _) = load_data(&a.input, &schema, RowErrorPolicy::Fail)?;
    let seed = cfg.seed;

    let (fit_pool, test) = stratified_split(&data, a.split, seed)?;
    let (fit, valid) = if a.valid_fraction > 0.0 {
        let (f, v) = stratified_split_indices(
            fit_pool.targets(),
            fit_pool.n_classes(),
            1.0 - a.valid_fraction,
            derive_seed(seed, Stream::Validation, 0),
        )?;
        (fit_pool.subset(&f), fit_pool.subset(&v))
    } else {
        (fit_pool.clone(), fit_pool.subset(&[]))
    };
    let (fit_set, synthetic_rows) = match smote_config(&a.smote, seed) {
        Some(sc) => {
            let out = smote(&fit, &sc)?;
            let n = out.synthetic.len();
            (out.dataset, n)
        }
        None => (fit.clone(), 0),
    };

    let (ensemble, reports) = if a.bootstrap == 1 {
        let identity: Vec<usize> = (0..fit_set.len()).collect();
        train_on_resamples(&cfg, &fit_set, &valid, &[identity])?
    } else {
        train_bootstrap(&cfg, &fit_set, &valid, a.bootstrap)?
    };

    let mut out = OutDir::create(&a.common)?;
    let checkpoint = Checkpoint::new(schema.clone(), ensemble)?;
    out.write("model.ckpt", checkpoint.to_json()?)?;
    out.json(
        "trainreport.json",
        &TrainDoc {
            smote: a.smote.enabled(),
            synthetic_rows,
            bootstrap_members: a.bootstrap,
            class_histograms: Histograms {
                classes: schema.class_names().to_vec(),
                input: data.class_counts(),
                fit_before_smote: fit.class_counts(),
                fit_after_smote: fit_set.class_counts(),
                valid: valid.class_counts(),
                test: test.class_counts(),
            },
            members: &reports,
        },
    )?;
    out.json(
        "split.json",
        &SplitRecord {
            seed,
            train_fraction: a.split,
            valid_fraction: a.valid_fraction,
            fit_ids: fit.row_ids(),
            valid_ids: valid.row_ids(),
            test_ids: test.row_ids(),
        },
    )?;
    let mut buf = Vec::new();
    write_encoded(&test, &mut buf)?;
    out.write("test.csv", buf)?;
    let mut buf = Vec::new();
    write_encoded(&fit_pool, &mut buf)?;
    out.write("train.csv", buf)?;
    out.write("schema.json", schema.to_json_pretty() + "\n")?;
    out.write("config.txt", cfg.to_kv())?;
    let inputs = input_paths(&a.common, &a.input, &[]);
    out.finish("train", seed, a, Some(cfg), &schema, &inputs)
}

/// Loads the checkpoint and the data it should be applied to. An explicit `--schema`
/// must match the checkpoint's.
fn load_model_and_data(input: &DataArgs, model: &Path) -> Result<(Checkpoint, EncodedDataset)> {
    let checkpoint = Checkpoint::load(model)?;
    let schema = resolve_schema(input, checkpoint.schema.clone())?;
    checkpoint.check_schema(&schema)?;
    let (data, _) = load_data(input, &schema, RowErrorPolicy::Fail)?;
    if data.is_empty() {
        return Err(Error::Data {
            path: input.data.display().to_string(),
            line: 1,
            column: String::new(),
            message: "no data rows".into(),
        });
    }
    Ok((checkpoint, data))
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let (checkpoint, data) = load_model_and_data(&a.input, &a.model)?;
    let proba = checkpoint.ensemble.predict_proba(data.features())?;
    let predicted = proba.argmax_rows();
    let classes = checkpoint.schema.class_names();
    let rep = report(data.targets(), &predicted, classes)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row_id".to_string(), "true".into(), "predicted".into()];
    header.extend(classes.iter().map(|c| format!("p({c})")));
    w.write_record(&header)?;
    for r in 0..data.len() {
        let mut rec = vec![
            data.row_ids()[r].to_string(),
            classes[data.targets()[r]].clone(),
            classes[predicted[r]].clone(),
        ];
        rec.extend(proba.row(r).iter().map(|p| p.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(Path::new("predictions.csv"), e.into_error()))?;

    let mut out = OutDir::create(&a.common)?;
    out.write("predictions.csv", bytes)?;
    out.write("report.txt", rep.to_text())?;
    out.write("report.json", rep.to_json() + "\n")?;
    let inputs = input_paths(&a.common, &a.input, &[&a.model]);
    let seed = checkpoint.ensemble.config().seed;
    out.finish("evaluate", seed, a, None, &checkpoint.schema, &inputs)
}

fn slug(text: &str) -> String {
    let s: String = text
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    s.trim_matches('_').to_string()
}

fn resolve_classes(requested: &[String], names: &[String]) -> Result<Vec<usize>> {
    if requested.is_empty() {
        return Ok((0..names.len()).collect());
    }
    let mut out = Vec::new();
    for r in requested {
        let c = names
            .iter()
            .position(|n| n == r)
            .or_else(|| r.parse::<usize>().ok().filter(|&i| i < names.len()))
            .ok_or_else(|| Error::Lookup(format!("class '{r}' is not one of {names:?}")))?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct ForceDoc<'a> {
    row_id: u64,
    class: &'a str,
    #[serde(flatten)]
    force: &'a ForceData,
}

fn mean_abs(expl: &Explanation) -> Vec<Vec<f64>> {
    expl.phi
        .iter()
        .map(|inst| {
            let n = inst.first().map_or(0, Vec::len);
            (0..n)
                .map(|j| inst.iter().map(|p| p[j].abs()).sum::<f64>() / inst.len() as f64)
                .collect()
        })
        .collect()
}

fn explain(a: &ExplainArgs) -> Result<()> {
    if a.background == 0 || a.max_instances == 0 {
        return Err(Error::Config("--background and --max-instances must be positive".into()));
    }
    let (checkpoint, data) = load_model_and_data(&a.input, &a.model)?;
    let schema = &checkpoint.schema;
    let class_names = schema.class_names();
    let feature_names = schema.feature_names();
    let seed = a.common.seed.unwrap_or(0);

    let force_pos = a
        .row_id
        .map(|id| {
            data.position_of(id)
                .ok_or_else(|| Error::Lookup(format!("row id {id} not found in {}", a.input.data.display())))
        })
        .transpose()?;
    let classes = resolve_classes(&a.classes, class_names)?;

    let n_bg = a.background.min(data.len());
    let mut bg_rows = sample(&mut rng_for(seed, Stream::Background, 0), data.len(), n_bg).into_vec();
    bg_rows.sort_unstable();
    let background = data.features().select_rows(&bg_rows);

    let mut rows: Vec<usize> = (0..a.max_instances.min(data.len())).collect();
    if let Some(p) = force_pos {
        if !rows.contains(&p) {
            rows.push(p);
        }
    }
    let instances = data.features().select_rows(&rows);
    let ids: Vec<u64> = rows.iter().map(|&r| data.row_ids()[r]).collect();

    let method = match a.method {
        MethodArg::Exact => MethodConfig::Exact { limit: a.exact_limit },
        MethodArg::Permutation => MethodConfig::Permutation(PermutationOptions {
            n_permutations: a.n_permutations,
            seed,
            antithetic: a.antithetic,
        }),
    };
    let predictor = ModelPredictor {
        ensemble: &checkpoint.ensemble,
        space: match a.output {
            SpaceArg::Probability => OutputSpace::Probability,
            SpaceArg::Logit => OutputSpace::Logit,
        },
    };
    let expl = explain_dataset(&predictor, &instances, &background, &classes, method)?;

    let mut out = OutDir::create(&a.common)?;
    let mut buf = Vec::new();
    write_attributions_csv(&expl, &ids, class_names, &feature_names, &instances, &mut buf)?;
    out.write("attributions.csv", buf)?;
    out.write(
        "attributions.json",
        attributions_json(&expl, &ids, class_names, &feature_names)? + "\n",
    )?;
    let explained: Vec<String> = classes.iter().map(|&c| class_names[c].clone()).collect();
    out.write("importance.svg", svg::importance_bars(&feature_names, &explained, &mean_abs(&expl)))?;
    let values: Vec<Vec<f64>> = instances.iter_rows().map(<[f64]>::to_vec).collect();
    for (pos, &c) in classes.iter().enumerate() {
        let title = format!("SHAP values for class {}", class_names[c]);
        out.write(
            &format!("summary_{c}_{}.svg", slug(&class_names[c])),
            svg::summary_dots(&title, &feature_names, &expl.phi[pos], &values),
        )?;
    }
    if let (Some(id), Some(p)) = (a.row_id, force_pos) {
        let inst = rows.iter().position(|&r| r == p).expect("force row is explained");
        let mut docs = Vec::new();
        for (pos, &c) in classes.iter().enumerate() {
            let force = force_data(&expl.result(pos, inst), &feature_names, instances.row(inst))?;
            let title = format!("Row {id}, class {}", class_names[c]);
            out.write(
                &format!("force_{id}_{c}_{}.svg", slug(&class_names[c])),
                svg::force_plot(&title, &force),
            )?;
            docs.push((c, force));
        }
        let docs: Vec<ForceDoc> = docs
            .iter()
            .map(|(c, f)| ForceDoc {
                row_id: id,
                class: &class_names[*c],
                force: f,
            })
            .collect();
        out.json("force.json", &docs)?;
    }
    let inputs = input_paths(&a.common, &a.input, &[&a.model]);
    out.finish("explain", seed, a, None, schema, &inputs)
}

#[derive(Serialize)]
struct BestDoc<'a> {
    trial: usize,
    mean_loss: f64,
    std_loss: f64,
    fold_losses: &'a [f64],
}

fn search(a: &SearchArgs) -> Result<()> {
    let space = SearchSpace::parse(&read_text(&a.space)?)?;
    let schema = resolve_schema(&a.input, default_schema())?;
    let base = resolve_config(&a.common, &a.model, schema.n_classes())?;
    let (data, _) = load_data(&a.input, &schema, RowErrorPolicy::Fail)?;
    let seed = base.seed;
    let settings = SearchSettings {
        base: base.clone(),
        k_folds: a.folds,
        seed,
        smote: smote_config(&a.smote, seed),
    };
    let records = match a.strategy {
        StrategyArg::Grid => grid_search(&space, &data, &settings)?,
        StrategyArg::Random => random_search(&space, a.trials, &data, &settings)?,
    };
    let best = &records[0];

    let mut out = OutDir::create(&a.common)?;
    out.write("trials.csv", trials_csv(&space, &records)?)?;
    out.json("trials.json", &records)?;
    out.write("best_config.txt", best.config.to_kv())?;
    out.json(
        "best.json",
        &BestDoc {
            trial: best.trial,
            mean_loss: best.mean_loss,
            std_loss: best.std_loss,
            fold_losses: &best.fold_losses,
        },
    )?;
    let inputs = input_paths(&a.common, &a.input, &[&a.space]);
    out.finish("search", seed, a, Some(base), &schema, &inputs)
}

fn fixture(a: &FixtureArgs) -> Result<()> {
    if a.common.config.is_some() {
        return Err(Error::Config("fixture takes no --config".into()));
    }
    let seed = a.common.seed.unwrap_or(0);
    let spec = FixtureSpec::crash_mix(seed, a.rows).with_signal(a.signal);
    let data = synthesize_fixture(&spec)?;
    let mut out = OutDir::create(&a.common)?;
    let mut buf = Vec::new();
    write_labelled(&data, &mut buf)?;
    out.write("data.csv", buf)?;
    out.write("schema.json", data.schema().to_json_pretty() + "\n")?;
    out.finish("fixture", seed, a, None, data.schema(), &[])
}
