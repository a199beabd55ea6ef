//! Grid and random hyperparameter search scored by stratified k-fold cross-validation.
//!
//! A search space is a text file of `key = domain` lines, where `key` is a
//! [`TabNetConfig`] field and the domain is one of
//!
//! ```text
//! n_d = [8, 16, 32]          # explicit values
//! n_steps = int(1, 3)        # inclusive integer range
//! learning_rate = log(0.001, 0.05)
//! gamma = uniform(1.0, 2.0)
//! ```
//!
//! Float ranges can only be sampled, so grid search rejects them.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::EncodedDataset;
use crate::resample::{smote, stratified_folds, SmoteConfig};
use crate::rng::{derive_seed, rng_for, Stream};
use crate::tabnet::{train, TabNetConfig, CONFIG_KEYS};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    List { values: Vec<String> },
    Int { lo: i64, hi: i64 },
    LogUniform { lo: f64, hi: f64 },
    Uniform { lo: f64, hi: f64 },
}

const INTEGER_KEYS: [&str; 10] = [
    "n_d",
    "n_a",
    "n_steps",
    "n_independent",
    "n_shared",
    "n_classes",
    "seed",
    "max_epochs",
    "batch_size",
    "patience",
];

impl Domain {
    fn sample(&self, key: &str, rng: &mut impl Rng) -> String {
        let float = |v: f64| {
            if INTEGER_KEYS.contains(&key) {
                (v.round() as i64).to_string()
            } else {
                v.to_string()
            }
        };
        match self {
            Domain::List { values } => values[rng.random_range(0..values.len())].clone(),
            Domain::Int { lo, hi } => rng.random_range(*lo..=*hi).to_string(),
            Domain::LogUniform { lo, hi } => float(rng.random_range(lo.ln()..=hi.ln()).exp().clamp(*lo, *hi)),
            Domain::Uniform { lo, hi } => float(rng.random_range(*lo..=*hi)),
        }
    }

    fn grid_values(&self, key: &str) -> Result<Vec<String>> {
        match self {
            Domain::List { values } => Ok(values.clone()),
            Domain::Int { lo, hi } => Ok((*lo..=*hi).map(|v| v.to_string()).collect()),
            _ => Err(Error::Config(format!(
                "'{key}' has a continuous range, which grid search cannot enumerate"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub entries: Vec<(String, Domain)>,
}

fn parse_pair(key: &str, inner: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    let [a, b] = parts[..] else {
        return Err(Error::Config(format!("'{key}': a range needs exactly two bounds")));
    };
    let num = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Config(format!("'{key}': '{s}' is not a number")))
    };
    let (lo, hi) = (num(a)?, num(b)?);
    if lo > hi {
        return Err(Error::Config(format!("'{key}': range bounds are out of order")));
    }
    Ok((lo, hi))
}

fn parse_domain(key: &str, text: &str) -> Result<Domain> {
    let text = text.trim();
    let call = |name: &str| {
        text.strip_prefix(name)
            .and_then(|r| r.trim_start().strip_prefix('('))
            .and_then(|r| r.strip_suffix(')'))
    };
    if let Some(inner) = text.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
        let values: Vec<String> = inner
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if values.is_empty() {
            return Err(Error::Config(format!("'{key}' has an empty value list")));
        }
        for v in &values {
            TabNetConfig::default().set(key, v)?;
        }
        Ok(Domain::List { values })
    } else if let Some(inner) = call("int") {
        let (lo, hi) = parse_pair(key, inner)?;
        if lo.fract() != 0.0 || hi.fract() != 0.0 {
            return Err(Error::Config(format!("'{key}': int() bounds must be integers")));
        }
        Ok(Domain::Int {
            lo: lo as i64,
            hi: hi as i64,
        })
    } else if let Some(inner) = call("log") {
        let (lo, hi) = parse_pair(key, inner)?;
        if lo <= 0.0 {
            return Err(Error::Config(format!("'{key}': log() bounds must be positive")));
        }
        Ok(Domain::LogUniform { lo, hi })
    } else if let Some(inner) = call("uniform") {
        let (lo, hi) = parse_pair(key, inner)?;
        Ok(Domain::Uniform { lo, hi })
    } else {
        Err(Error::Config(format!("'{key}': unrecognised domain '{text}'")))
    }
}

impl SearchSpace {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, Domain)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ctx = |e: Error| {
                let msg = match e {
                    Error::Config(m) => m,
                    other => other.to_string(),
                };
                Error::Config(format!("line {}: {msg}", n + 1))
            };
            let (key, rest) = line
                .split_once('=')
                .ok_or_else(|| ctx(Error::Config("expected key = domain".into())))?;
            let key = key.trim();
            if !CONFIG_KEYS.contains(&key) {
                return Err(ctx(Error::Config(format!("unknown hyperparameter '{key}'"))));
            }
            if entries.iter().any(|(k, _)| k == key) {
                return Err(ctx(Error::Config(format!("'{key}' is declared twice"))));
            }
            entries.push((key.to_string(), parse_domain(key, rest).map_err(ctx)?));
        }
        if entries.is_empty() {
            return Err(Error::Config("search space is empty".into()));
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every combination, the first key varying slowest.
    pub fn grid(&self) -> Result<Vec<Vec<(String, String)>>> {
        if self.entries.is_empty() {
            return Err(Error::Contract("search space is empty".into()));
        }
        let axes = self
            .entries
            .iter()
            .map(|(k, d)| d.grid_values(k))
            .collect::<Result<Vec<_>>>()?;
        let mut points = vec![Vec::new()];
        for ((key, _), values) in self.entries.iter().zip(&axes) {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((key.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        Ok(points)
    }

    /// Assignment for random trial `index`; independent of how many trials are drawn.
    pub fn sample(&self, seed: u64, index: usize) -> Vec<(String, String)> {
        let mut rng = rng_for(seed, Stream::Trial, index as u64);
        self.entries
            .iter()
            .map(|(k, d)| (k.clone(), d.sample(k, &mut rng)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    /// Values for every hyperparameter the space leaves unset.
    pub base: TabNetConfig,
    pub k_folds: usize,
    pub seed: u64,
    /// Oversample each fold's training portion.
    pub smote: Option<SmoteConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub assignment: Vec<(String, String)>,
    pub config: TabNetConfig,
    /// Best validation cross-entropy per fold; divergence counts as +inf.
    pub fold_losses: Vec<f64>,
    pub mean_loss: f64,
    pub std_loss: f64,
    /// 1 for the best trial.
    pub rank: usize,
}

pub fn apply_assignment(base: &TabNetConfig, assignment: &[(String, String)]) -> Result<TabNetConfig> {
    let mut cfg = base.clone();
    for (k, v) in assignment {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Cross-validated losses of one config over a fixed fold assignment.
pub fn evaluate_config(
    config: &TabNetConfig,
    data: &EncodedDataset,
    folds: &[usize],
    k_folds: usize,
    smote_config: Option<&SmoteConfig>,
) -> Result<Vec<f64>> {
    (0..k_folds)
        .map(|f| {
            let train_rows: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != f).collect();
            let valid_rows: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == f).collect();
            let mut train_set = data.subset(&train_rows);
            if let Some(sc) = smote_config {
                let sc = SmoteConfig {
                    seed: derive_seed(sc.seed, Stream::Smote, f as u64),
                    ..sc.clone()
                };
                train_set = smote(&train_set, &sc)?.dataset;
            }
            match train(config, &train_set, &data.subset(&valid_rows)) {
                Ok((_, report)) if report.best_valid_loss.is_finite() => Ok(report.best_valid_loss),
                Ok(_) | Err(Error::Divergence { .. }) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return (f64::INFINITY, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn run_trials(
    assignments: Vec<Vec<(String, String)>>,
    data: &EncodedDataset,
    settings: &SearchSettings,
) -> Result<Vec<TrialRecord>> {
    if settings.k_folds < 2 {
        return Err(Error::Contract("k_folds must be at least 2".into()));
    }
    let folds = stratified_folds(data.targets(), data.n_classes(), settings.k_folds, settings.seed)?;
    let configs = assignments
        .iter()
        .map(|a| apply_assignment(&settings.base, a))
        .collect::<Result<Vec<_>>>()?;
    let losses: Vec<Result<Vec<f64>>> = configs
        .par_iter()
        .map(|cfg| evaluate_config(cfg, data, &folds, settings.k_folds, settings.smote.as_ref()))
        .collect();
    let mut records = Vec::with_capacity(configs.len());
    for (trial, ((assignment, config), fold_losses)) in assignments.into_iter().zip(configs).zip(losses).enumerate() {
        let fold_losses = fold_losses?;
        let (mean_loss, std_loss) = mean_std(&fold_losses);
        records.push(TrialRecord {
            trial,
            assignment,
            config,
            fold_losses,
            mean_loss,
            std_loss,
            rank: 0,
        });
    }
    records.sort_by(|a, b| {
        a.mean_loss
            .total_cmp(&b.mean_loss)
            .then(a.std_loss.total_cmp(&b.std_loss))
            .then(a.trial.cmp(&b.trial))
    });
    for (i, r) in records.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(records)
}

/// Every grid point, ranked by mean validation loss, then std, then grid order.
pub fn grid_search(space: &SearchSpace, data: &EncodedDataset, settings: &SearchSettings) -> Result<Vec<TrialRecord>> {
    run_trials(space.grid()?, data, settings)
}

/// `n_trials` independent draws, ranked like [`grid_search`].
pub fn random_search(
    space: &SearchSpace,
    n_trials: usize,
    data: &EncodedDataset,
    settings: &SearchSettings,
) -> Result<Vec<TrialRecord>> {
    if n_trials == 0 {
        return Err(Error::Contract("n_trials must be at least 1".into()));
    }
    if space.entries.is_empty() {
        return Err(Error::Contract("search space is empty".into()));
    }
    let assignments = (0..n_trials).map(|i| space.sample(settings.seed, i)).collect();
    run_trials(assignments, data, settings)
}

/// Ranked trials as CSV: one column per searched key, then the scores.
pub fn trials_csv(space: &SearchSpace, records: &[TrialRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["rank".to_string(), "trial".to_string()];
    header.extend(space.entries.iter().map(|(k, _)| k.clone()));
    header.extend(["mean_loss", "std_loss", "fold_losses"].map(String::from));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.rank.to_string(), r.trial.to_string()];
        row.extend(r.assignment.iter().map(|(_, v)| v.clone()));
        row.push(r.mean_loss.to_string());
        row.push(r.std_loss.to_string());
        let mut folds = String::new();
        for (i, l) in r.fold_losses.iter().enumerate() {
            let _ = write!(folds, "{}{l}", if i > 0 { ";" } else { "" });
        }
        row.push(folds);
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
