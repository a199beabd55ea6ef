//! Stratified splitting, stratified folds and SMOTE oversampling.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{EncodedDataset, SYNTHETIC_ID_BASE};
use crate::diffgraph::Tensor;
use crate::rng::{rng_for, Stream};
use crate::{Error, Result};

fn rows_by_class(targets: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &t) in targets.iter().enumerate() {
        by_class[t].push(i);
    }
    by_class
}

/// Per-class train counts: largest-remainder rounding of `fraction · n_c` so the total is
/// `round(fraction · N)`, then clamped so both sides keep at least one row per class.
fn train_quota(sizes: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let goal = (fraction * total as f64).round() as usize;
    let ideal: Vec<f64> = sizes.iter().map(|&n| fraction * n as f64).collect();
    let mut quota: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).filter(|&c| sizes[c] > 0).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (ideal[a] - ideal[a].floor(), ideal[b] - ideal[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = goal.saturating_sub(quota.iter().sum());
    for &c in &order {
        if missing == 0 {
            break;
        }
        if quota[c] < sizes[c] {
            quota[c] += 1;
            missing -= 1;
        }
    }
    for (q, &n) in quota.iter_mut().zip(sizes) {
        if n >= 2 {
            *q = (*q).clamp(1, n - 1);
        }
    }
    quota
}

/// Row positions of a per-class shuffled split, each side in ascending order.
pub fn stratified_split_indices(
    targets: &[usize],
    n_classes: usize,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Contract(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let by_class = rows_by_class(targets, n_classes);
    if let Some((c, rows)) = by_class.iter().enumerate().find(|(_, r)| r.len() == 1) {
        return Err(Error::Stratification(format!(
            "class {c} has {} row; at least 2 are needed to stratify",
            rows.len()
        )));
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let quota = train_quota(&sizes, train_fraction);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, mut rows) in by_class.into_iter().enumerate() {
        rows.shuffle(&mut rng_for(seed, Stream::Split, c as u64));
        train.extend_from_slice(&rows[..quota[c]]);
        test.extend_from_slice(&rows[quota[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Splits `data` so every class keeps its share on both sides (within one row).
/// Classes absent from `data` are ignored; a class with a single row cannot be split.
pub fn stratified_split(data: &EncodedDataset, train_fraction: f64, seed: u64) -> Result<(EncodedDataset, EncodedDataset)> {
    let (train, test) = stratified_split_indices(data.targets(), data.n_classes(), train_fraction, seed)?;
    Ok((data.subset(&train), data.subset(&test)))
}

/// Fold number of every row. Each class is shuffled and dealt round-robin, continuing
/// the deal across classes so fold sizes differ by at most one.
pub fn stratified_folds(targets: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Contract("k-fold needs at least 2 folds".into()));
    }
    if targets.len() < k {
        return Err(Error::Stratification(format!(
            "{} rows cannot fill {k} folds",
            targets.len()
        )));
    }
    let mut fold = vec![0; targets.len()];
    let mut next = 0;
    for (c, mut rows) in rows_by_class(targets, n_classes).into_iter().enumerate() {
        rows.shuffle(&mut rng_for(seed, Stream::Folds, c as u64));
        for r in rows {
            fold[r] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SmoteTarget {
    /// Raise every present class to the largest class count.
    Majority,
    /// Explicit count per class; each must be at least the current count.
    PerClass(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub target: SmoteTarget,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            target: SmoteTarget::Majority,
            seed: 0,
        }
    }
}

/// Where a synthetic row came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRow {
    pub row_id: u64,
    pub class: usize,
    pub parent: u64,
    pub neighbor: u64,
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoteOutput {
    /// Original rows first, unchanged, followed by synthetic rows grouped by class.
    pub dataset: EncodedDataset,
    pub synthetic: Vec<SyntheticRow>,
}

/// Indices (into `rows`) of the `k` nearest other rows, ties broken by lower index.
fn nearest(x: &Tensor, rows: &[usize], i: usize, k: usize) -> Vec<usize> {
    let a = x.row(rows[i]);
    let mut d: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, &r)| {
            let dist = a.iter().zip(x.row(r)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
            (dist, j)
        })
        .collect();
    d.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
    d.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Oversamples minority classes by interpolating between a row and one of its `k`
/// nearest same-class neighbours (unscaled Euclidean distance on the encoded values).
///
/// Each synthetic value is clamped to the interval spanned by its parents, and
/// categorical columns are rounded to the nearest valid code.
pub fn smote(train: &EncodedDataset, config: &SmoteConfig) -> Result<SmoteOutput> {
    if config.k_neighbors == 0 {
        return Err(Error::Config("k_neighbors must be at least 1".into()));
    }
    let k_classes = train.n_classes();
    let counts = train.class_counts();
    let targets: Vec<usize> = match &config.target {
        SmoteTarget::Majority => {
            let top = counts.iter().copied().max().unwrap_or(0);
            counts.iter().map(|&n| if n == 0 { 0 } else { top }).collect()
        }
        SmoteTarget::PerClass(t) => {
            if t.len() != k_classes {
                return Err(Error::Config(format!(
                    "{} target counts for {k_classes} classes",
                    t.len()
                )));
            }
            if let Some(c) = (0..k_classes).find(|&c| t[c] < counts[c]) {
                return Err(Error::Config(format!(
                    "target {} for class {c} is below its current count {}",
                    t[c], counts[c]
                )));
            }
            t.clone()
        }
    };

    let x = train.features();
    let schema = train.schema();
    let by_class = rows_by_class(train.targets(), k_classes);
    let mut next_id = train
        .row_ids()
        .iter()
        .copied()
        .filter(|&id| id >= SYNTHETIC_ID_BASE)
        .max()
        .map_or(SYNTHETIC_ID_BASE, |m| m + 1);

    let mut data = x.data().to_vec();
    let mut labels = train.targets().to_vec();
    let mut ids = train.row_ids().to_vec();
    let mut synthetic = Vec::new();

    for (c, rows) in by_class.iter().enumerate() {
        let need = targets[c] - counts[c];
        if need == 0 {
            continue;
        }
        if rows.len() < 2 {
            return Err(Error::CannotInterpolate {
                class: c,
                count: rows.len(),
            });
        }
        let k = config.k_neighbors.min(rows.len() - 1);
        let mut neighbours: Vec<Option<Vec<usize>>> = vec![None; rows.len()];
        let mut rng = rng_for(config.seed, Stream::Smote, c as u64);
        for _ in 0..need {
            let i = rng.random_range(0..rows.len());
            let list = neighbours[i].get_or_insert_with(|| nearest(x, rows, i, k));
            let j = list[rng.random_range(0..list.len())];
            let u: f64 = rng.random();
            let (a, b) = (x.row(rows[i]), x.row(rows[j]));
            for ((col, &p), &q) in schema.columns.iter().zip(a).zip(b) {
                let v = (p + u * (q - p)).clamp(p.min(q), p.max(q));
                data.push(if col.is_categorical() { col.snap(v) } else { v });
            }
            labels.push(c);
            ids.push(next_id);
            synthetic.push(SyntheticRow {
                row_id: next_id,
                class: c,
                parent: train.row_ids()[rows[i]],
                neighbor: train.row_ids()[rows[j]],
                u,
            });
            next_id += 1;
        }
    }
    let n = labels.len();
    let features = Tensor::new(n, x.cols(), data)?;
    Ok(SmoteOutput {
        dataset: EncodedDataset::new(features, labels, schema.clone(), ids)?,
        synthetic,
    })
}
