//! Synthetic crash records for desk-scale tests.
//!
//! Unplanted columns follow the marginal frequencies of the published descriptive
//! statistics (uniform codes for columns it does not cover). A `signal` in `[0, 1]`
//! controls how often the planted columns carry class-dependent values instead.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{default_schema, ColumnKind, EncodedDataset, Schema};
use crate::diffgraph::Tensor;
use crate::rng::{rng_for, Stream};
use crate::{Error, Result};

/// Fatal / serious / minor / possible / no-injury shares of the crash records.
pub const CRASH_CLASS_MIX: [f64; 5] = [0.05, 0.15, 0.44, 0.30, 0.06];

#[derive(Clone, Debug)]
pub struct FixtureSpec {
    pub seed: u64,
    pub n_rows: usize,
    pub class_mix: Vec<f64>,
    /// Probability that a planted column follows the class rather than its marginal.
    pub signal: f64,
    pub schema: Schema,
}

impl FixtureSpec {
    /// Default schema, published class mix, fully planted signal.
    pub fn crash_mix(seed: u64, n_rows: usize) -> Self {
        Self {
            seed,
            n_rows,
            class_mix: CRASH_CLASS_MIX.to_vec(),
            signal: 1.0,
            schema: default_schema(),
        }
    }

    pub fn with_signal(mut self, signal: f64) -> Self {
        self.signal = signal;
        self
    }
}

/// Share of "Yes" (or Male / Rural) for binary columns.
fn binary_marginal(name: &str) -> Option<f64> {
    let count = match name {
        "sex" => 5282,
        "aggressive_driving" => 109,
        "dui" => 226,
        "distracted_driving" => 707,
        "drowsy_driving" => 39,
        "older_driver_involved" => 916,
        "teenage_driver_involved" => 846,
        "holiday" => 1067,
        "right_turn_involved" => 1694,
        "intersection_involved" => 5361,
        "left_turn_involved" => 1733,
        "overturn_rollover" => 27,
        "domestic_animal_involved" => 19,
        "commercial_vehicle_involved" => 253,
        "heavy_truck_involved" => 278,
        "transit_vehicle_involved" => 80,
        "work_zone_involved" => 387,
        "wrong_way_driving" => 28,
        "road_type" => 264,
        "roadway_surface_dry" => 7607,
        _ => return None,
    };
    Some(count as f64 / 8812.0)
}

fn ordinal_marginal(name: &str) -> Option<&'static [f64]> {
    Some(match name {
        "alcohol_drug_test_result" => &[11.0, 34.0, 15.0, 9.0, 8743.0],
        "functional_class" => &[2651.0, 1578.0, 4583.0],
        "lighting_condition" => &[1167.0, 1912.0, 5292.0, 244.0, 197.0],
        "weather_condition" => &[6758.0, 1214.0, 509.0, 25.0, 213.0, 93.0],
        "vertical_alignment" => &[6891.0, 61.0, 50.0, 1810.0],
        _ => return None,
    })
}

fn draw_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Class-dependent value for a planted column, if the column is planted.
fn planted(name: &str, kind: &ColumnKind, class: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> Option<f64> {
    // Position of the class on a 0 (most severe) .. 1 (least severe) scale.
    let rel = if n_classes > 1 {
        class as f64 / (n_classes - 1) as f64
    } else {
        0.0
    };
    match (name, kind) {
        ("lighting_condition", ColumnKind::Ordinal { labels }) => Some((class % labels.len()) as f64 + 1.0),
        ("age", ColumnKind::Continuous) => {
            let normal = Normal::new(64.0 - 44.0 * rel, 4.0_f64).expect("valid normal");
            Some(normal.sample(rng).clamp(1.0, 99.0).round())
        }
        ("dui", ColumnKind::Binary { .. }) => Some(f64::from(rng.random::<f64>() < 0.6 - 0.55 * rel)),
        ("intersection_involved", ColumnKind::Binary { .. }) => {
            Some(f64::from(rng.random::<f64>() < 0.2 + 0.6 * rel))
        }
        _ => None,
    }
}

fn marginal(name: &str, kind: &ColumnKind, rng: &mut ChaCha8Rng) -> f64 {
    match kind {
        ColumnKind::Binary { .. } => {
            let p = binary_marginal(name).unwrap_or(0.5);
            f64::from(rng.random::<f64>() < p)
        }
        ColumnKind::Ordinal { labels } => {
            let idx = match ordinal_marginal(name) {
                Some(w) if w.len() == labels.len() => draw_weighted(rng, w),
                _ => rng.random_range(0..labels.len()),
            };
            idx as f64 + 1.0
        }
        ColumnKind::Continuous => {
            let normal = Normal::new(35.0_f64, 18.0).expect("valid normal");
            normal.sample(rng).clamp(1.0, 99.0).round()
        }
    }
}

/// Exact class counts by largest remainder; ties go to the lower class index.
fn allocate(n: usize, mix: &[f64]) -> Vec<usize> {
    let ideal: Vec<f64> = mix.iter().map(|m| m * n as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..mix.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

pub fn synthesize_fixture(spec: &FixtureSpec) -> Result<EncodedDataset> {
    let schema = &spec.schema;
    schema.validate()?;
    let k = schema.n_classes();
    if spec.class_mix.len() != k {
        return Err(Error::Contract(format!(
            "class mix has {} entries, schema has {k} classes",
            spec.class_mix.len()
        )));
    }
    if spec.class_mix.iter().any(|m| !m.is_finite() || *m < 0.0)
        || (spec.class_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Contract("class mix must be nonnegative and sum to 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.signal) {
        return Err(Error::Contract("signal must lie in [0, 1]".into()));
    }

    let mut rng = rng_for(spec.seed, Stream::Fixture, 0);
    let counts = allocate(spec.n_rows, &spec.class_mix);
    let mut targets: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    targets.shuffle(&mut rng);

    let mut data = Vec::with_capacity(spec.n_rows * schema.n_features());
    for &class in &targets {
        for col in &schema.columns {
            let use_signal = spec.signal > 0.0 && rng.random::<f64>() < spec.signal;
            let value = if use_signal {
                planted(&col.name, &col.kind, class, k, &mut rng)
            } else {
                None
            };
            data.push(value.unwrap_or_else(|| marginal(&col.name, &col.kind, &mut rng)));
        }
    }
    let features = Tensor::new(spec.n_rows, schema.n_features(), data)?;
    let ids = (0..spec.n_rows as u64).collect();
    EncodedDataset::new(features, targets, schema.clone(), ids)
}
