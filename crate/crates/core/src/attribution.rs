//! Shapley-value attribution for any batch predictor.
//!
//! A feature absent from a coalition takes each background row's value in turn and the
//! prediction is averaged over the background (interventional expectation). With
//! `φ_i = Σ_{S ⊆ N∖{i}} |S|!(N−|S|−1)!/N! · (v(S∪{i}) − v(S))`, the values satisfy
//! `Σφ = f(x) − E[f(X)]` exactly under enumeration.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffgraph::Tensor;
use crate::rng::{derive_seed, rng_for, Stream};
use crate::tabnet::Ensemble;
use crate::{Error, Result};

/// Default cap on features for exact enumeration (2^20 coalitions).
pub const DEFAULT_ENUMERATION_LIMIT: usize = 20;

/// Rows per prediction call when evaluating many coalitions.
const CHUNK_ROWS: usize = 1 << 15;

/// Deterministic batch prediction: `rows × n_features` in, `rows × n_outputs` out.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn predict_batch(&self, x: &Tensor) -> Result<Tensor>;
}

/// Adapts a per-row closure.
pub struct FnPredictor<F> {
    n_features: usize,
    n_outputs: usize,
    f: F,
}

impl<F> FnPredictor<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub fn new(n_features: usize, n_outputs: usize, f: F) -> Self {
        Self {
            n_features,
            n_outputs,
            f,
        }
    }
}

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    fn predict_batch(&self, x: &Tensor) -> Result<Tensor> {
        let mut data = Vec::with_capacity(x.rows() * self.n_outputs);
        for row in x.iter_rows() {
            let out = (self.f)(row);
            if out.len() != self.n_outputs {
                return Err(Error::Shape(format!(
                    "predictor returned {} outputs, expected {}",
                    out.len(),
                    self.n_outputs
                )));
            }
            data.extend(out);
        }
        Tensor::new(x.rows(), self.n_outputs, data)
    }
}

/// Which model output is attributed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSpace {
    #[default]
    Probability,
    Logit,
}

pub struct ModelPredictor<'a> {
    pub ensemble: &'a Ensemble,
    pub space: OutputSpace,
}

impl Predictor for ModelPredictor<'_> {
    fn n_features(&self) -> usize {
        self.ensemble.n_features()
    }

    fn n_outputs(&self) -> usize {
        self.ensemble.n_classes()
    }

    fn predict_batch(&self, x: &Tensor) -> Result<Tensor> {
        match self.space {
            OutputSpace::Probability => self.ensemble.predict_proba(x),
            OutputSpace::Logit => self.ensemble.logits(x),
        }
    }
}

/// The cooperative game for one output class.
pub struct CoalitionValueFn<'a, P: Predictor + ?Sized> {
    predictor: &'a P,
    background: Tensor,
    class: usize,
}

impl<'a, P: Predictor + ?Sized> CoalitionValueFn<'a, P> {
    pub fn new(predictor: &'a P, background: Tensor, class: usize) -> Result<Self> {
        check_background(predictor, &background)?;
        if class >= predictor.n_outputs() {
            return Err(Error::Contract(format!(
                "class {class} outside {} outputs",
                predictor.n_outputs()
            )));
        }
        Ok(Self {
            predictor,
            background,
            class,
        })
    }

    pub fn background(&self) -> &Tensor {
        &self.background
    }

    pub fn class(&self) -> usize {
        self.class
    }
}

fn check_background<P: Predictor + ?Sized>(predictor: &P, background: &Tensor) -> Result<()> {
    if background.rows() == 0 {
        return Err(Error::Contract("background set is empty".into()));
    }
    if background.cols() != predictor.n_features() {
        return Err(Error::Shape(format!(
            "background has {} columns, predictor expects {}",
            background.cols(),
            predictor.n_features()
        )));
    }
    Ok(())
}

fn check_instance<P: Predictor + ?Sized>(predictor: &P, instance: &[f64]) -> Result<()> {
    if instance.len() != predictor.n_features() {
        return Err(Error::Shape(format!(
            "instance has {} values, predictor expects {}",
            instance.len(),
            predictor.n_features()
        )));
    }
    Ok(())
}

/// `v(S)` for every output and every coalition (given as membership masks), in order.
fn coalition_values<P: Predictor + ?Sized>(
    predictor: &P,
    background: &Tensor,
    instance: &[f64],
    masks: &[Vec<bool>],
) -> Result<Vec<Vec<f64>>> {
    let b = background.rows();
    let n = instance.len();
    let per_chunk = (CHUNK_ROWS / b).max(1);
    let mut values = Vec::with_capacity(masks.len());
    for chunk in masks.chunks(per_chunk) {
        let mut data = Vec::with_capacity(chunk.len() * b * n);
        for mask in chunk {
            for bg in background.iter_rows() {
                data.extend((0..n).map(|j| if mask[j] { instance[j] } else { bg[j] }));
            }
        }
        let out = predictor.predict_batch(&Tensor::new(chunk.len() * b, n, data)?)?;
        out.ensure_finite("predictions")?;
        for m in 0..chunk.len() {
            let mut mean = vec![0.0; out.cols()];
            for r in m * b..(m + 1) * b {
                for (acc, v) in mean.iter_mut().zip(out.row(r)) {
                    *acc += v;
                }
            }
            for v in &mut mean {
                *v /= b as f64;
            }
            values.push(mean);
        }
    }
    Ok(values)
}

/// Mean over the background of the prediction with `coalition` features taken from `instance`.
pub fn coalition_value<P: Predictor + ?Sized>(
    cv: &CoalitionValueFn<'_, P>,
    instance: &[f64],
    coalition: &[usize],
) -> Result<f64> {
    check_instance(cv.predictor, instance)?;
    let mut mask = vec![false; instance.len()];
    for &i in coalition {
        *mask.get_mut(i).ok_or_else(|| {
            Error::Contract(format!("feature {i} outside {} features", instance.len()))
        })? = true;
    }
    let v = coalition_values(cv.predictor, &cv.background, instance, &[mask])?;
    Ok(v[0][cv.class])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Permutation,
}

/// Attribution of one instance for one output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub phi: Vec<f64>,
    /// Mean prediction over the background.
    pub base_value: f64,
    /// Prediction at the instance.
    pub fx: f64,
    pub method: Method,
    /// Orderings evaluated, for the permutation method.
    pub n_samples: Option<usize>,
}

/// `1 / (N · C(N−1, s))` for `s = 0..N`.
fn shapley_weights(n: usize) -> Vec<f64> {
    let mut binom = 1.0;
    let mut w = Vec::with_capacity(n);
    for s in 0..n {
        w.push(1.0 / (n as f64 * binom));
        binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
    }
    w
}

/// Exact Shapley values of every output.
pub fn exact_shapley_all<P: Predictor + ?Sized>(
    predictor: &P,
    background: &Tensor,
    instance: &[f64],
    limit: usize,
) -> Result<Vec<AttributionResult>> {
    check_background(predictor, background)?;
    check_instance(predictor, instance)?;
    let n = instance.len();
    if n > limit {
        return Err(Error::EnumerationLimit { n, limit });
    }
    let masks: Vec<Vec<bool>> = (0..1usize << n)
        .map(|bits| (0..n).map(|j| bits >> j & 1 == 1).collect())
        .collect();
    let v = coalition_values(predictor, background, instance, &masks)?;
    let weights = shapley_weights(n);
    let k = predictor.n_outputs();
    let mut phi = vec![vec![0.0; n]; k];
    for s in 0..(1usize << n) {
        let size = s.count_ones() as usize;
        if size == n {
            continue;
        }
        let w = weights[size];
        for i in (0..n).filter(|i| s >> i & 1 == 0) {
            let with = &v[s | 1 << i];
            for c in 0..k {
                phi[c][i] += w * (with[c] - v[s][c]);
            }
        }
    }
    let full = &v[(1usize << n) - 1];
    Ok((0..k)
        .map(|c| AttributionResult {
            phi: phi[c].clone(),
            base_value: v[0][c],
            fx: full[c],
            method: Method::Exact,
            n_samples: None,
        })
        .collect())
}

/// Exact Shapley values by enumerating all `2^N` coalitions (`N ≤ 20`).
pub fn exact_shapley<P: Predictor + ?Sized>(cv: &CoalitionValueFn<'_, P>, instance: &[f64]) -> Result<AttributionResult> {
    exact_shapley_with_limit(cv, instance, DEFAULT_ENUMERATION_LIMIT)
}

pub fn exact_shapley_with_limit<P: Predictor + ?Sized>(
    cv: &CoalitionValueFn<'_, P>,
    instance: &[f64],
    limit: usize,
) -> Result<AttributionResult> {
    let mut all = exact_shapley_all(cv.predictor, &cv.background, instance, limit)?;
    Ok(all.swap_remove(cv.class))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationOptions {
    pub n_permutations: usize,
    pub seed: u64,
    /// Pair every drawn ordering with its reverse; the count is rounded up to even.
    pub antithetic: bool,
}

/// Monte-Carlo Shapley values of every output from random feature orderings.
pub fn permutation_shapley_all<P: Predictor + ?Sized>(
    predictor: &P,
    background: &Tensor,
    instance: &[f64],
    options: PermutationOptions,
) -> Result<Vec<AttributionResult>> {
    check_background(predictor, background)?;
    check_instance(predictor, instance)?;
    if options.n_permutations == 0 {
        return Err(Error::Contract("n_permutations must be at least 1".into()));
    }
    let n = instance.len();
    let k = predictor.n_outputs();
    let mut rng = rng_for(options.seed, Stream::Permutation, 0);
    let mut orders: Vec<Vec<usize>> = Vec::new();
    let draws = if options.antithetic {
        options.n_permutations.div_ceil(2)
    } else {
        options.n_permutations
    };
    for _ in 0..draws {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        if options.antithetic {
            let rev: Vec<usize> = order.iter().rev().copied().collect();
            orders.push(order);
            orders.push(rev);
        } else {
            orders.push(order);
        }
    }

    let mut phi = vec![vec![0.0; n]; k];
    let mut base = vec![0.0; k];
    let mut fx = vec![0.0; k];
    // Prefix coalitions of several orderings share one prediction call.
    let per_batch = (CHUNK_ROWS / (background.rows() * (n + 1))).max(1);
    for group in orders.chunks(per_batch) {
        let mut masks = Vec::with_capacity(group.len() * (n + 1));
        for order in group {
            let mut mask = vec![false; n];
            masks.push(mask.clone());
            for &j in order {
                mask[j] = true;
                masks.push(mask.clone());
            }
        }
        let v = coalition_values(predictor, background, instance, &masks)?;
        for (o, order) in group.iter().enumerate() {
            let prefix = &v[o * (n + 1)..(o + 1) * (n + 1)];
            for (pos, &j) in order.iter().enumerate() {
                for c in 0..k {
                    phi[c][j] += prefix[pos + 1][c] - prefix[pos][c];
                }
            }
            base.clone_from(&prefix[0]);
            fx.clone_from(&prefix[n]);
        }
    }
    let m = orders.len() as f64;
    Ok((0..k)
        .map(|c| AttributionResult {
            phi: phi[c].iter().map(|p| p / m).collect(),
            base_value: base[c],
            fx: fx[c],
            method: Method::Permutation,
            n_samples: Some(orders.len()),
        })
        .collect())
}

pub fn permutation_shapley<P: Predictor + ?Sized>(
    cv: &CoalitionValueFn<'_, P>,
    instance: &[f64],
    options: PermutationOptions,
) -> Result<AttributionResult> {
    let mut all = permutation_shapley_all(cv.predictor, &cv.background, instance, options)?;
    Ok(all.swap_remove(cv.class))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodConfig {
    Exact { limit: usize },
    Permutation(PermutationOptions),
}

/// Attributions of many instances for a set of output classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub classes: Vec<usize>,
    pub method: Method,
    pub n_samples: Option<usize>,
    /// Per class, the mean prediction over the background.
    pub base_values: Vec<f64>,
    /// Per class, `instances × N` attributions.
    pub phi: Vec<Vec<Vec<f64>>>,
    /// Per class, the prediction at each instance.
    pub fx: Vec<Vec<f64>>,
    /// Per class, mean |φ| per feature normalised to sum to 1 (all zeros when every φ is 0).
    pub ranking: Vec<Vec<f64>>,
}

impl Explanation {
    pub fn n_instances(&self) -> usize {
        self.fx.first().map_or(0, Vec::len)
    }

    /// Single-instance view for the `k`-th explained class.
    pub fn result(&self, class_pos: usize, instance: usize) -> AttributionResult {
        AttributionResult {
            phi: self.phi[class_pos][instance].clone(),
            base_value: self.base_values[class_pos],
            fx: self.fx[class_pos][instance],
            method: self.method,
            n_samples: self.n_samples,
        }
    }

    /// Mean of the per-class rankings.
    pub fn overall_ranking(&self) -> Vec<f64> {
        let n = self.ranking.first().map_or(0, Vec::len);
        let mut acc = vec![0.0; n];
        for r in &self.ranking {
            for (a, v) in acc.iter_mut().zip(r) {
                *a += v;
            }
        }
        let k = self.ranking.len().max(1) as f64;
        acc.into_iter().map(|a| a / k).collect()
    }
}

fn normalised_mean_abs(phi: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n];
    for row in phi {
        for (a, p) in acc.iter_mut().zip(row) {
            *a += p.abs();
        }
    }
    let total: f64 = acc.iter().sum();
    if total > 0.0 {
        acc.iter_mut().for_each(|a| *a /= total);
    }
    acc
}

/// Attributes every row of `instances` for each class in `classes`. Instances run in
/// parallel and are joined in order; permutation seeds derive from the instance index.
pub fn explain_dataset<P: Predictor + ?Sized>(
    predictor: &P,
    instances: &Tensor,
    background: &Tensor,
    classes: &[usize],
    method: MethodConfig,
) -> Result<Explanation> {
    if instances.rows() == 0 {
        return Err(Error::Contract("no instances to explain".into()));
    }
    if classes.is_empty() {
        return Err(Error::Contract("no classes to explain".into()));
    }
    if let Some(&c) = classes.iter().find(|&&c| c >= predictor.n_outputs()) {
        return Err(Error::Contract(format!(
            "class {c} outside {} outputs",
            predictor.n_outputs()
        )));
    }
    check_background(predictor, background)?;
    if let MethodConfig::Exact { limit } = method {
        if instances.cols() > limit {
            return Err(Error::EnumerationLimit {
                n: instances.cols(),
                limit,
            });
        }
    }
    let per_instance: Vec<Result<Vec<AttributionResult>>> = (0..instances.rows())
        .into_par_iter()
        .map(|r| {
            let x = instances.row(r);
            match method {
                MethodConfig::Exact { limit } => exact_shapley_all(predictor, background, x, limit),
                MethodConfig::Permutation(opts) => {
                    let opts = PermutationOptions {
                        seed: derive_seed(opts.seed, Stream::Permutation, r as u64),
                        ..opts
                    };
                    permutation_shapley_all(predictor, background, x, opts)
                }
            }
        })
        .collect();
    let per_instance = per_instance.into_iter().collect::<Result<Vec<_>>>()?;

    let n = instances.cols();
    let first = &per_instance[0];
    let phi: Vec<Vec<Vec<f64>>> = classes
        .iter()
        .map(|&c| per_instance.iter().map(|res| res[c].phi.clone()).collect())
        .collect();
    let ranking = phi.iter().map(|p| normalised_mean_abs(p, n)).collect();
    Ok(Explanation {
        classes: classes.to_vec(),
        method: first[0].method,
        n_samples: first[0].n_samples,
        base_values: classes.iter().map(|&c| first[c].base_value).collect(),
        fx: classes
            .iter()
            .map(|&c| per_instance.iter().map(|res| res[c].fx).collect())
            .collect(),
        phi,
        ranking,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub value: f64,
    pub phi: f64,
}

/// Signed pushes from the base value to the prediction of one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceData {
    pub base_value: f64,
    pub fx: f64,
    /// Nonzero contributions by decreasing |φ|; positive φ raises the output.
    pub contributions: Vec<Contribution>,
}

pub fn force_data(result: &AttributionResult, feature_names: &[String], feature_values: &[f64]) -> Result<ForceData> {
    let n = result.phi.len();
    if feature_names.len() != n || feature_values.len() != n {
        return Err(Error::Contract(format!(
            "{n} attributions, {} names, {} values",
            feature_names.len(),
            feature_values.len()
        )));
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| result.phi[i] != 0.0).collect();
    order.sort_by(|&a, &b| result.phi[b].abs().total_cmp(&result.phi[a].abs()).then(a.cmp(&b)));
    Ok(ForceData {
        base_value: result.base_value,
        fx: result.fx,
        contributions: order
            .into_iter()
            .map(|i| Contribution {
                feature: feature_names[i].clone(),
                value: feature_values[i],
                phi: result.phi[i],
            })
            .collect(),
    })
}

/// Long-format rows `instance,class,feature,value,phi`.
pub fn write_attributions_csv<W: Write>(
    explanation: &Explanation,
    instance_ids: &[u64],
    class_names: &[String],
    feature_names: &[String],
    instances: &Tensor,
    writer: W,
) -> Result<()> {
    if instance_ids.len() != explanation.n_instances() || instances.rows() != explanation.n_instances() {
        return Err(Error::Contract("instance ids do not match the explanation".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["instance", "class", "feature", "value", "phi"])?;
    for (pos, &c) in explanation.classes.iter().enumerate() {
        for (r, id) in instance_ids.iter().enumerate() {
            for (j, name) in feature_names.iter().enumerate() {
                w.write_record([
                    id.to_string(),
                    class_names[c].clone(),
                    name.clone(),
                    instances.get(r, j).to_string(),
                    explanation.phi[pos][r][j].to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("attributions.csv", e))?;
    Ok(())
}

#[derive(Serialize)]
struct ClassBlock<'a> {
    class: &'a str,
    base_value: f64,
    fx: &'a [f64],
    phi: &'a [Vec<f64>],
    ranking: &'a [f64],
}

#[derive(Serialize)]
struct ExplanationDoc<'a> {
    method: Method,
    n_samples: Option<usize>,
    features: &'a [String],
    instances: &'a [u64],
    classes: Vec<ClassBlock<'a>>,
    overall_ranking: Vec<f64>,
}

pub fn attributions_json(
    explanation: &Explanation,
    instance_ids: &[u64],
    class_names: &[String],
    feature_names: &[String],
) -> Result<String> {
    let doc = ExplanationDoc {
        method: explanation.method,
        n_samples: explanation.n_samples,
        features: feature_names,
        instances: instance_ids,
        classes: explanation
            .classes
            .iter()
            .enumerate()
            .map(|(pos, &c)| ClassBlock {
                class: &class_names[c],
                base_value: explanation.base_values[pos],
                fx: &explanation.fx[pos],
                phi: &explanation.phi[pos],
                ranking: &explanation.ranking[pos],
            })
            .collect(),
        overall_ranking: explanation.overall_ranking(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    fn linear(w: Vec<f64>) -> FnPredictor<impl Fn(&[f64]) -> Vec<f64> + Sync> {
        let n = w.len();
        FnPredictor::new(n, 1, move |x: &[f64]| vec![x.iter().zip(&w).map(|(a, b)| a * b).sum()])
    }

    /// Nonlinear toy game with interactions; feature 3 of 5 is ignored.
    fn toy(x: &[f64]) -> Vec<f64> {
        let a = (x[0] * x[1]).tanh() + 0.5 * x[2] * x[2] - x[4].sin();
        vec![a, 1.0 / (1.0 + (-a).exp())]
    }

    #[test]
    fn coalition_value_examples() {
        let f = FnPredictor::new(2, 1, |x: &[f64]| vec![x[0] + x[1]]);
        let bg = tensor(&[&[0.0, 0.0]]);
        let cv = CoalitionValueFn::new(&f, bg, 0).unwrap();
        assert_eq!(coalition_value(&cv, &[3.0, 4.0], &[1]).unwrap(), 4.0);
        assert_eq!(coalition_value(&cv, &[3.0, 4.0], &[0, 1]).unwrap(), 7.0);
        assert_eq!(coalition_value(&cv, &[3.0, 4.0], &[]).unwrap(), 0.0);
        assert!(coalition_value(&cv, &[3.0, 4.0], &[2]).is_err());
        assert!(CoalitionValueFn::new(&f, Tensor::zeros(0, 2), 0).is_err());
        assert!(CoalitionValueFn::new(&f, Tensor::zeros(1, 2), 1).is_err());
    }

    #[test]
    fn exact_matches_linear_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=8 {
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let f = linear(w.clone());
            let bg = random(&mut rng, 7, n);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let cv = CoalitionValueFn::new(&f, bg.clone(), 0).unwrap();
            let res = exact_shapley(&cv, &x).unwrap();
            for i in 0..n {
                let mean = (0..7).map(|r| bg.get(r, i)).sum::<f64>() / 7.0;
                assert!((res.phi[i] - w[i] * (x[i] - mean)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn exact_axioms() {
        let f = FnPredictor::new(5, 2, toy);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bg = random(&mut rng, 6, 5);
        let x = [0.3, -1.2, 0.8, 5.0, 1.1];
        let cv = CoalitionValueFn::new(&f, bg.clone(), 0).unwrap();
        let res = exact_shapley(&cv, &x).unwrap();
        assert_eq!(res.phi[3], 0.0);
        assert!((res.phi.iter().sum::<f64>() - (res.fx - res.base_value)).abs() < 1e-9);

        let single = FnPredictor::new(1, 1, |x: &[f64]| vec![x[0] * x[0]]);
        let cv = CoalitionValueFn::new(&single, tensor(&[&[1.0], &[3.0]]), 0).unwrap();
        let res = exact_shapley(&cv, &[2.0]).unwrap();
        assert!((res.phi[0] - (4.0 - 5.0)).abs() < 1e-12);

        let wide = FnPredictor::new(21, 1, |_: &[f64]| vec![0.0]);
        let cv = CoalitionValueFn::new(&wide, Tensor::zeros(1, 21), 0).unwrap();
        assert!(matches!(
            exact_shapley(&cv, &[0.0; 21]),
            Err(Error::EnumerationLimit { n: 21, limit: 20 })
        ));
    }

    #[test]
    fn permutation_converges_and_is_seeded() {
        let f = FnPredictor::new(5, 2, toy);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bg = random(&mut rng, 5, 5);
        let x = [1.0, 0.5, -1.5, 0.0, 0.7];
        let cv = CoalitionValueFn::new(&f, bg, 1).unwrap();
        let exact = exact_shapley(&cv, &x).unwrap();
        let mae = |n| {
            let opts = PermutationOptions {
                n_permutations: n,
                seed: 4,
                antithetic: false,
            };
            let est = permutation_shapley(&cv, &x, opts).unwrap();
            assert!((est.phi.iter().sum::<f64>() - (exact.fx - exact.base_value)).abs() < 1e-12);
            est.phi.iter().zip(&exact.phi).map(|(a, b)| (a - b).abs()).sum::<f64>() / 5.0
        };
        assert!(mae(4000) < 0.01);
        let opts = PermutationOptions {
            n_permutations: 10,
            seed: 5,
            antithetic: true,
        };
        let a = permutation_shapley(&cv, &x, opts).unwrap();
        assert_eq!(a, permutation_shapley(&cv, &x, opts).unwrap());
        assert_eq!(a.n_samples, Some(10));
    }

    #[test]
    fn antithetic_pairs_balance_two_symmetric_players() {
        let f = FnPredictor::new(2, 1, |x: &[f64]| vec![(x[0] * x[1]).exp() + x[0] + x[1]]);
        let bg = tensor(&[&[0.1, 0.5], &[0.5, 0.1]]);
        let cv = CoalitionValueFn::new(&f, bg, 0).unwrap();
        let opts = PermutationOptions {
            n_permutations: 1,
            seed: 6,
            antithetic: true,
        };
        let res = permutation_shapley(&cv, &[0.7, 0.7], opts).unwrap();
        assert_eq!(res.n_samples, Some(2));
        assert!((res.phi[0] - res.phi[1]).abs() < 1e-15);
    }

    #[test]
    fn explain_dataset_products() {
        let f = FnPredictor::new(5, 2, toy);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bg = random(&mut rng, 4, 5);
        let xs = random(&mut rng, 6, 5);
        let e = explain_dataset(&f, &xs, &bg, &[0, 1], MethodConfig::Exact { limit: 20 }).unwrap();
        for (pos, rank) in e.ranking.iter().enumerate() {
            assert!((rank.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for r in 0..6 {
                let res = e.result(pos, r);
                assert!((res.phi.iter().sum::<f64>() - (res.fx - res.base_value)).abs() < 1e-9);
            }
        }
        let flat = FnPredictor::new(3, 1, |_: &[f64]| vec![0.4]);
        let e = explain_dataset(&flat, &Tensor::zeros(2, 3), &Tensor::filled(2, 3, 1.0), &[0], MethodConfig::Exact { limit: 20 }).unwrap();
        assert!(e.phi[0].iter().flatten().all(|&p| p == 0.0));
        assert!(e.ranking[0].iter().all(|&p| p == 0.0));
        assert!(explain_dataset(&flat, &Tensor::zeros(0, 3), &Tensor::zeros(1, 3), &[0], MethodConfig::Exact { limit: 20 }).is_err());

        let opts = MethodConfig::Permutation(PermutationOptions {
            n_permutations: 8,
            seed: 1,
            antithetic: false,
        });
        let a = explain_dataset(&f, &xs, &bg, &[1], opts).unwrap();
        assert_eq!(a, explain_dataset(&f, &xs, &bg, &[1], opts).unwrap());
    }

    #[test]
    fn force_data_ordering() {
        let res = AttributionResult {
            phi: vec![0.1, -0.5, 0.0, 0.3],
            base_value: 0.2,
            fx: 0.1,
            method: Method::Exact,
            n_samples: None,
        };
        let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let fd = force_data(&res, &names, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let order: Vec<&str> = fd.contributions.iter().map(|c| c.feature.as_str()).collect();
        assert_eq!(order, ["b", "d", "a"]);
        assert!((fd.base_value + fd.contributions.iter().map(|c| c.phi).sum::<f64>() - fd.fx).abs() < 1e-12);
        assert!(force_data(&res, &names[..3], &[1.0, 2.0, 3.0]).is_err());

        let zero = AttributionResult {
            phi: vec![0.0; 4],
            fx: 0.2,
            ..res
        };
        let fd = force_data(&zero, &names, &[0.0; 4]).unwrap();
        assert!(fd.contributions.is_empty());
        assert_eq!(fd.fx, fd.base_value);
    }

    #[test]
    fn base_value_is_the_background_rate() {
        // Binary head that fires exactly when the indicator column is set.
        let f = FnPredictor::new(2, 1, |x: &[f64]| vec![x[0]]);
        let rows: Vec<[f64; 2]> = (0..200).map(|i| [f64::from(i < 35), 0.0]).collect();
        let bg = Tensor::from_rows(&rows).unwrap();
        let cv = CoalitionValueFn::new(&f, bg, 0).unwrap();
        let res = exact_shapley(&cv, &[1.0, 0.0]).unwrap();
        assert!((0.15..=0.20).contains(&res.base_value));
        assert!((res.base_value - 0.175).abs() < 1e-12);
    }

    #[test]
    fn export_formats() {
        let f = FnPredictor::new(2, 2, |x: &[f64]| vec![x[0], x[1]]);
        let xs = tensor(&[&[1.0, 2.0]]);
        let e = explain_dataset(&f, &xs, &Tensor::zeros(1, 2), &[1], MethodConfig::Exact { limit: 20 }).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let classes = vec!["neg".to_string(), "pos".to_string()];
        let mut buf = Vec::new();
        write_attributions_csv(&e, &[7], &classes, &names, &xs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "instance,class,feature,value,phi\n7,pos,a,1,0\n7,pos,b,2,2\n");
        let json: serde_json::Value = serde_json::from_str(&attributions_json(&e, &[7], &classes, &names).unwrap()).unwrap();
        assert_eq!(json["classes"][0]["class"], "pos");
        assert_eq!(json["classes"][0]["ranking"][1], 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn efficiency_symmetry_linearity(seed in any::<u64>(), n in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w2 = w.clone();
            let f = FnPredictor::new(n, 1, move |x: &[f64]| {
                let s: f64 = x.iter().zip(&w2).map(|(a, b)| a * b).sum();
                vec![s.tanh() + x[0] * x[n - 1]]
            });
            let g = FnPredictor::new(n, 1, |x: &[f64]| vec![x.iter().map(|v| v * v).sum::<f64>().sqrt()]);
            let w3 = w.clone();
            let fg = FnPredictor::new(n, 1, move |x: &[f64]| {
                let s: f64 = x.iter().zip(&w3).map(|(a, b)| a * b).sum();
                vec![s.tanh() + x[0] * x[n - 1] + x.iter().map(|v| v * v).sum::<f64>().sqrt()]
            });
            let bg = random(&mut rng, 3, n);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let pf = exact_shapley(&CoalitionValueFn::new(&f, bg.clone(), 0).unwrap(), &x).unwrap();
            let pg = exact_shapley(&CoalitionValueFn::new(&g, bg.clone(), 0).unwrap(), &x).unwrap();
            let pfg = exact_shapley(&CoalitionValueFn::new(&fg, bg.clone(), 0).unwrap(), &x).unwrap();
            prop_assert!((pf.phi.iter().sum::<f64>() - (pf.fx - pf.base_value)).abs() < 1e-6);
            for i in 0..n {
                prop_assert!((pfg.phi[i] - pf.phi[i] - pg.phi[i]).abs() < 1e-9);
            }
            // Swapping two columns everywhere swaps their attributions for a symmetric game.
            if n >= 2 {
                let mut xs = x.clone();
                xs.swap(0, 1);
                let mut bs = bg.clone();
                for r in 0..bs.rows() {
                    bs.row_mut(r).swap(0, 1);
                }
                let a = exact_shapley(&CoalitionValueFn::new(&g, bg, 0).unwrap(), &x).unwrap();
                let b = exact_shapley(&CoalitionValueFn::new(&g, bs, 0).unwrap(), &xs).unwrap();
                prop_assert!((a.phi[0] - b.phi[1]).abs() < 1e-12);
                prop_assert!((a.phi[1] - b.phi[0]).abs() < 1e-12);
            }
        }
    }
}
