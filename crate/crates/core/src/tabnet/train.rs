use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{TabNetConfig, TabNetModel};
use crate::dataset::EncodedDataset;
use crate::diffgraph::{Mode, Tensor};
use crate::rng::{rng_for, Stream};
use crate::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Row-weighted mean of `CE + lambda_sparse · sparsity` over the epoch's batches.
    pub train_loss: f64,
    /// Inference-mode cross-entropy on the validation rows.
    pub valid_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stopping_epoch: usize,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub ensemble_members: usize,
    /// Largest absolute gradient entry actually applied after clipping.
    pub max_applied_grad: f64,
    pub train_rows: usize,
    pub train_class_counts: Vec<usize>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &TabNetModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Clips each gradient entry to `[-clip, clip]`, then takes one Adam step.
    /// Returns the largest absolute applied gradient.
    fn step(&mut self, model: &mut TabNetModel, grads: &mut [Vec<f64>], lr: f64, clip: f64) -> f64 {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        let mut max_applied: f64 = 0.0;
        for (k, param) in model.params_mut().iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &mut grads[k]);
            for (i, w) in param.tensor.data_mut().iter_mut().enumerate() {
                let gi = g[i].clamp(-clip, clip);
                g[i] = gi;
                max_applied = max_applied.max(gi.abs());
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + ADAM_EPSILON);
            }
        }
        max_applied
    }
}

/// Shuffled batches of row indices; a trailing batch of one row is folded into its
/// predecessor so batch statistics are never taken over a single row.
fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, Stream::Shuffle, epoch as u64));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().expect("nonempty");
        batches.last_mut().expect("nonempty").extend(last);
    }
    batches
}

fn check_compatible(config: &TabNetConfig, train: &EncodedDataset, valid: &EncodedDataset) -> Result<()> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if train.schema() != valid.schema() {
        return Err(Error::SchemaMismatch {
            expected: train.schema().hash(),
            found: valid.schema().hash(),
        });
    }
    if train.n_classes() != config.n_classes {
        return Err(Error::Config(format!(
            "config has {} classes, data has {}",
            config.n_classes,
            train.n_classes()
        )));
    }
    Ok(())
}

/// Trains one model by Adam with elementwise gradient clipping and early stopping on
/// validation cross-entropy. Returns the parameters of the best validation epoch.
///
/// Training stops once `patience` consecutive epochs fail to improve on the best
/// validation loss. An empty validation set falls back to the training rows.
pub fn train(config: &TabNetConfig, train_set: &EncodedDataset, valid_set: &EncodedDataset) -> Result<(TabNetModel, TrainReport)> {
    check_compatible(config, train_set, valid_set)?;
    let valid = if valid_set.is_empty() { train_set } else { valid_set };
    let mut model = TabNetModel::new(config, train_set.n_features())?;
    let mut adam = Adam::new(&model);
    let x = train_set.features();
    let y = train_set.targets();

    let mut epochs = Vec::new();
    let mut best: Option<(TabNetModel, usize, f64)> = None;
    let mut wait = 0;
    let mut max_applied_grad: f64 = 0.0;

    for epoch in 1..=config.max_epochs {
        let mut loss_sum = 0.0;
        for batch in epoch_batches(x.rows(), config.batch_size, config.seed, epoch) {
            let xb = x.select_rows(&batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let (loss, mut grads, bn) = match model.loss_and_gradients(&xb, &yb, Mode::Train) {
                Err(Error::NonFinite(_)) => return Err(Error::Divergence { epoch, loss: f64::NAN }),
                other => other?,
            };
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, loss });
            }
            model.set_bn_states(bn);
            let applied = adam.step(&mut model, &mut grads, config.learning_rate, config.clip_value);
            max_applied_grad = max_applied_grad.max(applied);
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / x.rows() as f64;
        let valid_loss = match model.cross_entropy(valid.features(), valid.targets()) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => return Err(Error::Divergence { epoch, loss: v }),
            Err(Error::NonFinite(_)) => return Err(Error::Divergence { epoch, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
        });
        if best.as_ref().is_none_or(|(_, _, b)| valid_loss < *b) {
            best = Some((model.clone(), epoch, valid_loss));
            wait = 0;
        } else {
            wait += 1;
            if wait > config.patience {
                break;
            }
        }
    }

    let (best_model, best_epoch, best_valid_loss) = best.expect("max_epochs >= 1");
    let report = TrainReport {
        stopping_epoch: epochs.len(),
        epochs,
        best_epoch,
        best_valid_loss,
        ensemble_members: 1,
        max_applied_grad,
        train_rows: train_set.len(),
        train_class_counts: train_set.class_counts(),
    };
    Ok((best_model, report))
}

/// Models whose class probabilities are averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    members: Vec<TabNetModel>,
}

impl Ensemble {
    pub fn new(members: Vec<TabNetModel>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Contract("an ensemble needs at least one member".into()))?;
        let (d, c) = (first.n_features(), first.config().n_classes);
        if members.iter().any(|m| m.n_features() != d || m.config().n_classes != c) {
            return Err(Error::Contract("ensemble members disagree on shape".into()));
        }
        Ok(Self { members })
    }

    pub fn single(model: TabNetModel) -> Self {
        Self { members: vec![model] }
    }

    pub fn members(&self) -> &[TabNetModel] {
        &self.members
    }

    pub fn n_features(&self) -> usize {
        self.members[0].n_features()
    }

    pub fn n_classes(&self) -> usize {
        self.members[0].config().n_classes
    }

    pub fn config(&self) -> &TabNetConfig {
        self.members[0].config()
    }

    /// Mean of member probabilities.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        let mut acc = self.members[0].predict_proba(x)?;
        for m in &self.members[1..] {
            let p = m.predict_proba(x)?;
            for (a, b) in acc.data_mut().iter_mut().zip(p.data()) {
                *a += b;
            }
        }
        let k = self.members.len() as f64;
        for a in acc.data_mut() {
            *a /= k;
        }
        Ok(acc)
    }

    /// Mean of member logits.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut acc = self.members[0].logits(x)?;
        for m in &self.members[1..] {
            let p = m.logits(x)?;
            for (a, b) in acc.data_mut().iter_mut().zip(p.data()) {
                *a += b;
            }
        }
        let k = self.members.len() as f64;
        for a in acc.data_mut() {
            *a /= k;
        }
        Ok(acc)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.predict_proba(x)?.argmax_rows())
    }

    /// Mean over members of their normalised mask importances.
    pub fn global_mask_importance(&self, x: &Tensor) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.n_features()];
        for m in &self.members {
            for (a, v) in acc.iter_mut().zip(m.global_mask_importance(x)?) {
                *a += v;
            }
        }
        let k = self.members.len() as f64;
        Ok(acc.into_iter().map(|a| a / k).collect())
    }
}

/// Trains member `i` on `train_set.subset(&resamples[i])` with seed `config.seed + i`.
/// Members train in parallel; results are joined in member order.
pub fn train_on_resamples(
    config: &TabNetConfig,
    train_set: &EncodedDataset,
    valid_set: &EncodedDataset,
    resamples: &[Vec<usize>],
) -> Result<(Ensemble, Vec<TrainReport>)> {
    if resamples.is_empty() {
        return Err(Error::Contract("n_members must be at least 1".into()));
    }
    if resamples.iter().flatten().any(|&i| i >= train_set.len()) {
        return Err(Error::Contract("resample index out of range".into()));
    }
    let results: Vec<Result<(TabNetModel, TrainReport)>> = resamples
        .par_iter()
        .enumerate()
        .map(|(i, rows)| {
            let mut cfg = config.clone();
            cfg.seed = config.seed.wrapping_add(i as u64);
            train(&cfg, &train_set.subset(rows), valid_set)
        })
        .collect();
    let n = resamples.len();
    let mut members = Vec::with_capacity(n);
    let mut reports = Vec::with_capacity(n);
    for r in results {
        let (m, mut rep) = r?;
        rep.ensemble_members = n;
        members.push(m);
        reports.push(rep);
    }
    Ok((Ensemble::new(members)?, reports))
}

/// With-replacement resamples of the training rows, one per member.
pub fn bootstrap_resamples(n_rows: usize, n_members: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..n_members)
        .map(|i| {
            let mut rng = rng_for(seed, Stream::Bootstrap, i as u64);
            (0..n_rows).map(|_| rng.random_range(0..n_rows)).collect()
        })
        .collect()
}

/// Bootstrap ensemble: each member sees a same-size with-replacement resample.
pub fn train_bootstrap(
    config: &TabNetConfig,
    train_set: &EncodedDataset,
    valid_set: &EncodedDataset,
    n_members: usize,
) -> Result<(Ensemble, Vec<TrainReport>)> {
    if n_members == 0 {
        return Err(Error::Contract("n_members must be at least 1".into()));
    }
    let resamples = bootstrap_resamples(train_set.len(), n_members, config.seed);
    train_on_resamples(config, train_set, valid_set, &resamples)
}
