use serde::{Deserialize, Serialize};

use super::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const DEFAULT_BN_MOMENTUM: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Infer,
}

/// Running statistics of one batch-norm layer.
///
/// `momentum` weights the new batch statistic:
/// `running ← (1 − momentum)·running + momentum·batch`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    initialized: bool,
}

impl BatchNormState {
    pub fn new(width: usize, momentum: f64) -> Self {
        Self {
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            momentum,
            epsilon: BN_EPSILON,
            initialized: false,
        }
    }

    pub fn width(&self) -> usize {
        self.running_mean.len()
    }

    /// True once at least one training batch has been seen.
    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn update(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        let m = self.momentum;
        for (r, b) in self.running_mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(batch_var) {
            *r = ((1.0 - m) * *r + m * b).max(0.0);
        }
        self.initialized = true;
    }
}

/// Per-column mean and biased variance.
pub(super) fn column_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = x.shape();
    let n = rows as f64;
    let mut mean = vec![0.0; cols];
    for r in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; cols];
    for r in x.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in &mut var {
        *s /= n;
    }
    (mean, var)
}
