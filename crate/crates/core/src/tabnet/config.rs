use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffgraph::Projection;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskType {
    Entmax,
    Sparsemax,
}

impl FromStr for MaskType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entmax" => Ok(MaskType::Entmax),
            "sparsemax" => Ok(MaskType::Sparsemax),
            other => Err(Error::Config(format!("unknown mask type '{other}'"))),
        }
    }
}

impl std::fmt::Display for MaskType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskType::Entmax => "entmax",
            MaskType::Sparsemax => "sparsemax",
        })
    }
}

/// Hyperparameters of the attentive classifier and its trainer.
///
/// Architecture and optimiser defaults are the tuned values reported for the
/// pedestrian-crash model; batch size, epoch budget and patience are local choices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabNetConfig {
    /// Width of the decision (prediction) layer.
    pub n_d: usize,
    /// Width of the attention layer.
    pub n_a: usize,
    pub n_steps: usize,
    /// Coefficient of the mask-entropy penalty.
    pub lambda_sparse: f64,
    /// Prior relaxation: `P ← P ⊙ (gamma − M)`.
    pub gamma: f64,
    pub n_independent: usize,
    pub n_shared: usize,
    pub bn_momentum: f64,
    /// Elementwise bound on every applied gradient.
    pub clip_value: f64,
    pub learning_rate: f64,
    pub mask_type: MaskType,
    /// α used when `mask_type` is entmax.
    pub entmax_alpha: f64,
    pub n_classes: usize,
    pub seed: u64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
}

impl Default for TabNetConfig {
    fn default() -> Self {
        Self {
            n_d: 53,
            n_a: 58,
            n_steps: 1,
            lambda_sparse: 0.023989318,
            gamma: 1.952667709,
            n_independent: 8,
            n_shared: 6,
            bn_momentum: 0.3,
            clip_value: 2.0,
            learning_rate: 0.007566832,
            mask_type: MaskType::Entmax,
            entmax_alpha: 1.5,
            n_classes: 5,
            seed: 0,
            max_epochs: 500,
            batch_size: 256,
            patience: 20,
        }
    }
}

/// Field names accepted in key=value config text, in output order.
pub const CONFIG_KEYS: [&str; 17] = [
    "n_d",
    "n_a",
    "n_steps",
    "lambda_sparse",
    "gamma",
    "n_independent",
    "n_shared",
    "bn_momentum",
    "clip_value",
    "learning_rate",
    "mask_type",
    "entmax_alpha",
    "n_classes",
    "seed",
    "max_epochs",
    "batch_size",
    "patience",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

impl TabNetConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_d", self.n_d),
            ("n_a", self.n_a),
            ("n_steps", self.n_steps),
            ("n_independent", self.n_independent),
            ("n_shared", self.n_shared),
            ("n_classes", self.n_classes),
            ("max_epochs", self.max_epochs),
            ("batch_size", self.batch_size),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if !(self.lambda_sparse >= 0.0 && self.lambda_sparse.is_finite()) {
            return Err(Error::Config("lambda_sparse must be >= 0".into()));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::Config("gamma must be >= 1".into()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::Config("bn_momentum must lie in (0, 1]".into()));
        }
        if !(self.clip_value > 0.0) {
            return Err(Error::Config("clip_value must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(1.0..=2.0).contains(&self.entmax_alpha) {
            return Err(Error::Config("entmax_alpha must lie in [1, 2]".into()));
        }
        Ok(())
    }

    pub fn projection(&self) -> Projection {
        match self.mask_type {
            MaskType::Entmax => Projection::Entmax(self.entmax_alpha),
            MaskType::Sparsemax => Projection::Sparsemax,
        }
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "n_d" => self.n_d = parse(key, value)?,
            "n_a" => self.n_a = parse(key, value)?,
            "n_steps" => self.n_steps = parse(key, value)?,
            "lambda_sparse" => self.lambda_sparse = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "n_independent" => self.n_independent = parse(key, value)?,
            "n_shared" => self.n_shared = parse(key, value)?,
            "bn_momentum" => self.bn_momentum = parse(key, value)?,
            "clip_value" => self.clip_value = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "mask_type" => self.mask_type = value.parse()?,
            "entmax_alpha" => self.entmax_alpha = parse(key, value)?,
            "n_classes" => self.n_classes = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "n_d" => self.n_d.to_string(),
            "n_a" => self.n_a.to_string(),
            "n_steps" => self.n_steps.to_string(),
            "lambda_sparse" => self.lambda_sparse.to_string(),
            "gamma" => self.gamma.to_string(),
            "n_independent" => self.n_independent.to_string(),
            "n_shared" => self.n_shared.to_string(),
            "bn_momentum" => self.bn_momentum.to_string(),
            "clip_value" => self.clip_value.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "mask_type" => self.mask_type.to_string(),
            "entmax_alpha" => self.entmax_alpha.to_string(),
            "n_classes" => self.n_classes.to_string(),
            "seed" => self.seed.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "patience" => self.patience.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn merge_kv(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                    other => other,
                })?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.merge_kv(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for k in CONFIG_KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("known key"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_tuned_values() {
        let c = TabNetConfig::default();
        assert_eq!((c.n_d, c.n_a, c.n_steps), (53, 58, 1));
        assert_eq!(c.lambda_sparse, 0.023989318);
        assert_eq!(c.gamma, 1.952667709);
        assert_eq!((c.n_independent, c.n_shared), (8, 6));
        assert_eq!(c.bn_momentum, 0.3);
        assert_eq!(c.clip_value, 2.0);
        assert_eq!(c.learning_rate, 0.007566832);
        assert_eq!(c.mask_type, MaskType::Entmax);
        c.validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let mut c = TabNetConfig::default();
        c.n_d = 16;
        c.mask_type = MaskType::Sparsemax;
        c.learning_rate = 0.1 + 0.2;
        let back = TabNetConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn kv_errors() {
        assert!(TabNetConfig::from_kv("n_d = abc").is_err());
        assert!(TabNetConfig::from_kv("bogus = 1").is_err());
        assert!(TabNetConfig::from_kv("n_d 3").is_err());
        assert!(TabNetConfig::from_kv("gamma = 0.5").is_err());
        let c = TabNetConfig::from_kv("# comment\n n_a = 4 # trailing\n\n").unwrap();
        assert_eq!(c.n_a, 4);
    }
}
