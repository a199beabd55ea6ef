//! Confusion matrices and one-vs-rest precision, recall and F1.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Counts indexed `[true class][predicted class]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(n_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|c| self.counts[c][c]).sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.counts[class][class]
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum::<u64>() - self.counts[class][class]
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        self.counts[class].iter().sum::<u64>() - self.counts[class][class]
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Contract(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(n_classes);
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if t >= n_classes || p >= n_classes {
            return Err(Error::Contract(format!(
                "row {i}: label pair ({t}, {p}) outside {n_classes} classes"
            )));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

/// Precision, recall and F1 counts of a single class. Any 0/0 is reported as 0.
pub fn metrics_from_counts(tp: u64, fp: u64, fn_: u64) -> ClassMetrics {
    let precision = ratio(tp as f64, (tp + fp) as f64);
    let recall = ratio(tp as f64, (tp + fn_) as f64);
    ClassMetrics {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

pub fn class_metrics(cm: &ConfusionMatrix, class: usize) -> Result<ClassMetrics> {
    if class >= cm.n_classes() {
        return Err(Error::Contract(format!(
            "class {class} outside {} classes",
            cm.n_classes()
        )));
    }
    Ok(metrics_from_counts(
        cm.true_positives(class),
        cm.false_positives(class),
        cm.false_negatives(class),
    ))
}

/// Correct over total.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Contract("accuracy of an empty confusion matrix".into()));
    }
    Ok(cm.trace() as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub classes: Vec<ClassRow>,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Per-class metrics plus accuracy; `class_names` fixes the row order and class count.
pub fn report(y_true: &[usize], y_pred: &[usize], class_names: &[String]) -> Result<EvaluationReport> {
    let cm = confusion(y_true, y_pred, class_names.len())?;
    let classes = class_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            Ok(ClassRow {
                class: name.clone(),
                metrics: class_metrics(&cm, c)?,
                support: cm.counts[c].iter().sum(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        classes,
        accuracy: accuracy(&cm)?,
        confusion: cm,
    })
}

impl EvaluationReport {
    /// Plain-text table: one row per class with precision, recall and F1 score to three
    /// decimals, then an accuracy line.
    pub fn to_text(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|r| r.class.len())
            .chain(["Accuracy".len(), "Class".len()])
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>9}", "Class", "Precision", "Recall", "F1 score");
        for r in &self.classes {
            let m = r.metrics;
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.3}  {:>9.3}  {:>9.3}",
                r.class, m.precision, m.recall, m.f1
            );
        }
        let _ = writeln!(out, "{:<width$}  {:>9.3}", "Accuracy", self.accuracy);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
