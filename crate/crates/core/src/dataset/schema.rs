use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// How one column's text labels become numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    /// `positive` → 1, `negative` → 0.
    Binary { positive: String, negative: String },
    /// Labels coded 1..=k in the listed order.
    Ordinal { labels: Vec<String> },
    /// Parsed as a finite number.
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

/// Severity labels in class-index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetColumn {
    pub name: String,
    pub labels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<Column>,
    pub target: TargetColumn,
    /// Optional column holding stable integer row identifiers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
}

impl Column {
    pub fn binary(name: &str, positive: &str, negative: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Binary {
                positive: positive.to_string(),
                negative: negative.to_string(),
            },
        }
    }

    pub fn yes_no(name: &str) -> Self {
        Self::binary(name, "Yes", "No")
    }

    pub fn ordinal(name: &str, labels: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Ordinal {
                labels: labels.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    pub fn continuous(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::Continuous,
        }
    }

    pub fn is_categorical(&self) -> bool {
        !matches!(self.kind, ColumnKind::Continuous)
    }

    /// Smallest and largest valid code of a categorical column.
    pub fn code_range(&self) -> Option<(f64, f64)> {
        match &self.kind {
            ColumnKind::Binary { .. } => Some((0.0, 1.0)),
            ColumnKind::Ordinal { labels } => Some((1.0, labels.len() as f64)),
            ColumnKind::Continuous => None,
        }
    }

    /// Text label → numeric code. `None` for an unknown label or a non-numeric continuous value.
    pub fn encode(&self, label: &str) -> Option<f64> {
        let label = label.trim();
        match &self.kind {
            ColumnKind::Binary { positive, negative } => {
                if label == positive {
                    Some(1.0)
                } else if label == negative {
                    Some(0.0)
                } else {
                    None
                }
            }
            ColumnKind::Ordinal { labels } => labels
                .iter()
                .position(|l| l == label)
                .map(|i| (i + 1) as f64),
            ColumnKind::Continuous => label.parse::<f64>().ok().filter(|v| v.is_finite()),
        }
    }

    /// Numeric code → text label.
    pub fn decode(&self, code: f64) -> Option<String> {
        match &self.kind {
            ColumnKind::Binary { positive, negative } => {
                if code == 1.0 {
                    Some(positive.clone())
                } else if code == 0.0 {
                    Some(negative.clone())
                } else {
                    None
                }
            }
            ColumnKind::Ordinal { labels } => {
                if code.fract() != 0.0 || code < 1.0 {
                    return None;
                }
                labels.get(code as usize - 1).cloned()
            }
            ColumnKind::Continuous => code.is_finite().then(|| format!("{code}")),
        }
    }

    /// Whether `code` is a value this column can hold.
    pub fn conforms(&self, code: f64) -> bool {
        match &self.kind {
            ColumnKind::Continuous => code.is_finite(),
            _ => self.decode(code).is_some(),
        }
    }

    /// Clamp and round to the nearest valid code; continuous values pass through.
    pub fn snap(&self, value: f64) -> f64 {
        match self.code_range() {
            Some((lo, hi)) => value.round().clamp(lo, hi),
            None => value,
        }
    }
}

impl TargetColumn {
    pub fn class_of(&self, label: &str) -> Option<usize> {
        let label = label.trim();
        self.labels.iter().position(|l| l == label)
    }
}

impl Schema {
    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn n_classes(&self) -> usize {
        self.target.labels.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn class_names(&self) -> &[String] {
        &self.target.labels
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::Schema("schema has no feature columns".into()));
        }
        let mut names = HashSet::new();
        for c in &self.columns {
            if c.name.trim().is_empty() {
                return Err(Error::Schema("empty column name".into()));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column '{}'", c.name)));
            }
            match &c.kind {
                ColumnKind::Binary { positive, negative } if positive == negative => {
                    return Err(Error::Schema(format!(
                        "column '{}' maps one label to both codes",
                        c.name
                    )));
                }
                ColumnKind::Ordinal { labels } => {
                    if labels.is_empty() {
                        return Err(Error::Schema(format!("column '{}' has no labels", c.name)));
                    }
                    unique(labels, &c.name)?;
                }
                _ => {}
            }
        }
        for special in std::iter::once(&self.target.name).chain(self.id_column.as_ref()) {
            if !names.insert(special.as_str()) {
                return Err(Error::Schema(format!("column '{special}' is declared twice")));
            }
        }
        if self.target.labels.len() < 2 {
            return Err(Error::Schema("target needs at least two classes".into()));
        }
        unique(&self.target.labels, &self.target.name)
    }

    /// All-continuous schema, handy for synthetic data.
    pub fn numeric(feature_names: &[&str], class_labels: &[&str]) -> Self {
        Self {
            columns: feature_names.iter().map(|n| Column::continuous(n)).collect(),
            target: TargetColumn {
                name: "class".into(),
                labels: class_labels.iter().map(|s| s.to_string()).collect(),
            },
            id_column: None,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("schema serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn unique(labels: &[String], column: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(Error::Schema(format!(
                "column '{column}' repeats label '{l}'"
            )));
        }
    }
    Ok(())
}

/// Severity classes in index order: fatal = 0 … no injury / PDO = 4.
pub const SEVERITY_LABELS: [&str; 5] = [
    "Fatal",
    "Serious injury",
    "Minor injury",
    "Possible injury",
    "No injury/PDO",
];

/// The pedestrian-crash schema: binary indicators as Yes = 1 / No = 0, Male = 1,
/// Rural = 1, other categories coded from 1 in their listed order, age continuous.
pub fn default_schema() -> Schema {
    Schema {
        columns: vec![
            Column::binary("sex", "Male", "Female"),
            Column::continuous("age"),
            Column::yes_no("aggressive_driving"),
            Column::ordinal(
                "alcohol_drug_test_result",
                &[
                    "Both-Positive",
                    "Drug-Positive",
                    "Alcohol-Positive",
                    "Negative",
                    "Not related",
                ],
            ),
            Column::yes_no("dui"),
            Column::yes_no("distracted_driving"),
            Column::yes_no("drowsy_driving"),
            Column::yes_no("older_driver_involved"),
            Column::yes_no("teenage_driver_involved"),
            Column::yes_no("holiday"),
            Column::yes_no("right_turn_involved"),
            Column::yes_no("intersection_involved"),
            Column::yes_no("left_turn_involved"),
            Column::yes_no("overturn_rollover"),
            Column::yes_no("domestic_animal_involved"),
            Column::yes_no("commercial_vehicle_involved"),
            Column::yes_no("heavy_truck_involved"),
            Column::yes_no("transit_vehicle_involved"),
            Column::yes_no("work_zone_involved"),
            Column::yes_no("wrong_way_driving"),
            Column::binary("road_type", "Rural", "Urban"),
            Column::ordinal("functional_class", &["Local", "Collector", "Arterial"]),
            Column::yes_no("roadway_surface_dry"),
            Column::ordinal(
                "lighting_condition",
                &["Dark-Not lighted", "Dark-Lighted", "Daylight", "Dusk", "Dawn"],
            ),
            Column::ordinal(
                "weather_condition",
                &["Clear", "Cloudy", "Rain", "Fog, Smog", "Snowing", "Others"],
            ),
            Column::ordinal("vertical_alignment", &["Level", "Uphill", "Downhill", "Others"]),
        ],
        target: TargetColumn {
            name: "crash_severity".to_string(),
            labels: SEVERITY_LABELS.iter().map(|s| s.to_string()).collect(),
        },
        id_column: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_encodings() {
        let s = default_schema();
        s.validate().unwrap();
        let col = |n: &str| s.column(n).unwrap();
        assert_eq!(col("aggressive_driving").encode("Yes"), Some(1.0));
        assert_eq!(col("aggressive_driving").encode("No"), Some(0.0));
        assert_eq!(col("road_type").encode("Rural"), Some(1.0));
        assert_eq!(col("sex").encode("Male"), Some(1.0));
        assert_eq!(col("lighting_condition").encode("Daylight"), Some(3.0));
        assert_eq!(col("alcohol_drug_test_result").encode("Not related"), Some(5.0));
        assert_eq!(col("age").encode(" 42.5 "), Some(42.5));
        assert_eq!(col("dui").encode("Maybe"), None);
        assert_eq!(col("age").encode("NaN"), None);
        assert_eq!(s.target.class_of("Fatal"), Some(0));
        assert_eq!(s.target.class_of("No injury/PDO"), Some(4));
    }

    #[test]
    fn decode_inverts_encode() {
        for c in &default_schema().columns {
            if let ColumnKind::Ordinal { labels } = &c.kind {
                for l in labels {
                    assert_eq!(c.decode(c.encode(l).unwrap()).as_deref(), Some(l.as_str()));
                }
            }
            if let ColumnKind::Binary { positive, negative } = &c.kind {
                assert_ne!(c.encode(positive), c.encode(negative));
                assert_eq!(c.decode(c.encode(negative).unwrap()).as_deref(), Some(negative.as_str()));
            }
        }
    }

    #[test]
    fn snap_rounds_into_range() {
        let s = default_schema();
        let light = s.column("lighting_condition").unwrap();
        assert_eq!(light.snap(2.4), 2.0);
        assert_eq!(light.snap(7.0), 5.0);
        assert_eq!(light.snap(-1.0), 1.0);
        assert_eq!(s.column("dui").unwrap().snap(0.5), 1.0);
        assert_eq!(s.column("age").unwrap().snap(33.3), 33.3);
    }

    #[test]
    fn validation_rejects_duplicates() {
        let mut s = default_schema();
        s.columns.push(Column::yes_no("dui"));
        assert!(s.validate().is_err());

        let mut s = default_schema();
        s.columns[3] = Column::ordinal("x", &["a", "a"]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = default_schema();
        assert_eq!(a.hash(), default_schema().hash());
        let mut b = default_schema();
        b.columns.swap(0, 1);
        assert_ne!(a.hash(), b.hash());
        let round = Schema::from_json(&a.to_json_pretty()).unwrap();
        assert_eq!(round, a);
    }
}
