//! Schema-driven ingestion of crash records.

mod fixture;
mod schema;

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::Serialize;

pub use fixture::{synthesize_fixture, FixtureSpec, CRASH_CLASS_MIX};
pub use schema::{default_schema, Column, ColumnKind, Schema, TargetColumn, SEVERITY_LABELS};

use crate::diffgraph::Tensor;
use crate::{Error, Result};

/// Row ids at or above this value mark synthetic rows.
pub const SYNTHETIC_ID_BASE: u64 = 1 << 63;

/// Numeric features, class targets and stable row ids under one schema.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDataset {
    features: Tensor,
    targets: Vec<usize>,
    schema: Schema,
    row_ids: Vec<u64>,
}

impl EncodedDataset {
    /// Builds a dataset, checking every value against its column kind.
    pub fn new(features: Tensor, targets: Vec<usize>, schema: Schema, row_ids: Vec<u64>) -> Result<Self> {
        if features.cols() != schema.n_features() {
            return Err(Error::Shape(format!(
                "{} feature columns, schema declares {}",
                features.cols(),
                schema.n_features()
            )));
        }
        if targets.len() != features.rows() || row_ids.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} rows, {} targets, {} row ids",
                features.rows(),
                targets.len(),
                row_ids.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= schema.n_classes()) {
            return Err(Error::Contract(format!(
                "target {t} out of range for {} classes",
                schema.n_classes()
            )));
        }
        for (r, row) in features.iter_rows().enumerate() {
            for (c, &v) in schema.columns.iter().zip(row) {
                if !c.conforms(v) {
                    return Err(Error::Contract(format!(
                        "row {r}: value {v} is not valid for column '{}'",
                        c.name
                    )));
                }
            }
        }
        let mut seen = HashSet::with_capacity(row_ids.len());
        if let Some(dup) = row_ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Contract(format!("duplicate row id {dup}")));
        }
        Ok(Self {
            features,
            targets,
            schema,
            row_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.schema.n_classes()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn position_of(&self, row_id: u64) -> Option<usize> {
        self.row_ids.iter().position(|&id| id == row_id)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &t in &self.targets {
            counts[t] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            schema: self.schema.clone(),
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    /// Rows whose ids are listed, in the order given.
    pub fn select_ids(&self, ids: &[u64]) -> Result<Self> {
        let index: BTreeMap<u64, usize> = self.row_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let positions = ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Lookup(format!("row id {id} not present")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.subset(&positions))
    }

    /// Original text labels of row `r`, in schema column order.
    pub fn decode_row(&self, r: usize) -> Vec<String> {
        self.schema
            .columns
            .iter()
            .zip(self.features.row(r))
            .map(|(c, &v)| c.decode(v).unwrap_or_default())
            .collect()
    }
}

/// What to do with a row that fails to encode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RowErrorPolicy {
    #[default]
    Fail,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SkippedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct LoadedCsv {
    pub dataset: EncodedDataset,
    pub skipped: Vec<SkippedRow>,
    /// Header columns the schema does not mention.
    pub ignored_columns: Vec<String>,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<EncodedDataset> {
    Ok(load_csv_with(path, schema, RowErrorPolicy::Fail)?.dataset)
}

pub fn load_csv_with(path: impl AsRef<Path>, schema: &Schema, policy: RowErrorPolicy) -> Result<LoadedCsv> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, &path.display().to_string(), schema, policy)
}

/// Encodes CSV text. `source` names the input in error messages.
pub fn read_csv<R: Read>(reader: R, source: &str, schema: &Schema, policy: RowErrorPolicy) -> Result<LoadedCsv> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Data {
            path: source.to_string(),
            line: 1,
            column: name.to_string(),
            message: "column missing from header".into(),
        })
    };
    let feature_pos = schema
        .columns
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<Vec<_>>>()?;
    let target_pos = find(&schema.target.name)?;
    let id_pos = schema.id_column.as_deref().map(find).transpose()?;
    let known: HashSet<usize> = feature_pos
        .iter()
        .copied()
        .chain([target_pos])
        .chain(id_pos)
        .collect();
    let ignored_columns = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !known.contains(i))
        .map(|(_, h)| h.clone())
        .collect();

    let mut data = Vec::new();
    let mut targets = Vec::new();
    let mut row_ids = Vec::new();
    let mut skipped = Vec::new();
    let mut seen_ids = HashSet::new();

    for (record_index, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |column: &str, message: String| Error::Data {
            path: source.to_string(),
            line,
            column: column.to_string(),
            message,
        };
        let encoded: Result<(Vec<f64>, usize, u64)> = (|| {
            let cell = |pos: usize, name: &str| -> Result<&str> {
                let v = record.get(pos).map(str::trim).unwrap_or("");
                if v.is_empty() {
                    Err(err(name, "missing value".into()))
                } else {
                    Ok(v)
                }
            };
            let mut row = Vec::with_capacity(schema.n_features());
            for (c, &pos) in schema.columns.iter().zip(&feature_pos) {
                let raw = cell(pos, &c.name)?;
                let code = c.encode(raw).ok_or_else(|| err(&c.name, format!("unknown label '{raw}'")))?;
                row.push(code);
            }
            let raw = cell(target_pos, &schema.target.name)?;
            let class = schema
                .target
                .class_of(raw)
                .ok_or_else(|| err(&schema.target.name, format!("unknown label '{raw}'")))?;
            let id = match (id_pos, schema.id_column.as_deref()) {
                (Some(pos), Some(name)) => {
                    let raw = cell(pos, name)?;
                    let id: u64 = raw
                        .parse()
                        .map_err(|_| err(name, format!("row id '{raw}' is not a non-negative integer")))?;
                    if id >= SYNTHETIC_ID_BASE {
                        return Err(err(name, format!("row id {id} is reserved")));
                    }
                    id
                }
                _ => record_index as u64,
            };
            if !seen_ids.insert(id) {
                return Err(err(schema.id_column.as_deref().unwrap_or("row_id"), format!("duplicate row id {id}")));
            }
            Ok((row, class, id))
        })();
        match encoded {
            Ok((row, class, id)) => {
                data.extend(row);
                targets.push(class);
                row_ids.push(id);
            }
            Err(e) if policy == RowErrorPolicy::Skip => skipped.push(SkippedRow {
                line,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    let features = Tensor::new(targets.len(), schema.n_features(), data)?;
    Ok(LoadedCsv {
        dataset: EncodedDataset::new(features, targets, schema.clone(), row_ids)?,
        skipped,
        ignored_columns,
    })
}

/// Column holding row ids in encoded CSV files.
pub const ENCODED_ID_COLUMN: &str = "row_id";

/// Writes `row_id, <features…>, <target>` with numeric codes and class indices.
pub fn write_encoded_csv(data: &EncodedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_encoded(data, file)
}

pub fn write_encoded<W: std::io::Write>(data: &EncodedDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![ENCODED_ID_COLUMN.to_string()];
    header.extend(data.schema.feature_names());
    header.push(data.schema.target.name.clone());
    w.write_record(&header)?;
    for r in 0..data.len() {
        let mut rec = vec![data.row_ids[r].to_string()];
        rec.extend(data.features.row(r).iter().map(|v| format!("{v}")));
        rec.push(data.targets[r].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<encoded csv>", e))?;
    Ok(())
}

/// Reads a file produced by [`write_encoded_csv`].
pub fn load_encoded_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<EncodedDataset> {
    let path = path.as_ref();
    let source = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut expected = vec![ENCODED_ID_COLUMN.to_string()];
    expected.extend(schema.feature_names());
    expected.push(schema.target.name.clone());
    if headers != expected {
        return Err(Error::Data {
            path: source,
            line: 1,
            column: ENCODED_ID_COLUMN.into(),
            message: "header does not match the schema's encoded layout".into(),
        });
    }
    let mut data = Vec::new();
    let mut targets = Vec::new();
    let mut ids = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |column: &str, raw: &str| Error::Data {
            path: source.clone(),
            line,
            column: column.to_string(),
            message: format!("invalid encoded value '{raw}'"),
        };
        let id = &record[0];
        ids.push(id.trim().parse::<u64>().map_err(|_| bad(ENCODED_ID_COLUMN, id))?);
        for (j, c) in schema.columns.iter().enumerate() {
            let raw = &record[j + 1];
            let v: f64 = raw.trim().parse().map_err(|_| bad(&c.name, raw))?;
            if !c.conforms(v) {
                return Err(bad(&c.name, raw));
            }
            data.push(v);
        }
        let raw = &record[schema.n_features() + 1];
        let t: usize = raw.trim().parse().map_err(|_| bad(&schema.target.name, raw))?;
        if t >= schema.n_classes() {
            return Err(bad(&schema.target.name, raw));
        }
        targets.push(t);
    }
    let features = Tensor::new(targets.len(), schema.n_features(), data)?;
    EncodedDataset::new(features, targets, schema.clone(), ids)
}

/// Per-column summary written next to encoded data.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnStats {
    Categorical {
        name: String,
        histogram: BTreeMap<String, usize>,
    },
    Continuous {
        name: String,
        min: f64,
        max: f64,
        mean: f64,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct DatasetStats {
    pub rows: usize,
    pub class_counts: BTreeMap<String, usize>,
    pub columns: Vec<ColumnStats>,
}

pub fn dataset_stats(data: &EncodedDataset) -> DatasetStats {
    let counts = data.class_counts();
    let class_counts = data
        .schema
        .class_names()
        .iter()
        .cloned()
        .zip(counts)
        .collect();
    let columns = data
        .schema
        .columns
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let values = (0..data.len()).map(|r| data.features.get(r, j));
            if c.is_categorical() {
                let mut histogram = BTreeMap::new();
                for v in values {
                    *histogram.entry(c.decode(v).unwrap_or_default()).or_insert(0) += 1;
                }
                ColumnStats::Categorical {
                    name: c.name.clone(),
                    histogram,
                }
            } else {
                let vals: Vec<f64> = values.collect();
                let n = vals.len().max(1) as f64;
                ColumnStats::Continuous {
                    name: c.name.clone(),
                    min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                    max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    mean: vals.iter().sum::<f64>() / n,
                }
            }
        })
        .collect();
    DatasetStats {
        rows: data.len(),
        class_counts,
        columns,
    }
}

/// Writes the original text labels back out as CSV (inverse of [`read_csv`]).
pub fn write_labelled<W: std::io::Write>(data: &EncodedDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = data.schema.feature_names();
    header.push(data.schema.target.name.clone());
    if let Some(id) = &data.schema.id_column {
        header.insert(0, id.clone());
    }
    w.write_record(&header)?;
    for r in 0..data.len() {
        let mut rec = data.decode_row(r);
        rec.push(data.schema.target.labels[data.targets[r]].clone());
        if data.schema.id_column.is_some() {
            rec.insert(0, data.row_ids[r].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<labelled csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_schema() -> Schema {
        Schema {
            columns: vec![
                Column::yes_no("dui"),
                Column::continuous("age"),
                Column::ordinal("light", &["Dark", "Day"]),
            ],
            target: TargetColumn {
                name: "sev".into(),
                labels: vec!["Fatal".into(), "Minor".into()],
            },
            id_column: None,
        }
    }

    fn read(text: &str, policy: RowErrorPolicy) -> Result<LoadedCsv> {
        read_csv(text.as_bytes(), "mem.csv", &tiny_schema(), policy)
    }

    #[test]
    fn one_valid_row() {
        let loaded = read("dui,age,light,sev\nYes,31,Day,Minor\n", RowErrorPolicy::Fail).unwrap();
        let d = loaded.dataset;
        assert_eq!(d.features().shape(), (1, 3));
        assert_eq!(d.features().row(0), &[1.0, 31.0, 2.0]);
        assert_eq!(d.targets(), &[1]);
        assert_eq!(d.row_ids(), &[0]);
    }

    #[test]
    fn bad_label_names_column_and_line() {
        let err = read("dui,age,light,sev\nYes,31,Day,Minor\nMaybe,20,Day,Fatal\n", RowErrorPolicy::Fail).unwrap_err();
        match err {
            Error::Data { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "dui");
            }
            other => panic!("unexpected {other:?}"),
        }
        let loaded = read("dui,age,light,sev\nYes,31,Day,Minor\nMaybe,20,Day,Fatal\n", RowErrorPolicy::Skip).unwrap();
        assert_eq!(loaded.dataset.len(), 1);
        assert_eq!(loaded.skipped.len(), 1);
        assert_eq!(loaded.skipped[0].line, 3);
    }

    #[test]
    fn missing_cell_is_an_error() {
        let err = read("dui,age,light,sev\nYes,,Day,Minor\n", RowErrorPolicy::Fail).unwrap_err();
        assert!(err.to_string().contains("missing value"), "{err}");
    }

    #[test]
    fn quoted_fields_and_extra_columns() {
        let loaded = read(
            "county,sev,light,age,dui\n\"Cache, UT\",Fatal,\"Dark\",70,No\n",
            RowErrorPolicy::Fail,
        )
        .unwrap();
        assert_eq!(loaded.ignored_columns, vec!["county".to_string()]);
        assert_eq!(loaded.dataset.features().row(0), &[0.0, 70.0, 1.0]);
    }

    #[test]
    fn missing_column_is_reported() {
        let err = read("dui,age,sev\nYes,3,Fatal\n", RowErrorPolicy::Fail).unwrap_err();
        assert!(err.to_string().contains("light"));
    }

    #[test]
    fn decode_round_trips_labels() {
        let text = "dui,age,light,sev\nYes,31,Day,Minor\nNo,7.5,Dark,Fatal\n";
        let d = read(text, RowErrorPolicy::Fail).unwrap().dataset;
        let mut out = Vec::new();
        write_labelled(&d, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn id_column_is_used_and_must_be_unique() {
        let mut s = tiny_schema();
        s.id_column = Some("id".into());
        let d = read_csv("id,dui,age,light,sev\n17,Yes,1,Day,Fatal\n4,No,2,Dark,Minor\n".as_bytes(), "m", &s, RowErrorPolicy::Fail)
            .unwrap()
            .dataset;
        assert_eq!(d.row_ids(), &[17, 4]);
        assert!(read_csv("id,dui,age,light,sev\n1,Yes,1,Day,Fatal\n1,No,2,Dark,Minor\n".as_bytes(), "m", &s, RowErrorPolicy::Fail).is_err());
    }

    #[test]
    fn encoded_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = synthesize_fixture(&FixtureSpec::crash_mix(5, 50)).unwrap();
        let path = dir.path().join("enc.csv");
        write_encoded_csv(&d, &path).unwrap();
        let back = load_encoded_csv(&path, d.schema()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn dataset_rejects_nonconforming_values() {
        let s = tiny_schema();
        let bad = Tensor::from_rows(&[[0.5, 1.0, 1.0]]).unwrap();
        assert!(EncodedDataset::new(bad, vec![0], s.clone(), vec![0]).is_err());
        let bad = Tensor::from_rows(&[[1.0, 1.0, 3.0]]).unwrap();
        assert!(EncodedDataset::new(bad, vec![0], s, vec![0]).is_err());
    }
}
