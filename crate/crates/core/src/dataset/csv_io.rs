//! CSV ingestion and export.
//!
//! The default layout is self-describing: a `chip_id` column, feature columns
//! named `<kind>__rp<hours>__t<temp>__<name>` and label columns named
//! `vmin__rp<hours>__t<temp>`. CSVs with other headers are described by a JSON
//! [`Schema`] sidecar whose rules map name patterns (with `*` wildcards) to
//! column provenance.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ChipDataset, DatasetError, FeatureColumn, FeatureKind, LabelKey, DEFAULT_READ_POINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRule {
    pub pattern: String,
    pub kind: FeatureKind,
    pub read_point_hours: u32,
    pub temperature_celsius: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub pattern: String,
    pub read_point_hours: u32,
    pub temperature_celsius: i32,
}

/// Column-provenance descriptor for CSV ingestion.
///
/// With no rules, every column must follow the naming convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub format_version: u32,
    #[serde(default = "default_chip_id_column")]
    pub chip_id_column: String,
    #[serde(default)]
    pub columns: Vec<ColumnRule>,
    #[serde(default)]
    pub labels: Vec<LabelRule>,
    #[serde(default = "default_read_points")]
    pub read_points: Vec<u32>,
}

fn default_chip_id_column() -> String {
    "chip_id".to_string()
}

fn default_read_points() -> Vec<u32> {
    DEFAULT_READ_POINTS.to_vec()
}

impl Default for Schema {
    fn default() -> Self {
        Schema::convention()
    }
}

impl Schema {
    /// Schema that relies purely on the column naming convention.
    pub fn convention() -> Self {
        Schema {
            format_version: crate::FORMAT_VERSION,
            chip_id_column: default_chip_id_column(),
            columns: Vec::new(),
            labels: Vec::new(),
            read_points: default_read_points(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    fn classify(&self, name: &str) -> Option<Classified> {
        if let Some(rule) = self.labels.iter().find(|r| glob_match(&r.pattern, name)) {
            return Some(Classified::Label(LabelKey::new(rule.read_point_hours, rule.temperature_celsius)));
        }
        if let Some(rule) = self.columns.iter().find(|r| glob_match(&r.pattern, name)) {
            return Some(Classified::Feature(FeatureColumn {
                name: name.to_string(),
                kind: rule.kind,
                read_point_hours: rule.read_point_hours,
                temperature_celsius: rule.temperature_celsius,
            }));
        }
        if let Some(key) = LabelKey::parse_column_name(name) {
            return Some(Classified::Label(key));
        }
        FeatureColumn::parse_conventional(name).map(Classified::Feature)
    }
}

enum Classified {
    Label(LabelKey),
    Feature(FeatureColumn),
}

/// `*` matches any (possibly empty) run of characters.
fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if pi < p.len() && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<ChipDataset, DatasetError> {
    read_csv(File::open(path)?, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<ChipDataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let id_pos = headers
        .iter()
        .position(|h| *h == schema.chip_id_column)
        .ok_or_else(|| DatasetError::MissingColumn(schema.chip_id_column.clone()))?;

    let mut seen = HashSet::new();
    let mut feature_cols: Vec<(usize, FeatureColumn)> = Vec::new();
    let mut label_cols: Vec<(usize, LabelKey)> = Vec::new();
    for (pos, name) in headers.iter().enumerate() {
        if pos == id_pos {
            continue;
        }
        if !seen.insert(name.as_str()) {
            return Err(DatasetError::DuplicateColumn(name.clone()));
        }
        match schema.classify(name) {
            Some(Classified::Label(key)) => {
                if label_cols.iter().any(|(_, k)| *k == key) {
                    return Err(DatasetError::InvalidColumn {
                        name: name.clone(),
                        reason: format!("second label column for {key}"),
                    });
                }
                label_cols.push((pos, key));
            }
            Some(Classified::Feature(col)) => {
                if !schema.read_points.contains(&col.read_point_hours) {
                    return Err(DatasetError::InvalidColumn {
                        name: name.clone(),
                        reason: format!("read point {} h is not in the schema's read points", col.read_point_hours),
                    });
                }
                feature_cols.push((pos, col));
            }
            None => return Err(DatasetError::UnknownColumn(name.clone())),
        }
    }
    for pattern in schema
        .columns
        .iter()
        .map(|r| &r.pattern)
        .chain(schema.labels.iter().map(|r| &r.pattern))
    {
        if !headers.iter().any(|h| glob_match(pattern, h)) {
            return Err(DatasetError::MissingColumn(pattern.clone()));
        }
    }

    let mut ids = Vec::new();
    let mut id_set = HashSet::new();
    let mut values: Vec<f64> = Vec::new();
    let mut label_values: Vec<Vec<f64>> = vec![Vec::new(); label_cols.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let id = record.get(id_pos).unwrap_or("").trim().to_string();
        if !id_set.insert(id.clone()) {
            return Err(DatasetError::DuplicateChipId { id, row });
        }
        ids.push(id);
        let cell = |pos: usize| -> Result<f64, DatasetError> {
            let raw = record.get(pos).unwrap_or("").trim();
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(DatasetError::NonNumericCell {
                    row,
                    column: headers[pos].clone(),
                    value: raw.to_string(),
                }),
            }
        };
        for (pos, _) in &feature_cols {
            values.push(cell(*pos)?);
        }
        for (slot, (pos, _)) in label_values.iter_mut().zip(&label_cols) {
            slot.push(cell(*pos)?);
        }
    }

    let features = DMatrix::from_row_slice(ids.len(), feature_cols.len(), &values);
    let columns = feature_cols.into_iter().map(|(_, c)| c).collect();
    let labels: BTreeMap<LabelKey, Vec<f64>> = label_cols.into_iter().map(|(_, k)| k).zip(label_values).collect();
    ChipDataset::new(features, columns, labels, ids)
}

/// Writes the dataset in the conventional layout. Values are printed in
/// shortest round-trip form, so reading the file back is lossless.
pub fn write_csv<W: Write>(ds: &ChipDataset, writer: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["chip_id".to_string()];
    header.extend(ds.columns().iter().map(|c| c.name.clone()));
    header.extend(ds.labels().keys().map(LabelKey::column_name));
    w.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for (i, id) in ds.chip_ids().iter().enumerate() {
        record.clear();
        record.push(id.clone());
        record.extend(ds.features().row(i).iter().map(|v| v.to_string()));
        record.extend(ds.labels().values().map(|v| v[i].to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
