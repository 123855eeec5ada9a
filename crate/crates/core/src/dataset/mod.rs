//! Chip data model, feature assembly per read point, splitting and scaling.

mod csv_io;
mod split;

pub use csv_io::{load_csv, read_csv, write_csv, ColumnRule, LabelRule, Schema};
pub use split::{make_folds, train_calibration_split, Fold, SplitSpec};

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stress read points (hours) of the reference burn-in flow.
pub const DEFAULT_READ_POINTS: [u32; 6] = [0, 24, 48, 168, 504, 1008];

#[derive(Error, Debug)]
pub enum DatasetError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("column `{0}` does not match the schema")]
    UnknownColumn(String),
    #[error("non-numeric cell `{value}` at row {row}, column `{column}`")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("duplicate chip id `{id}` at row {row}")]
    DuplicateChipId { id: String, row: usize },
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("invalid column `{name}`: {reason}")]
    InvalidColumn { name: String, reason: String },
    #[error("no labels for read point {read_point_hours} h at {temperature_celsius} C")]
    UnknownLabelKey {
        read_point_hours: u32,
        temperature_celsius: i32,
    },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
    #[error("too few samples: {n} samples cannot fill {n_folds} folds of at least 2")]
    TooFewSamples { n: usize, n_folds: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Source of a feature column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Production tester measurement (IDDQ, leakage, ...), taken at time zero.
    #[serde(alias = "param")]
    Parametric,
    /// Ring-oscillator delay monitor.
    #[serde(alias = "rod")]
    RingOscillatorDelay,
    /// In-situ critical-path delay monitor.
    #[serde(alias = "cpd")]
    CriticalPathDelay,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [
        FeatureKind::Parametric,
        FeatureKind::RingOscillatorDelay,
        FeatureKind::CriticalPathDelay,
    ];

    /// Prefix used in the column naming convention.
    pub fn token(self) -> &'static str {
        match self {
            FeatureKind::Parametric => "param",
            FeatureKind::RingOscillatorDelay => "rod",
            FeatureKind::CriticalPathDelay => "cpd",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.token() == token)
    }

    pub fn is_on_chip(self) -> bool {
        !matches!(self, FeatureKind::Parametric)
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: FeatureKind,
    pub read_point_hours: u32,
    pub temperature_celsius: i32,
}

impl FeatureColumn {
    /// Builds a column whose name follows `<kind>__rp<hours>__t<temp>__<name>`.
    pub fn conventional(kind: FeatureKind, read_point_hours: u32, temperature_celsius: i32, base: &str) -> Self {
        FeatureColumn {
            name: format!(
                "{}__rp{}__t{}__{}",
                kind.token(),
                read_point_hours,
                temperature_celsius,
                base
            ),
            kind,
            read_point_hours,
            temperature_celsius,
        }
    }

    /// Parses a conventionally named feature column.
    pub fn parse_conventional(name: &str) -> Option<Self> {
        let mut parts = name.splitn(4, "__");
        let kind = FeatureKind::from_token(parts.next()?)?;
        let read_point_hours = parts.next()?.strip_prefix("rp")?.parse().ok()?;
        let temperature_celsius = parts.next()?.strip_prefix('t')?.parse().ok()?;
        let base = parts.next()?;
        if base.is_empty() {
            return None;
        }
        Some(FeatureColumn {
            name: name.to_string(),
            kind,
            read_point_hours,
            temperature_celsius,
        })
    }
}

/// Identifies one Vmin measurement campaign: a read point and a test temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabelKey {
    pub read_point_hours: u32,
    pub temperature_celsius: i32,
}

impl LabelKey {
    pub fn new(read_point_hours: u32, temperature_celsius: i32) -> Self {
        LabelKey {
            read_point_hours,
            temperature_celsius,
        }
    }

    /// Column name under the naming convention, `vmin__rp<hours>__t<temp>`.
    pub fn column_name(&self) -> String {
        format!("vmin__rp{}__t{}", self.read_point_hours, self.temperature_celsius)
    }

    pub fn parse_column_name(name: &str) -> Option<Self> {
        let rest = name.strip_prefix("vmin__rp")?;
        let (rp, temp) = rest.split_once("__t")?;
        Some(LabelKey::new(rp.parse().ok()?, temp.parse().ok()?))
    }
}

impl fmt::Display for LabelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} h / {} C", self.read_point_hours, self.temperature_celsius)
    }
}

/// Chips with their feature matrix and Vmin labels (millivolts).
///
/// Immutable once built; [`ChipDataset::new`] checks the shape invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct ChipDataset {
    features: DMatrix<f64>,
    columns: Vec<FeatureColumn>,
    labels: BTreeMap<LabelKey, Vec<f64>>,
    chip_ids: Vec<String>,
}

impl ChipDataset {
    pub fn new(
        features: DMatrix<f64>,
        columns: Vec<FeatureColumn>,
        labels: BTreeMap<LabelKey, Vec<f64>>,
        chip_ids: Vec<String>,
    ) -> Result<Self, DatasetError> {
        let n = chip_ids.len();
        if features.nrows() != n {
            return Err(DatasetError::Inconsistent(format!(
                "{} feature rows for {} chips",
                features.nrows(),
                n
            )));
        }
        if features.ncols() != columns.len() {
            return Err(DatasetError::Inconsistent(format!(
                "{} feature columns but {} column descriptors",
                features.ncols(),
                columns.len()
            )));
        }
        let mut names = HashSet::new();
        for c in &columns {
            if !names.insert(c.name.as_str()) {
                return Err(DatasetError::DuplicateColumn(c.name.clone()));
            }
            if c.kind == FeatureKind::Parametric && c.read_point_hours != 0 {
                return Err(DatasetError::InvalidColumn {
                    name: c.name.clone(),
                    reason: "parametric columns are measured at read point 0".into(),
                });
            }
        }
        let mut ids = HashSet::new();
        for (row, id) in chip_ids.iter().enumerate() {
            if !ids.insert(id.as_str()) {
                return Err(DatasetError::DuplicateChipId { id: id.clone(), row });
            }
        }
        for (key, values) in &labels {
            if values.len() != n {
                return Err(DatasetError::Inconsistent(format!(
                    "label {key} has {} values for {n} chips",
                    values.len()
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::Inconsistent(format!("label {key} has non-finite values")));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::Inconsistent("non-finite feature value".into()));
        }
        Ok(ChipDataset {
            features,
            columns,
            labels,
            chip_ids,
        })
    }

    pub fn n_chips(&self) -> usize {
        self.chip_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn columns(&self) -> &[FeatureColumn] {
        &self.columns
    }

    pub fn labels(&self) -> &BTreeMap<LabelKey, Vec<f64>> {
        &self.labels
    }

    pub fn label(&self, key: LabelKey) -> Result<&[f64], DatasetError> {
        self.labels
            .get(&key)
            .map(Vec::as_slice)
            .ok_or(DatasetError::UnknownLabelKey {
                read_point_hours: key.read_point_hours,
                temperature_celsius: key.temperature_celsius,
            })
    }

    pub fn chip_ids(&self) -> &[String] {
        &self.chip_ids
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Read points that carry labels, ascending.
    pub fn label_read_points(&self) -> Vec<u32> {
        let mut rps: Vec<u32> = self.labels.keys().map(|k| k.read_point_hours).collect();
        rps.dedup();
        rps
    }

    /// Label temperatures, ascending.
    pub fn label_temperatures(&self) -> Vec<i32> {
        let mut temps: Vec<i32> = self.labels.keys().map(|k| k.temperature_celsius).collect();
        temps.sort_unstable();
        temps.dedup();
        temps
    }

    /// Keeps only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> ChipDataset {
        let features = self.features.select_rows(rows);
        let labels = self
            .labels
            .iter()
            .map(|(k, v)| (*k, rows.iter().map(|&r| v[r]).collect()))
            .collect();
        let chip_ids = rows.iter().map(|&r| self.chip_ids[r].clone()).collect();
        ChipDataset {
            features,
            columns: self.columns.clone(),
            labels,
            chip_ids,
        }
    }
}

/// Which feature families feed a model. `Both` is the normal configuration;
/// the other two exist for the on-chip monitor ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    #[default]
    Both,
    Parametric,
    #[serde(rename = "onchip")]
    OnChip,
}

impl FeatureSet {
    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Both => "both",
            FeatureSet::Parametric => "parametric",
            FeatureSet::OnChip => "onchip",
        }
    }

    fn admits(self, kind: FeatureKind) -> bool {
        match self {
            FeatureSet::Both => true,
            FeatureSet::Parametric => !kind.is_on_chip(),
            FeatureSet::OnChip => kind.is_on_chip(),
        }
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(FeatureSet::Both),
            "parametric" => Ok(FeatureSet::Parametric),
            "onchip" | "on-chip" => Ok(FeatureSet::OnChip),
            other => Err(format!("unknown feature set `{other}` (expected parametric, onchip or both)")),
        }
    }
}

/// Design matrix and target for one (read point, temperature) prediction task.
#[derive(Debug, Clone)]
pub struct AssembledFeatures {
    /// Indices into the dataset's columns, in dataset order.
    pub column_indices: Vec<usize>,
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
}

/// Column indices usable when predicting Vmin at `target_read_point`.
///
/// Parametric data exists only at time zero. On-chip monitor readings from
/// every read point up to and including the target are separate features.
pub fn feature_columns_for(ds: &ChipDataset, target_read_point: u32, set: FeatureSet) -> Vec<usize> {
    ds.columns
        .iter()
        .enumerate()
        .filter(|(_, c)| set.admits(c.kind))
        .filter(|(_, c)| {
            if c.kind.is_on_chip() {
                c.read_point_hours <= target_read_point
            } else {
                c.read_point_hours == 0
            }
        })
        .map(|(i, _)| i)
        .collect()
}

/// Feature matrix and Vmin vector for predicting the label at
/// (`target_read_point`, `target_temperature`) using every feature available by then.
pub fn assemble_features(
    ds: &ChipDataset,
    target_read_point: u32,
    target_temperature: i32,
) -> Result<AssembledFeatures, DatasetError> {
    assemble_feature_set(ds, target_read_point, target_temperature, FeatureSet::Both)
}

pub fn assemble_feature_set(
    ds: &ChipDataset,
    target_read_point: u32,
    target_temperature: i32,
    set: FeatureSet,
) -> Result<AssembledFeatures, DatasetError> {
    let y = ds.label(LabelKey::new(target_read_point, target_temperature))?.to_vec();
    let column_indices = feature_columns_for(ds, target_read_point, set);
    let x = ds.features.select_columns(&column_indices);
    Ok(AssembledFeatures { column_indices, x, y })
}

/// Z-scoring fitted on training rows. Columns that are constant on the
/// training rows are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// Input column positions that survive, ascending.
    pub kept: Vec<usize>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub n_inputs: usize,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows();
        let mut kept = Vec::new();
        let mut means = Vec::new();
        let mut scales = Vec::new();
        for (j, col) in x.column_iter().enumerate() {
            if n == 0 {
                break;
            }
            let (lo, hi) = col
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if lo == hi {
                continue;
            }
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            if sd > 0.0 && sd.is_finite() {
                kept.push(j);
                means.push(mean);
                scales.push(sd);
            }
        }
        Standardizer {
            kept,
            means,
            scales,
            n_inputs: x.ncols(),
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.kept.len()
    }

    /// Applies the fitted scaling. `x` must have `n_inputs` columns.
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.ncols(), self.n_inputs, "standardizer input width");
        let mut out = DMatrix::zeros(x.nrows(), self.kept.len());
        for (k, &j) in self.kept.iter().enumerate() {
            let (m, s) = (self.means[k], self.scales[k]);
            for i in 0..x.nrows() {
                out[(i, k)] = (x[(i, j)] - m) / s;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(kind: FeatureKind, rp: u32, t: i32, base: &str) -> FeatureColumn {
        FeatureColumn::conventional(kind, rp, t, base)
    }

    fn toy_dataset() -> ChipDataset {
        let columns = vec![
            col(FeatureKind::Parametric, 0, -45, "iddq"),
            col(FeatureKind::Parametric, 0, 125, "leak"),
            col(FeatureKind::RingOscillatorDelay, 0, 25, "ro1"),
            col(FeatureKind::RingOscillatorDelay, 24, 25, "ro1"),
            col(FeatureKind::RingOscillatorDelay, 48, 25, "ro1"),
            col(FeatureKind::CriticalPathDelay, 168, 80, "cp1"),
        ];
        let n = 4;
        let features = DMatrix::from_fn(n, columns.len(), |i, j| (i * 10 + j) as f64);
        let mut labels = BTreeMap::new();
        for rp in [0, 24, 48, 168] {
            labels.insert(LabelKey::new(rp, 25), (0..n).map(|i| 500.0 + i as f64 + rp as f64).collect());
        }
        let ids = (0..n).map(|i| format!("c{i}")).collect();
        ChipDataset::new(features, columns, labels, ids).unwrap()
    }

    #[test]
    fn conventional_names_round_trip() {
        let c = col(FeatureKind::RingOscillatorDelay, 168, -45, "ro_12");
        assert_eq!(c.name, "rod__rp168__t-45__ro_12");
        assert_eq!(FeatureColumn::parse_conventional(&c.name), Some(c));
        assert_eq!(FeatureColumn::parse_conventional("rod__rp1__t2__"), None);
        assert_eq!(FeatureColumn::parse_conventional("vmin__rp0__t25"), None);
        let key = LabelKey::new(504, -45);
        assert_eq!(key.column_name(), "vmin__rp504__t-45");
        assert_eq!(LabelKey::parse_column_name(&key.column_name()), Some(key));
    }

    #[test]
    fn read_point_zero_uses_time_zero_columns() {
        let ds = toy_dataset();
        let a = assemble_features(&ds, 0, 25).unwrap();
        assert_eq!(a.column_indices, vec![0, 1, 2]);
        assert_eq!(a.x.ncols(), 3);
        assert_eq!(a.y, ds.label(LabelKey::new(0, 25)).unwrap());
    }

    #[test]
    fn later_read_points_include_earlier_monitor_readings() {
        let ds = toy_dataset();
        let a = assemble_features(&ds, 48, 25).unwrap();
        assert_eq!(a.column_indices, vec![0, 1, 2, 3, 4]);
        let b = assemble_features(&ds, 168, 25).unwrap();
        assert_eq!(b.column_indices, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn feature_sets_filter_by_kind() {
        let ds = toy_dataset();
        let p = assemble_feature_set(&ds, 168, 25, FeatureSet::Parametric).unwrap();
        assert_eq!(p.column_indices, vec![0, 1]);
        let o = assemble_feature_set(&ds, 24, 25, FeatureSet::OnChip).unwrap();
        assert_eq!(o.column_indices, vec![2, 3]);
    }

    #[test]
    fn no_on_chip_columns_gives_parametric_only() {
        let columns = vec![col(FeatureKind::Parametric, 0, 25, "a"), col(FeatureKind::Parametric, 0, 25, "b")];
        let mut labels = BTreeMap::new();
        labels.insert(LabelKey::new(0, 25), vec![1.0, 2.0]);
        let ds = ChipDataset::new(DMatrix::zeros(2, 2), columns, labels, vec!["a".into(), "b".into()]).unwrap();
        let a = assemble_features(&ds, 0, 25).unwrap();
        assert_eq!(a.x.ncols(), 2);
    }

    #[test]
    fn unknown_label_key_is_reported() {
        let ds = toy_dataset();
        let err = assemble_features(&ds, 1008, 25).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::UnknownLabelKey {
                read_point_hours: 1008,
                temperature_celsius: 25
            }
        ));
    }

    #[test]
    fn constructor_rejects_bad_shapes() {
        let columns = vec![col(FeatureKind::Parametric, 0, 25, "a"), col(FeatureKind::Parametric, 0, 25, "a")];
        let err = ChipDataset::new(DMatrix::zeros(1, 2), columns, BTreeMap::new(), vec!["x".into()]).unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateColumn(_)));

        let columns = vec![FeatureColumn {
            name: "p".into(),
            kind: FeatureKind::Parametric,
            read_point_hours: 24,
            temperature_celsius: 25,
        }];
        let err = ChipDataset::new(DMatrix::zeros(1, 1), columns, BTreeMap::new(), vec!["x".into()]).unwrap_err();
        assert!(matches!(err, DatasetError::InvalidColumn { .. }));

        let mut labels = BTreeMap::new();
        labels.insert(LabelKey::new(0, 25), vec![1.0]);
        let err = ChipDataset::new(DMatrix::zeros(2, 0), vec![], labels, vec!["x".into(), "y".into()]).unwrap_err();
        assert!(matches!(err, DatasetError::Inconsistent(_)));
    }

    #[test]
    fn standardizer_drops_constant_columns() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 5.0, 2.0, 2.0, 5.0, 4.0, 3.0, 5.0, 6.0]);
        let s = Standardizer::fit(&x);
        assert_eq!(s.kept, vec![0, 2]);
        let z = s.transform(&x);
        assert_eq!(z.ncols(), 2);
        for col in z.column_iter() {
            let mean: f64 = col.iter().sum::<f64>() / 3.0;
            let var: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }
}
