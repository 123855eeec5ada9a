//! Synthetic chip population with the column layout of a production
//! burn-in dataset.
//!
//! Each chip draws four latent coordinates:
//!
//! * `speed` and `leakage`, standard normal process corners;
//! * `aging_rate`, log-normal and therefore non-negative;
//! * `noise_scale`, uniform on `[0.5, 1.5]`.
//!
//! Vmin at read point `t` hours and temperature `T` is
//!
//! ```text
//! 500 + 40 speed c(T) + 15 leakage d(T) + 4 aging_rate ln(1 + t) + e
//! c(T) = 1 - 0.002 (T - 25),   d(T) = exp(0.005 (T - 25))
//! e ~ N(0, noise_mv^2)               (homoscedastic)
//! e ~ N(0, (noise_mv noise_scale)^2) (heteroscedastic)
//! ```
//!
//! Anomalous chips get +150 mV on every label, three times the nominal
//! 50 mV population spread.
//!
//! Parametric columns are measured once, at time zero, and each loads mainly
//! on one of speed, leakage or noise scale. Ring-oscillator (ROD) and
//! critical-path (CPD) monitors are re-read at every read point and drift
//! with `aging_rate ln(1 + t)`; CPD sensors carry most of that drift. None of
//! the parametric columns sees the aging rate, so on-chip data is the only
//! source of information about degradation.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, ChipDataset, DatasetError, FeatureColumn, FeatureKind, LabelKey, DEFAULT_READ_POINTS};
use crate::rng::{derive_seed, derive_seed_indexed, rng_from_seed};

#[derive(Error, Debug)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub const ROD_TEMPERATURE: i32 = 25;
pub const CPD_TEMPERATURE: i32 = 80;
pub const ANOMALY_SHIFT_MV: f64 = 150.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_chips: usize,
    /// Parametric columns, spread evenly over `temperatures`.
    pub n_parametric: usize,
    /// ROD sensors; each is read at every read point.
    pub n_rod: usize,
    /// CPD sensors; each is read at every read point.
    pub n_cpd: usize,
    pub read_points: Vec<u32>,
    pub temperatures: Vec<i32>,
    pub heteroscedastic: bool,
    pub anomaly_fraction: f64,
    /// Label noise standard deviation at unit noise scale.
    pub noise_mv: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_chips: 156,
            n_parametric: 1800,
            n_rod: 168,
            n_cpd: 10,
            read_points: DEFAULT_READ_POINTS.to_vec(),
            temperatures: vec![-45, 25, 125],
            heteroscedastic: true,
            anomaly_fraction: 0.0,
            noise_mv: 5.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        for (name, v) in [
            ("n_chips", self.n_chips),
            ("n_parametric", self.n_parametric),
            ("n_rod", self.n_rod),
            ("n_cpd", self.n_cpd),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.read_points.first() != Some(&0) || self.read_points.windows(2).any(|w| w[0] >= w[1]) {
            return bad("read_points must start at 0 and be strictly increasing".into());
        }
        if self.temperatures.is_empty() {
            return bad("temperatures must not be empty".into());
        }
        let mut t = self.temperatures.clone();
        t.sort_unstable();
        t.dedup();
        if t.len() != self.temperatures.len() {
            return bad("temperatures must be distinct".into());
        }
        if !(0.0..1.0).contains(&self.anomaly_fraction) {
            return bad(format!("anomaly_fraction must lie in [0, 1), got {}", self.anomaly_fraction));
        }
        if !(self.noise_mv > 0.0 && self.noise_mv.is_finite()) {
            return bad(format!("noise_mv must be positive, got {}", self.noise_mv));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.n_parametric + (self.n_rod + self.n_cpd) * self.read_points.len()
    }

    /// Schema sidecar for the generated CSV.
    pub fn schema(&self) -> dataset::Schema {
        dataset::Schema {
            read_points: self.read_points.clone(),
            ..dataset::Schema::convention()
        }
    }
}

/// Ground-truth latent coordinates of one chip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChipLatent {
    pub speed: f64,
    pub leakage: f64,
    pub aging_rate: f64,
    pub noise_scale: f64,
    pub anomalous: bool,
}

impl ChipLatent {
    /// Noise-free Vmin at read point `t` hours and temperature `temp`,
    /// anomaly shift included.
    pub fn expected_vmin(&self, t: u32, temp: i32) -> f64 {
        let dt = (temp - 25) as f64;
        let base = 500.0 + 40.0 * self.speed * (1.0 - 0.002 * dt) + 15.0 * self.leakage * (0.005 * dt).exp();
        let shift = if self.anomalous { ANOMALY_SHIFT_MV } else { 0.0 };
        base + 4.0 * self.aging_rate * (1.0 + t as f64).ln() + shift
    }

    /// Label noise standard deviation under `config`.
    pub fn noise_sd(&self, config: &SynthConfig) -> f64 {
        if config.heteroscedastic {
            config.noise_mv * self.noise_scale
        } else {
            config.noise_mv
        }
    }
}

/// How one generated column responds to the latent coordinates.
#[derive(Debug, Clone, Copy)]
struct Loading {
    speed: f64,
    leakage: f64,
    noise_scale: f64,
    aging: f64,
    noise: f64,
    offset: f64,
    scale: f64,
}

fn sign(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

fn parametric_loading(rng: &mut impl Rng) -> Loading {
    let u: f64 = rng.random();
    let primary = sign(rng) * rng.random_range(0.6..1.0);
    let mut l = Loading {
        speed: rng.random_range(-0.2..0.2),
        leakage: rng.random_range(-0.2..0.2),
        noise_scale: rng.random_range(-0.1..0.1),
        aging: 0.0,
        noise: rng.random_range(0.15..1.0),
        offset: rng.random_range(-5.0..5.0),
        scale: 10f64.powf(rng.random_range(-1.0..2.0)),
    };
    if u < 0.45 {
        l.speed = primary;
    } else if u < 0.9 {
        l.leakage = primary;
    } else {
        l.noise_scale = primary;
    }
    l
}

fn monitor_loading(rng: &mut impl Rng, kind: FeatureKind) -> Loading {
    let (speed, aging, noise) = match kind {
        FeatureKind::RingOscillatorDelay => (0.7..1.0, 0.3..0.8, 0.1..0.4),
        _ => (0.3..0.6, 0.8..1.2, 0.05..0.2),
    };
    Loading {
        speed: rng.random_range(speed),
        leakage: rng.random_range(-0.1..0.1),
        noise_scale: 0.0,
        aging: rng.random_range(aging),
        noise: rng.random_range(noise),
        offset: rng.random_range(50.0..150.0),
        scale: rng.random_range(0.5..2.0),
    }
}

struct Layout {
    columns: Vec<FeatureColumn>,
    loadings: Vec<Loading>,
}

fn layout(config: &SynthConfig) -> Layout {
    let mut rng = rng_from_seed(derive_seed(config.seed, "columns"));
    let mut columns = Vec::with_capacity(config.n_features());
    let mut loadings = Vec::with_capacity(config.n_features());
    let n_t = config.temperatures.len();
    let mut j = 0;
    for (ti, &temp) in config.temperatures.iter().enumerate() {
        let count = config.n_parametric / n_t + usize::from(ti < config.n_parametric % n_t);
        for _ in 0..count {
            columns.push(FeatureColumn::conventional(FeatureKind::Parametric, 0, temp, &format!("p{j:04}")));
            loadings.push(parametric_loading(&mut rng));
            j += 1;
        }
    }
    let rod: Vec<Loading> = (0..config.n_rod).map(|_| monitor_loading(&mut rng, FeatureKind::RingOscillatorDelay)).collect();
    let cpd: Vec<Loading> = (0..config.n_cpd).map(|_| monitor_loading(&mut rng, FeatureKind::CriticalPathDelay)).collect();
    for &rp in &config.read_points {
        for (k, l) in rod.iter().enumerate() {
            columns.push(FeatureColumn::conventional(FeatureKind::RingOscillatorDelay, rp, ROD_TEMPERATURE, &format!("rod{k:03}")));
            loadings.push(*l);
        }
        for (k, l) in cpd.iter().enumerate() {
            columns.push(FeatureColumn::conventional(FeatureKind::CriticalPathDelay, rp, CPD_TEMPERATURE, &format!("cpd{k:02}")));
            loadings.push(*l);
        }
    }
    Layout { columns, loadings }
}

pub fn generate(config: &SynthConfig) -> Result<ChipDataset, SynthError> {
    generate_with_latent(config).map(|(ds, _)| ds)
}

/// Generates the dataset together with each chip's latent coordinates.
///
/// Every chip has its own random stream, so chip `i` is the same whatever the
/// population size.
pub fn generate_with_latent(config: &SynthConfig) -> Result<(ChipDataset, Vec<ChipLatent>), SynthError> {
    config.validate()?;
    let Layout { columns, loadings } = layout(config);
    let n = config.n_chips;
    let d = columns.len();
    let aging = LogNormal::new(0.0, 0.5).expect("valid log-normal");
    let keys: Vec<LabelKey> = config
        .read_points
        .iter()
        .flat_map(|&rp| config.temperatures.iter().map(move |&t| LabelKey::new(rp, t)))
        .collect();

    let mut features = DMatrix::zeros(n, d);
    let mut labels: BTreeMap<LabelKey, Vec<f64>> = keys.iter().map(|&k| (k, vec![0.0; n])).collect();
    let mut latents = Vec::with_capacity(n);
    let normal = |rng: &mut crate::rng::Rng| -> f64 { StandardNormal.sample(rng) };
    for i in 0..n {
        let mut rng = rng_from_seed(derive_seed_indexed(config.seed, "chip", i as u64));
        let latent = ChipLatent {
            speed: normal(&mut rng),
            leakage: normal(&mut rng),
            aging_rate: aging.sample(&mut rng),
            noise_scale: rng.random_range(0.5..1.5),
            anomalous: rng.random::<f64>() < config.anomaly_fraction,
        };
        for (j, (col, l)) in columns.iter().zip(&loadings).enumerate() {
            let drift = 0.25 * latent.aging_rate * (1.0 + col.read_point_hours as f64).ln();
            let z = l.speed * latent.speed + l.leakage * latent.leakage + l.noise_scale * (latent.noise_scale - 1.0) * 3.0 + l.aging * drift;
            features[(i, j)] = l.offset + l.scale * (z + l.noise * normal(&mut rng));
        }
        let sd = latent.noise_sd(config);
        for key in &keys {
            let v = latent.expected_vmin(key.read_point_hours, key.temperature_celsius) + sd * normal(&mut rng);
            labels.get_mut(key).expect("key present")[i] = v;
        }
        latents.push(latent);
    }
    let chip_ids = (0..n).map(|i| format!("chip{i:04}")).collect();
    Ok((ChipDataset::new(features, columns, labels, chip_ids)?, latents))
}

/// Writes the dataset CSV and its schema sidecar.
pub fn emit(ds: &ChipDataset, config: &SynthConfig, csv_path: &Path, schema_path: &Path) -> Result<(), SynthError> {
    let file = std::fs::File::create(csv_path).map_err(DatasetError::from)?;
    dataset::write_csv(ds, std::io::BufWriter::new(file))?;
    std::fs::write(schema_path, config.schema().to_json()).map_err(DatasetError::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub kind: FeatureKind,
    pub columns: usize,
    pub read_points: Vec<u32>,
    pub temperatures: Vec<i32>,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub key: LabelKey,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Column counts, label keys and value ranges of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_chips: usize,
    pub n_features: usize,
    pub kinds: Vec<KindSummary>,
    pub labels: Vec<LabelSummary>,
}

impl DatasetSummary {
    pub fn count(&self, kind: FeatureKind) -> usize {
        self.kinds.iter().find(|k| k.kind == kind).map_or(0, |k| k.columns)
    }
}

pub fn describe(ds: &ChipDataset) -> DatasetSummary {
    let x = ds.features();
    let kinds = FeatureKind::ALL
        .iter()
        .map(|&kind| {
            let idx: Vec<usize> = ds.columns().iter().enumerate().filter(|(_, c)| c.kind == kind).map(|(i, _)| i).collect();
            let mut rps: Vec<u32> = idx.iter().map(|&i| ds.columns()[i].read_point_hours).collect();
            rps.sort_unstable();
            rps.dedup();
            let mut temps: Vec<i32> = idx.iter().map(|&i| ds.columns()[i].temperature_celsius).collect();
            temps.sort_unstable();
            temps.dedup();
            let (min, max) = idx
                .iter()
                .flat_map(|&j| x.column(j).iter().copied().collect::<Vec<_>>())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            KindSummary {
                kind,
                columns: idx.len(),
                read_points: rps,
                temperatures: temps,
                min: if idx.is_empty() || ds.n_chips() == 0 { 0.0 } else { min },
                max: if idx.is_empty() || ds.n_chips() == 0 { 0.0 } else { max },
            }
        })
        .collect();
    let labels = ds
        .labels()
        .iter()
        .map(|(&key, v)| LabelSummary {
            key,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: v.iter().sum::<f64>() / v.len().max(1) as f64,
        })
        .collect();
    DatasetSummary {
        n_chips: ds.n_chips(),
        n_features: ds.n_features(),
        kinds,
        labels,
    }
}
