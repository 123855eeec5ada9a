use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use vmin_core::benchmark::{onchip_gains, run_benchmark, BenchmarkConfig, EvaluationReport, GainRow};
use vmin_core::conformal::CalibrationResult;
use vmin_core::dataset::{self, assemble_feature_set, train_calibration_split, ChipDataset, LabelKey, Schema, Standardizer};
use vmin_core::feature_select::{cfs_select_with, SelectionStrategy, SubsetRecord};
use vmin_core::pipeline::{FitOptions, ModelSettings, Predictor};
use vmin_core::synth::{self, SynthConfig};

use crate::error::{lift, CliError};
use crate::manifest::{manifest_path, ManifestBuilder};
use crate::{BenchmarkArgs, CalibrateArgs, DataArgs, FitArgs, GenerateArgs, PredictArgs, ReportArgs, Rows, SelectArgs, Strategy};

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(CliError::json(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(CliError::io(path))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(CliError::io(path))
}

fn load_schema(path: Option<&PathBuf>) -> Result<Schema, CliError> {
    match path {
        Some(p) => Schema::load(p).map_err(lift),
        None => Ok(Schema::convention()),
    }
}

fn load_data(args: &DataArgs) -> Result<ChipDataset, CliError> {
    let schema = load_schema(args.schema.as_ref())?;
    dataset::load_csv(&args.data, &schema).map_err(lift)
}

fn load_predictor(path: &Path) -> Result<Predictor, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    Predictor::from_json(&text).map_err(lift)
}

fn inputs<'a>(data: &'a DataArgs, extra: &[&'a Path]) -> Vec<&'a Path> {
    let mut v: Vec<&Path> = vec![data.data.as_path()];
    v.extend(data.schema.as_deref());
    v.extend_from_slice(extra);
    v
}

pub fn generate(args: &GenerateArgs) -> Result<(), CliError> {
    let mut config: SynthConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(chips) = args.chips {
        if chips == 0 {
            return Err(CliError::Usage("--chips must be at least 1".into()));
        }
        config.n_chips = chips;
    }
    if let Some(f) = args.anomaly_fraction {
        if !(0.0..1.0).contains(&f) {
            return Err(CliError::Usage(format!("--anomaly-fraction must lie in [0, 1), got {f}")));
        }
        config.anomaly_fraction = f;
    }
    if args.homoscedastic {
        config.heteroscedastic = false;
    }
    if args.seed.seed.is_some() || args.config.is_none() {
        config.seed = args.seed.resolve();
    }
    let manifest = ManifestBuilder::start("generate", config.seed);
    let ds = synth::generate(&config).map_err(lift)?;
    create_dir(&args.out)?;
    let csv_path = args.out.join("chips.csv");
    let schema_path = args.out.join("schema.json");
    let summary_path = args.out.join("summary.json");
    synth::emit(&ds, &config, &csv_path, &schema_path).map_err(lift)?;
    let summary = synth::describe(&ds);
    write_text(&summary_path, &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
    manifest
        .finish(&config, &[], &[&csv_path, &schema_path, &summary_path])
        .write(&args.out.join("chips.manifest.json"))?;
    println!(
        "wrote {} chips x {} features ({} parametric, {} ROD, {} CPD) to {}",
        summary.n_chips,
        summary.n_features,
        summary.count(dataset::FeatureKind::Parametric),
        summary.count(dataset::FeatureKind::RingOscillatorDelay),
        summary.count(dataset::FeatureKind::CriticalPathDelay),
        csv_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SelectionDocument {
    format_version: u32,
    target: LabelKey,
    feature_set: dataset::FeatureSet,
    strategy: SelectionStrategy,
    n_rows: usize,
    n_candidates: usize,
    subsets: Vec<SubsetRecord>,
}

pub fn select(args: &SelectArgs) -> Result<(), CliError> {
    if args.k_max == 0 {
        return Err(CliError::Usage("--k-max must be at least 1".into()));
    }
    let manifest = ManifestBuilder::start("select", 0);
    let ds = load_data(&args.data)?;
    let t = &args.target;
    let assembled = assemble_feature_set(&ds, t.read_point, t.temperature, t.features).map_err(lift)?;
    let standardizer = Standardizer::fit(&assembled.x);
    let z = standardizer.transform(&assembled.x);
    let names: Vec<String> = standardizer
        .kept
        .iter()
        .map(|&j| ds.columns()[assembled.column_indices[j]].name.clone())
        .collect();
    let strategy = match args.strategy {
        Strategy::Merit => SelectionStrategy::Merit,
        Strategy::TopK => SelectionStrategy::TopK,
    };
    let subsets = cfs_select_with(&z, &assembled.y, args.k_max.min(z.ncols()).max(1), strategy).map_err(lift)?;
    let doc = SelectionDocument {
        format_version: vmin_core::FORMAT_VERSION,
        target: LabelKey::new(t.read_point, t.temperature),
        feature_set: t.features,
        strategy,
        n_rows: ds.n_chips(),
        n_candidates: names.len(),
        subsets: subsets.iter().map(|s| s.record(&names)).collect(),
    };
    write_text(&args.out, &serde_json::to_string_pretty(&doc).expect("selection serializes"))?;
    let config = serde_json::json!({
        "target": doc.target,
        "feature_set": t.features,
        "strategy": strategy,
        "k_max": args.k_max,
    });
    manifest
        .finish(&config, &inputs(&args.data, &[]), &[&args.out])
        .write(&manifest_path(&args.out))?;
    for s in &doc.subsets {
        println!("k={:<2} merit={:.4}  {}", s.k, s.merit, s.column_names.last().map(String::as_str).unwrap_or(""));
    }
    Ok(())
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    if args.k == Some(0) {
        return Err(CliError::Usage("--k must be at least 1".into()));
    }
    let seed = args.seed.resolve();
    let settings: ModelSettings = match &args.config {
        Some(p) => read_json(p)?,
        None => ModelSettings::default(),
    };
    let manifest = ManifestBuilder::start("fit", seed);
    let ds = load_data(&args.data)?;
    let (train, cal) = train_calibration_split(ds.n_chips(), args.calibration_fraction, seed).map_err(lift)?;
    let t = &args.target;
    let options = FitOptions {
        method: args.method,
        alpha: args.alpha,
        target: LabelKey::new(t.read_point, t.temperature),
        feature_set: t.features,
        settings,
        k: args.k,
        seed,
    };
    let predictor = Predictor::fit(&ds, &train, &cal, &options).map_err(lift)?;
    write_text(&args.out, &predictor.to_json())?;
    let config = serde_json::json!({
        "method": args.method,
        "alpha": args.alpha,
        "target": options.target,
        "feature_set": t.features,
        "k": args.k,
        "calibration_fraction": args.calibration_fraction,
        "settings": options.settings,
    });
    manifest
        .finish(&config, &inputs(&args.data, &[]), &[&args.out])
        .write(&manifest_path(&args.out))?;
    let k = predictor.selection.as_ref().map(|s| s.k.to_string()).unwrap_or_else(|| "all".into());
    println!(
        "fitted {} for {} on {} training rows ({} features used)",
        predictor.method,
        predictor.target,
        train.len(),
        k
    );
    Ok(())
}

pub fn calibrate(args: &CalibrateArgs) -> Result<(), CliError> {
    let predictor = load_predictor(&args.model)?;
    if !predictor.method.needs_calibration() {
        return Err(CliError::Usage(format!("method {} needs no calibration", predictor.method)));
    }
    let manifest = ManifestBuilder::start("calibrate", predictor.seed);
    let ds = load_data(&args.data)?;
    let rows: Vec<usize> = match args.rows {
        Rows::All => (0..ds.n_chips()).collect(),
        Rows::Calibration => train_calibration_split(ds.n_chips(), args.calibration_fraction, predictor.seed).map_err(lift)?.1,
    };
    let x = predictor.preprocessor.extract(&ds.select_rows(&rows)).map_err(lift)?;
    let y: Vec<f64> = {
        let all = ds.label(predictor.target).map_err(lift)?;
        rows.iter().map(|&i| all[i]).collect()
    };
    let cal = predictor
        .calibrate(&x, &y)
        .map_err(lift)?
        .expect("conformal methods always calibrate");
    write_text(&args.out, &cal.to_json())?;
    let config = serde_json::json!({
        "rows": format!("{:?}", args.rows).to_lowercase(),
        "calibration_fraction": args.calibration_fraction,
    });
    manifest
        .finish(&config, &inputs(&args.data, &[&args.model]), &[&args.out])
        .write(&manifest_path(&args.out))?;
    if cal.is_infinite() {
        eprintln!(
            "warning: {} calibration rows are too few for alpha = {}; at least {} are needed and predict will refuse this calibration",
            cal.m(),
            cal.alpha,
            CalibrationResult::min_calibration_size(cal.alpha)
        );
    } else {
        println!("q_hat = {:.4} mV from {} calibration scores (index {})", cal.q_hat, cal.m(), cal.quantile_index);
    }
    Ok(())
}

pub fn predict(args: &PredictArgs) -> Result<(), CliError> {
    let predictor = load_predictor(&args.model)?;
    let calibration = match (&args.calibration, predictor.method.needs_calibration()) {
        (Some(p), true) => {
            let text = fs::read_to_string(p).map_err(CliError::io(p))?;
            Some(CalibrationResult::from_json(&text).map_err(lift)?)
        }
        (None, true) => return Err(CliError::Usage(format!("method {} requires --calibration", predictor.method))),
        (_, false) => None,
    };
    if let Some(cal) = &calibration {
        if cal.is_infinite() {
            return Err(CliError::Numerical(format!(
                "conformal correction is infinite: {} calibration rows cannot support alpha = {}; recalibrate with at least {} rows",
                cal.m(),
                cal.alpha,
                CalibrationResult::min_calibration_size(cal.alpha)
            )));
        }
    }
    let manifest = ManifestBuilder::start("predict", predictor.seed);
    let schema = load_schema(args.schema.as_ref())?;
    let ds = dataset::load_csv(&args.input, &schema).map_err(lift)?;
    let x = predictor.preprocessor.extract(&ds).map_err(lift)?;
    let intervals = if ds.n_chips() == 0 {
        Vec::new()
    } else {
        predictor.intervals(&x, calibration.as_ref()).map_err(lift)?
    };

    let file = fs::File::create(&args.out).map_err(CliError::io(&args.out))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let csv_err = |e: csv::Error| CliError::Io {
        path: args.out.clone(),
        source: std::io::Error::other(e),
    };
    w.write_record(["chip_id", "lower_mv", "upper_mv", "alpha"]).map_err(csv_err)?;
    for (id, iv) in ds.chip_ids().iter().zip(&intervals) {
        w.write_record([id.clone(), iv.lower.to_string(), iv.upper.to_string(), predictor.alpha.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(CliError::io(&args.out))?;
    drop(w);

    let mut used: Vec<&Path> = vec![&args.input, &args.model];
    used.extend(args.calibration.as_deref());
    used.extend(args.schema.as_deref());
    manifest
        .finish(&serde_json::json!({ "alpha": predictor.alpha, "method": predictor.method }), &used, &[&args.out])
        .write(&manifest_path(&args.out))?;
    println!("wrote {} intervals to {}", intervals.len(), args.out.display());
    Ok(())
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<(), CliError> {
    let mut config: BenchmarkConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => BenchmarkConfig::default(),
    };
    if let Some(m) = &args.methods {
        config.methods = m.clone();
    }
    if let Some(a) = args.alpha {
        config.alpha = a;
    }
    if let Some(f) = args.folds {
        config.split.n_folds = f;
    }
    if let Some(f) = args.calibration_fraction {
        config.split.calibration_fraction = f;
    }
    if let Some(f) = args.features {
        config.feature_set = f;
    }
    if let Some(rp) = &args.read_points {
        config.read_points = Some(rp.clone());
    }
    if let Some(t) = &args.temperatures {
        config.temperatures = Some(t.clone());
    }
    if args.seed.seed.is_some() || args.config.is_none() {
        config.split.seed = args.seed.resolve();
    }
    let manifest = ManifestBuilder::start("benchmark", config.split.seed);
    let ds = load_data(&args.data)?;
    let report = run_benchmark(&ds, &config).map_err(lift)?;

    create_dir(&args.out)?;
    let json_path = args.out.join("report.json");
    let text_path = args.out.join("report.txt");
    let table = report.render_table();
    write_text(&json_path, &report.to_json())?;
    write_text(&text_path, &table)?;
    manifest
        .finish(&config, &inputs(&args.data, &[]), &[&json_path, &text_path])
        .write(&args.out.join("report.manifest.json"))?;
    print!("{table}");
    for f in &report.failures {
        eprintln!(
            "cell failed: {} rp={} T={} fold={}: {} [{}]",
            f.method, f.read_point_hours, f.temperature_celsius, f.fold, f.error, f.class
        );
    }
    match report.failure() {
        Some(e) => Err(CliError::Core(e.into())),
        None => Ok(()),
    }
}

fn render_gains(rows: &[GainRow]) -> String {
    let mut temps: Vec<i32> = rows.iter().flat_map(|r| r.per_temperature.iter().map(|p| p.0)).collect();
    temps.sort_unstable();
    temps.dedup();
    let mut out = format!("{:<12}{:>6}", "method", "rp");
    for t in &temps {
        out += &format!("{:>10}", format!("{t}C"));
    }
    out += &format!("{:>10}\n", "average");
    for r in rows {
        out += &format!("{:<12}{:>6}", r.method.to_string(), r.read_point_hours);
        for t in &temps {
            match r.per_temperature.iter().find(|p| p.0 == *t) {
                Some(p) => out += &format!("{:>9.2}%", p.3),
                None => out += &format!("{:>10}", "-"),
            }
        }
        out += &format!("{:>9.2}%\n", r.average_gain_pct);
    }
    out
}

pub fn report(args: &ReportArgs) -> Result<(), CliError> {
    let load = |p: &Path| -> Result<EvaluationReport, CliError> { read_json(p) };
    let report = load(&args.report)?;
    let text = match &args.baseline {
        None => report.render_table(),
        Some(b) => {
            let baseline = load(b)?;
            let gains = onchip_gains(&baseline, &report).map_err(lift)?;
            render_gains(&gains)
        }
    };
    match &args.out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    if let Some(e) = report.failure() {
        eprintln!("note: report contains failed cells: {e}");
    }
    Ok(())
}
