//! Acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Deterministic criteria abort the run when they fail. Statistical ones
//! (finite-sample coverage, ablation direction) report their measured values
//! and never abort, so an unlucky draw is visible without being hidden.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use vmin_core::benchmark::{onchip_gains, run_benchmark, BenchmarkConfig, EvaluationReport};
use vmin_core::conformal::{
    cp_interval_from_predictions, cp_scores, cqr_interval_from_predictions, cqr_scores, gp_interval, normal_quantile, qr_interval_from_predictions,
    quantile_index, CalibrationResult, PredictionInterval, ScoreKind,
};
use vmin_core::dataset::{assemble_feature_set, FeatureSet, Standardizer};
use vmin_core::feature_select::pearson;
use vmin_core::metrics::{coverage, onchip_gain};
use vmin_core::pipeline::{BaseLearner, Method};
use vmin_core::regressors::{fit_gbt, fit_ols, fit_quantile_linear, GbtConfig, Network, Objective};
use vmin_core::rng::rng_from_seed;
use vmin_core::synth::{generate, generate_with_latent, SynthConfig};

struct Outcome {
    id: u32,
    pass: bool,
    hard: bool,
}

fn report(out: &mut Vec<Outcome>, id: u32, hard: bool, pass: bool, detail: String) {
    println!("criterion {id:>2}: {}  {detail}", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome { id, pass, hard });
}

fn covered(iv: &[PredictionInterval], y: &[f64]) -> f64 {
    coverage(iv, y).unwrap() / 100.0
}

fn small_config(n_chips: usize, n_parametric: usize, n_rod: usize, n_cpd: usize, read_points: Vec<u32>, seed: u64) -> SynthConfig {
    SynthConfig {
        n_chips,
        n_parametric,
        n_rod,
        n_cpd,
        read_points,
        temperatures: vec![25],
        seed,
        ..SynthConfig::default()
    }
}

fn criterion_1(out: &mut Vec<Outcome>) {
    let (n_train, m, n_test, reps) = (200, 100, 200, 500);
    let n = n_train + reps * (m + n_test);
    let ds = generate(&small_config(n, 30, 6, 2, vec![0, 24], 11)).unwrap();
    let a = assemble_feature_set(&ds, 24, 25, FeatureSet::Both).unwrap();
    let train: Vec<usize> = (0..n_train).collect();
    let std = Standardizer::fit(&a.x.select_rows(&train));
    let z = std.transform(&a.x);
    let z_tr = z.rows(0, n_train).into_owned();
    let y_tr = &a.y[..n_train];

    let point = fit_ols(&z_tr, y_tr).unwrap().predict(&z).unwrap();
    let started = Instant::now();
    let lo = fit_quantile_linear(&z_tr, y_tr, 0.05).unwrap().predict(&z).unwrap();
    let hi = fit_quantile_linear(&z_tr, y_tr, 0.95).unwrap().predict(&z).unwrap();
    let mut cqr_total = 0.0;
    let mut cp_total = 0.0;
    for r in 0..reps {
        let cal = n_train + r * (m + n_test);
        let test = cal + m;
        let (yc, yt) = (&a.y[cal..test], &a.y[test..test + n_test]);
        let c = CalibrationResult::from_scores(cqr_scores(&lo[cal..test], &hi[cal..test], yc).unwrap(), 0.1, ScoreKind::QuantileExcess).unwrap();
        let iv = cqr_interval_from_predictions(&lo[test..test + n_test], &hi[test..test + n_test], &c).unwrap();
        cqr_total += covered(&iv, yt);
    }
    let cqr_secs = started.elapsed().as_secs_f64();
    for r in 0..reps {
        let cal = n_train + r * (m + n_test);
        let test = cal + m;
        let (yc, yt) = (&a.y[cal..test], &a.y[test..test + n_test]);
        let c = CalibrationResult::from_scores(cp_scores(&point[cal..test], yc).unwrap(), 0.1, ScoreKind::AbsoluteResidual).unwrap();
        let iv = cp_interval_from_predictions(&point[test..test + n_test], &c).unwrap();
        cp_total += covered(&iv, yt);
    }
    let (cp, cqr) = (cp_total / reps as f64, cqr_total / reps as f64);
    let band = |c: f64| (0.89..=0.92).contains(&c);
    report(
        out,
        1,
        false,
        band(cp) && band(cqr) && cqr_secs < 120.0,
        format!("mean coverage over {reps} draws (M = {m}, 200 test): CP {cp:.4}, CQR {cqr:.4}, band [0.89, 0.92]; CQR-linear {cqr_secs:.1} s"),
    );
}

fn criterion_2(out: &mut Vec<Outcome>) {
    let (n_train, n_cal, n_pool, splits) = (100, 300, 1000, 50);
    let ds = generate(&small_config(n_train + n_pool, 60, 10, 4, vec![0, 168], 12)).unwrap();
    let a = assemble_feature_set(&ds, 168, 25, FeatureSet::Both).unwrap();
    let x_tr = a.x.rows(0, n_train).into_owned();
    let y_tr = &a.y[..n_train];
    let overfit = GbtConfig {
        n_trees: 300,
        max_depth: 6,
        learning_rate: 0.3,
        min_samples_leaf: 1,
        seed: 0,
    };
    let lo_m = fit_gbt(&x_tr, y_tr, Objective::Pinball { q: 0.05 }, &overfit).unwrap();
    let hi_m = fit_gbt(&x_tr, y_tr, Objective::Pinball { q: 0.95 }, &overfit).unwrap();
    let x_pool = a.x.rows(n_train, n_pool).into_owned();
    let y_pool = &a.y[n_train..];
    let lo = lo_m.predict(&x_pool).unwrap();
    let hi = hi_m.predict(&x_pool).unwrap();
    let raw = covered(&qr_interval_from_predictions(&lo, &hi, 0.1).unwrap(), y_pool);
    let train_cov = covered(
        &qr_interval_from_predictions(&lo_m.predict(&x_tr).unwrap(), &hi_m.predict(&x_tr).unwrap(), 0.1).unwrap(),
        y_tr,
    );

    let mut rng = rng_from_seed(2);
    let mut idx: Vec<usize> = (0..n_pool).collect();
    let mut total = 0.0;
    for _ in 0..splits {
        idx.shuffle(&mut rng);
        let (cal, test) = idx.split_at(n_cal);
        let pick = |v: &[f64], rows: &[usize]| -> Vec<f64> { rows.iter().map(|&i| v[i]).collect() };
        let c = CalibrationResult::from_scores(
            cqr_scores(&pick(&lo, cal), &pick(&hi, cal), &pick(y_pool, cal)).unwrap(),
            0.1,
            ScoreKind::QuantileExcess,
        )
        .unwrap();
        let iv = cqr_interval_from_predictions(&pick(&lo, test), &pick(&hi, test), &c).unwrap();
        total += covered(&iv, &pick(y_pool, test));
    }
    let cqr = total / splits as f64;
    report(
        out,
        2,
        false,
        raw < 0.80 && cqr >= 0.88,
        format!(
            "overfit quantile GBT: raw QR coverage {:.1}% (train {:.1}%), CQR on the same models {:.1}% (mean of {splits} splits)",
            100.0 * raw,
            100.0 * train_cov,
            100.0 * cqr
        ),
    );
}

fn criterion_3(out: &mut Vec<Outcome>) {
    let (n_train, n_cal, n_test) = (1600, 500, 500);
    let config = small_config(n_train + n_cal + n_test, 60, 4, 2, vec![0], 13);
    let (ds, latent) = generate_with_latent(&config).unwrap();
    let a = assemble_feature_set(&ds, 0, 25, FeatureSet::Both).unwrap();
    let std = Standardizer::fit(&a.x.rows(0, n_train).into_owned());
    let z = std.transform(&a.x);
    let block = |start: usize, len: usize| -> (DMatrix<f64>, &[f64]) { (z.rows(start, len).into_owned(), &a.y[start..start + len]) };
    let (z_tr, y_tr) = block(0, n_train);
    let (z_cal, y_cal) = block(n_train, n_cal);
    let (z_te, _) = block(n_train + n_cal, n_test);

    let ols = fit_ols(&z_tr, y_tr).unwrap();
    let cp_cal = CalibrationResult::from_scores(cp_scores(&ols.predict(&z_cal).unwrap(), y_cal).unwrap(), 0.1, ScoreKind::AbsoluteResidual).unwrap();
    let cp = cp_interval_from_predictions(&ols.predict(&z_te).unwrap(), &cp_cal).unwrap();
    let cp_len: Vec<f64> = cp.iter().map(PredictionInterval::length).collect();
    let mean_len = cp_len.iter().sum::<f64>() / n_test as f64;
    let cp_sd = (cp_len.iter().map(|l| (l - mean_len).powi(2)).sum::<f64>() / n_test as f64).sqrt();

    let lo_m = fit_quantile_linear(&z_tr, y_tr, 0.05).unwrap();
    let hi_m = fit_quantile_linear(&z_tr, y_tr, 0.95).unwrap();
    let cqr_cal = CalibrationResult::from_scores(
        cqr_scores(&lo_m.predict(&z_cal).unwrap(), &hi_m.predict(&z_cal).unwrap(), y_cal).unwrap(),
        0.1,
        ScoreKind::QuantileExcess,
    )
    .unwrap();
    let cqr = cqr_interval_from_predictions(&lo_m.predict(&z_te).unwrap(), &hi_m.predict(&z_te).unwrap(), &cqr_cal).unwrap();
    let cqr_len: Vec<f64> = cqr.iter().map(PredictionInterval::length).collect();
    let noise: Vec<f64> = latent[n_train + n_cal..].iter().map(|l| l.noise_sd(&config)).collect();
    let r = pearson(&cqr_len, &noise).unwrap();
    // Lengths are upper - lower in floating point, so a constant half-width
    // still leaves rounding-level spread.
    let cp_constant = cp_sd <= 1e-9 * mean_len;
    report(
        out,
        3,
        false,
        cp_constant && r > 0.5,
        format!("CP length sd {cp_sd:.2e} mV (mean {mean_len:.2} mV, half-width {:.4} for every point); corr(CQR length, noise sd) = {r:.3}", cp_cal.q_hat),
    );
}

fn criterion_4(out: &mut Vec<Outcome>) {
    let cases = [((25.32, 20.00), 21.01), ((29.44, 23.84), 19.02), ((22.14, 16.43), 25.79)];
    let mut ok = true;
    let mut shown = Vec::new();
    for ((a, b), want) in cases {
        let g = onchip_gain(a, b).unwrap();
        ok &= (g - want).abs() <= 0.02;
        shown.push(format!("({a}, {b}) -> {g:.3}%"));
    }
    report(out, 4, true, ok, shown.join(", "));
}

fn inverse_normal_oracle(p: f64) -> f64 {
    // Bisection on the statrs normal CDF.
    let cdf = |x: f64| 0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2);
    let (mut a, mut b) = (-40.0, 40.0);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if cdf(m) < p {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn criterion_6(out: &mut Vec<Outcome>) {
    let oracle = inverse_normal_oracle(0.95);
    let iv = gp_interval(&[0.0], &[1.0], 0.1).unwrap()[0];
    let wide = (iv.upper - oracle).abs() < 1e-4 && (iv.lower + oracle).abs() < 1e-4;
    let q = normal_quantile(0.95);
    let zero = gp_interval(&[3.5], &[4.0], 1.0).unwrap()[0];
    let exact = zero.lower == 3.5 && zero.upper == 3.5;
    report(
        out,
        6,
        true,
        wide && exact && (q - oracle).abs() < 1e-4,
        format!("alpha 0.1: [{:.6}, {:.6}] vs oracle ±{oracle:.6}; alpha 1: [{}, {}] around mean 3.5", iv.lower, iv.upper, zero.lower, zero.upper),
    );
}

fn criterion_7(out: &mut Vec<Outcome>) {
    let (n, d, hidden, h) = (5, 3, 16, 1e-6);
    let mut rng = rng_from_seed(77);
    let normal = |rng: &mut vmin_core::rng::Rng| -> f64 { StandardNormal.sample(rng) };
    let objectives = [Objective::Mse, Objective::Pinball { q: 0.1 }, Objective::Pinball { q: 0.5 }, Objective::Pinball { q: 0.9 }];
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped, mut entries) = (0, 0, 0usize);
    while checked < 100 {
        let mut net = Network::init(d, hidden, rng.random());
        let p: Vec<f64> = (0..net.n_params()).map(|_| normal(&mut rng)).collect();
        net.set_flat(&p);
        let x = DMatrix::from_fn(n, d, |_, _| normal(&mut rng));
        let y: Vec<f64> = (0..n).map(|_| 2.0 * normal(&mut rng)).collect();
        let objective = objectives[checked % objectives.len()];
        let pred = net.forward(&x);
        let near_kink = y.iter().zip(&pred).any(|(a, b)| (a - b).abs() < 1e-6) || net.min_abs_preactivation(&x) < 1e-6;
        if near_kink {
            skipped += 1;
            continue;
        }
        let (_, grad) = net.loss_and_gradient(&x, &y, objective, 0.1);
        for k in 0..p.len() {
            let mut shifted = net.clone();
            let mut q = p.clone();
            q[k] = p[k] + h;
            shifted.set_flat(&q);
            let up = shifted.loss_and_gradient(&x, &y, objective, 0.1).0;
            q[k] = p[k] - h;
            shifted.set_flat(&q);
            let down = shifted.loss_and_gradient(&x, &y, objective, 0.1).0;
            let fd = (up - down) / (2.0 * h);
            // Central differences carry about 1e-10 of rounding noise at this
            // loss scale, so tiny partials are compared on an absolute floor.
            let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-4);
            worst = worst.max(rel);
            entries += 1;
        }
        checked += 1;
    }
    report(
        out,
        7,
        true,
        worst < 1e-4,
        format!("{checked} random weight vectors ({entries} partials, MSE and pinball q = 0.1/0.5/0.9): max relative error {worst:.2e} (floor 1e-4); {skipped} draws skipped at kinks"),
    );
}

fn criterion_8(out: &mut Vec<Outcome>) {
    let cases = [((9, 0.1), 9), ((99, 0.1), 90), ((3, 0.1), 4), ((19, 0.05), 19)];
    let mut ok = true;
    let mut shown = Vec::new();
    for ((m, alpha), want) in cases {
        let k = quantile_index(m, alpha);
        let cal = CalibrationResult::from_scores((1..=m).map(|v| v as f64).collect(), alpha, ScoreKind::AbsoluteResidual).unwrap();
        let infinite_expected = want > m;
        ok &= k == want && cal.is_infinite() == infinite_expected;
        shown.push(format!("(M={m}, a={alpha}) -> {k}{}", if cal.is_infinite() { " infinite" } else { "" }));
    }
    report(out, 8, true, ok, shown.join(", "));
}

fn criterion_9(out: &mut Vec<Outcome>, ds: &vmin_core::dataset::ChipDataset) {
    let config = BenchmarkConfig {
        read_points: Some(vec![0, 168]),
        ..BenchmarkConfig::default()
    };
    let a = run_benchmark(ds, &config).unwrap().to_json();
    let b = run_benchmark(ds, &config).unwrap().to_json();
    report(
        out,
        9,
        true,
        a == b,
        format!("two seeded runs (4 methods, read points 0 and 168 h, 3 temperatures): {} bytes, identical: {}", a.len(), a == b),
    );
}

fn cqr_methods() -> [Method; 2] {
    [Method::Cqr(BaseLearner::Linear), Method::Cqr(BaseLearner::Gbt)]
}

fn criterion_10(out: &mut Vec<Outcome>, ds: &vmin_core::dataset::ChipDataset) -> EvaluationReport {
    let started = Instant::now();
    let report_full = run_benchmark(ds, &BenchmarkConfig::default()).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let expected_rows = 4 * 6 * 3;
    let mut low = Vec::new();
    let mut min_cov: f64 = 100.0;
    for row in &report_full.rows {
        if cqr_methods().contains(&row.method) {
            let c = row.coverage_pct.unwrap_or(0.0);
            min_cov = min_cov.min(c);
            if c < 85.0 {
                low.push(format!("{} {} h {} C {:.2}%", row.method, row.read_point_hours, row.temperature_celsius, c));
            }
        }
    }
    println!("{}", report_full.render_table());
    let shape_ok = report_full.rows.len() == expected_rows && report_full.failures.is_empty();
    report(
        out,
        10,
        false,
        shape_ok && low.is_empty() && secs < 900.0,
        format!(
            "{} rows, {} failed cells, {secs:.0} s; min CQR coverage {min_cov:.2}%; cells below 85%: {}",
            report_full.rows.len(),
            report_full.failures.len(),
            if low.is_empty() { "none".to_string() } else { low.join("; ") }
        ),
    );
    report_full
}

fn criterion_5(out: &mut Vec<Outcome>, ds: &vmin_core::dataset::ChipDataset, both: &EvaluationReport) {
    let config = BenchmarkConfig {
        methods: cqr_methods().to_vec(),
        feature_set: FeatureSet::Parametric,
        ..BenchmarkConfig::default()
    };
    let parametric = run_benchmark(ds, &config).unwrap();
    let gains = onchip_gains(&parametric, both).unwrap();
    let mut ok = true;
    let mut lines = Vec::new();
    for g in &gains {
        if g.read_point_hours == 0 {
            continue;
        }
        let shorter = g.average_with_onchip_mv < g.average_parametric_mv;
        if g.method == Method::Cqr(BaseLearner::Linear) {
            ok &= shorter;
        }
        lines.push(format!(
            "{} {} h: {:.2} vs {:.2} mV ({:+.1}%)",
            g.method, g.read_point_hours, g.average_with_onchip_mv, g.average_parametric_mv, g.average_gain_pct
        ));
    }
    report(out, 5, false, ok, "cqr-linear both-features length shorter at every read point after 0 h (cqr-gbt listed, not asserted)".into());
    for l in lines {
        println!("              {l}");
    }
}

/// `ACCEPTANCE_ONLY=1,7` restricts the run to the listed criteria.
fn selected() -> impl Fn(u32) -> bool {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    move |id| only.as_ref().is_none_or(|o| o.contains(&id))
}

fn main() {
    let run = selected();
    let mut out = Vec::new();
    if run(4) {
        criterion_4(&mut out);
    }
    if run(6) {
        criterion_6(&mut out);
    }
    if run(8) {
        criterion_8(&mut out);
    }
    if run(7) {
        criterion_7(&mut out);
    }
    if run(1) {
        criterion_1(&mut out);
    }
    if run(2) {
        criterion_2(&mut out);
    }
    if run(3) {
        criterion_3(&mut out);
    }
    if run(9) || run(10) || run(5) {
        let ds = generate(&SynthConfig::default()).unwrap();
        if run(9) {
            criterion_9(&mut out, &ds);
        }
        if run(10) || run(5) {
            let both = criterion_10(&mut out, &ds);
            if run(5) {
                criterion_5(&mut out, &ds, &both);
            }
        }
    }

    out.sort_by_key(|o| o.id);
    println!("summary:");
    for o in &out {
        println!("  criterion {:>2}: {}", o.id, if o.pass { "PASS" } else { "FAIL" });
    }
    let hard_failures: Vec<u32> = out.iter().filter(|o| o.hard && !o.pass).map(|o| o.id).collect();
    if !hard_failures.is_empty() {
        eprintln!("deterministic criteria failed: {hard_failures:?}");
        std::process::exit(1);
    }
}
