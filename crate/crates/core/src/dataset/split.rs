//! Cross-validation folds with a held-out calibration split.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::rng::{derive_seed_indexed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_folds: usize,
    /// Share of the non-test samples held out for conformal calibration.
    pub calibration_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            n_folds: 4,
            calibration_fraction: 0.25,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        SplitSpec {
            seed,
            ..SplitSpec::default()
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        if self.n_folds < 2 {
            return Err(DatasetError::InvalidSplit(format!(
                "need at least 2 folds, got {}",
                self.n_folds
            )));
        }
        check_fraction(self.calibration_fraction)
    }
}

fn check_fraction(f: f64) -> Result<(), DatasetError> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(DatasetError::InvalidSplit(format!(
            "calibration fraction must lie in (0, 1), got {f}"
        )))
    }
}

/// Index sets of one fold. All three are sorted and pairwise disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits `n` samples into `spec.n_folds` test folds. For each fold, the other
/// samples are shuffled and `floor(calibration_fraction * m)` of them go to
/// calibration, the rest to training.
pub fn make_folds(n: usize, spec: &SplitSpec) -> Result<Vec<Fold>, DatasetError> {
    spec.validate()?;
    if n < spec.n_folds * 2 {
        return Err(DatasetError::TooFewSamples {
            n,
            n_folds: spec.n_folds,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(derive_seed_indexed(spec.seed, "folds", 0)));

    let k = spec.n_folds;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        let mut test = order[start..start + size].to_vec();
        let rest: Vec<usize> = order[..start].iter().chain(&order[start + size..]).copied().collect();
        start += size;

        let (train, calibration) = split_rest(rest, spec.calibration_fraction, derive_seed_indexed(spec.seed, "calibration", f as u64));
        test.sort_unstable();
        folds.push(Fold {
            train,
            calibration,
            test,
        });
    }
    Ok(folds)
}

fn split_rest(mut rest: Vec<usize>, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    rest.sort_unstable();
    rest.shuffle(&mut rng_from_seed(seed));
    let n_cal = (fraction * rest.len() as f64).floor() as usize;
    let mut calibration = rest[..n_cal].to_vec();
    let mut train = rest[n_cal..].to_vec();
    calibration.sort_unstable();
    train.sort_unstable();
    (train, calibration)
}

/// Single train/calibration split of `0..n` using the fold rule.
pub fn train_calibration_split(n: usize, calibration_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    check_fraction(calibration_fraction)?;
    let (train, cal) = split_rest((0..n).collect(), calibration_fraction, derive_seed_indexed(seed, "calibration", u64::MAX));
    if train.is_empty() || cal.is_empty() {
        return Err(DatasetError::TooFewSamples { n, n_folds: 1 });
    }
    Ok((train, cal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn check_partition(n: usize, folds: &[Fold]) {
        let mut all_test: Vec<usize> = folds.iter().flat_map(|f| f.test.iter().copied()).collect();
        all_test.sort_unstable();
        assert_eq!(all_test, (0..n).collect::<Vec<_>>());
        for f in folds {
            let mut seen = vec![0u8; n];
            for &i in f.train.iter().chain(&f.calibration).chain(&f.test) {
                seen[i] += 1;
            }
            assert!(seen.iter().all(|&c| c == 1), "fold sets must partition 0..n");
        }
    }

    #[test]
    fn eight_samples_four_folds() {
        let folds = make_folds(8, &SplitSpec::with_seed(1)).unwrap();
        assert_eq!(folds.len(), 4);
        for f in &folds {
            assert_eq!(f.test.len(), 2);
            assert_eq!(f.calibration.len(), 1);
            assert_eq!(f.train.len(), 5);
        }
        check_partition(8, &folds);
    }

    #[test]
    fn chip_population_sizes() {
        let folds = make_folds(156, &SplitSpec::with_seed(7)).unwrap();
        for f in &folds {
            assert_eq!(f.test.len(), 39);
            assert_eq!(f.calibration.len(), 29);
            assert_eq!(f.train.len(), 88);
        }
        check_partition(156, &folds);
    }

    #[test]
    fn same_seed_same_folds() {
        let a = make_folds(50, &SplitSpec::with_seed(11)).unwrap();
        let b = make_folds(50, &SplitSpec::with_seed(11)).unwrap();
        let c = make_folds(50, &SplitSpec::with_seed(12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_small_or_invalid_inputs() {
        assert!(matches!(
            make_folds(7, &SplitSpec::default()),
            Err(DatasetError::TooFewSamples { n: 7, n_folds: 4 })
        ));
        let bad = SplitSpec {
            calibration_fraction: 1.0,
            ..SplitSpec::default()
        };
        assert!(matches!(make_folds(100, &bad), Err(DatasetError::InvalidSplit(_))));
        let one = SplitSpec {
            n_folds: 1,
            ..SplitSpec::default()
        };
        assert!(make_folds(100, &one).is_err());
    }

    #[test]
    fn exhaustive_partition_check_up_to_1000() {
        for n in 8..=1000 {
            let spec = SplitSpec {
                n_folds: 4,
                calibration_fraction: 0.25,
                seed: n as u64,
            };
            check_partition(n, &make_folds(n, &spec).unwrap());
        }
    }

    #[test]
    fn single_split_is_deterministic() {
        let (tr, ca) = train_calibration_split(100, 0.25, 3).unwrap();
        assert_eq!(ca.len(), 25);
        assert_eq!(tr.len(), 75);
        assert_eq!(train_calibration_split(100, 0.25, 3).unwrap(), (tr, ca));
    }

    proptest! {
        #[test]
        fn folds_partition_for_any_config(n in 6usize..300, k in 2usize..6, frac in 0.05f64..0.95, seed in any::<u64>()) {
            prop_assume!(n >= 2 * k);
            let folds = make_folds(n, &SplitSpec { n_folds: k, calibration_fraction: frac, seed }).unwrap();
            prop_assert_eq!(folds.len(), k);
            check_partition(n, &folds);
            for f in &folds {
                let m = n - f.test.len();
                prop_assert_eq!(f.calibration.len(), (frac * m as f64).floor() as usize);
            }
        }
    }
}
