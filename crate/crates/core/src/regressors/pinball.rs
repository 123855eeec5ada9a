//! Pinball (quantile) loss.

use serde::{Deserialize, Serialize};

use super::RegressorError;

/// Pinball loss at quantile level `quantile_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinballLossSpec {
    pub quantile_q: f64,
}

impl PinballLossSpec {
    pub fn new(quantile_q: f64) -> Result<Self, RegressorError> {
        if quantile_q > 0.0 && quantile_q < 1.0 {
            Ok(PinballLossSpec { quantile_q })
        } else {
            Err(RegressorError::InvalidQuantile(quantile_q))
        }
    }

    /// `max{q (y - ŷ), (1 - q)(ŷ - y)}`
    pub fn loss(&self, y: f64, y_hat: f64) -> f64 {
        pinball_loss(y, y_hat, self.quantile_q)
    }

    /// Subgradient with respect to the prediction; 0 at the kink.
    pub fn gradient(&self, y: f64, y_hat: f64) -> f64 {
        pinball_gradient(y, y_hat, self.quantile_q)
    }
}

pub fn pinball_loss(y: f64, y_hat: f64, q: f64) -> f64 {
    let r = y - y_hat;
    (q * r).max((q - 1.0) * r)
}

pub fn pinball_gradient(y: f64, y_hat: f64, q: f64) -> f64 {
    if y > y_hat {
        -q
    } else if y < y_hat {
        1.0 - q
    } else {
        0.0
    }
}

pub fn mean_pinball_loss(y: &[f64], y_hat: &[f64], q: f64) -> f64 {
    debug_assert_eq!(y.len(), y_hat.len());
    y.iter().zip(y_hat).map(|(&a, &b)| pinball_loss(a, b, q)).sum::<f64>() / y.len() as f64
}

/// Empirical q-quantile as the `ceil(q n)`-th smallest value (1-based).
///
/// This order statistic minimizes the mean pinball loss over constants.
pub fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "empirical quantile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn loss_values() {
        assert_eq!(pinball_loss(3.0, 1.0, 0.5), 1.0);
        assert!((pinball_loss(1.0, 3.0, 0.9) - 0.2).abs() < 1e-15);
        assert!((pinball_loss(3.0, 1.0, 0.9) - 1.8).abs() < 1e-15);
        assert_eq!(pinball_loss(2.0, 2.0, 0.3), 0.0);
    }

    #[test]
    fn invalid_quantiles_rejected() {
        assert!(PinballLossSpec::new(0.0).is_err());
        assert!(PinballLossSpec::new(1.0).is_err());
        assert!(PinballLossSpec::new(f64::NAN).is_err());
        assert!(PinballLossSpec::new(0.05).is_ok());
    }

    #[test]
    fn empirical_quantile_is_pinball_optimal_constant() {
        let y: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(empirical_quantile(&y, 0.5), 50.0);
        assert_eq!(empirical_quantile(&y, 0.9), 90.0);
        let best = mean_pinball_loss(&y, &vec![90.0; 100], 0.9);
        for c in [85.0, 89.0, 89.9, 91.5, 95.0] {
            assert!(mean_pinball_loss(&y, &vec![c; 100], 0.9) >= best);
        }
    }

    proptest! {
        #[test]
        fn loss_nonnegative_and_zero_only_at_target(y in -1e3f64..1e3, yh in -1e3f64..1e3, q in 0.01f64..0.99) {
            let l = pinball_loss(y, yh, q);
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, y == yh);
        }

        #[test]
        fn gradient_matches_central_difference(y in -10.0f64..10.0, yh in -10.0f64..10.0, q in 0.01f64..0.99) {
            prop_assume!((y - yh).abs() > 1e-3);
            let h = 1e-6;
            let fd = (pinball_loss(y, yh + h, q) - pinball_loss(y, yh - h, q)) / (2.0 * h);
            let g = pinball_gradient(y, yh, q);
            prop_assert!((fd - g).abs() <= 1e-4 * g.abs().max(1e-8));
        }

        #[test]
        fn optimal_constant_is_monotone_in_q(
            ys in proptest::collection::vec(-50.0f64..50.0, 1..40),
            q1 in 0.01f64..0.99,
            q2 in 0.01f64..0.99,
        ) {
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            prop_assert!(empirical_quantile(&ys, hi) >= empirical_quantile(&ys, lo));
        }
    }
}
