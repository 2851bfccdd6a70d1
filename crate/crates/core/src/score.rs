//! Log-domain score arithmetic.

/// A score in the natural-log domain.
pub type LogScore = f64;

/// log(0). Plain IEEE negative infinity, which `log_add` and comparisons
/// handle without special cases.
pub const LOG_ZERO: LogScore = f64::NEG_INFINITY;

/// `log(exp(a) + exp(b))` without overflow.
///
/// ```
/// use blocksync::score::{log_add, LOG_ZERO};
/// assert_eq!(log_add(LOG_ZERO, -3.0), -3.0);
/// assert!((log_add(0.5f64.ln(), 0.5f64.ln())).abs() < 1e-15);
/// ```
#[inline]
pub fn log_add(a: LogScore, b: LogScore) -> LogScore {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == LOG_ZERO {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum(exp(x)))` over a slice; `LOG_ZERO` for an empty slice.
pub fn log_sum_exp(xs: &[LogScore]) -> LogScore {
    let max = xs.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// `weight * score`, except that a zero weight yields exactly zero even for
/// `LOG_ZERO` scores.
#[inline]
pub fn weighted(weight: f64, score: LogScore) -> LogScore {
    if weight == 0.0 {
        0.0
    } else {
        weight * score
    }
}

/// Numerically stable log-softmax of a row of logits.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let norm = log_sum_exp(logits);
    logits.iter().map(|&x| x - norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_halves() {
        assert_eq!(log_add(LOG_ZERO, -7.25), -7.25);
        assert_eq!(log_add(-7.25, LOG_ZERO), -7.25);
        assert_eq!(log_add(LOG_ZERO, LOG_ZERO), LOG_ZERO);
        assert!(log_add(0.5f64.ln(), 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn no_underflow_at_large_magnitudes() {
        // ln(2 e^-1000) = -1000 + ln 2, exactly representable to ~1e-13.
        let expected = -1000.0 + std::f64::consts::LN_2;
        assert!((log_add(-1000.0, -1000.0) - expected).abs() < 1e-12);
        assert!((log_add(1000.0, 1000.0) - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn lse_matches_pairwise() {
        let xs = [-1.0, -2.5, -0.3, LOG_ZERO];
        let pairwise = xs.iter().copied().fold(LOG_ZERO, log_add);
        assert!((log_sum_exp(&xs) - pairwise).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), LOG_ZERO);
    }

    #[test]
    fn zero_weight_masks_log_zero() {
        assert_eq!(weighted(0.0, LOG_ZERO), 0.0);
        assert_eq!(weighted(0.5, -4.0), -2.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn associative(a in -50.0f64..0.0, b in -50.0f64..0.0, c in -50.0f64..0.0) {
            let l = log_add(log_add(a, b), c);
            let r = log_add(a, log_add(b, c));
            prop_assert!((l - r).abs() < 1e-9);
        }

        #[test]
        fn commutative(a in -50.0f64..0.0, b in -50.0f64..0.0) {
            prop_assert_eq!(log_add(a, b), log_add(b, a));
        }
    }
}
