//! Shapley kernel weights and how much of their mass a coalition budget
//! covers.

use crate::error::{Error, Result};

use super::sampling::SamplingOrder;

/// `C(n, k)` as `u128`, or `None` on overflow.
pub(crate) fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k as u128 {
        // c * (n - k + i) is divisible by i at every step.
        c = c.checked_mul(n as u128 - k as u128 + i)? / i;
    }
    Some(c)
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (1..=k)
        .map(|i| ((n - k + i) as f64).ln() - (i as f64).ln())
        .sum()
}

/// `C(n, k)` as a float, exact while it fits in `u128`.
pub(crate) fn binomial_f64(n: usize, k: usize) -> f64 {
    match binomial(n, k) {
        Some(c) => c as f64,
        None => ln_binomial(n, k).exp(),
    }
}

/// Per-coalition Shapley kernel weight
/// `(M - 1) / (C(M, s) * s * (M - s))` for a coalition of size `s`.
pub fn kernel_weight(features: usize, size: usize) -> Result<f64> {
    if size == 0 || size >= features {
        return Err(Error::InfiniteWeight { features, size });
    }
    let m = features as f64;
    let s = size.min(features - size) as f64;
    let numerator = m - 1.0;
    let tail = s * (m - s);
    Ok(match binomial(features, size) {
        Some(c) => numerator / (c as f64 * tail),
        None => (numerator.ln() - ln_binomial(features, size) - tail.ln()).exp(),
    })
}

/// Total kernel weight of every coalition of size `s`:
/// `C(M, s) * kernel_weight(M, s) = (M - 1) / (s * (M - s))`.
pub fn level_weight(features: usize, size: usize) -> f64 {
    (features as f64 - 1.0) / (size as f64 * (features - size) as f64)
}

/// Total kernel weight of all proper, non-empty coalitions.
pub fn total_weight(features: usize) -> f64 {
    (1..features).map(|s| level_weight(features, s)).sum()
}

/// Fraction of the total kernel weight carried by the coalitions that
/// [`sample_coalitions`](super::sample_coalitions) selects for this budget.
/// Evaluated per cardinality level without enumerating subsets.
pub fn weight_capture_rate(features: usize, budget: usize, order: SamplingOrder) -> Result<f64> {
    if features < 2 {
        return Err(Error::InvalidArgument(
            "capture rate needs at least 2 features".into(),
        ));
    }
    let mut remaining = budget as f64;
    let mut captured = 0.0;
    for size in order.levels(features) {
        if remaining <= 0.0 {
            break;
        }
        let count = binomial_f64(features, size);
        let level = level_weight(features, size);
        if count <= remaining {
            captured += level;
            remaining -= count;
        } else {
            captured += level * remaining / count;
            remaining = 0.0;
        }
    }
    Ok((captured / total_weight(features)).min(1.0))
}

/// `(size, per-coalition weight)` for every proper coalition size.
pub fn weights_curve(features: usize) -> Result<Vec<(usize, f64)>> {
    (1..features)
        .map(|s| kernel_weight(features, s).map(|w| (s, w)))
        .collect()
}

/// Enumeration weight `s! (M - s - 1)! / M!` of a coalition of size `s` not
/// containing the feature being attributed.
pub(crate) fn shapley_weight(features: usize, size: usize) -> f64 {
    1.0 / (features as f64 * binomial_f64(features - 1, size))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials() {
        assert_eq!(binomial(10, 3), Some(120));
        assert_eq!(binomial(10, 0), Some(1));
        assert_eq!(binomial(4, 5), Some(0));
        assert_eq!(binomial(1000, 1), Some(1000));
        assert!(binomial(1000, 500).is_none());
        let ln = ln_binomial(60, 30);
        assert!((ln.exp() / binomial(60, 30).unwrap() as f64 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_weight_values() {
        assert_eq!(kernel_weight(2, 1).unwrap(), 0.5);
        assert!((kernel_weight(10, 1).unwrap() - 0.1).abs() < 1e-16);
        assert!(matches!(
            kernel_weight(5, 0),
            Err(Error::InfiniteWeight { .. })
        ));
        assert!(matches!(
            kernel_weight(5, 5),
            Err(Error::InfiniteWeight { .. })
        ));
    }

    #[test]
    fn kernel_weight_symmetric() {
        for m in [2, 3, 7, 10, 100, 300] {
            for s in 1..m {
                assert_eq!(
                    kernel_weight(m, s).unwrap(),
                    kernel_weight(m, m - s).unwrap()
                );
            }
        }
    }

    #[test]
    fn level_weight_matches_per_coalition_weight() {
        for m in [3, 10, 40] {
            for s in 1..m {
                let expected = binomial_f64(m, s) * kernel_weight(m, s).unwrap();
                assert!((level_weight(m, s) - expected).abs() < 1e-12 * expected);
            }
        }
    }

    #[test]
    fn capture_rate_full_budget_is_one() {
        for order in [SamplingOrder::Ascending, SamplingOrder::Paired] {
            assert_eq!(weight_capture_rate(4, 14, order).unwrap(), 1.0);
            assert_eq!(weight_capture_rate(10, 5000, order).unwrap(), 1.0);
        }
    }

    #[test]
    fn capture_rate_large_m_level_one() {
        // Level one carries weight 1 of a total 2 (M-1)/M H_{M-1}.
        let m = 1000;
        let harmonic: f64 = (1..m).map(|i| 1.0 / i as f64).sum();
        let expected = 1.0 / (2.0 * (m as f64 - 1.0) / m as f64 * harmonic);
        let got = weight_capture_rate(m, m, SamplingOrder::Ascending).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.066).abs() < 0.002);
    }

    #[test]
    fn shapley_weights_sum_to_one() {
        for m in [1, 2, 5, 12] {
            let total: f64 = (0..m)
                .map(|s| binomial_f64(m - 1, s) * shapley_weight(m, s))
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
