use rayon::prelude::*;

use super::weights::shapley_weight;
use super::{check_dims, masked_value, BackgroundSet, Method, Model, ShapResult};
use crate::error::{Error, Result};

/// Largest feature count accepted by [`exact_shap`]; it evaluates `2^M`
/// coalitions.
pub const EXACT_FEATURE_LIMIT: usize = 20;

/// Shapley values by enumerating every coalition.
pub fn exact_shap(model: &dyn Model, x: &[f64], bg: &BackgroundSet) -> Result<ShapResult> {
    check_dims(model, x, bg)?;
    let m = x.len();
    if m > EXACT_FEATURE_LIMIT {
        return Err(Error::Budget {
            features: m,
            limit: EXACT_FEATURE_LIMIT,
        });
    }
    if m == 0 {
        return Err(Error::InvalidArgument(
            "cannot explain a function of no inputs".into(),
        ));
    }
    let full = (1usize << m) - 1;
    let values: Vec<f64> = (0..=full)
        .into_par_iter()
        .map(|bits| {
            let mask: Vec<bool> = (0..m).map(|i| bits >> i & 1 == 1).collect();
            masked_value(model, x, &mask, bg)
        })
        .collect();

    let weights: Vec<f64> = (0..m).map(|s| shapley_weight(m, s)).collect();
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1 << i;
        for bits in (0..=full).filter(|b| b & bit == 0) {
            let size = bits.count_ones() as usize;
            *p += weights[size] * (values[bits | bit] - values[bits]);
        }
    }
    ShapResult::new(values[0], phi, values[full], Method::Exact, full - 1)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::shapley::{FnModel, LinearModel};

    fn random_bg(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> BackgroundSet {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        BackgroundSet::from_flat(rows, cols, data).unwrap()
    }

    /// Average marginal contribution over all orderings.
    fn permutation_oracle(f: &dyn Model, x: &[f64], bg: &BackgroundSet) -> Vec<f64> {
        fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.clone();
                let head = rest.remove(i);
                for mut p in permutations(rest) {
                    p.insert(0, head);
                    out.push(p);
                }
            }
            out
        }
        let m = x.len();
        let perms = permutations((0..m).collect());
        let mut phi = vec![0.0; m];
        for p in &perms {
            let mut mask = vec![false; m];
            let mut prev = masked_value(f, x, &mask, bg);
            for &i in p {
                mask[i] = true;
                let next = masked_value(f, x, &mask, bg);
                phi[i] += next - prev;
                prev = next;
            }
        }
        phi.iter().map(|v| v / perms.len() as f64).collect()
    }

    #[test]
    fn linear_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bg = random_bg(30, 5, &mut rng);
        let b = vec![1.0, -2.0, 0.5, 3.0, 0.0];
        let lin = LinearModel {
            coefficients: b.clone(),
            intercept: 0.7,
        };
        let opaque = FnModel::new(5, |x: &[f64]| lin.eval(x));
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        for model in [&lin as &dyn Model, &opaque] {
            let r = exact_shap(model, &x, &bg).unwrap();
            for i in 0..5 {
                let expected = b[i] * (x[i] - bg.column_means()[i]);
                assert!((r.values[i] - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bg = random_bg(4, 3, &mut rng);
        let f = FnModel::new(3, |_: &[f64]| 4.2);
        let r = exact_shap(&f, &[1.0, 2.0, 3.0], &bg).unwrap();
        assert_eq!(r.values, vec![0.0; 3]);
        assert_eq!(r.base_value, 4.2);
    }

    #[test]
    fn matches_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bg = random_bg(6, 3, &mut rng);
        // arbitrary tabulated function of the three inputs
        let table: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = FnModel::new(3, move |x: &[f64]| {
            let cell = |v: f64| ((v + 2.0).clamp(0.0, 3.999)) as usize;
            table[cell(x[0]) * 16 + cell(x[1]) * 4 + cell(x[2])] + x[0] * x[1] * x[2]
        });
        let x = [0.4, -1.3, 1.9];
        let r = exact_shap(&f, &x, &bg).unwrap();
        let oracle = permutation_oracle(&f, &x, &bg);
        for i in 0..3 {
            assert!((r.values[i] - oracle[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn dummy_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rows: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        for r in rows.iter_mut() {
            r[1] = r[0];
        }
        let bg = BackgroundSet::from_rows(&rows).unwrap();
        // features 0 and 1 exchangeable, feature 3 ignored
        let f = FnModel::new(4, |x: &[f64]| {
            (x[0] * x[1]).sin() + x[0] + x[1] + x[2] * x[2]
        });
        let x = [0.7, 0.7, -0.4, 5.0];
        let r = exact_shap(&f, &x, &bg).unwrap();
        assert!(r.values[3].abs() < 1e-12);
        assert!((r.values[0] - r.values[1]).abs() < 1e-12);
    }

    #[test]
    fn guard_on_feature_count() {
        let bg = BackgroundSet::from_flat(1, 21, vec![0.0; 21]).unwrap();
        let f = FnModel::new(21, |_: &[f64]| 0.0);
        assert!(matches!(
            exact_shap(&f, &[0.0; 21], &bg),
            Err(Error::Budget { features: 21, .. })
        ));
    }
}
