use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::sampling::{sample_coalitions, SamplingOrder, WeightedCoalition};
use super::{check_dims, masked_value, BackgroundSet, Method, Model, ShapResult};
use crate::error::{Error, Result};

/// The customary coalition budget `2M + 2^11`.
pub fn default_budget(features: usize) -> usize {
    2 * features + (1 << 11)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularization {
    #[default]
    None,
    /// Select features with an L1-penalised fit of the coalition values
    /// first, then solve the constrained problem on the survivors only.
    /// Unselected features get exactly zero.
    L1 { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    /// Number of proper coalitions to evaluate.
    pub budget: usize,
    pub seed: u64,
    pub order: SamplingOrder,
    pub regularization: Regularization,
    /// Fall back to a minimum-norm solution instead of failing when the
    /// sampled coalitions do not identify every attribution.
    pub allow_min_norm: bool,
}

impl KernelConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        KernelConfig {
            budget,
            seed,
            order: SamplingOrder::default(),
            regularization: Regularization::None,
            allow_min_norm: false,
        }
    }
}

/// Kernel SHAP: weighted least squares of coalition values on coalition
/// membership, with the base value pinned to the empty coalition and the
/// attributions constrained to sum to `f(x) - base`.
pub fn kernel_shap(
    model: &dyn Model,
    x: &[f64],
    bg: &BackgroundSet,
    config: &KernelConfig,
) -> Result<ShapResult> {
    check_dims(model, x, bg)?;
    let m = x.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "kernel_shap needs at least 2 features, got {m}"
        )));
    }
    if config.budget < 2 {
        return Err(Error::InvalidArgument(format!(
            "coalition budget must be at least 2, got {}",
            config.budget
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let coalitions = sample_coalitions(m, config.budget, config.order, &mut rng)?;
    let base = masked_value(model, x, &vec![false; m], bg);
    let output = model.eval(x);
    let values: Vec<f64> = coalitions
        .par_iter()
        .map(|c| masked_value(model, x, &c.coalition.mask(m), bg))
        .collect();

    let mut active: Vec<usize> = match config.regularization {
        Regularization::None => (0..m).collect(),
        Regularization::L1 { alpha } => lasso_support(&coalitions, &values, base, output, m, alpha),
    };
    if active.is_empty() {
        active = (0..m).collect();
    }
    let phi = solve_constrained(
        &coalitions,
        &values,
        base,
        output,
        m,
        &active,
        config.allow_min_norm,
    )?;
    ShapResult::new(base, phi, output, Method::Kernel, coalitions.len())
}

/// Solves for the attributions of `active` features; all others are zero.
/// The last active feature is eliminated through the sum constraint, which
/// leaves an unconstrained weighted least-squares problem in the rest.
fn solve_constrained(
    coalitions: &[WeightedCoalition],
    values: &[f64],
    base: f64,
    output: f64,
    features: usize,
    active: &[usize],
    allow_min_norm: bool,
) -> Result<Vec<f64>> {
    let total = output - base;
    let mut phi = vec![0.0; features];
    let (&last, rest) = active.split_last().expect("active set is non-empty");
    if rest.is_empty() {
        phi[last] = total;
        return Ok(phi);
    }
    let p = rest.len();
    let weight_sum: f64 = coalitions.iter().map(|c| c.weight).sum();

    let mut normal = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for (c, v) in coalitions.iter().zip(values) {
        let w = c.weight / weight_sum;
        let z_last = if c.coalition.contains(last) { 1.0 } else { 0.0 };
        for (r, &i) in row.iter_mut().zip(rest) {
            *r = (if c.coalition.contains(i) { 1.0 } else { 0.0 }) - z_last;
        }
        let target = v - base - z_last * total;
        for a in 0..p {
            if row[a] == 0.0 {
                continue;
            }
            rhs[a] += w * row[a] * target;
            for b in 0..p {
                normal[(a, b)] += w * row[a] * row[b];
            }
        }
    }

    let svd = normal.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * 1e-12;
    let rank = svd.rank(eps);
    let solution = if rank < p {
        if !allow_min_norm {
            return Err(Error::RankDeficient {
                rank,
                unknowns: p,
                needed: features - 1,
            });
        }
        svd.solve(&rhs, eps)
            .map_err(|e| Error::Shape(e.to_string()))?
    } else {
        match normal.cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => svd
                .solve(&rhs, eps)
                .map_err(|e| Error::Shape(e.to_string()))?,
        }
    };

    let mut assigned = 0.0;
    for (k, &i) in rest.iter().enumerate() {
        phi[i] = solution[k];
        assigned += solution[k];
    }
    phi[last] = total - assigned;
    Ok(phi)
}

/// Features with a nonzero coefficient in an L1-penalised fit. Each
/// coalition contributes two rows, one for each of the two ways of pinning
/// the intercept (empty coalition or full coalition), scaled so that the
/// pair reproduces the kernel weight.
fn lasso_support(
    coalitions: &[WeightedCoalition],
    values: &[f64],
    base: f64,
    output: f64,
    features: usize,
    alpha: f64,
) -> Vec<usize> {
    let weight_sum: f64 = coalitions.iter().map(|c| c.weight).sum();
    let n = coalitions.len() * 2;
    let mut design = vec![0.0; n * features];
    let mut target = vec![0.0; n];
    for (k, (c, v)) in coalitions.iter().zip(values).enumerate() {
        let w = c.weight / weight_sum;
        let s = c.coalition.len() as f64;
        let lo = (w * (features as f64 - s)).sqrt();
        let hi = (w * s).sqrt();
        let adj = v - base;
        for i in 0..features {
            let z = if c.coalition.contains(i) { 1.0 } else { 0.0 };
            design[2 * k * features + i] = lo * z;
            design[(2 * k + 1) * features + i] = hi * (z - 1.0);
        }
        target[2 * k] = lo * adj;
        target[2 * k + 1] = hi * (adj - (output - base));
    }
    let coef = lasso_coordinate_descent(&design, &target, n, features, alpha);
    coef.iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Minimises `1/(2n) |y - b0 - X b|^2 + alpha |b|_1` with an unpenalised
/// intercept, by cyclic coordinate descent on centred data.
fn lasso_coordinate_descent(x: &[f64], y: &[f64], n: usize, p: usize, alpha: f64) -> Vec<f64> {
    let mut col_mean = vec![0.0; p];
    for r in 0..n {
        for j in 0..p {
            col_mean[j] += x[r * p + j];
        }
    }
    col_mean.iter_mut().for_each(|v| *v /= n as f64);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc: Vec<f64> = (0..n * p).map(|k| x[k] - col_mean[k % p]).collect();
    let mut resid: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let col_sq: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|r| xc[r * p + j].powi(2)).sum::<f64>() / n as f64)
        .collect();
    let mut beta = vec![0.0; p];
    for _ in 0..10_000 {
        let mut max_step: f64 = 0.0;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let rho = (0..n).map(|r| xc[r * p + j] * resid[r]).sum::<f64>() / n as f64
                + col_sq[j] * beta[j];
            let updated = soft_threshold(rho, alpha) / col_sq[j];
            let step = updated - beta[j];
            if step != 0.0 {
                for r in 0..n {
                    resid[r] -= step * xc[r * p + j];
                }
                beta[j] = updated;
                max_step = max_step.max(step.abs());
            }
        }
        if max_step < 1e-12 {
            break;
        }
    }
    beta
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}
