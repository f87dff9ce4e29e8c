//! Monte Carlo study of kernel SHAP against exact Shapley values on a
//! ten-feature linear model with correlated Gaussian inputs.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::shapley::{
    exact_shap, kernel_shap, weight_capture_rate, BackgroundSet, FnModel, KernelConfig,
    LinearModel, Model, Regularization, SamplingOrder,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub mean: Vec<f64>,
    /// Row-major `M x M`.
    pub covariance: Vec<Vec<f64>>,
    pub noise_std: f64,
    pub background_size: usize,
    pub budgets: Vec<usize>,
    /// Also run with every proper coalition.
    pub include_full: bool,
    pub replications: usize,
    pub seed: u64,
    pub order: SamplingOrder,
    pub regularization: Regularization,
    /// Explain an OLS fit to the noisy responses instead of the true function.
    pub fit_regression: bool,
}

impl SimulationConfig {
    /// The ten-feature setup: three correlated blocks with 0.1 off-diagonal
    /// covariance, zero mean, unit noise.
    pub fn ten_feature() -> Self {
        let blocks: [std::ops::Range<usize>; 3] = [0..2, 2..5, 5..10];
        let covariance = (0..10)
            .map(|i| {
                (0..10)
                    .map(|j| {
                        if i == j {
                            1.0
                        } else if blocks.iter().any(|b| b.contains(&i) && b.contains(&j)) {
                            0.1
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        SimulationConfig {
            coefficients: vec![1.5, 1.5, 1.5, 1.0, 1.4, 0.5, 1.8, 1.8, -1.0, -1.5],
            intercept: 0.0,
            mean: vec![0.0; 10],
            covariance,
            noise_std: 1.0,
            background_size: 1000,
            budgets: vec![100, 200, 500],
            include_full: true,
            replications: 50,
            seed: 0,
            order: SamplingOrder::default(),
            regularization: Regularization::None,
            fit_regression: false,
        }
    }

    pub fn features(&self) -> usize {
        self.coefficients.len()
    }

    fn validate(&self) -> Result<()> {
        let m = self.features();
        if m < 2
            || self.mean.len() != m
            || self.covariance.len() != m
            || self.covariance.iter().any(|r| r.len() != m)
        {
            return Err(Error::Config(format!(
                "need at least 2 features with matching mean ({}) and {m}x{m} covariance",
                self.mean.len()
            )));
        }
        if self.background_size == 0 || self.replications == 0 {
            return Err(Error::Config(
                "background size and replications must be positive".into(),
            ));
        }
        if self.budgets.iter().any(|k| *k < 2) {
            return Err(Error::Config("every budget must be at least 2".into()));
        }
        Ok(())
    }

    /// Every budget to run, the full enumeration last when requested.
    pub fn all_budgets(&self) -> Vec<usize> {
        let full = (1usize << self.features().min(62)) - 2;
        let mut out: Vec<usize> = self.budgets.iter().map(|k| (*k).min(full)).collect();
        if self.include_full && !out.contains(&full) {
            out.push(full);
        }
        out
    }
}

fn cholesky(cov: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = cov.len();
    let matrix = DMatrix::from_fn(m, m, |i, j| cov[i][j]);
    if (0..m).any(|i| (0..m).any(|j| matrix[(i, j)] != matrix[(j, i)])) {
        return Err(Error::Config("covariance is not symmetric".into()));
    }
    matrix
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::Config("covariance is not positive definite".into()))
}

/// `n` draws of `mean + L z` with `L` the lower Cholesky factor of `cov`.
pub fn sample_mvn(
    mean: &[f64],
    cov: &[Vec<f64>],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    if cov.len() != mean.len() || cov.iter().any(|r| r.len() != mean.len()) {
        return Err(Error::Config("covariance shape does not match mean".into()));
    }
    let l = cholesky(cov)?;
    let m = mean.len();
    Ok((0..n)
        .map(|_| {
            let z = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
            let x = &l * z;
            (0..m).map(|i| mean[i] + x[i]).collect()
        })
        .collect())
}

/// Least squares with intercept via the normal equations.
fn ols(rows: &[Vec<f64>], y: &[f64]) -> Result<LinearModel> {
    let m = rows[0].len();
    let design = DMatrix::from_fn(
        rows.len(),
        m + 1,
        |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] },
    );
    let target = DVector::from_column_slice(y);
    let gram = design.transpose() * &design;
    let rhs = design.transpose() * target;
    let beta = gram
        .cholesky()
        .ok_or_else(|| Error::Config("regression design is singular".into()))?
        .solve(&rhs);
    Ok(LinearModel {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
    })
}

struct Replication {
    x: Vec<f64>,
    truth: Vec<f64>,
    analytic_gap: f64,
    /// Per budget, the kernel estimate.
    kernel: Vec<Vec<f64>>,
    local_accuracy_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetSummary {
    pub budget: usize,
    pub capture_rate: f64,
    /// Per feature, mean of `|exact - kernel|` over replications.
    pub mean_error: Vec<f64>,
    /// Per feature, population standard deviation of the same.
    pub std_error: Vec<f64>,
    /// Mean over features of `mean_error`.
    pub overall_mean_error: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub features: usize,
    pub replications: usize,
    pub background_size: usize,
    pub seed: u64,
    /// First replication's point and values, for a worked example column.
    pub example_x: Vec<f64>,
    pub example_truth: Vec<f64>,
    pub example_kernel: Vec<Vec<f64>>,
    /// Largest `|exact - b_i (x_i - mean_i)|` seen, with `b` the explained
    /// model's coefficients.
    pub max_analytic_gap: f64,
    pub max_local_accuracy_gap: f64,
    pub budgets: Vec<BudgetSummary>,
}

impl SimulationReport {
    /// One row per feature: the example's true and kernel values, then mean
    /// and std error per budget.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("feature,true");
        for b in &self.budgets {
            let _ = write!(out, ",ks_{}", b.budget);
        }
        for b in &self.budgets {
            let _ = write!(out, ",err_mean_{0},err_std_{0}", b.budget);
        }
        out.push('\n');
        for i in 0..self.features {
            let _ = write!(out, "x{},{}", i + 1, self.example_truth[i]);
            for k in &self.example_kernel {
                let _ = write!(out, ",{}", k[i]);
            }
            for b in &self.budgets {
                let _ = write!(out, ",{},{}", b.mean_error[i], b.std_error[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn capture_csv(&self) -> String {
        let mut out = String::from("M,K,capture_rate\n");
        for b in &self.budgets {
            let _ = writeln!(out, "{},{},{}", self.features, b.budget, b.capture_rate);
        }
        out
    }
}

fn replicate(config: &SimulationConfig, r: usize, budgets: &[usize]) -> Result<Replication> {
    let m = config.features();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(r as u64);
    let rows = sample_mvn(
        &config.mean,
        &config.covariance,
        config.background_size + 1,
        &mut rng,
    )?;
    let (x, bg_rows) = rows.split_first().expect("at least one row");
    let truth_model = LinearModel {
        coefficients: config.coefficients.clone(),
        intercept: config.intercept,
    };
    let noise: Vec<f64> = (0..bg_rows.len())
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            config.noise_std * z
        })
        .collect();
    let explained = if config.fit_regression {
        let y: Vec<f64> = bg_rows
            .iter()
            .zip(&noise)
            .map(|(row, e)| truth_model.eval(row) + e)
            .collect();
        ols(bg_rows, &y)?
    } else {
        truth_model
    };
    let bg = BackgroundSet::from_rows(bg_rows)?;
    // opaque wrapper: coalition values average over every background row
    let f = FnModel::new(m, |v: &[f64]| explained.eval(v));

    let exact = exact_shap(&f, x, &bg)?;
    let means = bg.column_means();
    let analytic_gap = (0..m)
        .map(|i| (exact.values[i] - explained.coefficients[i] * (x[i] - means[i])).abs())
        .fold(0.0, f64::max);
    let mut kernel = Vec::with_capacity(budgets.len());
    let mut local_accuracy_gap = exact.local_accuracy_gap();
    for &budget in budgets {
        let cfg = KernelConfig {
            budget,
            seed: config.seed.wrapping_add(r as u64),
            order: config.order,
            regularization: config.regularization,
            allow_min_norm: false,
        };
        let ks = kernel_shap(&f, x, &bg, &cfg)?;
        local_accuracy_gap = local_accuracy_gap.max(ks.local_accuracy_gap());
        kernel.push(ks.values);
    }
    Ok(Replication {
        x: x.to_vec(),
        truth: exact.values,
        analytic_gap,
        kernel,
        local_accuracy_gap,
    })
}

/// Runs every replication (concurrently, each with its own random stream)
/// and summarizes `|exact - kernel|` per feature and budget.
pub fn run_linear_study(config: &SimulationConfig) -> Result<SimulationReport> {
    config.validate()?;
    let m = config.features();
    let budgets = config.all_budgets();
    let reps = (0..config.replications)
        .into_par_iter()
        .map(|r| replicate(config, r, &budgets))
        .collect::<Result<Vec<_>>>()?;

    let n = reps.len() as f64;
    let summaries = budgets
        .iter()
        .enumerate()
        .map(|(b, &budget)| {
            let errors: Vec<Vec<f64>> = reps
                .iter()
                .map(|rep| {
                    (0..m)
                        .map(|i| (rep.truth[i] - rep.kernel[b][i]).abs())
                        .collect()
                })
                .collect();
            let mean_error: Vec<f64> = (0..m)
                .map(|i| errors.iter().map(|e| e[i]).sum::<f64>() / n)
                .collect();
            let std_error: Vec<f64> = (0..m)
                .map(|i| {
                    (errors
                        .iter()
                        .map(|e| (e[i] - mean_error[i]).powi(2))
                        .sum::<f64>()
                        / n)
                        .sqrt()
                })
                .collect();
            let max_error = errors.iter().flatten().copied().fold(0.0, f64::max);
            Ok(BudgetSummary {
                budget,
                capture_rate: weight_capture_rate(m, budget, config.order)?,
                overall_mean_error: mean_error.iter().sum::<f64>() / m as f64,
                mean_error,
                std_error,
                max_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let first = &reps[0];
    Ok(SimulationReport {
        features: m,
        replications: reps.len(),
        background_size: config.background_size,
        seed: config.seed,
        example_x: first.x.clone(),
        example_truth: first.truth.clone(),
        example_kernel: first.kernel.clone(),
        max_analytic_gap: reps.iter().map(|r| r.analytic_gap).fold(0.0, f64::max),
        max_local_accuracy_gap: reps
            .iter()
            .map(|r| r.local_accuracy_gap)
            .fold(0.0, f64::max),
        budgets: summaries,
    })
}
