//! Shapley attributions of a scalar function of a real vector, with the
//! interventional value function: features outside a coalition are replaced
//! by rows of a background set and the function is averaged over them.

mod exact;
mod kernel;
mod sampling;
mod weights;

pub use exact::{exact_shap, EXACT_FEATURE_LIMIT};
pub use kernel::{default_budget, kernel_shap, KernelConfig, Regularization};
pub use sampling::{sample_coalitions, Coalition, SamplingOrder, WeightedCoalition};
pub use weights::{kernel_weight, level_weight, total_weight, weight_capture_rate, weights_curve};

use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance on `base + sum(values) == f(x)`.
pub const LOCAL_ACCURACY_TOL: f64 = 1e-8;

/// A function being explained.
pub trait Model: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64]) -> f64;

    /// `Some((coefficients, intercept))` when the function is affine. Lets
    /// coalition values be computed from background column means instead of
    /// averaging over every background row.
    fn affine(&self) -> Option<(&[f64], f64)> {
        None
    }
}

/// Wraps a closure as a [`Model`].
pub struct FnModel<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnModel<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnModel { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Model for FnModel<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl Model for LinearModel {
    fn dim(&self) -> usize {
        self.coefficients.len()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.coefficients
            .iter()
            .zip(x)
            .map(|(b, v)| b * v)
            .sum::<f64>()
            + self.intercept
    }

    fn affine(&self) -> Option<(&[f64], f64)> {
        Some((&self.coefficients, self.intercept))
    }
}

/// Reference rows that stand in for absent features.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSet {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    means: Vec<f64>,
}

impl BackgroundSet {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().ok_or(Error::EmptyBackground)?.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "background row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(rows.len(), cols, data)
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::EmptyBackground);
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "background data has {} values, expected {rows} x {cols}",
                data.len()
            )));
        }
        let mut means = vec![0.0; cols];
        for r in data.chunks(cols.max(1)) {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= rows as f64);
        Ok(BackgroundSet {
            rows,
            cols,
            data,
            means,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column_means(&self) -> &[f64] {
        &self.means
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Kernel,
}

/// Attributions for one instance. Constructed only through
/// [`ShapResult::new`], which enforces local accuracy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapResult {
    pub base_value: f64,
    pub values: Vec<f64>,
    /// The explained function at the instance.
    pub output: f64,
    pub method: Method,
    /// Number of coalitions evaluated, excluding the empty and full ones.
    pub coalitions: usize,
}

impl ShapResult {
    pub fn new(
        base_value: f64,
        values: Vec<f64>,
        output: f64,
        method: Method,
        coalitions: usize,
    ) -> Result<Self> {
        let sum: f64 = values.iter().sum();
        if !((base_value + sum) - output).abs().le(&LOCAL_ACCURACY_TOL) {
            return Err(Error::LocalAccuracy {
                base: base_value,
                sum,
                value: output,
            });
        }
        Ok(ShapResult {
            base_value,
            values,
            output,
            method,
            coalitions,
        })
    }

    pub fn local_accuracy_gap(&self) -> f64 {
        (self.base_value + self.values.iter().sum::<f64>() - self.output).abs()
    }
}

fn check_dims(model: &dyn Model, x: &[f64], bg: &BackgroundSet) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::Shape(format!(
            "instance has {} features, model expects {}",
            x.len(),
            model.dim()
        )));
    }
    if bg.cols() != model.dim() {
        return Err(Error::Shape(format!(
            "background has {} columns, model expects {}",
            bg.cols(),
            model.dim()
        )));
    }
    Ok(())
}

/// Mean of `f` over background rows with the coalition's features set to
/// `x`. The full coalition returns `f(x)` directly.
pub fn coalition_value(
    model: &dyn Model,
    x: &[f64],
    coalition: &Coalition,
    bg: &BackgroundSet,
) -> Result<f64> {
    check_dims(model, x, bg)?;
    Ok(masked_value(model, x, &coalition.mask(x.len()), bg))
}

pub(crate) fn masked_value(model: &dyn Model, x: &[f64], mask: &[bool], bg: &BackgroundSet) -> f64 {
    if mask.iter().all(|m| *m) {
        return model.eval(x);
    }
    if let Some((coefficients, intercept)) = model.affine() {
        let means = bg.column_means();
        return coefficients
            .iter()
            .enumerate()
            .map(|(i, b)| b * if mask[i] { x[i] } else { means[i] })
            .sum::<f64>()
            + intercept;
    }
    let mut hybrid = vec![0.0; x.len()];
    let mut total = 0.0;
    for r in 0..bg.rows() {
        let row = bg.row(r);
        for i in 0..x.len() {
            hybrid[i] = if mask[i] { x[i] } else { row[i] };
        }
        total += model.eval(&hybrid);
    }
    total / bg.rows() as f64
}
