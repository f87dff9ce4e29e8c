use std::sync::Mutex;

use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::Serialize;

use ngram_shap::cnn::{extract_features, load_model, predict, CnnModel};
use ngram_shap::explain::{
    exact_dedup, explain_document, feature_background, merge_dedup, DedupedAttribution,
    ExplainConfig, Target,
};
use ngram_shap::ranking::{ira_score, ura_score};
use ngram_shap::shapley::{self, BackgroundSet, FnModel, KernelConfig, SamplingOrder, ShapResult};
use ngram_shap::sim::{run_linear_study, SimulationConfig};
use ngram_shap::similarity::similarity_histogram;
use ngram_shap::text::{tokenize, TokenizedDocument, Vocabulary};

create_exception!(
    ngram_shap,
    NgramShapError,
    PyValueError,
    "Raised for library errors."
);

fn err(e: ngram_shap::Error) -> PyErr {
    match e {
        ngram_shap::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => NgramShapError::new_err(other.to_string()),
    }
}

/// Converts any serialisable value to plain Python objects via JSON.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| NgramShapError::new_err(e.to_string()))?;
    let json = PyModule::import(py, "json")?;
    Ok(json.call_method1("loads", (text,))?.unbind())
}

fn parse_order(order: &str) -> PyResult<SamplingOrder> {
    order.parse().map_err(PyValueError::new_err)
}

fn background(rows: Vec<Vec<f64>>) -> PyResult<BackgroundSet> {
    BackgroundSet::from_rows(&rows).map_err(err)
}

/// Runs `f` with the GIL released while `callable` is evaluated from worker
/// threads. The first Python exception raised by the callable is re-raised.
fn with_callable<R>(
    py: Python<'_>,
    callable: Py<PyAny>,
    dim: usize,
    f: impl FnOnce(&dyn shapley::Model) -> ngram_shap::Result<R> + Send,
) -> PyResult<R>
where
    R: Send,
{
    let failure: Mutex<Option<PyErr>> = Mutex::new(None);
    let model = FnModel::new(dim, |x: &[f64]| {
        Python::attach(|py| {
            let out = callable
                .call1(py, (x.to_vec(),))
                .and_then(|v| v.extract::<f64>(py));
            match out {
                Ok(v) => v,
                Err(e) => {
                    failure.lock().unwrap().get_or_insert(e);
                    f64::NAN
                }
            }
        })
    });
    let result = py.detach(|| f(&model));
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    result.map_err(err)
}

#[derive(Serialize)]
struct ShapOut<'a> {
    base_value: f64,
    values: &'a [f64],
    output: f64,
    coalitions: usize,
}

fn shap_out(py: Python<'_>, r: &ShapResult) -> PyResult<Py<PyAny>> {
    to_py(
        py,
        &ShapOut {
            base_value: r.base_value,
            values: &r.values,
            output: r.output,
            coalitions: r.coalitions,
        },
    )
}

/// Kernel SHAP of a Python callable `f(list[float]) -> float` at `x`.
#[pyfunction]
#[pyo3(signature = (f, x, background_rows, budget=None, seed=0, order="ascending"))]
fn kernel_shap(
    py: Python<'_>,
    f: Py<PyAny>,
    x: Vec<f64>,
    background_rows: Vec<Vec<f64>>,
    budget: Option<usize>,
    seed: u64,
    order: &str,
) -> PyResult<Py<PyAny>> {
    let bg = background(background_rows)?;
    let mut config = KernelConfig::new(
        budget.unwrap_or_else(|| shapley::default_budget(x.len())),
        seed,
    );
    config.order = parse_order(order)?;
    let r = with_callable(py, f, x.len(), |m| {
        shapley::kernel_shap(m, &x, &bg, &config)
    })?;
    shap_out(py, &r)
}

/// Exact Shapley values of a Python callable by full enumeration.
#[pyfunction]
fn exact_shap(
    py: Python<'_>,
    f: Py<PyAny>,
    x: Vec<f64>,
    background_rows: Vec<Vec<f64>>,
) -> PyResult<Py<PyAny>> {
    let bg = background(background_rows)?;
    let r = with_callable(py, f, x.len(), |m| shapley::exact_shap(m, &x, &bg))?;
    shap_out(py, &r)
}

#[pyfunction]
fn kernel_weight(features: usize, size: usize) -> PyResult<f64> {
    shapley::kernel_weight(features, size).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (features, budget, order="ascending"))]
fn weight_capture_rate(features: usize, budget: usize, order: &str) -> PyResult<f64> {
    shapley::weight_capture_rate(features, budget, parse_order(order)?).map_err(err)
}

#[pyfunction]
fn weights_curve(features: usize) -> PyResult<Vec<(usize, f64)>> {
    shapley::weights_curve(features).map_err(err)
}

#[pyfunction]
#[pyo3(name = "ira_score")]
fn py_ira(ranks: Vec<usize>, k: usize) -> PyResult<f64> {
    ira_score(&ranks, k).map_err(err)
}

#[pyfunction]
#[pyo3(name = "ura_score")]
fn py_ura(ranks: Vec<usize>, k: usize) -> PyResult<f64> {
    ura_score(&ranks, k).map_err(err)
}

type Entry = ((usize, usize), f64, Vec<usize>, Vec<String>);

fn entries(items: Vec<Entry>) -> PyResult<Vec<DedupedAttribution>> {
    items
        .into_iter()
        .map(|((start, end), shap, filters, tokens)| {
            if end < start || tokens.len() != end - start + 1 {
                return Err(PyValueError::new_err(format!(
                    "span ({start}, {end}) needs {} tokens",
                    end.saturating_sub(start) + 1
                )));
            }
            Ok(DedupedAttribution {
                span: (start, end),
                ngram: tokens.join(" "),
                shap,
                filters,
                tokens,
            })
        })
        .collect()
}

/// Collapses entries `((start, end), shap, filters, tokens)` sharing a span,
/// then optionally merges overlapping spans.
#[pyfunction]
#[pyo3(signature = (items, merge=false))]
fn dedup(py: Python<'_>, items: Vec<Entry>, merge: bool) -> PyResult<Py<PyAny>> {
    let exact = ngram_shap::explain::dedup_spans(entries(items)?);
    if merge {
        to_py(py, &merge_dedup(&exact))
    } else {
        to_py(py, &exact)
    }
}

/// The ten-feature linear study comparing kernel and exact SHAP.
#[pyfunction]
#[pyo3(signature = (budgets=vec![100, 200, 500], replications=50, seed=0, order="ascending"))]
fn simulate(
    py: Python<'_>,
    budgets: Vec<usize>,
    replications: usize,
    seed: u64,
    order: &str,
) -> PyResult<Py<PyAny>> {
    let config = SimulationConfig {
        budgets,
        replications,
        seed,
        order: parse_order(order)?,
        ..SimulationConfig::ten_feature()
    };
    let report = py.detach(|| run_linear_study(&config)).map_err(err)?;
    to_py(py, &report)
}

/// A trained text CNN with its vocabulary.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    model: CnnModel,
    vocab: Vocabulary,
}

impl PyModel {
    fn doc(&self, text: &str) -> PyResult<TokenizedDocument> {
        tokenize(text, &self.vocab, self.model.pad_len).map_err(err)
    }
}

#[derive(Serialize)]
struct Explained<'a> {
    logit: f64,
    probability: f64,
    base_value: f64,
    attributions: &'a [ngram_shap::explain::Attribution],
    deduped: &'a [DedupedAttribution],
    merged: &'a [DedupedAttribution],
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bundle = load_model(path).map_err(err)?;
        Ok(PyModel {
            model: bundle.model,
            vocab: bundle.vocab,
        })
    }

    #[getter]
    fn filter_count(&self) -> usize {
        self.model.filter_count()
    }

    #[getter]
    fn filter_sizes(&self) -> Vec<usize> {
        self.model.filters.iter().map(|f| f.size).collect()
    }

    #[getter]
    fn pad_len(&self) -> usize {
        self.model.pad_len
    }

    /// `(logit, probability)`.
    fn predict(&self, text: &str) -> PyResult<(f64, f64)> {
        let p = predict(&self.model, &self.doc(text)?).map_err(err)?;
        Ok((p.logit, p.probability))
    }

    /// Max-pooled filter activations.
    fn features(&self, text: &str) -> PyResult<Vec<f64>> {
        Ok(extract_features(&self.model, &self.doc(text)?)
            .map_err(err)?
            .theta)
    }

    /// Feature rows for a list of background texts.
    fn background(&self, py: Python<'_>, texts: Vec<String>) -> PyResult<Vec<Vec<f64>>> {
        let docs = texts
            .iter()
            .map(|t| self.doc(t))
            .collect::<PyResult<Vec<_>>>()?;
        let bg = py
            .detach(|| feature_background(&self.model, &docs))
            .map_err(err)?;
        Ok((0..bg.rows()).map(|r| bg.row(r).to_vec()).collect())
    }

    #[pyo3(signature = (text, background_rows, budget=None, seed=0, target="logit"))]
    fn explain(
        &self,
        py: Python<'_>,
        text: &str,
        background_rows: Vec<Vec<f64>>,
        budget: Option<usize>,
        seed: u64,
        target: &str,
    ) -> PyResult<Py<PyAny>> {
        let bg = background(background_rows)?;
        let doc = self.doc(text)?;
        let config = ExplainConfig {
            budget,
            seed,
            target: target.parse::<Target>().map_err(PyValueError::new_err)?,
            ..ExplainConfig::default()
        };
        let e = py
            .detach(|| explain_document(&self.model, &doc, &bg, &config))
            .map_err(err)?;
        let deduped = exact_dedup(&e.attributions);
        let merged = merge_dedup(&deduped);
        to_py(
            py,
            &Explained {
                logit: e.logit,
                probability: e.probability,
                base_value: e.base_value,
                attributions: &e.attributions,
                deduped: &deduped,
                merged: &merged,
            },
        )
    }

    /// Pairwise filter similarity report.
    #[pyo3(signature = (segment_len=None))]
    fn similarity(&self, py: Python<'_>, segment_len: Option<usize>) -> PyResult<Py<PyAny>> {
        to_py(py, &similarity_histogram(&self.model, segment_len))
    }
}

#[pymodule(name = "ngram_shap")]
fn python_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NgramShapError", m.py().get_type::<NgramShapError>())?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(kernel_shap, m)?)?;
    m.add_function(wrap_pyfunction!(exact_shap, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_weight, m)?)?;
    m.add_function(wrap_pyfunction!(weight_capture_rate, m)?)?;
    m.add_function(wrap_pyfunction!(weights_curve, m)?)?;
    m.add_function(wrap_pyfunction!(py_ira, m)?)?;
    m.add_function(wrap_pyfunction!(py_ura, m)?)?;
    m.add_function(wrap_pyfunction!(dedup, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
