//! One-layer convolutional text classifier: fixed embeddings, 1D
//! convolution filters of several widths with ReLU and global max-pool, and
//! a linear head with sigmoid output.

mod io;
mod train;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::text::{embed, DocMatrix, EmbeddingMatrix, TokenizedDocument};

pub use io::{load_model, save_model, write_atomic, ModelBundle, ModelFile, MODEL_FILE_VERSION};
pub use train::{gradient, kink_margins, loss, train, Gradients, TrainConfig, TrainReport};

/// A width-`size` convolution over `size x m` windows of the embedded
/// document. Weights are row-major, one row per token in the window.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilter {
    pub id: usize,
    pub size: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ConvFilter {
    pub fn new(id: usize, size: usize, weights: Vec<f64>, bias: f64) -> Result<Self> {
        if size == 0 || weights.is_empty() || !weights.len().is_multiple_of(size) {
            return Err(Error::Shape(format!(
                "filter {id}: {} weights cannot form {size} rows",
                weights.len()
            )));
        }
        Ok(ConvFilter {
            id,
            size,
            weights,
            bias,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len() / self.size
    }

    /// Row `r` of the weight matrix.
    pub fn row(&self, r: usize) -> &[f64] {
        let m = self.dim();
        &self.weights[r * m..(r + 1) * m]
    }
}

/// Linear layer over the pooled features. The model output is
/// `sigmoid(weights . theta + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl DenseHead {
    pub fn logit(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "feature vector has length {}, head expects {}",
                theta.len(),
                self.weights.len()
            )));
        }
        Ok(self
            .weights
            .iter()
            .zip(theta)
            .map(|(w, t)| w * t)
            .sum::<f64>()
            + self.bias)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Filter widths and counts plus the padded document length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// `(width, count)` pairs, in filter-id order.
    pub filters: Vec<(usize, usize)>,
    pub pad_len: usize,
}

impl Architecture {
    /// 50 filters each of widths 1, 2 and 3 over 1000-token documents.
    pub fn full() -> Self {
        Architecture {
            filters: vec![(1, 50), (2, 50), (3, 50)],
            pad_len: crate::text::DEFAULT_PAD_LEN,
        }
    }

    /// Small model used by tests and the bundled assets.
    pub fn desk() -> Self {
        Architecture {
            filters: vec![(1, 4), (2, 4), (3, 4)],
            pad_len: 64,
        }
    }

    pub fn filter_count(&self) -> usize {
        self.filters.iter().map(|(_, c)| c).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub embeddings: Arc<EmbeddingMatrix>,
    pub filters: Vec<ConvFilter>,
    pub head: DenseHead,
    pub pad_len: usize,
}

impl CnnModel {
    pub fn new(
        embeddings: Arc<EmbeddingMatrix>,
        filters: Vec<ConvFilter>,
        head: DenseHead,
        pad_len: usize,
    ) -> Result<Self> {
        let m = embeddings.dim();
        for (j, f) in filters.iter().enumerate() {
            if f.id != j {
                return Err(Error::Shape(format!("filter at index {j} has id {}", f.id)));
            }
            if f.dim() != m {
                return Err(Error::Shape(format!(
                    "filter {j} has row width {}, embeddings have {m}",
                    f.dim()
                )));
            }
            if f.size > pad_len {
                return Err(Error::Shape(format!(
                    "filter {j} of width {} is wider than the padded length {pad_len}",
                    f.size
                )));
            }
        }
        if head.weights.len() != filters.len() {
            return Err(Error::Shape(format!(
                "head has {} weights for {} filters",
                head.weights.len(),
                filters.len()
            )));
        }
        Ok(CnnModel {
            embeddings,
            filters,
            head,
            pad_len,
        })
    }

    /// Random initialisation: every filter weight and bias is uniform on
    /// `(-a, a)` with `a = sqrt(6 / (n*m + 1))`; the head uses `n*m = 1`
    /// with `h` inputs, i.e. `a = sqrt(6 / (h + 1))`, and a zero bias.
    pub fn init(embeddings: Arc<EmbeddingMatrix>, arch: &Architecture, seed: u64) -> Result<Self> {
        let m = embeddings.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut filters = Vec::with_capacity(arch.filter_count());
        for &(size, count) in &arch.filters {
            let a = (6.0 / (size * m + 1) as f64).sqrt();
            for _ in 0..count {
                let weights = (0..size * m).map(|_| rng.random_range(-a..a)).collect();
                let bias = rng.random_range(-a..a);
                filters.push(ConvFilter::new(filters.len(), size, weights, bias)?);
            }
        }
        let h = filters.len();
        let a = (6.0 / (h + 1) as f64).sqrt();
        let head = DenseHead {
            weights: (0..h).map(|_| rng.random_range(-a..a)).collect(),
            bias: 0.0,
        };
        Self::new(embeddings, filters, head, arch.pad_len)
    }

    /// Total filter count `h`.
    pub fn filter_count(&self) -> usize {
        self.filters.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings.dim()
    }

    /// Distinct filter widths, ascending.
    pub fn filter_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.filters.iter().map(|f| f.size).collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
    }

    pub fn embed(&self, doc: &TokenizedDocument) -> Result<DocMatrix> {
        if doc.padded_len() != self.pad_len {
            return Err(Error::Shape(format!(
                "document padded to {} tokens, model expects {}",
                doc.padded_len(),
                self.pad_len
            )));
        }
        embed(doc, &self.embeddings)
    }
}

/// Pre-activation and post-ReLU values of one filter at every window.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvOutput {
    pub values: Vec<f64>,
    pub relu_values: Vec<f64>,
}

pub fn conv_forward(filter: &ConvFilter, embedded: &DocMatrix) -> Result<ConvOutput> {
    let n = filter.size;
    if embedded.rows < n {
        return Err(Error::Shape(format!(
            "document of {} rows is shorter than filter width {n}",
            embedded.rows
        )));
    }
    if embedded.cols != filter.dim() {
        return Err(Error::Shape(format!(
            "embedded width {} does not match filter width {}",
            embedded.cols,
            filter.dim()
        )));
    }
    let values: Vec<f64> = (0..=embedded.rows - n)
        .map(|k| {
            let window = embedded.window(k, n);
            filter
                .weights
                .iter()
                .zip(window)
                .map(|(w, x)| w * x)
                .sum::<f64>()
                + filter.bias
        })
        .collect();
    let relu_values = values.iter().map(|v| v.max(0.0)).collect();
    Ok(ConvOutput {
        values,
        relu_values,
    })
}

/// Pooled activations of every filter and the window each one selected.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtraction {
    pub theta: Vec<f64>,
    /// First window start attaining the maximum.
    pub argmax: Vec<usize>,
    pub sizes: Vec<usize>,
    /// `true` where ReLU suppressed every window (`theta == 0`).
    pub zero: Vec<bool>,
}

impl FeatureExtraction {
    /// Inclusive token span `[start, end]` selected by filter `j`.
    pub fn span(&self, j: usize) -> (usize, usize) {
        let start = self.argmax[j];
        (start, start + self.sizes[j] - 1)
    }
}

pub fn extract_features(model: &CnnModel, doc: &TokenizedDocument) -> Result<FeatureExtraction> {
    let embedded = model.embed(doc)?;
    extract_from_embedded(model, &embedded)
}

pub(crate) fn extract_from_embedded(
    model: &CnnModel,
    embedded: &DocMatrix,
) -> Result<FeatureExtraction> {
    let h = model.filter_count();
    let mut out = FeatureExtraction {
        theta: Vec::with_capacity(h),
        argmax: Vec::with_capacity(h),
        sizes: Vec::with_capacity(h),
        zero: Vec::with_capacity(h),
    };
    for filter in &model.filters {
        let conv = conv_forward(filter, embedded)?;
        let (best, value) = first_max(&conv.relu_values);
        out.theta.push(value);
        out.argmax.push(best);
        out.sizes.push(filter.size);
        out.zero.push(value == 0.0);
    }
    Ok(out)
}

/// Index and value of the first maximal element.
pub(crate) fn first_max(values: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (k, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = k;
        }
    }
    (best, values[best])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub logit: f64,
    pub probability: f64,
}

pub fn classify(model: &CnnModel, theta: &[f64]) -> Result<Prediction> {
    let logit = model.head.logit(theta)?;
    Ok(Prediction {
        logit,
        probability: sigmoid(logit),
    })
}

pub fn predict(model: &CnnModel, doc: &TokenizedDocument) -> Result<Prediction> {
    let features = extract_features(model, doc)?;
    classify(model, &features.theta)
}
