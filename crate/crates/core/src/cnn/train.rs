use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{classify, conv_forward, extract_from_embedded, sigmoid, CnnModel};
use crate::error::{Error, Result};
use crate::text::{DocMatrix, TokenizedDocument};

/// Gradient of the binary cross-entropy loss with respect to every trainable
/// parameter. Embeddings are frozen and have no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub filter_weights: Vec<Vec<f64>>,
    pub filter_bias: Vec<f64>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
    pub loss: f64,
}

impl Gradients {
    fn zeros(model: &CnnModel) -> Self {
        Gradients {
            filter_weights: model
                .filters
                .iter()
                .map(|f| vec![0.0; f.weights.len()])
                .collect(),
            filter_bias: vec![0.0; model.filter_count()],
            head_weights: vec![0.0; model.filter_count()],
            head_bias: 0.0,
            loss: 0.0,
        }
    }

    fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.filter_weights.iter_mut().zip(&other.filter_weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
        for (x, y) in self.filter_bias.iter_mut().zip(&other.filter_bias) {
            *x += scale * y;
        }
        for (x, y) in self.head_weights.iter_mut().zip(&other.head_weights) {
            *x += scale * y;
        }
        self.head_bias += scale * other.head_bias;
        self.loss += scale * other.loss;
    }
}

/// `-[y ln p + (1-y) ln(1-p)]` with `p = sigmoid(z)`, evaluated without
/// overflow.
pub(crate) fn bce_with_logit(z: f64, label: f64) -> f64 {
    z.max(0.0) - label * z + (-z.abs()).exp().ln_1p()
}

fn check_label(label: u8) -> Result<f64> {
    match label {
        0 => Ok(0.0),
        1 => Ok(1.0),
        other => Err(Error::InvalidArgument(format!(
            "label {other} is not 0 or 1"
        ))),
    }
}

pub fn gradient(model: &CnnModel, doc: &TokenizedDocument, label: u8) -> Result<Gradients> {
    let embedded = model.embed(doc)?;
    gradient_embedded(model, &embedded, check_label(label)?)
}

fn gradient_embedded(model: &CnnModel, embedded: &DocMatrix, label: f64) -> Result<Gradients> {
    let fx = extract_from_embedded(model, embedded)?;
    let z = classify(model, &fx.theta)?.logit;
    let dz = sigmoid(z) - label;

    let mut grads = Gradients::zeros(model);
    grads.loss = bce_with_logit(z, label);
    grads.head_bias = dz;
    for (j, filter) in model.filters.iter().enumerate() {
        grads.head_weights[j] = dz * fx.theta[j];
        // Max-pool routes through the selected window only, and the ReLU
        // passes gradient only where it is active.
        if fx.theta[j] > 0.0 {
            let dtheta = dz * model.head.weights[j];
            let window = embedded.window(fx.argmax[j], filter.size);
            for (g, x) in grads.filter_weights[j].iter_mut().zip(window) {
                *g = dtheta * x;
            }
            grads.filter_bias[j] = dtheta;
        }
    }
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 0.1,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss of each epoch, measured during the epoch.
    pub losses: Vec<f64>,
}

/// Mini-batch SGD on binary cross-entropy. Only the convolution filters and
/// the head are updated; the embeddings are shared with the input model.
pub fn train(
    model: &CnnModel,
    corpus: &[(TokenizedDocument, u8)],
    config: &TrainConfig,
) -> Result<(CnnModel, TrainReport)> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("training corpus is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "batch size must be at least 1".into(),
        ));
    }
    let data = corpus
        .iter()
        .map(|(doc, label)| Ok((model.embed(doc)?, check_label(*label)?)))
        .collect::<Result<Vec<_>>>()?;

    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut acc = Gradients::zeros(&model);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (embedded, label) = &data[i];
                acc.add_scaled(&gradient_embedded(&model, embedded, *label)?, scale);
            }
            epoch_loss += acc.loss * batch.len() as f64;
            apply(&mut model, &acc, config.learning_rate);
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        losses.push(mean);
    }
    Ok((model, TrainReport { losses }))
}

fn apply(model: &mut CnnModel, grads: &Gradients, lr: f64) {
    for (j, filter) in model.filters.iter_mut().enumerate() {
        for (w, g) in filter.weights.iter_mut().zip(&grads.filter_weights[j]) {
            *w -= lr * g;
        }
        filter.bias -= lr * grads.filter_bias[j];
    }
    for (w, g) in model.head.weights.iter_mut().zip(&grads.head_weights) {
        *w -= lr * g;
    }
    model.head.bias -= lr * grads.head_bias;
}

/// Loss of a single labelled document.
pub fn loss(model: &CnnModel, doc: &TokenizedDocument, label: u8) -> Result<f64> {
    let embedded = model.embed(doc)?;
    let fx = extract_from_embedded(model, &embedded)?;
    let z = classify(model, &fx.theta)?.logit;
    Ok(bce_with_logit(z, check_label(label)?))
}

/// Per-filter distance to the nearest non-differentiable point: the smaller
/// of the selected pre-activation's distance to the ReLU hinge and its gap
/// to the runner-up window.
pub fn kink_margins(model: &CnnModel, doc: &TokenizedDocument) -> Result<Vec<f64>> {
    let embedded = model.embed(doc)?;
    model
        .filters
        .iter()
        .map(|f| {
            let conv = conv_forward(f, &embedded)?;
            let mut sorted = conv.values.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let gap = if sorted.len() > 1 {
                sorted[0] - sorted[1]
            } else {
                f64::INFINITY
            };
            Ok(sorted[0].abs().min(gap))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::cnn::test_support::*;
    use crate::cnn::{ConvFilter, DenseHead};
    use crate::text::{tokenize, EmbeddingMatrix, Vocabulary};

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let (vocab, emb) = random_embeddings(10, 3, 1);
        let model = CnnModel::init(emb, &crate::cnn::Architecture::desk(), 4).unwrap();
        let corpus: Vec<_> = (0..6)
            .map(|i| (random_doc(&vocab, 10, 64, i), (i % 2) as u8))
            .collect();
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            batch_size: 4,
            seed: 1,
        };
        let (trained, report) = train(&model, &corpus, &cfg).unwrap();
        assert_eq!(trained, model);
        assert_eq!(report.losses.len(), 2);
        assert!(report.losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn one_step_matches_hand_derivation() {
        // One width-1 filter over m=2, two-token document.
        // x1 = (1, 2), x2 = (0.5, -1); w = (0.3, 0.1), b = 0.05
        // c = (0.55, 0.1) so theta = 0.55 at window 0.
        // head v = 2, bias 0.1 -> z = 1.2, p = sigmoid(1.2), label 1.
        let vocab = Vocabulary::from_tokens(["a", "b"]);
        let data = vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.5, -1.0];
        let emb = Arc::new(EmbeddingMatrix::new(vocab.len(), 2, data).unwrap());
        let filter = ConvFilter::new(0, 1, vec![0.3, 0.1], 0.05).unwrap();
        let head = DenseHead {
            weights: vec![2.0],
            bias: 0.1,
        };
        let model = CnnModel::new(emb, vec![filter], head, 2).unwrap();
        let doc = tokenize("a b", &vocab, 2).unwrap();

        let p = 1.0 / (1.0 + (-1.2f64).exp());
        let dz = p - 1.0;
        let g = gradient(&model, &doc, 1).unwrap();
        assert!((g.head_bias - dz).abs() < 1e-12);
        assert!((g.head_weights[0] - dz * 0.55).abs() < 1e-12);
        assert!((g.filter_bias[0] - dz * 2.0).abs() < 1e-12);
        assert!((g.filter_weights[0][0] - dz * 2.0 * 1.0).abs() < 1e-12);
        assert!((g.filter_weights[0][1] - dz * 2.0 * 2.0).abs() < 1e-12);
        assert!((g.loss + p.ln()).abs() < 1e-12);

        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.5,
            batch_size: 1,
            seed: 0,
        };
        let (trained, _) = train(&model, &[(doc, 1)], &cfg).unwrap();
        assert!((trained.head.bias - (0.1 - 0.5 * dz)).abs() < 1e-12);
        assert!((trained.filters[0].weights[1] - (0.1 - 0.5 * dz * 4.0)).abs() < 1e-12);
    }

    #[test]
    fn gradient_nonzero_for_finite_logit() {
        let (vocab, emb) = random_embeddings(10, 3, 2);
        let model = CnnModel::init(emb, &crate::cnn::Architecture::desk(), 5).unwrap();
        let doc = random_doc(&vocab, 20, 64, 3);
        for label in [0, 1] {
            let g = gradient(&model, &doc, label).unwrap();
            assert!(g.head_bias != 0.0);
        }
    }

    #[test]
    fn rejects_bad_label_and_empty_corpus() {
        let (vocab, emb) = random_embeddings(10, 3, 2);
        let model = CnnModel::init(emb, &crate::cnn::Architecture::desk(), 5).unwrap();
        let doc = random_doc(&vocab, 5, 64, 3);
        assert!(gradient(&model, &doc, 2).is_err());
        assert!(train(&model, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_reports_epoch() {
        let (vocab, emb) = random_embeddings(10, 3, 2);
        let mut model = CnnModel::init(emb, &crate::cnn::Architecture::desk(), 5).unwrap();
        model.head.bias = f64::NAN;
        let doc = random_doc(&vocab, 5, 64, 3);
        let err = train(&model, &[(doc, 1)], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 0, .. }));
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let (vocab, emb) = random_embeddings(12, 3, 7);
        let model = CnnModel::init(emb, &crate::cnn::Architecture::desk(), 8).unwrap();
        let corpus: Vec<_> = (0..20)
            .map(|i| (random_doc(&vocab, 12, 64, 100 + i), (i % 2) as u8))
            .collect();
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.2,
            batch_size: 5,
            seed: 42,
        };
        let a = train(&model, &corpus, &cfg).unwrap();
        let b = train(&model, &corpus, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, model);
    }

    #[test]
    fn bce_is_stable_for_large_logits() {
        assert!((bce_with_logit(800.0, 1.0)).abs() < 1e-300);
        assert!((bce_with_logit(-800.0, 1.0) - 800.0).abs() < 1e-9);
        assert!((bce_with_logit(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
