//! Explaining one document: attributions on the pooled filter activations,
//! mapped to the n-gram window each filter selected, then collapsed by
//! span.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cnn::{classify, extract_features, sigmoid, CnnModel, DenseHead};
use crate::error::Result;
use crate::shapley::{
    default_budget, exact_shap, kernel_shap, BackgroundSet, KernelConfig, Model, Regularization,
    SamplingOrder, ShapResult,
};
use crate::text::TokenizedDocument;

pub const PAD_DISPLAY: &str = "<PAD>";
pub const PAD_REGION: &str = "<PAD-region>";

/// Which output of the head is attributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Pre-sigmoid score; attributions are additive on this scale.
    #[default]
    Logit,
    Probability,
}

impl std::str::FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "logit" => Ok(Target::Logit),
            "probability" | "prob" => Ok(Target::Probability),
            other => Err(format!("unknown target {other:?} (logit|probability)")),
        }
    }
}

/// The classification head as a function of the pooled features.
pub struct HeadModel<'a> {
    head: &'a DenseHead,
    target: Target,
}

impl<'a> HeadModel<'a> {
    pub fn new(head: &'a DenseHead, target: Target) -> Self {
        HeadModel { head, target }
    }
}

impl Model for HeadModel<'_> {
    fn dim(&self) -> usize {
        self.head.weights.len()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let z = self
            .head
            .weights
            .iter()
            .zip(x)
            .map(|(w, t)| w * t)
            .sum::<f64>()
            + self.head.bias;
        match self.target {
            Target::Logit => z,
            Target::Probability => sigmoid(z),
        }
    }

    fn affine(&self) -> Option<(&[f64], f64)> {
        match self.target {
            Target::Logit => Some((&self.head.weights, self.head.bias)),
            Target::Probability => None,
        }
    }
}

/// Pooled features of every document, one background row each.
pub fn feature_background(model: &CnnModel, docs: &[TokenizedDocument]) -> Result<BackgroundSet> {
    let rows = docs
        .par_iter()
        .map(|d| extract_features(model, d).map(|fx| fx.theta))
        .collect::<Result<Vec<_>>>()?;
    BackgroundSet::from_rows(&rows)
}

/// Uniformly chosen subset of `size` background rows (all rows when `size`
/// is at least the row count), kept in their original order.
pub fn subsample_background(bg: &BackgroundSet, size: usize, seed: u64) -> Result<BackgroundSet> {
    if size >= bg.rows() {
        return Ok(bg.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, bg.rows(), size.max(1)).into_vec();
    picked.sort_unstable();
    let rows: Vec<Vec<f64>> = picked.into_iter().map(|r| bg.row(r).to_vec()).collect();
    BackgroundSet::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainConfig {
    /// Coalition budget; `None` means `2h + 2^11`.
    pub budget: Option<usize>,
    pub seed: u64,
    pub target: Target,
    pub order: SamplingOrder,
    pub regularization: Regularization,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            budget: None,
            seed: 0,
            target: Target::Logit,
            order: SamplingOrder::default(),
            regularization: Regularization::None,
        }
    }
}

/// One filter's attribution, placed on the window it selected.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attribution {
    pub filter: usize,
    /// Inclusive token span.
    pub span: (usize, usize),
    pub ngram: String,
    pub shap: f64,
    /// The filter's pooled activation.
    pub activation: f64,
    /// The filter's pooled activation was zero.
    pub zero_feature: bool,
    /// Part of the span lies past the document's last real token.
    pub padding: bool,
    #[serde(skip)]
    pub tokens: Vec<String>,
}

/// A span with the summed score of every attribution folded into it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DedupedAttribution {
    pub span: (usize, usize),
    pub ngram: String,
    pub shap: f64,
    pub filters: Vec<usize>,
    #[serde(skip)]
    pub tokens: Vec<String>,
}

impl From<&Attribution> for DedupedAttribution {
    fn from(a: &Attribution) -> Self {
        DedupedAttribution {
            span: a.span,
            ngram: a.ngram.clone(),
            shap: a.shap,
            filters: vec![a.filter],
            tokens: a.tokens.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Explanation {
    pub logit: f64,
    pub probability: f64,
    pub base_value: f64,
    pub target: Target,
    pub attributions: Vec<Attribution>,
    #[serde(skip)]
    pub shap: ShapResult,
}

fn display_text(tokens: &[String]) -> String {
    let words: Vec<&str> = tokens
        .iter()
        .map(String::as_str)
        .filter(|t| *t != PAD_DISPLAY)
        .collect();
    if words.is_empty() {
        PAD_REGION.to_string()
    } else {
        words.join(" ")
    }
}

/// Attributes the head's output for `doc` to its filters against the
/// feature-space background `bg`, and labels each filter with its n-gram.
/// Attributions are listed in filter order.
pub fn explain_document(
    model: &CnnModel,
    doc: &TokenizedDocument,
    bg: &BackgroundSet,
    config: &ExplainConfig,
) -> Result<Explanation> {
    let fx = extract_features(model, doc)?;
    let prediction = classify(model, &fx.theta)?;
    let head = HeadModel::new(&model.head, config.target);
    let h = model.filter_count();
    let shap = if h < 2 {
        exact_shap(&head, &fx.theta, bg)?
    } else {
        let kernel = KernelConfig {
            budget: config.budget.unwrap_or_else(|| default_budget(h)),
            seed: config.seed,
            order: config.order,
            regularization: config.regularization,
            allow_min_norm: false,
        };
        kernel_shap(&head, &fx.theta, bg, &kernel)?
    };

    let attributions = (0..h)
        .map(|j| {
            let (start, end) = fx.span(j);
            let tokens: Vec<String> = (start..=end)
                .map(|p| doc.token_at(p).unwrap_or(PAD_DISPLAY).to_string())
                .collect();
            Attribution {
                filter: j,
                span: (start, end),
                ngram: display_text(&tokens),
                shap: shap.values[j],
                activation: fx.theta[j],
                zero_feature: fx.zero[j],
                padding: end >= doc.true_len(),
                tokens,
            }
        })
        .collect();
    Ok(Explanation {
        logit: prediction.logit,
        probability: prediction.probability,
        base_value: shap.base_value,
        target: config.target,
        attributions,
        shap,
    })
}

/// `|score|` descending, then span start, then span end.
fn by_magnitude(a: &DedupedAttribution, b: &DedupedAttribution) -> Ordering {
    b.shap
        .abs()
        .total_cmp(&a.shap.abs())
        .then(a.span.0.cmp(&b.span.0))
        .then(a.span.1.cmp(&b.span.1))
}

/// Collapses attributions that selected the same token span into one entry
/// whose score is their sum. Identical text at different positions stays
/// separate.
pub fn exact_dedup(attrs: &[Attribution]) -> Vec<DedupedAttribution> {
    dedup_spans(attrs.iter().map(DedupedAttribution::from).collect())
}

/// Span-keyed collapse on already de-duplicated entries. Scores are summed
/// in input order.
pub fn dedup_spans(items: Vec<DedupedAttribution>) -> Vec<DedupedAttribution> {
    let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
    let mut out: Vec<DedupedAttribution> = Vec::new();
    for item in items {
        match slot.get(&item.span) {
            Some(&k) => {
                out[k].shap += item.shap;
                out[k].filters.extend(item.filters);
            }
            None => {
                slot.insert(item.span, out.len());
                out.push(item);
            }
        }
    }
    for d in &mut out {
        d.filters.sort_unstable();
    }
    out.sort_by(by_magnitude);
    out
}

/// Merges every chain of overlapping spans (sharing at least one token)
/// into the span covering it, summing scores in span-start order.
pub fn merge_dedup(items: &[DedupedAttribution]) -> Vec<DedupedAttribution> {
    let mut sorted: Vec<&DedupedAttribution> = items.iter().collect();
    sorted.sort_by_key(|a| a.span);
    let mut out: Vec<DedupedAttribution> = Vec::new();
    for item in sorted {
        match out.last_mut() {
            Some(cur) if item.span.0 <= cur.span.1 => {
                if item.span.1 > cur.span.1 {
                    let skip = cur.span.1 + 1 - item.span.0;
                    cur.tokens.extend(item.tokens.iter().skip(skip).cloned());
                    cur.span.1 = item.span.1;
                }
                cur.shap += item.shap;
                cur.filters.extend(&item.filters);
            }
            _ => out.push(item.clone()),
        }
    }
    for d in &mut out {
        d.filters.sort_unstable();
        d.ngram = display_text(&d.tokens);
    }
    out.sort_by(by_magnitude);
    out
}
