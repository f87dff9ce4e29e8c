//! Corpus-level n-gram importance from per-document top-k ranks.
//!
//! Each n-gram string collects the ranks it reached in the documents where it
//! made the top `k`; a scorer `s(r)` turns the multiset into
//! `sum(s(r)) / (m + k)`, so a phrase must recur to score well.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::cnn::{predict, CnnModel};
use crate::error::{Error, Result};
use crate::explain::{
    exact_dedup, explain_document, DedupedAttribution, ExplainConfig, PAD_REGION,
};
use crate::shapley::BackgroundSet;
use crate::text::TokenizedDocument;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    /// Inverse rank: `s(r) = 1 / r`.
    #[default]
    Ira,
    /// Uniform rank: `s(r) = (k + 1 - r) / k`.
    Ura,
}

impl std::str::FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ira" => Ok(Scorer::Ira),
            "ura" => Ok(Scorer::Ura),
            other => Err(Error::InvalidArgument(format!("unknown scorer {other:?}"))),
        }
    }
}

fn check_ranks(ranks: &[usize], k: usize) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::EmptyRanks);
    }
    if let Some(r) = ranks.iter().find(|r| **r == 0 || **r > k) {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={k}")));
    }
    Ok(())
}

pub fn ira_score(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks, k)?;
    let total: f64 = ranks.iter().map(|r| 1.0 / *r as f64).sum();
    Ok(total / (ranks.len() + k) as f64)
}

pub fn ura_score(ranks: &[usize], k: usize) -> Result<f64> {
    check_ranks(ranks, k)?;
    let total: f64 = ranks.iter().map(|r| (k + 1 - r) as f64 / k as f64).sum();
    Ok(total / (ranks.len() + k) as f64)
}

impl Scorer {
    pub fn score(self, ranks: &[usize], k: usize) -> Result<f64> {
        match self {
            Scorer::Ira => ira_score(ranks, k),
            Scorer::Ura => ura_score(ranks, k),
        }
    }
}

/// Rank multisets per n-gram string for one polarity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTable {
    pub k: usize,
    pub polarity: Polarity,
    /// Ranks in `1..=k`, sorted; never empty.
    pub ranks: BTreeMap<String, Vec<usize>>,
    /// Sum of `|score|` over every same-signed occurrence, top-k or not.
    /// Kept only for comparison with the rank scores.
    pub abs_shap: BTreeMap<String, f64>,
}

impl RankTable {
    pub fn new(k: usize, polarity: Polarity) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        Ok(RankTable {
            k,
            polarity,
            ranks: BTreeMap::new(),
            abs_shap: BTreeMap::new(),
        })
    }

    /// Adds one document's de-duplicated attributions.
    pub fn add_document(&mut self, items: &[DedupedAttribution]) {
        let mut picked: Vec<&DedupedAttribution> = items
            .iter()
            .filter(|d| match self.polarity {
                Polarity::Positive => d.shap > 0.0,
                Polarity::Negative => d.shap < 0.0,
            })
            .collect();
        let first_filter = |d: &DedupedAttribution| d.filters.iter().copied().min().unwrap_or(0);
        picked.sort_by(|a, b| {
            let by_score = match self.polarity {
                Polarity::Positive => b.shap.total_cmp(&a.shap),
                Polarity::Negative => a.shap.total_cmp(&b.shap),
            };
            by_score
                .then(a.span.0.cmp(&b.span.0))
                .then(first_filter(a).cmp(&first_filter(b)))
        });
        for d in &picked {
            *self.abs_shap.entry(d.ngram.clone()).or_insert(0.0) += d.shap.abs();
        }
        let mut seen = HashSet::new();
        for (i, d) in picked.iter().take(self.k).enumerate() {
            // best rank only when a string recurs within one document
            if seen.insert(d.ngram.as_str()) {
                self.ranks.entry(d.ngram.clone()).or_default().push(i + 1);
            }
        }
    }

    /// Multiset union; order of merging does not matter.
    pub fn merge(&mut self, other: &RankTable) -> Result<()> {
        if other.k != self.k || other.polarity != self.polarity {
            return Err(Error::InvalidArgument(
                "cannot merge tables with different k or polarity".into(),
            ));
        }
        for (ngram, ranks) in &other.ranks {
            let slot = self.ranks.entry(ngram.clone()).or_default();
            slot.extend(ranks);
            slot.sort_unstable();
        }
        for (ngram, v) in &other.abs_shap {
            *self.abs_shap.entry(ngram.clone()).or_insert(0.0) += v;
        }
        Ok(())
    }

    /// Every stored n-gram scored, best first; ties by string.
    pub fn scored(&self, scorer: Scorer) -> Vec<RankedNgram> {
        let mut out: Vec<RankedNgram> = self
            .ranks
            .iter()
            .map(|(ngram, ranks)| RankedNgram {
                polarity: self.polarity,
                ngram: ngram.clone(),
                score: scorer.score(ranks, self.k).expect("stored ranks are valid"),
                m: ranks.len(),
                best_rank: *ranks.iter().min().expect("stored ranks are non-empty"),
                abs_shap: self.abs_shap.get(ngram).copied().unwrap_or(0.0),
            })
            .collect();
        out.sort_by(compare_ranked);
        out
    }

    /// N-grams ordered by summed `|score|` instead of rank scores.
    pub fn by_abs_shap(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> =
            self.abs_shap.iter().map(|(k, v)| (k.clone(), *v)).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }
}

/// Builds a table from documents already restricted to one polarity.
pub fn collect_ranks(
    docs: &[Vec<DedupedAttribution>],
    k: usize,
    polarity: Polarity,
) -> Result<RankTable> {
    let mut table = RankTable::new(k, polarity)?;
    for d in docs {
        table.add_document(d);
    }
    for ranks in table.ranks.values_mut() {
        ranks.sort_unstable();
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedNgram {
    pub polarity: Polarity,
    pub ngram: String,
    pub score: f64,
    pub m: usize,
    pub best_rank: usize,
    pub abs_shap: f64,
}

/// How documents are split between the two lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    /// Model probability at least 0.5 counts as positive.
    #[default]
    Predicted,
    Gold,
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "predicted" => Ok(Partition::Predicted),
            "gold" => Ok(Partition::Gold),
            other => Err(Error::InvalidArgument(format!(
                "unknown partition {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalConfig {
    pub k: usize,
    pub scorer: Scorer,
    pub partition: Partition,
    /// Document `i` is explained with seed `explain.seed + i`.
    pub explain: ExplainConfig,
    /// Drop spans whose filters all sit at or below their background mean
    /// activation. Such a filter's score reflects what the document lacks,
    /// and its argmax window is only a weak, arbitrary match.
    pub presence_only: bool,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            k: 10,
            scorer: Scorer::default(),
            partition: Partition::default(),
            explain: ExplainConfig::default(),
            presence_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalReport {
    pub k: usize,
    pub scorer: Scorer,
    pub partition: Partition,
    pub documents: usize,
    pub positive: Vec<RankedNgram>,
    pub negative: Vec<RankedNgram>,
}

impl GlobalReport {
    pub fn list(&self, polarity: Polarity) -> &[RankedNgram] {
        match polarity {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
        }
    }

    /// `polarity,ngram,score,m,best_rank`, plus `abs_shap` on request.
    pub fn to_csv(&self, top: Option<usize>, with_abs_shap: bool) -> String {
        let mut out = String::from("polarity,ngram,score,m,best_rank");
        out.push_str(if with_abs_shap { ",abs_shap\n" } else { "\n" });
        for list in [&self.positive, &self.negative] {
            for r in list.iter().take(top.unwrap_or(usize::MAX)) {
                let _ = write!(
                    out,
                    "{},{},{},{},{}",
                    r.polarity.as_str(),
                    csv_field(&r.ngram),
                    r.score,
                    r.m,
                    r.best_rank
                );
                if with_abs_shap {
                    let _ = write!(out, ",{}", r.abs_shap);
                }
                out.push('\n');
            }
        }
        out
    }

    /// Positive and negative lists side by side.
    pub fn to_table(&self, top: usize) -> String {
        let rows = top.min(self.positive.len().max(self.negative.len()));
        let cell = |list: &[RankedNgram], i: usize| {
            list.get(i)
                .map(|r| (r.ngram.clone(), format!("{:.4}", r.score)))
                .unwrap_or_default()
        };
        let width = |list: &[RankedNgram], title: &str| {
            (0..rows)
                .map(|i| cell(list, i).0.chars().count())
                .max()
                .unwrap_or(0)
                .max(title.len())
        };
        let (wp, wn) = (
            width(&self.positive, "Positive"),
            width(&self.negative, "Negative"),
        );
        let mut out = format!(
            "{:>4}  {:<wp$}  {:>7}  {:<wn$}  {:>7}\n",
            "Rank", "Positive", "Score", "Negative", "Score"
        );
        for i in 0..rows {
            let (p, ps) = cell(&self.positive, i);
            let (n, ns) = cell(&self.negative, i);
            let _ = writeln!(out, "{:>4}  {p:<wp$}  {ps:>7}  {n:<wn$}  {ns:>7}", i + 1);
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Explains every document, de-duplicates by span, splits documents by
/// polarity and scores the rank tables. `labels` is required for
/// [`Partition::Gold`].
pub fn global_report(
    model: &CnnModel,
    docs: &[TokenizedDocument],
    labels: Option<&[u8]>,
    bg: &BackgroundSet,
    config: &GlobalConfig,
) -> Result<GlobalReport> {
    if config.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let labels = match (config.partition, labels) {
        (Partition::Gold, None) => {
            return Err(Error::InvalidArgument("gold partition needs labels".into()))
        }
        (_, Some(l)) if l.len() != docs.len() => {
            return Err(Error::Shape(format!(
                "{} labels for {} documents",
                l.len(),
                docs.len()
            )))
        }
        (_, l) => l,
    };

    let explained = docs
        .par_iter()
        .enumerate()
        .map(|(i, doc)| {
            let cfg = ExplainConfig {
                seed: config.explain.seed.wrapping_add(i as u64),
                ..config.explain.clone()
            };
            let e = explain_document(model, doc, bg, &cfg)?;
            let positive = match config.partition {
                Partition::Predicted => predict(model, doc)?.probability >= 0.5,
                Partition::Gold => labels.expect("checked above")[i] == 1,
            };
            let means = bg.column_means();
            let absent: HashSet<usize> = e
                .attributions
                .iter()
                .filter(|a| a.zero_feature || a.activation <= means[a.filter])
                .map(|a| a.filter)
                .collect();
            let deduped: Vec<DedupedAttribution> = exact_dedup(&e.attributions)
                .into_iter()
                .filter(|d| d.ngram != PAD_REGION)
                .filter(|d| !config.presence_only || !d.filters.iter().all(|f| absent.contains(f)))
                .collect();
            Ok((positive, deduped))
        })
        .collect::<Result<Vec<_>>>()?;

    let split = |want: bool| -> Vec<Vec<DedupedAttribution>> {
        explained
            .iter()
            .filter(|(p, _)| *p == want)
            .map(|(_, d)| d.clone())
            .collect()
    };
    let positive = collect_ranks(&split(true), config.k, Polarity::Positive)?;
    let negative = collect_ranks(&split(false), config.k, Polarity::Negative)?;
    Ok(GlobalReport {
        k: config.k,
        scorer: config.scorer,
        partition: config.partition,
        documents: docs.len(),
        positive: positive.scored(config.scorer),
        negative: negative.scored(config.scorer),
    })
}

/// Orders by score, breaking ties by string. Exposed for callers that rank
/// their own lists.
pub fn compare_ranked(a: &RankedNgram, b: &RankedNgram) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.ngram.cmp(&b.ngram))
}
