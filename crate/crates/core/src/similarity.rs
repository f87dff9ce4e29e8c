//! Cosine similarity between convolution filters over contiguous row
//! segments, used to spot filters that select the same n-grams.

use serde::Serialize;

use crate::cnn::{CnnModel, ConvFilter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Similarity {
    pub value: f64,
    /// Every segment pair had a zero norm; `value` is reported as 0.
    pub degenerate: bool,
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Best cosine over every pair of length-`k` row segments, one taken from
/// each filter at any offset. `None` when `k` exceeds either filter or every
/// segment pair is degenerate.
pub fn segment_similarity(fi: &ConvFilter, fj: &ConvFilter, k: usize) -> Option<f64> {
    if k == 0 || k > fi.size || k > fj.size || fi.dim() != fj.dim() {
        return None;
    }
    let m = fi.dim();
    let mut best: Option<f64> = None;
    for a in 0..=fi.size - k {
        let seg_i = &fi.weights[a * m..(a + k) * m];
        for b in 0..=fj.size - k {
            let seg_j = &fj.weights[b * m..(b + k) * m];
            if let Some(c) = cosine(seg_i, seg_j) {
                best = Some(best.map_or(c, |v: f64| v.max(c)));
            }
        }
    }
    best
}

/// Maximum of [`segment_similarity`] over `k` in `1..min(n_i, n_j)`. When
/// both filters are too short for that range (the shorter one has width 1)
/// the single-row segments `k = 1` are used.
pub fn k_partial_similarity(fi: &ConvFilter, fj: &ConvFilter) -> Similarity {
    let limit = fi.size.min(fj.size);
    let range = if limit >= 2 { 1..limit } else { 1..2 };
    let best = range
        .filter_map(|k| segment_similarity(fi, fj, k))
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        });
    match best {
        Some(value) => Similarity {
            value,
            degenerate: false,
        },
        None => Similarity {
            value: 0.0,
            degenerate: true,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairSimilarity {
    pub first: usize,
    pub second: usize,
    pub value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityReport {
    pub segment_len: Option<usize>,
    pub pairs: Vec<PairSimilarity>,
    pub bins: Vec<HistogramBin>,
}

impl SimilarityReport {
    pub fn pairs_csv(&self) -> String {
        let mut out = String::from("filter_i,filter_j,similarity,degenerate\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.first, p.second, p.value, p.degenerate
            ));
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("lower,upper,count\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{}\n", b.lower, b.upper, b.count));
        }
        out
    }

    /// Share of scored pairs strictly above `threshold`.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        let scored: Vec<&PairSimilarity> = self.pairs.iter().filter(|p| !p.degenerate).collect();
        if scored.is_empty() {
            return 0.0;
        }
        scored.iter().filter(|p| p.value > threshold).count() as f64 / scored.len() as f64
    }
}

pub const HISTOGRAM_BINS: usize = 20;

/// Scores every unordered filter pair, either at a fixed segment length
/// (`Some(k)`, pairs where a filter is shorter than `k` are skipped) or with
/// [`k_partial_similarity`] (`None`), and bins the scores over `[-1, 1]`.
pub fn similarity_histogram(model: &CnnModel, segment_len: Option<usize>) -> SimilarityReport {
    let filters = &model.filters;
    let mut pairs = Vec::new();
    for i in 0..filters.len() {
        for j in i + 1..filters.len() {
            let sim = match segment_len {
                Some(k) => {
                    if k > filters[i].size || k > filters[j].size {
                        continue;
                    }
                    match segment_similarity(&filters[i], &filters[j], k) {
                        Some(value) => Similarity {
                            value,
                            degenerate: false,
                        },
                        None => Similarity {
                            value: 0.0,
                            degenerate: true,
                        },
                    }
                }
                None => k_partial_similarity(&filters[i], &filters[j]),
            };
            pairs.push(PairSimilarity {
                first: i,
                second: j,
                value: sim.value,
                degenerate: sim.degenerate,
            });
        }
    }
    let width = 2.0 / HISTOGRAM_BINS as f64;
    let mut bins: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|b| HistogramBin {
            lower: -1.0 + b as f64 * width,
            upper: -1.0 + (b + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for p in pairs.iter().filter(|p| !p.degenerate) {
        let b = (((p.value + 1.0) / width) as usize).min(HISTOGRAM_BINS - 1);
        bins[b].count += 1;
    }
    SimilarityReport {
        segment_len,
        pairs,
        bins,
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::cnn::test_support::random_embeddings;
    use crate::cnn::DenseHead;

    fn random_filter(id: usize, size: usize, m: usize, seed: u64) -> ConvFilter {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = (0..size * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        ConvFilter::new(id, size, w, 0.0).unwrap()
    }

    #[test]
    fn identical_and_scaled() {
        for size in [1, 2, 3] {
            let f = random_filter(0, size, 5, size as u64);
            assert!((k_partial_similarity(&f, &f).value - 1.0).abs() < 1e-12);
            let mut g = f.clone();
            g.weights.iter_mut().for_each(|w| *w *= 3.5);
            assert!((k_partial_similarity(&f, &g).value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn size_two_vs_three_matches_segment_loop() {
        let a = random_filter(0, 2, 4, 10);
        let b = random_filter(1, 3, 4, 11);
        // k ranges over 1..2, i.e. only single rows
        let mut best = f64::NEG_INFINITY;
        for r in 0..2 {
            for s in 0..3 {
                let (x, y) = (a.row(r), b.row(s));
                let dot: f64 = (0..4).map(|c| x[c] * y[c]).sum();
                let nx: f64 = (0..4).map(|c| x[c] * x[c]).sum::<f64>().sqrt();
                let ny: f64 = (0..4).map(|c| y[c] * y[c]).sum::<f64>().sqrt();
                best = best.max(dot / (nx * ny));
            }
        }
        assert!((k_partial_similarity(&a, &b).value - best).abs() < 1e-12);
    }

    #[test]
    fn zero_filter_is_degenerate() {
        let a = ConvFilter::new(0, 1, vec![0.0; 3], 0.0).unwrap();
        let b = random_filter(1, 1, 3, 1);
        let s = k_partial_similarity(&a, &b);
        assert!(s.degenerate);
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn histogram_cases() {
        let (_, emb) = random_embeddings(4, 3, 1);
        let f = random_filter(0, 1, 3, 4);
        let mut g = f.clone();
        g.id = 1;
        let head = DenseHead {
            weights: vec![0.0; 2],
            bias: 0.0,
        };
        let model = CnnModel::new(Arc::clone(&emb), vec![f.clone(), g], head, 4).unwrap();
        let report = similarity_histogram(&model, Some(1));
        assert_eq!(report.pairs.len(), 1);
        assert!((report.pairs[0].value - 1.0).abs() < 1e-12);
        assert_eq!(report.bins.last().unwrap().count, 1);
        assert_eq!(report.bins.iter().map(|b| b.count).sum::<usize>(), 1);

        let single = CnnModel::new(
            emb,
            vec![f],
            DenseHead {
                weights: vec![0.0],
                bias: 0.0,
            },
            4,
        )
        .unwrap();
        let empty = similarity_histogram(&single, Some(1));
        assert!(empty.pairs.is_empty());
        assert!(empty.histogram_csv().starts_with("lower,upper,count\n"));
    }

    #[test]
    fn values_bounded() {
        for seed in 0..20 {
            let a = random_filter(0, 1 + seed as usize % 3, 4, seed);
            let b = random_filter(1, 1 + (seed as usize / 3) % 3, 4, seed + 100);
            let s = k_partial_similarity(&a, &b).value;
            assert!((-1.0..=1.0).contains(&s));
        }
    }
}
