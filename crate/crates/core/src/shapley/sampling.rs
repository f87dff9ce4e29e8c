use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;

use super::weights::{binomial, kernel_weight};
use crate::error::Result;

/// A set of feature indices, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition {
    members: Vec<usize>,
}

impl Coalition {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        Coalition { members }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }

    pub fn mask(&self, features: usize) -> Vec<bool> {
        let mut mask = vec![false; features];
        for &i in &self.members {
            mask[i] = true;
        }
        mask
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCoalition {
    pub coalition: Coalition,
    pub weight: f64,
}

/// Order in which whole cardinality levels are consumed by the budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingOrder {
    /// Sizes `1, 2, ..., M-1`.
    #[default]
    Ascending,
    /// Sizes `1, M-1, 2, M-2, ...`, pairing each size with its complement.
    Paired,
}

impl SamplingOrder {
    pub fn levels(self, features: usize) -> Vec<usize> {
        match self {
            SamplingOrder::Ascending => (1..features).collect(),
            SamplingOrder::Paired => {
                let mut out = Vec::with_capacity(features.saturating_sub(1));
                let (mut lo, mut hi) = (1, features.saturating_sub(1));
                while lo <= hi && lo < features {
                    out.push(lo);
                    if hi != lo {
                        out.push(hi);
                    }
                    lo += 1;
                    hi -= 1;
                }
                out
            }
        }
    }
}

impl std::str::FromStr for SamplingOrder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ascending" => Ok(SamplingOrder::Ascending),
            "paired" => Ok(SamplingOrder::Paired),
            other => Err(format!(
                "unknown sampling order {other:?} (ascending|paired)"
            )),
        }
    }
}

/// Levels with at most this many coalitions are sampled by drawing ranks and
/// unranking; larger levels use rejection sampling of random subsets.
const ENUMERABLE_LEVEL: u128 = 1 << 20;

/// Picks at most `budget` distinct proper coalitions of `features` items.
/// Cardinality levels are taken whole in `order` while they fit; the first
/// level that does not fit is sampled uniformly without replacement and the
/// rest are skipped. Each coalition carries its kernel weight.
pub fn sample_coalitions<R: Rng + ?Sized>(
    features: usize,
    budget: usize,
    order: SamplingOrder,
    rng: &mut R,
) -> Result<Vec<WeightedCoalition>> {
    let mut out = Vec::new();
    let mut remaining = budget as u128;
    for size in order.levels(features) {
        if remaining == 0 {
            break;
        }
        let weight = kernel_weight(features, size)?;
        let count = binomial(features, size);
        let members: Vec<Vec<usize>> = match count {
            Some(c) if c <= remaining => {
                remaining -= c;
                Combinations::new(features, size).collect()
            }
            Some(c) if c <= ENUMERABLE_LEVEL => {
                let take = remaining as usize;
                remaining = 0;
                let mut ranks = index::sample(rng, c as usize, take).into_vec();
                ranks.sort_unstable();
                ranks
                    .into_iter()
                    .map(|r| unrank_combination(features, size, r as u128))
                    .collect()
            }
            _ => {
                let take = remaining as usize;
                remaining = 0;
                let mut seen = HashSet::with_capacity(take);
                while seen.len() < take {
                    let mut subset = index::sample(rng, features, size).into_vec();
                    subset.sort_unstable();
                    seen.insert(subset);
                }
                let mut picked: Vec<Vec<usize>> = seen.into_iter().collect();
                picked.sort_unstable();
                picked
            }
        };
        out.extend(members.into_iter().map(|m| WeightedCoalition {
            coalition: Coalition { members: m },
            weight,
        }));
    }
    Ok(out)
}

/// `size`-subsets of `0..n` in lexicographic order.
struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            current: (k <= n).then(|| (0..k).collect()),
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.current.take()?;
        let k = current.len();
        let mut next = current.clone();
        let mut i = k;
        while i > 0 {
            i -= 1;
            if next[i] < self.n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(current)
    }
}

/// The `rank`-th `k`-subset of `0..n` in lexicographic order.
fn unrank_combination(n: usize, k: usize, mut rank: u128) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut next = 0;
    for slot in 0..k {
        let left = k - slot - 1;
        loop {
            // subsets that start with `next` in this slot
            let block = binomial(n - next - 1, left).unwrap_or(u128::MAX);
            if rank < block {
                out.push(next);
                next += 1;
                break;
            }
            rank -= block;
            next += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    fn sizes(cs: &[WeightedCoalition]) -> Vec<usize> {
        cs.iter().map(|c| c.coalition.len()).collect()
    }

    #[test]
    fn levels_orders() {
        assert_eq!(SamplingOrder::Ascending.levels(5), vec![1, 2, 3, 4]);
        assert_eq!(SamplingOrder::Paired.levels(5), vec![1, 4, 2, 3]);
        assert_eq!(SamplingOrder::Paired.levels(6), vec![1, 5, 2, 4, 3]);
        assert_eq!(SamplingOrder::Paired.levels(2), vec![1]);
    }

    #[test]
    fn full_budget_enumerates_everything() {
        for order in [SamplingOrder::Ascending, SamplingOrder::Paired] {
            let cs = sample_coalitions(4, 14, order, &mut rng()).unwrap();
            assert_eq!(cs.len(), 14);
            let distinct: HashSet<_> = cs.iter().map(|c| c.coalition.clone()).collect();
            assert_eq!(distinct.len(), 14);
            let big = sample_coalitions(4, 100, order, &mut rng()).unwrap();
            assert_eq!(big.len(), 14);
        }
    }

    #[test]
    fn paired_budget_twenty_takes_sizes_one_and_nine() {
        let cs = sample_coalitions(10, 20, SamplingOrder::Paired, &mut rng()).unwrap();
        assert_eq!(cs.len(), 20);
        assert!(sizes(&cs).iter().all(|s| *s == 1 || *s == 9));
        assert_eq!(sizes(&cs).iter().filter(|s| **s == 9).count(), 10);
    }

    #[test]
    fn ascending_budget_twenty_fills_size_two_partially() {
        let cs = sample_coalitions(10, 20, SamplingOrder::Ascending, &mut rng()).unwrap();
        assert_eq!(cs.len(), 20);
        assert_eq!(sizes(&cs).iter().filter(|s| **s == 1).count(), 10);
        assert_eq!(sizes(&cs).iter().filter(|s| **s == 2).count(), 10);
    }

    #[test]
    fn thousand_features_thousand_budget_is_level_one() {
        for order in [SamplingOrder::Ascending, SamplingOrder::Paired] {
            let cs = sample_coalitions(1000, 1000, order, &mut rng()).unwrap();
            assert_eq!(cs.len(), 1000);
            assert!(sizes(&cs).iter().all(|s| *s == 1));
        }
    }

    #[test]
    fn partial_level_is_distinct_and_seeded() {
        let a = sample_coalitions(30, 600, SamplingOrder::Ascending, &mut rng()).unwrap();
        let b = sample_coalitions(30, 600, SamplingOrder::Ascending, &mut rng()).unwrap();
        assert_eq!(a, b);
        let distinct: HashSet<_> = a.iter().map(|c| c.coalition.clone()).collect();
        assert_eq!(distinct.len(), 600);
        // rejection path: C(200, 3) is above the enumeration threshold
        let c = sample_coalitions(200, 20_000, SamplingOrder::Ascending, &mut rng()).unwrap();
        let distinct: HashSet<_> = c.iter().map(|c| c.coalition.clone()).collect();
        assert_eq!(distinct.len(), 20_000);
    }

    #[test]
    fn weights_attached() {
        let cs = sample_coalitions(6, 62, SamplingOrder::Ascending, &mut rng()).unwrap();
        for c in &cs {
            assert_eq!(c.weight, kernel_weight(6, c.coalition.len()).unwrap());
        }
    }

    #[test]
    fn unranking_matches_enumeration() {
        let all: Vec<_> = Combinations::new(7, 3).collect();
        assert_eq!(all.len(), 35);
        for (r, c) in all.iter().enumerate() {
            assert_eq!(&unrank_combination(7, 3, r as u128), c);
        }
    }
}
