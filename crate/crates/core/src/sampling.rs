//! Subsampling plans: matched groups of mutually exclusive subsamples, plain
//! independent subsets (`M = 1`) and bootstrap multisets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingMode {
    Matched,
    IndependentWithReplacementOfSubsets,
    BootstrapResamples,
}

/// `groups[b][i]` is the (sorted, 0-based) index set of tree `i` in group `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub mode: SamplingMode,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub b: usize,
    pub groups: Vec<Vec<Vec<usize>>>,
}

impl SamplingPlan {
    pub fn entry(&self, b: usize, i: usize) -> &[usize] {
        &self.groups[b][i]
    }

    /// `(b, i, indices)` in group-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, &[usize])> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(b, g)| g.iter().enumerate().map(move |(i, s)| (b, i, s.as_slice())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Draws `B` matched groups. Each group takes `M·k` distinct indices by a
/// partial shuffle of `0..n` and cuts them into `M` consecutive blocks of `k`;
/// indices beyond `M·k` are unused in that group. Group `b` uses the stream
/// `rs.split([b])`, so groups are independent and adding groups leaves the
/// earlier ones untouched.
pub fn sample_matched_groups(n: usize, k: usize, m: usize, b: usize, rs: &RandomStream) -> Result<SamplingPlan> {
    if k == 0 || k >= n {
        return Err(Error::KOutOfRange { k, n });
    }
    if m < 2 {
        return Err(Error::GroupTooSmall(m));
    }
    if m > n / k {
        return Err(Error::MTooLarge { m, max: n / k });
    }
    if b == 0 {
        return Err(Error::DegenerateEnsemble("B must be at least 1".into()));
    }
    let mut perm: Vec<usize> = Vec::with_capacity(n);
    let groups = (0..b)
        .map(|g| {
            perm.clear();
            perm.extend(0..n);
            let mut rng = rs.child(g as u64).rng();
            let take = m * k;
            for j in 0..take {
                let r = j + rng.below(n - j);
                perm.swap(j, r);
            }
            perm[..take]
                .chunks(k)
                .map(|c| {
                    let mut s = c.to_vec();
                    s.sort_unstable();
                    s
                })
                .collect()
        })
        .collect();
    Ok(SamplingPlan {
        mode: SamplingMode::Matched,
        n,
        k,
        m,
        b,
        groups,
    })
}

/// `B` independent uniformly random size-`k` subsets (`M = 1`).
pub fn sample_subset_plan(n: usize, k: usize, b: usize, rs: &RandomStream) -> Result<SamplingPlan> {
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    if b < 2 {
        return Err(Error::DegenerateEnsemble(format!("subset plan needs B >= 2, got {b}")));
    }
    let mut perm: Vec<usize> = Vec::with_capacity(n);
    let groups = (0..b)
        .map(|g| {
            perm.clear();
            perm.extend(0..n);
            let mut rng = rs.child(g as u64).rng();
            for j in 0..k {
                let r = j + rng.below(n - j);
                perm.swap(j, r);
            }
            let mut s = perm[..k].to_vec();
            s.sort_unstable();
            vec![s]
        })
        .collect();
    Ok(SamplingPlan {
        mode: SamplingMode::IndependentWithReplacementOfSubsets,
        n,
        k,
        m: 1,
        b,
        groups,
    })
}

/// `B` multisets of size `k` drawn with replacement from `0..n`.
pub fn sample_bootstrap_plan(n: usize, k: usize, b: usize, rs: &RandomStream) -> Result<SamplingPlan> {
    if b < 2 {
        return Err(Error::DegenerateEnsemble(format!("bootstrap plan needs B >= 2, got {b}")));
    }
    if k == 0 || n == 0 {
        return Err(Error::KOutOfRange { k, n });
    }
    let groups = (0..b)
        .map(|g| {
            let mut rng = rs.child(g as u64).rng();
            let mut s: Vec<usize> = (0..k).map(|_| rng.below(n)).collect();
            s.sort_unstable();
            vec![s]
        })
        .collect();
    Ok(SamplingPlan {
        mode: SamplingMode::BootstrapResamples,
        n,
        k,
        m: 1,
        b,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeMap, HashSet};

    use super::*;

    fn rs() -> RandomStream {
        RandomStream::new(2024)
    }

    fn assert_disjoint(plan: &SamplingPlan) {
        for g in &plan.groups {
            let mut seen = HashSet::new();
            for s in g {
                assert_eq!(s.len(), plan.k);
                for &j in s {
                    assert!(j < plan.n);
                    assert!(seen.insert(j), "index {j} repeated in group {g:?}");
                }
            }
        }
    }

    #[test]
    fn matched_partition_when_mk_equals_n() {
        let plan = sample_matched_groups(4, 2, 2, 1, &rs()).unwrap();
        assert_eq!(plan.groups.len(), 1);
        let mut all: Vec<usize> = plan.groups[0].concat();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2, 3]);
    }

    #[test]
    fn matched_leaves_one_unused() {
        let plan = sample_matched_groups(7, 3, 2, 5, &rs()).unwrap();
        assert_eq!(plan.groups.len(), 5);
        assert_disjoint(&plan);
        for g in &plan.groups {
            let used: HashSet<usize> = g.iter().flatten().copied().collect();
            assert_eq!(used.len(), 6);
        }
    }

    #[test]
    fn matched_errors() {
        assert!(matches!(sample_matched_groups(200, 100, 3, 10, &rs()), Err(Error::MTooLarge { m: 3, max: 2 })));
        assert!(matches!(sample_matched_groups(10, 0, 2, 1, &rs()), Err(Error::KOutOfRange { .. })));
        assert!(matches!(sample_matched_groups(10, 10, 2, 1, &rs()), Err(Error::KOutOfRange { .. })));
        assert!(matches!(sample_matched_groups(10, 2, 1, 4, &rs()), Err(Error::GroupTooSmall(1))));
    }

    #[test]
    fn matched_is_deterministic_and_prefix_stable() {
        let a = sample_matched_groups(50, 10, 4, 20, &rs()).unwrap();
        let b = sample_matched_groups(50, 10, 4, 20, &rs()).unwrap();
        assert_eq!(a, b);
        let c = sample_matched_groups(50, 10, 4, 30, &rs()).unwrap();
        assert_eq!(a.groups[..], c.groups[..20]);
    }

    #[test]
    fn matched_position_frequency_is_half() {
        // n=10, k=5, M=2: P(j in S_1) = 1/2; 3 sigma binomial band
        let b = 10_000;
        let plan = sample_matched_groups(10, 5, 2, b, &rs()).unwrap();
        assert_disjoint(&plan);
        let sigma = (b as f64 * 0.25).sqrt();
        for j in 0..10 {
            let c = plan.groups.iter().filter(|g| g[0].contains(&j)).count() as f64;
            assert!((c - b as f64 * 0.5).abs() <= 3.0 * sigma, "index {j}: {c}");
        }
    }

    #[test]
    fn matched_marginal_uniformity_chi_square() {
        // P(j in S_i) = k/n for every position i and index j
        let (n, k, m, b) = (12, 3, 4, 6000);
        let plan = sample_matched_groups(n, k, m, b, &rs()).unwrap();
        let expected = b as f64 * k as f64 / n as f64;
        for i in 0..m {
            let mut counts = vec![0f64; n];
            for g in &plan.groups {
                for &j in &g[i] {
                    counts[j] += 1.0;
                }
            }
            let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
            // df = 11 (the counts also sum to b*k), 99.9% quantile is 31.26
            assert!(chi2 < 31.26, "position {i}: chi2 = {chi2}");
        }
    }

    #[test]
    fn subset_plan_single_subset() {
        let plan = sample_subset_plan(3, 3, 4, &rs()).unwrap();
        for g in &plan.groups {
            assert_eq!(g, &vec![vec![0, 1, 2]]);
        }
        assert!(matches!(sample_subset_plan(5, 2, 1, &rs()), Err(Error::DegenerateEnsemble(_))));
        assert!(matches!(sample_subset_plan(5, 6, 3, &rs()), Err(Error::KOutOfRange { .. })));
    }

    #[test]
    fn subset_plan_uniform_over_pairs() {
        let b = 60_000;
        let plan = sample_subset_plan(4, 2, b, &rs()).unwrap();
        let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for g in &plan.groups {
            *counts.entry(g[0].clone()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let sigma = (b as f64 * p * (1.0 - p)).sqrt();
        for (s, c) in counts {
            assert!((c as f64 - b as f64 * p).abs() <= 3.0 * sigma, "{s:?}: {c}");
        }
    }

    #[test]
    fn bootstrap_single_atom() {
        let plan = sample_bootstrap_plan(1, 3, 2, &rs()).unwrap();
        assert_eq!(plan.groups, vec![vec![vec![0, 0, 0]], vec![vec![0, 0, 0]]]);
        assert!(matches!(sample_bootstrap_plan(5, 5, 1, &rs()), Err(Error::DegenerateEnsemble(_))));
    }

    #[test]
    fn bootstrap_pair_frequency() {
        let b = 40_000;
        let plan = sample_bootstrap_plan(2, 2, b, &rs()).unwrap();
        let c = plan.groups.iter().filter(|g| g[0] == vec![0, 0]).count() as f64;
        let sigma = (b as f64 * 0.25 * 0.75).sqrt();
        assert!((c - b as f64 * 0.25).abs() <= 3.0 * sigma, "{c}");
    }

    #[test]
    fn bootstrap_distinct_count_matches_occupancy() {
        // E[#distinct] = n (1 - (1 - 1/n)^k) = 5 (1 - 0.8^5) = 3.36160
        let b = 20_000;
        let plan = sample_bootstrap_plan(5, 5, b, &rs()).unwrap();
        let counts: Vec<f64> = plan
            .groups
            .iter()
            .map(|g| {
                let mut s = g[0].clone();
                s.dedup();
                s.len() as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / b as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
        let se = (var / b as f64).sqrt();
        let expected = 5.0 * (1.0 - 0.8f64.powi(5));
        assert!((mean - expected).abs() <= 3.0 * se, "{mean} vs {expected}");
    }

    #[test]
    fn plan_json_round_trip() {
        let plan = sample_matched_groups(9, 2, 3, 2, &rs()).unwrap();
        let json = plan.to_json().unwrap();
        assert!(json.contains("\"mode\":\"Matched\""));
        assert_eq!(SamplingPlan::from_json(&json).unwrap(), plan);
    }
}
