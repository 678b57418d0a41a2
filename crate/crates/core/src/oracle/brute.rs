//! Complete U-statistic estimators by exhaustive enumeration of all size-`k`
//! subsets.

use rayon::prelude::*;

use super::overlap;
use crate::error::{Error, Result};
use crate::model::{Dataset, Kernel, TargetPoint};
use crate::oracle::exact::binomial_u128;
use crate::rng::RandomStream;
use crate::stats::pairwise_sum;

/// Largest `C(n, k)` the enumerating routines accept.
pub const BRUTE_FORCE_CAP: u128 = 100_000;

/// Largest `C(n, k)` for the all-pairs overlap averages.
const PAIR_CAP: u128 = 5_000;

const CHUNK: usize = 1024;

fn check_cap(n: usize, k: usize, cap: u128) -> Result<usize> {
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let count = binomial_u128(n as u64, k as u64);
    if count > cap {
        return Err(Error::CombinatorialBlowup { n, k, count, cap });
    }
    Ok(count as usize)
}

/// Small table of `C(a, b)` for `a <= n`, `b <= k`, valid while every entry
/// used stays below the enumeration cap.
struct BinomTable {
    k: usize,
    t: Vec<u64>,
}

impl BinomTable {
    fn new(n: usize, k: usize) -> Self {
        let mut t = vec![0u64; (n + 1) * (k + 1)];
        for a in 0..=n {
            t[a * (k + 1)] = 1;
            for b in 1..=k.min(a) {
                let up = t[(a - 1) * (k + 1) + b - 1];
                let left = if b <= a - 1 { t[(a - 1) * (k + 1) + b] } else { 0 };
                t[a * (k + 1) + b] = up.saturating_add(left);
            }
        }
        Self { k, t }
    }

    fn get(&self, a: usize, b: usize) -> u64 {
        if b > a {
            0
        } else {
            self.t[a * (self.k + 1) + b]
        }
    }

    /// Colexicographic rank of a sorted subset among subsets of its size.
    fn colex_rank(&self, s: &[usize]) -> usize {
        s.iter().enumerate().map(|(j, &v)| self.get(v, j + 1)).sum::<u64>() as usize
    }
}

/// Lexicographic successor of the sorted combination `c` of `0..n`; returns
/// `false` after the last one.
pub fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// The `r`-th size-`k` subset of `0..n` in lexicographic order.
pub fn unrank_combination(n: usize, k: usize, mut r: u128) -> Result<Vec<usize>> {
    if k > n || r >= binomial_u128(n as u64, k as u64) {
        return Err(Error::IndexOutOfRange(format!("rank {r} for C({n},{k})")));
    }
    let mut out = Vec::with_capacity(k);
    let mut c = 0;
    for i in 0..k {
        loop {
            let count = binomial_u128((n - c - 1) as u64, (k - i - 1) as u64);
            if r < count {
                break;
            }
            r -= count;
            c += 1;
        }
        out.push(c);
        c += 1;
    }
    Ok(out)
}

/// Every size-`k` subset of `0..n` in lexicographic order (capped).
pub fn enumerate_subsets(n: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    let count = check_cap(n, k, BRUTE_FORCE_CAP)?;
    let mut out = Vec::with_capacity(count);
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(c.clone());
        if !next_combination(&mut c, n) {
            break;
        }
    }
    Ok(out)
}

/// Kernel values on every size-`k` subset, in lexicographic order. Subset `r`
/// is evaluated with the stream `rs.split([r])`; chunks of the rank range
/// are evaluated in parallel.
pub fn subset_values<K: Kernel>(
    data: &Dataset,
    kernel: &K,
    k: usize,
    x: &TargetPoint,
    rs: &RandomStream,
) -> Result<(Vec<Vec<usize>>, Vec<f64>)> {
    let n = data.n();
    let count = check_cap(n, k, BRUTE_FORCE_CAP)?;
    let chunks: Vec<usize> = (0..count.div_ceil(CHUNK)).collect();
    let parts = chunks
        .par_iter()
        .map(|&ci| -> Result<Vec<(Vec<usize>, f64)>> {
            let start = ci * CHUNK;
            let end = (start + CHUNK).min(count);
            let mut c = unrank_combination(n, k, start as u128)?;
            let mut out = Vec::with_capacity(end - start);
            for r in start..end {
                let v = kernel.evaluate(data, &c, x, &rs.child(r as u64))?;
                out.push((c.clone(), v));
                next_combination(&mut c, n);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().unzip())
}

/// Complete-U quantities: the mean over all subsets `u`, the all-subsets
/// spread `vs`, the disjoint-pair tree-variance estimate `vh` (when
/// `2k <= n`) and their difference `estimate = vh - vs`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompleteEstimates {
    pub u: f64,
    pub vs: f64,
    pub vh: Option<f64>,
    pub estimate: Option<f64>,
}

/// Computes [`CompleteEstimates`] from the lexicographically ordered output
/// of [`subset_values`].
///
/// `vh` is the mean of `(h_i - h_j)² / 2` over all ordered pairs of disjoint
/// subsets, of which there are `C(n,k) C(n-k,k)`. With centered values `c`,
/// that sum equals `C(n-k,k) Σ c_i² - Σ_i c_i G_i` where `G_i` sums `c` over
/// the subsets disjoint from `S_i`; `G_i` comes from inclusion-exclusion over
/// the sub-subsets of `S_i`.
pub fn complete_estimates(n: usize, k: usize, subsets: &[Vec<usize>], values: &[f64]) -> Result<CompleteEstimates> {
    let count = check_cap(n, k, BRUTE_FORCE_CAP)?;
    if subsets.len() != count || values.len() != count {
        return Err(Error::InvalidData(format!(
            "expected {count} subset values, got {} subsets and {} values",
            subsets.len(),
            values.len()
        )));
    }
    let u = pairwise_sum(values) / count as f64;
    let centered: Vec<f64> = values.iter().map(|v| v - u).collect();
    let sq: Vec<f64> = centered.iter().map(|c| c * c).collect();
    let sum_sq = pairwise_sum(&sq);
    let vs = sum_sq / count as f64;
    if 2 * k > n {
        return Ok(CompleteEstimates {
            u,
            vs,
            vh: None,
            estimate: None,
        });
    }

    let table = BinomTable::new(n, k);
    // superset sums: sup[t][rank(T)] = Σ_{S ⊇ T} c(S) over |T| = t
    let mut sup: Vec<Vec<f64>> = (0..=k).map(|t| vec![0.0; table.get(n, t) as usize]).collect();
    let mut sub = Vec::with_capacity(k);
    for (s, &c) in subsets.iter().zip(&centered) {
        for mask in 0u32..(1 << k) {
            sub.clear();
            sub.extend((0..k).filter(|j| mask >> j & 1 == 1).map(|j| s[j]));
            sup[sub.len()][table.colex_rank(&sub)] += c;
        }
    }
    let cross: Vec<f64> = subsets
        .par_iter()
        .zip(&centered)
        .map(|(s, &c)| {
            let mut sub = Vec::with_capacity(k);
            let mut g = 0.0;
            for mask in 0u32..(1 << k) {
                sub.clear();
                sub.extend((0..k).filter(|j| mask >> j & 1 == 1).map(|j| s[j]));
                let f = sup[sub.len()][table.colex_rank(&sub)];
                g += if sub.len() % 2 == 0 { f } else { -f };
            }
            c * g
        })
        .collect();
    let partners = table.get(n - k, k) as f64;
    let vh = (partners * sum_sq - pairwise_sum(&cross)) / (count as f64 * partners);
    Ok(CompleteEstimates {
        u,
        vs,
        vh: Some(vh),
        estimate: Some(vh - vs),
    })
}

fn brute<K: Kernel>(
    data: &Dataset,
    kernel: &K,
    k: usize,
    x: &TargetPoint,
    rs: &RandomStream,
) -> Result<CompleteEstimates> {
    let (subsets, values) = subset_values(data, kernel, k, x, rs)?;
    complete_estimates(data.n(), k, &subsets, &values)
}

fn need_vh(n: usize, k: usize) -> Result<()> {
    if 2 * k > n {
        return Err(Error::KTooLargeForVh { k, n });
    }
    Ok(())
}

/// `C(n,k)^{-1} Σ_i (h(S_i) - U_n)²` over all size-`k` subsets.
pub fn complete_vs_bruteforce<K: Kernel>(
    data: &Dataset,
    kernel: &K,
    k: usize,
    x: &TargetPoint,
    rs: &RandomStream,
) -> Result<f64> {
    Ok(brute(data, kernel, k, x, rs)?.vs)
}

/// Mean of `(h(S_i) - h(S_j))² / 2` over ordered disjoint subset pairs.
pub fn complete_vh_bruteforce<K: Kernel>(
    data: &Dataset,
    kernel: &K,
    k: usize,
    x: &TargetPoint,
    rs: &RandomStream,
) -> Result<f64> {
    need_vh(data.n(), k)?;
    Ok(brute(data, kernel, k, x, rs)?.vh.expect("2k <= n"))
}

/// `vh - vs` from complete enumeration, unbiased for `Var(U_n)`.
pub fn complete_variance_bruteforce<K: Kernel>(
    data: &Dataset,
    kernel: &K,
    k: usize,
    x: &TargetPoint,
    rs: &RandomStream,
) -> Result<f64> {
    need_vh(data.n(), k)?;
    Ok(brute(data, kernel, k, x, rs)?.estimate.expect("2k <= n"))
}

/// For each overlap size `d = 0..=k`, the mean of `(h_i - h_j)² / 2` over all
/// ordered subset pairs sharing exactly `d` points (`None` if no such pair).
/// Weighting these by `γ_d` reproduces the complete `vs` exactly.
pub fn overlap_pair_averages(n: usize, k: usize, subsets: &[Vec<usize>], values: &[f64]) -> Result<Vec<Option<f64>>> {
    let count = check_cap(n, k, PAIR_CAP)?;
    if subsets.len() != count || values.len() != count {
        return Err(Error::InvalidData("subsets and values must cover every size-k subset".into()));
    }
    let mut sums = vec![0.0; k + 1];
    let mut counts = vec![0u64; k + 1];
    for (a, &ha) in subsets.iter().zip(values) {
        for (b, &hb) in subsets.iter().zip(values) {
            let d = overlap(a, b);
            sums[d] += (ha - hb) * (ha - hb) / 2.0;
            counts[d] += 1;
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect())
}
