//! Exact combinatorics and closed-form kernels used as independent checks on
//! the estimators: hypergeometric overlap weights, the Hoeffding variance of a
//! complete U-statistic, the double-U weights, and the mean and 1-NN kernels
//! whose variances are known in closed form.

mod brute;
mod check;
mod exact;

pub use brute::{
    complete_estimates, complete_vh_bruteforce, complete_variance_bruteforce, complete_vs_bruteforce,
    enumerate_subsets, next_combination, overlap_pair_averages, subset_values, unrank_combination, CompleteEstimates,
    BRUTE_FORCE_CAP,
};
pub use check::{oracle_check, CheckResult, OracleReport};
pub use exact::{binom_q, binomial, binomial_u128, ExactRational};

use crate::error::{Error, Result};

/// `γ_{d,k,n} = C(k,d) C(n-k,k-d) / C(n,k)`: the probability that two
/// independent uniform size-`k` subsets of `n` share exactly `d` elements.
pub fn gamma_coeff(n: usize, k: usize, d: usize) -> Result<ExactRational> {
    if d > k || k > n {
        return Err(Error::IndexOutOfRange(format!("gamma needs 0 <= d <= k <= n, got d={d}, k={k}, n={n}")));
    }
    let (n, k, d) = (n as u64, k as u64, d as u64);
    Ok(binom_q(k, d) * binom_q(n - k, k - d) / binom_q(n, k))
}

/// `γ_{0..=k}` exactly.
pub fn gamma_vector_exact(n: usize, k: usize) -> Result<Vec<ExactRational>> {
    (0..=k).map(|d| gamma_coeff(n, k, d)).collect()
}

/// `γ_{0..=k}` as floats.
pub fn gamma_vector(n: usize, k: usize) -> Result<Vec<f64>> {
    Ok(gamma_vector_exact(n, k)?.iter().map(ExactRational::to_f64).collect())
}

/// Hoeffding profile of a size-`k` kernel: `xi[d] = ξ²_d`, the covariance of
/// two kernel evaluations whose subsets overlap in `d` points, with
/// `xi_tilde[d] = v_h - ξ²_d` and `v_h = ξ²_k` the single-kernel variance.
#[derive(Clone, Debug, PartialEq)]
pub struct XiProfile {
    xi: Vec<f64>,
    xi_tilde: Vec<f64>,
    v_h: f64,
}

impl XiProfile {
    /// Builds from `ξ²_0..=ξ²_k`. Requires `ξ²_0 = 0` and `ξ²_d <= ξ²_k`.
    pub fn new(xi: Vec<f64>) -> Result<Self> {
        if xi.len() < 2 {
            return Err(Error::InvalidData("profile needs k >= 1".into()));
        }
        if xi[0] != 0.0 {
            return Err(Error::InvalidData(format!("xi[0] must be 0, got {}", xi[0])));
        }
        if xi.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidData("profile entries must be finite and nonnegative".into()));
        }
        let v_h = *xi.last().expect("len >= 2");
        if xi.iter().any(|&v| v > v_h) {
            return Err(Error::InvalidData("xi[d] exceeds v_h = xi[k]".into()));
        }
        let xi_tilde = xi.iter().map(|v| v_h - v).collect();
        Ok(Self { xi, xi_tilde, v_h })
    }

    pub fn k(&self) -> usize {
        self.xi.len() - 1
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn xi_tilde(&self) -> &[f64] {
        &self.xi_tilde
    }

    pub fn v_h(&self) -> f64 {
        self.v_h
    }
}

fn check_profile_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    Ok(())
}

/// `Var(U_n) = Σ_{d=1}^k γ_d ξ²_d`.
pub fn hoeffding_variance(n: usize, xi: &XiProfile) -> Result<f64> {
    check_profile_k(n, xi.k())?;
    let g = gamma_vector(n, xi.k())?;
    Ok((1..=xi.k()).map(|d| g[d] * xi.xi[d]).sum())
}

/// `Var(U_n) = v_h - Σ_{d=0}^k γ_d ξ̃²_d`, the `V_h - V_s` route.
pub fn vh_minus_vs_identity(n: usize, xi: &XiProfile) -> Result<f64> {
    check_profile_k(n, xi.k())?;
    let g = gamma_vector(n, xi.k())?;
    Ok(xi.v_h - (0..=xi.k()).map(|d| g[d] * xi.xi_tilde[d]).sum::<f64>())
}

/// Exact counterpart of [`hoeffding_variance`] on `ξ²_0..=ξ²_k`.
pub fn hoeffding_variance_exact(n: usize, xi: &[ExactRational]) -> Result<ExactRational> {
    let k = xi.len().saturating_sub(1);
    check_profile_k(n, k)?;
    let g = gamma_vector_exact(n, k)?;
    Ok((1..=k).map(|d| &g[d] * &xi[d]).sum())
}

/// Exact counterpart of [`vh_minus_vs_identity`] on `ξ²_0..=ξ²_k`.
pub fn vh_minus_vs_identity_exact(n: usize, xi: &[ExactRational]) -> Result<ExactRational> {
    let k = xi.len().saturating_sub(1);
    check_profile_k(n, k)?;
    let g = gamma_vector_exact(n, k)?;
    let v_h = &xi[k];
    let vs: ExactRational = (0..=k).map(|d| &g[d] * &(v_h - &xi[d])).sum();
    Ok(v_h - &vs)
}

/// Exact `V_s = Σ_d γ_d ξ̃²_d`.
pub fn vs_exact(n: usize, xi: &[ExactRational]) -> Result<ExactRational> {
    let k = xi.len().saturating_sub(1);
    check_profile_k(n, k)?;
    let g = gamma_vector_exact(n, k)?;
    Ok((0..=k).map(|d| &g[d] * &(&xi[k] - &xi[d])).sum())
}

/// Weights `w_0..=w_k` expressing the tree-variance estimator as a weighted
/// sum of overlap-`d` pair averages. They sum to zero and are positive for
/// `d >= 1`.
pub fn double_u_weights(n: usize, k: usize) -> Result<Vec<ExactRational>> {
    if k == 0 || 2 * k > n {
        return Err(Error::KTooLarge(k, n));
    }
    let (n, k) = (n as u64, k as u64);
    let cnk = binom_q(n, k);
    let lead = binom_q(n, 2 * k) / (&cnk * &cnk);
    let mut w = Vec::with_capacity(k as usize + 1);
    w.push((cnk.recip() - binom_q(n - k, k).recip()) / cnk.clone() * binom_q(n, 2 * k) * binom_q(2 * k, k));
    for d in 1..=k {
        let num = binom_q(2 * k, d) * binom_q(2 * k - d, d) * binom_q(2 * k - 2 * d, k - d);
        w.push(&lead * &(num / binom_q(n - 2 * k + d, d)));
    }
    Ok(w)
}

/// Profile of the mean kernel `h(S) = mean(Y_S)` for responses of variance
/// `sigma2`: `ξ²_d = d σ² / k²`.
pub fn mean_kernel_profile(k: usize, sigma2: f64) -> Result<XiProfile> {
    let k2 = (k * k) as f64;
    XiProfile::new((0..=k).map(|d| d as f64 * sigma2 / k2).collect())
}

/// Exact mean-kernel profile `ξ²_d = d σ² / k²`.
pub fn mean_kernel_profile_exact(k: usize, sigma2: &ExactRational) -> Vec<ExactRational> {
    let k2 = ExactRational::integer((k * k) as u64);
    (0..=k)
        .map(|d| &(sigma2 * &ExactRational::integer(d as u64)) / &k2)
        .collect()
}

/// 1-NN weights `a_i = C(n-i, k-1) / C(n, k)` for `i = 1..=n-k+1`: the
/// probability that the `i`-th closest training point is the nearest member
/// of a uniform size-`k` subset.
pub fn one_nn_weights(n: usize, k: usize) -> Result<Vec<ExactRational>> {
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let (n, k) = (n as u64, k as u64);
    let total = binom_q(n, k);
    Ok((1..=n - k + 1).map(|i| binom_q(n - i, k - 1) / total.clone()).collect())
}

/// Overlap profile of the 1-NN kernel when the training points are at fixed
/// increasing distances from the target and responses are independent with
/// variance `sigma2`: `ξ²_d` is `σ²` times the fraction of overlap-`d` subset
/// pairs that share their nearest point. Found by enumerating subset pairs,
/// so only small `n` are accepted.
pub fn one_nn_overlap_profile(n: usize, k: usize, sigma2: &ExactRational) -> Result<Vec<ExactRational>> {
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let count = binomial_u128(n as u64, k as u64);
    if count > 5000 {
        return Err(Error::CombinatorialBlowup {
            n,
            k,
            count,
            cap: 5000,
        });
    }
    let subsets = enumerate_subsets(n, k)?;
    let mut same = vec![0u64; k + 1];
    let mut total = vec![0u64; k + 1];
    for a in &subsets {
        for b in &subsets {
            let d = overlap(a, b);
            total[d] += 1;
            if a[0] == b[0] {
                same[d] += 1;
            }
        }
    }
    Ok((0..=k)
        .map(|d| {
            if total[d] == 0 {
                ExactRational::zero()
            } else {
                sigma2 * &ExactRational::new(same[d], total[d])
            }
        })
        .collect())
}

pub(crate) fn overlap(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut c) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                c += 1;
                i += 1;
                j += 1;
            }
        }
    }
    c
}

/// `δ = (M-1)/(MB-1)`, the weight of `V_h` in the expectation of the
/// all-trees spread estimator.
pub fn delta_bm(m: usize, b: usize) -> Result<ExactRational> {
    if m == 0 || b == 0 || m * b < 2 {
        return Err(Error::DegenerateEnsemble(format!("M*B must be >= 2, got M={m}, B={b}")));
    }
    Ok(ExactRational::new((m - 1) as u64, (m * b - 1) as u64))
}

/// `Var(U_match) = (1 - 1/B) Var(U_n) + v_h / (MB)`. With `M = 1` this is the
/// variance of an average of `B` independent uniform subsets.
pub fn matched_variance_closed_form(n: usize, m: usize, b: usize, xi: &XiProfile) -> Result<f64> {
    if m == 0 || b == 0 {
        return Err(Error::DegenerateEnsemble(format!("M={m}, B={b}")));
    }
    if m * xi.k() > n {
        return Err(Error::MTooLarge { m, max: n / xi.k() });
    }
    let var_u = hoeffding_variance(n, xi)?;
    let bf = b as f64;
    Ok((1.0 - 1.0 / bf) * var_u + xi.v_h / (m as f64 * bf))
}

/// Expected value of the all-trees spread estimator: `(1-δ) V_s + δ V_h`.
pub fn expected_vs_hat(n: usize, m: usize, b: usize, xi: &XiProfile) -> Result<f64> {
    let delta = delta_bm(m, b)?.to_f64();
    let vs = xi.v_h - hoeffding_variance(n, xi)?;
    Ok((1.0 - delta) * vs + delta * xi.v_h)
}
