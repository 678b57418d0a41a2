//! Self-check of every exact identity, rendered as a TAP report.

use std::fmt::Write as _;

use super::*;
use crate::model::{Dataset, MeanKernel, OneNnKernel, TargetPoint};
use crate::rng::RandomStream;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct OracleReport {
    pub checks: Vec<CheckResult>,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_tap(&self) -> String {
        let mut s = format!("TAP version 13\n1..{}\n", self.checks.len());
        for (i, c) in self.checks.iter().enumerate() {
            let status = if c.passed { "ok" } else { "not ok" };
            let _ = writeln!(s, "{status} {} - {}", i + 1, c.name);
            if !c.detail.is_empty() {
                let _ = writeln!(s, "  # {}", c.detail);
            }
        }
        s
    }

    fn push(&mut self, name: &str, outcome: Result<std::result::Result<String, String>>) {
        let (passed, detail) = match outcome {
            Ok(Ok(d)) => (true, d),
            Ok(Err(d)) => (false, d),
            Err(e) => (false, format!("error: {e}")),
        };
        self.checks.push(CheckResult {
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

type Outcome = Result<std::result::Result<String, String>>;

fn verdict(ok: bool, detail: String) -> Outcome {
    Ok(if ok { Ok(detail) } else { Err(detail) })
}

fn gamma_pmf(max_n: usize) -> Outcome {
    for n in 1..=max_n {
        for k in 0..=n {
            let s: ExactRational = gamma_vector_exact(n, k)?.into_iter().sum();
            if s != ExactRational::one() {
                return verdict(false, format!("sum gamma = {s} at n={n} k={k}"));
            }
            for d in 0..(2 * k).saturating_sub(n).min(k + 1) {
                if !gamma_coeff(n, k, d)?.is_zero() {
                    return verdict(false, format!("gamma nonzero below 2k-n at n={n} k={k} d={d}"));
                }
            }
        }
    }
    verdict(true, format!("n <= {max_n}"))
}

fn gamma_examples() -> Outcome {
    let got = gamma_vector_exact(4, 2)?;
    let want = [ExactRational::new(1, 6), ExactRational::new(4, 6), ExactRational::new(1, 6)];
    verdict(got == want, format!("gamma(4,2,.) = {}, {}, {}", got[0], got[1], got[2]))
}

fn mean_kernel_routes(max_n: usize) -> Outcome {
    let s2 = ExactRational::new(3, 2);
    for n in 1..=max_n {
        for k in 1..=n {
            let xi = mean_kernel_profile_exact(k, &s2);
            let want = &s2 / &ExactRational::integer(n as u64);
            let a = hoeffding_variance_exact(n, &xi)?;
            let b = vh_minus_vs_identity_exact(n, &xi)?;
            if a != want || b != want {
                return verdict(false, format!("n={n} k={k}: {a} / {b} vs {want}"));
            }
        }
    }
    verdict(true, format!("Var(U_n) = sigma2/n exactly by both routes, n <= {max_n}"))
}

fn double_u(max_n: usize) -> Outcome {
    let w = double_u_weights(6, 2)?;
    let want = vec![ExactRational::new(-9, 15), ExactRational::new(8, 15), ExactRational::new(1, 15)];
    if w != want {
        return verdict(false, format!("w(6,2) = {w:?}"));
    }
    for n in 2..=max_n {
        for k in 1..=n / 2 {
            let w = double_u_weights(n, k)?;
            if !w.iter().cloned().sum::<ExactRational>().is_zero() {
                return verdict(false, format!("sum w != 0 at n={n} k={k}"));
            }
            if !w[1..].iter().all(ExactRational::is_positive) {
                return verdict(false, format!("w_d <= 0 at n={n} k={k}"));
            }
        }
    }
    verdict(true, format!("w(6,2) = (-9/15, 8/15, 1/15); sum 0 and w_d > 0 for n <= {max_n}"))
}

fn one_nn(max_n: usize) -> Outcome {
    for n in 1..=max_n.max(50) {
        for k in 1..=n {
            let s: ExactRational = one_nn_weights(n, k)?.into_iter().sum();
            if s != ExactRational::one() {
                return verdict(false, format!("sum a_i = {s} at n={n} k={k}"));
            }
        }
    }
    let s2 = ExactRational::one();
    for n in 2..=10 {
        for k in 1..=n {
            let a = one_nn_weights(n, k)?;
            let closed: ExactRational = a.iter().map(|x| x * x).sum();
            let xi = one_nn_overlap_profile(n, k, &s2)?;
            if hoeffding_variance_exact(n, &xi)? != closed {
                return verdict(false, format!("1-NN variance mismatch at n={n} k={k}"));
            }
        }
    }
    verdict(true, "sum a_i = 1; sigma2 sum a_i^2 matches pair enumeration for n <= 10".into())
}

fn closed_forms() -> Outcome {
    let delta = delta_bm(2, 5)?;
    let v = matched_variance_closed_form(10, 2, 4, &mean_kernel_profile(5, 1.0)?)?;
    verdict(
        delta == ExactRational::new(1, 9) && (v - 0.1).abs() < 1e-15,
        format!("delta(2,5) = {delta}; Var(U_match) at n=10 k=5 M=2 B=4 = {v}"),
    )
}

fn golden() -> Outcome {
    let data = Dataset::new(vec![vec![0.0]; 4], vec![1.0, 2.0, 3.0, 4.0])?;
    let x = TargetPoint::new(vec![0.0])?;
    let (subsets, values) = subset_values(&data, &MeanKernel, 2, &x, &RandomStream::new(0))?;
    let e = complete_estimates(4, 2, &subsets, &values)?;
    let (vh, est) = (e.vh.unwrap_or(f64::NAN), e.estimate.unwrap_or(f64::NAN));
    let ok = (vh - 5.0 / 6.0).abs() <= 1e-12 && (e.vs - 5.0 / 12.0).abs() <= 1e-12 && (est - 5.0 / 12.0).abs() <= 1e-12;
    verdict(ok, format!("vh = {vh}, vs = {}, estimate = {est}", e.vs))
}

fn pair_identity() -> Outcome {
    let mut g = RandomStream::new(17).rng();
    let n = 11;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![g.unit_f64(), g.unit_f64()]).collect();
    let y: Vec<f64> = (0..n).map(|_| g.unit_f64()).collect();
    let data = Dataset::new(rows, y)?;
    let x = TargetPoint::new(vec![0.5, 0.5])?;
    let mut worst: f64 = 0.0;
    for k in 1..=5 {
        let (subsets, values) = subset_values(&data, &OneNnKernel, k, &x, &RandomStream::new(0))?;
        let e = complete_estimates(n, k, &subsets, &values)?;
        let avgs = overlap_pair_averages(n, k, &subsets, &values)?;
        let via: f64 = avgs.iter().zip(gamma_vector(n, k)?).map(|(a, g)| a.unwrap_or(0.0) * g).sum();
        worst = worst.max((via - e.vs).abs() / e.vs.max(f64::MIN_POSITIVE));
    }
    verdict(worst < 1e-12, format!("max relative gap {worst:.3e} (1-NN kernel, n=11)"))
}

/// Runs every identity check; binomial sweeps go up to `max_n`.
pub fn oracle_check(max_n: usize) -> OracleReport {
    let mut r = OracleReport::default();
    r.push("gamma coefficients form a hypergeometric pmf", gamma_pmf(max_n));
    r.push("gamma(4,2,.) = 1/6, 4/6, 1/6", gamma_examples());
    r.push("Hoeffding and vh - vs routes agree on the mean kernel", mean_kernel_routes(max_n));
    r.push("double-U weights", double_u(max_n));
    r.push("1-NN weights", one_nn(max_n));
    r.push("delta and matched closed form", closed_forms());
    r.push("complete estimators on y = (1,2,3,4), k = 2", golden());
    r.push("overlap-pair decomposition of the complete vs", pair_identity());
    r
}
