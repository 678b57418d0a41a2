//! Variance estimators for the matched-group ensemble, the `k > n/2`
//! bootstrap extension, the locally smoothed average, and normal intervals.
//!
//! With `h_i^(b)` the prediction of tree `i` in group `b`:
//!
//! * `vh = (1/B) Σ_b (1/(M-1)) Σ_i (h_i^(b) - hbar^(b))²` estimates the
//!   single-tree variance from within-group spread of disjoint subsamples;
//! * `vs = (1/(MB-1)) Σ_{b,i} (h_i^(b) - U)²` is the spread of all trees;
//! * `variance_raw = vh - (MB-1)/(MB) · vs`, unbiased for `Var(U)`.
//!
//! The raw value can be negative at small `B`; reports keep it and expose a
//! clipped `max(raw, 0)` that intervals are built from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{fit_forest, point_estimate, predict_matrix, Forest, PredictionMatrix};
use crate::model::{Dataset, ForestConfig, Kernel, Predictor, TargetPoint};
use crate::rng::RandomStream;
use crate::sampling::{sample_bootstrap_plan, sample_matched_groups, sample_subset_plan};
use crate::stats::{normal_quantile, pairwise_sum, sample_variance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorMode {
    Matched,
    Bootstrap,
    Smoothed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub point: f64,
    pub vh_hat: f64,
    pub vs_hat: f64,
    pub variance_raw: f64,
    pub variance: f64,
    pub clipped: bool,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub mode: EstimatorMode,
}

impl VarianceReport {
    pub fn new(point: f64, vh_hat: f64, vs_hat: f64, variance_raw: f64, alpha: f64, mode: EstimatorMode) -> Result<Self> {
        let clipped = variance_raw < 0.0;
        let variance = variance_raw.max(0.0);
        let (ci_low, ci_high) = confidence_interval(point, variance, alpha)?;
        Ok(Self {
            point,
            vh_hat,
            vs_hat,
            variance_raw,
            variance,
            clipped,
            ci_low,
            ci_high,
            alpha,
            mode,
        })
    }
}

pub fn estimate_vh_matched(pm: &PredictionMatrix) -> Result<f64> {
    let m = pm.m();
    if m < 2 {
        return Err(Error::GroupTooSmall(m));
    }
    let per_group: Vec<f64> = (0..pm.b())
        .map(|b| {
            let g: Vec<f64> = pm.group(b).collect();
            let mean = pairwise_sum(&g) / m as f64;
            let ss: f64 = g.iter().map(|v| (v - mean) * (v - mean)).sum();
            ss / (m - 1) as f64
        })
        .collect();
    Ok(pairwise_sum(&per_group) / pm.b() as f64)
}

pub fn estimate_vs(pm: &PredictionMatrix) -> Result<f64> {
    let total = pm.m() * pm.b();
    if total < 2 {
        return Err(Error::DegenerateEnsemble(format!("M*B = {total} < 2")));
    }
    let u = point_estimate(pm);
    let dev: Vec<f64> = pm.values().iter().map(|v| (v - u) * (v - u)).collect();
    Ok(pairwise_sum(&dev) / (total - 1) as f64)
}

pub fn matched_variance_estimate(pm: &PredictionMatrix, alpha: f64) -> Result<VarianceReport> {
    let vh = estimate_vh_matched(pm)?;
    let vs = estimate_vs(pm)?;
    let mb = (pm.m() * pm.b()) as f64;
    let raw = vh - (mb - 1.0) / mb * vs;
    VarianceReport::new(point_estimate(pm), vh, vs, raw, alpha, EstimatorMode::Matched)
}

/// `k > n/2` estimator: `vh` from the spread of extra bootstrap-resample
/// trees, `vs` from the spread of the `B` forest trees, and
/// `variance_raw = vh - (B-1)/B · vs`.
pub fn bootstrap_variance_estimate(main_preds: &[f64], boot_preds: &[f64], alpha: f64) -> Result<VarianceReport> {
    if main_preds.len() < 2 || boot_preds.len() < 2 {
        return Err(Error::DegenerateEnsemble(format!(
            "bootstrap estimator needs B >= 2 and B' >= 2, got {} and {}",
            main_preds.len(),
            boot_preds.len()
        )));
    }
    let vh = sample_variance(boot_preds).expect("len >= 2");
    let vs = sample_variance(main_preds).expect("len >= 2");
    let b = main_preds.len() as f64;
    let raw = vh - (b - 1.0) / b * vs;
    let point = pairwise_sum(main_preds) / b;
    VarianceReport::new(point, vh, vs, raw, alpha, EstimatorMode::Bootstrap)
}

/// `point ± z_{alpha/2} · sqrt(variance)`.
pub fn confidence_interval(point: f64, variance: f64, alpha: f64) -> Result<(f64, f64)> {
    if variance < 0.0 || variance.is_nan() {
        return Err(Error::NegativeVariance(variance));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let half = normal_quantile(1.0 - alpha / 2.0)? * variance.sqrt();
    Ok((point - half, point + half))
}

/// `N` points drawn uniformly on the sphere around `x` whose radius is the
/// distance from `x` to its nearest training row.
pub fn generate_neighbors(x: &TargetPoint, data: &Dataset, count: usize, rs: &RandomStream) -> Result<Vec<TargetPoint>> {
    x.check_dim(data.d())?;
    if count == 0 {
        return Ok(Vec::new());
    }
    let radius = (0..data.n())
        .map(|j| {
            data.row(j)
                .iter()
                .zip(x.coords())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt();
    let mut rng = rs.rng();
    let d = data.d();
    let mut out = Vec::with_capacity(count);
    let mut dir = vec![0.0; d];
    while out.len() < count {
        for v in dir.iter_mut() {
            *v = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        }
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let p = x.coords().iter().zip(&dir).map(|(c, u)| c + radius * u / norm).collect();
        out.push(TargetPoint::new(p)?);
    }
    Ok(out)
}

/// Matched estimate at `x` using an already fitted forest.
pub fn estimate_at<F: Predictor>(forest: &Forest<F>, x: &TargetPoint, alpha: f64) -> Result<VarianceReport> {
    matched_variance_estimate(&predict_matrix(forest, x)?, alpha)
}

/// Average of the matched estimates at `x` and at `N` neighbors, all read off
/// the same fitted forest. The point estimate stays the one at `x`.
pub fn smoothed_variance_estimate<F: Predictor>(
    forest: &Forest<F>,
    x: &TargetPoint,
    data: &Dataset,
    neighbors: usize,
    rs: &RandomStream,
    alpha: f64,
) -> Result<VarianceReport> {
    let base = estimate_at(forest, x, alpha)?;
    let mut reports = vec![base.clone()];
    for p in generate_neighbors(x, data, neighbors, rs)? {
        reports.push(estimate_at(forest, &p, alpha)?);
    }
    smooth(&base, &reports, alpha)
}

/// Like [`smoothed_variance_estimate`] but refits a fresh matched forest for
/// every neighbor, following the per-point definition literally.
pub fn smoothed_variance_estimate_refit<K: Kernel>(
    forest: &Forest<K::Fitted>,
    kernel: &K,
    x: &TargetPoint,
    data: &Dataset,
    neighbors: usize,
    rs: &RandomStream,
    alpha: f64,
) -> Result<VarianceReport>
where
    K::Fitted: Send,
{
    let cfg = forest.config();
    let base = estimate_at(forest, x, alpha)?;
    let mut reports = vec![base.clone()];
    for (j, p) in generate_neighbors(x, data, neighbors, rs)?.into_iter().enumerate() {
        let refit = rs.split(&[7, j as u64]);
        let plan = sample_matched_groups(data.n(), cfg.k, cfg.m, cfg.b, &refit.child(0))?;
        let f = fit_forest(data, &plan, cfg, kernel, &refit)?;
        reports.push(estimate_at(&f, &p, alpha)?);
    }
    smooth(&base, &reports, alpha)
}

fn smooth(base: &VarianceReport, reports: &[VarianceReport], alpha: f64) -> Result<VarianceReport> {
    let avg = |f: fn(&VarianceReport) -> f64| {
        let v: Vec<f64> = reports.iter().map(f).collect();
        pairwise_sum(&v) / v.len() as f64
    };
    VarianceReport::new(
        base.point,
        avg(|r| r.vh_hat),
        avg(|r| r.vs_hat),
        avg(|r| r.variance_raw),
        alpha,
        EstimatorMode::Smoothed,
    )
}

/// The two ensembles behind the `k > n/2` estimator: `B` subset trees forming
/// the forest and `B` extra trees on size-`k` bootstrap multisets.
pub struct BootstrapEnsemble<F> {
    pub main: Forest<F>,
    pub boot: Forest<F>,
}

/// Fits both ensembles. `cfg.b` trees each; `cfg.m` is ignored (`M = 1`).
/// Streams: subset plan `[0]`, forest trees `[1, b, 0]`, bootstrap plan `[4]`,
/// bootstrap trees `[5, 1, b, 0]`.
pub fn fit_bootstrap_ensemble<K: Kernel>(
    data: &Dataset,
    cfg: &ForestConfig,
    kernel: &K,
    rs: &RandomStream,
) -> Result<BootstrapEnsemble<K::Fitted>>
where
    K::Fitted: Send,
{
    let n = data.n();
    let main_plan = sample_subset_plan(n, cfg.k, cfg.b, &rs.child(0))?;
    let boot_plan = sample_bootstrap_plan(n, cfg.k, cfg.b, &rs.child(4))?;
    Ok(BootstrapEnsemble {
        main: fit_forest(data, &main_plan, cfg, kernel, rs)?,
        boot: fit_forest(data, &boot_plan, cfg, kernel, &rs.child(5))?,
    })
}

impl<F: Predictor> BootstrapEnsemble<F> {
    pub fn estimate(&self, x: &TargetPoint, alpha: f64) -> Result<VarianceReport> {
        let main = predict_matrix(&self.main, x)?;
        let boot = predict_matrix(&self.boot, x)?;
        bootstrap_variance_estimate(main.values(), boot.values(), alpha)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::model::MeanKernel;
    use crate::tree::TreeKernel;

    fn pm(rows: Vec<Vec<f64>>) -> PredictionMatrix {
        PredictionMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn vh_examples() {
        assert_eq!(estimate_vh_matched(&pm(vec![vec![0.0], vec![2.0]])).unwrap(), 2.0);
        assert_eq!(estimate_vh_matched(&pm(vec![vec![4.0; 3]; 2])).unwrap(), 0.0);
        assert_eq!(estimate_vh_matched(&pm(vec![vec![1.0, 5.0], vec![3.0, 9.0]])).unwrap(), 5.0);
        assert!(matches!(estimate_vh_matched(&pm(vec![vec![1.0, 2.0]])), Err(Error::GroupTooSmall(1))));
    }

    #[test]
    fn vs_examples() {
        assert_eq!(estimate_vs(&pm(vec![vec![0.0], vec![2.0]])).unwrap(), 2.0);
        assert_eq!(estimate_vs(&pm(vec![vec![4.0; 3]; 2])).unwrap(), 0.0);
        let v = estimate_vs(&pm(vec![vec![1.0, 5.0], vec![3.0, 9.0]])).unwrap();
        assert!((v - 35.0 / 3.0).abs() < 1e-14);
        assert!(matches!(estimate_vs(&pm(vec![vec![1.0]])), Err(Error::DegenerateEnsemble(_))));
    }

    #[test]
    fn matched_examples() {
        let r = matched_variance_estimate(&pm(vec![vec![4.0; 3]; 2]), 0.1).unwrap();
        assert_eq!(r.variance_raw, 0.0);
        assert!(!r.clipped);
        assert_eq!((r.ci_low, r.ci_high), (4.0, 4.0));

        let r = matched_variance_estimate(&pm(vec![vec![0.0], vec![2.0]]), 0.1).unwrap();
        assert_eq!(r.variance_raw, 1.0);
        assert_eq!(r.point, 1.0);

        let r = matched_variance_estimate(&pm(vec![vec![1.0, 5.0], vec![3.0, 9.0]]), 0.1).unwrap();
        assert!((r.variance_raw + 3.75).abs() < 1e-14);
        assert_eq!(r.variance, 0.0);
        assert!(r.clipped);
        assert_eq!(r.mode, EstimatorMode::Matched);
        assert!(r.ci_low <= r.point && r.point <= r.ci_high);
    }

    #[test]
    fn bootstrap_examples() {
        let r = bootstrap_variance_estimate(&[3.0, 3.0, 3.0], &[1.0, 1.0], 0.1).unwrap();
        assert_eq!(r.variance_raw, 0.0);
        let r = bootstrap_variance_estimate(&[0.0, 2.0], &[0.0, 4.0], 0.1).unwrap();
        assert_eq!((r.vh_hat, r.vs_hat, r.variance_raw), (8.0, 2.0, 7.0));
        assert_eq!(r.mode, EstimatorMode::Bootstrap);
        assert!(bootstrap_variance_estimate(&[1.0], &[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn interval_examples() {
        let (lo, hi) = confidence_interval(18.0, 0.81, 0.10).unwrap();
        assert!((lo - 16.519_631_7).abs() < 1e-6 && (hi - 19.480_368_3).abs() < 1e-6);
        let (lo, hi) = confidence_interval(0.0, 1.0, 0.05).unwrap();
        assert!((lo + 1.959_964).abs() < 1e-6 && (hi - 1.959_964).abs() < 1e-6);
        assert_eq!(confidence_interval(2.0, 0.0, 0.3).unwrap(), (2.0, 2.0));
        assert!(matches!(confidence_interval(0.0, -1e-9, 0.1), Err(Error::NegativeVariance(_))));
        assert!(confidence_interval(0.0, 1.0, 0.0).is_err());
    }

    fn line_data() -> Dataset {
        Dataset::new(vec![vec![3.0, 0.0]], vec![1.0]).unwrap()
    }

    #[test]
    fn neighbors_empty_and_degenerate() {
        let rs = RandomStream::new(1);
        let x = TargetPoint::new(vec![0.0, 0.0]).unwrap();
        assert!(generate_neighbors(&x, &line_data(), 0, &rs).unwrap().is_empty());
        let on_point = TargetPoint::new(vec![3.0, 0.0]).unwrap();
        for p in generate_neighbors(&on_point, &line_data(), 5, &rs).unwrap() {
            assert_eq!(p, on_point);
        }
        let bad = TargetPoint::new(vec![0.0]).unwrap();
        assert!(generate_neighbors(&bad, &line_data(), 1, &rs).is_err());
    }

    #[test]
    fn neighbors_on_circle_and_angularly_uniform() {
        let rs = RandomStream::new(2);
        let x = TargetPoint::new(vec![0.0, 0.0]).unwrap();
        let pts = generate_neighbors(&x, &line_data(), 10_000, &rs).unwrap();
        let bins = 12;
        let mut counts = vec![0f64; bins];
        for p in &pts {
            let (a, b) = (p.coords()[0], p.coords()[1]);
            assert!(((a * a + b * b).sqrt() - 3.0).abs() < 1e-12);
            let theta = b.atan2(a) + std::f64::consts::PI;
            counts[((theta / std::f64::consts::TAU * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
        let e = 10_000.0 / bins as f64;
        let chi2: f64 = counts.iter().map(|c| (c - e).powi(2) / e).sum();
        // df = 11, 99.9% quantile 31.26
        assert!(chi2 < 31.26, "chi2 = {chi2}");
    }

    fn small_forest() -> (Dataset, Forest<crate::tree::Tree>) {
        let mut g = RandomStream::new(8).rng();
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..2).map(|_| g.unit_f64()).collect()).collect();
        let ys = rows.iter().map(|r| 4.0 * r[0] + g.unit_f64()).collect();
        let data = Dataset::new(rows, ys).unwrap();
        let cfg = ForestConfig::with_defaults(40, 2, 10, 4, 30);
        let rs = RandomStream::new(5);
        let plan = sample_matched_groups(40, 10, 4, 30, &rs.child(0)).unwrap();
        let f = fit_forest(&data, &plan, &cfg, &TreeKernel::from_config(&cfg), &rs).unwrap();
        (data, f)
    }

    #[test]
    fn smoothing_with_no_neighbors_is_matched() {
        let (data, f) = small_forest();
        let x = TargetPoint::new(vec![0.4, 0.6]).unwrap();
        let rs = RandomStream::new(1);
        let s = smoothed_variance_estimate(&f, &x, &data, 0, &rs, 0.1).unwrap();
        let m = estimate_at(&f, &x, 0.1).unwrap();
        assert_eq!(s.variance_raw, m.variance_raw);
        assert_eq!(s.point, m.point);
        assert_eq!(s.mode, EstimatorMode::Smoothed);
    }

    #[test]
    fn smoothing_is_average_of_point_estimates() {
        let (data, f) = small_forest();
        let x = TargetPoint::new(vec![0.4, 0.6]).unwrap();
        let rs = RandomStream::new(1);
        let s = smoothed_variance_estimate(&f, &x, &data, 6, &rs, 0.1).unwrap();
        let mut raws = vec![estimate_at(&f, &x, 0.1).unwrap().variance_raw];
        for p in generate_neighbors(&x, &data, 6, &rs).unwrap() {
            raws.push(estimate_at(&f, &p, 0.1).unwrap().variance_raw);
        }
        let avg = raws.iter().sum::<f64>() / 7.0;
        assert!((s.variance_raw - avg).abs() < 1e-14 * avg.abs().max(1.0));
        assert_eq!(s.point, estimate_at(&f, &x, 0.1).unwrap().point);
    }

    #[test]
    fn smoothing_constant_data_is_zero() {
        let data = Dataset::new((0..20).map(|i| vec![i as f64 / 20.0]).collect(), vec![1.0; 20]).unwrap();
        let cfg = ForestConfig::with_defaults(20, 1, 5, 4, 5);
        let rs = RandomStream::new(5);
        let plan = sample_matched_groups(20, 5, 4, 5, &rs.child(0)).unwrap();
        let kernel = TreeKernel::from_config(&cfg);
        let f = fit_forest(&data, &plan, &cfg, &kernel, &rs).unwrap();
        let x = TargetPoint::new(vec![0.33]).unwrap();
        let s = smoothed_variance_estimate(&f, &x, &data, 4, &rs.child(2), 0.1).unwrap();
        assert_eq!(s.variance_raw, 0.0);
        let s = smoothed_variance_estimate_refit(&f, &kernel, &x, &data, 3, &rs.child(2), 0.1).unwrap();
        assert_eq!(s.variance_raw, 0.0);
    }

    #[test]
    fn bootstrap_ensemble_shapes() {
        let data = Dataset::new((0..10).map(|i| vec![i as f64]).collect(), (0..10).map(|i| i as f64).collect()).unwrap();
        let cfg = ForestConfig::with_defaults(10, 1, 8, 1, 6);
        let e = fit_bootstrap_ensemble(&data, &cfg, &MeanKernel, &RandomStream::new(3)).unwrap();
        assert_eq!(e.main.len(), 6);
        assert_eq!(e.boot.len(), 6);
        let r = e.estimate(&TargetPoint::new(vec![0.0]).unwrap(), 0.1).unwrap();
        assert_eq!(r.mode, EstimatorMode::Bootstrap);
    }

    proptest! {
        #[test]
        fn shift_and_scale_equivariance(
            vals in prop::collection::vec(-50.0f64..50.0, 12),
            shift in -100.0f64..100.0,
            scale in 0.1f64..10.0,
        ) {
            let base = PredictionMatrix::from_values(3, 4, vals).unwrap();
            let r0 = matched_variance_estimate(&base, 0.1).unwrap();
            let r1 = matched_variance_estimate(&base.map(|v| v + shift).unwrap(), 0.1).unwrap();
            let r2 = matched_variance_estimate(&base.map(|v| v * scale).unwrap(), 0.1).unwrap();
            let tol = 1e-9 * (r0.vh_hat + r0.vs_hat + 1.0);
            prop_assert!((r1.variance_raw - r0.variance_raw).abs() < tol);
            prop_assert!((r1.vh_hat - r0.vh_hat).abs() < tol);
            prop_assert!((r1.vs_hat - r0.vs_hat).abs() < tol);
            prop_assert!((r2.variance_raw - scale * scale * r0.variance_raw).abs() < tol * scale * scale);
        }

        #[test]
        fn clipping_and_interval_invariants(vals in prop::collection::vec(-5.0f64..5.0, 2..40)) {
            let m = 2;
            let b = vals.len() / 2;
            let pm = PredictionMatrix::from_values(m, b, vals[..m * b].to_vec()).unwrap();
            let r = matched_variance_estimate(&pm, 0.1).unwrap();
            prop_assert_eq!(r.variance, r.variance_raw.max(0.0));
            prop_assert_eq!(r.clipped, r.variance_raw < 0.0);
            prop_assert!(r.ci_low <= r.point && r.point <= r.ci_high);
        }

        #[test]
        fn interval_width_monotone(v1 in 0.0f64..10.0, dv in 0.0f64..10.0, p in -5.0f64..5.0) {
            let (a, b) = confidence_interval(p, v1, 0.1).unwrap();
            let (c, d) = confidence_interval(p, v1 + dv, 0.1).unwrap();
            prop_assert!(d - c >= b - a);
        }
    }
}
