//! Monte Carlo ground truth, replications, and bias/coverage aggregation.

use std::fs::{self, File};
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SimModel;
use crate::error::{Error, Result};
use crate::forest::{fit_forest, point_estimate, predict_matrix};
use crate::model::{validate_config, Dataset, ForestConfig, Kernel, MeanKernel, TargetPoint};
use crate::rng::RandomStream;
use crate::sampling::{sample_matched_groups, sample_subset_plan};
use crate::stats::{mean, normal_quantile, sample_variance};
use crate::tree::TreeKernel;
use crate::variance::{fit_bootstrap_ensemble, matched_variance_estimate, smoothed_variance_estimate, VarianceReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelChoice {
    Tree,
    Mean,
}

/// One simulation study. `m >= 2` runs the matched estimator; `m == 1` runs
/// the bootstrap estimator with `b` forest trees and `b` resample trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: SimModel,
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub b: usize,
    pub mtry: usize,
    pub nodesize: usize,
    pub n_mc: usize,
    pub n_truth: usize,
    pub targets: Vec<TargetPoint>,
    pub seed: u64,
    pub alpha: f64,
    pub smoothing: usize,
    pub kernel: KernelChoice,
}

impl ExperimentConfig {
    pub fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            k: self.k,
            m: self.m,
            b: self.b,
            mtry: self.mtry,
            nodesize: self.nodesize,
            seed: self.seed,
            smoothing_neighbors: self.smoothing,
            alpha: self.alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut cfg = self.forest_config();
        if self.m == 1 {
            // bootstrap mode allows any k <= n and M = 1
            cfg.k = cfg.k.min(self.n.saturating_sub(1));
        }
        validate_config(&cfg, self.n).map_err(Error::InvalidConfig)?;
        if self.mtry > self.model.dim() {
            return Err(Error::InvalidConfig(vec![crate::model::ConfigViolation::MtryOutOfRange {
                mtry: self.mtry,
                d: self.model.dim(),
            }]));
        }
        if self.m == 1 && self.b < 2 {
            return Err(Error::DegenerateEnsemble("bootstrap mode needs B >= 2".into()));
        }
        if self.n_mc == 0 || self.n_truth == 0 {
            return Err(Error::InvalidData("n_mc and n_truth must be >= 1".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidData("no target points".into()));
        }
        for t in &self.targets {
            t.check_dim(self.model.dim())?;
        }
        Ok(())
    }
}

/// One estimator output at one target in one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub target_id: usize,
    pub rep: usize,
    pub point: f64,
    pub vh: f64,
    pub vs: f64,
    pub var_raw: f64,
    pub var: f64,
    pub clipped: bool,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
}

impl RepRecord {
    fn from_report(target_id: usize, rep: usize, seed: u64, r: &VarianceReport) -> Self {
        Self {
            target_id,
            rep,
            point: r.point,
            vh: r.vh_hat,
            vs: r.vs_hat,
            var_raw: r.variance_raw,
            var: r.variance,
            clipped: r.clipped,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub target_id: usize,
    pub truth_mean: f64,
    pub truth_var: f64,
    pub n_truth: usize,
}

/// Aggregate performance at one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub estimator: String,
    pub target_id: usize,
    pub truth_mean: f64,
    pub truth_var: f64,
    pub n_reps: usize,
    pub mean_estimate: f64,
    pub sd_estimate: f64,
    /// `None` when the true variance is zero.
    pub relative_bias: Option<f64>,
    pub degenerate_truth: bool,
    pub coverage: f64,
    pub oracle_coverage: f64,
    pub mean_point: f64,
    pub sd_point: f64,
    pub clipped_fraction: f64,
}

pub struct ExperimentOutput {
    pub truth: Vec<TruthRow>,
    pub records: Vec<RepRecord>,
    pub smoothed: Vec<RepRecord>,
    pub eval: Vec<EvalRow>,
    pub eval_smoothed: Vec<EvalRow>,
}

fn derived_seed(root: u64, tag: u64, r: usize) -> u64 {
    RandomStream::new(root).split(&[tag, r as u64]).key()
}

/// Seed of MC replication `r`; [`run_replication`] with it reproduces the
/// replication bit for bit.
pub fn replication_seed(cfg: &ExperimentConfig, r: usize) -> u64 {
    derived_seed(cfg.seed, 10, r)
}

/// Seed of ground-truth replication `r`.
pub fn truth_seed(cfg: &ExperimentConfig, r: usize) -> u64 {
    derived_seed(cfg.seed, 20, r)
}

fn rep_data(cfg: &ExperimentConfig, rs: &RandomStream) -> Result<Dataset> {
    cfg.model.generate(cfg.n, &rs.child(100))
}

/// Forest point estimates at every target for one fresh dataset.
fn truth_points<K: Kernel>(cfg: &ExperimentConfig, kernel: &K, seed: u64) -> Result<Vec<f64>>
where
    K::Fitted: Send,
{
    let rs = RandomStream::new(seed);
    let data = rep_data(cfg, &rs)?;
    let fc = cfg.forest_config();
    let plan = if cfg.m >= 2 {
        sample_matched_groups(cfg.n, cfg.k, cfg.m, cfg.b, &rs.child(0))?
    } else {
        sample_subset_plan(cfg.n, cfg.k, cfg.b, &rs.child(0))?
    };
    let forest = fit_forest(&data, &plan, &fc, kernel, &rs)?;
    cfg.targets
        .iter()
        .map(|x| Ok(point_estimate(&predict_matrix(&forest, x)?)))
        .collect()
}

fn with_kernel<T>(
    cfg: &ExperimentConfig,
    f_tree: impl FnOnce(&TreeKernel) -> Result<T>,
    f_mean: impl FnOnce(&MeanKernel) -> Result<T>,
) -> Result<T> {
    match cfg.kernel {
        KernelChoice::Tree => f_tree(&TreeKernel {
            mtry: cfg.mtry,
            nodesize: cfg.nodesize,
        }),
        KernelChoice::Mean => f_mean(&MeanKernel),
    }
}

/// Sample mean and variance of the forest prediction at each target over
/// `n_truth` independent datasets.
pub fn ground_truth(cfg: &ExperimentConfig) -> Result<Vec<TruthRow>> {
    cfg.validate()?;
    let points: Vec<Vec<f64>> = (0..cfg.n_truth)
        .into_par_iter()
        .map(|r| {
            let seed = truth_seed(cfg, r);
            with_kernel(cfg, |k| truth_points(cfg, k, seed), |k| truth_points(cfg, k, seed))
        })
        .collect::<Result<_>>()?;
    Ok((0..cfg.targets.len())
        .map(|t| {
            let v: Vec<f64> = points.iter().map(|p| p[t]).collect();
            TruthRow {
                target_id: t,
                truth_mean: mean(&v),
                truth_var: sample_variance(&v).unwrap_or(0.0),
                n_truth: cfg.n_truth,
            }
        })
        .collect())
}

fn replication_with<K: Kernel>(
    cfg: &ExperimentConfig,
    kernel: &K,
    rep: usize,
    seed: u64,
) -> Result<(Vec<RepRecord>, Vec<RepRecord>)>
where
    K::Fitted: Send,
{
    let rs = RandomStream::new(seed);
    let data = rep_data(cfg, &rs)?;
    let fc = cfg.forest_config();
    let mut main = Vec::with_capacity(cfg.targets.len());
    let mut smooth = Vec::new();
    if cfg.m >= 2 {
        let plan = sample_matched_groups(cfg.n, cfg.k, cfg.m, cfg.b, &rs.child(0))?;
        let forest = fit_forest(&data, &plan, &fc, kernel, &rs)?;
        for (t, x) in cfg.targets.iter().enumerate() {
            let r = matched_variance_estimate(&predict_matrix(&forest, x)?, cfg.alpha)?;
            main.push(RepRecord::from_report(t, rep, seed, &r));
            if cfg.smoothing > 0 {
                let s = smoothed_variance_estimate(&forest, x, &data, cfg.smoothing, &rs.split(&[2, t as u64]), cfg.alpha)?;
                smooth.push(RepRecord::from_report(t, rep, seed, &s));
            }
        }
    } else {
        let ens = fit_bootstrap_ensemble(&data, &fc, kernel, &rs)?;
        for (t, x) in cfg.targets.iter().enumerate() {
            main.push(RepRecord::from_report(t, rep, seed, &ens.estimate(x, cfg.alpha)?));
        }
    }
    Ok((main, smooth))
}

/// Replication `rep` run from its own seed: fresh data, fresh plan and
/// forest, estimates at every target. Returns the plain and smoothed rows.
pub fn run_replication(cfg: &ExperimentConfig, rep: usize, seed: u64) -> Result<(Vec<RepRecord>, Vec<RepRecord>)> {
    with_kernel(
        cfg,
        |k| replication_with(cfg, k, rep, seed),
        |k| replication_with(cfg, k, rep, seed),
    )
}

/// Per-target summary of replication records against the truth. Records are
/// sorted by `(target_id, rep)` first, so the result does not depend on the
/// order they arrive in.
pub fn aggregate(estimator: &str, truth: &[TruthRow], records: &[RepRecord], alpha: f64) -> Result<Vec<EvalRow>> {
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let mut sorted: Vec<&RepRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.target_id, r.rep));
    truth
        .iter()
        .map(|t| {
            let rows: Vec<&RepRecord> = sorted.iter().copied().filter(|r| r.target_id == t.target_id).collect();
            if rows.is_empty() {
                return Err(Error::InvalidData(format!("no records for target {}", t.target_id)));
            }
            let count = rows.len() as f64;
            let raw: Vec<f64> = rows.iter().map(|r| r.var_raw).collect();
            let pts: Vec<f64> = rows.iter().map(|r| r.point).collect();
            let mean_estimate = mean(&raw);
            let covered = rows.iter().filter(|r| r.ci_low <= t.truth_mean && t.truth_mean <= r.ci_high).count();
            let half = z * t.truth_var.sqrt();
            let oracle = rows.iter().filter(|r| (r.point - t.truth_mean).abs() <= half).count();
            let degenerate = t.truth_var <= 0.0;
            Ok(EvalRow {
                estimator: estimator.to_string(),
                target_id: t.target_id,
                truth_mean: t.truth_mean,
                truth_var: t.truth_var,
                n_reps: rows.len(),
                mean_estimate,
                sd_estimate: sample_variance(&raw).unwrap_or(0.0).sqrt(),
                relative_bias: (!degenerate).then(|| (mean_estimate - t.truth_var) / t.truth_var),
                degenerate_truth: degenerate,
                coverage: covered as f64 / count,
                oracle_coverage: oracle as f64 / count,
                mean_point: mean(&pts),
                sd_point: sample_variance(&pts).unwrap_or(0.0).sqrt(),
                clipped_fraction: rows.iter().filter(|r| r.clipped).count() as f64 / count,
            })
        })
        .collect()
}

/// Plain-text table of the per-target rows followed by their averages.
pub fn format_summary(rows: &[EvalRow]) -> String {
    let mut s = format!(
        "{:<9} {:>6} {:>11} {:>11} {:>11} {:>9} {:>8} {:>8}\n",
        "estimator", "target", "truth_mean", "truth_var", "mean_est", "rel_bias", "cover", "oracle"
    );
    for r in rows {
        let rb = r.relative_bias.map_or("NA".to_string(), |b| format!("{:.2}%", 100.0 * b));
        s.push_str(&format!(
            "{:<9} {:>6} {:>11.5} {:>11.6} {:>11.6} {:>9} {:>8.3} {:>8.3}\n",
            r.estimator, r.target_id, r.truth_mean, r.truth_var, r.mean_estimate, rb, r.coverage, r.oracle_coverage
        ));
    }
    if !rows.is_empty() {
        let biases: Vec<f64> = rows.iter().filter_map(|r| r.relative_bias).collect();
        let cov: Vec<f64> = rows.iter().map(|r| r.coverage).collect();
        let orc: Vec<f64> = rows.iter().map(|r| r.oracle_coverage).collect();
        let rb = if biases.is_empty() {
            "NA".to_string()
        } else {
            format!("{:.2}%", 100.0 * mean(&biases))
        };
        s.push_str(&format!(
            "{:<9} {:>6} {:>11} {:>11} {:>11} {:>9} {:>8.3} {:>8.3}\n",
            rows[0].estimator,
            "mean",
            "",
            "",
            "",
            rb,
            mean(&cov),
            mean(&orc)
        ));
    }
    s
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

/// Appends rows to a CSV file, flushing after every batch so an interrupted
/// run leaves every finished replication on disk.
struct Sink {
    w: csv::Writer<File>,
}

impl Sink {
    fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            w: csv::Writer::from_path(path)?,
        })
    }

    fn push(&mut self, rows: &[RepRecord]) -> Result<()> {
        for r in rows {
            self.w.serialize(r)?;
        }
        self.w.flush()?;
        Ok(())
    }
}

const BATCH: usize = 8;

/// Full study: ground truth, then `n_mc` replications, then aggregation.
/// With `out`, writes `config.json`, `truth.csv`, `results.csv` (matched or
/// bootstrap rows), `results_smoothed.csv` (when smoothing), and
/// `summary.csv` / `summary.txt`.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    }
    let truth = ground_truth(cfg)?;
    let mut sinks = match out {
        Some(dir) => {
            write_csv(&dir.join("truth.csv"), &truth)?;
            let smooth = if cfg.smoothing > 0 && cfg.m >= 2 {
                Some(Sink::create(&dir.join("results_smoothed.csv"))?)
            } else {
                None
            };
            Some((Sink::create(&dir.join("results.csv"))?, smooth))
        }
        None => None,
    };

    let mut records = Vec::with_capacity(cfg.n_mc * cfg.targets.len());
    let mut smoothed = Vec::new();
    let reps: Vec<usize> = (0..cfg.n_mc).collect();
    for batch in reps.chunks(BATCH) {
        let done = batch
            .par_iter()
            .map(|&r| run_replication(cfg, r, replication_seed(cfg, r)))
            .collect::<Result<Vec<_>>>()?;
        for (main, smooth) in done {
            if let Some((m, s)) = sinks.as_mut() {
                m.push(&main)?;
                if let Some(s) = s.as_mut() {
                    s.push(&smooth)?;
                }
            }
            records.extend(main);
            smoothed.extend(smooth);
        }
    }

    let label = if cfg.m >= 2 { "matched" } else { "bootstrap" };
    let eval = aggregate(label, &truth, &records, cfg.alpha)?;
    let eval_smoothed = if smoothed.is_empty() {
        Vec::new()
    } else {
        aggregate("smoothed", &truth, &smoothed, cfg.alpha)?
    };
    if let Some(dir) = out {
        let mut all = eval.clone();
        all.extend(eval_smoothed.iter().cloned());
        write_csv(&dir.join("summary.csv"), &all)?;
        let mut f = File::create(dir.join("summary.txt"))?;
        f.write_all(format_summary(&eval).as_bytes())?;
        if !eval_smoothed.is_empty() {
            f.write_all(format_summary(&eval_smoothed).as_bytes())?;
        }
    }
    Ok(ExperimentOutput {
        truth,
        records,
        smoothed,
        eval,
        eval_smoothed,
    })
}

/// Recomputes the summary of a finished run from its `config.json`,
/// `truth.csv` and result files.
pub fn reaggregate_dir(dir: &Path) -> Result<Vec<EvalRow>> {
    let cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    let truth: Vec<TruthRow> = read_csv_rows(&dir.join("truth.csv"))?;
    let records: Vec<RepRecord> = read_csv_rows(&dir.join("results.csv"))?;
    let label = if cfg.m >= 2 { "matched" } else { "bootstrap" };
    let mut rows = aggregate(label, &truth, &records, cfg.alpha)?;
    let sp = dir.join("results_smoothed.csv");
    if sp.exists() {
        let sm: Vec<RepRecord> = read_csv_rows(&sp)?;
        rows.extend(aggregate("smoothed", &truth, &sm, cfg.alpha)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{matched_variance_closed_form, mean_kernel_profile};

    fn mean_cfg(n_mc: usize) -> ExperimentConfig {
        ExperimentConfig {
            model: SimModel::constant(0.0, 1.0),
            n: 20,
            k: 5,
            m: 2,
            b: 10,
            mtry: 3,
            nodesize: 2,
            n_mc,
            n_truth: 200,
            targets: vec![TargetPoint::new(vec![0.5; 6]).unwrap()],
            seed: 42,
            alpha: 0.1,
            smoothing: 0,
            kernel: KernelChoice::Mean,
        }
    }

    #[test]
    fn constant_zero_noise_truth_is_degenerate() {
        let mut cfg = mean_cfg(3);
        cfg.model = SimModel::constant(2.0, 0.0);
        cfg.kernel = KernelChoice::Tree;
        cfg.n_truth = 3;
        let out = run_experiment(&cfg, None).unwrap();
        assert_eq!(out.truth[0].truth_var, 0.0);
        assert_eq!(out.truth[0].truth_mean, 2.0);
        let e = &out.eval[0];
        assert!(e.degenerate_truth);
        assert_eq!(e.relative_bias, None);
        assert!(e.mean_estimate.is_finite());
        assert!(format_summary(&out.eval).contains("NA"));
    }

    #[test]
    fn truth_is_deterministic() {
        let cfg = mean_cfg(1);
        assert_eq!(ground_truth(&cfg).unwrap(), ground_truth(&cfg).unwrap());
    }

    #[test]
    fn mean_kernel_truth_matches_closed_form() {
        let mut cfg = mean_cfg(1);
        cfg.n_truth = 4000;
        let t = ground_truth(&cfg).unwrap();
        let want = matched_variance_closed_form(20, 2, 10, &mean_kernel_profile(5, 1.0).unwrap()).unwrap();
        // sampling sd of a variance estimate: want * sqrt(2/(N-1))
        let se = want * (2.0 / 3999.0f64).sqrt();
        assert!((t[0].truth_var - want).abs() < 4.0 * se, "{} vs {want}", t[0].truth_var);
    }

    #[test]
    fn replication_is_rerunnable_in_isolation() {
        let mut cfg = mean_cfg(4);
        cfg.kernel = KernelChoice::Tree;
        cfg.model = SimModel::mars();
        cfg.n = 40;
        cfg.k = 10;
        cfg.b = 5;
        cfg.n_truth = 2;
        cfg.smoothing = 3;
        let out = run_experiment(&cfg, None).unwrap();
        let r2: Vec<&RepRecord> = out.records.iter().filter(|r| r.rep == 2).collect();
        let (again, sm) = run_replication(&cfg, 2, r2[0].seed).unwrap();
        assert_eq!(again.len(), 1);
        assert_eq!(again[0].point.to_bits(), r2[0].point.to_bits());
        assert_eq!(again[0].var_raw.to_bits(), r2[0].var_raw.to_bits());
        assert_eq!(sm[0], out.smoothed.iter().find(|r| r.rep == 2).unwrap().clone());
    }

    #[test]
    fn aggregation_is_order_insensitive_and_reproducible_from_csv() {
        let mut cfg = mean_cfg(12);
        cfg.targets.push(TargetPoint::new(vec![0.1; 6]).unwrap());
        cfg.smoothing = 0;
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment(&cfg, Some(dir.path())).unwrap();
        let mut shuffled = out.records.clone();
        shuffled.reverse();
        assert_eq!(aggregate("matched", &out.truth, &shuffled, 0.1).unwrap(), out.eval);
        assert_eq!(reaggregate_dir(dir.path()).unwrap(), out.eval);
        let text = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "target_id,rep,point,vh,vs,var_raw,var,clipped,ci_low,ci_high,seed"
        );
        assert_eq!(text.lines().count(), 1 + 24);
        assert!(dir.path().join("summary.txt").exists());
    }

    #[test]
    fn coverage_bounds_and_bootstrap_mode() {
        let mut cfg = mean_cfg(6);
        cfg.m = 1;
        cfg.k = 15;
        let out = run_experiment(&cfg, None).unwrap();
        for e in &out.eval {
            assert!((0.0..=1.0).contains(&e.coverage));
            assert_eq!(e.estimator, "bootstrap");
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = mean_cfg(1);
        cfg.m = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = mean_cfg(0);
        cfg.n_mc = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = mean_cfg(1);
        cfg.mtry = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = mean_cfg(1);
        cfg.targets = vec![TargetPoint::new(vec![0.5; 2]).unwrap()];
        assert!(cfg.validate().is_err());
    }
}
