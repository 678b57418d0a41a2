//! Simulation harness: synthetic regression models, Monte Carlo ground truth,
//! bias and coverage evaluation, and the CSV prediction pipeline.

mod experiment;
mod table;

pub use experiment::{
    aggregate, format_summary, ground_truth, reaggregate_dir, replication_seed, run_experiment, run_replication,
    truth_seed, EvalRow, ExperimentConfig, ExperimentOutput, KernelChoice, RepRecord, TruthRow,
};
pub use table::{
    predict_with_intervals, read_csv, write_reports, ColumnKind, ColumnSpec, Encoder, MissingPolicy, Role, Schema,
    TableData,
};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, TargetPoint};
use crate::rng::RandomStream;

/// Regression function of a synthetic model on `[0, 1]^6`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    /// `10 sin(π x1 x2) + 20 (x3 - 0.05)² + 10 x4 + 5 x5`
    Mars,
    /// `2 x1 + 3 x2 - 5 x3 - x4 + 1`
    Mlr,
    /// A constant mean, for degenerate-truth checks.
    Constant(f64),
}

/// `y = g(x) + σ ε` with `x ~ U[0,1]^d` and `ε ~ N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimModel {
    pub kind: ModelKind,
    pub sigma: f64,
}

impl SimModel {
    pub fn mars() -> Self {
        Self {
            kind: ModelKind::Mars,
            sigma: 1.0,
        }
    }

    pub fn mlr() -> Self {
        Self {
            kind: ModelKind::Mlr,
            sigma: 1.0,
        }
    }

    pub fn constant(value: f64, sigma: f64) -> Self {
        Self {
            kind: ModelKind::Constant(value),
            sigma,
        }
    }

    pub fn with_sigma(self, sigma: f64) -> Self {
        Self { sigma, ..self }
    }

    pub fn dim(&self) -> usize {
        6
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ModelKind::Mars => "mars",
            ModelKind::Mlr => "mlr",
            ModelKind::Constant(_) => "constant",
        }
    }

    /// Noise-free response `g(x)`.
    pub fn mean(&self, x: &[f64]) -> f64 {
        match self.kind {
            ModelKind::Mars => {
                10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
                    + 20.0 * (x[2] - 0.05).powi(2)
                    + 10.0 * x[3]
                    + 5.0 * x[4]
            }
            ModelKind::Mlr => 2.0 * x[0] + 3.0 * x[1] - 5.0 * x[2] - x[3] + 1.0,
            ModelKind::Constant(c) => c,
        }
    }

    /// `n` i.i.d. draws. Row `i` uses `d` uniforms then one normal, all from
    /// `rs` in order.
    pub fn generate(&self, n: usize, rs: &RandomStream) -> Result<Dataset> {
        let d = self.dim();
        let mut rng = rs.rng();
        let mut rows = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..d).map(|_| rng.unit_f64()).collect();
            let eps: f64 = StandardNormal.sample(&mut rng);
            ys.push(self.mean(&row) + self.sigma * eps);
            rows.push(row);
        }
        Dataset::new(rows, ys)?.with_feature_names((1..=d).map(|j| format!("x{j}")).collect())
    }
}

/// Where the evaluation points come from.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetSpec {
    /// `count` points uniform on `[0,1]^d`.
    Random(usize),
    /// `(0.5, ..., 0.5)`.
    Center,
    /// A headered numeric CSV, one point per row.
    File(std::path::PathBuf),
}

impl std::str::FromStr for TargetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "center" {
            return Ok(Self::Center);
        }
        if let Some(c) = s.strip_prefix("random:") {
            let count = c
                .parse()
                .map_err(|_| Error::InvalidData(format!("bad target count in `{s}`")))?;
            return Ok(Self::Random(count));
        }
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(Self::File(p.into()));
        }
        Err(Error::InvalidData(format!("targets must be random:<count>, center or file:<path>, got `{s}`")))
    }
}

impl TargetSpec {
    /// Materializes the points; random targets draw from `rs`.
    pub fn resolve(&self, d: usize, rs: &RandomStream) -> Result<Vec<TargetPoint>> {
        match self {
            Self::Center => Ok(vec![TargetPoint::new(vec![0.5; d])?]),
            Self::Random(count) => {
                let mut rng = rs.rng();
                (0..*count)
                    .map(|_| TargetPoint::new((0..d).map(|_| rng.unit_f64()).collect()))
                    .collect()
            }
            Self::File(path) => {
                let mut rdr = csv::Reader::from_path(path)?;
                let mut out = Vec::new();
                for (i, rec) in rdr.records().enumerate() {
                    let rec = rec?;
                    let line = i as u64 + 2;
                    let coords = rec
                        .iter()
                        .map(|f| {
                            f.trim().parse::<f64>().map_err(|_| Error::MalformedCsv {
                                line,
                                msg: format!("`{f}` is not a number"),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let p = TargetPoint::new(coords)?;
                    p.check_dim(d)?;
                    out.push(p);
                }
                Ok(out)
            }
        }
    }
}
