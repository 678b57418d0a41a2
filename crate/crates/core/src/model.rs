//! Shared domain types: the training corpus, target points, the forest
//! configuration and the kernel abstraction every estimator runs against.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Training corpus: an `n × d` feature matrix (row-major) and a response
/// vector. Each feature's sample order is cached at construction so tree
/// fitting never sorts.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Vec<f64>,
    response: Vec<f64>,
    n: usize,
    d: usize,
    feature_names: Option<Vec<String>>,
    sorted: Vec<Vec<u32>>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, response: Vec<f64>) -> Result<Self> {
        let n = features.len();
        let d = features.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * d);
        for (i, row) in features.iter().enumerate() {
            if row.len() != d {
                return Err(Error::InvalidData(format!(
                    "row {i} has {} features, expected {d}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(flat, response, d)
    }

    pub fn from_flat(features: Vec<f64>, response: Vec<f64>, d: usize) -> Result<Self> {
        let n = response.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset needs at least one row".into()));
        }
        if d == 0 {
            return Err(Error::InvalidData("dataset needs at least one feature".into()));
        }
        if features.len() != n * d {
            return Err(Error::InvalidData(format!(
                "feature matrix has {} entries, expected {n}x{d}",
                features.len()
            )));
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidData("too many rows".into()));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite feature at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        if let Some(pos) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite response at row {pos}")));
        }
        let sorted = (0..d)
            .map(|f| {
                let mut order: Vec<u32> = (0..n as u32).collect();
                order.sort_by(|&a, &b| {
                    features[a as usize * d + f]
                        .total_cmp(&features[b as usize * d + f])
                        .then(a.cmp(&b))
                });
                order
            })
            .collect();
        Ok(Self {
            features,
            response,
            n,
            d,
            feature_names: None,
            sorted,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d {
            return Err(Error::InvalidData(format!(
                "{} feature names for {} features",
                names.len(),
                self.d
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn x(&self, i: usize, f: usize) -> f64 {
        self.features[i * self.d + f]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.response[i]
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Row indices ordered by feature `f` (ties by row index).
    pub fn sorted_by(&self, f: usize) -> &[u32] {
        &self.sorted[f]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetPoint(Vec<f64>);

impl TargetPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("target point has non-finite coordinate".into()));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.0.len() == d {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: d,
                got: self.0.len(),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    /// Subsample size.
    pub k: usize,
    /// Trees per matched group.
    pub m: usize,
    /// Number of groups.
    pub b: usize,
    pub mtry: usize,
    pub nodesize: usize,
    pub seed: u64,
    /// Neighbors used by the locally smoothed estimator.
    pub smoothing_neighbors: usize,
    pub alpha: f64,
}

impl ForestConfig {
    /// Configuration with the default tuning for a `d`-dimensional corpus of
    /// `n` rows: `mtry = ceil(d/2)`, `nodesize = 2 floor(ln n)`, `alpha = 0.10`.
    pub fn with_defaults(n: usize, d: usize, k: usize, m: usize, b: usize) -> Self {
        Self {
            k,
            m,
            b,
            mtry: default_mtry(d),
            nodesize: default_nodesize(n),
            seed: 0,
            smoothing_neighbors: 0,
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn total_trees(&self) -> usize {
        self.m * self.b
    }

    pub fn is_matched(&self) -> bool {
        self.m >= 2
    }
}

pub const DEFAULT_ALPHA: f64 = 0.10;

pub fn default_mtry(d: usize) -> usize {
    d.div_ceil(2).max(1)
}

pub fn default_nodesize(n: usize) -> usize {
    (2.0 * (n as f64).ln().floor()).max(1.0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ConfigViolation {
    KOutOfRange { k: usize, n: usize },
    MTooLarge { m: usize, max: usize },
    DegenerateEnsemble { m: usize, b: usize },
    MtryOutOfRange { mtry: usize, d: usize },
    NodesizeZero,
    AlphaOutOfRange(f64),
}

impl fmt::Display for ConfigViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::KOutOfRange { k, n } => write!(f, "KOutOfRange: k={k} must satisfy 1 <= k < n={n}"),
            Self::MTooLarge { m, max } => write!(f, "MTooLarge: M={m} > floor(n/k)={max}"),
            Self::DegenerateEnsemble { m, b } => {
                write!(f, "DegenerateEnsemble: M*B={} < 2 (M={m}, B={b})", m * b)
            }
            Self::MtryOutOfRange { mtry, d } => write!(f, "MtryOutOfRange: mtry={mtry} not in 1..={d}"),
            Self::NodesizeZero => write!(f, "NodesizeZero: nodesize must be >= 1"),
            Self::AlphaOutOfRange(a) => write!(f, "AlphaOutOfRange: alpha={a} not in (0,1)"),
        }
    }
}

/// Checks every invariant of `cfg` against a corpus of `n` rows and returns
/// the config unchanged, or the complete list of violations. `M >= 2` is
/// taken to mean matched mode. `mtry <= d` needs the dimension; see
/// [`validate_for`].
pub fn validate_config(cfg: &ForestConfig, n: usize) -> std::result::Result<ForestConfig, Vec<ConfigViolation>> {
    let mut v = Vec::new();
    let k_ok = cfg.k >= 1 && cfg.k < n;
    if !k_ok {
        v.push(ConfigViolation::KOutOfRange { k: cfg.k, n });
    }
    if cfg.m.saturating_mul(cfg.b) < 2 {
        v.push(ConfigViolation::DegenerateEnsemble { m: cfg.m, b: cfg.b });
    }
    if k_ok && cfg.is_matched() && cfg.m > n / cfg.k {
        v.push(ConfigViolation::MTooLarge { m: cfg.m, max: n / cfg.k });
    }
    if cfg.mtry == 0 {
        v.push(ConfigViolation::MtryOutOfRange { mtry: 0, d: 0 });
    }
    if cfg.nodesize == 0 {
        v.push(ConfigViolation::NodesizeZero);
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        v.push(ConfigViolation::AlphaOutOfRange(cfg.alpha));
    }
    if v.is_empty() {
        Ok(cfg.clone())
    } else {
        Err(v)
    }
}

/// [`validate_config`] plus the `mtry <= d` check against `data`.
pub fn validate_for(cfg: &ForestConfig, data: &Dataset) -> Result<ForestConfig> {
    let mut v = match validate_config(cfg, data.n()) {
        Ok(_) => Vec::new(),
        Err(v) => v,
    };
    v.retain(|x| !matches!(x, ConfigViolation::MtryOutOfRange { .. }));
    if cfg.mtry == 0 || cfg.mtry > data.d() {
        v.push(ConfigViolation::MtryOutOfRange {
            mtry: cfg.mtry,
            d: data.d(),
        });
    }
    if v.is_empty() {
        Ok(cfg.clone())
    } else {
        Err(Error::InvalidConfig(v))
    }
}

/// A fitted kernel: a prediction function of the target point.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: &TargetPoint) -> Result<f64>;
}

/// A size-`k` kernel `h(S)`. `sample` holds row indices into `data`; repeated
/// indices (bootstrap multisets) count with multiplicity. Implementations must
/// be symmetric in the order of `sample` and deterministic given `rs`.
pub trait Kernel: Sync {
    type Fitted: Predictor;

    fn fit(&self, data: &Dataset, sample: &[usize], rs: &RandomStream) -> Result<Self::Fitted>;

    fn evaluate(&self, data: &Dataset, sample: &[usize], x: &TargetPoint, rs: &RandomStream) -> Result<f64> {
        self.fit(data, sample, rs)?.predict(x)
    }
}

/// Sample mean of the responses in the subset; ignores the target point.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanKernel;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConstantPrediction(pub f64);

impl Predictor for ConstantPrediction {
    fn predict(&self, _x: &TargetPoint) -> Result<f64> {
        Ok(self.0)
    }
}

impl Kernel for MeanKernel {
    type Fitted = ConstantPrediction;

    fn fit(&self, data: &Dataset, sample: &[usize], _rs: &RandomStream) -> Result<Self::Fitted> {
        if sample.is_empty() {
            return Err(Error::EmptySubsample);
        }
        // summing in index order keeps the value symmetric in `sample` order
        let mut idx = sample.to_vec();
        idx.sort_unstable();
        let sum: f64 = idx.iter().map(|&i| data.y(i)).sum();
        Ok(ConstantPrediction(sum / idx.len() as f64))
    }
}

/// 1-nearest-neighbor kernel: the response of the subset member closest to
/// the target in Euclidean distance (ties to the lowest row index).
#[derive(Clone, Copy, Debug, Default)]
pub struct OneNnKernel;

#[derive(Clone, Debug)]
pub struct OneNnFit {
    rows: Vec<Vec<f64>>,
    ys: Vec<f64>,
}

impl Predictor for OneNnFit {
    fn predict(&self, x: &TargetPoint) -> Result<f64> {
        x.check_dim(self.rows[0].len())?;
        let mut best = (f64::INFINITY, 0usize);
        for (j, row) in self.rows.iter().enumerate() {
            let dist: f64 = row.iter().zip(x.coords()).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.0 {
                best = (dist, j);
            }
        }
        Ok(self.ys[best.1])
    }
}

impl Kernel for OneNnKernel {
    type Fitted = OneNnFit;

    fn fit(&self, data: &Dataset, sample: &[usize], _rs: &RandomStream) -> Result<Self::Fitted> {
        if sample.is_empty() {
            return Err(Error::EmptySubsample);
        }
        let mut idx = sample.to_vec();
        idx.sort_unstable();
        idx.dedup();
        Ok(OneNnFit {
            rows: idx.iter().map(|&i| data.row(i).to_vec()).collect(),
            ys: idx.iter().map(|&i| data.y(i)).collect(),
        })
    }
}
