//! Ensemble fitting over a [`SamplingPlan`] and the `M × B` prediction matrix.

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ForestConfig, Kernel, Predictor, TargetPoint};
use crate::rng::RandomStream;
use crate::sampling::SamplingPlan;
use crate::stats::pairwise_sum;

/// Fitted kernels for every plan entry, stored group-major (`b * M + i`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Forest<F> {
    fitted: Vec<F>,
    plan: SamplingPlan,
    config: ForestConfig,
}

const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ForestBlob<F> {
    version: u32,
    forest: Forest<F>,
}

impl<F> Forest<F> {
    pub fn plan(&self) -> &SamplingPlan {
        &self.plan
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn fitted(&self, b: usize, i: usize) -> &F {
        &self.fitted[b * self.plan.m + i]
    }

    pub fn len(&self) -> usize {
        self.fitted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fitted.is_empty()
    }
}

impl<F: Serialize + DeserializeOwned> Forest<F> {
    pub fn to_json(&self) -> Result<String>
    where
        F: Clone,
    {
        let blob = ForestBlob {
            version: FOREST_FORMAT_VERSION,
            forest: self.clone(),
        };
        Ok(serde_json::to_string(&blob)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let blob: ForestBlob<F> = serde_json::from_str(s)?;
        if blob.version != FOREST_FORMAT_VERSION {
            return Err(Error::InvalidData(format!("unsupported forest format version {}", blob.version)));
        }
        Ok(blob.forest)
    }
}

/// Fits one kernel per plan entry; entry `(b, i)` draws from `rs.split([1, b, i])`.
pub fn fit_forest<K: Kernel>(
    data: &Dataset,
    plan: &SamplingPlan,
    cfg: &ForestConfig,
    kernel: &K,
    rs: &RandomStream,
) -> Result<Forest<K::Fitted>>
where
    K::Fitted: Send,
{
    if plan.n != data.n() {
        return Err(Error::InvalidData(format!("plan drawn for n={} but data has n={}", plan.n, data.n())));
    }
    let entries: Vec<(usize, usize, &[usize])> = plan.entries().collect();
    let fitted = entries
        .par_iter()
        .map(|&(b, i, s)| kernel.fit(data, s, &rs.split(&[1, b as u64, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest {
        fitted,
        plan: plan.clone(),
        config: cfg.clone(),
    })
}

/// Per-tree predictions at one target point, `values[i * B + b]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    m: usize,
    b: usize,
    values: Vec<f64>,
    target: Option<TargetPoint>,
}

impl PredictionMatrix {
    /// Builds from `M` rows of length `B`: `rows[i][b] = h(S_i^(b))`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        let b = rows.first().map_or(0, Vec::len);
        if m == 0 || b == 0 {
            return Err(Error::InvalidData("prediction matrix must be nonempty".into()));
        }
        if rows.iter().any(|r| r.len() != b) {
            return Err(Error::InvalidData("prediction matrix rows differ in length".into()));
        }
        Self::from_values(m, b, rows.concat())
    }

    pub fn from_values(m: usize, b: usize, values: Vec<f64>) -> Result<Self> {
        if m == 0 || b == 0 || values.len() != m * b {
            return Err(Error::InvalidData(format!("{} values for a {m}x{b} matrix", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite prediction".into()));
        }
        Ok(Self {
            m,
            b,
            values,
            target: None,
        })
    }

    /// A `1 × B` matrix, the shape produced by `M = 1` plans.
    pub fn from_vector(v: Vec<f64>) -> Result<Self> {
        let b = v.len();
        Self::from_values(1, b, v)
    }

    pub fn with_target(mut self, x: TargetPoint) -> Self {
        self.target = Some(x);
        self
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn get(&self, i: usize, b: usize) -> f64 {
        self.values[i * self.b + b]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn target(&self) -> Option<&TargetPoint> {
        self.target.as_ref()
    }

    /// Predictions of group `b`.
    pub fn group(&self, b: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(move |i| self.get(i, b))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_values(self.m, self.b, self.values.iter().map(|&v| f(v)).collect())
    }
}

pub fn predict_matrix<F: Predictor>(forest: &Forest<F>, x: &TargetPoint) -> Result<PredictionMatrix> {
    let (m, b) = (forest.plan.m, forest.plan.b);
    let mut values = vec![0.0; m * b];
    for bi in 0..b {
        for i in 0..m {
            values[i * b + bi] = forest.fitted(bi, i).predict(x)?;
        }
    }
    Ok(PredictionMatrix::from_values(m, b, values)?.with_target(x.clone()))
}

/// Grand mean of all entries, `U_match`.
pub fn point_estimate(pm: &PredictionMatrix) -> f64 {
    pairwise_sum(&pm.values) / pm.values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MeanKernel;
    use crate::sampling::sample_matched_groups;
    use crate::tree::TreeKernel;

    fn toy() -> Dataset {
        Dataset::new(
            vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 1.0], vec![3.0, 0.0]],
            vec![1.0, 2.0, 5.0, 6.0],
        )
        .unwrap()
    }

    fn tp(v: &[f64]) -> TargetPoint {
        TargetPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn point_estimate_examples() {
        let pm = PredictionMatrix::from_rows(vec![vec![1.0, 3.0], vec![5.0, 7.0]]).unwrap();
        assert_eq!(point_estimate(&pm), 4.0);
        let pm = PredictionMatrix::from_rows(vec![vec![-2.25]]).unwrap();
        assert_eq!(point_estimate(&pm), -2.25);
    }

    #[test]
    fn matrix_rejects_bad_shapes() {
        assert!(PredictionMatrix::from_rows(vec![]).is_err());
        assert!(PredictionMatrix::from_rows(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(PredictionMatrix::from_rows(vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn forest_shape_and_disjoint_training_sets() {
        let data = toy();
        let cfg = ForestConfig {
            mtry: 1,
            nodesize: 1,
            ..ForestConfig::with_defaults(4, 2, 2, 2, 1)
        };
        let rs = RandomStream::new(1);
        let plan = sample_matched_groups(4, 2, 2, 1, &rs.child(0)).unwrap();
        let f = fit_forest(&data, &plan, &cfg, &TreeKernel::from_config(&cfg), &rs).unwrap();
        assert_eq!(f.len(), 2);
        let (a, b) = (plan.entry(0, 0), plan.entry(0, 1));
        assert!(a.iter().all(|j| !b.contains(j)));
        let pm = predict_matrix(&f, &tp(&[1.5, 0.5])).unwrap();
        assert_eq!((pm.m(), pm.b()), (2, 1));
    }

    #[test]
    fn same_seed_same_matrix() {
        let mut g = RandomStream::new(3).rng();
        let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| g.unit_f64()).collect()).collect();
        let ys = rows.iter().map(|r| r[0] + 2.0 * r[1] + g.unit_f64()).collect();
        let data = Dataset::new(rows, ys).unwrap();
        let cfg = ForestConfig::with_defaults(60, 3, 20, 3, 15);
        let run = || {
            let rs = RandomStream::new(77);
            let plan = sample_matched_groups(60, 20, 3, 15, &rs.child(0)).unwrap();
            let f = fit_forest(&data, &plan, &cfg, &TreeKernel::from_config(&cfg), &rs).unwrap();
            predict_matrix(&f, &tp(&[0.3, 0.4, 0.5])).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.m(), 3);
        assert_eq!(a.b(), 15);
        let bits = |p: &PredictionMatrix| p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn constant_data_constant_matrix() {
        let data = Dataset::new((0..10).map(|i| vec![i as f64]).collect(), vec![3.5; 10]).unwrap();
        let cfg = ForestConfig::with_defaults(10, 1, 3, 3, 4);
        let rs = RandomStream::new(9);
        let plan = sample_matched_groups(10, 3, 3, 4, &rs.child(0)).unwrap();
        let f = fit_forest(&data, &plan, &cfg, &TreeKernel::from_config(&cfg), &rs).unwrap();
        for x in [-1.0, 4.2, 100.0] {
            let pm = predict_matrix(&f, &tp(&[x])).unwrap();
            assert!(pm.values().iter().all(|&v| v == 3.5));
        }
    }

    #[test]
    fn mean_kernel_forest() {
        let data = toy();
        let cfg = ForestConfig::with_defaults(4, 2, 2, 2, 1);
        let rs = RandomStream::new(2);
        let plan = sample_matched_groups(4, 2, 2, 1, &rs.child(0)).unwrap();
        let f = fit_forest(&data, &plan, &cfg, &MeanKernel, &rs).unwrap();
        let pm = predict_matrix(&f, &tp(&[0.0, 0.0])).unwrap();
        // a partition of all four rows: the grand mean is the sample mean
        assert_eq!(point_estimate(&pm), 3.5);
    }

    #[test]
    fn plan_size_mismatch() {
        let cfg = ForestConfig::with_defaults(4, 2, 2, 2, 1);
        let rs = RandomStream::new(2);
        let plan = sample_matched_groups(6, 2, 2, 1, &rs).unwrap();
        assert!(fit_forest(&toy(), &plan, &cfg, &MeanKernel, &rs).is_err());
    }

    #[test]
    fn forest_json_round_trip() {
        let data = toy();
        let cfg = ForestConfig::with_defaults(4, 2, 2, 2, 1);
        let rs = RandomStream::new(4);
        let plan = sample_matched_groups(4, 2, 2, 1, &rs.child(0)).unwrap();
        let f = fit_forest(&data, &plan, &cfg, &TreeKernel { mtry: 1, nodesize: 1 }, &rs).unwrap();
        let back = Forest::<crate::tree::Tree>::from_json(&f.to_json().unwrap()).unwrap();
        let x = tp(&[2.0, 0.0]);
        assert_eq!(predict_matrix(&back, &x).unwrap(), predict_matrix(&f, &x).unwrap());
        assert!(Forest::<crate::tree::Tree>::from_json("{\"version\":9,\"forest\":null}").is_err());
    }
}
