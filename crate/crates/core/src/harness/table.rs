//! Schema-driven CSV loading and the predict-with-intervals pipeline.
//!
//! A schema is a JSON object mapping column names to
//! `{"role": "feature"|"response", "kind": "numeric"|"categorical",
//! "missing": "error"|"mean"|"zero"}`. Columns absent from the schema are
//! ignored. Categorical levels are coded `0, 1, 2, ...` in order of first
//! appearance in the training file. Empty cells and `NA` count as missing.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::fit_forest;
use crate::model::{validate_for, Dataset, ForestConfig, TargetPoint};
use crate::rng::RandomStream;
use crate::sampling::sample_matched_groups;
use crate::tree::TreeKernel;
use crate::variance::{
    estimate_at, fit_bootstrap_ensemble, smoothed_variance_estimate, smoothed_variance_estimate_refit, VarianceReport,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Feature,
    Response,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    Error,
    Mean,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub role: Role,
    pub kind: ColumnKind,
    #[serde(default = "default_missing")]
    pub missing: MissingPolicy,
}

fn default_missing() -> MissingPolicy {
    MissingPolicy::Error
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema(pub BTreeMap<String, ColumnSpec>);

impl Schema {
    pub fn from_json(s: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(s)?;
        let responses = schema.0.values().filter(|c| c.role == Role::Response).count();
        if responses != 1 {
            return Err(Error::InvalidData(format!("schema needs exactly one response column, found {responses}")));
        }
        for (name, c) in &schema.0 {
            if c.kind == ColumnKind::Categorical && c.missing == MissingPolicy::Mean {
                return Err(Error::InvalidData(format!("column `{name}`: mean imputation needs a numeric column")));
            }
            if c.role == Role::Response && c.kind == ColumnKind::Categorical {
                return Err(Error::InvalidData(format!("response `{name}` must be numeric")));
            }
        }
        Ok(schema)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// How one feature column is turned into numbers.
#[derive(Clone, Debug, PartialEq)]
struct FeatureCoder {
    name: String,
    kind: ColumnKind,
    missing: MissingPolicy,
    levels: HashMap<String, usize>,
    fill: f64,
}

/// Encoding learned from the training file, reused for target rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    features: Vec<FeatureCoder>,
    response: String,
}

impl Encoder {
    pub fn response_name(&self) -> &str {
        &self.response
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Level code of a categorical feature, if it was seen in training.
    pub fn level_code(&self, feature: &str, level: &str) -> Option<usize> {
        self.features
            .iter()
            .find(|f| f.name == feature)
            .and_then(|f| f.levels.get(level).copied())
    }

    /// Encodes a headered CSV of target rows with the training encoding.
    /// Only feature columns are read; unseen categorical levels are errors.
    pub fn encode_targets(&self, path: &Path) -> Result<Vec<TargetPoint>> {
        let (header, rows) = read_raw(path)?;
        let cols = self
            .features
            .iter()
            .map(|f| header.iter().position(|h| h == &f.name).ok_or_else(|| Error::UnknownColumn(f.name.clone())))
            .collect::<Result<Vec<_>>>()?;
        rows.iter()
            .map(|(line, rec)| {
                let coords = self
                    .features
                    .iter()
                    .zip(&cols)
                    .map(|(f, &c)| {
                        let cell = rec[c].trim();
                        if is_missing(cell) {
                            return match f.missing {
                                MissingPolicy::Error => Err(missing_error(*line, &f.name)),
                                _ => Ok(f.fill),
                            };
                        }
                        match f.kind {
                            ColumnKind::Numeric => parse_num(cell, &f.name, *line),
                            ColumnKind::Categorical => {
                                f.levels.get(cell).map(|&c| c as f64).ok_or_else(|| Error::MalformedCsv {
                                    line: *line,
                                    msg: format!("unseen level `{cell}` in column `{}`", f.name),
                                })
                            }
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                TargetPoint::new(coords)
            })
            .collect()
    }
}

/// A training file after encoding.
#[derive(Clone, Debug)]
pub struct TableData {
    pub dataset: Dataset,
    pub encoder: Encoder,
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

fn missing_error(line: u64, column: &str) -> Error {
    Error::MalformedCsv {
        line,
        msg: format!("missing value in column `{column}` (policy: error)"),
    }
}

fn parse_num(cell: &str, column: &str, line: u64) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| Error::MalformedCsv {
        line,
        msg: format!("`{cell}` in column `{column}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFiniteValue {
            column: column.to_string(),
            line,
        });
    }
    Ok(v)
}

type RawRows = Vec<(u64, Vec<String>)>;

fn read_raw(path: &Path) -> Result<(Vec<String>, RawRows)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::MalformedCsv {
                line,
                msg: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok((header, rows))
}

/// Loads a training CSV under `schema`. Features keep file column order.
pub fn read_csv(path: &Path, schema: &Schema) -> Result<TableData> {
    let (header, rows) = read_raw(path)?;
    for name in schema.0.keys() {
        if !header.contains(name) {
            return Err(Error::UnknownColumn(name.clone()));
        }
    }
    let mut features = Vec::new();
    let mut feature_cols = Vec::new();
    let mut response = None;
    for (c, name) in header.iter().enumerate() {
        let Some(spec) = schema.0.get(name) else { continue };
        match spec.role {
            Role::Response => response = Some((c, name.clone(), spec.missing)),
            Role::Feature => {
                feature_cols.push(c);
                features.push(FeatureCoder {
                    name: name.clone(),
                    kind: spec.kind,
                    missing: spec.missing,
                    levels: HashMap::new(),
                    fill: 0.0,
                });
            }
        }
    }
    let (resp_col, resp_name, resp_missing) =
        response.ok_or_else(|| Error::InvalidData("schema has no response column".into()))?;

    // first pass: codes, with NaN marking missing cells
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(rows.len()); features.len()];
    for (line, rec) in &rows {
        for (f, (coder, &c)) in features.iter_mut().zip(&feature_cols).enumerate() {
            let cell = rec[c].trim();
            let v = if is_missing(cell) {
                if coder.missing == MissingPolicy::Error {
                    return Err(missing_error(*line, &coder.name));
                }
                f64::NAN
            } else {
                match coder.kind {
                    ColumnKind::Numeric => parse_num(cell, &coder.name, *line)?,
                    ColumnKind::Categorical => {
                        let next = coder.levels.len();
                        *coder.levels.entry(cell.to_string()).or_insert(next) as f64
                    }
                }
            };
            cols[f].push(v);
        }
    }
    for (coder, col) in features.iter_mut().zip(cols.iter_mut()) {
        coder.fill = match coder.missing {
            MissingPolicy::Mean => {
                let present: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
                if present.is_empty() {
                    return Err(Error::InvalidData(format!("column `{}` has no values to average", coder.name)));
                }
                present.iter().sum::<f64>() / present.len() as f64
            }
            _ => 0.0,
        };
        for v in col.iter_mut().filter(|v| v.is_nan()) {
            *v = coder.fill;
        }
    }

    let mut ys: Vec<f64> = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let cell = rec[resp_col].trim();
        ys.push(if is_missing(cell) {
            if resp_missing == MissingPolicy::Error {
                return Err(missing_error(*line, &resp_name));
            }
            f64::NAN
        } else {
            parse_num(cell, &resp_name, *line)?
        });
    }
    let present: Vec<f64> = ys.iter().copied().filter(|v| !v.is_nan()).collect();
    let fill = match resp_missing {
        MissingPolicy::Mean if !present.is_empty() => present.iter().sum::<f64>() / present.len() as f64,
        _ => 0.0,
    };
    for v in ys.iter_mut().filter(|v| v.is_nan()) {
        *v = fill;
    }

    let d = features.len();
    if d == 0 {
        return Err(Error::InvalidData("schema declares no feature columns".into()));
    }
    let flat: Vec<f64> = (0..rows.len()).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
    let encoder = Encoder {
        response: resp_name,
        features,
    };
    let dataset = Dataset::from_flat(flat, ys, d)?.with_feature_names(encoder.feature_names())?;
    Ok(TableData { dataset, encoder })
}

/// Fits one forest on `data` and reports the prediction and its interval at
/// every target. `cfg.m >= 2` uses the matched estimator (smoothed when
/// `cfg.smoothing_neighbors > 0`, refitting per neighbor if `refit`);
/// `cfg.m == 1` uses the bootstrap estimator.
pub fn predict_with_intervals(
    data: &Dataset,
    cfg: &ForestConfig,
    targets: &[TargetPoint],
    refit: bool,
) -> Result<Vec<VarianceReport>> {
    let rs = RandomStream::new(cfg.seed);
    let kernel = TreeKernel::from_config(cfg);
    if cfg.m == 1 {
        let mut c = cfg.clone();
        c.k = c.k.min(data.n().saturating_sub(1)).max(1);
        validate_for(&c, data)?;
        let ens = fit_bootstrap_ensemble(data, cfg, &kernel, &rs)?;
        return targets.iter().map(|x| ens.estimate(x, cfg.alpha)).collect();
    }
    validate_for(cfg, data)?;
    let plan = sample_matched_groups(data.n(), cfg.k, cfg.m, cfg.b, &rs.child(0))?;
    let forest = fit_forest(data, &plan, cfg, &kernel, &rs)?;
    targets
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let nrs = rs.split(&[2, t as u64]);
            match (cfg.smoothing_neighbors, refit) {
                (0, _) => estimate_at(&forest, x, cfg.alpha),
                (nn, false) => smoothed_variance_estimate(&forest, x, data, nn, &nrs, cfg.alpha),
                (nn, true) => smoothed_variance_estimate_refit(&forest, &kernel, x, data, nn, &nrs, cfg.alpha),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct ReportRow {
    target_id: usize,
    point: f64,
    vh_hat: f64,
    vs_hat: f64,
    variance_raw: f64,
    variance: f64,
    clipped: bool,
    ci_low: f64,
    ci_high: f64,
    alpha: f64,
    mode: crate::variance::EstimatorMode,
}

/// Writes one CSV row per report, prefixed by its target index.
pub fn write_reports(path: &Path, reports: &[VarianceReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (target_id, r) in reports.iter().enumerate() {
        w.serialize(ReportRow {
            target_id,
            point: r.point,
            vh_hat: r.vh_hat,
            vs_hat: r.vs_hat,
            variance_raw: r.variance_raw,
            variance: r.variance,
            clipped: r.clipped,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            alpha: r.alpha,
            mode: r.mode,
        })?;
    }
    w.flush()?;
    Ok(())
}
