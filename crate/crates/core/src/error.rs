use thiserror::Error;

use crate::model::ConfigViolation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("subsample size k={k} out of range for n={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("group size M={m} exceeds floor(n/k)={max}")]
    MTooLarge { m: usize, max: usize },
    #[error("degenerate ensemble: {0}")]
    DegenerateEnsemble(String),
    #[error("matched groups need M >= 2, got M={0}")]
    GroupTooSmall(usize),
    #[error("invalid configuration: {}", format_violations(.0))]
    InvalidConfig(Vec<ConfigViolation>),
    #[error("empty subsample")]
    EmptySubsample,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("negative variance {0}; clip before building an interval")]
    NegativeVariance(f64),
    #[error("alpha={0} must lie strictly between 0 and 1")]
    InvalidAlpha(f64),
    #[error("C({n},{k}) = {count} subsets exceeds the enumeration cap {cap}")]
    CombinatorialBlowup { n: usize, k: usize, count: u128, cap: u128 },
    #[error("k={k} > n/2 (n={n}): no disjoint subsample pairs exist")]
    KTooLargeForVh { k: usize, n: usize },
    #[error("2k={0} exceeds n={1}")]
    KTooLarge(usize, usize),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("malformed csv at line {line}: {msg}")]
    MalformedCsv { line: u64, msg: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("non-finite value in column `{column}` at line {line}")]
    NonFiniteValue { column: String, line: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_violations(v: &[ConfigViolation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
