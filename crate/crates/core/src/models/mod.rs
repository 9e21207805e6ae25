//! Supervised learners written from scratch: logistic regression with Wald
//! inference, depth-limited CART trees and random forests, and ROC/AUC
//! evaluation.

pub mod eval;
pub mod forest;
pub mod logistic;
pub mod standardize;
pub mod tree;

pub use eval::{confusion_by_level, roc_auc, EvalReport, RocCurve};
pub use forest::{fit_forest, predict_forest, ForestConfig, ForestKind, ForestModel};
pub use logistic::{fit_logistic, predict_logistic, significant_features, LogisticConfig, LogisticModel};
pub use standardize::Standardization;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("empty training data")]
    Empty,
    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{rows} rows but {targets} targets")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("only one class present in labels; both classes are required")]
    OneClass,
    #[error("collinear features, information matrix is singular: {0}")]
    Collinear(String),
    #[error("feature `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("depth limit must be >= 1, got {0}")]
    InvalidDepth(usize),
    #[error("classification targets must be 0 or 1, found {0}")]
    InvalidLabel(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("level {0} outside 0..=3")]
    InvalidLevel(u8),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

pub(crate) fn check_matrix(x: &[Vec<f64>], n_targets: usize) -> Result<usize, ModelError> {
    let first = x.first().ok_or(ModelError::Empty)?;
    let p = first.len();
    if p == 0 {
        return Err(ModelError::Empty);
    }
    if x.len() != n_targets {
        return Err(ModelError::LengthMismatch { rows: x.len(), targets: n_targets });
    }
    for row in x {
        if row.len() != p {
            return Err(ModelError::DimensionMismatch { expected: p, got: row.len() });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("features"));
        }
    }
    Ok(p)
}

/// Mean computed relative to the first element, so equal inputs give that
/// exact value back.
pub(crate) fn anchored_mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut it = xs.into_iter();
    let Some(first) = it.next() else { return f64::NAN };
    let (mut acc, mut n) = (0.0, 1.0);
    for x in it {
        acc += x - first;
        n += 1.0;
    }
    first + acc / n
}
