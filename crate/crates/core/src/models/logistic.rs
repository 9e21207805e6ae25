//! Binary logistic regression fitted by Newton-Raphson on z-scored
//! features, with Wald standard errors and two-sided normal p-values.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::{check_matrix, ModelError, Standardization};
use crate::stats::special::normal_two_sided;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub max_iter: usize,
    /// Convergence when every score-vector entry is below this in magnitude.
    pub tol: f64,
    /// Standardized coefficient magnitude taken as evidence of separation.
    pub separation_norm: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig { max_iter: 100, tol: 1e-8, separation_norm: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub iterations: usize,
    pub converged: bool,
    pub separation_detected: bool,
    pub log_likelihood: f64,
    /// Log-likelihood at the start and after each accepted Newton step.
    #[serde(default)]
    pub log_likelihood_trace: Vec<f64>,
}

/// A fitted model. Coefficient vectors start with the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub feature_names: Vec<String>,
    /// Coefficients in original feature units.
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Coefficients on the z-scored features; used for prediction.
    pub standardized_coefficients: Vec<f64>,
    pub standardized_standard_errors: Vec<f64>,
    pub standardization: Standardization,
    pub fit: FitInfo,
}

impl LogisticModel {
    /// Linear predictor in original units.
    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64, ModelError> {
        let p = self.feature_names.len();
        if x.len() != p {
            return Err(ModelError::DimensionMismatch { expected: p, got: x.len() });
        }
        let z = self.standardization.apply(x);
        let b = &self.standardized_coefficients;
        Ok(b[0] + b[1..].iter().zip(&z).map(|(c, v)| c * v).sum::<f64>())
    }

    pub fn coefficient(&self, feature: &str) -> Option<f64> {
        let i = self.feature_names.iter().position(|f| f == feature)?;
        Some(self.coefficients[i + 1])
    }

    pub fn p_value(&self, feature: &str) -> Option<f64> {
        let i = self.feature_names.iter().position(|f| f == feature)?;
        Some(self.p_values[i + 1])
    }
}

pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^eta)` without overflow.
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// Bernoulli log-likelihood over a design matrix whose first column is the
/// intercept.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    design: DMatrix<f64>,
    y: DVector<f64>,
}

impl LogisticObjective {
    /// `x` rows without intercept; a leading column of ones is added.
    pub fn new(x: &[Vec<f64>], y: &[bool]) -> Self {
        let n = x.len();
        let p = x.first().map_or(0, Vec::len);
        let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
        let y = DVector::from_iterator(n, y.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        LogisticObjective { design, y }
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn eta(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.design * beta
    }

    pub fn log_likelihood(&self, beta: &[f64]) -> f64 {
        let eta = self.eta(&DVector::from_column_slice(beta));
        eta.iter().zip(self.y.iter()).map(|(e, y)| y * e - softplus(*e)).sum()
    }

    /// Score vector `X^T (y - p)`.
    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let eta = self.eta(&DVector::from_column_slice(beta));
        let resid = DVector::from_iterator(eta.len(), eta.iter().zip(self.y.iter()).map(|(e, y)| y - sigmoid(*e)));
        (self.design.transpose() * resid).as_slice().to_vec()
    }

    /// Observed information `X^T W X` with `W = diag(p (1 - p))`.
    pub fn information(&self, beta: &[f64]) -> DMatrix<f64> {
        let eta = self.eta(&DVector::from_column_slice(beta));
        let k = self.dim();
        let mut info = DMatrix::zeros(k, k);
        for (i, e) in eta.iter().enumerate() {
            let p = sigmoid(*e);
            let w = p * (1.0 - p);
            let row = self.design.row(i);
            for a in 0..k {
                let wa = w * row[a];
                for b in a..k {
                    info[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        info
    }
}

/// Names the features responsible for a rank-deficient standardized design.
fn collinearity_check(z: &[Vec<f64>], names: &[String]) -> Result<(), ModelError> {
    let n = z.len();
    let p = names.len();
    let corr = DMatrix::from_fn(p, p, |a, b| z.iter().map(|r| r[a] * r[b]).sum::<f64>() / (n as f64 - 1.0));
    let eig = SymmetricEigen::new(corr.clone());
    let (min_i, min_val) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one feature");
    if min_val > 1e-10 * p as f64 {
        return Ok(());
    }
    let mut culprits = Vec::new();
    for a in 0..p {
        for b in a + 1..p {
            if corr[(a, b)].abs() > 1.0 - 1e-10 {
                culprits.push(format!("{} duplicates {}", names[b], names[a]));
            }
        }
    }
    if culprits.is_empty() {
        let v = eig.eigenvectors.column(min_i);
        let involved: Vec<&str> = (0..p).filter(|&j| v[j].abs() > 0.1).map(|j| names[j].as_str()).collect();
        culprits.push(format!("linear dependence among {}", involved.join(", ")));
    }
    Err(ModelError::Collinear(culprits.join("; ")))
}

/// Maximum-likelihood fit. `feature_names` labels the columns of `x`.
pub fn fit_logistic(
    x: &[Vec<f64>],
    y: &[bool],
    feature_names: &[String],
    config: &LogisticConfig,
) -> Result<LogisticModel, ModelError> {
    let p = check_matrix(x, y.len())?;
    if feature_names.len() != p {
        return Err(ModelError::DimensionMismatch { expected: p, got: feature_names.len() });
    }
    let positives = y.iter().filter(|&&b| b).count();
    if positives == 0 || positives == y.len() {
        return Err(ModelError::OneClass);
    }
    let standardization = Standardization::fit(x, feature_names)?;
    let z: Vec<Vec<f64>> = x.iter().map(|r| standardization.apply(r)).collect();
    collinearity_check(&z, feature_names)?;

    let obj = LogisticObjective::new(&z, y);
    let k = p + 1;
    let mut beta = vec![0.0; k];
    // Start the intercept at the log-odds of the base rate.
    let rate = positives as f64 / y.len() as f64;
    beta[0] = (rate / (1.0 - rate)).ln();
    let mut ll = obj.log_likelihood(&beta);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut singular = false;
    while iterations < config.max_iter {
        let g = obj.gradient(&beta);
        if g.iter().all(|v| v.abs() < config.tol) {
            converged = true;
            break;
        }
        iterations += 1;
        let info = obj.information(&beta);
        let Some(chol) = info.cholesky() else {
            singular = true;
            break;
        };
        let step = chol.solve(&DVector::from_vec(g));
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let cand_ll = obj.log_likelihood(&cand);
            if cand_ll >= ll {
                beta = cand;
                ll = cand_ll;
                trace.push(ll);
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No ascent direction left at working precision.
            converged = obj.gradient(&beta).iter().all(|v| v.abs() < config.tol.sqrt());
            break;
        }
    }
    let max_coef = beta[1..].iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let separation_detected = max_coef > config.separation_norm;
    if singular && !separation_detected {
        return Err(ModelError::Collinear("information matrix not positive definite during fit".into()));
    }
    debug!(iterations, converged, separation_detected, ll, "logistic fit");

    let info = obj.information(&beta);
    let cov_std = info.clone().cholesky().map(|c| c.inverse());
    let std_se: Vec<f64> = match &cov_std {
        Some(c) => (0..k).map(|i| c[(i, i)].max(0.0).sqrt()).collect(),
        None => vec![f64::INFINITY; k],
    };

    // Back-transform to original units: orig = A * std.
    let mut a = DMatrix::zeros(k, k);
    a[(0, 0)] = 1.0;
    for j in 0..p {
        let (m, s) = (standardization.means[j], standardization.stds[j]);
        a[(0, j + 1)] = -m / s;
        a[(j + 1, j + 1)] = 1.0 / s;
    }
    let orig = &a * DVector::from_column_slice(&beta);
    let se: Vec<f64> = match &cov_std {
        Some(c) => {
            let cov = &a * c * a.transpose();
            (0..k).map(|i| cov[(i, i)].max(0.0).sqrt()).collect()
        }
        None => vec![f64::INFINITY; k],
    };
    let p_values: Vec<f64> = (0..k)
        .map(|i| {
            // The Wald statistic of a slope is scale-free; use the
            // standardized fit for slopes so both forms agree exactly.
            let (b, s) = if i == 0 { (orig[0], se[0]) } else { (beta[i], std_se[i]) };
            if s.is_finite() && s > 0.0 {
                normal_two_sided(b / s)
            } else {
                1.0
            }
        })
        .collect();

    Ok(LogisticModel {
        feature_names: feature_names.to_vec(),
        coefficients: orig.as_slice().to_vec(),
        standard_errors: se,
        p_values,
        standardized_coefficients: beta,
        standardized_standard_errors: std_se,
        standardization,
        fit: FitInfo { iterations, converged, separation_detected, log_likelihood: ll, log_likelihood_trace: trace },
    })
}

/// Predicted probability of the positive class.
pub fn predict_logistic(model: &LogisticModel, x: &[f64]) -> Result<f64, ModelError> {
    Ok(sigmoid(model.linear_predictor(x)?))
}

/// Features (never the intercept) whose Wald p-value is below `alpha`.
pub fn significant_features(model: &LogisticModel, alpha: f64) -> BTreeSet<String> {
    model
        .feature_names
        .iter()
        .zip(&model.p_values[1..])
        .filter(|(_, &p)| p < alpha)
        .map(|(n, _)| n.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|i| format!("x{i}")).collect()
    }

    fn simulate(rng: &mut ChaCha8Rng, n: usize, coefs: &[f64]) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = coefs.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
            let eta: f64 = -0.3 + row.iter().zip(coefs).map(|(a, b)| a * b).sum::<f64>();
            y.push(rng.random::<f64>() < sigmoid(eta));
            x.push(row);
        }
        (x, y)
    }

    fn hand_model(intercept: f64, coef: f64) -> LogisticModel {
        LogisticModel {
            feature_names: vec!["x".into()],
            coefficients: vec![intercept, coef],
            standard_errors: vec![1.0, 1.0],
            p_values: vec![1.0, 1.0],
            standardized_coefficients: vec![intercept, coef],
            standardized_standard_errors: vec![1.0, 1.0],
            standardization: Standardization::identity(1),
            fit: FitInfo { iterations: 0, converged: true, separation_detected: false, log_likelihood: 0.0, log_likelihood_trace: vec![] },
        }
    }

    #[test]
    fn hand_model_probability() {
        let m = hand_model(0.0, 1.0);
        let p = predict_logistic(&m, &[0.5]).unwrap();
        assert!((p - 1.0 / (1.0 + (-0.5f64).exp())).abs() < 1e-15);
        assert!((p - 0.6225).abs() < 1e-4);
        assert_eq!(predict_logistic(&hand_model(0.0, 0.0), &[123.0]).unwrap(), 0.5);
        assert!((1.0 - predict_logistic(&hand_model(0.0, 1.0), &[1e6]).unwrap()) < 1e-12);
        assert!(predict_logistic(&m, &[0.5, 1.0]).is_err());
    }

    #[test]
    fn recovers_planted_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (x, y) = simulate(&mut rng, 5000, &[1.5, -0.8, 0.0]);
        let m = fit_logistic(&x, &y, &names(3), &LogisticConfig::default()).unwrap();
        assert!(m.fit.converged);
        assert!((m.coefficients[1] - 1.5).abs() < 0.15, "{:?}", m.coefficients);
        assert!((m.coefficients[2] + 0.8).abs() < 0.15);
        assert!((m.coefficients[0] + 0.3).abs() < 0.15);
        assert!(m.p_values[1] < 1e-6 && m.p_values[2] < 1e-6);
        let g = LogisticObjective::new(&x.iter().map(|r| m.standardization.apply(r)).collect::<Vec<_>>(), &y)
            .gradient(&m.standardized_coefficients);
        assert!(g.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn original_and_standardized_predictions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut x, y) = simulate(&mut rng, 800, &[1.0, 0.5]);
        for r in &mut x {
            r[0] = r[0] * 17.0 + 40.0;
            r[1] = r[1] * 0.2 - 3.0;
        }
        let m = fit_logistic(&x, &y, &names(2), &LogisticConfig::default()).unwrap();
        for r in x.iter().take(20) {
            let eta = m.coefficients[0] + m.coefficients[1] * r[0] + m.coefficients[2] * r[1];
            assert!((eta - m.linear_predictor(r).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicate_feature_is_collinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut x, y) = simulate(&mut rng, 300, &[1.0, 0.5]);
        for r in &mut x {
            r.push(r[0]);
        }
        match fit_logistic(&x, &y, &names(3), &LogisticConfig::default()) {
            Err(ModelError::Collinear(msg)) => assert!(msg.contains("x2 duplicates x0"), "{msg}"),
            other => panic!("expected collinearity error, got {other:?}"),
        }
    }

    #[test]
    fn one_class_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert_eq!(fit_logistic(&x, &[true, true], &names(1), &LogisticConfig::default()), Err(ModelError::OneClass));
    }

    #[test]
    fn separation_is_flagged() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let m = fit_logistic(&x, &y, &names(1), &LogisticConfig::default()).unwrap();
        assert!(m.fit.separation_detected);
    }

    #[test]
    fn significance_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, y) = simulate(&mut rng, 400, &[1.0, 0.2, 0.0]);
        let m = fit_logistic(&x, &y, &names(3), &LogisticConfig::default()).unwrap();
        assert_eq!(significant_features(&m, 1.0).len(), 3);
        assert!(significant_features(&m, 0.0).is_empty());
    }

    #[test]
    fn newton_never_decreases_likelihood() {
        // Re-run the iteration manually and watch the log-likelihood.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (x, y) = simulate(&mut rng, 500, &[2.0, -1.0, 0.5, 0.0]);
        for cap in 1..8 {
            let cfg = LogisticConfig { max_iter: cap, ..LogisticConfig::default() };
            let prev = LogisticConfig { max_iter: cap - 1, ..LogisticConfig::default() };
            let a = fit_logistic(&x, &y, &names(4), &prev).unwrap();
            let b = fit_logistic(&x, &y, &names(4), &cfg).unwrap();
            assert!(b.fit.log_likelihood >= a.fit.log_likelihood);
        }
    }
}
