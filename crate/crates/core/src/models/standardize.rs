use serde::{Deserialize, Serialize};

use super::ModelError;

/// Per-feature z-scoring parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    /// Sample standard deviations; always positive.
    pub stds: Vec<f64>,
}

impl Standardization {
    /// Fits means and sample standard deviations column by column.
    /// `names` is used only for error messages.
    pub fn fit(x: &[Vec<f64>], names: &[String]) -> Result<Self, ModelError> {
        let n = x.len() as f64;
        let p = x.first().map_or(0, Vec::len);
        let mut means = vec![0.0; p];
        let mut stds = vec![0.0; p];
        for j in 0..p {
            let m = x.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = x.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / (n - 1.0).max(1.0);
            if !(var > 0.0) {
                let name = names.get(j).cloned().unwrap_or_else(|| format!("#{j}"));
                return Err(ModelError::ZeroVariance(name));
            }
            means[j] = m;
            stds[j] = var.sqrt();
        }
        Ok(Standardization { means, stds })
    }

    pub fn identity(p: usize) -> Self {
        Standardization { means: vec![0.0; p], stds: vec![1.0; p] }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zscores_have_zero_mean_unit_sd() {
        let x = vec![vec![1.0, 10.0], vec![2.0, 20.0], vec![3.0, 60.0]];
        let s = Standardization::fit(&x, &[]).unwrap();
        assert_eq!(s.means, vec![2.0, 30.0]);
        let z: Vec<Vec<f64>> = x.iter().map(|r| s.apply(r)).collect();
        for j in 0..2 {
            let m: f64 = z.iter().map(|r| r[j]).sum::<f64>() / 3.0;
            let v: f64 = z.iter().map(|r| r[j] * r[j]).sum::<f64>() / 2.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_rejected() {
        let x = vec![vec![1.0, 5.0], vec![2.0, 5.0]];
        let err = Standardization::fit(&x, &["A".into(), "B".into()]).unwrap_err();
        assert_eq!(err, ModelError::ZeroVariance("B".into()));
    }
}
