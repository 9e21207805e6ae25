//! ROC curves, tie-aware AUC, and the 2x4 confusion matrix against
//! ensemble vote totals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// ROC points `(false-positive rate, true-positive rate)` from (0,0) to (1,1),
/// one point per distinct score threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

/// ROC curve and AUC for scores where higher means more likely positive.
///
/// The AUC is the Mann-Whitney statistic `P(s+ > s-) + P(s+ = s-)/2`,
/// computed from mid-ranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<(RocCurve, f64), ModelError> {
    if scores.len() != labels.len() {
        return Err(ModelError::LengthMismatch { rows: scores.len(), targets: labels.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(ModelError::NonFinite("scores"));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(ModelError::OneClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // Sweep descending thresholds; each tie group is one step.
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Rank-sum of positives, ranks ascending from 1; tie groups share mid-rank.
    let mut rank_sum = 0.0;
    let n = scores.len();
    let mut i = 0;
    while i < n {
        let mut j = i;
        let (mut gp, mut gn) = (0usize, 0usize);
        while j < n && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        // Descending positions i..j map to ascending ranks n-j+1 ..= n-i.
        let mid_rank = ((n - j + 1) + (n - i)) as f64 / 2.0;
        rank_sum += gp as f64 * mid_rank;
        tp += gp;
        fp += gn;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    let auc = u / (pos as f64 * neg as f64);
    Ok((RocCurve { points }, auc))
}

/// Counts by actual class (rows: not at risk, at risk) and vote total
/// (columns 0..=3).
pub fn confusion_by_level(actual_at_risk: &[bool], levels: &[u8]) -> Result<[[u64; 4]; 2], ModelError> {
    if actual_at_risk.len() != levels.len() {
        return Err(ModelError::LengthMismatch { rows: actual_at_risk.len(), targets: levels.len() });
    }
    let mut m = [[0u64; 4]; 2];
    for (&a, &l) in actual_at_risk.iter().zip(levels) {
        if l > 3 {
            return Err(ModelError::InvalidLevel(l));
        }
        m[a as usize][l as usize] += 1;
    }
    Ok(m)
}

/// Collapses the 2x4 matrix to 2x2 with "predicted at risk" meaning
/// vote total >= 1.
pub fn binarize_confusion(m: &[[u64; 4]; 2]) -> [[u64; 2]; 2] {
    let row = |r: &[u64; 4]| [r[0], r[1] + r[2] + r[3]];
    [row(&m[0]), row(&m[1])]
}

/// Validation metrics for the three models and the fused vote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_per_model: BTreeMap<String, f64>,
    pub roc_per_model: BTreeMap<String, RocCurve>,
    /// Rows: actual not at risk / at risk. Columns: total risk 0..=3.
    pub confusion: [[u64; 4]; 2],
    /// Same rows; columns: total risk 0 / total risk >= 1.
    pub binarized_confusion: [[u64; 2]; 2],
    pub n_rows: usize,
    pub n_at_risk: usize,
    /// Set when AUCs could not be computed (single-class validation labels).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc_error: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let (_, auc) = roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn four_point_example() {
        // Pairs (pos, neg): (0.35,0.1) win, (0.35,0.4) loss, (0.8,0.1) win, (0.8,0.4) win -> 3/4.
        let (roc, auc) = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(auc, 0.75);
        assert_eq!(roc.points, vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]);
        assert!((roc.area() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn all_tied_is_half() {
        let (roc, auc) = roc_auc(&[1.0; 6], &[true, false, true, false, false, true]).unwrap();
        assert_eq!(auc, 0.5);
        assert_eq!(roc.points, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn one_class_rejected() {
        assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), Err(ModelError::OneClass));
    }

    #[test]
    fn confusion_counts() {
        let m = confusion_by_level(&[false; 5], &[0; 5]).unwrap();
        assert_eq!(m, [[5, 0, 0, 0], [0, 0, 0, 0]]);
        // Hand tally of ten points.
        let actual = [false, false, false, true, true, false, true, true, false, true];
        let levels = [0, 1, 0, 3, 2, 3, 3, 0, 0, 1];
        let m = confusion_by_level(&actual, &levels).unwrap();
        assert_eq!(m, [[3, 1, 0, 1], [1, 1, 1, 2]]);
        assert_eq!(binarize_confusion(&m), [[3, 2], [1, 4]]);
        assert_eq!(confusion_by_level(&[true], &[4]), Err(ModelError::InvalidLevel(4)));
    }
}
