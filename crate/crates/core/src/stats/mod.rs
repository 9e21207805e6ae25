//! Descriptive statistics over municipality-year rows: Pearson correlation
//! matrices, per-level group means, Bonferroni-corrected pairwise Welch
//! tests and per-year trend tables.

pub mod special;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::covariable::Covariable;
use crate::dataset::MunicipalityYear;
use crate::risk::{Level, VulnerabilityAssessment};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("covariable {0} has zero variance")]
    ZeroVariance(Covariable),
    #[error("alpha must be in (0,1), got {0}")]
    InvalidAlpha(f64),
    #[error("no assessment for municipality {code}, year {year}")]
    MissingAssessment { code: u32, year: i32 },
    #[error("unknown {kind} in scope: {members:?}")]
    UnknownScopeMember { kind: &'static str, members: Vec<u32> },
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with denominator `n - 1`.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Sample Pearson correlation. Returns `None` when either side has zero
/// variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    debug_assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub covariable_names: Vec<Covariable>,
    /// Row-major, symmetric, unit diagonal.
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: Covariable, b: Covariable) -> Option<f64> {
        let i = self.covariable_names.iter().position(|&c| c == a)?;
        let j = self.covariable_names.iter().position(|&c| c == b)?;
        Some(self.values[i][j])
    }
}

pub fn correlation_matrix(
    rows: &[MunicipalityYear],
    covariables: &[Covariable],
) -> Result<CorrelationMatrix, StatsError> {
    if rows.len() < 2 {
        return Err(StatsError::TooFewRows { needed: 2, got: rows.len() });
    }
    let columns: Vec<Vec<f64>> = covariables
        .iter()
        .map(|c| rows.iter().map(|r| c.value(r)).collect())
        .collect();
    for (c, col) in covariables.iter().zip(&columns) {
        if col.iter().all(|v| *v == col[0]) {
            return Err(StatsError::ZeroVariance(*c));
        }
    }
    let k = covariables.len();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        values[i][i] = 1.0;
        for j in i + 1..k {
            let r = pearson(&columns[i], &columns[j]).ok_or(StatsError::ZeroVariance(covariables[i]))?;
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix { covariable_names: covariables.to_vec(), values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub level: Level,
    pub n: usize,
    pub mean_per_covariable: BTreeMap<Covariable, f64>,
}

fn levels_by_row(
    rows: &[MunicipalityYear],
    assessments: &[VulnerabilityAssessment],
) -> Result<Vec<Level>, StatsError> {
    let index: HashMap<(u32, i32), Level> = assessments.iter().map(|a| ((a.code, a.year), a.level)).collect();
    rows.iter()
        .map(|r| {
            index
                .get(&(r.code, r.year))
                .copied()
                .ok_or(StatsError::MissingAssessment { code: r.code, year: r.year })
        })
        .collect()
}

fn group_rows<'a>(
    rows: &'a [MunicipalityYear],
    assessments: &[VulnerabilityAssessment],
) -> Result<BTreeMap<Level, Vec<&'a MunicipalityYear>>, StatsError> {
    let levels = levels_by_row(rows, assessments)?;
    let mut groups: BTreeMap<Level, Vec<&MunicipalityYear>> = BTreeMap::new();
    for (r, l) in rows.iter().zip(levels) {
        groups.entry(l).or_default().push(r);
    }
    Ok(groups)
}

/// Per-level means of each covariable; levels with no members are absent.
pub fn group_means(
    rows: &[MunicipalityYear],
    assessments: &[VulnerabilityAssessment],
    covariables: &[Covariable],
) -> Result<Vec<GroupSummary>, StatsError> {
    Ok(group_rows(rows, assessments)?
        .into_iter()
        .map(|(level, members)| GroupSummary {
            level,
            n: members.len(),
            mean_per_covariable: covariables
                .iter()
                .map(|&c| (c, members.iter().map(|r| c.value(r)).sum::<f64>() / members.len() as f64))
                .collect(),
        })
        .collect())
}

/// Welch two-sample t statistic and its degrees of freedom. `None` when the
/// standard error is zero (both groups constant).
pub fn welch_t(a: &[f64], b: &[f64]) -> Option<(f64, f64)> {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_variance(a) / na, sample_variance(b) / nb);
    let se2 = va + vb;
    if !(se2 > 0.0) {
        return None;
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Some((t, df))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTestResult {
    pub level_a: Level,
    pub level_b: Level,
    pub covariable: Covariable,
    pub t_statistic: f64,
    pub df: f64,
    pub raw_p: f64,
    pub adjusted_alpha: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonferroniReport {
    pub alpha: f64,
    pub adjusted_alpha: f64,
    pub n_tests: usize,
    pub results: Vec<PairwiseTestResult>,
    pub notices: Vec<String>,
}

/// Welch tests for every pair of levels present and every covariable, with
/// the significance level divided by the number of tests performed. Pairs
/// involving a level with fewer than two members are skipped (and do not
/// count toward the divisor).
pub fn bonferroni_pairwise(
    rows: &[MunicipalityYear],
    assessments: &[VulnerabilityAssessment],
    covariables: &[Covariable],
    alpha: f64,
) -> Result<BonferroniReport, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidAlpha(alpha));
    }
    let groups = group_rows(rows, assessments)?;
    let levels: Vec<Level> = groups.keys().copied().collect();
    let mut notices = Vec::new();
    let mut results = Vec::new();
    for (i, &la) in levels.iter().enumerate() {
        for &lb in &levels[i + 1..] {
            let (ga, gb) = (&groups[&la], &groups[&lb]);
            if ga.len() < 2 || gb.len() < 2 {
                notices.push(format!(
                    "skipped {la} vs {lb}: need at least 2 members per level ({} and {})",
                    ga.len(),
                    gb.len()
                ));
                continue;
            }
            for &c in covariables {
                let xa: Vec<f64> = ga.iter().map(|r| c.value(r)).collect();
                let xb: Vec<f64> = gb.iter().map(|r| c.value(r)).collect();
                let (t, df, p) = match welch_t(&xa, &xb) {
                    Some((t, df)) => (t, df, special::student_t_two_sided(t, df)),
                    None => {
                        notices.push(format!("{la} vs {lb}, {c}: both groups constant, t undefined"));
                        (0.0, 0.0, 1.0)
                    }
                };
                results.push(PairwiseTestResult {
                    level_a: la,
                    level_b: lb,
                    covariable: c,
                    t_statistic: t,
                    df,
                    raw_p: p,
                    adjusted_alpha: 0.0,
                    significant: false,
                });
            }
        }
    }
    let n_tests = results.len();
    let adjusted_alpha = if n_tests > 0 { alpha / n_tests as f64 } else { alpha };
    for r in &mut results {
        r.adjusted_alpha = adjusted_alpha;
        r.significant = r.raw_p < adjusted_alpha;
    }
    Ok(BonferroniReport { alpha, adjusted_alpha, n_tests, results, notices })
}

/// Which municipalities a trend table averages over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", content = "members", rename_all = "snake_case")]
pub enum Scope {
    Country,
    States(Vec<u32>),
    Municipalities(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub year: i32,
    pub n: usize,
    pub internet: f64,
    pub computer: f64,
    pub ethnic: f64,
    pub rural_index: f64,
}

pub const TREND_COVARIABLES: [Covariable; 4] =
    [Covariable::Internet, Covariable::Computer, Covariable::Ethnic, Covariable::RuralIndex];

/// Per-year means of the descriptive covariables over the rows in `scope`.
pub fn trend_report(rows: &[MunicipalityYear], scope: &Scope) -> Result<Vec<TrendRow>, StatsError> {
    if rows.is_empty() {
        return Err(StatsError::TooFewRows { needed: 1, got: 0 });
    }
    let check = |kind: &'static str, wanted: &[u32], key: fn(&MunicipalityYear) -> u32| {
        let known: BTreeSet<u32> = rows.iter().map(key).collect();
        let missing: Vec<u32> = wanted.iter().copied().filter(|m| !known.contains(m)).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(StatsError::UnknownScopeMember { kind, members: missing })
        }
    };
    let keep: Box<dyn Fn(&MunicipalityYear) -> bool> = match scope {
        Scope::Country => Box::new(|_| true),
        Scope::States(s) => {
            check("state", s, |r| r.state_code)?;
            Box::new(move |r| s.contains(&r.state_code))
        }
        Scope::Municipalities(m) => {
            check("municipality", m, |r| r.code)?;
            Box::new(move |r| m.contains(&r.code))
        }
    };
    let mut by_year: BTreeMap<i32, Vec<&MunicipalityYear>> = BTreeMap::new();
    for r in rows.iter().filter(|r| keep(r)) {
        by_year.entry(r.year).or_default().push(r);
    }
    Ok(by_year
        .into_iter()
        .map(|(year, members)| {
            let avg = |c: Covariable| members.iter().map(|r| c.value(r)).sum::<f64>() / members.len() as f64;
            TrendRow {
                year,
                n: members.len(),
                internet: avg(Covariable::Internet),
                computer: avg(Covariable::Computer),
                ethnic: avg(Covariable::Ethnic),
                rural_index: avg(Covariable::RuralIndex),
            }
        })
        .collect())
}
