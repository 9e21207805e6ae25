//! Counterfactual what-if evaluation and minimal-intervention search over
//! the technology covariables.
//!
//! Internet and computer deltas are additive percentage points; connectivity
//! deltas are absolute subscriber counts added to the subscribers implied by
//! the row's connectivity and population.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::MunicipalityYear;
use crate::risk::{state_summary, Level, RiskError, RiskModelBundle, StateSummary, VulnerabilityAssessment};

pub const RESPONSE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum InterventionError {
    #[error("delta field `{field}` is negative ({value})")]
    NegativeDelta { field: &'static str, value: f64 },
    #[error("delta field `{0}` is not finite")]
    NonFiniteDelta(&'static str),
    #[error("unknown knob `{0}` (expected internet, computer or connectivity)")]
    UnknownKnob(String),
    #[error("invalid search: {0}")]
    InvalidSearch(String),
    #[error("no rows for state {state} in year {year}")]
    EmptyState { state: u32, year: i32 },
    #[error(transparent)]
    Risk(#[from] RiskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Knob {
    Internet,
    Computer,
    Connectivity,
}

impl Knob {
    pub const ALL: [Knob; 3] = [Knob::Internet, Knob::Computer, Knob::Connectivity];

    pub fn as_str(self) -> &'static str {
        match self {
            Knob::Internet => "internet",
            Knob::Computer => "computer",
            Knob::Connectivity => "connectivity",
        }
    }

    pub fn default_step(self) -> f64 {
        match self {
            Knob::Connectivity => 10.0,
            _ => 1.0,
        }
    }

    pub fn default_max_delta(self) -> f64 {
        match self {
            Knob::Connectivity => 10_000.0,
            _ => 100.0,
        }
    }

    /// Delta with `amount` on this knob and zero elsewhere.
    pub fn delta(self, amount: f64) -> InterventionDelta {
        let mut d = InterventionDelta::default();
        match self {
            Knob::Internet => d.d_internet = amount,
            Knob::Computer => d.d_computer = amount,
            Knob::Connectivity => d.d_connectivity_subscribers = amount,
        }
        d
    }
}

impl fmt::Display for Knob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Knob {
    type Err = InterventionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Knob::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(t))
            .ok_or_else(|| InterventionError::UnknownKnob(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InterventionDelta {
    /// Percentage points added to `internet_pct`.
    #[serde(default)]
    pub d_internet: f64,
    /// Percentage points added to `computer_pct`.
    #[serde(default)]
    pub d_computer: f64,
    /// Subscriptions added to the implied subscriber count.
    #[serde(default)]
    pub d_connectivity_subscribers: f64,
}

impl InterventionDelta {
    pub fn validate(&self) -> Result<(), InterventionError> {
        for (field, value) in [
            ("d_internet", self.d_internet),
            ("d_computer", self.d_computer),
            ("d_connectivity_subscribers", self.d_connectivity_subscribers),
        ] {
            if !value.is_finite() {
                return Err(InterventionError::NonFiniteDelta(field));
            }
            if value < 0.0 {
                return Err(InterventionError::NegativeDelta { field, value });
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.d_internet == 0.0 && self.d_computer == 0.0 && self.d_connectivity_subscribers == 0.0
    }

    /// Modified copy of `row`. Percentages are clamped to 100; connectivity
    /// is only recomputed when the subscriber delta is non-zero.
    pub fn apply(&self, row: &MunicipalityYear) -> MunicipalityYear {
        let mut r = row.clone();
        r.internet_pct = (row.internet_pct + self.d_internet).clamp(0.0, 100.0);
        r.computer_pct = (row.computer_pct + self.d_computer).clamp(0.0, 100.0);
        if self.d_connectivity_subscribers != 0.0 {
            let subs = row.implied_subscribers() + self.d_connectivity_subscribers;
            r.connectivity = (1000.0 * subs / row.population as f64).max(0.0);
        }
        r
    }
}

/// Assessment of `row` after applying `delta`; `row` itself is not changed.
pub fn whatif(
    bundle: &RiskModelBundle,
    row: &MunicipalityYear,
    delta: &InterventionDelta,
) -> Result<VulnerabilityAssessment, InterventionError> {
    delta.validate()?;
    Ok(bundle.assess_row(&delta.apply(row))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub delta: f64,
    pub level: Level,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionResult {
    pub code: u32,
    pub year: i32,
    pub knob: Knob,
    pub target_level: Level,
    pub baseline_level: Level,
    /// Level at `delta`: the first qualifying level when achieved, otherwise
    /// the best level seen in the scan.
    pub new_level: Level,
    pub delta: InterventionDelta,
    pub achieved: bool,
    /// Scanned deltas with their levels, starting at 0.
    pub search_trace: Vec<TraceEntry>,
}

impl InterventionResult {
    /// Amount on the searched knob.
    pub fn knob_delta(&self) -> f64 {
        match self.knob {
            Knob::Internet => self.delta.d_internet,
            Knob::Computer => self.delta.d_computer,
            Knob::Connectivity => self.delta.d_connectivity_subscribers,
        }
    }
}

/// Scans `step, 2*step, ...` up to `max_delta` on one knob and stops at the
/// first delta whose level is at or below `target`. The forests can respond
/// non-monotonically, so this is the first qualifying scan point rather
/// than a global minimum.
pub fn minimal_intervention(
    bundle: &RiskModelBundle,
    row: &MunicipalityYear,
    knob: Knob,
    target: Level,
    step: f64,
    max_delta: f64,
) -> Result<InterventionResult, InterventionError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(InterventionError::InvalidSearch(format!("step must be positive, got {step}")));
    }
    if !(max_delta >= step && max_delta.is_finite()) {
        return Err(InterventionError::InvalidSearch(format!(
            "max_delta ({max_delta}) must be at least step ({step})"
        )));
    }
    let baseline = whatif(bundle, row, &InterventionDelta::default())?.level;
    let mut trace = vec![TraceEntry { delta: 0.0, level: baseline }];
    let (mut best_level, mut best_delta) = (baseline, 0.0);
    let mut achieved = baseline <= target;
    if !achieved {
        // Integer multiples avoid drift from repeated addition.
        let n_steps = (max_delta / step * (1.0 + 1e-12)).floor() as u64;
        for i in 1..=n_steps {
            let amount = i as f64 * step;
            let level = whatif(bundle, row, &knob.delta(amount))?.level;
            trace.push(TraceEntry { delta: amount, level });
            if level < best_level {
                best_level = level;
                best_delta = amount;
            }
            if level <= target {
                achieved = true;
                break;
            }
        }
    }
    Ok(InterventionResult {
        code: row.code,
        year: row.year,
        knob,
        target_level: target,
        baseline_level: baseline,
        new_level: best_level,
        delta: knob.delta(best_delta),
        achieved,
        search_trace: trace,
    })
}

fn plan_order(a: &InterventionResult, b: &InterventionResult) -> Ordering {
    b.achieved
        .cmp(&a.achieved)
        .then(a.knob_delta().total_cmp(&b.knob_delta()))
        .then(a.code.cmp(&b.code))
        .then(a.year.cmp(&b.year))
}

/// [`minimal_intervention`] for every row, ordered achieved first, then by
/// delta and code.
pub fn batch_plan(
    bundle: &RiskModelBundle,
    rows: &[MunicipalityYear],
    knob: Knob,
    target: Level,
    step: f64,
    max_delta: f64,
) -> Result<Vec<InterventionResult>, InterventionError> {
    let mut out = rows
        .par_iter()
        .map(|r| minimal_intervention(bundle, r, knob, target, step, max_delta))
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by(plan_order);
    Ok(out)
}

/// Response shared by the CLI and the HTTP service for a direct what-if.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatifResponse {
    pub v: u32,
    pub code: u32,
    pub year: i32,
    pub delta: InterventionDelta,
    pub baseline_level: Level,
    pub new_level: Level,
    pub baseline: VulnerabilityAssessment,
    pub assessment: VulnerabilityAssessment,
}

pub fn whatif_response(
    bundle: &RiskModelBundle,
    row: &MunicipalityYear,
    delta: &InterventionDelta,
) -> Result<WhatifResponse, InterventionError> {
    delta.validate()?;
    let baseline = bundle.assess_row(row)?;
    let assessment = whatif(bundle, row, delta)?;
    Ok(WhatifResponse {
        v: RESPONSE_VERSION,
        code: row.code,
        year: row.year,
        delta: *delta,
        baseline_level: baseline.level,
        new_level: assessment.level,
        baseline,
        assessment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateWhatif {
    pub state_code: u32,
    pub year: i32,
    pub delta: InterventionDelta,
    pub baseline: StateSummary,
    pub modified: StateSummary,
    /// Most frequent level, ties resolved toward the more severe level.
    pub baseline_level: Level,
    pub new_level: Level,
}

fn dominant_level(s: &StateSummary) -> Level {
    let mut best = 0;
    for i in 1..4 {
        if s.counts[i] >= s.counts[best] {
            best = i;
        }
    }
    Level::ALL[best]
}

/// Applies `delta` to every municipality of `state_code` in `year` and
/// re-summarizes the state's level distribution.
pub fn state_whatif(
    bundle: &RiskModelBundle,
    rows: &[MunicipalityYear],
    state_code: u32,
    year: i32,
    delta: &InterventionDelta,
) -> Result<StateWhatif, InterventionError> {
    delta.validate()?;
    let selected: Vec<&MunicipalityYear> =
        rows.iter().filter(|r| r.state_code == state_code && r.year == year).collect();
    if selected.is_empty() {
        return Err(InterventionError::EmptyState { state: state_code, year });
    }
    let map: HashMap<u32, u32> = selected.iter().map(|r| (r.code, r.state_code)).collect();
    let base: Vec<_> = selected.iter().map(|r| bundle.assess_row(r)).collect::<Result<_, _>>()?;
    let modified: Vec<_> = selected.iter().map(|r| whatif(bundle, r, delta)).collect::<Result<_, _>>()?;
    let baseline = state_summary(&base, &map)?.remove(0);
    let modified = state_summary(&modified, &map)?.remove(0);
    Ok(StateWhatif {
        state_code,
        year,
        delta: *delta,
        baseline_level: dominant_level(&baseline),
        new_level: dominant_level(&modified),
        baseline,
        modified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> MunicipalityYear {
        MunicipalityYear {
            code: 101,
            state_code: 1,
            year: 2019,
            internet_pct: 95.0,
            computer_pct: 24.6,
            ethnic_pct: 77.5,
            school_public_pct: 90.0,
            global_score_mean: 201.26,
            population: 20_000,
            connectivity: 15.0,
            rural_index: 14.0,
            n_students: 50,
        }
    }

    #[test]
    fn apply_clamps_and_recomputes() {
        let r = row();
        let d = InterventionDelta { d_internet: 10.0, d_computer: 23.0, d_connectivity_subscribers: 144.0 };
        let m = d.apply(&r);
        assert_eq!(m.internet_pct, 100.0);
        assert!((m.computer_pct - 47.6).abs() < 1e-12);
        // 15 per 1000 of 20000 is 300 subscribers; 444 gives 22.2.
        assert!((m.connectivity - 22.2).abs() < 1e-12);
        assert_eq!(r, row());
        assert_eq!(InterventionDelta::default().apply(&r), r);
    }

    #[test]
    fn negative_delta_rejected() {
        let d = InterventionDelta { d_computer: -1.0, ..Default::default() };
        assert!(matches!(d.validate(), Err(InterventionError::NegativeDelta { field: "d_computer", .. })));
        let d = InterventionDelta { d_internet: f64::NAN, ..Default::default() };
        assert!(matches!(d.validate(), Err(InterventionError::NonFiniteDelta("d_internet"))));
    }

    #[test]
    fn knob_parsing() {
        assert_eq!("Computer".parse::<Knob>().unwrap(), Knob::Computer);
        assert!(matches!("ethnic".parse::<Knob>(), Err(InterventionError::UnknownKnob(_))));
        assert_eq!(Knob::Connectivity.delta(144.0).d_connectivity_subscribers, 144.0);
        assert_eq!(serde_json::to_string(&Knob::Internet).unwrap(), "\"internet\"");
    }

    #[test]
    fn dominant_level_prefers_severe_on_tie() {
        let s = StateSummary { state_code: 1, total: 4, counts: [2, 0, 2, 0], fractions: [0.5, 0.0, 0.5, 0.0] };
        assert_eq!(dominant_level(&s), Level::Medium);
    }
}
