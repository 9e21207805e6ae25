//! Risk thresholds, at-risk labels, training of the three-model bundle,
//! ensemble voting into vulnerability levels, and per-state summaries.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::covariable::{feature_matrix, Covariable};
use crate::dataset::MunicipalityYear;
use crate::models::eval::binarize_confusion;
use crate::models::{
    confusion_by_level, fit_forest, fit_logistic, predict_forest, predict_logistic, roc_auc, significant_features,
    EvalReport, ForestConfig, ForestKind, ForestModel, LogisticConfig, LogisticModel, ModelError,
};

pub const BUNDLE_VERSION: u32 = 1;

pub const MODEL_NAMES: [&str; 3] = ["logistic_regression", "regression_forest", "classifier_forest"];

#[derive(Debug, thiserror::Error)]
pub enum RiskError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate labels: {0}")]
    Degenerate(String),
    #[error("year {year}: need at least 2 municipalities to compute a threshold, got {got}")]
    TooFewRows { year: i32, got: usize },
    #[error("no risk threshold for year {0}")]
    MissingThreshold(i32),
    #[error("municipalities without a state mapping: {0:?}")]
    UnmappedCodes(Vec<u32>),
    #[error("unsupported bundle version {0}")]
    Version(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("bundle JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("GeoJSON: {0}")]
    GeoJson(String),
    #[error("writing assessments: {0}")]
    Export(String),
}

/// Vulnerability level derived from the number of models voting "at risk".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    None,
    Low,
    Medium,
    Serious,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::None, Level::Low, Level::Medium, Level::Serious];

    pub fn from_total_risk(total: u8) -> Option<Level> {
        Level::ALL.get(total as usize).copied()
    }

    pub fn total_risk(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::None => "None",
            Level::Low => "Low",
            Level::Medium => "Medium",
            Level::Serious => "Serious",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown vulnerability level `{0}` (expected None, Low, Medium or Serious)")]
pub struct UnknownLevel(pub String);

impl FromStr for Level {
    type Err = UnknownLevel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Level::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(t) || t == l.total_risk().to_string())
            .ok_or_else(|| UnknownLevel(s.to_string()))
    }
}

/// What the regression forest predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RegressionTarget {
    /// Mean global score, voted at risk when below the year threshold.
    #[default]
    Score,
    /// The 0/1 at-risk label, voted at risk when the estimate is >= 0.5.
    Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    /// Threshold width in standard deviations, in `[0, 2]`.
    pub k: f64,
    /// Regression-forest depth, `> 2`.
    pub depth_m: usize,
    /// Classifier-forest depth.
    pub depth_l: usize,
    pub alpha: f64,
    pub train_years: Vec<i32>,
    pub validation_year: i32,
    pub n_trees: usize,
    #[serde(default)]
    pub regression_target: RegressionTarget,
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            k: 1.0,
            depth_m: 3,
            depth_l: 3,
            alpha: 0.05,
            train_years: (2014..=2018).collect(),
            validation_year: 2019,
            n_trees: 100,
            regression_target: RegressionTarget::Score,
        }
    }
}

impl RiskConfig {
    pub fn validate(&self) -> Result<(), RiskError> {
        let bad = |m: String| Err(RiskError::Config(m));
        if !(0.0..=2.0).contains(&self.k) {
            return bad(format!("k must be in [0, 2], got {}", self.k));
        }
        if self.depth_m <= 2 {
            return bad(format!("regression forest depth m must be > 2, got {}", self.depth_m));
        }
        if self.depth_l < 1 {
            return bad(format!("classifier forest depth l must be >= 1, got {}", self.depth_l));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if self.n_trees == 0 {
            return bad("n_trees must be positive".into());
        }
        if self.train_years.is_empty() {
            return bad("at least one training year is required".into());
        }
        if self.train_years.contains(&self.validation_year) {
            return bad(format!("validation year {} is also a training year", self.validation_year));
        }
        Ok(())
    }
}

/// Per-model triple in a fixed order: logistic regression, regression
/// forest, classifier forest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelTriple<T> {
    pub logistic: T,
    pub regression_forest: T,
    pub classifier_forest: T,
}

impl<T: Copy> ModelTriple<T> {
    pub fn from_array([logistic, regression_forest, classifier_forest]: [T; 3]) -> Self {
        ModelTriple { logistic, regression_forest, classifier_forest }
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.logistic, self.regression_forest, self.classifier_forest]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityAssessment {
    pub code: u32,
    pub state_code: u32,
    pub year: i32,
    pub votes: ModelTriple<bool>,
    pub total_risk: u8,
    pub level: Level,
    /// Continuous model outputs oriented so that higher means riskier (the
    /// regression-forest score is the negated predicted global score).
    pub model_scores: ModelTriple<f64>,
}

impl VulnerabilityAssessment {
    pub fn from_votes(code: u32, state_code: u32, year: i32, votes: [bool; 3], scores: [f64; 3]) -> Self {
        let total_risk = votes.iter().filter(|&&v| v).count() as u8;
        VulnerabilityAssessment {
            code,
            state_code,
            year,
            votes: ModelTriple::from_array(votes),
            total_risk,
            level: Level::from_total_risk(total_risk).expect("at most three votes"),
            model_scores: ModelTriple::from_array(scores),
        }
    }
}

/// Mean of the municipality score means in `year` minus `k` sample standard
/// deviations, clamped to the score range.
pub fn compute_threshold(rows: &[MunicipalityYear], year: i32, k: f64) -> Result<f64, RiskError> {
    let scores: Vec<f64> = rows.iter().filter(|r| r.year == year).map(|r| r.global_score_mean).collect();
    if scores.len() < 2 {
        return Err(RiskError::TooFewRows { year, got: scores.len() });
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean - k * var.sqrt()).clamp(0.0, 500.0))
}

/// At risk iff the score mean is strictly below the row's year threshold.
pub fn label_at_risk(rows: &[MunicipalityYear], thresholds: &BTreeMap<i32, f64>) -> Result<Vec<bool>, RiskError> {
    rows.iter()
        .map(|r| {
            thresholds
                .get(&r.year)
                .map(|tau| r.global_score_mean < *tau)
                .ok_or(RiskError::MissingThreshold(r.year))
        })
        .collect()
}

/// The three trained models with the thresholds and configuration used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModelBundle {
    pub version: u32,
    pub config: RiskConfig,
    pub seed: u64,
    /// Risk threshold per training year.
    pub thresholds: BTreeMap<i32, f64>,
    pub initial_features: Vec<Covariable>,
    /// Features significant in the initial logistic fit.
    pub selected_features: Vec<Covariable>,
    pub initial_logistic: LogisticModel,
    pub logistic: LogisticModel,
    pub forest_regression: ForestModel,
    pub forest_classifier: ForestModel,
    pub eval: Option<EvalReport>,
    pub warnings: Vec<String>,
}

impl RiskModelBundle {
    /// The year's own threshold when it was a training year, otherwise the
    /// latest training year's threshold.
    pub fn threshold_for(&self, year: i32) -> Result<f64, RiskError> {
        self.thresholds
            .get(&year)
            .or_else(|| self.thresholds.values().next_back())
            .copied()
            .ok_or(RiskError::MissingThreshold(year))
    }

    /// Thresholds for every year in `rows`, resolved with [`Self::threshold_for`].
    pub fn thresholds_for_rows(&self, rows: &[MunicipalityYear]) -> Result<BTreeMap<i32, f64>, RiskError> {
        rows.iter()
            .map(|r| r.year)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|y| Ok((y, self.threshold_for(y)?)))
            .collect()
    }

    pub fn labels(&self, rows: &[MunicipalityYear]) -> Result<Vec<bool>, RiskError> {
        label_at_risk(rows, &self.thresholds_for_rows(rows)?)
    }

    pub fn to_json(&self) -> Result<String, RiskError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, RiskError> {
        let b: RiskModelBundle = serde_json::from_str(s)?;
        if b.version != BUNDLE_VERSION {
            return Err(RiskError::Version(b.version));
        }
        Ok(b)
    }

    fn feature_names(&self) -> Vec<String> {
        self.selected_features.iter().map(|c| c.name().to_string()).collect()
    }

    /// Assessment of a single row.
    pub fn assess_row(&self, row: &MunicipalityYear) -> Result<VulnerabilityAssessment, RiskError> {
        let x: Vec<f64> = self.selected_features.iter().map(|c| c.value(row)).collect();
        let tau = self.threshold_for(row.year)?;
        let p_lr = predict_logistic(&self.logistic, &x)?;
        let rf = predict_forest(&self.forest_regression, &x)?;
        let p_rfc = predict_forest(&self.forest_classifier, &x)?;
        let (vote_rf, score_rf) = match self.config.regression_target {
            RegressionTarget::Score => (rf < tau, -rf),
            RegressionTarget::Label => (rf >= 0.5, rf),
        };
        Ok(VulnerabilityAssessment::from_votes(
            row.code,
            row.state_code,
            row.year,
            [p_lr >= 0.5, vote_rf, p_rfc >= 0.5],
            [p_lr, score_rf, p_rfc],
        ))
    }
}

fn one_class_hint(positives: usize, n: usize, k: f64) -> String {
    if positives == 0 {
        format!("no municipality falls below the threshold with k = {k}; try a smaller k")
    } else {
        format!("all {n} municipalities fall below the threshold with k = {k}; try a larger k")
    }
}

/// Fits thresholds, the significance-filtered logistic model and both
/// forests on `train_rows`. Evaluation is left to [`evaluate`].
pub fn train_bundle(
    train_rows: &[MunicipalityYear],
    config: &RiskConfig,
    seed: u64,
    threads: Option<usize>,
) -> Result<RiskModelBundle, RiskError> {
    config.validate()?;
    let years: BTreeSet<i32> = train_rows.iter().map(|r| r.year).collect();
    if years.is_empty() {
        return Err(RiskError::Config("no training rows".into()));
    }
    let mut warnings = Vec::new();
    let mut thresholds = BTreeMap::new();
    for &y in &years {
        thresholds.insert(y, compute_threshold(train_rows, y, config.k)?);
    }
    let labels = label_at_risk(train_rows, &thresholds)?;
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(RiskError::Degenerate(one_class_hint(positives, labels.len(), config.k)));
    }
    for &y in &years {
        let at_risk = train_rows.iter().zip(&labels).filter(|(r, &l)| r.year == y && l).count();
        if at_risk <= 1 {
            let msg = format!("year {y}: only {at_risk} municipality at risk; models are weakly identified");
            warn!("{msg}");
            warnings.push(msg);
        }
    }

    let lr_config = LogisticConfig::default();
    let initial_features = Covariable::INITIAL_FEATURES.to_vec();
    let names = |f: &[Covariable]| f.iter().map(|c| c.name().to_string()).collect::<Vec<_>>();
    let x0 = feature_matrix(train_rows, &initial_features);
    let initial_logistic = fit_logistic(&x0, &labels, &names(&initial_features), &lr_config)?;
    if initial_logistic.fit.separation_detected {
        warnings.push("initial logistic fit: separation detected".into());
    }
    let significant = significant_features(&initial_logistic, config.alpha);
    let mut selected_features: Vec<Covariable> =
        initial_features.iter().copied().filter(|c| significant.contains(c.name())).collect();
    if selected_features.is_empty() {
        let msg = format!("no covariable significant at alpha = {}; keeping the full initial set", config.alpha);
        warn!("{msg}");
        warnings.push(msg);
        selected_features = initial_features.clone();
    }
    info!(?selected_features, "significance filter");

    let x = feature_matrix(train_rows, &selected_features);
    let logistic = fit_logistic(&x, &labels, &names(&selected_features), &lr_config)?;
    if logistic.fit.separation_detected {
        warnings.push("logistic fit on selected features: separation detected".into());
    }
    let forest_cfg = ForestConfig { n_trees: config.n_trees, threads, ..ForestConfig::default() };
    let label_f: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let reg_target: Vec<f64> = match config.regression_target {
        RegressionTarget::Score => train_rows.iter().map(|r| r.global_score_mean).collect(),
        RegressionTarget::Label => label_f.clone(),
    };
    let forest_regression = fit_forest(&x, &reg_target, ForestKind::Regression, config.depth_m, &forest_cfg, seed)?;
    let forest_classifier = fit_forest(
        &x,
        &label_f,
        ForestKind::Classification,
        config.depth_l,
        &forest_cfg,
        seed.wrapping_add(1 << 32),
    )?;

    Ok(RiskModelBundle {
        version: BUNDLE_VERSION,
        config: config.clone(),
        seed,
        thresholds,
        initial_features,
        selected_features,
        initial_logistic,
        logistic,
        forest_regression,
        forest_classifier,
        eval: None,
        warnings,
    })
}

/// Assesses every row; output order follows `rows`.
pub fn assess(bundle: &RiskModelBundle, rows: &[MunicipalityYear]) -> Result<Vec<VulnerabilityAssessment>, RiskError> {
    let expected = bundle.feature_names();
    if bundle.logistic.feature_names != expected {
        return Err(ModelError::DimensionMismatch { expected: expected.len(), got: bundle.logistic.feature_names.len() }.into());
    }
    rows.par_iter().map(|r| bundle.assess_row(r)).collect()
}

/// AUC per model on oriented scores and the confusion matrix of actual
/// label against vote total. Single-class labels leave the AUC maps empty
/// and set `auc_error`; the confusion matrix is still produced.
pub fn evaluate(bundle: &RiskModelBundle, validation_rows: &[MunicipalityYear]) -> Result<EvalReport, RiskError> {
    let labels = bundle.labels(validation_rows)?;
    let assessments = assess(bundle, validation_rows)?;
    let levels: Vec<u8> = assessments.iter().map(|a| a.total_risk).collect();
    let confusion = confusion_by_level(&labels, &levels)?;
    let mut report = EvalReport {
        auc_per_model: BTreeMap::new(),
        roc_per_model: BTreeMap::new(),
        confusion,
        binarized_confusion: binarize_confusion(&confusion),
        n_rows: validation_rows.len(),
        n_at_risk: labels.iter().filter(|&&l| l).count(),
        auc_error: None,
    };
    for (m, name) in MODEL_NAMES.iter().enumerate() {
        let scores: Vec<f64> = assessments.iter().map(|a| a.model_scores.to_array()[m]).collect();
        match roc_auc(&scores, &labels) {
            Ok((roc, auc)) => {
                report.auc_per_model.insert(name.to_string(), auc);
                report.roc_per_model.insert(name.to_string(), roc);
            }
            Err(e) => {
                report.auc_error = Some(e.to_string());
                report.auc_per_model.clear();
                report.roc_per_model.clear();
                break;
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub state_code: u32,
    pub total: u64,
    /// Indexed by level: None, Low, Medium, Serious.
    pub counts: [u64; 4],
    pub fractions: [f64; 4],
}

pub fn state_summary(
    assessments: &[VulnerabilityAssessment],
    code_to_state: &HashMap<u32, u32>,
) -> Result<Vec<StateSummary>, RiskError> {
    let unmapped: BTreeSet<u32> =
        assessments.iter().map(|a| a.code).filter(|c| !code_to_state.contains_key(c)).collect();
    if !unmapped.is_empty() {
        return Err(RiskError::UnmappedCodes(unmapped.into_iter().collect()));
    }
    let mut counts: BTreeMap<u32, [u64; 4]> = BTreeMap::new();
    for a in assessments {
        counts.entry(code_to_state[&a.code]).or_default()[a.total_risk as usize] += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(state_code, counts)| {
            let total: u64 = counts.iter().sum();
            StateSummary { state_code, total, counts, fractions: counts.map(|c| c as f64 / total as f64) }
        })
        .collect())
}

pub const ASSESSMENT_HEADER: [&str; 11] = [
    "code",
    "state",
    "year",
    "vote_lr",
    "vote_rfr",
    "vote_rfc",
    "total_risk",
    "level",
    "score_lr",
    "score_rfr",
    "score_rfc",
];

/// Writes one CSV line per assessment; votes are written as 0/1.
pub fn write_assessments_csv<W: std::io::Write>(assessments: &[VulnerabilityAssessment], w: W) -> Result<(), RiskError> {
    let err = |e: csv::Error| RiskError::Export(e.to_string());
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(ASSESSMENT_HEADER).map_err(err)?;
    for a in assessments {
        let [v1, v2, v3] = a.votes.to_array().map(|v| u8::from(v).to_string());
        let [s1, s2, s3] = a.model_scores.to_array().map(|s| s.to_string());
        let rec = [
            a.code.to_string(),
            a.state_code.to_string(),
            a.year.to_string(),
            v1,
            v2,
            v3,
            a.total_risk.to_string(),
            a.level.to_string(),
            s1,
            s2,
            s3,
        ];
        wtr.write_record(&rec).map_err(err)?;
    }
    wtr.flush().map_err(|e| RiskError::Export(e.to_string()))
}

fn feature_code(props: Option<&serde_json::Value>) -> Option<u32> {
    match props?.get("code")? {
        serde_json::Value::Number(n) => n.as_u64().and_then(|v| u32::try_from(v).ok()),
        serde_json::Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Copy of a FeatureCollection with `total_risk`, `level` and `year`
/// injected into the properties of every feature whose `code` property
/// matches an assessment (the latest year per code). Also returns the
/// `code` values of features that matched nothing.
pub fn join_geojson(
    geojson: &serde_json::Value,
    assessments: &[VulnerabilityAssessment],
) -> Result<(serde_json::Value, Vec<String>), RiskError> {
    let mut latest: HashMap<u32, &VulnerabilityAssessment> = HashMap::new();
    for a in assessments {
        let e = latest.entry(a.code).or_insert(a);
        if a.year > e.year {
            *e = a;
        }
    }
    let mut out = geojson.clone();
    if out.get("type").and_then(|t| t.as_str()) != Some("FeatureCollection") {
        return Err(RiskError::GeoJson("expected a FeatureCollection".into()));
    }
    let features = out
        .get_mut("features")
        .and_then(|f| f.as_array_mut())
        .ok_or_else(|| RiskError::GeoJson("missing `features` array".into()))?;
    let mut unmatched = Vec::new();
    for f in features {
        let code = feature_code(f.get("properties"));
        match code.and_then(|c| latest.get(&c)) {
            Some(a) => {
                let props = f
                    .as_object_mut()
                    .ok_or_else(|| RiskError::GeoJson("feature is not an object".into()))?
                    .entry("properties")
                    .or_insert_with(|| serde_json::json!({}));
                if let Some(p) = props.as_object_mut() {
                    p.insert("total_risk".into(), a.total_risk.into());
                    p.insert("level".into(), a.level.as_str().into());
                    p.insert("year".into(), a.year.into());
                }
            }
            None => unmatched.push(
                f.get("properties")
                    .and_then(|p| p.get("code"))
                    .map(|c| c.to_string().trim_matches('"').to_string())
                    .unwrap_or_else(|| "<missing>".into()),
            ),
        }
    }
    Ok((out, unmatched))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(code: u32, year: i32, score: f64) -> MunicipalityYear {
        MunicipalityYear {
            code,
            state_code: code / 100,
            year,
            internet_pct: 10.0,
            computer_pct: 20.0,
            ethnic_pct: 5.0,
            school_public_pct: 90.0,
            global_score_mean: score,
            population: 1000,
            connectivity: 3.0,
            rural_index: 40.0,
            n_students: 10,
        }
    }

    #[test]
    fn threshold_examples() {
        let rows = vec![row(1, 2019, 200.0), row(2, 2019, 250.0), row(3, 2019, 300.0), row(4, 2018, 10.0)];
        assert_eq!(compute_threshold(&rows, 2019, 0.0).unwrap(), 250.0);
        assert!((compute_threshold(&rows, 2019, 1.0).unwrap() - 200.0).abs() < 1e-12);
        assert!(compute_threshold(&rows, 2019, 2.0).unwrap() <= compute_threshold(&rows, 2019, 1.0).unwrap());
        assert!(matches!(compute_threshold(&rows, 2018, 1.0), Err(RiskError::TooFewRows { year: 2018, got: 1 })));
    }

    #[test]
    fn boundary_is_not_at_risk() {
        let tau = BTreeMap::from([(2019, 200.0)]);
        let rows = vec![row(1, 2019, 200.0), row(2, 2019, 199.99), row(3, 2019, 200.01)];
        assert_eq!(label_at_risk(&rows, &tau).unwrap(), vec![false, true, false]);
        assert!(matches!(label_at_risk(&[row(1, 2017, 1.0)], &tau), Err(RiskError::MissingThreshold(2017))));
    }

    #[test]
    fn level_mapping_all_vote_combinations() {
        for mask in 0u8..8 {
            let votes = [mask & 1 != 0, mask & 2 != 0, mask & 4 != 0];
            let a = VulnerabilityAssessment::from_votes(1, 1, 2019, votes, [0.0; 3]);
            let sum = votes.iter().filter(|&&v| v).count() as u8;
            assert_eq!(a.total_risk, sum);
            let expected = [Level::None, Level::Low, Level::Medium, Level::Serious][sum as usize];
            assert_eq!(a.level, expected);
        }
    }

    #[test]
    fn level_parsing() {
        assert_eq!("serious".parse::<Level>().unwrap(), Level::Serious);
        assert_eq!("None".parse::<Level>().unwrap(), Level::None);
        assert_eq!("2".parse::<Level>().unwrap(), Level::Medium);
        assert!("high".parse::<Level>().is_err());
        assert_eq!(serde_json::to_string(&Level::Medium).unwrap(), "\"Medium\"");
    }

    #[test]
    fn config_bounds() {
        assert!(RiskConfig::default().validate().is_ok());
        for cfg in [
            RiskConfig { k: 2.5, ..Default::default() },
            RiskConfig { k: -0.1, ..Default::default() },
            RiskConfig { depth_m: 2, ..Default::default() },
            RiskConfig { alpha: 0.0, ..Default::default() },
            RiskConfig { validation_year: 2018, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(RiskError::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn state_summary_tally() {
        let a = vec![
            VulnerabilityAssessment::from_votes(101, 1, 2019, [true, true, true], [0.0; 3]),
            VulnerabilityAssessment::from_votes(102, 1, 2019, [false, false, false], [0.0; 3]),
            VulnerabilityAssessment::from_votes(103, 1, 2019, [true, true, true], [0.0; 3]),
            VulnerabilityAssessment::from_votes(201, 2, 2019, [true, false, false], [0.0; 3]),
        ];
        let map = HashMap::from([(101, 1), (102, 1), (103, 1), (201, 2)]);
        let s = state_summary(&a, &map).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].counts, [1, 0, 0, 2]);
        assert!((s[0].fractions[3] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s[1].fractions, [0.0, 1.0, 0.0, 0.0]);
        for st in &s {
            assert!((st.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let partial = HashMap::from([(101, 1)]);
        match state_summary(&a, &partial) {
            Err(RiskError::UnmappedCodes(c)) => assert_eq!(c, vec![102, 103, 201]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn assessment_csv_layout() {
        let a = vec![VulnerabilityAssessment::from_votes(101, 1, 2019, [true, false, true], [0.75, -200.5, 0.5])];
        let mut buf = Vec::new();
        write_assessments_csv(&a, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "code,state,year,vote_lr,vote_rfr,vote_rfc,total_risk,level,score_lr,score_rfr,score_rfc\n101,1,2019,1,0,1,2,Medium,0.75,-200.5,0.5\n"
        );
    }

    #[test]
    fn geojson_join_injects_and_reports_unmatched() {
        let a = vec![
            VulnerabilityAssessment::from_votes(101, 1, 2018, [false; 3], [0.0; 3]),
            VulnerabilityAssessment::from_votes(101, 1, 2019, [true; 3], [0.0; 3]),
        ];
        let g = serde_json::json!({"type": "FeatureCollection", "features": [
            {"type": "Feature", "properties": {"code": "101", "name": "A"}, "geometry": null},
            {"type": "Feature", "properties": {"code": 999}, "geometry": null},
            {"type": "Feature", "properties": {}, "geometry": null}
        ]});
        let (out, unmatched) = join_geojson(&g, &a).unwrap();
        assert_eq!(out["features"][0]["properties"]["level"], "Serious");
        assert_eq!(out["features"][0]["properties"]["total_risk"], 3);
        assert_eq!(out["features"][0]["properties"]["name"], "A");
        assert!(out["features"][1]["properties"].get("level").is_none());
        assert_eq!(unmatched, vec!["999".to_string(), "<missing>".to_string()]);
        assert!(join_geojson(&serde_json::json!({"type": "Feature"}), &a).is_err());
    }

    #[test]
    fn all_serious_state() {
        let a: Vec<_> = (0..4).map(|i| VulnerabilityAssessment::from_votes(i, 7, 2019, [true; 3], [0.0; 3])).collect();
        let map: HashMap<u32, u32> = (0..4).map(|i| (i, 7)).collect();
        assert_eq!(state_summary(&a, &map).unwrap()[0].fractions[3], 1.0);
    }
}
