use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::MunicipalityYear;

/// Named numeric column of a [`MunicipalityYear`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Covariable {
    Internet,
    Computer,
    Ethnic,
    School,
    GlobalScore,
    Population,
    Connectivity,
    RuralIndex,
}

impl Covariable {
    pub const ALL: [Covariable; 8] = [
        Covariable::Internet,
        Covariable::Computer,
        Covariable::Ethnic,
        Covariable::School,
        Covariable::GlobalScore,
        Covariable::Population,
        Covariable::Connectivity,
        Covariable::RuralIndex,
    ];

    /// Starting covariable set for the significance-filtered logistic model.
    pub const INITIAL_FEATURES: [Covariable; 6] = [
        Covariable::Internet,
        Covariable::Computer,
        Covariable::Ethnic,
        Covariable::School,
        Covariable::Connectivity,
        Covariable::RuralIndex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Covariable::Internet => "INTERNET",
            Covariable::Computer => "COMPUTER",
            Covariable::Ethnic => "ETHNIC",
            Covariable::School => "SCHOOL",
            Covariable::GlobalScore => "GLOBAL_SCORE",
            Covariable::Population => "POPULATION",
            Covariable::Connectivity => "CONNECTIVITY",
            Covariable::RuralIndex => "RURAL_INDEX",
        }
    }

    pub fn value(self, row: &MunicipalityYear) -> f64 {
        match self {
            Covariable::Internet => row.internet_pct,
            Covariable::Computer => row.computer_pct,
            Covariable::Ethnic => row.ethnic_pct,
            Covariable::School => row.school_public_pct,
            Covariable::GlobalScore => row.global_score_mean,
            Covariable::Population => row.population as f64,
            Covariable::Connectivity => row.connectivity,
            Covariable::RuralIndex => row.rural_index,
        }
    }

    /// True for covariables stored as percentages in `[0, 100]`.
    pub fn is_percentage(self) -> bool {
        matches!(
            self,
            Covariable::Internet
                | Covariable::Computer
                | Covariable::Ethnic
                | Covariable::School
                | Covariable::RuralIndex
        )
    }
}

impl fmt::Display for Covariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown covariable `{0}`")]
pub struct UnknownCovariable(pub String);

impl FromStr for Covariable {
    type Err = UnknownCovariable;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace([' ', '-'], "_");
        Covariable::ALL
            .into_iter()
            .find(|c| c.name() == norm)
            .or(match norm.as_str() {
                "RURAL" => Some(Covariable::RuralIndex),
                "SCORE" => Some(Covariable::GlobalScore),
                _ => None,
            })
            .ok_or_else(|| UnknownCovariable(s.to_string()))
    }
}

/// Extracts the given covariables from `rows` as a row-major feature matrix.
pub fn feature_matrix(rows: &[MunicipalityYear], features: &[Covariable]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| features.iter().map(|c| c.value(r)).collect())
        .collect()
}
