//! Source-table schemas, aggregation into municipality-year rows, year
//! splits and the synthetic fixture generator.

mod parse;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use tracing::warn;

pub use parse::{parse_census, parse_connectivity, parse_students, write_raw_tables, Parsed, RowError};
pub use synth::{generate_synthetic, synthesize_sources, EffectSizes, SourceTables, SynthConfig};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{table}: missing column `{column}` in header")]
    Schema { table: &'static str, column: String },
    #[error("{table}: line {}: {}", .error.line, .error.message)]
    Row { table: &'static str, error: RowError },
    #[error("{table}: {message}")]
    Csv { table: &'static str, message: String },
    #[error("no census population for municipality {code} (needed for year {year})")]
    MissingCensus { code: u32, year: i32 },
    #[error("duplicate census record for municipality {code}, year {year}")]
    DuplicateCensus { code: u32, year: i32 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Five subject scores, each in `[0, 100]`: critical reading, citizenship,
/// English, written communication, quantitative reasoning.
pub type SubjectScores = [f64; 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub municipality_code: u32,
    pub year: i32,
    pub subject_scores: Option<SubjectScores>,
    /// Global score in `[0, 500]`; derived as the subject sum when the
    /// source row only carried subject scores.
    pub global_score: f64,
    pub has_internet: bool,
    pub has_computer: bool,
    pub is_ethnic: bool,
    pub school_public: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityRecord {
    pub municipality_code: u32,
    pub year: i32,
    pub subscribers: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CensusRecord {
    pub municipality_code: u32,
    pub year: i32,
    pub population: u64,
    pub rural_population: u64,
    pub state_code: u32,
}

/// One aggregated observation: the covariables of a municipality in one
/// test year. Percentages are stored in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MunicipalityYear {
    #[serde(rename = "code")]
    pub code: u32,
    #[serde(rename = "state")]
    pub state_code: u32,
    pub year: i32,
    #[serde(rename = "internet")]
    pub internet_pct: f64,
    #[serde(rename = "computer")]
    pub computer_pct: f64,
    #[serde(rename = "ethnic")]
    pub ethnic_pct: f64,
    #[serde(rename = "school")]
    pub school_public_pct: f64,
    #[serde(rename = "global_score")]
    pub global_score_mean: f64,
    pub population: u64,
    /// Fixed internet subscriptions per 1000 inhabitants.
    pub connectivity: f64,
    pub rural_index: f64,
    pub n_students: u32,
}

impl MunicipalityYear {
    /// Checks the row invariants, returning a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        let pct = [
            ("internet", self.internet_pct),
            ("computer", self.computer_pct),
            ("ethnic", self.ethnic_pct),
            ("school", self.school_public_pct),
            ("rural_index", self.rural_index),
        ];
        for (name, v) in pct {
            if !(0.0..=100.0).contains(&v) {
                return Err(format!("{name} = {v} outside [0,100]"));
            }
        }
        if !(0.0..=500.0).contains(&self.global_score_mean) {
            return Err(format!("global_score = {} outside [0,500]", self.global_score_mean));
        }
        if self.population == 0 {
            return Err("population must be positive".into());
        }
        if !(self.connectivity >= 0.0) || !self.connectivity.is_finite() {
            return Err(format!("connectivity = {} must be >= 0", self.connectivity));
        }
        if self.n_students == 0 {
            return Err("n_students must be >= 1".into());
        }
        Ok(())
    }

    /// Subscriber count implied by `connectivity` and `population`.
    pub fn implied_subscribers(&self) -> f64 {
        self.connectivity * self.population as f64 / 1000.0
    }
}

/// Output of [`aggregate`]: rows sorted by `(code, year)` plus warnings for
/// municipality-years that had no connectivity record.
#[derive(Debug, Clone, Default)]
pub struct Aggregation {
    pub rows: Vec<MunicipalityYear>,
    pub warnings: Vec<String>,
}

#[derive(Default)]
struct StudentTally {
    n: u32,
    internet: u32,
    computer: u32,
    ethnic: u32,
    public: u32,
    scores: Vec<f64>,
}

/// Picks the census record nearest to `year`, ties toward the earlier year.
fn nearest_census<'a>(records: &[&'a CensusRecord], year: i32) -> Option<&'a CensusRecord> {
    records
        .iter()
        .copied()
        .min_by_key(|c| ((c.year - year).abs(), c.year))
}

/// Aggregates student, connectivity and census tables into one row per
/// `(code, year)` with at least one student.
pub fn aggregate(
    students: &[StudentRecord],
    connectivity: &[ConnectivityRecord],
    census: &[CensusRecord],
) -> Result<Aggregation, DatasetError> {
    let mut tallies: BTreeMap<(u32, i32), StudentTally> = BTreeMap::new();
    for s in students {
        let t = tallies.entry((s.municipality_code, s.year)).or_default();
        t.n += 1;
        t.internet += s.has_internet as u32;
        t.computer += s.has_computer as u32;
        t.ethnic += s.is_ethnic as u32;
        t.public += s.school_public as u32;
        t.scores.push(s.global_score);
    }

    let mut subs: HashMap<(u32, i32), u64> = HashMap::new();
    for c in connectivity {
        *subs.entry((c.municipality_code, c.year)).or_default() += c.subscribers;
    }

    let mut by_code: HashMap<u32, Vec<&CensusRecord>> = HashMap::new();
    let mut seen = BTreeSet::new();
    for c in census {
        if !seen.insert((c.municipality_code, c.year)) {
            return Err(DatasetError::DuplicateCensus { code: c.municipality_code, year: c.year });
        }
        by_code.entry(c.municipality_code).or_default().push(c);
    }

    let mut out = Aggregation::default();
    for ((code, year), mut t) in tallies {
        let cen = by_code
            .get(&code)
            .and_then(|v| nearest_census(v, year))
            .ok_or(DatasetError::MissingCensus { code, year })?;
        let subscribers = match subs.get(&(code, year)) {
            Some(&s) => s,
            None => {
                let msg = format!("municipality {code}, year {year}: no connectivity record, using 0");
                warn!("{msg}");
                out.warnings.push(msg);
                0
            }
        };
        // Sorted summation keeps the mean independent of input order.
        t.scores.sort_by(f64::total_cmp);
        let n = f64::from(t.n);
        let pct = |k: u32| 100.0 * f64::from(k) / n;
        let pop = cen.population as f64;
        out.rows.push(MunicipalityYear {
            code,
            state_code: cen.state_code,
            year,
            internet_pct: pct(t.internet),
            computer_pct: pct(t.computer),
            ethnic_pct: pct(t.ethnic),
            school_public_pct: pct(t.public),
            global_score_mean: (t.scores.iter().sum::<f64>() / n).clamp(0.0, 500.0),
            population: cen.population,
            connectivity: 1000.0 * subscribers as f64 / pop,
            rural_index: 100.0 * cen.rural_population as f64 / pop,
            n_students: t.n,
        });
    }
    Ok(out)
}

/// Train/validation partition by test year.
#[derive(Debug, Clone, Default)]
pub struct YearSplit {
    pub train: Vec<MunicipalityYear>,
    pub validation: Vec<MunicipalityYear>,
    /// Rows whose year is in neither set.
    pub excluded: usize,
}

pub fn split_by_year(
    rows: &[MunicipalityYear],
    train_years: &[i32],
    validation_year: i32,
) -> Result<YearSplit, DatasetError> {
    if train_years.contains(&validation_year) {
        return Err(DatasetError::Config(format!(
            "validation year {validation_year} is also a training year"
        )));
    }
    let mut split = YearSplit::default();
    for r in rows {
        if r.year == validation_year {
            split.validation.push(r.clone());
        } else if train_years.contains(&r.year) {
            split.train.push(r.clone());
        } else {
            split.excluded += 1;
        }
    }
    if split.train.is_empty() {
        return Err(DatasetError::Config(format!("no rows in training years {train_years:?}")));
    }
    if split.validation.is_empty() {
        return Err(DatasetError::Config(format!("no rows in validation year {validation_year}")));
    }
    Ok(split)
}

/// Writes rows in the aggregated CSV layout
/// (`code,state,year,internet,computer,ethnic,school,global_score,population,connectivity,rural_index,n_students`).
pub fn write_municipality_csv<W: Write>(rows: &[MunicipalityYear], w: W) -> Result<(), DatasetError> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let csv_err = |e: csv::Error| DatasetError::Csv { table: "aggregated", message: e.to_string() };
    if rows.is_empty() {
        wtr.write_record(AGGREGATED_HEADER).map_err(csv_err)?;
    }
    for r in rows {
        wtr.serialize(r).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub const AGGREGATED_HEADER: [&str; 12] = [
    "code",
    "state",
    "year",
    "internet",
    "computer",
    "ethnic",
    "school",
    "global_score",
    "population",
    "connectivity",
    "rural_index",
    "n_students",
];

/// Reads the aggregated CSV layout; every row is validated.
pub fn read_municipality_csv<R: Read>(r: R) -> Result<Vec<MunicipalityYear>, DatasetError> {
    let table = "aggregated";
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr
        .headers()
        .map_err(|e| DatasetError::Csv { table, message: e.to_string() })?
        .clone();
    for col in AGGREGATED_HEADER {
        if !headers.iter().any(|h| h == col) {
            return Err(DatasetError::Schema { table, column: col.to_string() });
        }
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DatasetError::Csv { table, message: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: MunicipalityYear = rec.deserialize(Some(&headers)).map_err(|e| DatasetError::Row {
            table,
            error: RowError { line, message: e.to_string() },
        })?;
        row.validate()
            .map_err(|message| DatasetError::Row { table, error: RowError { line, message } })?;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn student(code: u32, year: i32, score: f64, internet: bool) -> StudentRecord {
        StudentRecord {
            municipality_code: code,
            year,
            subject_scores: None,
            global_score: score,
            has_internet: internet,
            has_computer: false,
            is_ethnic: false,
            school_public: true,
        }
    }

    fn census(code: u32, year: i32, pop: u64, rural: u64) -> CensusRecord {
        CensusRecord { municipality_code: code, year, population: pop, rural_population: rural, state_code: 5 }
    }

    #[test]
    fn internet_share_is_a_proportion() {
        let s = [student(1, 2019, 200.0, true), student(1, 2019, 300.0, false)];
        let agg = aggregate(&s, &[ConnectivityRecord { municipality_code: 1, year: 2019, subscribers: 150 }], &[census(1, 2018, 10_000, 2_500)]).unwrap();
        assert_eq!(agg.rows.len(), 1);
        let r = &agg.rows[0];
        assert_eq!(r.internet_pct, 50.0);
        assert_eq!(r.connectivity, 15.0);
        assert_eq!(r.rural_index, 25.0);
        assert_eq!(r.global_score_mean, 250.0);
        assert_eq!(r.school_public_pct, 100.0);
        assert_eq!(r.n_students, 2);
        assert!(agg.warnings.is_empty());
    }

    #[test]
    fn missing_connectivity_is_zero_with_warning() {
        let agg = aggregate(&[student(3, 2015, 250.0, false)], &[], &[census(3, 2018, 500, 0)]).unwrap();
        assert_eq!(agg.rows[0].connectivity, 0.0);
        assert_eq!(agg.warnings.len(), 1);
    }

    #[test]
    fn missing_census_is_fatal() {
        let err = aggregate(&[student(3, 2015, 250.0, false)], &[], &[census(4, 2018, 500, 0)]).unwrap_err();
        assert!(matches!(err, DatasetError::MissingCensus { code: 3, year: 2015 }));
    }

    #[test]
    fn census_nearest_year_ties_go_earlier() {
        let c = [census(1, 2014, 1000, 0), census(1, 2018, 2000, 0)];
        let refs: Vec<&CensusRecord> = c.iter().collect();
        assert_eq!(nearest_census(&refs, 2016).unwrap().year, 2014);
        assert_eq!(nearest_census(&refs, 2017).unwrap().year, 2018);
        assert_eq!(nearest_census(&refs, 2030).unwrap().year, 2018);
    }

    #[test]
    fn duplicate_census_rejected() {
        let c = [census(1, 2018, 1000, 0), census(1, 2018, 900, 0)];
        assert!(matches!(
            aggregate(&[student(1, 2018, 1.0, true)], &[], &c),
            Err(DatasetError::DuplicateCensus { .. })
        ));
    }

    fn row(year: i32) -> MunicipalityYear {
        MunicipalityYear {
            code: 1,
            state_code: 1,
            year,
            internet_pct: 10.0,
            computer_pct: 10.0,
            ethnic_pct: 0.0,
            school_public_pct: 90.0,
            global_score_mean: 250.0,
            population: 100,
            connectivity: 1.0,
            rural_index: 5.0,
            n_students: 3,
        }
    }

    #[test]
    fn split_puts_validation_year_aside() {
        let rows: Vec<_> = (2013..=2019).map(row).collect();
        let s = split_by_year(&rows, &[2014, 2015, 2016, 2017, 2018], 2019).unwrap();
        assert_eq!(s.train.len(), 5);
        assert_eq!(s.validation.len(), 1);
        assert!(s.validation.iter().all(|r| r.year == 2019));
        assert_eq!(s.excluded, 1);
    }

    #[test]
    fn split_rejects_overlap_and_empty() {
        let rows = vec![row(2013)];
        assert!(matches!(split_by_year(&rows, &[2014], 2014), Err(DatasetError::Config(_))));
        assert!(matches!(split_by_year(&rows, &[2014], 2015), Err(DatasetError::Config(_))));
    }

    #[test]
    fn aggregated_csv_header_is_exact() {
        let mut buf = Vec::new();
        write_municipality_csv(&[row(2019)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), AGGREGATED_HEADER.join(","));
        let back = read_municipality_csv(text.as_bytes()).unwrap();
        assert_eq!(back, vec![row(2019)]);
    }

    #[test]
    fn aggregated_csv_rejects_invalid_rows() {
        let text = format!("{}\n1,1,2019,101,0,0,0,250,10,0,0,1\n", AGGREGATED_HEADER.join(","));
        assert!(matches!(read_municipality_csv(text.as_bytes()), Err(DatasetError::Row { .. })));
        let text = "code,state,year\n1,1,2019\n";
        match read_municipality_csv(text.as_bytes()) {
            Err(DatasetError::Schema { column, .. }) => assert_eq!(column, "internet"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
