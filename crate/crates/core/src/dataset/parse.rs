use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{CensusRecord, ConnectivityRecord, DatasetError, StudentRecord, SubjectScores};

/// A rejected input row; `line` is 1-based and counts the header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Records parsed from one table plus the rows that were rejected.
#[derive(Debug, Clone)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub row_errors: Vec<RowError>,
}

const STUDENT_COLUMNS: [&str; 12] = [
    "code",
    "year",
    "reading",
    "citizenship",
    "english",
    "writing",
    "quant",
    "global",
    "internet",
    "computer",
    "ethnic",
    "public_school",
];
const CONNECTIVITY_COLUMNS: [&str; 3] = ["code", "year", "subscribers"];
const CENSUS_COLUMNS: [&str; 5] = ["code", "year", "state", "population", "rural_population"];

/// Column positions resolved from a header line.
struct Columns(HashMap<&'static str, usize>);

impl Columns {
    fn resolve(
        table: &'static str,
        headers: &csv::StringRecord,
        wanted: &[&'static str],
    ) -> Result<Self, DatasetError> {
        let mut map = HashMap::new();
        for &col in wanted {
            let idx = headers
                .iter()
                .position(|h| h.trim().trim_start_matches('\u{feff}').eq_ignore_ascii_case(col))
                .ok_or_else(|| DatasetError::Schema { table, column: col.to_string() })?;
            map.insert(col, idx);
        }
        Ok(Columns(map))
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, col: &str) -> &'r str {
        rec.get(self.0[col]).unwrap_or("").trim()
    }
}

fn parse_code(s: &str, what: &str) -> Result<u32, String> {
    match s.parse::<u32>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(format!("{what}: expected positive integer, got `{s}`")),
    }
}

fn parse_year(s: &str) -> Result<i32, String> {
    s.parse::<i32>().map_err(|_| format!("year: expected integer, got `{s}`"))
}

fn parse_count(s: &str, what: &str) -> Result<u64, String> {
    s.parse::<u64>().map_err(|_| format!("{what}: expected non-negative integer, got `{s}`"))
}

fn parse_bool(s: &str, what: &str) -> Result<bool, String> {
    match s {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        _ => Err(format!("{what}: expected 0 or 1, got `{s}`")),
    }
}

fn parse_score(s: &str, what: &str, max: f64) -> Result<Option<f64>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    let v: f64 = s.parse().map_err(|_| format!("{what}: expected number, got `{s}`"))?;
    if !(0.0..=max).contains(&v) {
        return Err(format!("score out of range: {what} = {v} not in [0,{max}]"));
    }
    Ok(Some(v))
}

/// Shared row loop: header resolution, CSV errors and strict-mode handling.
fn parse_table<R: Read, T>(
    input: R,
    table: &'static str,
    columns: &[&'static str],
    strict: bool,
    mut parse_row: impl FnMut(&Columns, &csv::StringRecord) -> Result<T, String>,
) -> Result<Parsed<T>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| DatasetError::Csv { table, message: e.to_string() })?
        .clone();
    let cols = Columns::resolve(table, &headers, columns)?;
    let mut out = Parsed { records: Vec::new(), row_errors: Vec::new() };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DatasetError::Csv { table, message: e.to_string() })?;
        let line = rec.position().map_or(0, |p| p.line());
        match parse_row(&cols, &rec) {
            Ok(v) => out.records.push(v),
            Err(message) => {
                let error = RowError { line, message };
                if strict {
                    return Err(DatasetError::Row { table, error });
                }
                out.row_errors.push(error);
            }
        }
    }
    Ok(out)
}

/// Parses `students.csv`. Row-level problems are collected in
/// [`Parsed::row_errors`] unless `strict`, in which case the first one is
/// returned as an error.
pub fn parse_students<R: Read>(input: R, strict: bool) -> Result<Parsed<StudentRecord>, DatasetError> {
    parse_table(input, "students", &STUDENT_COLUMNS, strict, |cols, rec| {
        let code = parse_code(cols.get(rec, "code"), "code")?;
        let year = parse_year(cols.get(rec, "year"))?;
        let mut subjects = [None; 5];
        for (slot, col) in subjects.iter_mut().zip(&STUDENT_COLUMNS[2..7]) {
            *slot = parse_score(cols.get(rec, col), col, 100.0)?;
        }
        let global = parse_score(cols.get(rec, "global"), "global", 500.0)?;
        let present = subjects.iter().filter(|s| s.is_some()).count();
        let subject_scores: Option<SubjectScores> = match present {
            0 => None,
            5 => Some(subjects.map(|s| s.unwrap_or_default())),
            _ => return Err(format!("incomplete subject scores ({present} of 5 present)")),
        };
        let global_score = match (subject_scores, global) {
            (None, None) => return Err("no score: both subject scores and global are empty".into()),
            (Some(s), None) => s.iter().sum(),
            (None, Some(g)) => g,
            (Some(s), Some(g)) => {
                let sum: f64 = s.iter().sum();
                if (sum - g).abs() > 0.5 {
                    return Err(format!("inconsistent scores: global {g} but subject sum {sum}"));
                }
                g
            }
        };
        Ok(StudentRecord {
            municipality_code: code,
            year,
            subject_scores,
            global_score,
            has_internet: parse_bool(cols.get(rec, "internet"), "internet")?,
            has_computer: parse_bool(cols.get(rec, "computer"), "computer")?,
            is_ethnic: parse_bool(cols.get(rec, "ethnic"), "ethnic")?,
            school_public: parse_bool(cols.get(rec, "public_school"), "public_school")?,
        })
    })
}

pub fn parse_connectivity<R: Read>(
    input: R,
    strict: bool,
) -> Result<Parsed<ConnectivityRecord>, DatasetError> {
    parse_table(input, "connectivity", &CONNECTIVITY_COLUMNS, strict, |cols, rec| {
        Ok(ConnectivityRecord {
            municipality_code: parse_code(cols.get(rec, "code"), "code")?,
            year: parse_year(cols.get(rec, "year"))?,
            subscribers: parse_count(cols.get(rec, "subscribers"), "subscribers")?,
        })
    })
}

pub fn parse_census<R: Read>(input: R, strict: bool) -> Result<Parsed<CensusRecord>, DatasetError> {
    parse_table(input, "census", &CENSUS_COLUMNS, strict, |cols, rec| {
        let population = parse_count(cols.get(rec, "population"), "population")?;
        let rural_population = parse_count(cols.get(rec, "rural_population"), "rural_population")?;
        if population == 0 {
            return Err("population must be positive".into());
        }
        if rural_population > population {
            return Err(format!("rural_population {rural_population} exceeds population {population}"));
        }
        Ok(CensusRecord {
            municipality_code: parse_code(cols.get(rec, "code"), "code")?,
            year: parse_year(cols.get(rec, "year"))?,
            population,
            rural_population,
            state_code: parse_code(cols.get(rec, "state"), "state")?,
        })
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn b(v: bool) -> &'static str {
    if v {
        "1"
    } else {
        "0"
    }
}

/// Writes the three source tables in their documented layouts.
pub fn write_raw_tables<W1: Write, W2: Write, W3: Write>(
    students: &[StudentRecord],
    connectivity: &[ConnectivityRecord],
    census: &[CensusRecord],
    students_out: W1,
    connectivity_out: W2,
    census_out: W3,
) -> Result<(), DatasetError> {
    fn writer<W: Write>(w: W) -> csv::Writer<W> {
        csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
    }
    let err = |table| move |e: csv::Error| DatasetError::Csv { table, message: e.to_string() };

    let mut w = writer(students_out);
    w.write_record(STUDENT_COLUMNS).map_err(err("students"))?;
    for s in students {
        let subj = s.subject_scores.map_or([None; 5], |a| a.map(Some));
        let global = if s.subject_scores.is_some() { None } else { Some(s.global_score) };
        let mut rec = vec![s.municipality_code.to_string(), s.year.to_string()];
        rec.extend(subj.iter().map(|v| fmt_opt(*v)));
        rec.push(fmt_opt(global));
        rec.extend([b(s.has_internet), b(s.has_computer), b(s.is_ethnic), b(s.school_public)].map(String::from));
        w.write_record(&rec).map_err(err("students"))?;
    }
    w.flush()?;

    let mut w = writer(connectivity_out);
    w.write_record(CONNECTIVITY_COLUMNS).map_err(err("connectivity"))?;
    for c in connectivity {
        w.write_record([c.municipality_code.to_string(), c.year.to_string(), c.subscribers.to_string()])
            .map_err(err("connectivity"))?;
    }
    w.flush()?;

    let mut w = writer(census_out);
    w.write_record(CENSUS_COLUMNS).map_err(err("census"))?;
    for c in census {
        w.write_record([
            c.municipality_code.to_string(),
            c.year.to_string(),
            c.state_code.to_string(),
            c.population.to_string(),
            c.rural_population.to_string(),
        ])
        .map_err(err("census"))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "code,year,reading,citizenship,english,writing,quant,global,internet,computer,ethnic,public_school";

    #[test]
    fn subject_scores_sum_to_global() {
        let text = format!("{HEADER}\n5001,2019,50,50,50,50,50,,1,0,0,1\n");
        let p = parse_students(text.as_bytes(), false).unwrap();
        assert!(p.row_errors.is_empty());
        assert_eq!(p.records[0].global_score, 250.0);
        assert_eq!(p.records[0].subject_scores, Some([50.0; 5]));
    }

    #[test]
    fn global_out_of_range_is_row_error() {
        let text = format!("{HEADER}\n5001,2019,,,,,,501,1,0,0,1\n5001,2019,,,,,,300,1,0,0,1\n");
        let p = parse_students(text.as_bytes(), false).unwrap();
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.row_errors.len(), 1);
        assert_eq!(p.row_errors[0].line, 2);
        assert!(p.row_errors[0].message.contains("score out of range"));
        let strict = parse_students(text.as_bytes(), true).unwrap_err();
        assert!(matches!(strict, DatasetError::Row { .. }));
    }

    #[test]
    fn inconsistent_scores_rejected() {
        let text = format!("{HEADER}\n5001,2019,50,50,50,50,50,260,1,0,0,1\n5001,2019,50,50,50,50,50,250.4,1,0,0,1\n");
        let p = parse_students(text.as_bytes(), false).unwrap();
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.records[0].global_score, 250.4);
        assert!(p.row_errors[0].message.contains("inconsistent"));
    }

    #[test]
    fn both_scores_absent_or_partial_rejected() {
        let text = format!("{HEADER}\n1,2019,,,,,,,1,0,0,1\n1,2019,40,,,,,,1,0,0,1\n");
        let p = parse_students(text.as_bytes(), false).unwrap();
        assert!(p.records.is_empty());
        assert_eq!(p.row_errors.len(), 2);
    }

    #[test]
    fn missing_header_column_named() {
        let text = "code,year,reading\n1,2019,3\n";
        match parse_students(text.as_bytes(), false) {
            Err(DatasetError::Schema { column, table }) => {
                assert_eq!(table, "students");
                assert_eq!(column, "citizenship");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn three_row_fixture_reads_back() {
        let text = format!(
            "{HEADER}\r\n\
             17001,2014,60,55,40,52,48,,1,1,0,1\r\n\
             17001,2014,,,,,,231.5,0,1,1,0\r\n\
             27001,2015,,,,,,180,0,0,1,1\r\n"
        );
        let p = parse_students(text.as_bytes(), true).unwrap();
        let expected = vec![
            StudentRecord {
                municipality_code: 17001,
                year: 2014,
                subject_scores: Some([60.0, 55.0, 40.0, 52.0, 48.0]),
                global_score: 255.0,
                has_internet: true,
                has_computer: true,
                is_ethnic: false,
                school_public: true,
            },
            StudentRecord {
                municipality_code: 17001,
                year: 2014,
                subject_scores: None,
                global_score: 231.5,
                has_internet: false,
                has_computer: true,
                is_ethnic: true,
                school_public: false,
            },
            StudentRecord {
                municipality_code: 27001,
                year: 2015,
                subject_scores: None,
                global_score: 180.0,
                has_internet: false,
                has_computer: false,
                is_ethnic: true,
                school_public: true,
            },
        ];
        assert_eq!(p.records, expected);
    }

    #[test]
    fn census_validates_rural_bound() {
        let text = "code,year,state,population,rural_population\n1,2018,5,100,101\n1,2018,5,100,40\n";
        let p = parse_census(text.as_bytes(), false).unwrap();
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.row_errors.len(), 1);
    }

    #[test]
    fn raw_tables_round_trip() {
        let students = vec![
            StudentRecord {
                municipality_code: 1,
                year: 2019,
                subject_scores: Some([10.0, 20.0, 30.0, 40.0, 50.5]),
                global_score: 150.5,
                has_internet: true,
                has_computer: false,
                is_ethnic: true,
                school_public: false,
            },
            StudentRecord {
                municipality_code: 2,
                year: 2019,
                subject_scores: None,
                global_score: 333.25,
                has_internet: false,
                has_computer: true,
                is_ethnic: false,
                school_public: true,
            },
        ];
        let conn = vec![ConnectivityRecord { municipality_code: 1, year: 2019, subscribers: 7 }];
        let cen = vec![CensusRecord { municipality_code: 1, year: 2018, population: 70, rural_population: 3, state_code: 9 }];
        let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
        write_raw_tables(&students, &conn, &cen, &mut a, &mut b, &mut c).unwrap();
        assert_eq!(parse_students(&a[..], true).unwrap().records, students);
        assert_eq!(parse_connectivity(&b[..], true).unwrap().records, conn);
        assert_eq!(parse_census(&c[..], true).unwrap().records, cen);
    }
}
