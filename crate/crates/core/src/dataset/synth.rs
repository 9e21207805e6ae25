use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CensusRecord, ConnectivityRecord, DatasetError, MunicipalityYear, StudentRecord};

/// Planted linear effect of each covariable on the mean global score, in
/// score points per covariable unit (percentage point, or subscription per
/// 1000 inhabitants for connectivity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EffectSizes {
    pub internet: f64,
    pub computer: f64,
    pub ethnic: f64,
    pub school: f64,
    pub connectivity: f64,
    pub rural: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub municipalities: usize,
    pub years: Vec<i32>,
    pub states: usize,
    pub base_score: f64,
    pub effects: EffectSizes,
    pub noise_sd: f64,
    /// Internet coverage growth in percentage points per year.
    pub internet_growth: f64,
    /// Standard deviation of the year-to-year jitter on the technology shares.
    pub year_jitter: f64,
    pub students_min: u32,
    pub students_max: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            municipalities: 500,
            years: (2014..=2019).collect(),
            states: 32,
            base_score: 220.0,
            effects: EffectSizes {
                internet: 1.2,
                computer: 0.0,
                ethnic: -0.4,
                school: 0.0,
                connectivity: 0.9,
                rural: -0.3,
            },
            noise_sd: 10.0,
            internet_growth: 2.5,
            year_jitter: 2.0,
            students_min: 20,
            students_max: 120,
        }
    }
}

impl SynthConfig {
    /// Same layout as the default but with every planted effect removed.
    pub fn null() -> Self {
        SynthConfig { effects: EffectSizes::default(), base_score: 250.0, ..Self::default() }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Config(m.to_string()));
        if self.municipalities == 0 {
            return bad("municipality count must be positive");
        }
        if self.years.is_empty() {
            return bad("at least one year is required");
        }
        if self.states == 0 {
            return bad("state count must be positive");
        }
        if self.students_min == 0 || self.students_max < self.students_min {
            return bad("student counts must satisfy 1 <= students_min <= students_max");
        }
        if !(self.noise_sd >= 0.0) || !(self.year_jitter >= 0.0) {
            return bad("noise scales must be non-negative");
        }
        Ok(())
    }

    /// The planted score before noise and clamping.
    pub fn linear_score(&self, row: &MunicipalityYear) -> f64 {
        let e = &self.effects;
        self.base_score
            + e.internet * row.internet_pct
            + e.computer * row.computer_pct
            + e.ethnic * row.ethnic_pct
            + e.school * row.school_public_pct
            + e.connectivity * row.connectivity
            + e.rural * row.rural_index
    }
}

struct Profile {
    code: u32,
    state: u32,
    population: u64,
    rural_population: u64,
    internet: f64,
    computer: f64,
    ethnic: f64,
    school: f64,
    connectivity: f64,
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite non-negative sd")
}

/// Rounds a share to a whole number of students out of `n`.
fn quantize(pct: f64, n: u32) -> f64 {
    let count = (pct.clamp(0.0, 100.0) * f64::from(n) / 100.0).round();
    100.0 * count / f64::from(n)
}

/// Generates municipality-year rows with a planted linear score signal.
/// Output is deterministic for a fixed `seed`.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<Vec<MunicipalityYear>, DatasetError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = normal(1.0);
    let mut years = config.years.clone();
    years.sort_unstable();
    years.dedup();
    let span = (years[years.len() - 1] - years[0]) as f64;
    let internet_cap = (100.0 - config.internet_growth.max(0.0) * span).max(0.0);

    let profiles: Vec<Profile> = (0..config.municipalities)
        .map(|i| {
            let state = (i % config.states) as u32 + 1;
            let dev: f64 = std_normal.sample(&mut rng);
            let population = (10_000.0 * (std_normal.sample(&mut rng) * 0.9).exp()).round().max(500.0) as u64;
            let rural = (50.0 - 12.0 * dev + normal(12.0).sample(&mut rng)).clamp(0.0, 100.0);
            let ethnic = if rng.random_bool(0.2) { rng.random_range(30.0..100.0) } else { rng.random_range(0.0..10.0) };
            Profile {
                code: state * 100_000 + i as u32 + 1,
                state,
                population,
                rural_population: (rural * population as f64 / 100.0).round() as u64,
                internet: (25.0 + 10.0 * dev + normal(8.0).sample(&mut rng)).clamp(0.0, internet_cap),
                computer: (35.0 + 8.0 * dev + normal(8.0).sample(&mut rng)).clamp(0.0, 100.0),
                ethnic,
                school: rng.random_range(60.0..100.0),
                connectivity: (15.0 + 8.0 * dev + normal(6.0).sample(&mut rng)).max(0.0),
            }
        })
        .collect();

    let jitter = normal(config.year_jitter);
    let noise = normal(config.noise_sd);
    let mut rows = Vec::with_capacity(profiles.len() * years.len());
    for &year in &years {
        let t = (year - years[0]) as f64;
        for p in &profiles {
            let n = rng.random_range(config.students_min..=config.students_max);
            let pop = p.population as f64;
            let conn_target = (p.connectivity + t + jitter.sample(&mut rng)).max(0.0);
            let subscribers = (conn_target * pop / 1000.0).round();
            let mut row = MunicipalityYear {
                code: p.code,
                state_code: p.state,
                year,
                internet_pct: quantize(p.internet + config.internet_growth * t + jitter.sample(&mut rng), n),
                computer_pct: quantize(p.computer + jitter.sample(&mut rng), n),
                ethnic_pct: quantize(p.ethnic + jitter.sample(&mut rng), n),
                school_public_pct: quantize(p.school + jitter.sample(&mut rng), n),
                global_score_mean: 0.0,
                population: p.population,
                connectivity: 1000.0 * subscribers / pop,
                rural_index: 100.0 * p.rural_population as f64 / pop,
                n_students: n,
            };
            let eps = if config.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            row.global_score_mean = (config.linear_score(&row) + eps).clamp(0.0, 500.0);
            rows.push(row);
        }
    }
    rows.sort_by_key(|r| (r.code, r.year));
    Ok(rows)
}

/// Raw source tables whose aggregation reproduces a set of rows.
#[derive(Debug, Clone, Default)]
pub struct SourceTables {
    pub students: Vec<StudentRecord>,
    pub connectivity: Vec<ConnectivityRecord>,
    pub census: Vec<CensusRecord>,
}

/// Expands aggregated rows into student, connectivity and census records.
///
/// Shares and connectivity are reproduced exactly by re-aggregation; the
/// score mean is reproduced up to floating-point summation error. Census is
/// written once per municipality at its latest year, so a constant
/// population per municipality is assumed.
pub fn synthesize_sources(rows: &[MunicipalityYear], seed: u64) -> SourceTables {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    let mut out = SourceTables::default();
    let mut latest: std::collections::BTreeMap<u32, &MunicipalityYear> = Default::default();
    for r in rows {
        let n = r.n_students as usize;
        let count = |pct: f64| (pct * n as f64 / 100.0).round() as usize;
        let (ki, kc, ke, ks) = (count(r.internet_pct), count(r.computer_pct), count(r.ethnic_pct), count(r.school_public_pct));
        let m = r.global_score_mean;
        let spread = m.min(500.0 - m).min(25.0);
        for i in 0..n {
            let score = if n % 2 == 1 && i == n - 1 {
                m
            } else if i % 2 == 0 {
                let u: f64 = rng.random();
                m + spread * u
            } else {
                let prev: &StudentRecord = out.students.last().expect("even index pushed first");
                2.0 * m - prev.global_score
            };
            out.students.push(StudentRecord {
                municipality_code: r.code,
                year: r.year,
                subject_scores: None,
                global_score: score.clamp(0.0, 500.0),
                has_internet: i < ki,
                has_computer: i < kc,
                is_ethnic: i < ke,
                school_public: i < ks,
            });
        }
        out.connectivity.push(ConnectivityRecord {
            municipality_code: r.code,
            year: r.year,
            subscribers: r.implied_subscribers().round() as u64,
        });
        let e = latest.entry(r.code).or_insert(r);
        if r.year > e.year {
            *e = r;
        }
    }
    for r in latest.values() {
        out.census.push(CensusRecord {
            municipality_code: r.code,
            year: r.year,
            population: r.population,
            rural_population: (r.rural_index * r.population as f64 / 100.0).round() as u64,
            state_code: r.state_code,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::aggregate;

    fn small() -> SynthConfig {
        SynthConfig { municipalities: 40, years: vec![2018, 2019], ..SynthConfig::default() }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_synthetic(&small(), 7).unwrap();
        let b = generate_synthetic(&small(), 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rows_satisfy_invariants() {
        let rows = generate_synthetic(&small(), 3).unwrap();
        assert_eq!(rows.len(), 80);
        for r in &rows {
            r.validate().unwrap();
            let expect = 1000.0 * r.implied_subscribers().round() / r.population as f64;
            assert_eq!(r.connectivity, expect);
        }
    }

    #[test]
    fn zero_noise_gives_planted_form() {
        let cfg = SynthConfig { noise_sd: 0.0, ..small() };
        for r in generate_synthetic(&cfg, 11).unwrap() {
            assert_eq!(r.global_score_mean, cfg.linear_score(&r).clamp(0.0, 500.0));
        }
    }

    #[test]
    fn invalid_counts_rejected() {
        let cfg = SynthConfig { municipalities: 0, ..small() };
        assert!(matches!(generate_synthetic(&cfg, 1), Err(DatasetError::Config(_))));
        let cfg = SynthConfig { years: vec![], ..small() };
        assert!(generate_synthetic(&cfg, 1).is_err());
        let cfg = SynthConfig { students_min: 0, ..small() };
        assert!(generate_synthetic(&cfg, 1).is_err());
    }

    #[test]
    fn sources_reaggregate_to_rows() {
        let rows = generate_synthetic(&small(), 5).unwrap();
        let src = synthesize_sources(&rows, 5);
        let agg = aggregate(&src.students, &src.connectivity, &src.census).unwrap();
        assert_eq!(agg.rows.len(), rows.len());
        for (a, b) in agg.rows.iter().zip(&rows) {
            assert_eq!((a.code, a.year, a.state_code, a.population, a.n_students), (b.code, b.year, b.state_code, b.population, b.n_students));
            assert_eq!(a.internet_pct, b.internet_pct);
            assert_eq!(a.computer_pct, b.computer_pct);
            assert_eq!(a.ethnic_pct, b.ethnic_pct);
            assert_eq!(a.school_public_pct, b.school_public_pct);
            assert_eq!(a.connectivity, b.connectivity);
            assert!((a.rural_index - b.rural_index).abs() < 1e-9);
            assert!((a.global_score_mean - b.global_score_mean).abs() < 1e-9);
        }
    }
}
