//! Seeded synthetic hub data with planted multiplicative effects on the
//! expected square-root PBL.
//!
//! Every forecast is `truth ± d` at all seven quantiles, so its mean
//! pinball loss is exactly `d / 2`; `d` is solved from the target.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    write_forecasts, CountyCovariates, GroundTruth, HealthOutcome, Mobility, ModelType, QuantileForecast,
    TeamMetadata, UrbanicityGroup, HUB_QUANTILES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTeam {
    pub team_id: String,
    pub model_type: ModelType,
    pub mobility: Mobility,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovariateRanges {
    pub population: (u64, u64),
    pub pct_black: (f64, f64),
    pub pct_hispanic: (f64, f64),
    pub pct_asian: (f64, f64),
    pub pct_age65: (f64, f64),
    pub health: (f64, f64),
    /// Mean weekly incidence per capita.
    pub incidence: (f64, f64),
    /// Share of counties given a Black or Asian plurality.
    pub plurality_frac: f64,
    /// Range of the plurality group's share in those counties.
    pub plurality_share: (f64, f64),
}

impl Default for CovariateRanges {
    fn default() -> Self {
        Self {
            population: (5_000, 500_000),
            pct_black: (0.0, 10.0),
            pct_hispanic: (0.0, 10.0),
            pct_asian: (0.0, 5.0),
            pct_age65: (10.0, 25.0),
            health: (5.0, 40.0),
            incidence: (1e-4, 2e-3),
            plurality_frac: 0.1,
            plurality_share: (45.0, 60.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_counties: usize,
    pub n_weeks: usize,
    /// Saturday ending the first target week.
    pub start_week: NaiveDate,
    pub lookaheads: Vec<u32>,
    pub teams: Vec<SynthTeam>,
    /// Expected sqrt PBL when every covariate is zero.
    pub baseline: f64,
    /// Column label to multiplicative effect per unit of the column:
    /// `pct_black`, `pct_hispanic`, `pct_asian`, `SMM`, `MC`,
    /// `lookahead<N>`, `mobilityYes`, `mobilityMixed`, a health outcome, or
    /// `pct_age65`.
    pub planted: BTreeMap<String, f64>,
    /// Standard deviation of the uniform noise on the sqrt PBL scale.
    pub noise_sd: f64,
    /// Share of rows replaced by gross outliers; trimming at the same
    /// fraction removes exactly these rows.
    pub outlier_frac: f64,
    pub scale_factor: f64,
    pub states: Vec<String>,
    pub ranges: CovariateRanges,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_counties: 300,
            n_weeks: 40,
            start_week: NaiveDate::from_ymd_opt(2020, 6, 6).expect("valid date"),
            lookaheads: vec![7, 14, 21, 28],
            teams: vec![
                SynthTeam {
                    team_id: "TeamA-mech".into(),
                    model_type: ModelType::Compartmental,
                    mobility: Mobility::No,
                },
                SynthTeam {
                    team_id: "TeamB-mobility".into(),
                    model_type: ModelType::Compartmental,
                    mobility: Mobility::Yes,
                },
            ],
            baseline: 0.5,
            planted: BTreeMap::from([("pct_hispanic".to_string(), 1.216), ("MC".to_string(), 1.065)]),
            noise_sd: 0.05,
            outlier_frac: 0.01,
            scale_factor: 1.0,
            states: ["AL", "GA", "NC", "TX"].map(String::from).to_vec(),
            ranges: CovariateRanges::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub config: SynthConfig,
    pub forecasts: BTreeMap<String, Vec<QuantileForecast>>,
    pub truth: Vec<GroundTruth>,
    pub counties: Vec<CountyCovariates>,
    pub metadata: Vec<TeamMetadata>,
    /// Planted log-scale coefficients keyed by column label.
    pub planted_log: BTreeMap<String, f64>,
    /// Number of outlier rows.
    pub n_outliers: usize,
}

struct Row {
    team: usize,
    county: usize,
    week: usize,
    lookahead: u32,
    target: f64,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn column_value(label: &str, c: &CountyCovariates, lookahead: u32, mobility: Mobility) -> Result<f64> {
    let flag = |b: bool| f64::from(u8::from(b));
    Ok(match label {
        "pct_black" => c.pct_black,
        "pct_hispanic" => c.pct_hispanic,
        "pct_asian" => c.pct_asian,
        "pct_age65" => c.pct_age65,
        "SMM" => flag(c.urbanicity() == UrbanicityGroup::SMM),
        "MC" => flag(c.urbanicity() == UrbanicityGroup::MC),
        "mobilityYes" => flag(mobility == Mobility::Yes),
        "mobilityMixed" => flag(mobility == Mobility::Mixed),
        other => {
            if let Some(n) = other.strip_prefix("lookahead") {
                let n: u32 = n
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("unknown planted column `{other}`")))?;
                flag(lookahead == n)
            } else if let Ok(h) = other.parse::<HealthOutcome>() {
                c.health_outcome(h)
            } else {
                return Err(Error::InvalidInput(format!("unknown planted column `{other}`")));
            }
        }
    })
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_counties < 50 {
            return Err(Error::InvalidInput("n_counties must be at least 50".into()));
        }
        if self.n_weeks == 0 || self.teams.is_empty() || self.lookaheads.is_empty() || self.states.is_empty() {
            return Err(Error::InvalidInput("weeks, teams, lookaheads and states must be non-empty".into()));
        }
        if self.lookaheads.iter().any(|l| !matches!(l, 7 | 14 | 21 | 28)) {
            return Err(Error::InvalidInput("lookaheads must be among 7, 14, 21, 28".into()));
        }
        if !crate::ingest::is_saturday(self.start_week) {
            return Err(Error::InvalidInput(format!("start_week {} is not a Saturday", self.start_week)));
        }
        if let Some((k, v)) = self.planted.iter().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!("planted effect {k} = {v} must be positive")));
        }
        if !(self.baseline > 0.0) || !(self.noise_sd >= 0.0) || !(self.scale_factor > 0.0) {
            return Err(Error::InvalidInput("baseline and scale must be positive, noise non-negative".into()));
        }
        if !(0.0..0.5).contains(&self.outlier_frac) {
            return Err(Error::InvalidInput("outlier_frac outside [0, 0.5)".into()));
        }
        let r = &self.ranges;
        let widest = r.pct_black.1.max(r.pct_asian.1).max(r.plurality_share.1);
        if widest + r.pct_hispanic.1 + r.pct_black.1.min(r.pct_asian.1) > 100.0
            || r.population.0 == 0
            || !(0.0..=1.0).contains(&r.plurality_frac)
        {
            return Err(Error::InvalidInput("covariate ranges are not realizable".into()));
        }
        Ok(())
    }
}

fn draw_county(cfg: &SynthConfig, k: usize, rng: &mut ChaCha8Rng) -> CountyCovariates {
    let r = &cfg.ranges;
    let state_idx = k % cfg.states.len();
    let mut pct_black = uniform(rng, r.pct_black);
    let pct_hispanic = uniform(rng, r.pct_hispanic);
    let mut pct_asian = uniform(rng, r.pct_asian);
    let plurality = rng.random_bool(r.plurality_frac);
    if plurality {
        let share = uniform(rng, r.plurality_share);
        if rng.random_bool(0.5) {
            pct_black = share;
        } else {
            pct_asian = share;
        }
    }
    let rest = 100.0 - pct_black - pct_hispanic - pct_asian;
    let mut pct_white = rest * uniform(rng, (0.6, 1.0));
    if plurality {
        pct_white = pct_white.min(pct_black.max(pct_asian) * uniform(rng, (0.5, 0.95)));
    }
    let population = if r.population.1 > r.population.0 {
        rng.random_range(r.population.0..r.population.1)
    } else {
        r.population.0
    };
    CountyCovariates {
        fips: format!("{:02}{:03}", state_idx + 1, k / cfg.states.len() + 1),
        population,
        pct_white,
        pct_black,
        pct_hispanic,
        pct_asian,
        pct_age65: uniform(rng, r.pct_age65),
        health: std::array::from_fn(|_| uniform(rng, r.health)),
        state: cfg.states[state_idx].clone(),
        urbanization_code: rng.random_range(1..=6),
    }
}

/// Generates a complete synthetic corpus. Identical configs give identical
/// data.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let counties: Vec<CountyCovariates> = (0..config.n_counties).map(|k| draw_county(config, k, &mut rng)).collect();
    let weeks: Vec<NaiveDate> = (0..config.n_weeks)
        .map(|w| config.start_week + Duration::days(7 * w as i64))
        .collect();
    let incidence: Vec<f64> = counties.iter().map(|_| uniform(&mut rng, config.ranges.incidence)).collect();
    let truth_values: Vec<Vec<u64>> = counties
        .iter()
        .zip(&incidence)
        .map(|(c, rate)| {
            weeks
                .iter()
                .map(|_| (c.population as f64 * rate * uniform(&mut rng, (0.5, 1.5))).round() as u64)
                .collect()
        })
        .collect();

    let planted_log: BTreeMap<String, f64> = config.planted.iter().map(|(k, v)| (k.clone(), v.ln())).collect();
    let half_width = 3f64.sqrt() * config.noise_sd;
    let mut rows = Vec::new();
    for (t, team) in config.teams.iter().enumerate() {
        for (c, county) in counties.iter().enumerate() {
            for w in 0..weeks.len() {
                for &lookahead in &config.lookaheads {
                    let mut eta = config.baseline.ln();
                    for (label, b) in &planted_log {
                        eta += b * column_value(label, county, lookahead, team.mobility)?;
                    }
                    let mean = eta.exp();
                    if mean - half_width < 0.0 {
                        return Err(Error::Infeasible(format!(
                            "expected sqrt PBL {mean:.4} for county {} is below the noise half-width {half_width:.4}",
                            county.fips
                        )));
                    }
                    let noise = if half_width > 0.0 {
                        rng.random_range(-half_width..half_width)
                    } else {
                        0.0
                    };
                    rows.push(Row {
                        team: t,
                        county: c,
                        week: w,
                        lookahead,
                        target: mean + noise,
                    });
                }
            }
        }
    }
    let n_outliers = (rows.len() as f64 * config.outlier_frac).floor() as usize;
    if n_outliers > 0 {
        let top = rows.iter().map(|r| r.target).fold(0.0, f64::max).max(config.baseline);
        for i in sample(&mut rng, rows.len(), n_outliers).into_vec() {
            rows[i].target = top * uniform(&mut rng, (2.0, 3.0));
        }
    }

    let mut forecasts: BTreeMap<String, Vec<QuantileForecast>> = BTreeMap::new();
    for row in &rows {
        let county = &counties[row.county];
        let week_end = weeks[row.week];
        let y = truth_values[row.county][row.week] as f64;
        let mean_pbl = row.target * row.target * county.population as f64 / config.scale_factor;
        let d = 2.0 * mean_pbl;
        let under = y >= d && rng.random_bool(0.5);
        let value = if under { y - d } else { y + d };
        let n_weeks_ahead = row.lookahead / 7;
        let forecast_date = week_end - Duration::days(5 + 7 * (n_weeks_ahead as i64 - 1));
        let team_id = &config.teams[row.team].team_id;
        let out = forecasts.entry(team_id.clone()).or_default();
        for tau in HUB_QUANTILES {
            out.push(QuantileForecast {
                team_id: team_id.clone(),
                forecast_date,
                lookahead_days: row.lookahead,
                target_end_date: week_end,
                fips: county.fips.clone(),
                quantile: tau,
                value,
            });
        }
    }

    let truth = counties
        .iter()
        .enumerate()
        .flat_map(|(c, county)| {
            weeks.iter().enumerate().map(move |(w, &week_end)| (c, w, county.fips.clone(), week_end))
        })
        .map(|(c, w, fips, week_end)| GroundTruth {
            fips,
            week_end,
            incident_cases: truth_values[c][w],
        })
        .collect();
    let metadata = config
        .teams
        .iter()
        .map(|t| TeamMetadata {
            team_id: t.team_id.clone(),
            model_type: t.model_type,
            mobility: t.mobility,
        })
        .collect();
    Ok(SynthData {
        config: config.clone(),
        forecasts,
        truth,
        counties,
        metadata,
        planted_log,
        n_outliers,
    })
}

/// Paths of a corpus written by [`SynthData::write_dir`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPaths {
    pub forecasts: BTreeMap<String, PathBuf>,
    pub truth: PathBuf,
    pub demographics: PathBuf,
    pub urbanization: PathBuf,
    pub health: PathBuf,
    pub metadata: PathBuf,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e)
}

impl SynthData {
    pub fn forecast_csv(&self, team: &str) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_forecasts(self.forecasts.get(team).map(Vec::as_slice).unwrap_or(&[]), &mut buf)?;
        Ok(buf)
    }

    pub fn truth_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["week_end", "location", "incident"])?;
        for t in &self.truth {
            w.write_record([t.week_end.to_string(), t.fips.clone(), t.incident_cases.to_string()])?;
        }
        w.into_inner().map_err(|e| Error::io("truth buffer", e.into_error()))
    }

    pub fn demographics_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(crate::ingest::DEMOGRAPHIC_COLUMNS)?;
        for c in &self.counties {
            w.write_record([
                c.fips.clone(),
                c.population.to_string(),
                c.pct_white.to_string(),
                c.pct_black.to_string(),
                c.pct_hispanic.to_string(),
                c.pct_asian.to_string(),
                c.pct_age65.to_string(),
                c.state.clone(),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::io("demographics buffer", e.into_error()))
    }

    pub fn urbanization_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["fips", "code"])?;
        for c in &self.counties {
            w.write_record([c.fips.clone(), c.urbanization_code.to_string()])?;
        }
        w.into_inner().map_err(|e| Error::io("urbanization buffer", e.into_error()))
    }

    pub fn health_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["fips".to_string()];
        header.extend(HealthOutcome::ALL.iter().map(|h| h.as_str().to_string()));
        w.write_record(&header)?;
        for c in &self.counties {
            let mut row = vec![c.fips.clone()];
            row.extend(c.health.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| Error::io("health buffer", e.into_error()))
    }

    pub fn metadata_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["team_id", "model_type", "mobility"])?;
        for m in &self.metadata {
            w.write_record([m.team_id.as_str(), m.model_type.as_str(), m.mobility.as_str()])?;
        }
        w.into_inner().map_err(|e| Error::io("metadata buffer", e.into_error()))
    }

    /// Writes the corpus in the ingest schemas under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<SynthPaths> {
        let put = |name: &str, bytes: Vec<u8>| -> Result<PathBuf> {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
            f.write_all(&bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
            Ok(path)
        };
        let fdir = dir.join("forecasts");
        fs::create_dir_all(&fdir).map_err(|e| Error::io(fdir.display().to_string(), e))?;
        let mut forecasts = BTreeMap::new();
        for team in self.forecasts.keys() {
            let path = put(&format!("forecasts/{team}.csv"), self.forecast_csv(team)?)?;
            forecasts.insert(team.clone(), path);
        }
        Ok(SynthPaths {
            forecasts,
            truth: put("truth.csv", self.truth_csv()?)?,
            demographics: put("demographics.csv", self.demographics_csv()?)?,
            urbanization: put("urbanization.csv", self.urbanization_csv()?)?,
            health: put("health.csv", self.health_csv()?)?,
            metadata: put("metadata.csv", self.metadata_csv()?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::mean_pbl;

    fn small() -> SynthConfig {
        SynthConfig {
            n_counties: 60,
            n_weeks: 5,
            lookaheads: vec![7, 14],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        for team in a.forecasts.keys() {
            assert_eq!(a.forecast_csv(team).unwrap(), b.forecast_csv(team).unwrap());
        }
        assert_eq!(a.truth_csv().unwrap(), b.truth_csv().unwrap());
        assert_eq!(a.demographics_csv().unwrap(), b.demographics_csv().unwrap());
        let mut other = small();
        other.seed = 1;
        let c = generate(&other).unwrap();
        assert_ne!(a.truth_csv().unwrap(), c.truth_csv().unwrap());
    }

    #[test]
    fn forecasts_reproduce_target_pbl() {
        let mut cfg = small();
        cfg.outlier_frac = 0.0;
        cfg.noise_sd = 0.0;
        let data = generate(&cfg).unwrap();
        let truth: BTreeMap<(&str, NaiveDate), u64> =
            data.truth.iter().map(|t| ((t.fips.as_str(), t.week_end), t.incident_cases)).collect();
        let pop: BTreeMap<&str, &CountyCovariates> = data.counties.iter().map(|c| (c.fips.as_str(), c)).collect();
        for chunk in data.forecasts.values().flat_map(|v| v.chunks(7)) {
            let f0 = &chunk[0];
            let y = truth[&(f0.fips.as_str(), f0.target_end_date)] as f64;
            let qs: Vec<(f64, f64)> = chunk.iter().map(|f| (f.quantile, f.value)).collect();
            let county = pop[f0.fips.as_str()];
            let pbl = mean_pbl(y, &qs).unwrap() / county.population as f64;
            let mut expected = cfg.baseline.ln();
            expected += data.planted_log["pct_hispanic"] * county.pct_hispanic;
            if county.urbanicity() == UrbanicityGroup::MC {
                expected += data.planted_log["MC"];
            }
            let expected = expected.exp();
            assert!((pbl.sqrt() - expected).abs() < 1e-9 * expected);
            assert_eq!(crate::ingest::expected_target_end(f0.forecast_date, f0.lookahead_days / 7), f0.target_end_date);
        }
    }

    #[test]
    fn infeasible_noise_is_rejected() {
        let mut cfg = small();
        cfg.noise_sd = 1.0;
        assert!(matches!(generate(&cfg), Err(Error::Infeasible(_))));
    }

    #[test]
    fn outliers_are_counted() {
        let data = generate(&small()).unwrap();
        let rows = 2 * 60 * 5 * 2;
        assert_eq!(data.n_outliers, rows / 100);
    }

    #[test]
    fn some_counties_have_a_minority_plurality() {
        let data = generate(&small()).unwrap();
        let minority = data
            .counties
            .iter()
            .filter(|c| {
                crate::fairness::plurality_race(c.pct_white, c.pct_black, c.pct_hispanic, c.pct_asian).unwrap()
                    != crate::fairness::RaceGroup::White
            })
            .count();
        assert!(minority > 0 && minority < data.counties.len() / 2);
        for c in &data.counties {
            let total = c.pct_white + c.pct_black + c.pct_hispanic + c.pct_asian;
            assert!(total <= 100.0 + 1e-9);
        }
    }

    #[test]
    fn unknown_planted_column() {
        let mut cfg = small();
        cfg.planted.insert("bogus".into(), 1.1);
        assert!(generate(&cfg).is_err());
    }
}
