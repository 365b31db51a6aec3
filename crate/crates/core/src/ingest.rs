//! Forecast-hub, ground-truth, covariate and team-metadata ingestion.
//!
//! Every parser is pure over a single reader. Fatal problems (unreadable
//! input, missing header columns, out-of-range percentages) return `Err`;
//! row-level problems are collected in the accompanying report so a single
//! malformed line does not discard a whole submission.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{Datelike, Duration, NaiveDate};
use csv::StringRecord;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phases::PhaseConfig;

/// The seven quantile levels every hub submission must provide.
pub const HUB_QUANTILES: [f64; 7] = [0.025, 0.100, 0.250, 0.500, 0.750, 0.900, 0.975];

const QUANTILE_EPS: f64 = 1e-9;

/// Forecast horizons in days.
pub const LOOKAHEADS: [u32; 4] = [7, 14, 21, 28];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    pub team_id: String,
    pub forecast_date: NaiveDate,
    pub lookahead_days: u32,
    pub target_end_date: NaiveDate,
    pub fips: String,
    pub quantile: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub fips: String,
    pub week_end: NaiveDate,
    pub incident_cases: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UrbanicityGroup {
    LM,
    SMM,
    MC,
}

impl UrbanicityGroup {
    pub const ALL: [UrbanicityGroup; 3] = [Self::LM, Self::SMM, Self::MC];

    /// CDC codes 1-2 are large metro, 3-4 small/medium metro, 5-6
    /// micropolitan and non-core.
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 | 2 => Ok(Self::LM),
            3 | 4 => Ok(Self::SMM),
            5 | 6 => Ok(Self::MC),
            _ => Err(Error::InvalidInput(format!(
                "urbanization code {code} outside 1..=6"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::LM => "LM",
            Self::SMM => "SMM",
            Self::MC => "MC",
        }
    }
}

impl fmt::Display for UrbanicityGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Age-adjusted comorbidity prevalences used as controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HealthOutcome {
    BPHIGH,
    CANCER,
    DIABETES,
    OBESITY,
    STROKE,
    COPD,
    KIDNEY,
    CASTHMA,
    CHD,
}

impl HealthOutcome {
    pub const ALL: [HealthOutcome; 9] = [
        Self::BPHIGH,
        Self::CANCER,
        Self::DIABETES,
        Self::OBESITY,
        Self::STROKE,
        Self::COPD,
        Self::KIDNEY,
        Self::CASTHMA,
        Self::CHD,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::BPHIGH => "BPHIGH",
            Self::CANCER => "CANCER",
            Self::DIABETES => "DIABETES",
            Self::OBESITY => "OBESITY",
            Self::STROKE => "STROKE",
            Self::COPD => "COPD",
            Self::KIDNEY => "KIDNEY",
            Self::CASTHMA => "CASTHMA",
            Self::CHD => "CHD",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for HealthOutcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|h| h.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown health outcome `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyCovariates {
    pub fips: String,
    pub population: u64,
    pub pct_white: f64,
    pub pct_black: f64,
    pub pct_hispanic: f64,
    pub pct_asian: f64,
    pub pct_age65: f64,
    /// Indexed by [`HealthOutcome::index`].
    pub health: [f64; 9],
    pub state: String,
    pub urbanization_code: u8,
}

impl CountyCovariates {
    pub fn urbanicity(&self) -> UrbanicityGroup {
        // validated at parse time
        UrbanicityGroup::from_code(self.urbanization_code).unwrap_or(UrbanicityGroup::MC)
    }

    pub fn health_outcome(&self, outcome: HealthOutcome) -> f64 {
        self.health[outcome.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelType {
    Compartmental,
    Statistical,
    DeepLearning,
    Baseline,
    Ensemble,
}

impl ModelType {
    pub const ALL: [ModelType; 5] = [
        Self::Compartmental,
        Self::Statistical,
        Self::DeepLearning,
        Self::Baseline,
        Self::Ensemble,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Compartmental => "Compartmental",
            Self::Statistical => "Statistical",
            Self::DeepLearning => "DeepLearning",
            Self::Baseline => "Baseline",
            Self::Ensemble => "Ensemble",
        }
    }
}

impl FromStr for ModelType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::InvalidInput(format!("unknown model type `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mobility {
    No,
    Yes,
    Mixed,
}

impl Mobility {
    pub const ALL: [Mobility; 3] = [Self::No, Self::Yes, Self::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::No => "No",
            Self::Yes => "Yes",
            Self::Mixed => "Mixed",
        }
    }
}

impl FromStr for Mobility {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown mobility flag `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamMetadata {
    pub team_id: String,
    pub model_type: ModelType,
    pub mobility: Mobility,
}

/// A record-level problem that did not abort parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordError {
    pub line: u64,
    pub message: String,
}

// ---------------------------------------------------------------------------
// dates

/// Saturday that closes the Sunday-Saturday epi week containing `date`.
pub fn epi_week_end(date: NaiveDate) -> NaiveDate {
    let offset = 6 - date.weekday().num_days_from_sunday();
    date + Duration::days(offset as i64)
}

pub fn is_saturday(date: NaiveDate) -> bool {
    date.weekday().num_days_from_sunday() == 6
}

/// Hub rule: an "N wk ahead" target made on a Sunday or Monday ends on the
/// Saturday of the same epi week plus N-1 weeks; later in the week it rolls
/// to the following Saturday.
pub fn expected_target_end(forecast_date: NaiveDate, weeks_ahead: u32) -> NaiveDate {
    let dow = forecast_date.weekday().num_days_from_sunday();
    let mut base = epi_week_end(forecast_date);
    if dow >= 2 {
        base += Duration::days(7);
    }
    base + Duration::days(7 * (weeks_ahead as i64 - 1))
}

fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| format!("bad date `{s}`: {e}"))
}

fn parse_f64(s: &str, what: &str) -> std::result::Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("bad {what} `{s}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite {what} `{s}`"))
    }
}

fn parse_count(s: &str, what: &str) -> std::result::Result<i64, String> {
    let v = parse_f64(s, what)?;
    if v.fract() != 0.0 {
        return Err(format!("{what} `{s}` is not an integer"));
    }
    Ok(v as i64)
}

pub fn is_county_fips(loc: &str) -> bool {
    loc.len() == 5 && loc.bytes().all(|b| b.is_ascii_digit())
}

fn is_aggregate_location(loc: &str) -> bool {
    loc == "US" || (loc.len() == 2 && loc.bytes().all(|b| b.is_ascii_digit()))
}

// ---------------------------------------------------------------------------
// header helper

struct Columns {
    idx: Vec<usize>,
}

impl Columns {
    fn resolve(headers: &StringRecord, names: &[&str], source_name: &str) -> Result<Self> {
        let idx = names
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h.trim() == *name)
                    .ok_or_else(|| Error::MissingColumn {
                        column: name.to_string(),
                        source_name: source_name.to_string(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { idx })
    }

    fn get<'r>(&self, record: &'r StringRecord, k: usize) -> &'r str {
        record.get(self.idx[k]).unwrap_or("").trim()
    }
}

fn has_columns(headers: &StringRecord, names: &[&str]) -> bool {
    names.iter().all(|n| headers.iter().any(|h| h.trim() == *n))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn record_line(record: &StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

pub(crate) fn open(path: &Path) -> Result<File> {
    if !path.exists() {
        return Err(Error::MissingPath(path.display().to_string()));
    }
    File::open(path).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// forecasts

pub const FORECAST_COLUMNS: [&str; 7] = [
    "forecast_date",
    "target",
    "target_end_date",
    "location",
    "type",
    "quantile",
    "value",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub rows_read: usize,
    pub non_quantile_type: usize,
    pub other_target: usize,
    pub quantile_not_whitelisted: usize,
    pub non_county_dropped: usize,
    pub incomplete_groups: usize,
    pub record_errors: Vec<RecordError>,
}

impl ForecastReport {
    /// Adds the counts of another file from the same team.
    pub fn merge(&mut self, other: ForecastReport) {
        self.rows_read += other.rows_read;
        self.non_quantile_type += other.non_quantile_type;
        self.other_target += other.other_target;
        self.quantile_not_whitelisted += other.quantile_not_whitelisted;
        self.non_county_dropped += other.non_county_dropped;
        self.incomplete_groups += other.incomplete_groups;
        self.record_errors.extend(other.record_errors);
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedForecasts {
    pub records: Vec<QuantileForecast>,
    pub report: ForecastReport,
}

/// Parses "N wk ahead inc case" into N.
fn parse_case_target(target: &str) -> Option<u32> {
    let rest = target.trim().strip_suffix(" wk ahead inc case")?;
    let n: u32 = rest.trim().parse().ok()?;
    (1..=4).contains(&n).then_some(n)
}

fn whitelist_match(q: f64, whitelist: &[f64]) -> Option<f64> {
    whitelist
        .iter()
        .copied()
        .find(|w| (w - q).abs() < QUANTILE_EPS)
}

/// Parses one team's hub submission.
///
/// Rows that are not county-level incident-case quantiles are filtered and
/// counted. A (fips, target week, lookahead, forecast date) group that does
/// not carry every whitelisted quantile exactly once is excluded.
pub fn parse_forecasts<R: Read>(
    input: R,
    team_id: &str,
    quantile_whitelist: &[f64],
) -> Result<ParsedForecasts> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(ParsedForecasts::default());
    }
    let cols = Columns::resolve(&headers, &FORECAST_COLUMNS, "forecast")?;
    let mut report = ForecastReport::default();
    type Key = (String, NaiveDate, u32, NaiveDate);
    let mut groups: BTreeMap<Key, Vec<QuantileForecast>> = BTreeMap::new();

    for row in rdr.records() {
        let record = row?;
        report.rows_read += 1;
        let line = record_line(&record);
        match forecast_row(&cols, &record, team_id, quantile_whitelist, &mut report) {
            Ok(Some(qf)) => {
                let key = (
                    qf.fips.clone(),
                    qf.target_end_date,
                    qf.lookahead_days,
                    qf.forecast_date,
                );
                groups.entry(key).or_default().push(qf);
            }
            Ok(None) => {}
            Err(message) => report.record_errors.push(RecordError { line, message }),
        }
    }

    let mut records = Vec::new();
    for (_, mut group) in groups {
        group.sort_by(|a, b| a.quantile.total_cmp(&b.quantile));
        let distinct: BTreeSet<u64> = group.iter().map(|q| q.quantile.to_bits()).collect();
        if group.len() != quantile_whitelist.len() || distinct.len() != quantile_whitelist.len() {
            report.incomplete_groups += 1;
            continue;
        }
        records.extend(group);
    }
    Ok(ParsedForecasts { records, report })
}

fn forecast_row(
    cols: &Columns,
    record: &StringRecord,
    team_id: &str,
    whitelist: &[f64],
    report: &mut ForecastReport,
) -> std::result::Result<Option<QuantileForecast>, String> {
    let kind = cols.get(record, 4);
    if kind != "quantile" {
        if kind.is_empty() {
            return Err("empty type field".into());
        }
        report.non_quantile_type += 1;
        return Ok(None);
    }
    let target = cols.get(record, 1);
    let Some(weeks) = parse_case_target(target) else {
        report.other_target += 1;
        return Ok(None);
    };
    let location = cols.get(record, 3);
    if !is_county_fips(location) {
        if is_aggregate_location(location) {
            report.non_county_dropped += 1;
            return Ok(None);
        }
        return Err(format!("bad location `{location}`"));
    }
    let q = parse_f64(cols.get(record, 5), "quantile")?;
    if !(q > 0.0 && q < 1.0) {
        return Err(format!("quantile {q} outside (0, 1)"));
    }
    let Some(quantile) = whitelist_match(q, whitelist) else {
        report.quantile_not_whitelisted += 1;
        return Ok(None);
    };
    let forecast_date = parse_date(cols.get(record, 0))?;
    let target_end_date = parse_date(cols.get(record, 2))?;
    if !is_saturday(target_end_date) {
        return Err(format!("target_end_date {target_end_date} is not a Saturday"));
    }
    let expected = expected_target_end(forecast_date, weeks);
    if expected != target_end_date {
        return Err(format!(
            "target_end_date {target_end_date} inconsistent with {weeks} wk ahead from {forecast_date} (expected {expected})"
        ));
    }
    let value = parse_f64(cols.get(record, 6), "value")?;
    if value < 0.0 {
        return Err(format!("negative forecast value {value}"));
    }
    Ok(Some(QuantileForecast {
        team_id: team_id.to_string(),
        forecast_date,
        lookahead_days: 7 * weeks,
        target_end_date,
        fips: location.to_string(),
        quantile,
        value,
    }))
}

pub fn parse_forecasts_path(
    path: &Path,
    team_id: &str,
    quantile_whitelist: &[f64],
) -> Result<ParsedForecasts> {
    let file = open(path)?;
    parse_forecasts(file, team_id, quantile_whitelist)
}

/// Writes records back out in the hub schema.
pub fn write_forecasts<W: Write>(records: &[QuantileForecast], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FORECAST_COLUMNS)?;
    for r in records {
        w.write_record([
            r.forecast_date.to_string(),
            format!("{} wk ahead inc case", r.lookahead_days / 7),
            r.target_end_date.to_string(),
            r.fips.clone(),
            "quantile".to_string(),
            format!("{}", r.quantile),
            format!("{}", r.value),
        ])?;
    }
    w.flush().map_err(|e| Error::io("forecast output", e))?;
    Ok(())
}

/// All quantiles for one (team, county, target week, lookahead).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastGroup {
    pub team_id: String,
    pub fips: String,
    pub forecast_date: NaiveDate,
    pub week_end: NaiveDate,
    pub lookahead_days: u32,
    /// `(tau, value)` sorted by strictly increasing tau.
    pub quantiles: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossingPolicy {
    /// Sort crossed values within the group and count a repair.
    #[default]
    Repair,
    /// Drop any group whose values decrease in tau.
    Strict,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub groups: usize,
    pub repaired: usize,
    pub dropped_crossing: usize,
    pub superseded: usize,
}

/// Assembles complete quantile groups, keeping the latest forecast date
/// when a team submitted the same target more than once.
pub fn group_forecasts(
    records: &[QuantileForecast],
    policy: CrossingPolicy,
) -> (Vec<ForecastGroup>, GroupReport) {
    type Key<'a> = (&'a str, &'a str, NaiveDate, u32);
    let mut by_key: BTreeMap<Key<'_>, BTreeMap<NaiveDate, Vec<(f64, f64)>>> = BTreeMap::new();
    for r in records {
        by_key
            .entry((&r.team_id, &r.fips, r.target_end_date, r.lookahead_days))
            .or_default()
            .entry(r.forecast_date)
            .or_default()
            .push((r.quantile, r.value));
    }

    let mut report = GroupReport::default();
    let mut out = Vec::with_capacity(by_key.len());
    for ((team, fips, week_end, lookahead), by_date) in by_key {
        report.superseded += by_date.len() - 1;
        let (forecast_date, mut quantiles) = by_date.into_iter().next_back().expect("non-empty");
        quantiles.sort_by(|a, b| a.0.total_cmp(&b.0));
        let crossed = quantiles.windows(2).any(|w| w[1].1 < w[0].1);
        if crossed {
            match policy {
                CrossingPolicy::Strict => {
                    report.dropped_crossing += 1;
                    continue;
                }
                CrossingPolicy::Repair => {
                    let mut values: Vec<f64> = quantiles.iter().map(|q| q.1).collect();
                    values.sort_by(f64::total_cmp);
                    for (q, v) in quantiles.iter_mut().zip(values) {
                        q.1 = v;
                    }
                    report.repaired += 1;
                }
            }
        }
        out.push(ForecastGroup {
            team_id: team.to_string(),
            fips: fips.to_string(),
            forecast_date,
            week_end,
            lookahead_days: lookahead,
            quantiles,
        });
    }
    report.groups = out.len();
    (out, report)
}

// ---------------------------------------------------------------------------
// ground truth

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthReport {
    pub rows_read: usize,
    /// Negative incident values (or cumulative decreases) set to zero.
    pub clamped: usize,
    pub skipped_locations: usize,
    /// Weeks with no preceding cumulative value to difference against.
    pub undifferenced_weeks: usize,
    pub record_errors: Vec<RecordError>,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedTruth {
    pub records: Vec<GroundTruth>,
    pub report: TruthReport,
}

/// Parses either a cumulative series (`date,location,value`, daily or
/// weekly) or weekly incidents (`week_end,location,incident`).
pub fn parse_truth<R: Read>(input: R) -> Result<ParsedTruth> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Ok(ParsedTruth::default());
    }
    if has_columns(&headers, &["week_end", "location", "incident"]) {
        parse_incident_truth(rdr, &headers)
    } else if has_columns(&headers, &["date", "location", "value"]) {
        parse_cumulative_truth(rdr, &headers)
    } else {
        Err(Error::MissingColumn {
            column: "date,location,value | week_end,location,incident".into(),
            source_name: "truth".into(),
        })
    }
}

pub fn parse_truth_path(path: &Path) -> Result<ParsedTruth> {
    parse_truth(open(path)?)
}

fn parse_incident_truth<R: Read>(mut rdr: csv::Reader<R>, headers: &StringRecord) -> Result<ParsedTruth> {
    let cols = Columns::resolve(headers, &["week_end", "location", "incident"], "truth")?;
    let mut report = TruthReport::default();
    let mut rows: BTreeMap<(String, NaiveDate), u64> = BTreeMap::new();
    for row in rdr.records() {
        let record = row?;
        report.rows_read += 1;
        let line = record_line(&record);
        let location = cols.get(&record, 1);
        if !is_county_fips(location) {
            report.skipped_locations += 1;
            continue;
        }
        let parsed = parse_date(cols.get(&record, 0)).and_then(|d| {
            if is_saturday(d) {
                Ok(d)
            } else {
                Err(format!("week_end {d} is not a Saturday"))
            }
        });
        let result = parsed.and_then(|d| parse_count(cols.get(&record, 2), "incident").map(|v| (d, v)));
        match result {
            Ok((week_end, v)) => {
                let v = if v < 0 {
                    report.clamped += 1;
                    0
                } else {
                    v as u64
                };
                if rows.insert((location.to_string(), week_end), v).is_some() {
                    report.record_errors.push(RecordError {
                        line,
                        message: format!("duplicate truth row for {location} {week_end}"),
                    });
                }
            }
            Err(message) => report.record_errors.push(RecordError { line, message }),
        }
    }
    let records = rows
        .into_iter()
        .map(|((fips, week_end), incident_cases)| GroundTruth {
            fips,
            week_end,
            incident_cases,
        })
        .collect();
    Ok(ParsedTruth { records, report })
}

fn parse_cumulative_truth<R: Read>(mut rdr: csv::Reader<R>, headers: &StringRecord) -> Result<ParsedTruth> {
    let cols = Columns::resolve(headers, &["date", "location", "value"], "truth")?;
    let mut report = TruthReport::default();
    // fips -> week_end -> (latest date seen in week, cumulative value)
    let mut series: BTreeMap<String, BTreeMap<NaiveDate, (NaiveDate, i64)>> = BTreeMap::new();
    for row in rdr.records() {
        let record = row?;
        report.rows_read += 1;
        let line = record_line(&record);
        let location = cols.get(&record, 1);
        if !is_county_fips(location) {
            report.skipped_locations += 1;
            continue;
        }
        let parsed = parse_date(cols.get(&record, 0))
            .and_then(|d| parse_count(cols.get(&record, 2), "cumulative value").map(|v| (d, v)));
        match parsed {
            Ok((date, value)) => {
                let slot = series
                    .entry(location.to_string())
                    .or_default()
                    .entry(epi_week_end(date))
                    .or_insert((date, value));
                if date >= slot.0 {
                    *slot = (date, value);
                }
            }
            Err(message) => report.record_errors.push(RecordError { line, message }),
        }
    }

    let mut records = Vec::new();
    for (fips, weeks) in series {
        let mut prev: Option<(NaiveDate, i64)> = None;
        for (week_end, (_, cum)) in weeks {
            match prev {
                Some((prev_week, prev_cum)) if prev_week + Duration::days(7) == week_end => {
                    let diff = cum - prev_cum;
                    let incident = if diff < 0 {
                        report.clamped += 1;
                        0
                    } else {
                        diff as u64
                    };
                    records.push(GroundTruth {
                        fips: fips.clone(),
                        week_end,
                        incident_cases: incident,
                    });
                }
                _ => report.undifferenced_weeks += 1,
            }
            prev = Some((week_end, cum));
        }
    }
    Ok(ParsedTruth { records, report })
}

// ---------------------------------------------------------------------------
// covariates

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateReport {
    pub retained: usize,
    /// Counties present in at least one source but not in all three.
    pub excluded: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCovariates {
    pub counties: BTreeMap<String, CountyCovariates>,
    pub report: CovariateReport,
}

fn check_percent(field: &str, fips: &str, value: f64) -> Result<f64> {
    if (0.0..=100.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::PercentOutOfRange {
            field: field.to_string(),
            fips: fips.to_string(),
            value,
        })
    }
}

fn strict<T>(line: u64, r: std::result::Result<T, String>) -> Result<T> {
    r.map_err(|message| Error::Record { line, message })
}

struct Demographics {
    population: u64,
    pct_white: f64,
    pct_black: f64,
    pct_hispanic: f64,
    pct_asian: f64,
    pct_age65: f64,
    state: String,
}

pub const DEMOGRAPHIC_COLUMNS: [&str; 8] = [
    "fips",
    "population",
    "pct_white",
    "pct_black",
    "pct_hispanic",
    "pct_asian",
    "pct_age65",
    "state",
];

fn parse_demographics<R: Read>(input: R) -> Result<BTreeMap<String, Demographics>> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let cols = Columns::resolve(&headers, &DEMOGRAPHIC_COLUMNS, "demographics")?;
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let record = row?;
        let line = record_line(&record);
        let fips = cols.get(&record, 0).to_string();
        if !is_county_fips(&fips) {
            return Err(Error::Record {
                line,
                message: format!("bad fips `{fips}`"),
            });
        }
        let population = strict(line, parse_count(cols.get(&record, 1), "population"))?;
        if population <= 0 {
            return Err(Error::InvalidInput(format!(
                "county {fips} has non-positive population {population}"
            )));
        }
        let mut pct = [0.0; 5];
        for (k, name) in DEMOGRAPHIC_COLUMNS[2..7].iter().enumerate() {
            let v = strict(line, parse_f64(cols.get(&record, k + 2), name))?;
            pct[k] = check_percent(name, &fips, v)?;
        }
        let state = cols.get(&record, 7).to_string();
        out.insert(
            fips,
            Demographics {
                population: population as u64,
                pct_white: pct[0],
                pct_black: pct[1],
                pct_hispanic: pct[2],
                pct_asian: pct[3],
                pct_age65: pct[4],
                state,
            },
        );
    }
    Ok(out)
}

fn parse_urbanization<R: Read>(input: R) -> Result<BTreeMap<String, u8>> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let cols = Columns::resolve(&headers, &["fips", "code"], "urbanization")?;
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let record = row?;
        let line = record_line(&record);
        let fips = cols.get(&record, 0).to_string();
        let code = strict(line, parse_count(cols.get(&record, 1), "code"))?;
        if !(1..=6).contains(&code) {
            return Err(Error::InvalidInput(format!(
                "county {fips} has urbanization code {code} outside 1..=6"
            )));
        }
        out.insert(fips, code as u8);
    }
    Ok(out)
}

fn parse_health<R: Read>(input: R) -> Result<BTreeMap<String, [f64; 9]>> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let mut names = vec!["fips"];
    names.extend(HealthOutcome::ALL.iter().map(|h| h.as_str()));
    let cols = Columns::resolve(&headers, &names, "health")?;
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let record = row?;
        let line = record_line(&record);
        let fips = cols.get(&record, 0).to_string();
        let mut values = [0.0; 9];
        for (k, h) in HealthOutcome::ALL.iter().enumerate() {
            let v = strict(line, parse_f64(cols.get(&record, k + 1), h.as_str()))?;
            values[k] = check_percent(h.as_str(), &fips, v)?;
        }
        out.insert(fips, values);
    }
    Ok(out)
}

/// Joins the three covariate sources; only counties present in all of them
/// are retained.
pub fn parse_covariates<A: Read, B: Read, C: Read>(
    demographics: A,
    urbanization: B,
    health: C,
) -> Result<ParsedCovariates> {
    let demo = parse_demographics(demographics)?;
    let urban = parse_urbanization(urbanization)?;
    let health = parse_health(health)?;

    let all: BTreeSet<&String> = demo.keys().chain(urban.keys()).chain(health.keys()).collect();
    let mut counties = BTreeMap::new();
    for fips in &all {
        let (Some(d), Some(code), Some(h)) = (demo.get(*fips), urban.get(*fips), health.get(*fips))
        else {
            continue;
        };
        counties.insert(
            (*fips).clone(),
            CountyCovariates {
                fips: (*fips).clone(),
                population: d.population,
                pct_white: d.pct_white,
                pct_black: d.pct_black,
                pct_hispanic: d.pct_hispanic,
                pct_asian: d.pct_asian,
                pct_age65: d.pct_age65,
                health: *h,
                state: d.state.clone(),
                urbanization_code: *code,
            },
        );
    }
    let report = CovariateReport {
        retained: counties.len(),
        excluded: all.len() - counties.len(),
    };
    Ok(ParsedCovariates { counties, report })
}

pub fn parse_covariates_paths(demographics: &Path, urbanization: &Path, health: &Path) -> Result<ParsedCovariates> {
    parse_covariates(open(demographics)?, open(urbanization)?, open(health)?)
}

// ---------------------------------------------------------------------------
// team metadata

pub fn parse_metadata<R: Read>(input: R) -> Result<BTreeMap<String, TeamMetadata>> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let cols = Columns::resolve(&headers, &["team_id", "model_type", "mobility"], "metadata")?;
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let record = row?;
        let line = record_line(&record);
        let team_id = cols.get(&record, 0).to_string();
        let model_type: ModelType = cols.get(&record, 1).parse()?;
        let mobility: Mobility = cols.get(&record, 2).parse()?;
        let meta = TeamMetadata {
            team_id: team_id.clone(),
            model_type,
            mobility,
        };
        if out.insert(team_id.clone(), meta).is_some() {
            return Err(Error::Record {
                line,
                message: format!("duplicate metadata for team `{team_id}`"),
            });
        }
    }
    Ok(out)
}

pub fn parse_metadata_path(path: &Path) -> Result<BTreeMap<String, TeamMetadata>> {
    parse_metadata(open(path)?)
}

// ---------------------------------------------------------------------------
// join

#[derive(Debug, Clone)]
pub struct JoinedRow {
    pub group: ForecastGroup,
    pub truth: f64,
    pub covariates: Arc<CountyCovariates>,
    pub metadata: Arc<TeamMetadata>,
    pub phase: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JoinReport {
    pub input_groups: usize,
    pub retained: usize,
    pub missing_truth: usize,
    pub missing_covariates: usize,
    pub missing_metadata: usize,
    pub outside_phases: usize,
}

impl JoinReport {
    pub fn dropped(&self) -> usize {
        self.missing_truth + self.missing_covariates + self.missing_metadata + self.outside_phases
    }
}

#[derive(Debug, Clone, Default)]
pub struct JoinedPanel {
    pub rows: Vec<JoinedRow>,
    pub report: JoinReport,
}

/// Single-pass merge of forecast groups with truth, covariates, metadata and
/// phase. Groups are kept in their input order; each dropped group is
/// counted under the first cause that applies (truth, covariates, metadata,
/// phase).
pub fn join_panel(
    groups: &[ForecastGroup],
    truth: &[GroundTruth],
    covariates: &BTreeMap<String, CountyCovariates>,
    metadata: &BTreeMap<String, TeamMetadata>,
    phases: &PhaseConfig,
) -> JoinedPanel {
    let truth_by_key: BTreeMap<(&str, NaiveDate), u64> = truth
        .iter()
        .map(|t| ((t.fips.as_str(), t.week_end), t.incident_cases))
        .collect();
    let cov: BTreeMap<&str, Arc<CountyCovariates>> = covariates
        .iter()
        .map(|(k, v)| (k.as_str(), Arc::new(v.clone())))
        .collect();
    let meta: BTreeMap<&str, Arc<TeamMetadata>> = metadata
        .iter()
        .map(|(k, v)| (k.as_str(), Arc::new(v.clone())))
        .collect();

    let mut report = JoinReport {
        input_groups: groups.len(),
        ..Default::default()
    };
    let mut rows = Vec::with_capacity(groups.len());
    for g in groups {
        let Some(&y) = truth_by_key.get(&(g.fips.as_str(), g.week_end)) else {
            report.missing_truth += 1;
            continue;
        };
        let Some(c) = cov.get(g.fips.as_str()) else {
            report.missing_covariates += 1;
            continue;
        };
        let Some(m) = meta.get(g.team_id.as_str()) else {
            report.missing_metadata += 1;
            continue;
        };
        let Ok(phase) = phases.assign(g.week_end) else {
            report.outside_phases += 1;
            continue;
        };
        rows.push(JoinedRow {
            group: g.clone(),
            truth: y as f64,
            covariates: Arc::clone(c),
            metadata: Arc::clone(m),
            phase,
        });
    }
    report.retained = rows.len();
    JoinedPanel { rows, report }
}
