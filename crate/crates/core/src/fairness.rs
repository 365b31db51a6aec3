//! Relative effects, Accuracy Equality Ratios and the audit bundle consumed
//! by the dashboard.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::design::{hypothesis_vector, Characteristic, DesignMatrix, ModelSpec, SensitiveBlock};
use crate::error::{Error, Result};
use crate::glm::{wald_linear_hypothesis, FitResult, Z_95};
use crate::ingest::{CountyCovariates, Mobility, ModelType, UrbanicityGroup};
use crate::metrics::{quantile, PblObservation, TrimReport};

pub const SIGNIFICANCE: f64 = 0.05;

/// Percent difference implied by a multiplicative effect.
pub fn pct_diff(exp_combined: f64) -> f64 {
    (exp_combined - 1.0) * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeEffect {
    pub sensitive_term: String,
    pub characteristic: Characteristic,
    pub level: String,
    pub estimate: f64,
    pub exp_combined: f64,
    pub pct_diff: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// `e^(beta + delta)` for every sensitive term and every level of the
/// interacting characteristic, the reference level included.
pub fn relative_effects(
    fit: &FitResult,
    design: &DesignMatrix,
    characteristic: Characteristic,
) -> Result<Vec<RelativeEffect>> {
    if design.spec.interaction != Some(characteristic) {
        return Err(Error::MissingInteraction {
            needed: format!("{}:{}", design.spec.sensitive, characteristic),
            suggestion: ModelSpec::new(design.spec.sensitive, Some(characteristic)).name,
        });
    }
    if fit.column_labels != design.column_labels {
        return Err(Error::InvalidInput("fit and design columns differ".into()));
    }
    let levels = design.levels.get(&characteristic).cloned().unwrap_or_default();
    let mut out = Vec::new();
    for s in &design.sensitive_labels {
        for level in &levels {
            let c = hypothesis_vector(design, s, level)?;
            let w = wald_linear_hypothesis(fit, &c)?;
            out.push(RelativeEffect {
                sensitive_term: s.clone(),
                characteristic,
                level: level.label(),
                estimate: w.estimate,
                exp_combined: w.exp_estimate,
                pct_diff: pct_diff(w.exp_estimate),
                se: w.se,
                z: w.z,
                p_value: w.p_value,
                significant: w.p_value < SIGNIFICANCE,
            });
        }
    }
    Ok(out)
}

pub fn write_relative_effects<W: Write>(rows: &[RelativeEffect], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("relative-effect table", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RaceGroup {
    White,
    Black,
    Hispanic,
    Asian,
}

impl RaceGroup {
    /// Tie-break order for plurality assignment.
    pub const ALL: [RaceGroup; 4] = [Self::White, Self::Black, Self::Hispanic, Self::Asian];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::White => "White",
            Self::Black => "Black",
            Self::Hispanic => "Hispanic",
            Self::Asian => "Asian",
        }
    }
}

impl fmt::Display for RaceGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Largest of the four race shares; ties go to the earlier group in
/// White, Black, Hispanic, Asian order.
pub fn plurality_race(white: f64, black: f64, hispanic: f64, asian: f64) -> Result<RaceGroup> {
    let shares = [white, black, hispanic, asian];
    if shares.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput(format!("invalid race shares {shares:?}")));
    }
    if shares.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("all race shares are zero".into()));
    }
    let mut best = 0;
    for k in 1..4 {
        if shares[k] > shares[best] {
            best = k;
        }
    }
    Ok(RaceGroup::ALL[best])
}

/// Which protected-attribute grouping the AER cells use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GroupVariable {
    #[default]
    Race,
    Urbanicity,
}

impl GroupVariable {
    pub fn unprotected(self) -> &'static str {
        match self {
            Self::Race => "White",
            Self::Urbanicity => "LM",
        }
    }

    pub fn protected(self) -> Vec<&'static str> {
        match self {
            Self::Race => vec!["Black", "Hispanic", "Asian"],
            Self::Urbanicity => vec!["SMM", "MC"],
        }
    }

    pub fn block(self) -> SensitiveBlock {
        match self {
            Self::Race => SensitiveBlock::Race,
            Self::Urbanicity => SensitiveBlock::Urbanicity,
        }
    }
}

impl fmt::Display for GroupVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Race => "race",
            Self::Urbanicity => "urbanicity",
        })
    }
}

impl FromStr for GroupVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "race" => Ok(Self::Race),
            "urbanicity" => Ok(Self::Urbanicity),
            other => Err(Error::InvalidInput(format!("unknown group variable `{other}`"))),
        }
    }
}

/// Group label of a county: plurality race, or its urbanicity group.
pub fn plurality_group(cov: &CountyCovariates, variable: GroupVariable) -> Result<&'static str> {
    match variable {
        GroupVariable::Race => {
            plurality_race(cov.pct_white, cov.pct_black, cov.pct_hispanic, cov.pct_asian).map(RaceGroup::as_str)
        }
        GroupVariable::Urbanicity => Ok(match cov.urbanicity() {
            UrbanicityGroup::LM => "LM",
            UrbanicityGroup::SMM => "SMM",
            UrbanicityGroup::MC => "MC",
        }),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Accuracy Equality Ratio: mean protected PBL over mean unprotected PBL.
pub fn aer(protected: &[f64], unprotected: &[f64]) -> Result<f64> {
    if protected.is_empty() || unprotected.is_empty() {
        return Err(Error::InvalidInput("AER needs non-empty groups".into()));
    }
    let denom = mean(unprotected);
    if denom == 0.0 {
        return Err(Error::UndefinedRatio("unprotected mean PBL is zero".into()));
    }
    Ok(mean(protected) / denom)
}

/// Count, mean and sum of squared deviations of one group's PBL in a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Pools moments (Chan et al. parallel update), in the given order.
    pub fn pool<'a>(parts: impl IntoIterator<Item = &'a Moments>) -> Moments {
        let mut acc = Moments::default();
        for m in parts {
            if m.n == 0 {
                continue;
            }
            if acc.n == 0 {
                acc = *m;
                continue;
            }
            let n = acc.n + m.n;
            let d = m.mean - acc.mean;
            acc.mean += d * m.n as f64 / n as f64;
            acc.m2 += m.m2 + d * d * (acc.n as f64) * (m.n as f64) / n as f64;
            acc.n = n;
        }
        acc
    }

    pub fn variance(&self) -> f64 {
        if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub group: String,
    pub phase: u8,
    pub lookahead: u32,
    /// Absent when either group has no predictions in the cell.
    pub aer: Option<f64>,
    pub n_protected: usize,
    pub n_unprotected: usize,
    pub protected: Moments,
    pub unprotected: Moments,
    pub counties_protected: usize,
    pub counties_unprotected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub group: String,
    /// `None` pools all phases.
    pub phase: Option<u8>,
    /// `None` pools all lookaheads.
    pub lookahead: Option<u32>,
}

impl View {
    pub fn contains(&self, c: &Cell) -> bool {
        c.group == self.group
            && self.phase.is_none_or(|p| p == c.phase)
            && self.lookahead.is_none_or(|l| l == c.lookahead)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub team_id: String,
    pub model_type: ModelType,
    pub mobility: Mobility,
    pub variables: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanDifference {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AerValues {
    /// Median over the view's cells.
    pub median: f64,
    /// Pooled AER of the whole view.
    pub this_view: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub county_count: usize,
    pub prediction_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Card {
    pub view: View,
    pub model_info: ModelInfo,
    pub mean_difference: MeanDifference,
    pub aer_values: AerValues,
    pub coverage: Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamEntry {
    pub team_id: String,
    pub model_type: ModelType,
    pub mobility: Mobility,
    pub cells: Vec<Cell>,
    /// Median cell AER per protected group; absent when no cell is defined.
    pub median_aer: BTreeMap<String, Option<f64>>,
    pub cards: Vec<Card>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub n_obs: usize,
    pub trimmed: TrimReport,
    pub group_variable: GroupVariable,
    pub unprotected_group: String,
    pub protected_groups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeEffectTable {
    pub spec: String,
    pub characteristic: Characteristic,
    pub rows: Vec<RelativeEffect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditBundle {
    pub schema_version: u32,
    pub run: RunManifest,
    pub teams: Vec<TeamEntry>,
    pub relative_effects: Vec<RelativeEffectTable>,
}

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleInputs {
    pub config_hash: String,
    pub trimmed: TrimReport,
    pub group_variable: GroupVariable,
    pub relative_effects: Vec<RelativeEffectTable>,
}

type CellKey = (String, u8, u32);

#[derive(Default)]
struct CellAcc {
    protected: Moments,
    unprotected: Moments,
    counties_protected: BTreeSet<String>,
    counties_unprotected: BTreeSet<String>,
}

fn mean_difference(p: &Moments, u: &Moments) -> MeanDifference {
    let value = p.mean - u.mean;
    let se = (p.variance() / p.n as f64 + u.variance() / u.n as f64).sqrt();
    MeanDifference {
        value,
        lower: value - Z_95 * se,
        upper: value + Z_95 * se,
    }
}

/// Card for `view`, derived from the team's cells only.
pub fn card_from_cells(info: &ModelInfo, cells: &[Cell], view: &View, county_count: usize) -> Option<Card> {
    let inside: Vec<&Cell> = cells.iter().filter(|c| view.contains(c)).collect();
    let p = Moments::pool(inside.iter().map(|c| &c.protected));
    let u = Moments::pool(inside.iter().map(|c| &c.unprotected));
    if p.n == 0 || u.n == 0 || u.mean <= 0.0 {
        return None;
    }
    let mut values: Vec<f64> = inside.iter().filter_map(|c| c.aer).collect();
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(Card {
        view: view.clone(),
        model_info: info.clone(),
        mean_difference: mean_difference(&p, &u),
        aer_values: AerValues {
            median: quantile(&values, 0.5),
            this_view: p.mean / u.mean,
            min: values[0],
            max: values[values.len() - 1],
        },
        coverage: Coverage {
            county_count,
            prediction_count: p.n + u.n,
        },
    })
}

fn team_entry(
    obs: &[&PblObservation],
    groups: &BTreeMap<String, &'static str>,
    variable: GroupVariable,
) -> TeamEntry {
    let meta = &obs[0].metadata;
    let unprotected = variable.unprotected();
    let phases: BTreeSet<u8> = obs.iter().map(|o| o.phase).collect();
    let lookaheads: BTreeSet<u32> = obs.iter().map(|o| o.lookahead_days).collect();
    let mut acc: BTreeMap<CellKey, CellAcc> = BTreeMap::new();
    for g in variable.protected() {
        for &p in &phases {
            for &l in &lookaheads {
                acc.insert((g.to_string(), p, l), CellAcc::default());
            }
        }
    }
    for o in obs {
        let g = groups[&o.fips];
        if g == unprotected {
            for pg in variable.protected() {
                let a = acc.get_mut(&(pg.to_string(), o.phase, o.lookahead_days)).expect("cell");
                a.unprotected.push(o.pbl_norm);
                a.counties_unprotected.insert(o.fips.clone());
            }
        } else if let Some(a) = acc.get_mut(&(g.to_string(), o.phase, o.lookahead_days)) {
            a.protected.push(o.pbl_norm);
            a.counties_protected.insert(o.fips.clone());
        }
    }
    // cell order follows the protected-group order, then phase, then lookahead
    let mut cells = Vec::new();
    for g in variable.protected() {
        for ((cg, phase, lookahead), a) in &acc {
            if cg != g {
                continue;
            }
            let aer = (a.protected.n > 0 && a.unprotected.n > 0 && a.unprotected.mean > 0.0)
                .then(|| a.protected.mean / a.unprotected.mean);
            cells.push(Cell {
                group: cg.clone(),
                phase: *phase,
                lookahead: *lookahead,
                aer,
                n_protected: a.protected.n,
                n_unprotected: a.unprotected.n,
                protected: a.protected,
                unprotected: a.unprotected,
                counties_protected: a.counties_protected.len(),
                counties_unprotected: a.counties_unprotected.len(),
            });
        }
    }

    let info = ModelInfo {
        team_id: meta.team_id.clone(),
        model_type: meta.model_type,
        mobility: meta.mobility,
        variables: vec![variable.to_string(), "phase".into(), "lookahead".into()],
    };
    let mut median_aer = BTreeMap::new();
    let mut cards = Vec::new();
    for g in variable.protected() {
        let mut values: Vec<f64> = cells.iter().filter(|c| c.group == g).filter_map(|c| c.aer).collect();
        values.sort_by(f64::total_cmp);
        median_aer.insert(g.to_string(), (!values.is_empty()).then(|| quantile(&values, 0.5)));
        let phase_opts: Vec<Option<u8>> = std::iter::once(None).chain(phases.iter().map(|&p| Some(p))).collect();
        let look_opts: Vec<Option<u32>> = std::iter::once(None).chain(lookaheads.iter().map(|&l| Some(l))).collect();
        for &phase in &phase_opts {
            for &lookahead in &look_opts {
                let view = View {
                    group: g.to_string(),
                    phase,
                    lookahead,
                };
                let counties: BTreeSet<&str> = obs
                    .iter()
                    .filter(|o| {
                        let og = groups[&o.fips];
                        (og == g || og == unprotected)
                            && phase.is_none_or(|p| p == o.phase)
                            && lookahead.is_none_or(|l| l == o.lookahead_days)
                    })
                    .map(|o| o.fips.as_str())
                    .collect();
                if let Some(card) = card_from_cells(&info, &cells, &view, counties.len()) {
                    cards.push(card);
                }
            }
        }
    }
    TeamEntry {
        team_id: meta.team_id.clone(),
        model_type: meta.model_type,
        mobility: meta.mobility,
        cells,
        median_aer,
        cards,
    }
}

/// Assembles the audit bundle from a scored panel. Cells are per team,
/// protected group, phase and lookahead; teams are ordered by id.
pub fn build_bundle(observations: &[PblObservation], inputs: BundleInputs) -> Result<AuditBundle> {
    if observations.is_empty() {
        return Err(Error::InvalidInput("empty panel".into()));
    }
    let variable = inputs.group_variable;
    let mut groups: BTreeMap<String, &'static str> = BTreeMap::new();
    for o in observations {
        if !groups.contains_key(&o.fips) {
            groups.insert(o.fips.clone(), plurality_group(&o.covariates, variable)?);
        }
    }
    let mut by_team: BTreeMap<&str, Vec<&PblObservation>> = BTreeMap::new();
    for o in observations {
        by_team.entry(o.team_id.as_str()).or_default().push(o);
    }
    let teams: Vec<TeamEntry> = by_team
        .into_par_iter()
        .map(|(_, obs)| team_entry(&obs, &groups, variable))
        .collect();
    Ok(AuditBundle {
        schema_version: SCHEMA_VERSION,
        run: RunManifest {
            config_hash: inputs.config_hash,
            n_obs: observations.len(),
            trimmed: inputs.trimmed,
            group_variable: variable,
            unprotected_group: variable.unprotected().into(),
            protected_groups: variable.protected().into_iter().map(String::from).collect(),
        },
        teams,
        relative_effects: inputs.relative_effects,
    })
}

pub fn write_bundle<W: Write>(bundle: &AuditBundle, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, bundle)?;
    out.write_all(b"\n").map_err(|e| Error::io("bundle", e))?;
    Ok(())
}

/// Recomputes every card from the bundle's own cells and compares to
/// `tol`; also checks the per-team medians.
pub fn audit_bundle(bundle: &AuditBundle, tol: f64) -> Result<()> {
    let close = |a: f64, b: f64| (a - b).abs() <= tol * b.abs().max(1.0);
    for t in &bundle.teams {
        for card in &t.cards {
            let again = card_from_cells(&card.model_info, &t.cells, &card.view, card.coverage.county_count)
                .ok_or_else(|| Error::InvalidInput(format!("card for {} {:?} has no cells", t.team_id, card.view)))?;
            let pairs = [
                (card.mean_difference.value, again.mean_difference.value),
                (card.mean_difference.lower, again.mean_difference.lower),
                (card.mean_difference.upper, again.mean_difference.upper),
                (card.aer_values.median, again.aer_values.median),
                (card.aer_values.this_view, again.aer_values.this_view),
                (card.aer_values.min, again.aer_values.min),
                (card.aer_values.max, again.aer_values.max),
            ];
            if pairs.iter().any(|&(a, b)| !close(a, b)) || card.coverage.prediction_count != again.coverage.prediction_count
            {
                return Err(Error::InvalidInput(format!(
                    "card for {} {:?} disagrees with its cells",
                    t.team_id, card.view
                )));
            }
        }
        for (g, m) in &t.median_aer {
            let mut v: Vec<f64> = t.cells.iter().filter(|c| &c.group == g).filter_map(|c| c.aer).collect();
            v.sort_by(f64::total_cmp);
            let expected = (!v.is_empty()).then(|| quantile(&v, 0.5));
            let ok = match (m, expected) {
                (Some(a), Some(b)) => close(*a, b),
                (None, None) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::InvalidInput(format!("median AER for {} / {g} disagrees", t.team_id)));
            }
        }
    }
    Ok(())
}

fn require<'a>(v: &'a Value, key: &str, at: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| Error::InvalidInput(format!("bundle: missing `{key}` in {at}")))
}

fn number(v: &Value, key: &str, at: &str) -> Result<f64> {
    require(v, key, at)?
        .as_f64()
        .ok_or_else(|| Error::InvalidInput(format!("bundle: `{key}` in {at} is not a number")))
}

fn count(v: &Value, key: &str, at: &str) -> Result<u64> {
    require(v, key, at)?
        .as_u64()
        .ok_or_else(|| Error::InvalidInput(format!("bundle: `{key}` in {at} is not a count")))
}

fn array<'a>(v: &'a Value, key: &str, at: &str) -> Result<&'a Vec<Value>> {
    require(v, key, at)?
        .as_array()
        .ok_or_else(|| Error::InvalidInput(format!("bundle: `{key}` in {at} is not an array")))
}

/// Structural check of a bundle document against the published schema.
pub fn validate_bundle(doc: &Value) -> Result<()> {
    let bad = |m: String| Err(Error::InvalidInput(format!("bundle: {m}")));
    let run = require(doc, "run", "root")?;
    if !require(run, "config_hash", "run")?.as_str().is_some_and(|h| h.len() == 64) {
        return bad("config_hash must be a 64-character hex digest".into());
    }
    count(run, "n_obs", "run")?;
    require(run, "trimmed", "run")?;
    let protected: Vec<&str> = array(run, "protected_groups", "run")?
        .iter()
        .filter_map(Value::as_str)
        .collect();
    for (k, team) in array(doc, "teams", "root")?.iter().enumerate() {
        let at = format!("teams[{k}]");
        for key in ["team_id", "model_type", "mobility"] {
            if !require(team, key, &at)?.is_string() {
                return bad(format!("`{key}` in {at} is not a string"));
            }
        }
        for (i, cell) in array(team, "cells", &at)?.iter().enumerate() {
            let at = format!("{at}.cells[{i}]");
            let g = require(cell, "group", &at)?.as_str().unwrap_or_default();
            if !protected.contains(&g) {
                return bad(format!("unknown group `{g}` in {at}"));
            }
            count(cell, "phase", &at)?;
            count(cell, "lookahead", &at)?;
            count(cell, "n_protected", &at)?;
            count(cell, "n_unprotected", &at)?;
            match require(cell, "aer", &at)? {
                Value::Null => {}
                v => match v.as_f64() {
                    Some(x) if x > 0.0 => {}
                    _ => return bad(format!("aer in {at} must be positive or null")),
                },
            }
        }
        if !require(team, "median_aer", &at)?.is_object() {
            return bad(format!("median_aer in {at} is not an object"));
        }
        for (i, card) in array(team, "cards", &at)?.iter().enumerate() {
            let at = format!("{at}.cards[{i}]");
            require(card, "model_info", &at)?;
            let md = require(card, "mean_difference", &at)?;
            let (lo, v, hi) = (number(md, "lower", &at)?, number(md, "value", &at)?, number(md, "upper", &at)?);
            if !(lo <= v && v <= hi) {
                return bad(format!("mean_difference interval in {at} does not contain its value"));
            }
            let av = require(card, "aer_values", &at)?;
            for key in ["median", "this_view", "min", "max"] {
                number(av, key, &at)?;
            }
            let cov = require(card, "coverage", &at)?;
            if count(cov, "county_count", &at)? == 0 || count(cov, "prediction_count", &at)? == 0 {
                return bad(format!("empty coverage in {at}"));
            }
        }
    }
    array(doc, "relative_effects", "root")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_design, Level};
    use crate::glm::{fit_glm, GlmOptions};
    use crate::ingest::TeamMetadata;
    use chrono::NaiveDate;
    use std::sync::Arc;

    #[test]
    fn pct_diff_mapping() {
        assert_eq!(format!("{:+.1}", pct_diff(1.246)), "+24.6");
        assert_eq!(pct_diff(1.0), 0.0);
        assert!(pct_diff(0.9) < 0.0);
    }

    #[test]
    fn plurality_examples() {
        assert_eq!(plurality_race(83.09, 2.14, 4.64, 0.70).unwrap(), RaceGroup::White);
        assert_eq!(plurality_race(10.0, 40.0, 30.0, 20.0).unwrap(), RaceGroup::Black);
        assert_eq!(plurality_race(30.0, 30.0, 30.0, 10.0).unwrap(), RaceGroup::White);
        assert_eq!(plurality_race(10.0, 20.0, 35.0, 35.0).unwrap(), RaceGroup::Hispanic);
        assert!(plurality_race(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn aer_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(aer(&a, &a).unwrap(), 1.0);
        assert_eq!(aer(&[2.0, 2.0], &[1.0]).unwrap(), 2.0);
        assert!(aer(&[], &a).is_err());
        assert!(matches!(aer(&a, &[0.0, 0.0]), Err(Error::UndefinedRatio(_))));
    }

    #[test]
    fn pooled_moments_match_direct() {
        let xs = [0.3, 1.7, 2.2, 5.0, 0.1, 0.9, 4.4];
        let mut a = Moments::default();
        let mut b = Moments::default();
        let mut all = Moments::default();
        for (i, &x) in xs.iter().enumerate() {
            if i < 3 { a.push(x) } else { b.push(x) }
            all.push(x);
        }
        let pooled = Moments::pool([&a, &b]);
        assert_eq!(pooled.n, 7);
        assert!((pooled.mean - all.mean).abs() < 1e-14);
        assert!((pooled.m2 - all.m2).abs() < 1e-12);
    }

    fn county(fips: &str, white: f64, hispanic: f64, code: u8) -> Arc<CountyCovariates> {
        Arc::new(CountyCovariates {
            fips: fips.into(),
            population: 1000,
            pct_white: white,
            pct_black: 1.0,
            pct_hispanic: hispanic,
            pct_asian: 1.0,
            pct_age65: 15.0,
            health: [10.0; 9],
            state: "AL".into(),
            urbanization_code: code,
        })
    }

    fn panel(scale: f64) -> Vec<PblObservation> {
        let meta = Arc::new(TeamMetadata {
            team_id: "T".into(),
            model_type: ModelType::Statistical,
            mobility: Mobility::No,
        });
        let counties = [county("01001", 80.0, 5.0, 1), county("01003", 70.0, 20.0, 2), county("01005", 20.0, 70.0, 5)];
        let mut out = Vec::new();
        for c in &counties {
            let hispanic = c.pct_hispanic > c.pct_white;
            for phase in 0..2u8 {
                for look in [7u32, 14] {
                    for w in 0..3 {
                        let base = 0.5 + 0.1 * w as f64 + 0.05 * phase as f64;
                        let v = if hispanic { base * scale } else { base };
                        out.push(PblObservation {
                            team_id: "T".into(),
                            fips: c.fips.clone(),
                            week_end: NaiveDate::from_ymd_opt(2020, 7, 4).unwrap(),
                            lookahead_days: look,
                            phase,
                            pbl_norm: v,
                            sqrt_pbl: v.sqrt(),
                            covariates: Arc::clone(c),
                            metadata: Arc::clone(&meta),
                        });
                    }
                }
            }
        }
        out
    }

    fn inputs() -> BundleInputs {
        BundleInputs {
            config_hash: "0".repeat(64),
            trimmed: TrimReport {
                n_input: 0,
                removed: 0,
                trim_frac: 0.0,
                threshold: None,
            },
            group_variable: GroupVariable::Race,
            relative_effects: vec![],
        }
    }

    #[test]
    fn bundle_cells_cards_and_schema() {
        let b = build_bundle(&panel(1.5), inputs()).unwrap();
        assert_eq!(b.teams.len(), 1);
        let t = &b.teams[0];
        // 3 groups x 2 phases x 2 lookaheads
        assert_eq!(t.cells.len(), 12);
        let hisp: Vec<&Cell> = t.cells.iter().filter(|c| c.group == "Hispanic").collect();
        assert_eq!(hisp.len(), 4);
        assert!(t.cells.iter().filter(|c| c.group != "Hispanic").all(|c| c.aer.is_none() && c.n_protected == 0));
        assert_eq!(t.median_aer["Black"], None);
        assert!(t.cards.iter().all(|c| c.view.group == "Hispanic"));
        // all/all plus 2 phases x 2 lookaheads plus the marginal views
        assert_eq!(t.cards.len(), 9);
        audit_bundle(&b, 1e-9).unwrap();
        let doc = serde_json::to_value(&b).unwrap();
        validate_bundle(&doc).unwrap();
        let mut broken = doc.clone();
        broken["teams"][0]["cells"][0]["aer"] = serde_json::json!(-1.0);
        assert!(validate_bundle(&broken).is_err());
        let back: AuditBundle = serde_json::from_value(doc).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn identical_errors_give_unit_cells() {
        let b = build_bundle(&panel(1.0), inputs()).unwrap();
        for c in b.teams[0].cells.iter().filter(|c| c.aer.is_some()) {
            assert!((c.aer.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn urbanicity_cells_are_keyed_by_smm_and_mc() {
        let mut i = inputs();
        i.group_variable = GroupVariable::Urbanicity;
        let b = build_bundle(&panel(1.0), i).unwrap();
        let groups: BTreeSet<&str> = b.teams[0].cells.iter().map(|c| c.group.as_str()).collect();
        assert_eq!(groups, BTreeSet::from(["MC", "SMM"]));
        assert_eq!(b.run.unprotected_group, "LM");
    }

    #[test]
    fn relative_effects_need_matching_interaction() {
        let obs = crate::design::tests::toy_observations();
        let d = build_design(&"GLM-1".parse().unwrap(), &obs).unwrap();
        let fit = fit_glm(&d, &GlmOptions::default()).unwrap();
        match relative_effects(&fit, &d, Characteristic::Lookahead) {
            Err(Error::MissingInteraction { suggestion, .. }) => assert_eq!(suggestion, "GLM-1a"),
            other => panic!("unexpected {other:?}"),
        }
        let d = build_design(&"GLM-1a".parse().unwrap(), &obs).unwrap();
        let fit = fit_glm(&d, &GlmOptions::default()).unwrap();
        let rows = relative_effects(&fit, &d, Characteristic::Lookahead).unwrap();
        assert_eq!(rows.len(), 12);
        let reference = &rows[0];
        assert_eq!(reference.level, Level::Lookahead(7).label());
        let beta = fit.coefficient(&reference.sensitive_term).unwrap();
        assert!((reference.exp_combined - beta.exp()).abs() < 1e-15);
        for r in &rows {
            assert_eq!(r.pct_diff > 0.0, r.exp_combined > 1.0);
        }
    }
}
