//! Declarative model specifications and their treatment-coded design
//! matrices.
//!
//! Column order is fixed: intercept, sensitive block, model-data
//! characteristics (lookahead, phase, model type, mobility), interactions,
//! health controls, age 65+, then state dummies in alphabetical order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{HealthOutcome, Mobility, ModelType, UrbanicityGroup};
use crate::metrics::PblObservation;

pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SensitiveBlock {
    Race,
    Urbanicity,
}

impl fmt::Display for SensitiveBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Race => "race",
            Self::Urbanicity => "urbanicity",
        })
    }
}

/// Race shares entering as continuous percents; White is the omitted share.
pub const RACE_TERMS: [&str; 3] = ["pct_black", "pct_hispanic", "pct_asian"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Characteristic {
    Lookahead,
    Phase,
    ModelType,
    Mobility,
}

impl Characteristic {
    pub const ALL: [Characteristic; 4] = [Self::Lookahead, Self::Phase, Self::ModelType, Self::Mobility];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lookahead => "lookahead",
            Self::Phase => "phase",
            Self::ModelType => "model_type",
            Self::Mobility => "mobility",
        }
    }

    fn level_of(self, o: &PblObservation) -> Level {
        match self {
            Self::Lookahead => Level::Lookahead(o.lookahead_days),
            Self::Phase => Level::Phase(o.phase),
            Self::ModelType => Level::ModelType(o.metadata.model_type),
            Self::Mobility => Level::Mobility(o.metadata.mobility),
        }
    }
}

impl fmt::Display for Characteristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One level of a model-data characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Lookahead(u32),
    Phase(u8),
    ModelType(ModelType),
    Mobility(Mobility),
}

impl Level {
    pub fn characteristic(&self) -> Characteristic {
        match self {
            Self::Lookahead(_) => Characteristic::Lookahead,
            Self::Phase(_) => Characteristic::Phase,
            Self::ModelType(_) => Characteristic::ModelType,
            Self::Mobility(_) => Characteristic::Mobility,
        }
    }

    /// Column label of this level's dummy, e.g. `lookahead14`.
    pub fn label(&self) -> String {
        match self {
            Self::Lookahead(d) => format!("lookahead{d}"),
            Self::Phase(p) => format!("phase{p}"),
            Self::ModelType(m) => format!("model_type{}", m.as_str()),
            Self::Mobility(m) => format!("mobility{}", m.as_str()),
        }
    }

    /// Sort key: numeric levels ascend, categorical levels go alphabetically.
    fn sort_key(&self) -> (u32, String) {
        match self {
            Self::Lookahead(d) => (*d, String::new()),
            Self::Phase(p) => (*p as u32, String::new()),
            Self::ModelType(m) => (0, m.as_str().to_string()),
            Self::Mobility(m) => (0, m.as_str().to_string()),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceLevels {
    pub lookahead: u32,
    pub phase: u8,
    pub model_type: ModelType,
    pub mobility: Mobility,
    pub urbanicity: UrbanicityGroup,
}

impl Default for ReferenceLevels {
    fn default() -> Self {
        Self {
            lookahead: 7,
            phase: 0,
            model_type: ModelType::Compartmental,
            mobility: Mobility::No,
            urbanicity: UrbanicityGroup::LM,
        }
    }
}

impl ReferenceLevels {
    pub fn level(&self, c: Characteristic) -> Level {
        match c {
            Characteristic::Lookahead => Level::Lookahead(self.lookahead),
            Characteristic::Phase => Level::Phase(self.phase),
            Characteristic::ModelType => Level::ModelType(self.model_type),
            Characteristic::Mobility => Level::Mobility(self.mobility),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Controls {
    pub health: BTreeSet<HealthOutcome>,
    pub age65: bool,
    pub state_effects: bool,
}

impl Default for Controls {
    fn default() -> Self {
        Self {
            health: HealthOutcome::ALL.into_iter().collect(),
            age65: true,
            state_effects: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub sensitive: SensitiveBlock,
    pub interaction: Option<Characteristic>,
    pub controls: Controls,
    pub reference: ReferenceLevels,
}

/// The ten model names: GLM-1, GLM-1a..d, GLM-2, GLM-2a..d.
pub const MODEL_NAMES: [&str; 10] = [
    "GLM-1", "GLM-1a", "GLM-1b", "GLM-1c", "GLM-1d", "GLM-2", "GLM-2a", "GLM-2b", "GLM-2c", "GLM-2d",
];

impl ModelSpec {
    pub fn new(sensitive: SensitiveBlock, interaction: Option<Characteristic>) -> Self {
        let family = match sensitive {
            SensitiveBlock::Race => "1",
            SensitiveBlock::Urbanicity => "2",
        };
        let suffix = match interaction {
            None => "",
            Some(Characteristic::Lookahead) => "a",
            Some(Characteristic::Phase) => "b",
            Some(Characteristic::ModelType) => "c",
            Some(Characteristic::Mobility) => "d",
        };
        Self {
            name: format!("GLM-{family}{suffix}"),
            sensitive,
            interaction,
            controls: Controls::default(),
            reference: ReferenceLevels::default(),
        }
    }

    /// The same specification without its interaction block.
    pub fn main_effects(&self) -> Self {
        Self {
            name: self.name.trim_end_matches(['a', 'b', 'c', 'd']).to_string(),
            interaction: None,
            ..self.clone()
        }
    }

    pub fn with_controls(mut self, controls: Controls) -> Self {
        self.controls = controls;
        self
    }

    pub fn with_reference(mut self, reference: ReferenceLevels) -> Self {
        self.reference = reference;
        self
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let rest = s
            .trim()
            .strip_prefix("GLM-")
            .ok_or_else(|| Error::InvalidInput(format!("unknown model `{s}`")))?;
        let mut chars = rest.chars();
        let sensitive = match chars.next() {
            Some('1') => SensitiveBlock::Race,
            Some('2') => SensitiveBlock::Urbanicity,
            _ => return Err(Error::InvalidInput(format!("unknown model `{s}`"))),
        };
        let interaction = match chars.as_str() {
            "" => None,
            "a" => Some(Characteristic::Lookahead),
            "b" => Some(Characteristic::Phase),
            "c" => Some(Characteristic::ModelType),
            "d" => Some(Characteristic::Mobility),
            _ => return Err(Error::InvalidInput(format!("unknown model `{s}`"))),
        };
        Ok(Self::new(sensitive, interaction))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermKind {
    Intercept,
    Sensitive,
    Characteristic,
    Interaction,
    Control,
    StateEffect,
}

/// A named group of columns (a factor contributes one term for all its
/// dummies).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub kind: TermKind,
    pub columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub spec: ModelSpec,
    pub column_labels: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub terms: Vec<Term>,
    /// Observed levels per characteristic, reference first.
    pub levels: BTreeMap<Characteristic, Vec<Level>>,
    /// Labels of the sensitive columns, in order.
    pub sensitive_labels: Vec<String>,
}

type ColumnFn = Box<dyn Fn(&PblObservation) -> f64>;

struct Builder {
    labels: Vec<String>,
    funcs: Vec<ColumnFn>,
    terms: Vec<Term>,
}

impl Builder {
    fn push_term(&mut self, name: String, kind: TermKind, cols: Vec<(String, ColumnFn)>) {
        if cols.is_empty() {
            return;
        }
        let start = self.labels.len();
        let columns = (start..start + cols.len()).collect();
        for (label, f) in cols {
            self.labels.push(label);
            self.funcs.push(f);
        }
        self.terms.push(Term { name, kind, columns });
    }
}

fn race_share(label: &str) -> fn(&PblObservation) -> f64 {
    match label {
        "pct_black" => |o| o.covariates.pct_black,
        "pct_hispanic" => |o| o.covariates.pct_hispanic,
        _ => |o| o.covariates.pct_asian,
    }
}

fn sorted_levels(
    observations: &[PblObservation],
    c: Characteristic,
    reference: Level,
) -> Result<Vec<Level>> {
    let mut seen: Vec<Level> = Vec::new();
    for o in observations {
        let l = c.level_of(o);
        if !seen.contains(&l) {
            seen.push(l);
        }
    }
    seen.sort_by_key(|l| l.sort_key());
    if seen.len() > 1 && !seen.contains(&reference) {
        return Err(Error::MissingReferenceLevel {
            factor: c.as_str().into(),
            level: reference.label(),
        });
    }
    // a single observed level is absorbed by the intercept
    if seen.len() == 1 {
        return Ok(seen);
    }
    seen.retain(|l| *l != reference);
    seen.insert(0, reference);
    Ok(seen)
}

/// Builds the numeric design for `spec` over `observations`; the response
/// is `sqrt_pbl`.
pub fn build_design(spec: &ModelSpec, observations: &[PblObservation]) -> Result<DesignMatrix> {
    if observations.is_empty() {
        return Err(Error::InvalidInput("no observations to build a design from".into()));
    }
    let mut b = Builder {
        labels: Vec::new(),
        funcs: Vec::new(),
        terms: Vec::new(),
    };
    b.push_term(
        INTERCEPT.into(),
        TermKind::Intercept,
        vec![(INTERCEPT.into(), Box::new(|_| 1.0))],
    );

    // sensitive block
    let mut sensitive: Vec<(String, std::rc::Rc<dyn Fn(&PblObservation) -> f64>)> = Vec::new();
    match spec.sensitive {
        SensitiveBlock::Race => {
            for label in RACE_TERMS {
                let f = race_share(label);
                sensitive.push((label.to_string(), std::rc::Rc::new(f)));
                b.push_term(label.into(), TermKind::Sensitive, vec![(label.into(), Box::new(f))]);
            }
        }
        SensitiveBlock::Urbanicity => {
            let reference = spec.reference.urbanicity;
            let present: BTreeSet<UrbanicityGroup> =
                observations.iter().map(|o| o.covariates.urbanicity()).collect();
            if present.len() > 1 && !present.contains(&reference) {
                return Err(Error::MissingReferenceLevel {
                    factor: "urbanicity".into(),
                    level: reference.to_string(),
                });
            }
            let mut cols: Vec<(String, ColumnFn)> = Vec::new();
            for g in UrbanicityGroup::ALL {
                if g == reference || !present.contains(&g) || present.len() == 1 {
                    continue;
                }
                let f = move |o: &PblObservation| f64::from(u8::from(o.covariates.urbanicity() == g));
                sensitive.push((g.to_string(), std::rc::Rc::new(f)));
                cols.push((g.to_string(), Box::new(f)));
            }
            b.push_term("urbanicity".into(), TermKind::Sensitive, cols);
        }
    }

    // characteristics
    let mut levels = BTreeMap::new();
    for c in Characteristic::ALL {
        let lv = sorted_levels(observations, c, spec.reference.level(c))?;
        let cols: Vec<(String, ColumnFn)> = lv
            .iter()
            .skip(1)
            .map(|&l| {
                let f: ColumnFn = Box::new(move |o: &PblObservation| f64::from(u8::from(c.level_of(o) == l)));
                (l.label(), f)
            })
            .collect();
        b.push_term(c.as_str().into(), TermKind::Characteristic, cols);
        levels.insert(c, lv);
    }

    // interactions
    if let Some(c) = spec.interaction {
        let lv = &levels[&c];
        let mut urb_cols: Vec<(String, ColumnFn)> = Vec::new();
        for (s_label, s_fn) in &sensitive {
            let mut cols: Vec<(String, ColumnFn)> = Vec::new();
            for &l in lv.iter().skip(1) {
                let s_fn = std::rc::Rc::clone(s_fn);
                let f: ColumnFn = Box::new(move |o: &PblObservation| {
                    if c.level_of(o) == l {
                        s_fn(o)
                    } else {
                        0.0
                    }
                });
                cols.push((format!("{s_label}:{}", l.label()), f));
            }
            match spec.sensitive {
                SensitiveBlock::Race => b.push_term(format!("{s_label}:{c}"), TermKind::Interaction, cols),
                SensitiveBlock::Urbanicity => urb_cols.extend(cols),
            }
        }
        if spec.sensitive == SensitiveBlock::Urbanicity {
            b.push_term(format!("urbanicity:{c}"), TermKind::Interaction, urb_cols);
        }
    }

    // controls
    for h in HealthOutcome::ALL {
        if spec.controls.health.contains(&h) {
            let f: ColumnFn = Box::new(move |o: &PblObservation| o.covariates.health_outcome(h));
            b.push_term(h.as_str().into(), TermKind::Control, vec![(h.as_str().into(), f)]);
        }
    }
    if spec.controls.age65 {
        b.push_term(
            "pct_age65".into(),
            TermKind::Control,
            vec![("pct_age65".into(), Box::new(|o: &PblObservation| o.covariates.pct_age65))],
        );
    }
    if spec.controls.state_effects {
        let states: BTreeSet<String> = observations.iter().map(|o| o.covariates.state.clone()).collect();
        let cols: Vec<(String, ColumnFn)> = states
            .into_iter()
            .skip(1)
            .map(|s| {
                let label = format!("state{s}");
                let f: ColumnFn = Box::new(move |o: &PblObservation| f64::from(u8::from(o.covariates.state == s)));
                (label, f)
            })
            .collect();
        b.push_term("state".into(), TermKind::StateEffect, cols);
    }

    let n = observations.len();
    let p = b.labels.len();
    let x = DMatrix::from_fn(n, p, |i, j| (b.funcs[j])(&observations[i]));
    for j in 1..p {
        let col = x.column(j);
        if col.iter().all(|&v| v == col[0]) {
            return Err(Error::ConstantColumn(b.labels[j].clone()));
        }
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = b.labels.iter().find(|l| !seen.insert(l.as_str())) {
        return Err(Error::InvalidInput(format!("duplicate column label `{dup}`")));
    }
    let y = DVector::from_iterator(n, observations.iter().map(|o| o.sqrt_pbl));
    Ok(DesignMatrix {
        spec: spec.clone(),
        column_labels: b.labels,
        x,
        y,
        terms: b.terms,
        levels,
        sensitive_labels: sensitive.into_iter().map(|s| s.0).collect(),
    })
}

impl DesignMatrix {
    /// A design over hand-built columns. Each column must belong to exactly
    /// one term.
    pub fn from_columns(x: DMatrix<f64>, y: DVector<f64>, labels: Vec<String>, terms: Vec<Term>) -> Result<Self> {
        if labels.len() != x.ncols() || y.len() != x.nrows() {
            return Err(Error::InvalidInput(format!(
                "{} x {} matrix with {} labels and {} responses",
                x.nrows(),
                x.ncols(),
                labels.len(),
                y.len()
            )));
        }
        let mut owner = vec![0usize; x.ncols()];
        for t in &terms {
            for &j in &t.columns {
                if j >= x.ncols() {
                    return Err(Error::InvalidInput(format!("term `{}` refers to column {j}", t.name)));
                }
                owner[j] += 1;
            }
        }
        if let Some(j) = owner.iter().position(|&k| k != 1) {
            return Err(Error::InvalidInput(format!("column `{}` must belong to exactly one term", labels[j])));
        }
        let sensitive_labels = terms
            .iter()
            .filter(|t| t.kind == TermKind::Sensitive)
            .flat_map(|t| t.columns.iter().map(|&j| labels[j].clone()))
            .collect();
        Ok(Self {
            spec: ModelSpec::new(SensitiveBlock::Race, None),
            column_labels: labels,
            x,
            y,
            terms,
            levels: BTreeMap::new(),
            sensitive_labels,
        })
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.column_labels.iter().position(|l| l == label)
    }

    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.name == name)
    }

    /// Returns a copy without the named terms; column indices are remapped.
    pub fn drop_terms(&self, names: &[&str]) -> Result<DesignMatrix> {
        for name in names {
            match self.term(name) {
                None => return Err(Error::UnknownTerm(name.to_string())),
                Some(t) if t.kind == TermKind::Intercept => {
                    return Err(Error::InvalidInput("the intercept cannot be dropped".into()))
                }
                Some(_) => {}
            }
        }
        let dropped: BTreeSet<usize> = self
            .terms
            .iter()
            .filter(|t| names.contains(&t.name.as_str()))
            .flat_map(|t| t.columns.iter().copied())
            .collect();
        let keep: Vec<usize> = (0..self.ncols()).filter(|j| !dropped.contains(j)).collect();
        let remap: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let x = self.x.select_columns(&keep);
        let terms = self
            .terms
            .iter()
            .filter(|t| !names.contains(&t.name.as_str()))
            .map(|t| Term {
                name: t.name.clone(),
                kind: t.kind,
                columns: t.columns.iter().map(|c| remap[c]).collect(),
            })
            .collect();
        let mut spec = self.spec.clone();
        for name in names {
            if let Ok(h) = name.parse::<HealthOutcome>() {
                spec.controls.health.remove(&h);
            }
            if *name == "pct_age65" {
                spec.controls.age65 = false;
            }
            if *name == "state" {
                spec.controls.state_effects = false;
            }
        }
        Ok(DesignMatrix {
            spec,
            column_labels: keep.iter().map(|&j| self.column_labels[j].clone()).collect(),
            x,
            y: self.y.clone(),
            terms,
            levels: self.levels.clone(),
            sensitive_labels: self.sensitive_labels.clone(),
        })
    }

    /// Writes the labelled matrix plus the response as CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.column_labels.clone();
        header.push("sqrt_pbl".into());
        w.write_record(&header)?;
        for i in 0..self.nrows() {
            let mut row: Vec<String> = (0..self.ncols()).map(|j| format!("{}", self.x[(i, j)])).collect();
            row.push(format!("{}", self.y[i]));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("design output", e))?;
        Ok(())
    }
}

/// Contrast vector selecting `beta_sensitive + delta_sensitive:level`; for the
/// reference level of the characteristic it selects the main effect alone.
pub fn hypothesis_vector(design: &DesignMatrix, sensitive: &str, level: &Level) -> Result<DVector<f64>> {
    let main = design
        .column_index(sensitive)
        .filter(|_| design.sensitive_labels.iter().any(|s| s == sensitive))
        .ok_or_else(|| Error::UnknownTerm(sensitive.to_string()))?;
    let mut c = DVector::zeros(design.ncols());
    c[main] = 1.0;
    if *level == design.spec.reference.level(level.characteristic()) {
        return Ok(c);
    }
    let label = format!("{sensitive}:{}", level.label());
    let j = design.column_index(&label).ok_or(Error::UnknownTerm(label))?;
    c[j] = 1.0;
    Ok(c)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ingest::{CountyCovariates, TeamMetadata};
    use chrono::{Duration, NaiveDate};
    use std::sync::Arc;

    pub(crate) fn toy_observations() -> Vec<PblObservation> {
        let team = |id: &str, model_type, mobility| {
            Arc::new(TeamMetadata {
                team_id: id.into(),
                model_type,
                mobility,
            })
        };
        let teams = [
            team("A", ModelType::Compartmental, Mobility::No),
            team("B", ModelType::Statistical, Mobility::No),
            team("C", ModelType::Baseline, Mobility::Yes),
            team("D", ModelType::Compartmental, Mobility::Yes),
        ];
        // deterministic pseudo-random covariates
        let mut state = 0x2545_f491_4f6c_dd1du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut out = Vec::new();
        for c in 0..30u32 {
            let cov = Arc::new(CountyCovariates {
                fips: format!("{:05}", 1000 + c),
                population: 1000 + c as u64 * 37,
                pct_white: 60.0,
                pct_black: 10.0 * next(),
                pct_hispanic: 12.0 * next(),
                pct_asian: 3.0 * next(),
                pct_age65: 15.0 + 5.0 * next(),
                health: std::array::from_fn(|_| 10.0 + 20.0 * next()),
                state: ["AL", "GA", "TX"][c as usize % 3].into(),
                urbanization_code: (c % 6 + 1) as u8,
            });
            for team in &teams {
                for w in 0..4u32 {
                    for look in [7u32, 14, 21, 28] {
                        out.push(PblObservation {
                            team_id: team.team_id.clone(),
                            fips: cov.fips.clone(),
                            week_end: NaiveDate::from_ymd_opt(2020, 9, 5).unwrap() + Duration::days(7 * w as i64),
                            lookahead_days: look,
                            phase: (w % 3) as u8,
                            pbl_norm: 0.0,
                            sqrt_pbl: 0.1 + 0.05 * next(),
                            covariates: Arc::clone(&cov),
                            metadata: Arc::clone(team),
                        });
                    }
                }
            }
        }
        out
    }

    #[test]
    fn treatment_coding_and_order() {
        let obs = toy_observations();
        let spec: ModelSpec = "GLM-1".parse().unwrap();
        let d = build_design(&spec, &obs).unwrap();
        assert_eq!(d.column_labels[0], INTERCEPT);
        assert_eq!(&d.column_labels[1..4], &["pct_black", "pct_hispanic", "pct_asian"]);
        // 4 lookahead levels -> 3 dummies
        assert_eq!(d.term("lookahead").unwrap().columns.len(), 3);
        assert_eq!(&d.column_labels[4..7], &["lookahead14", "lookahead21", "lookahead28"]);
        assert_eq!(d.term("phase").unwrap().columns.len(), 2);
        let mt: Vec<&str> = d.term("model_type").unwrap().columns.iter().map(|&j| d.column_labels[j].as_str()).collect();
        assert_eq!(mt, ["model_typeBaseline", "model_typeStatistical"]);
        assert_eq!(d.term("mobility").unwrap().columns.len(), 1);
        assert_eq!(d.term("state").unwrap().columns.len(), 2);
        assert_eq!(d.column_labels.last().unwrap(), "stateTX");
        // p = 1 + 3 + (3 + 2 + 2 + 1) + 0 + 10 + 2
        assert_eq!(d.ncols(), 1 + 3 + 8 + 10 + 2);
    }

    #[test]
    fn race_by_lookahead_interactions() {
        let obs = toy_observations();
        let d = build_design(&"GLM-1a".parse().unwrap(), &obs).unwrap();
        let inter: Vec<&String> = d.column_labels.iter().filter(|l| l.contains(':')).collect();
        assert_eq!(inter.len(), 9);
        assert!(d.column_index("pct_hispanic:lookahead14").is_some());
        let c = hypothesis_vector(&d, "pct_hispanic", &Level::Lookahead(14)).unwrap();
        let ones: Vec<&str> = (0..d.ncols()).filter(|&j| c[j] == 1.0).map(|j| d.column_labels[j].as_str()).collect();
        assert_eq!(ones, ["pct_hispanic", "pct_hispanic:lookahead14"]);
        assert_eq!(c.sum(), 2.0);
        let c = hypothesis_vector(&d, "pct_hispanic", &Level::Lookahead(7)).unwrap();
        assert_eq!(c.sum(), 1.0);
        assert_eq!(c[d.column_index("pct_hispanic").unwrap()], 1.0);
        assert!(hypothesis_vector(&d, "pct_white", &Level::Lookahead(14)).is_err());
        assert!(hypothesis_vector(&d, "pct_asian", &Level::Phase(1)).is_err());
    }

    #[test]
    fn urbanicity_block() {
        let obs = toy_observations();
        let d = build_design(&"GLM-2".parse().unwrap(), &obs).unwrap();
        assert_eq!(d.sensitive_labels, ["SMM", "MC"]);
        assert_eq!(&d.column_labels[1..3], &["SMM", "MC"]);
        assert_eq!(d.term("urbanicity").unwrap().columns, vec![1, 2]);
        let d = build_design(&"GLM-2b".parse().unwrap(), &obs).unwrap();
        assert_eq!(d.term("urbanicity:phase").unwrap().columns.len(), 4);
        assert!(d.column_index("MC:phase2").is_some());
    }

    #[test]
    fn constant_and_reference_errors() {
        let mut obs = toy_observations();
        let cov = Arc::new(CountyCovariates {
            pct_age65: 15.0,
            ..(*obs[0].covariates).clone()
        });
        for o in &mut obs {
            let mut c = (*o.covariates).clone();
            c.pct_age65 = cov.pct_age65;
            o.covariates = Arc::new(c);
        }
        match build_design(&"GLM-1".parse().unwrap(), &obs) {
            Err(Error::ConstantColumn(label)) => assert_eq!(label, "pct_age65"),
            other => panic!("unexpected {other:?}"),
        }
        let obs: Vec<_> = toy_observations().into_iter().filter(|o| o.lookahead_days != 7).collect();
        assert!(matches!(
            build_design(&"GLM-1".parse().unwrap(), &obs),
            Err(Error::MissingReferenceLevel { .. })
        ));
    }

    #[test]
    fn model_names_parse() {
        for name in MODEL_NAMES {
            let spec: ModelSpec = name.parse().unwrap();
            assert_eq!(spec.name, name);
            assert_eq!(spec.main_effects().interaction, None);
        }
        assert!("GLM-3".parse::<ModelSpec>().is_err());
        assert!("GLM-1e".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn drop_terms_remaps() {
        let obs = toy_observations();
        let d = build_design(&"GLM-1".parse().unwrap(), &obs).unwrap();
        let r = d.drop_terms(&["OBESITY", "state"]).unwrap();
        assert_eq!(r.ncols(), d.ncols() - 3);
        assert!(r.column_index("OBESITY").is_none());
        assert!(!r.spec.controls.health.contains(&HealthOutcome::OBESITY));
        for t in &r.terms {
            for &j in &t.columns {
                assert_eq!(r.x.column(j), d.x.column(d.column_index(&r.column_labels[j]).unwrap()));
            }
        }
        assert!(d.drop_terms(&["nope"]).is_err());
    }
}
