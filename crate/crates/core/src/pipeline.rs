//! End-to-end composition: ingest, score, screen, fit.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::design::{build_design, DesignMatrix, ModelSpec};
use crate::diagnostics::{default_protected, fit_diagnostics, screen_collinearity, FitDiagnostics, GvifRow, Removal};
use crate::error::Result;
use crate::fairness::{relative_effects, RelativeEffect};
use crate::glm::{fit_glm, FitResult, GlmOptions};
use crate::ingest::{
    group_forecasts, join_panel, parse_covariates, parse_forecasts, parse_metadata, parse_truth, CountyCovariates, CovariateReport, CrossingPolicy, ForecastReport,
    GroundTruth, GroupReport, JoinReport, QuantileForecast, TeamMetadata, TruthReport,
};
use crate::metrics::{score_panel, ScoredPanel};
use crate::phases::{detect_phases, PhaseConfig};
use crate::synth::SynthData;

/// Counts from every ingest stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub forecasts: BTreeMap<String, ForecastReport>,
    pub groups: GroupReport,
    pub truth: TruthReport,
    pub covariates: CovariateReport,
    pub join: JoinReport,
}

pub struct ScoreInputs<'a> {
    pub quantiles: &'a [f64],
    pub crossing: CrossingPolicy,
    pub phases: &'a PhaseConfig,
    pub scale_factor: f64,
    pub trim_frac: f64,
}

/// Parses each team's forecasts, joins them to truth, covariates, metadata
/// and phases, then scores and trims.
pub fn score_sources<R: Read>(
    forecasts: Vec<(String, R)>,
    truth: &[GroundTruth],
    covariates: &BTreeMap<String, CountyCovariates>,
    metadata: &BTreeMap<String, TeamMetadata>,
    inputs: &ScoreInputs<'_>,
    report: &mut IngestReport,
) -> Result<ScoredPanel> {
    let mut records = Vec::new();
    for (team, reader) in forecasts {
        let parsed = parse_forecasts(reader, &team, inputs.quantiles)?;
        report.forecasts.entry(team).or_default().merge(parsed.report);
        records.extend(parsed.records);
    }
    score_records(&records, truth, covariates, metadata, inputs, report)
}

/// Groups, joins, scores and trims already-parsed forecast records.
pub fn score_records(
    records: &[QuantileForecast],
    truth: &[GroundTruth],
    covariates: &BTreeMap<String, CountyCovariates>,
    metadata: &BTreeMap<String, TeamMetadata>,
    inputs: &ScoreInputs<'_>,
    report: &mut IngestReport,
) -> Result<ScoredPanel> {
    let (groups, group_report) = group_forecasts(records, inputs.crossing);
    report.groups = group_report;
    let joined = join_panel(&groups, truth, covariates, metadata, inputs.phases);
    report.join = joined.report.clone();
    score_panel(&joined, inputs.scale_factor, inputs.trim_frac)
}

/// Scores a synthetic corpus in memory, going through the same CSV parsers
/// as files on disk.
pub fn score_synth(data: &SynthData, inputs: &ScoreInputs<'_>) -> Result<(ScoredPanel, IngestReport)> {
    let truth = parse_truth(Cursor::new(data.truth_csv()?))?;
    let covariates = parse_covariates(
        Cursor::new(data.demographics_csv()?),
        Cursor::new(data.urbanization_csv()?),
        Cursor::new(data.health_csv()?),
    )?;
    let metadata = parse_metadata(Cursor::new(data.metadata_csv()?))?;
    let mut report = IngestReport {
        truth: truth.report,
        covariates: covariates.report,
        ..Default::default()
    };
    let sources = data
        .forecasts
        .keys()
        .map(|team| Ok((team.clone(), Cursor::new(data.forecast_csv(team)?))))
        .collect::<Result<Vec<_>>>()?;
    let panel = score_sources(sources, &truth.records, &covariates.counties, &metadata, inputs, &mut report)?;
    Ok((panel, report))
}

/// Phase table detected from the national weekly total of `truth`.
pub fn detect_from_truth(truth: &[GroundTruth], n_phases: usize) -> Result<PhaseConfig> {
    let mut national: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    for t in truth {
        *national.entry(t.week_end).or_default() += t.incident_cases as f64;
    }
    let series: Vec<(NaiveDate, f64)> = national.into_iter().collect();
    detect_phases(&series, n_phases)
}

/// One fitted specification with its screening record.
#[derive(Debug, Clone)]
pub struct SpecFit {
    pub spec: ModelSpec,
    pub removed: Vec<Removal>,
    pub gvif: Vec<GvifRow>,
    pub design: DesignMatrix,
    pub fit: FitResult,
    pub relative_effects: Option<Vec<RelativeEffect>>,
    pub diagnostics: FitDiagnostics,
}

/// Screens controls on the main-effects design, refits the requested
/// specification with the surviving controls and derives relative effects
/// for interaction models.
pub fn fit_spec(
    spec: &ModelSpec,
    observations: &[crate::metrics::PblObservation],
    gvif_threshold: f64,
    opts: &GlmOptions,
) -> Result<SpecFit> {
    let main = build_design(&spec.main_effects(), observations)?;
    let protected = default_protected(&main);
    let screening = screen_collinearity(&main, gvif_threshold, &protected)?;
    let gvif = screening.table(&main);
    let design = match spec.interaction {
        None => screening.design,
        Some(_) => build_design(&spec.clone().with_controls(screening.design.spec.controls.clone()), observations)?,
    };
    let fit = fit_glm(&design, opts)?;
    let relative_effects = spec
        .interaction
        .map(|c| relative_effects(&fit, &design, c))
        .transpose()?;
    let diagnostics = fit_diagnostics(&fit, &design)?;
    Ok(SpecFit {
        spec: spec.clone(),
        removed: screening.removed,
        gvif,
        design,
        fit,
        relative_effects,
        diagnostics,
    })
}
