//! Command-line surface: `score`, `fit`, `bundle`, `synth`, `serve-export`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{Characteristic, ModelSpec, MODEL_NAMES};
use crate::diagnostics::{write_gvif, Removal, ResidualSummary, GVIF_THRESHOLD};
use crate::error::{Error, Result};
use crate::fairness::{
    build_bundle, validate_bundle, write_bundle, write_relative_effects, BundleInputs, GroupVariable,
    RelativeEffect, RelativeEffectTable,
};
use crate::glm::{write_coefficients, FitSummary, GlmOptions, Link};
use crate::ingest::{
    open, parse_covariates_paths, parse_forecasts, parse_metadata_path, parse_truth_path, CrossingPolicy, HealthOutcome,
    HUB_QUANTILES,
};
use crate::metrics::{read_panel, write_panel, TrimReport};
use crate::phases::PhaseConfig;
use crate::pipeline::{detect_from_truth, fit_spec, score_records, IngestReport, ScoreInputs};
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastInput {
    pub team: String,
    /// A CSV file, or a directory whose `*.csv` files are all read.
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub forecasts: Vec<ForecastInput>,
    pub truth: PathBuf,
    pub demographics: PathBuf,
    pub urbanization: PathBuf,
    pub health: PathBuf,
    pub metadata: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub quantiles: Vec<f64>,
    pub trim_frac: f64,
    pub scale_factor: f64,
    pub crossing: CrossingPolicy,
    /// `"default"`, `"detect"`, or a path to a `phase,start,end` table.
    pub phases: String,
    /// Number of phases when detecting.
    pub n_phases: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            quantiles: HUB_QUANTILES.to_vec(),
            trim_frac: 0.01,
            scale_factor: 1.0,
            crossing: CrossingPolicy::Repair,
            phases: "default".into(),
            n_phases: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub specs: Vec<String>,
    pub link: Link,
    pub gvif_threshold: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub health_controls: Vec<HealthOutcome>,
    pub age65: bool,
    pub state_effects: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            specs: vec!["GLM-1".into(), "GLM-2".into()],
            link: Link::Log,
            gvif_threshold: GVIF_THRESHOLD,
            tol: 1e-8,
            max_iter: 100,
            health_controls: HealthOutcome::ALL.to_vec(),
            age65: true,
            state_effects: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BundleConfig {
    pub group: GroupVariable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: Inputs,
    pub scoring: ScoringConfig,
    pub model: ModelConfig,
    pub bundle: BundleConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            inputs: Inputs::default(),
            scoring: ScoringConfig::default(),
            model: ModelConfig::default(),
            bundle: BundleConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            threads: None,
            base_dir: PathBuf::from("."),
        }
    }
}

/// The part of the configuration that determines results.
#[derive(Serialize)]
struct HashedConfig<'a> {
    inputs: &'a Inputs,
    scoring: &'a ScoringConfig,
    model: &'a ModelConfig,
    bundle: &'a BundleConfig,
    seed: u64,
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.display().to_string()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// SHA-256 of the canonical JSON of the result-determining settings.
    pub fn config_hash(&self) -> Result<String> {
        let canonical = serde_json::to_vec(&HashedConfig {
            inputs: &self.inputs,
            scoring: &self.scoring,
            model: &self.model,
            bundle: &self.bundle,
            seed: self.seed,
        })?;
        Ok(hex::encode(Sha256::digest(&canonical)))
    }

    pub fn specs(&self) -> Result<Vec<ModelSpec>> {
        if self.model.specs.is_empty() {
            return Err(Error::Config("model.specs is empty".into()));
        }
        self.model
            .specs
            .iter()
            .map(|s| {
                let spec: ModelSpec = s
                    .parse()
                    .map_err(|_| Error::Config(format!("unknown spec `{s}`; expected one of {}", MODEL_NAMES.join(", "))))?;
                let mut controls = spec.controls.clone();
                controls.health = self.model.health_controls.iter().copied().collect();
                controls.age65 = self.model.age65;
                controls.state_effects = self.model.state_effects;
                Ok(spec.with_controls(controls))
            })
            .collect()
    }

    pub fn glm_options(&self) -> GlmOptions {
        GlmOptions {
            link: self.model.link,
            tol: self.model.tol,
            max_iter: self.model.max_iter,
        }
    }

    /// Checks that every referenced input exists and settings are in range.
    pub fn validate(&self) -> Result<()> {
        let i = &self.inputs;
        if i.forecasts.is_empty() {
            return Err(Error::Config("inputs.forecasts is empty".into()));
        }
        let mut paths: Vec<PathBuf> = vec![
            i.truth.clone(),
            i.demographics.clone(),
            i.urbanization.clone(),
            i.health.clone(),
            i.metadata.clone(),
        ];
        paths.extend(i.forecasts.iter().map(|f| f.path.clone()));
        if !matches!(self.scoring.phases.as_str(), "default" | "detect") {
            paths.push(PathBuf::from(&self.scoring.phases));
        }
        for p in &paths {
            let full = self.resolve(p);
            if p.as_os_str().is_empty() || !full.exists() {
                return Err(Error::MissingPath(full.display().to_string()));
            }
        }
        if !(0.0..0.5).contains(&self.scoring.trim_frac) {
            return Err(Error::Config(format!("trim_frac {} outside [0, 0.5)", self.scoring.trim_frac)));
        }
        if !(self.scoring.scale_factor > 0.0) {
            return Err(Error::Config("scale_factor must be positive".into()));
        }
        if !(self.model.gvif_threshold > 1.0) {
            return Err(Error::Config("gvif_threshold must exceed 1".into()));
        }
        self.specs()?;
        Ok(())
    }

    fn phase_config(&self, truth: &[crate::ingest::GroundTruth]) -> Result<PhaseConfig> {
        match self.scoring.phases.as_str() {
            "default" => Ok(PhaseConfig::default()),
            "detect" => detect_from_truth(truth, self.scoring.n_phases),
            path => PhaseConfig::read_path(&self.resolve(Path::new(path))),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hubfair", version, about = "Fairness audit of probabilistic epidemic forecasts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Trimming fraction; overrides `scoring.trim_frac`.
    #[arg(long, global = true, value_name = "F")]
    pub trim: Option<f64>,
    /// Comma-separated model list, e.g. GLM-1,GLM-2b.
    #[arg(long, global = true, value_name = "LIST", value_delimiter = ',')]
    pub specs: Option<Vec<String>>,
    /// Protected-attribute grouping for AER cells.
    #[arg(long, global = true, value_parser = ["race", "urbanicity"])]
    pub group: Option<String>,
    /// Seed recorded in the run (and used by `synth`); overrides `seed`
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score forecasts into the trimmed PBL panel.
    Score,
    /// Screen, fit and tabulate each requested model.
    Fit,
    /// Build the audit bundle for the dashboard.
    Bundle,
    /// Write a synthetic corpus plus a ready-to-run configuration.
    Synth,
    /// Validate the bundle and place it beside the dashboard assets.
    ServeExport {
        /// Asset directory; defaults to `<out>/dashboard`.
        #[arg(long, value_name = "DIR")]
        assets: Option<PathBuf>,
    },
}

fn apply_overrides(mut cfg: RunConfig, g: &GlobalArgs) -> Result<RunConfig> {
    if let Some(out) = &g.out {
        cfg.output_dir = std::path::absolute(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    }
    if let Some(t) = g.threads {
        cfg.threads = Some(t);
    }
    if let Some(t) = g.trim {
        cfg.scoring.trim_frac = t;
    }
    if let Some(s) = &g.specs {
        cfg.model.specs = s.clone();
    }
    if let Some(group) = &g.group {
        cfg.bundle.group = group.parse()?;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_config(g: &GlobalArgs) -> Result<RunConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    apply_overrides(RunConfig::load(path)?, g)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p.display().to_string(), e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn forecast_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreOutcome {
    pub panel_rows: usize,
    pub trim: TrimReport,
    pub ingest: IngestReport,
}

/// Ingest, join, score and trim; writes `panel.csv`, `trim_report.json`,
/// `ingest_report.json` and `phases.csv`.
pub fn cmd_score(cfg: &RunConfig) -> Result<ScoreOutcome> {
    cfg.validate()?;
    let out = cfg.out_dir();
    create_dir(&out)?;
    let truth = parse_truth_path(&cfg.resolve(&cfg.inputs.truth))?;
    let covariates = parse_covariates_paths(
        &cfg.resolve(&cfg.inputs.demographics),
        &cfg.resolve(&cfg.inputs.urbanization),
        &cfg.resolve(&cfg.inputs.health),
    )?;
    let metadata = parse_metadata_path(&cfg.resolve(&cfg.inputs.metadata))?;
    let phases = cfg.phase_config(&truth.records)?;

    let mut report = IngestReport {
        truth: truth.report.clone(),
        covariates: covariates.report.clone(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for f in &cfg.inputs.forecasts {
        for file in forecast_files(&cfg.resolve(&f.path))? {
            let parsed = parse_forecasts(open(&file)?, &f.team, &cfg.scoring.quantiles)?;
            report.forecasts.entry(f.team.clone()).or_default().merge(parsed.report);
            records.extend(parsed.records);
        }
    }
    let inputs = ScoreInputs {
        quantiles: &cfg.scoring.quantiles,
        crossing: cfg.scoring.crossing,
        phases: &phases,
        scale_factor: cfg.scoring.scale_factor,
        trim_frac: cfg.scoring.trim_frac,
    };
    let panel = score_records(&records, &truth.records, &covariates.counties, &metadata, &inputs, &mut report)?;

    let mut buf = Vec::new();
    write_panel(&panel.observations, &mut buf)?;
    write_file(&out.join("panel.csv"), &buf)?;
    write_json(&out.join("trim_report.json"), &panel.trim)?;
    write_json(&out.join("ingest_report.json"), &report)?;
    let mut buf = Vec::new();
    phases.write(&mut buf)?;
    write_file(&out.join("phases.csv"), &buf)?;
    Ok(ScoreOutcome {
        panel_rows: panel.observations.len(),
        trim: panel.trim,
        ingest: report,
    })
}

fn load_panel(cfg: &RunConfig) -> Result<Vec<crate::metrics::PblObservation>> {
    let covariates = parse_covariates_paths(
        &cfg.resolve(&cfg.inputs.demographics),
        &cfg.resolve(&cfg.inputs.urbanization),
        &cfg.resolve(&cfg.inputs.health),
    )?;
    let metadata = parse_metadata_path(&cfg.resolve(&cfg.inputs.metadata))?;
    let path = cfg.out_dir().join("panel.csv");
    read_panel(open(&path)?, &covariates.counties, &metadata)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub residuals: ResidualSummary,
    pub max_cooks: f64,
    pub argmax_cooks: usize,
    pub max_leverage: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecReport {
    pub spec: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<FitSummary>,
    pub removed: Vec<Removal>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub characteristic: Option<Characteristic>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_effects: Option<Vec<RelativeEffect>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOutcome {
    pub config_hash: String,
    pub specs: Vec<SpecReport>,
}

impl FitOutcome {
    pub fn failures(&self) -> Vec<&SpecReport> {
        self.specs.iter().filter(|s| s.status != "ok").collect()
    }
}

/// Fits every requested specification. A failing specification is
/// recorded and the others still run; `fit_summary.json` lists all of them.
pub fn cmd_fit(cfg: &RunConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let specs = cfg.specs()?;
    let observations = load_panel(cfg)?;
    let out = cfg.out_dir();
    let opts = cfg.glm_options();
    let results: Vec<(ModelSpec, Result<crate::pipeline::SpecFit>)> = specs
        .par_iter()
        .map(|spec| (spec.clone(), fit_spec(spec, &observations, cfg.model.gvif_threshold, &opts)))
        .collect();
    let mut reports = Vec::new();
    for (spec, result) in results {
        match result {
            Ok(sf) => {
                let mut buf = Vec::new();
                write_coefficients(&sf.fit.coefficient_table(), &mut buf)?;
                write_file(&out.join("coefficients").join(format!("{}.csv", spec.name)), &buf)?;
                let mut buf = Vec::new();
                write_gvif(&sf.gvif, &mut buf)?;
                write_file(&out.join("gvif").join(format!("{}.csv", spec.name)), &buf)?;
                if let Some(rows) = &sf.relative_effects {
                    let mut buf = Vec::new();
                    write_relative_effects(rows, &mut buf)?;
                    write_file(&out.join("relative_effects").join(format!("{}.csv", spec.name)), &buf)?;
                }
                reports.push(SpecReport {
                    spec: spec.name.clone(),
                    status: "ok".into(),
                    error: None,
                    summary: Some(sf.fit.summary()),
                    removed: sf.removed,
                    diagnostics: Some(DiagnosticsSummary {
                        residuals: sf.diagnostics.residuals.clone(),
                        max_cooks: sf.diagnostics.max_cooks,
                        argmax_cooks: sf.diagnostics.argmax_cooks,
                        max_leverage: sf.diagnostics.leverage.max(),
                    }),
                    characteristic: spec.interaction,
                    relative_effects: sf.relative_effects,
                });
            }
            Err(e) => reports.push(SpecReport {
                spec: spec.name.clone(),
                status: "failed".into(),
                error: Some(e.to_string()),
                summary: None,
                removed: vec![],
                diagnostics: None,
                characteristic: spec.interaction,
                relative_effects: None,
            }),
        }
    }
    let outcome = FitOutcome {
        config_hash: cfg.config_hash()?,
        specs: reports,
    };
    write_json(&out.join("fit_summary.json"), &outcome)?;
    Ok(outcome)
}

/// Builds `bundle.json` from the panel and any relative effects in
/// `fit_summary.json`.
pub fn cmd_bundle(cfg: &RunConfig) -> Result<crate::fairness::AuditBundle> {
    cfg.validate()?;
    let observations = load_panel(cfg)?;
    let out = cfg.out_dir();
    let trimmed: TrimReport = serde_json::from_reader(open(&out.join("trim_report.json"))?)?;
    let summary_path = out.join("fit_summary.json");
    let relative_effects = if summary_path.exists() {
        let fits: FitOutcome = serde_json::from_reader(open(&summary_path)?)?;
        fits.specs
            .into_iter()
            .filter_map(|s| match (s.characteristic, s.relative_effects) {
                (Some(characteristic), Some(rows)) => Some(RelativeEffectTable {
                    spec: s.spec,
                    characteristic,
                    rows,
                }),
                _ => None,
            })
            .collect()
    } else {
        vec![]
    };
    let bundle = build_bundle(
        &observations,
        BundleInputs {
            config_hash: cfg.config_hash()?,
            trimmed,
            group_variable: cfg.bundle.group,
            relative_effects,
        },
    )?;
    let mut buf = Vec::new();
    write_bundle(&bundle, &mut buf)?;
    write_file(&out.join("bundle.json"), &buf)?;
    Ok(bundle)
}

/// Writes a synthetic corpus and a `hubfair.toml` that points at it.
pub fn cmd_synth(g: &GlobalArgs) -> Result<PathBuf> {
    let mut synth = match &g.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingPath(path.display().to_string()),
                _ => Error::io(path.display().to_string(), e),
            })?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = g.seed {
        synth.seed = seed;
    }
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("synth"));
    create_dir(&dir)?;
    let data = generate(&synth)?;
    let paths = data.write_dir(&dir)?;
    let rel = |p: &Path| p.strip_prefix(&dir).unwrap_or(p).to_path_buf();
    let mut run = RunConfig {
        inputs: Inputs {
            forecasts: paths
                .forecasts
                .iter()
                .map(|(team, p)| ForecastInput {
                    team: team.clone(),
                    path: rel(p),
                })
                .collect(),
            truth: rel(&paths.truth),
            demographics: rel(&paths.demographics),
            urbanization: rel(&paths.urbanization),
            health: rel(&paths.health),
            metadata: rel(&paths.metadata),
        },
        seed: synth.seed,
        ..RunConfig::default()
    };
    run.scoring.trim_frac = synth.outlier_frac;
    run.scoring.scale_factor = synth.scale_factor;
    if let Some(t) = g.trim {
        run.scoring.trim_frac = t;
    }
    if let Some(s) = &g.specs {
        run.model.specs = s.clone();
    }
    if let Some(group) = &g.group {
        run.bundle.group = group.parse()?;
    }
    write_file(&dir.join("synth.toml"), toml::to_string(&synth).map_err(|e| Error::Config(e.to_string()))?.as_bytes())?;
    let cfg_path = dir.join("hubfair.toml");
    write_file(&cfg_path, run.to_toml()?.as_bytes())?;
    Ok(cfg_path)
}

/// Validates `bundle.json` and copies it into the dashboard asset folder.
pub fn cmd_serve_export(cfg: &RunConfig, assets: Option<&Path>) -> Result<PathBuf> {
    let src = cfg.out_dir().join("bundle.json");
    let bytes = fs::read(&src).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingPath(src.display().to_string()),
        _ => Error::io(src.display().to_string(), e),
    })?;
    let doc: serde_json::Value = serde_json::from_slice(&bytes)?;
    validate_bundle(&doc)?;
    let dir = assets.map(Path::to_path_buf).unwrap_or_else(|| cfg.out_dir().join("dashboard"));
    let dest = dir.join("bundle.json");
    write_file(&dest, &bytes)?;
    Ok(dest)
}

fn configure_threads(n: Option<usize>) {
    if let Some(n) = n {
        // a pool may already exist when called from tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Runs one command, printing a short summary to `stdout`.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let g = &cli.global;
    let say = |out: &mut dyn Write, line: String| {
        let _ = writeln!(out, "{line}");
    };
    match &cli.command {
        Command::Synth => {
            configure_threads(g.threads);
            let path = cmd_synth(g)?;
            say(stdout, format!("wrote synthetic corpus; run config at {}", path.display()));
        }
        Command::Score => {
            let cfg = load_config(g)?;
            configure_threads(cfg.threads);
            let o = cmd_score(&cfg)?;
            say(
                stdout,
                format!(
                    "scored {} rows ({} groups joined, {} dropped, {} trimmed)",
                    o.panel_rows,
                    o.ingest.join.retained,
                    o.ingest.join.dropped(),
                    o.trim.removed
                ),
            );
        }
        Command::Fit => {
            let cfg = load_config(g)?;
            configure_threads(cfg.threads);
            let o = cmd_fit(&cfg)?;
            for s in &o.specs {
                match &s.summary {
                    Some(sum) => say(
                        stdout,
                        format!(
                            "{}: ok, n = {}, p = {}, pseudo R2 (Cox-Snell) = {:.3}, removed [{}]",
                            s.spec,
                            sum.n,
                            sum.p,
                            sum.pseudo_r2_cs,
                            s.removed.iter().map(|r| r.term.as_str()).collect::<Vec<_>>().join(", ")
                        ),
                    ),
                    None => say(stdout, format!("{}: failed: {}", s.spec, s.error.as_deref().unwrap_or(""))),
                }
            }
            let failed = o.failures();
            if !failed.is_empty() {
                return Err(Error::Domain(format!(
                    "{} of {} specifications failed: {}",
                    failed.len(),
                    o.specs.len(),
                    failed.iter().map(|s| format!("{} ({})", s.spec, s.error.as_deref().unwrap_or(""))).collect::<Vec<_>>().join("; ")
                )));
            }
        }
        Command::Bundle => {
            let cfg = load_config(g)?;
            configure_threads(cfg.threads);
            let b = cmd_bundle(&cfg)?;
            let cells: usize = b.teams.iter().map(|t| t.cells.len()).sum();
            say(stdout, format!("bundle: {} teams, {} cells, config {}", b.teams.len(), cells, &b.run.config_hash[..12]));
            for t in &b.teams {
                let medians: Vec<String> = t
                    .median_aer
                    .iter()
                    .map(|(g, m)| match m {
                        Some(v) => format!("{g} {v:.3}"),
                        None => format!("{g} -"),
                    })
                    .collect();
                say(stdout, format!("  {}: median AER {}", t.team_id, medians.join(", ")));
            }
        }
        Command::ServeExport { assets } => {
            let cfg = load_config(g)?;
            let dest = cmd_serve_export(&cfg, assets.as_deref())?;
            say(stdout, format!("bundle exported to {}", dest.display()));
        }
    }
    Ok(())
}

/// Exit status for an error: 2 for input problems, 1 for analysis failures.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_input_error() {
        2
    } else {
        1
    }
}

/// One-line JSON error record for the diagnostic stream.
pub fn error_record(e: &Error) -> String {
    serde_json::json!({
        "error": if e.is_input_error() { "input" } else { "analysis" },
        "message": e.to_string(),
    })
    .to_string()
}
