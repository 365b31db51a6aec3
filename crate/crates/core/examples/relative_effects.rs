//! Relative effects of an interaction model: e^(beta + delta) per sensitive
//! column and level, with Wald tests.

use hubfair::design::{build_design, Characteristic, ModelSpec, SensitiveBlock};
use hubfair::fairness::relative_effects;
use hubfair::glm::{fit_glm, GlmOptions};
use hubfair::ingest::{CrossingPolicy, HUB_QUANTILES};
use hubfair::phases::PhaseConfig;
use hubfair::pipeline::{score_synth, ScoreInputs};
use hubfair::synth::{generate, SynthConfig};

fn main() -> hubfair::Result<()> {
    let cfg = SynthConfig {
        n_counties: 120,
        n_weeks: 12,
        ..SynthConfig::default()
    };
    let data = generate(&cfg)?;
    let phases = PhaseConfig::default();
    let inputs = ScoreInputs {
        quantiles: &HUB_QUANTILES,
        crossing: CrossingPolicy::Repair,
        phases: &phases,
        scale_factor: cfg.scale_factor,
        trim_frac: cfg.outlier_frac,
    };
    let (panel, _) = score_synth(&data, &inputs)?;
    let spec = ModelSpec::new(SensitiveBlock::Race, Some(Characteristic::Lookahead));
    let design = build_design(&spec, &panel.observations)?;
    let fit = fit_glm(&design, &GlmOptions::default())?;
    println!("{} ({} rows)", spec.name, design.nrows());
    for r in relative_effects(&fit, &design, Characteristic::Lookahead)? {
        println!(
            "{:<13} {:<12} exp {:.4}  {:>+7.1}%  p {:.3e}{}",
            r.sensitive_term,
            r.level,
            r.exp_combined,
            r.pct_diff,
            r.p_value,
            if r.significant { " *" } else { "" }
        );
    }
    Ok(())
}
