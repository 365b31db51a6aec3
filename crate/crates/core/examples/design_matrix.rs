//! Column layout of the main-effects and interaction designs built from a
//! scored panel.

use hubfair::design::{build_design, Characteristic, ModelSpec, SensitiveBlock};
use hubfair::ingest::{CrossingPolicy, HUB_QUANTILES};
use hubfair::phases::PhaseConfig;
use hubfair::pipeline::{score_synth, ScoreInputs};
use hubfair::synth::{generate, SynthConfig};

fn main() -> hubfair::Result<()> {
    let cfg = SynthConfig {
        n_counties: 80,
        n_weeks: 10,
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

    for spec in [
        ModelSpec::new(SensitiveBlock::Race, None),
        ModelSpec::new(SensitiveBlock::Urbanicity, Some(Characteristic::Lookahead)),
    ] {
        let d = build_design(&spec, &panel.observations)?;
        println!("{}: {} rows x {} columns", spec.name, d.nrows(), d.ncols());
        for t in &d.terms {
            let cols: Vec<&str> = t.columns.iter().map(|&j| d.column_labels[j].as_str()).collect();
            println!("  {:<28} {:?}  {}", t.name, t.kind, cols.join(" "));
        }
    }
    Ok(())
}
