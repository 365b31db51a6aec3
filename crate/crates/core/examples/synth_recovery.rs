//! Plants effects with the generator, runs the pipeline, and checks whether
//! each fit's 95% interval covers the planted value.
//!
//! cargo run --release --example synth_recovery -- [replicates]

use std::collections::BTreeMap;
use std::time::Instant;

use hubfair::design::{ModelSpec, SensitiveBlock};
use hubfair::glm::{fit_glm, GlmOptions};
use hubfair::ingest::{CrossingPolicy, HUB_QUANTILES};
use hubfair::phases::PhaseConfig;
use hubfair::pipeline::{score_synth, ScoreInputs};
use hubfair::synth::{generate, SynthConfig};

fn recover(seed: u64, label: &str, planted: f64, block: SensitiveBlock) -> hubfair::Result<(f64, f64, f64)> {
    let cfg = SynthConfig {
        seed,
        lookaheads: vec![7],
        planted: BTreeMap::from([(label.to_string(), planted)]),
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
    let design = hubfair::design::build_design(&ModelSpec::new(block, None), &panel.observations)?;
    let fit = fit_glm(&design, &GlmOptions::default())?;
    let row = fit
        .coefficient_table()
        .into_iter()
        .find(|r| r.term == label)
        .expect("planted column is in the design");
    Ok((row.exp_coef, row.ci_lo, row.ci_hi))
}

fn main() -> hubfair::Result<()> {
    let replicates: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let cases = [
        ("pct_hispanic", 1.216, SensitiveBlock::Race),
        ("MC", 1.065, SensitiveBlock::Urbanicity),
    ];
    for (label, planted, block) in cases {
        let start = Instant::now();
        let mut covered = 0;
        for seed in 0..replicates {
            let (est, lo, hi) = recover(seed, label, planted, block)?;
            let hit = lo <= planted && planted <= hi;
            covered += usize::from(hit);
            println!("{label} seed {seed:>3}: exp(b) = {est:.5}  95% CI [{lo:.5}, {hi:.5}]  {}", if hit { "covers" } else { "misses" });
        }
        println!(
            "{label}: planted {planted} covered in {covered}/{replicates} replicates ({:.1?})\n",
            start.elapsed()
        );
    }
    Ok(())
}
