//! Accuracy Equality Ratios per team, phase and lookahead, assembled into
//! the dashboard bundle and audited against its own cells.

use hubfair::fairness::{audit_bundle, build_bundle, validate_bundle, BundleInputs, GroupVariable};
use hubfair::ingest::{CrossingPolicy, HUB_QUANTILES};
use hubfair::phases::PhaseConfig;
use hubfair::pipeline::{score_synth, ScoreInputs};
use hubfair::synth::{generate, SynthConfig};
use sha2::{Digest, Sha256};

fn main() -> hubfair::Result<()> {
    let cfg = SynthConfig {
        n_counties: 100,
        n_weeks: 20,
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
    // the CLI hashes its run config; here the synth config stands in
    let config_hash = hex::encode(Sha256::digest(serde_json::to_vec(&cfg)?));

    for group in [GroupVariable::Race, GroupVariable::Urbanicity] {
        let bundle = build_bundle(
            &panel.observations,
            BundleInputs {
                config_hash: config_hash.clone(),
                trimmed: panel.trim.clone(),
                group_variable: group,
                relative_effects: vec![],
            },
        )?;
        audit_bundle(&bundle, 1e-9)?;
        validate_bundle(&serde_json::to_value(&bundle)?)?;
        println!("grouping by {group} (reference {}):", bundle.run.unprotected_group);
        for t in &bundle.teams {
            let medians: Vec<String> = t
                .median_aer
                .iter()
                .map(|(g, m)| m.map_or(format!("{g} -"), |v| format!("{g} {v:.3}")))
                .collect();
            println!("  {:<16} {} cells, {} cards; median AER {}", t.team_id, t.cells.len(), t.cards.len(), medians.join(", "));
        }
    }
    Ok(())
}
