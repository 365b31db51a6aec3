//! Pinball loss of a quantile forecast, its population normalization, and
//! the trim-then-square-root transform.

use hubfair::ingest::HUB_QUANTILES;
use hubfair::metrics::{mean_pbl, normalize, pinball_loss, trim_and_transform};

fn main() -> hubfair::Result<()> {
    let y = 120.0;
    let forecast = [60.0, 80.0, 100.0, 115.0, 130.0, 150.0, 175.0];
    for (tau, f) in HUB_QUANTILES.iter().zip(forecast) {
        println!("tau {tau:<5} forecast {f:>5}  loss {:>6.2}", pinball_loss(y, f, *tau)?);
    }
    let qs: Vec<(f64, f64)> = HUB_QUANTILES.iter().copied().zip(forecast).collect();
    let mean = mean_pbl(y, &qs)?;
    let per_capita = normalize(mean, 25_000.0, 1.0)?;
    println!("mean PBL {mean:.3}, per capita {per_capita:.3e}");

    // a county-week panel with one gross error
    let panel = [2.0e-4, 1.5e-4, 3.1e-4, 9.0e-2, 2.2e-4, 1.1e-4, 2.8e-4, 1.9e-4, 2.5e-4, 1.7e-4];
    let t = trim_and_transform(&panel, 0.1)?;
    println!(
        "trimmed {} of {} (threshold {:?}); sqrt PBL {:?}",
        t.report.removed,
        t.report.n_input,
        t.report.threshold,
        t.sqrt_values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
    );
    Ok(())
}
