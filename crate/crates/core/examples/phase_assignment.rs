//! Epidemic phases: the default seven-phase calendar and detection of phase
//! boundaries from valleys of a smoothed national curve.

use chrono::{Duration, NaiveDate};
use hubfair::ingest::epi_week_end;
use hubfair::phases::{detect_phases, PhaseConfig};

fn main() -> hubfair::Result<()> {
    let phases = PhaseConfig::default();
    for r in phases.ranges() {
        println!("phase {}: {} .. {}", r.phase, r.start, r.end);
    }
    let day = NaiveDate::from_ymd_opt(2021, 1, 13).unwrap();
    let week = epi_week_end(day);
    println!("{day} falls in epi week ending {week}, phase {}", phases.assign(week)?);

    // three waves of a synthetic national curve
    let start = NaiveDate::from_ymd_opt(2020, 6, 6).unwrap();
    let series: Vec<(NaiveDate, f64)> = (0..120)
        .map(|w| {
            let t = w as f64;
            let waves = [(20.0, 6.0), (55.0, 8.0), (95.0, 7.0)]
                .iter()
                .map(|(c, s)| 1e5 * (-(t - c).powi(2) / (2.0 * s * s)).exp())
                .sum::<f64>();
            (start + Duration::weeks(w), waves + 2e3)
        })
        .collect();
    let detected = detect_phases(&series, 3)?;
    for r in detected.ranges() {
        println!("detected phase {}: {} .. {}", r.phase, r.start, r.end);
    }
    Ok(())
}
