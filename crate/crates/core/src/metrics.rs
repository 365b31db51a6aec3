//! Pinball-loss scoring, population normalization and tail trimming.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CountyCovariates, JoinedPanel, TeamMetadata, HUB_QUANTILES};

/// Quantile (pinball) loss of forecast `f` against observation `y`.
///
/// `tau * (y - f)` when the observation is at or above the forecast,
/// `(1 - tau) * (f - y)` otherwise. Never negative.
pub fn pinball_loss(y: f64, f: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Domain(format!("quantile level {tau} outside (0, 1)")));
    }
    if !y.is_finite() || !f.is_finite() {
        return Err(Error::Domain(format!("non-finite inputs y={y}, f={f}")));
    }
    Ok(if y >= f { tau * (y - f) } else { (1.0 - tau) * (f - y) })
}

/// Mean pinball loss over the seven hub quantiles, given as `(tau, f)`.
pub fn mean_pbl(y: f64, forecasts: &[(f64, f64)]) -> Result<f64> {
    if forecasts.len() != HUB_QUANTILES.len() {
        return Err(Error::Domain(format!(
            "expected {} quantiles, got {}",
            HUB_QUANTILES.len(),
            forecasts.len()
        )));
    }
    let mut taus: Vec<f64> = forecasts.iter().map(|p| p.0).collect();
    taus.sort_by(f64::total_cmp);
    if taus.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Domain("duplicate quantile level".into()));
    }
    let mut total = 0.0;
    for &(tau, f) in forecasts {
        total += pinball_loss(y, f, tau)?;
    }
    Ok(total / forecasts.len() as f64)
}

/// `mean_pbl * scale_factor / population`.
pub fn normalize(mean_pbl: f64, population: f64, scale_factor: f64) -> Result<f64> {
    if !(population > 0.0) {
        return Err(Error::Domain(format!("population {population} must be positive")));
    }
    if !(scale_factor > 0.0) {
        return Err(Error::Domain(format!("scale factor {scale_factor} must be positive")));
    }
    Ok(mean_pbl * scale_factor / population)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimReport {
    pub n_input: usize,
    pub removed: usize,
    pub trim_frac: f64,
    /// Smallest removed value; `None` when nothing was removed.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trimmed {
    /// Input indices of the survivors, in input order.
    pub kept: Vec<usize>,
    /// Square roots of the surviving values, aligned with `kept`.
    pub sqrt_values: Vec<f64>,
    pub report: TrimReport,
}

/// Removes the `floor(n * trim_frac)` largest values and square-roots the
/// rest. Among equal values the earlier input is removed first.
pub fn trim_and_transform(values: &[f64], trim_frac: f64) -> Result<Trimmed> {
    if values.is_empty() {
        return Err(Error::InvalidInput("cannot trim an empty sample".into()));
    }
    if !(0.0..0.5).contains(&trim_frac) {
        return Err(Error::InvalidInput(format!("trim fraction {trim_frac} outside [0, 0.5)")));
    }
    if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidInput(format!("value {bad} is not a non-negative number")));
    }
    let n = values.len();
    let n_remove = (n as f64 * trim_frac).floor() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut removed = vec![false; n];
    for &i in &order[..n_remove] {
        removed[i] = true;
    }
    let threshold = order[..n_remove].last().map(|&i| values[i]);

    let kept: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
    let sqrt_values = kept.iter().map(|&i| values[i].sqrt()).collect();
    Ok(Trimmed {
        kept,
        sqrt_values,
        report: TrimReport {
            n_input: n,
            removed: n_remove,
            trim_frac,
            threshold,
        },
    })
}

/// Linearly interpolated sample quantile (type 7) of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One scored county-week-team-lookahead row.
#[derive(Debug, Clone)]
pub struct PblObservation {
    pub team_id: String,
    pub fips: String,
    pub week_end: NaiveDate,
    pub lookahead_days: u32,
    pub phase: u8,
    pub pbl_norm: f64,
    pub sqrt_pbl: f64,
    pub covariates: Arc<CountyCovariates>,
    pub metadata: Arc<TeamMetadata>,
}

#[derive(Debug, Clone)]
pub struct ScoredPanel {
    pub observations: Vec<PblObservation>,
    pub trim: TrimReport,
}

/// Scores every joined group, trims the pooled distribution and applies the
/// square-root transform. Output is ordered by (team, fips, week, lookahead).
pub fn score_panel(panel: &JoinedPanel, scale_factor: f64, trim_frac: f64) -> Result<ScoredPanel> {
    let mut scored: Vec<PblObservation> = panel
        .rows
        .par_iter()
        .map(|row| {
            let m = mean_pbl(row.truth, &row.group.quantiles)?;
            let pbl_norm = normalize(m, row.covariates.population as f64, scale_factor)?;
            Ok(PblObservation {
                team_id: row.group.team_id.clone(),
                fips: row.group.fips.clone(),
                week_end: row.group.week_end,
                lookahead_days: row.group.lookahead_days,
                phase: row.phase,
                pbl_norm,
                sqrt_pbl: pbl_norm.sqrt(),
                covariates: Arc::clone(&row.covariates),
                metadata: Arc::clone(&row.metadata),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| {
        (&a.team_id, &a.fips, a.week_end, a.lookahead_days).cmp(&(&b.team_id, &b.fips, b.week_end, b.lookahead_days))
    });

    let values: Vec<f64> = scored.iter().map(|o| o.pbl_norm).collect();
    let trimmed = trim_and_transform(&values, trim_frac)?;
    let mut keep = vec![false; scored.len()];
    for &i in &trimmed.kept {
        keep[i] = true;
    }
    let observations = scored
        .into_iter()
        .zip(keep)
        .filter_map(|(o, k)| k.then_some(o))
        .collect();
    Ok(ScoredPanel {
        observations,
        trim: trimmed.report,
    })
}

pub const PANEL_COLUMNS: [&str; 7] = [
    "team_id",
    "fips",
    "week_end",
    "lookahead",
    "phase",
    "pbl_norm",
    "sqrt_pbl",
];

#[derive(Serialize, Deserialize)]
struct PanelRow {
    team_id: String,
    fips: String,
    week_end: NaiveDate,
    lookahead: u32,
    phase: u8,
    pbl_norm: f64,
    sqrt_pbl: f64,
}

pub fn write_panel<W: Write>(observations: &[PblObservation], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for o in observations {
        w.serialize(PanelRow {
            team_id: o.team_id.clone(),
            fips: o.fips.clone(),
            week_end: o.week_end,
            lookahead: o.lookahead_days,
            phase: o.phase,
            pbl_norm: o.pbl_norm,
            sqrt_pbl: o.sqrt_pbl,
        })?;
    }
    w.flush().map_err(|e| Error::io("panel output", e))?;
    Ok(())
}

/// Reads a scored panel and re-attaches county covariates and team metadata.
pub fn read_panel<R: Read>(
    input: R,
    covariates: &BTreeMap<String, CountyCovariates>,
    metadata: &BTreeMap<String, TeamMetadata>,
) -> Result<Vec<PblObservation>> {
    let cov: BTreeMap<&str, Arc<CountyCovariates>> = covariates
        .iter()
        .map(|(k, v)| (k.as_str(), Arc::new(v.clone())))
        .collect();
    let meta: BTreeMap<&str, Arc<TeamMetadata>> = metadata
        .iter()
        .map(|(k, v)| (k.as_str(), Arc::new(v.clone())))
        .collect();
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize::<PanelRow>() {
        let row = row?;
        let covariates = cov
            .get(row.fips.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("panel county {} has no covariates", row.fips)))?;
        let metadata = meta
            .get(row.team_id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("panel team {} has no metadata", row.team_id)))?;
        out.push(PblObservation {
            team_id: row.team_id,
            fips: row.fips,
            week_end: row.week_end,
            lookahead_days: row.lookahead,
            phase: row.phase,
            pbl_norm: row.pbl_norm,
            sqrt_pbl: row.sqrt_pbl,
            covariates: Arc::clone(covariates),
            metadata: Arc::clone(metadata),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    // standard quantile-loss definition, written independently
    fn oracle(y: f64, f: f64, tau: f64) -> f64 {
        let u = y - f;
        u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball_loss(10.0, 10.0, 0.5).unwrap(), 0.0);
        assert!((pinball_loss(100.0, 80.0, 0.9).unwrap() - 18.0).abs() < 1e-12);
        assert!((pinball_loss(80.0, 100.0, 0.9).unwrap() - 2.0).abs() < 1e-12);
        assert!((oracle(100.0, 80.0, 0.9) - 18.0).abs() < 1e-12);
        assert!((oracle(80.0, 100.0, 0.9) - 2.0).abs() < 1e-12);
        assert!(pinball_loss(1.0, 1.0, 0.0).is_err());
        assert!(pinball_loss(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn mean_pbl_examples() {
        let all = |f: f64| HUB_QUANTILES.iter().map(|&t| (t, f)).collect::<Vec<_>>();
        assert_eq!(mean_pbl(10.0, &all(10.0)).unwrap(), 0.0);
        assert_eq!(mean_pbl(0.0, &all(0.0)).unwrap(), 0.0);
        // under-forecast by 2 everywhere: mean of tau*2 with mean tau 0.5
        let brute: f64 = HUB_QUANTILES.iter().map(|t| t * 2.0).sum::<f64>() / 7.0;
        assert!((brute - 1.0).abs() < 1e-12);
        assert!((mean_pbl(10.0, &all(8.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(mean_pbl(10.0, &all(8.0)[..6]).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(7.0, 100000.0, 100000.0).unwrap(), 7.0);
        assert_eq!(normalize(1.0, 1.0, 1.0).unwrap(), 1.0);
        assert!((normalize(2.5, 50000.0, 1.0).unwrap() - 5.0e-5).abs() < 1e-18);
        assert!(normalize(1.0, 0.0, 1.0).is_err());
        assert!(normalize(1.0, -3.0, 1.0).is_err());
    }

    #[test]
    fn trim_examples() {
        let t = trim_and_transform(&[1.0, 4.0, 9.0, 16.0], 0.0).unwrap();
        assert_eq!(t.sqrt_values, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.report.removed, 0);
        assert_eq!(t.report.threshold, None);

        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let t = trim_and_transform(&values, 0.01).unwrap();
        assert_eq!(t.kept, (0..99).collect::<Vec<_>>());
        assert_eq!(t.report.threshold, Some(100.0));

        let t = trim_and_transform(&[4.0; 100], 0.01).unwrap();
        assert_eq!(t.kept.len(), 99);
        assert_eq!(t.kept[0], 1);
        assert!(t.sqrt_values.iter().all(|&v| v == 2.0));

        assert!(trim_and_transform(&[], 0.01).is_err());
        assert!(trim_and_transform(&[1.0], 0.5).is_err());
    }
}
