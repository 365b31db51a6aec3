//! GVIF collinearity screening and post-fit influence diagnostics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{DesignMatrix, TermKind};
use crate::error::{Error, Result};
use crate::glm::FitResult;
use crate::linalg;
use crate::metrics::quantile;

pub const GVIF_THRESHOLD: f64 = 2.0;

/// Squared Cholesky pivot below which a standardized column is considered
/// a linear combination of the preceding ones.
const SINGULAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GvifEntry {
    pub term: String,
    pub df: usize,
    pub gvif: f64,
    pub adjusted: f64,
    pub removable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GvifReport {
    pub entries: Vec<GvifEntry>,
}

impl GvifReport {
    pub fn get(&self, term: &str) -> Option<&GvifEntry> {
        self.entries.iter().find(|e| e.term == term)
    }
}

/// Correlation matrix of the given columns.
fn correlation(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let n = x.nrows();
    let k = cols.len();
    let mut c = DMatrix::zeros(n, k);
    for (a, &j) in cols.iter().enumerate() {
        let col = x.column(j);
        let mean = col.mean();
        let centered = col.map(|v| v - mean);
        let norm = centered.norm();
        c.set_column(a, &(centered / norm));
    }
    let r = c.tr_mul(&c);
    let mut r = (&r + r.transpose()) * 0.5;
    r.fill_diagonal(1.0);
    r
}

/// log det of a correlation matrix, or the positions whose pivots vanish.
fn log_det(r: &DMatrix<f64>) -> std::result::Result<f64, Vec<usize>> {
    let k = r.nrows();
    let mut l = DMatrix::<f64>::zeros(k, k);
    let mut bad = Vec::new();
    let mut total = 0.0;
    for j in 0..k {
        let mut d = r[(j, j)];
        for m in 0..j {
            d -= l[(j, m)] * l[(j, m)];
        }
        if d <= SINGULAR_TOL {
            bad.push(j);
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        total += d.ln();
        for i in j + 1..k {
            let mut s = r[(i, j)];
            for m in 0..j {
                s -= l[(i, m)] * l[(j, m)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    if bad.is_empty() {
        Ok(total)
    } else {
        Err(bad)
    }
}

fn sub(r: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |a, b| r[(idx[a], idx[b])])
}

/// Generalized variance inflation factor per non-intercept term, with
/// `removable` set for control terms outside `protected`.
pub fn gvif_with_protected(design: &DesignMatrix, protected: &[String]) -> Result<GvifReport> {
    let terms: Vec<_> = design.terms.iter().filter(|t| t.kind != TermKind::Intercept).collect();
    if terms.len() < 2 {
        return Err(Error::InvalidInput("GVIF needs at least two non-intercept terms".into()));
    }
    let cols: Vec<usize> = terms.iter().flat_map(|t| t.columns.iter().copied()).collect();
    let r = correlation(&design.x, &cols);
    let full = log_det(&r).map_err(|bad| Error::SingularCorrelation {
        columns: bad.iter().map(|&a| design.column_labels[cols[a]].clone()).collect(),
    })?;
    let pos = |j: usize| cols.iter().position(|&c| c == j).expect("column in R");
    let mut entries = Vec::with_capacity(terms.len());
    for t in &terms {
        let inside: Vec<usize> = t.columns.iter().map(|&j| pos(j)).collect();
        let outside: Vec<usize> = (0..cols.len()).filter(|a| !inside.contains(a)).collect();
        let singular = |_| Error::SingularCorrelation {
            columns: vec![t.name.clone()],
        };
        let ld_in = log_det(&sub(&r, &inside)).map_err(singular)?;
        let ld_out = log_det(&sub(&r, &outside)).map_err(singular)?;
        let gvif = (ld_in + ld_out - full).exp().max(1.0);
        let df = t.columns.len();
        entries.push(GvifEntry {
            term: t.name.clone(),
            df,
            gvif,
            adjusted: gvif.powf(1.0 / (2.0 * df as f64)),
            removable: t.kind == TermKind::Control && !protected.contains(&t.name),
        });
    }
    Ok(GvifReport { entries })
}

/// GVIF with the default protection set (sensitive attributes and
/// model-data characteristics).
pub fn gvif(design: &DesignMatrix) -> Result<GvifReport> {
    gvif_with_protected(design, &default_protected(design))
}

/// Sensitive, characteristic and interaction terms of `design`.
pub fn default_protected(design: &DesignMatrix) -> Vec<String> {
    design
        .terms
        .iter()
        .filter(|t| matches!(t.kind, TermKind::Sensitive | TermKind::Characteristic | TermKind::Interaction))
        .map(|t| t.name.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub step: usize,
    pub term: String,
    pub gvif: f64,
    pub adjusted: f64,
}

#[derive(Debug, Clone)]
pub struct Screening {
    pub design: DesignMatrix,
    pub removed: Vec<Removal>,
    /// GVIF of the retained terms at the fixpoint.
    pub report: GvifReport,
}

impl Screening {
    /// Final report plus the removed terms, in column order of the input.
    pub fn table(&self, original: &DesignMatrix) -> Vec<GvifRow> {
        original
            .terms
            .iter()
            .filter(|t| t.kind != TermKind::Intercept)
            .filter_map(|t| {
                if let Some(e) = self.report.get(&t.name) {
                    Some(GvifRow {
                        term: e.term.clone(),
                        df: e.df,
                        gvif: e.gvif,
                        adjusted: e.adjusted,
                        removed: false,
                    })
                } else {
                    self.removed.iter().find(|r| r.term == t.name).map(|r| GvifRow {
                        term: r.term.clone(),
                        df: t.columns.len(),
                        gvif: r.gvif,
                        adjusted: r.adjusted,
                        removed: true,
                    })
                }
            })
            .collect()
    }
}

/// Repeatedly drops the removable term with the largest adjusted GVIF while
/// any is at or above `threshold`. Ties go to the later term. Fails if a
/// protected term is still at or above the threshold at the fixpoint.
pub fn screen_collinearity(design: &DesignMatrix, threshold: f64, protected: &[String]) -> Result<Screening> {
    for name in protected {
        if design.term(name).is_none() {
            return Err(Error::UnknownTerm(name.clone()));
        }
    }
    let mut current = design.clone();
    let mut removed = Vec::new();
    loop {
        let report = gvif_with_protected(&current, protected)?;
        let worst = report
            .entries
            .iter()
            .filter(|e| e.removable && e.adjusted >= threshold)
            .fold(None::<&GvifEntry>, |best, e| match best {
                Some(b) if b.adjusted > e.adjusted => Some(b),
                _ => Some(e),
            });
        match worst {
            Some(e) => {
                removed.push(Removal {
                    step: removed.len() + 1,
                    term: e.term.clone(),
                    gvif: e.gvif,
                    adjusted: e.adjusted,
                });
                current = current.drop_terms(&[e.term.as_str()])?;
            }
            None => {
                if let Some(e) = report
                    .entries
                    .iter()
                    .find(|e| protected.contains(&e.term) && e.adjusted >= threshold)
                {
                    return Err(Error::ProtectedCollinear {
                        term: e.term.clone(),
                        adjusted: e.adjusted,
                        threshold,
                    });
                }
                return Ok(Screening {
                    design: current,
                    removed,
                    report,
                });
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GvifRow {
    pub term: String,
    pub df: usize,
    pub gvif: f64,
    pub adjusted: f64,
    pub removed: bool,
}

pub fn write_gvif<W: Write>(rows: &[GvifRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("GVIF table", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct FitDiagnostics {
    pub residuals: ResidualSummary,
    pub leverage: DVector<f64>,
    pub cooks_distance: DVector<f64>,
    pub max_cooks: f64,
    pub argmax_cooks: usize,
}

/// Leverage and Cook's distance from the weighted hat matrix at the final
/// IRLS iterate, using Pearson residuals.
pub fn fit_diagnostics(fit: &FitResult, design: &DesignMatrix) -> Result<FitDiagnostics> {
    if design.nrows() != fit.n || design.ncols() != fit.p {
        return Err(Error::InvalidInput("design does not match the fit".into()));
    }
    let h = linalg::hat_diagonal(&design.x, &fit.weights, &fit.r_inv);
    let resid = &design.y - &fit.fitted;
    let p = fit.p as f64;
    let cooks = DVector::from_fn(fit.n, |i, _| {
        let hi = h[i];
        resid[i] * resid[i] * hi / (p * fit.dispersion * (1.0 - hi) * (1.0 - hi))
    });
    let (argmax_cooks, max_cooks) = cooks
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    let mut sorted: Vec<f64> = resid.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    Ok(FitDiagnostics {
        residuals: ResidualSummary {
            min: sorted[0],
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
        },
        leverage: h,
        cooks_distance: cooks,
        max_cooks,
        argmax_cooks,
    })
}
