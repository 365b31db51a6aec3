//! Gaussian GLMs with log or identity link, fitted by IRLS.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, weighted_qr};

pub const Z_95: f64 = 1.959964;
const MAX_HALVINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Log,
    Identity,
}

impl Link {
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Log => eta.exp(),
            Link::Identity => eta,
        }
    }

    fn apply(self, mu: f64) -> f64 {
        match self {
            Link::Log => mu.ln(),
            Link::Identity => mu,
        }
    }

    /// dmu/deta evaluated at mu.
    fn mu_eta(self, mu: f64) -> f64 {
        match self {
            Link::Log => mu,
            Link::Identity => 1.0,
        }
    }

    fn valid(self, mu: f64) -> bool {
        match self {
            Link::Log => mu > 0.0 && mu.is_finite(),
            Link::Identity => mu.is_finite(),
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Link::Log => "log",
            Link::Identity => "identity",
        })
    }
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(Link::Log),
            "identity" => Ok(Link::Identity),
            other => Err(Error::InvalidInput(format!("unknown link `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmOptions {
    pub link: Link,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            link: Link::Log,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

impl GlmOptions {
    pub fn identity() -> Self {
        Self {
            link: Link::Identity,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub column_labels: Vec<String>,
    pub link: Link,
    pub beta: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub se: DVector<f64>,
    pub z: DVector<f64>,
    pub p_values: DVector<f64>,
    pub ci95: Vec<(f64, f64)>,
    pub dispersion: f64,
    pub deviance: f64,
    pub null_deviance: f64,
    pub loglik: f64,
    pub loglik_null: f64,
    pub pseudo_r2_cs: f64,
    pub n: usize,
    pub p: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Fitted means at the final iterate.
    pub fitted: DVector<f64>,
    /// IRLS weights at the final iterate.
    pub weights: DVector<f64>,
    /// `R^{-1}` of the weighted design at the final iterate.
    pub(crate) r_inv: DMatrix<f64>,
}

/// Two-sided normal p-value.
pub fn normal_p_value(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

fn gaussian_loglik(rss: f64, n: usize) -> f64 {
    let n = n as f64;
    if rss == 0.0 {
        return f64::INFINITY;
    }
    -0.5 * n * ((2.0 * std::f64::consts::PI * rss / n).ln() + 1.0)
}

fn deviance(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    y.iter().zip(mu.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

struct Iterate {
    beta: DVector<f64>,
    mu: DVector<f64>,
    dev: f64,
}

fn evaluate(x: &DMatrix<f64>, y: &DVector<f64>, beta: DVector<f64>, link: Link) -> Option<Iterate> {
    let eta = x * &beta;
    let mu = eta.map(|e| link.inverse(e));
    if !mu.iter().all(|&m| link.valid(m)) {
        return None;
    }
    let dev = deviance(y, &mu);
    dev.is_finite().then_some(Iterate { beta, mu, dev })
}

/// Fits the GLM on a built design.
pub fn fit_glm(design: &DesignMatrix, opts: &GlmOptions) -> Result<FitResult> {
    fit_matrix(&design.x, &design.y, &design.column_labels, opts)
}

/// Fits the GLM on a raw matrix with column labels.
pub fn fit_matrix(x: &DMatrix<f64>, y: &DVector<f64>, labels: &[String], opts: &GlmOptions) -> Result<FitResult> {
    let (n, p) = x.shape();
    if labels.len() != p {
        return Err(Error::InvalidInput(format!("{} labels for {p} columns", labels.len())));
    }
    if y.len() != n {
        return Err(Error::InvalidInput(format!("response has {} rows, design {n}", y.len())));
    }
    if n <= p {
        return Err(Error::InvalidInput(format!("need n > p, got n = {n}, p = {p}")));
    }
    if !y.iter().all(|v| v.is_finite()) || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite values in design or response".into()));
    }
    let link = opts.link;
    let ybar = y.mean();
    if link == Link::Log && y.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidInput("log link needs a non-negative response".into()));
    }

    let mut mu = match link {
        Link::Log => y.map(|v| v.max(ybar / 10.0) + 0.1),
        Link::Identity => y.clone(),
    };
    let mut dev_old = deviance(y, &mu);
    let mut current: Option<Iterate> = None;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=opts.max_iter {
        iterations = iter;
        let eta = mu.map(|m| link.apply(m));
        let d = mu.map(|m| link.mu_eta(m));
        let w = d.map(|v| v * v);
        let z = DVector::from_fn(n, |i, _| eta[i] + (y[i] - mu[i]) / d[i]);
        let qr = weighted_qr(x, &w, &z);
        let dependent = qr.dependent_columns();
        if !dependent.is_empty() {
            return Err(Error::RankDeficient {
                columns: dependent.into_iter().map(|j| labels[j].clone()).collect(),
            });
        }
        let proposal = qr.solve();
        let mut next = evaluate(x, y, proposal.clone(), link);
        if let Some(prev) = &current {
            let mut step = proposal;
            let mut halvings = 0;
            while next.as_ref().is_none_or(|it| it.dev > prev.dev) && halvings < MAX_HALVINGS {
                step = (&step + &prev.beta) * 0.5;
                next = evaluate(x, y, step.clone(), link);
                halvings += 1;
            }
        }
        let Some(next) = next else {
            return Err(Error::InvalidMean);
        };
        let change = (next.dev - dev_old).abs() / (next.dev.abs() + 0.1);
        dev_old = next.dev;
        mu = next.mu.clone();
        current = Some(next);
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    let fit = current.expect("at least one iteration");
    if !converged {
        return Err(Error::NotConverged {
            iterations,
            last_beta: fit.beta.iter().copied().collect(),
        });
    }

    // information at the final iterate
    let d = fit.mu.map(|m| link.mu_eta(m));
    let w = d.map(|v| v * v);
    let qr = weighted_qr(x, &w, &DVector::zeros(n));
    let dependent = qr.dependent_columns();
    if !dependent.is_empty() {
        return Err(Error::RankDeficient {
            columns: dependent.into_iter().map(|j| labels[j].clone()).collect(),
        });
    }
    let r_inv = qr.r_inverse();
    let rss = fit.dev;
    let dispersion = rss / (n - p) as f64;
    let vcov = linalg::unscaled_covariance(&r_inv) * dispersion;
    let se = DVector::from_fn(p, |i, _| vcov[(i, i)].max(0.0).sqrt());
    let z = DVector::from_fn(p, |i, _| fit.beta[i] / se[i]);
    let p_values = z.map(normal_p_value);
    let ci95 = (0..p)
        .map(|i| (fit.beta[i] - Z_95 * se[i], fit.beta[i] + Z_95 * se[i]))
        .collect();

    // intercept-only model: the Gaussian MLE is the sample mean under either link
    if link == Link::Log && ybar <= 0.0 {
        return Err(Error::InvalidMean);
    }
    let null_deviance: f64 = y.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    let loglik = gaussian_loglik(rss, n);
    let loglik_null = gaussian_loglik(null_deviance, n);
    let pseudo_r2_cs = if loglik.is_infinite() {
        1.0
    } else {
        1.0 - ((2.0 / n as f64) * (loglik_null - loglik)).exp()
    };

    Ok(FitResult {
        column_labels: labels.to_vec(),
        link,
        beta: fit.beta,
        vcov,
        se,
        z,
        p_values,
        ci95,
        dispersion,
        deviance: rss,
        null_deviance,
        loglik,
        loglik_null,
        pseudo_r2_cs,
        n,
        p,
        converged,
        iterations,
        fitted: fit.mu,
        weights: w,
        r_inv,
    })
}

impl FitResult {
    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.index(label).map(|i| self.beta[i])
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.column_labels.iter().position(|l| l == label)
    }

    /// Response-scale means for new rows.
    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
        predict(self, x_new)
    }

    pub fn coefficient_table(&self) -> Vec<CoefficientRow> {
        (0..self.p)
            .map(|i| {
                let (lo, hi) = self.ci95[i];
                let (ci_lo, ci_hi) = match self.link {
                    Link::Log => (lo.exp(), hi.exp()),
                    Link::Identity => (lo, hi),
                };
                CoefficientRow {
                    term: self.column_labels[i].clone(),
                    coef: self.beta[i],
                    exp_coef: self.beta[i].exp(),
                    se: self.se[i],
                    z: self.z[i],
                    p: self.p_values[i],
                    ci_lo,
                    ci_hi,
                }
            })
            .collect()
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            link: self.link,
            n: self.n,
            p: self.p,
            converged: self.converged,
            iterations: self.iterations,
            dispersion: self.dispersion,
            deviance: self.deviance,
            null_deviance: self.null_deviance,
            loglik: self.loglik,
            loglik_null: self.loglik_null,
            pseudo_r2_cs: self.pseudo_r2_cs,
        }
    }
}

pub fn predict(fit: &FitResult, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x_new.ncols() != fit.p {
        return Err(Error::InvalidInput(format!(
            "new design has {} columns, fit has {}",
            x_new.ncols(),
            fit.p
        )));
    }
    Ok((x_new * &fit.beta).map(|e| fit.link.inverse(e)))
}

/// One row of a coefficient table. The interval is on the exponentiated
/// scale under the log link and on the coefficient scale otherwise; `se`
/// is always on the link scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub term: String,
    pub coef: f64,
    pub exp_coef: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

pub const COEFFICIENT_COLUMNS: [&str; 8] = ["term", "coef", "exp_coef", "se", "z", "p", "ci_lo", "ci_hi"];

pub fn write_coefficients<W: Write>(rows: &[CoefficientRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("coefficient table", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub link: Link,
    pub n: usize,
    pub p: usize,
    pub converged: bool,
    pub iterations: usize,
    pub dispersion: f64,
    pub deviance: f64,
    pub null_deviance: f64,
    pub loglik: f64,
    pub loglik_null: f64,
    pub pseudo_r2_cs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
    pub exp_estimate: f64,
    pub exp_ci95: (f64, f64),
}

/// Wald test of `c' beta = 0` with a normal reference distribution.
pub fn wald_linear_hypothesis(fit: &FitResult, c: &DVector<f64>) -> Result<WaldResult> {
    if c.len() != fit.p {
        return Err(Error::InvalidInput(format!(
            "hypothesis vector has length {}, fit has {} coefficients",
            c.len(),
            fit.p
        )));
    }
    if c.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("hypothesis vector is zero".into()));
    }
    let nz: Vec<usize> = (0..c.len()).filter(|&i| c[i] != 0.0).collect();
    let estimate: f64 = nz.iter().map(|&i| c[i] * fit.beta[i]).sum();
    let mut quad = 0.0;
    for &i in &nz {
        for &j in &nz {
            quad += c[i] * fit.vcov[(i, j)] * c[j];
        }
    }
    let se = quad.max(0.0).sqrt();
    let z = estimate / se;
    let p_value = if estimate == 0.0 { 1.0 } else { normal_p_value(z) };
    Ok(WaldResult {
        estimate,
        se,
        z: if estimate == 0.0 { 0.0 } else { z },
        p_value,
        exp_estimate: estimate.exp(),
        exp_ci95: ((estimate - Z_95 * se).exp(), (estimate + Z_95 * se).exp()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn labels(p: usize) -> Vec<String> {
        (0..p).map(|j| format!("x{j}")).collect()
    }

    #[test]
    fn two_point_interpolation() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 3.0]);
        let fit = fit_matrix(&x, &y, &labels(2), &GlmOptions::identity()).unwrap();
        assert_relative_eq!(fit.beta[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(fit.beta[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn noiseless_log_link() {
        let xs: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
        let x = DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let y = DVector::from_iterator(xs.len(), xs.iter().map(|v| (0.5 + 0.2 * v).exp()));
        let fit = fit_matrix(&x, &y, &labels(2), &GlmOptions::default()).unwrap();
        assert!((fit.beta[0] - 0.5).abs() < 1e-6);
        assert!((fit.beta[1] - 0.2).abs() < 1e-6);
        let pred = fit.predict(&x).unwrap();
        assert!((pred - &fit.fitted).amax() < 1e-10);
        let row = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_relative_eq!(fit.predict(&row).unwrap()[0], fit.beta[0].exp());
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let x = DMatrix::from_fn(20, 3, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(20, |i, _| i as f64 + 1.0);
        match fit_matrix(&x, &y, &labels(3), &GlmOptions::identity()) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["x2".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn null_model_has_zero_pseudo_r2() {
        let x = DMatrix::from_element(30, 1, 1.0);
        let y = DVector::from_fn(30, |i, _| 1.0 + (i % 7) as f64);
        for link in [Link::Log, Link::Identity] {
            let fit = fit_matrix(&x, &y, &labels(1), &GlmOptions { link, ..Default::default() }).unwrap();
            assert!(fit.pseudo_r2_cs.abs() < 1e-12);
            assert_relative_eq!(fit.fitted[0], y.mean(), epsilon = 1e-9);
        }
    }

    #[test]
    fn wald_unit_vector_reproduces_z() {
        let n = 60;
        let x = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => (i as f64 * 0.3).sin(),
            _ => (i % 4) as f64,
        });
        let y = DVector::from_fn(n, |i, _| (0.2 + 0.3 * x[(i, 1)] - 0.1 * x[(i, 2)]).exp() + 0.05 * ((i * 13 % 7) as f64 - 3.0));
        let fit = fit_matrix(&x, &y, &labels(3), &GlmOptions::default()).unwrap();
        for i in 0..3 {
            let mut c = DVector::zeros(3);
            c[i] = 1.0;
            let w = wald_linear_hypothesis(&fit, &c).unwrap();
            assert_eq!(w.z, fit.z[i]);
            assert_eq!(w.se, fit.se[i]);
        }
        assert!(wald_linear_hypothesis(&fit, &DVector::zeros(3)).is_err());
        // symmetric, non-negative diagonal
        assert!((&fit.vcov - fit.vcov.transpose()).amax() < 1e-12);
        assert!(fit.vcov.diagonal().iter().all(|&v| v >= 0.0));
        // score equations under the log link
        let r = &y - &fit.fitted;
        for j in 0..3 {
            let s: f64 = (0..n).map(|i| r[i] * fit.fitted[i] * x[(i, j)]).sum();
            assert!(s.abs() < 1e-8 * n as f64);
        }
    }

    #[test]
    fn table_layout() {
        let x = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(10, |i, _| 1.0 + 0.5 * i as f64 + if i % 2 == 0 { 0.1 } else { -0.1 });
        let fit = fit_matrix(&x, &y, &["(Intercept)".into(), "x".into()], &GlmOptions::identity()).unwrap();
        let mut buf = Vec::new();
        write_coefficients(&fit.coefficient_table(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), COEFFICIENT_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn predict_checks_width_and_zero_beta() {
        let x = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(10, |i, _| if i % 2 == 0 { 0.5 } else { -0.5 });
        let fit = fit_matrix(&x, &y, &labels(2), &GlmOptions::identity()).unwrap();
        assert!(fit.predict(&DMatrix::zeros(2, 3)).is_err());
        let mut zero = fit.clone();
        zero.beta = DVector::zeros(2);
        assert_eq!(zero.predict(&x).unwrap(), DVector::zeros(10));
    }
}
