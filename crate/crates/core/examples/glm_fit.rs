//! Gaussian GLM with log link by IRLS: a noiseless recovery, an identity-link
//! fit, and a Wald test of a linear combination.

use hubfair::glm::{fit_matrix, wald_linear_hypothesis, GlmOptions};
use nalgebra::{DMatrix, DVector};

fn main() -> hubfair::Result<()> {
    let xs: Vec<f64> = (0..=20).map(|i| i as f64 * 0.1).collect();
    let x = DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
    let labels = vec!["(Intercept)".to_string(), "x".to_string()];

    let y = DVector::from_fn(xs.len(), |i, _| (0.5 + 0.2 * xs[i]).exp());
    let fit = fit_matrix(&x, &y, &labels, &GlmOptions::default())?;
    println!(
        "log link, noiseless: beta = ({:.8}, {:.8}) in {} iterations",
        fit.beta[0], fit.beta[1], fit.iterations
    );

    // small deterministic wiggle so the standard errors are not zero
    let y = DVector::from_fn(xs.len(), |i, _| (0.5 + 0.2 * xs[i]).exp() + 0.03 * ((i * 7 % 5) as f64 - 2.0));
    let fit = fit_matrix(&x, &y, &labels, &GlmOptions::default())?;
    for row in fit.coefficient_table() {
        println!(
            "{:<12} exp(coef) {:.4}  se {:.4}  z {:>8.2}  95% CI [{:.4}, {:.4}]",
            row.term, row.exp_coef, row.se, row.z, row.ci_lo, row.ci_hi
        );
    }
    let w = wald_linear_hypothesis(&fit, &DVector::from_vec(vec![1.0, 1.0]))?;
    println!("intercept + slope: {:.4} (se {:.4}), exp {:.4}", w.estimate, w.se, w.exp_estimate);

    let ols = fit_matrix(&x, &y, &labels, &GlmOptions::identity())?;
    println!("identity link: beta = ({:.4}, {:.4}), R2 (Cox-Snell) {:.4}", ols.beta[0], ols.beta[1], ols.pseudo_r2_cs);
    Ok(())
}
