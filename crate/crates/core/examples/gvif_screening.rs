//! Generalized variance inflation and the iterative removal of collinear
//! controls.

use hubfair::design::{DesignMatrix, Term, TermKind};
use hubfair::diagnostics::{gvif, screen_collinearity, GVIF_THRESHOLD};
use nalgebra::{DMatrix, DVector};

fn main() -> hubfair::Result<()> {
    let n = 200;
    let wave = |i: usize, k: f64| ((i as f64) * k).sin();
    // x1 is the variable of interest; c1 nearly duplicates it, c2 is unrelated
    let x = DMatrix::from_fn(n, 4, |i, j| match j {
        0 => 1.0,
        1 => wave(i, 0.37),
        2 => wave(i, 0.37) + 0.15 * wave(i, 1.91),
        _ => wave(i, 0.73),
    });
    let labels: Vec<String> = ["(Intercept)", "x1", "c1", "c2"].map(String::from).to_vec();
    let kinds = [TermKind::Intercept, TermKind::Sensitive, TermKind::Control, TermKind::Control];
    let terms = labels
        .iter()
        .zip(kinds)
        .enumerate()
        .map(|(j, (name, kind))| Term {
            name: name.clone(),
            kind,
            columns: vec![j],
        })
        .collect();
    let design = DesignMatrix::from_columns(x, DVector::from_element(n, 1.0), labels, terms)?;

    for e in &gvif(&design)?.entries {
        println!("{:<4} df {}  GVIF {:>8.3}  adjusted {:.3}", e.term, e.df, e.gvif, e.adjusted);
    }
    let protected = vec!["x1".to_string()];
    let screened = screen_collinearity(&design, GVIF_THRESHOLD, &protected)?;
    for r in &screened.removed {
        println!("step {}: removed {} (adjusted GVIF {:.3})", r.step, r.term, r.adjusted);
    }
    println!("kept: {:?}", screened.design.column_labels);
    Ok(())
}
