//! Weighted least squares through a blocked (tall-skinny) QR factorization.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Fixed so that results do not depend on the worker count.
const BLOCK_ROWS: usize = 4096;

/// Relative pivot size below which a column is treated as dependent on the
/// preceding ones.
pub(crate) const RANK_TOL: f64 = 1e-9;

/// R factor of `sqrt(W) [X | z]`.
pub(crate) struct WeightedQr {
    /// Upper-triangular p x p factor of `sqrt(W) X`.
    pub r: DMatrix<f64>,
    /// `Q' sqrt(W) z`.
    pub qtz: DVector<f64>,
    /// Euclidean norm of each weighted column of X.
    pub col_norms: Vec<f64>,
}

fn block_r(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>, lo: usize, hi: usize) -> (DMatrix<f64>, Vec<f64>) {
    let p = x.ncols();
    let m = hi - lo;
    let mut a = DMatrix::zeros(m, p + 1);
    let mut sq = vec![0.0; p];
    for i in 0..m {
        let sw = w[lo + i].sqrt();
        for j in 0..p {
            let v = sw * x[(lo + i, j)];
            a[(i, j)] = v;
            sq[j] += v * v;
        }
        a[(i, p)] = sw * z[lo + i];
    }
    (a.qr().r(), sq)
}

/// Factorizes `sqrt(W) [X | z]` block by block and reduces the stacked R
/// factors with one more QR.
pub(crate) fn weighted_qr(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> WeightedQr {
    let n = x.nrows();
    let p = x.ncols();
    let bounds: Vec<(usize, usize)> = (0..n).step_by(BLOCK_ROWS).map(|lo| (lo, (lo + BLOCK_ROWS).min(n))).collect();
    let parts: Vec<(DMatrix<f64>, Vec<f64>)> =
        bounds.par_iter().map(|&(lo, hi)| block_r(x, w, z, lo, hi)).collect();
    let mut sq = vec![0.0; p];
    let rows: usize = parts.iter().map(|(r, _)| r.nrows()).sum();
    let mut stacked = DMatrix::zeros(rows, p + 1);
    let mut at = 0;
    for (r, s) in &parts {
        stacked.rows_mut(at, r.nrows()).copy_from(r);
        at += r.nrows();
        for j in 0..p {
            sq[j] += s[j];
        }
    }
    let full = if parts.len() == 1 { parts.into_iter().next().unwrap().0 } else { stacked.qr().r() };
    let mut r = DMatrix::zeros(p, p);
    let k = full.nrows().min(p);
    r.view_mut((0, 0), (k, p)).copy_from(&full.view((0, 0), (k, p)));
    let mut qtz = DVector::zeros(p);
    for i in 0..k {
        qtz[i] = full[(i, p)];
    }
    WeightedQr {
        r,
        qtz,
        col_norms: sq.into_iter().map(f64::sqrt).collect(),
    }
}

impl WeightedQr {
    /// Indices of columns whose pivot is negligible relative to the column
    /// norm.
    pub fn dependent_columns(&self) -> Vec<usize> {
        (0..self.r.ncols())
            .filter(|&j| {
                let norm = self.col_norms[j];
                norm == 0.0 || self.r[(j, j)].abs() <= RANK_TOL * norm
            })
            .collect()
    }

    pub fn solve(&self) -> DVector<f64> {
        self.r
            .solve_upper_triangular(&self.qtz)
            .expect("full-rank triangular factor")
    }

    /// `R^{-1}`, so that `(X'WX)^{-1} = R^{-1} R^{-T}`.
    pub fn r_inverse(&self) -> DMatrix<f64> {
        let p = self.r.ncols();
        self.r
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .expect("full-rank triangular factor")
    }
}

/// `(X'WX)^{-1}` from `R^{-1}`, symmetrized.
pub(crate) fn unscaled_covariance(r_inv: &DMatrix<f64>) -> DMatrix<f64> {
    let v = r_inv * r_inv.transpose();
    (&v + v.transpose()) * 0.5
}

/// Diagonal of the weighted hat matrix: `h_i = w_i x_i' (X'WX)^{-1} x_i`.
pub(crate) fn hat_diagonal(x: &DMatrix<f64>, w: &DVector<f64>, r_inv: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let h: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sw = w[i].sqrt();
            let mut total = 0.0;
            for k in 0..p {
                let mut acc = 0.0;
                for j in 0..=k {
                    acc += x[(i, j)] * r_inv[(j, k)];
                }
                total += (sw * acc) * (sw * acc);
            }
            total
        })
        .collect();
    DVector::from_vec(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocked_matches_single_block() {
        let n = 3 * BLOCK_ROWS + 17;
        let x = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => (i as f64 * 0.37).sin(),
            _ => ((i * 7 % 13) as f64).sqrt(),
        });
        let z = DVector::from_fn(n, |i, _| (i as f64 * 0.11).cos() + 2.0);
        let w = DVector::from_fn(n, |i, _| 1.0 + (i % 5) as f64);
        let qr = weighted_qr(&x, &w, &z);
        let beta = qr.solve();
        // normal equations oracle
        let wx = DMatrix::from_fn(n, 3, |i, j| w[i] * x[(i, j)]);
        let xtwx = x.transpose() * &wx;
        let xtwz = wx.transpose() * &z;
        let oracle = xtwx.clone().lu().solve(&xtwz).unwrap();
        assert!((beta - oracle).amax() < 1e-10);
        let v = unscaled_covariance(&qr.r_inverse());
        let inv = xtwx.try_inverse().unwrap();
        assert!((v - inv).amax() < 1e-10);
    }

    #[test]
    fn duplicate_column_is_flagged() {
        let x = DMatrix::from_fn(50, 3, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let w = DVector::from_element(50, 1.0);
        let z = DVector::from_element(50, 1.0);
        assert_eq!(weighted_qr(&x, &w, &z).dependent_columns(), vec![2]);
    }
}
