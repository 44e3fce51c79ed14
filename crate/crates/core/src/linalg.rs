//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Everything that needs a log-determinant or a solve against a symmetric
//! positive-definite matrix goes through [`SpdFactor`], so log-dets always
//! come from Cholesky diagonals.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative jitter used for the single retry when a factorization fails.
pub const RETRY_JITTER: f64 = 1e-12;

/// Cholesky factor `A = L Lᵀ` of a symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    n: usize,
    chol: Option<Cholesky<f64, Dyn>>,
    logdet: f64,
}

impl SpdFactor {
    /// Factor `a`, retrying once with `1e-12 * trace/n` added to the diagonal.
    pub fn new(a: &DMatrix<f64>, what: &str) -> Result<Self> {
        Self::with_jitter(a, what, RETRY_JITTER, 1)
    }

    /// Factor `a`; on failure add `eps * trace(a)/n * I`, doubling `eps`
    /// for up to `retries` further attempts.
    pub fn with_jitter(a: &DMatrix<f64>, what: &str, eps: f64, retries: usize) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!(
                "{what}: expected square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if n == 0 {
            return Ok(SpdFactor {
                n,
                chol: None,
                logdet: 0.0,
            });
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::NotPositiveDefinite(format!(
                "{what}: non-finite entries"
            )));
        }
        if let Some(f) = Self::try_factor(a.clone()) {
            return Ok(f);
        }
        let scale = (a.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
        let mut eps = eps;
        for _ in 0..retries {
            let mut b = a.clone();
            for i in 0..n {
                b[(i, i)] += eps * scale;
            }
            if let Some(f) = Self::try_factor(b) {
                return Ok(f);
            }
            eps *= 2.0;
        }
        Err(Error::NotPositiveDefinite(what.to_string()))
    }

    fn try_factor(a: DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        let chol = Cholesky::new(a)?;
        let l = chol.l_dirty();
        let mut logdet = 0.0;
        for i in 0..n {
            let d = l[(i, i)];
            if d <= 0.0 || !d.is_finite() {
                return None;
            }
            logdet += d.ln();
        }
        Some(SpdFactor {
            n,
            chol: Some(chol),
            logdet: 2.0 * logdet,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `ln det A`.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Lower-triangular `L` with `A = L Lᵀ`.
    pub fn lower(&self) -> DMatrix<f64> {
        match &self.chol {
            Some(c) => c.l(),
            None => DMatrix::zeros(0, 0),
        }
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        match &self.chol {
            Some(c) => c.solve(b),
            None => DVector::zeros(0),
        }
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.chol {
            Some(c) => c.solve(b),
            None => DMatrix::zeros(0, b.ncols()),
        }
    }

    /// `A⁻¹`, symmetrized.
    pub fn inverse(&self) -> DMatrix<f64> {
        match &self.chol {
            Some(c) => symmetrize(&c.inverse()),
            None => DMatrix::zeros(0, 0),
        }
    }

    /// `bᵀ A⁻¹ b`.
    pub fn quad_inv(&self, b: &DVector<f64>) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        b.dot(&self.solve_vec(b))
    }
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// `a bᵀ`.
pub fn outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    a * b.transpose()
}

/// Largest absolute entry, 0 for empty matrices.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Max entrywise asymmetry relative to the largest entry.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = max_abs(a);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

/// `|a - b| / max(1, |a|, |b|)`: relative error that degrades to absolute
/// error near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logdet_matches_determinant() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = SpdFactor::new(&a, "a").unwrap();
        assert!((f.logdet() - a.determinant().ln()).abs() < 1e-12);
        let inv = f.inverse();
        let id = &a * &inv;
        assert!((id - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn empty_matrix_is_trivially_spd() {
        let f = SpdFactor::new(&DMatrix::zeros(0, 0), "empty").unwrap();
        assert_eq!(f.logdet(), 0.0);
        assert_eq!(f.quad_inv(&DVector::zeros(0)), 0.0);
        assert_eq!(f.inverse().nrows(), 0);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            SpdFactor::new(&a, "a"),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(SpdFactor::with_jitter(&a, "a", 0.0, 0).is_err());
        assert!(SpdFactor::with_jitter(&a, "a", 1e-10, 8).is_ok());
        assert!(SpdFactor::new(&a, "a").is_ok());
    }
}
