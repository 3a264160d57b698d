//! Small dense helpers for symmetric matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative eigenvalue cutoff used by [`pinv_sym`].
pub const PINV_RTOL: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric within a relative tolerance and without negative eigenvalues
/// beyond round-off.
pub fn is_symmetric_psd(m: &DMatrix<f64>) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    if m.nrows() == 0 {
        return true;
    }
    let scale = m.amax().max(1e-300);
    if (m - m.transpose()).amax() > 1e-9 * scale {
        return false;
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    eig.eigenvalues.iter().all(|&l| l >= -1e-9 * scale)
}

/// Ω with `ΩᵀΩ = Λ` for a symmetric PSD Λ, from its eigen-decomposition.
pub fn sqrt_information(lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(lambda));
    let s = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    s * eig.eigenvectors.transpose()
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix; eigenvalues below
/// `PINV_RTOL · max|λ|` are treated as zero.
pub fn pinv_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    pinv_sym_rtol(m, PINV_RTOL)
}

/// [`pinv_sym`] with an explicit relative eigenvalue cutoff.
pub fn pinv_sym_rtol(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.amax();
    if max == 0.0 {
        return DMatrix::zeros(n, n);
    }
    let cut = rtol * max;
    let inv = eig
        .eigenvalues
        .map(|l| if l.abs() > cut { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// Jitter magnitude relative to the largest diagonal entry.
pub fn jitter_for(m: &DMatrix<f64>) -> f64 {
    let d = m.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    1e-9 * d.max(1.0)
}

/// Solves `M x = b` for symmetric M by Cholesky, retrying once with a small
/// diagonal jitter. Returns `None` if M is not positive definite.
pub fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    cholesky_jittered(m).map(|c| c.solve(b))
}

/// Inverse of a symmetric positive definite matrix with the same jitter policy.
pub fn inverse_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    cholesky_jittered(m).map(|c| c.inverse())
}

fn cholesky_jittered(m: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let s = symmetrize(m);
    if !s.iter().all(|v| v.is_finite()) {
        return None;
    }
    if let Some(c) = s.clone().cholesky() {
        return Some(c);
    }
    let n = s.nrows();
    (s + DMatrix::identity(n, n) * jitter_for(m)).cholesky()
}
