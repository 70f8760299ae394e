//! Dense linear-algebra helpers shared by the certificate and composition checks.

use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative equality tolerance for `BQ = AP` style residuals.
pub const TOL_EQ: f64 = 1e-9;

/// Absolute slack allowed on a minimum eigenvalue before a PSD claim is rejected.
pub fn psd_tolerance(m: &Matrix) -> f64 {
    let scale = if m.is_empty() { 0.0 } else { m.amax() };
    1e-9 * (1.0 + scale)
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &Matrix, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

/// Smallest eigenvalue of the symmetric part of `m`. Empty matrices are vacuously PSD.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

/// Largest eigenvalue of the symmetric part of `m`. Empty matrices give `-inf`.
pub fn max_eigenvalue(m: &Matrix) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    symmetrize(m).symmetric_eigenvalues().max()
}

pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn pseudo_inverse(m: &Matrix) -> Matrix {
    if m.is_empty() {
        return Matrix::zeros(m.ncols(), m.nrows());
    }
    let eps = 1e-12 * (1.0 + m.amax());
    m.clone()
        .pseudo_inverse(eps)
        .expect("pseudo-inverse with non-negative epsilon")
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn is_zero(m: &Matrix) -> bool {
    m.iter().all(|v| *v == 0.0)
}

pub fn is_diagonal(m: &Matrix) -> bool {
    m.is_square()
        && m.row_iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, v)| i == j || *v == 0.0))
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Solve `Aᵀ X + X A = -I` for Hurwitz `A` through the Kronecker form.
/// Meant for subsystem-sized matrices.
pub fn lyapunov_identity_rhs(a: &Matrix) -> Option<Matrix> {
    let n = a.nrows();
    let eye = Matrix::identity(n, n);
    let at = a.transpose();
    let op = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = Vector::from_iterator(n * n, (-&eye).iter().copied());
    let sol = op.lu().solve(&rhs)?;
    let x = Matrix::from_column_slice(n, n, sol.as_slice());
    Some(symmetrize(&x))
}

/// Largest real part of the eigenvalues of a square matrix.
pub fn spectral_abscissa(a: &Matrix) -> f64 {
    if a.is_empty() {
        return f64::NEG_INFINITY;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// JSON representation of matrices as arrays of rows.
pub mod serde_matrix {
    use super::Matrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        from_rows(&rows).map_err(serde::de::Error::custom)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix, String> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Ok(Matrix::from_row_slice(rows.len(), ncols, &flat))
    }
}

pub mod serde_vector {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        let v: Vec<f64> = Vec::deserialize(d)?;
        Ok(Vector::from_vec(v))
    }
}

/// Convenience constructor for tests and generators.
pub fn mat(rows: usize, cols: usize, data: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, cols, data)
}

pub fn scalar(v: f64) -> Matrix {
    Matrix::from_element(1, 1, v)
}
