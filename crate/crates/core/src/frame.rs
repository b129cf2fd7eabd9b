//! Orthonormal frames: points of the Stiefel manifold `S(d, r)`.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Residual allowed on `WᵀW − I` when validating a frame.
pub const FRAME_TOL: f64 = 1e-10;

/// A `d×r` matrix with orthonormal columns. `r = 0` is the zero subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame(DMatrix<f64>);

impl Frame {
    /// Validates orthonormality of the columns.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let r = orthonormality_residual(&m);
        if r > FRAME_TOL {
            return Err(Error::NotOrthonormal(r));
        }
        Ok(Frame(m))
    }

    /// Orthonormalizes the columns by thin QR with a positive-diagonal `R`.
    pub fn orthonormalize(m: &DMatrix<f64>) -> Self {
        Frame(qr_positive(m))
    }

    pub fn identity(d: usize) -> Self {
        Frame(DMatrix::identity(d, d))
    }

    /// The first `r` canonical basis vectors of `R^d`.
    pub fn canonical(d: usize, r: usize) -> Self {
        Frame(DMatrix::identity(d, r))
    }

    pub fn zero(d: usize) -> Self {
        Frame(DMatrix::zeros(d, 0))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn ambient_dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn rank(&self) -> usize {
        self.0.ncols()
    }

    /// `WWᵀ`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }

    /// `‖WᵀW − I‖_max`.
    pub fn residual(&self) -> f64 {
        orthonormality_residual(&self.0)
    }

    /// An orthogonal `d×d` matrix whose first `r` columns are `W`.
    ///
    /// The complement is obtained by Gram–Schmidt against the canonical
    /// basis in index order, which makes it deterministic.
    pub fn completed(&self) -> DMatrix<f64> {
        let d = self.ambient_dim();
        let mut cols: Vec<nalgebra::DVector<f64>> =
            self.0.column_iter().map(|c| c.into_owned()).collect();
        for e in 0..d {
            if cols.len() == d {
                break;
            }
            let mut v = nalgebra::DVector::<f64>::zeros(d);
            v[e] = 1.0;
            // Two passes of classical Gram–Schmidt.
            for _ in 0..2 {
                for c in &cols {
                    let p = c.dot(&v);
                    v.axpy(-p, c, 1.0);
                }
            }
            let n = v.norm();
            if n > 1e-6 {
                cols.push(v / n);
            }
        }
        DMatrix::from_columns(&cols)
    }

    /// Frame spanned by the selected columns.
    pub fn select_columns(&self, idx: &[usize]) -> Frame {
        let cols: Vec<_> = idx.iter().map(|&i| self.0.column(i).into_owned()).collect();
        if cols.is_empty() {
            return Frame::zero(self.ambient_dim());
        }
        Frame(DMatrix::from_columns(&cols))
    }

    /// `‖WWᵀ − W'W'ᵀ‖_F²`.
    pub fn projector_distance_sq(&self, other: &Frame) -> f64 {
        (self.projector() - other.projector()).norm_squared()
    }

    /// True when every column of `self` lies in the span of `other`.
    pub fn contained_in(&self, other: &Frame, tol: f64) -> bool {
        let p = other.projector();
        (&self.0 - &p * &self.0).norm() <= tol
    }
}

fn orthonormality_residual(m: &DMatrix<f64>) -> f64 {
    let g = m.transpose() * m;
    let r = m.ncols();
    (g - DMatrix::identity(r, r)).amax()
}

/// Thin QR factor `Q` with the signs fixed so that `diag(R) ≥ 0`.
pub fn qr_positive(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols.min(q.ncols()) {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
