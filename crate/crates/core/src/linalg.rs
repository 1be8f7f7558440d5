//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Mass matrices with a condition estimate above this are treated as singular.
pub const SINGULAR_CONDITION: f64 = 1e12;
/// Smallest admissible singular value of the input coupling.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// Sorted eigenvalues of the symmetric part of `a`.
pub fn sym_eigenvalues(a: &Matrix) -> Vec<f64> {
    let sym = symmetrize(a);
    let mut ev: Vec<f64> = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

pub fn min_eigenvalue(a: &Matrix) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    sym_eigenvalues(a)[0]
}

pub fn max_eigenvalue(a: &Matrix) -> f64 {
    if a.is_empty() {
        return f64::NEG_INFINITY;
    }
    *sym_eigenvalues(a).last().unwrap()
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// Condition estimate of a symmetric positive definite matrix from its eigenvalues.
/// Returns infinity when the smallest eigenvalue is not positive.
pub fn spd_condition(a: &Matrix) -> f64 {
    let ev = sym_eigenvalues(a);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solve `a x = b` for a symmetric positive definite `a`.
///
/// `singular` builds the error reported when `a` is ill-conditioned, so callers can
/// distinguish the plant mass matrix from the desired one.
pub fn spd_solve(a: &Matrix, b: &Vector, singular: fn(f64) -> Error) -> Result<Vector> {
    let cond = spd_condition(a);
    if !cond.is_finite() || cond > SINGULAR_CONDITION {
        return Err(singular(cond));
    }
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.solve(b)),
        None => Err(singular(f64::INFINITY)),
    }
}

/// Matrix version of [`spd_solve`].
pub fn spd_solve_mat(a: &Matrix, b: &Matrix, singular: fn(f64) -> Error) -> Result<Matrix> {
    let cond = spd_condition(a);
    if !cond.is_finite() || cond > SINGULAR_CONDITION {
        return Err(singular(cond));
    }
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.solve(b)),
        None => Err(singular(f64::INFINITY)),
    }
}

pub(crate) fn singular_mass(condition: f64) -> Error {
    Error::SingularMass { condition }
}

pub(crate) fn singular_mass_d(condition: f64) -> Error {
    Error::SingularMassD { condition }
}

/// Left pseudo-inverse action `(GᵀG)⁻¹Gᵀ` of a full-column-rank `g`, via thin QR.
#[derive(Debug, Clone)]
pub struct LeftInverse {
    q: Matrix,
    r: Matrix,
}

impl LeftInverse {
    pub fn new(g: &Matrix) -> Result<Self> {
        if g.nrows() < g.ncols() {
            return Err(Error::Dimension(format!(
                "input coupling is {}x{}, need rows >= columns",
                g.nrows(),
                g.ncols()
            )));
        }
        let sigma_min = g.singular_values().min();
        if !(sigma_min >= RANK_TOLERANCE) {
            return Err(Error::RankDeficientG { sigma_min });
        }
        let qr = g.clone().qr();
        Ok(Self {
            q: qr.q(),
            r: qr.r(),
        })
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        let rhs = self.q.transpose() * v;
        self.r
            .solve_upper_triangular(&rhs)
            .expect("R is invertible for a full-rank coupling")
    }

    pub fn apply_mat(&self, v: &Matrix) -> Matrix {
        let rhs = self.q.transpose() * v;
        self.r
            .solve_upper_triangular(&rhs)
            .expect("R is invertible for a full-rank coupling")
    }

    /// The explicit `m x n` matrix, for norm computations only.
    pub fn matrix(&self) -> Matrix {
        self.apply_mat(&Matrix::identity(self.q.nrows(), self.q.nrows()))
    }
}

/// Orthonormal basis of the left null space of `g`, as the rows of an `(n-m) x n` matrix.
///
/// Uses the eigenvectors of `GGᵀ` belonging to its `n-m` smallest eigenvalues, i.e. the
/// left singular vectors of `G` outside its range.
pub fn left_annihilator(g: &Matrix) -> Matrix {
    let n = g.nrows();
    let m = g.ncols();
    let s = n.saturating_sub(m);
    if s == 0 {
        return Matrix::zeros(0, n);
    }
    let eig = SymmetricEigen::new(g * g.transpose());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut out = Matrix::zeros(s, n);
    for (row, &k) in idx.iter().take(s).enumerate() {
        out.set_row(row, &eig.eigenvectors.column(k).transpose());
    }
    out
}

/// Central-difference step with a relative scale and an absolute floor.
pub fn fd_step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-8)
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F: Fn(&Vector) -> f64>(f: F, x: &Vector) -> Vector {
    let mut grad = Vector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Central-difference Hessian built from a gradient callback, symmetrized.
pub fn fd_hessian<F: Fn(&Vector) -> Vector>(grad: F, x: &Vector) -> Matrix {
    let n = x.len();
    let mut hess = Matrix::zeros(n, n);
    let mut probe = x.clone();
    for i in 0..n {
        let h = 1e-5 * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = grad(&probe);
        probe[i] = x[i] - h;
        let down = grad(&probe);
        probe[i] = x[i];
        hess.set_column(i, &((up - down) / (2.0 * h)));
    }
    symmetrize(&hess)
}
