//! Port-Hamiltonian model of a mechanical system with physical damping:
//!
//! ```text
//! q̇ =  ∇_p H
//! ṗ = -∇_q H - R(q) ∇_p H + G(q) τ,      H(q,p) = ½ pᵀ M(q)⁻¹ p + V(q)
//! ```

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, fd_gradient, singular_mass, spd_solve, Matrix, Vector};
use crate::sampling::{halton, Workspace};

pub type ScalarField = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;
/// Function of configuration and momentum returning a vector.
pub type PhaseVectorField = Arc<dyn Fn(&Vector, &Vector) -> Vector + Send + Sync>;
/// Function of configuration and momentum returning a matrix.
pub type PhaseMatrixField = Arc<dyn Fn(&Vector, &Vector) -> Matrix + Send + Sync>;

/// Generalized positions and momenta (`p = M(q) q̇`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigState {
    pub q: Vector,
    pub p: Vector,
}

impl ConfigState {
    pub fn new(q: Vector, p: Vector) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::Dimension(format!(
                "q has {} entries, p has {}",
                q.len(),
                p.len()
            )));
        }
        if q.iter().chain(p.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "state contains non-finite entries".into(),
            ));
        }
        Ok(Self { q, p })
    }

    pub fn from_slices(q: &[f64], p: &[f64]) -> Result<Self> {
        Self::new(Vector::from_column_slice(q), Vector::from_column_slice(p))
    }

    /// Split a stacked `(q, p)` vector.
    pub fn from_stacked(x: &Vector) -> Self {
        let n = x.len() / 2;
        Self {
            q: x.rows(0, n).into_owned(),
            p: x.rows(n, n).into_owned(),
        }
    }

    pub fn stacked(&self) -> Vector {
        let n = self.q.len();
        let mut x = Vector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.q);
        x.rows_mut(n, n).copy_from(&self.p);
        x
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
}

/// Open-loop plant. All fields are closures over the model parameters; analytic
/// gradients are optional and fall back to central differences.
#[derive(Clone)]
pub struct MechanicalSystem {
    n: usize,
    m: usize,
    mass: MatrixField,
    potential: ScalarField,
    potential_grad: Option<VectorField>,
    kinetic_grad: Option<PhaseVectorField>,
    input_coupling: MatrixField,
    annihilator: Option<MatrixField>,
    damping: Option<MatrixField>,
    workspace: Workspace,
}

impl fmt::Debug for MechanicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MechanicalSystem")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("analytic_potential_grad", &self.potential_grad.is_some())
            .field("analytic_kinetic_grad", &self.kinetic_grad.is_some())
            .field("workspace", &self.workspace)
            .finish()
    }
}

impl MechanicalSystem {
    pub fn new(
        n: usize,
        m: usize,
        mass: MatrixField,
        potential: ScalarField,
        input_coupling: MatrixField,
        workspace: Workspace,
    ) -> Result<Self> {
        if n == 0 || m == 0 || m > n {
            return Err(Error::Dimension(format!(
                "need 0 < m <= n, got n={n}, m={m}"
            )));
        }
        if workspace.dim() != n {
            return Err(Error::Dimension(format!(
                "workspace has {} axes, system has {n}",
                workspace.dim()
            )));
        }
        Ok(Self {
            n,
            m,
            mass,
            potential,
            potential_grad: None,
            kinetic_grad: None,
            input_coupling,
            annihilator: None,
            damping: None,
            workspace,
        })
    }

    pub fn with_potential_grad(mut self, grad: VectorField) -> Self {
        self.potential_grad = Some(grad);
        self
    }

    /// Analytic `∇_q K(q,p)` with `K = ½ pᵀ M⁻¹ p`.
    pub fn with_kinetic_grad(mut self, grad: PhaseVectorField) -> Self {
        self.kinetic_grad = Some(grad);
        self
    }

    pub fn with_damping(mut self, damping: MatrixField) -> Self {
        self.damping = Some(damping);
        self
    }

    /// Closed-form left annihilator of `G(q)`, rows spanning its left null space.
    pub fn with_annihilator(mut self, annihilator: MatrixField) -> Self {
        self.annihilator = Some(annihilator);
        self
    }

    pub fn with_workspace(mut self, workspace: Workspace) -> Self {
        assert_eq!(workspace.dim(), self.n);
        self.workspace = workspace;
        self
    }

    pub fn dof(&self) -> usize {
        self.n
    }

    pub fn inputs(&self) -> usize {
        self.m
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn has_analytic_gradients(&self) -> bool {
        self.potential_grad.is_some() && self.kinetic_grad.is_some()
    }

    pub fn mass(&self, q: &Vector) -> Matrix {
        (self.mass)(q)
    }

    pub fn potential(&self, q: &Vector) -> f64 {
        (self.potential)(q)
    }

    pub fn potential_grad(&self, q: &Vector) -> Vector {
        match &self.potential_grad {
            Some(g) => g(q),
            None => fd_gradient(|x| (self.potential)(x), q),
        }
    }

    /// Finite-difference `∇_q V`, independent of any analytic gradient.
    pub fn potential_grad_fd(&self, q: &Vector) -> Vector {
        fd_gradient(|x| (self.potential)(x), q)
    }

    pub fn kinetic_energy(&self, q: &Vector, p: &Vector) -> Result<f64> {
        let v = spd_solve(&self.mass(q), p, singular_mass)?;
        Ok(0.5 * p.dot(&v))
    }

    /// `∇_q K` at fixed momentum.
    pub fn kinetic_grad(&self, q: &Vector, p: &Vector) -> Result<Vector> {
        match &self.kinetic_grad {
            Some(g) => Ok(g(q, p)),
            None => self.kinetic_grad_fd(q, p),
        }
    }

    pub fn kinetic_grad_fd(&self, q: &Vector, p: &Vector) -> Result<Vector> {
        // surface singular mass errors before differencing
        self.kinetic_energy(q, p)?;
        Ok(fd_gradient(
            |x| self.kinetic_energy(x, p).unwrap_or(f64::NAN),
            q,
        ))
    }

    pub fn input_coupling(&self, q: &Vector) -> Matrix {
        (self.input_coupling)(q)
    }

    /// Rows span the left null space of `G(q)`; empty when fully actuated.
    pub fn annihilator(&self, q: &Vector) -> Matrix {
        match &self.annihilator {
            Some(a) => a(q),
            None => linalg::left_annihilator(&self.input_coupling(q)),
        }
    }

    /// Numerical (SVD-based) annihilator even when a closed form is supplied.
    pub fn annihilator_numeric(&self, q: &Vector) -> Matrix {
        linalg::left_annihilator(&self.input_coupling(q))
    }

    pub fn damping(&self, q: &Vector) -> Matrix {
        match &self.damping {
            Some(r) => r(q),
            None => Matrix::zeros(self.n, self.n),
        }
    }

    /// `∇_p H = M⁻¹ p`.
    pub fn velocity(&self, q: &Vector, p: &Vector) -> Result<Vector> {
        spd_solve(&self.mass(q), p, singular_mass)
    }

    pub fn total_energy(&self, s: &ConfigState) -> Result<EnergyRecord> {
        self.check_dims(s)?;
        let kinetic = self.kinetic_energy(&s.q, &s.p)?;
        let potential = self.potential(&s.q);
        Ok(EnergyRecord {
            kinetic,
            potential,
            total: kinetic + potential,
        })
    }

    /// `(q̇, ṗ)` of the open-loop dynamics under input `tau`, stacked.
    pub fn open_loop_vector_field(&self, s: &ConfigState, tau: &Vector) -> Result<Vector> {
        self.check_dims(s)?;
        if tau.len() != self.m {
            return Err(Error::Dimension(format!(
                "input has {} entries, expected {}",
                tau.len(),
                self.m
            )));
        }
        let (q, p) = (&s.q, &s.p);
        let qdot = self.velocity(q, p)?;
        let grad_q = self.potential_grad(q) + self.kinetic_grad(q, p)?;
        let pdot = -grad_q - self.damping(q) * &qdot + self.input_coupling(q) * tau;
        let mut out = Vector::zeros(2 * self.n);
        out.rows_mut(0, self.n).copy_from(&qdot);
        out.rows_mut(self.n, self.n).copy_from(&pdot);
        Ok(out)
    }

    pub fn check_dims(&self, s: &ConfigState) -> Result<()> {
        if s.q.len() != self.n || s.p.len() != self.n {
            return Err(Error::Dimension(format!(
                "state has (q,p) lengths ({}, {}), system has n={}",
                s.q.len(),
                s.p.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// Check the structural invariants at `samples` workspace points: `M` symmetric positive
    /// definite, `R` symmetric positive semi-definite, `G` of full column rank, and analytic
    /// gradients consistent with finite differences.
    pub fn validate(&self, samples: usize) -> Result<()> {
        for k in 1..=samples as u64 {
            let u = halton(k, 2 * self.n);
            let q = self.workspace.map_unit(&u[..self.n]);
            let p = self.workspace.map_unit(&u[self.n..]).map(|x| x.tanh());
            let mass = self.mass(&q);
            if (&mass - mass.transpose()).abs().max() > 1e-10 * mass.abs().max().max(1.0) {
                return Err(Error::Invariant(format!(
                    "M(q) not symmetric at q={:?}",
                    q.as_slice()
                )));
            }
            if linalg::min_eigenvalue(&mass) <= 0.0 {
                return Err(Error::Invariant(format!(
                    "M(q) not positive definite at q={:?}",
                    q.as_slice()
                )));
            }
            let r = self.damping(&q);
            if (&r - r.transpose()).abs().max() > 1e-10 || linalg::min_eigenvalue(&r) < -1e-12 {
                return Err(Error::Invariant(format!(
                    "R(q) not symmetric PSD at q={:?}",
                    q.as_slice()
                )));
            }
            let g = self.input_coupling(&q);
            let sigma_min = g.singular_values().min();
            if g.shape() != (self.n, self.m) || sigma_min < linalg::RANK_TOLERANCE {
                return Err(Error::RankDeficientG { sigma_min });
            }
            if self.potential_grad.is_some() {
                let a = self.potential_grad(&q);
                let b = self.potential_grad_fd(&q);
                if (&a - &b).norm() > 1e-5 * a.norm().max(1.0) {
                    return Err(Error::Invariant(format!(
                        "∇V mismatch at q={:?}",
                        q.as_slice()
                    )));
                }
            }
            if self.kinetic_grad.is_some() {
                let a = self.kinetic_grad(&q, &p)?;
                let b = self.kinetic_grad_fd(&q, &p)?;
                if (&a - &b).norm() > 1e-5 * a.norm().max(1.0) {
                    return Err(Error::Invariant(format!(
                        "∇K mismatch at q={:?}",
                        q.as_slice()
                    )));
                }
            }
        }
        Ok(())
    }
}
