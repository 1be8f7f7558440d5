//! Sampled verification of the kinetic and potential matching equations, the assigned
//! damping `R₂`, and the closed-loop energy balance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{lambda_matrix, TargetDynamics};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::sampling::{halton, unit_to_ball, Workspace};
use crate::system::{ConfigState, MechanicalSystem};

/// Residual threshold when both sides supply analytic gradients.
pub const ANALYTIC_THRESHOLD: f64 = 1e-6;
/// Residual threshold when any gradient comes from finite differences.
pub const FINITE_DIFFERENCE_THRESHOLD: f64 = 1e-3;

/// `G⊥ {∇_q(pᵀM⁻¹p) − M_dM⁻¹∇_q(pᵀM_d⁻¹p) + 2J₂M_d⁻¹p}`, one entry per unactuated direction.
pub fn kinetic_pde_residual(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    q: &Vector,
    p: &Vector,
) -> Result<Vector> {
    let annihilator = sys.annihilator(q);
    if annihilator.nrows() == 0 {
        return Ok(Vector::zeros(0));
    }
    let lam = lambda_matrix(sys, tgt, q)?;
    let ptilde = tgt.ptilde(q, p)?;
    let inner = sys.kinetic_grad(q, p)? * 2.0 - &lam * tgt.kinetic_d_grad(q, p)? * 2.0
        + tgt.j2(q, p) * &ptilde * 2.0;
    Ok(annihilator * inner)
}

/// `G⊥ {∇_q V − M_dM⁻¹∇_q V_d}`.
pub fn potential_pde_residual(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    q: &Vector,
) -> Result<Vector> {
    let annihilator = sys.annihilator(q);
    if annihilator.nrows() == 0 {
        return Ok(Vector::zeros(0));
    }
    let lam = lambda_matrix(sys, tgt, q)?;
    Ok(annihilator * (sys.potential_grad(q) - lam * tgt.potential_d_grad(q)))
}

/// `RM⁻¹M_d + M_dM⁻¹R`, symmetric by construction.
pub fn damping_product(sys: &MechanicalSystem, tgt: &TargetDynamics, q: &Vector) -> Result<Matrix> {
    let lam = lambda_matrix(sys, tgt, q)?;
    let x = &lam * sys.damping(q);
    Ok(linalg::symmetrize(&(&x + x.transpose())))
}

/// `R₂ = ½(RM⁻¹M_d + M_dM⁻¹R) + G K_v Gᵀ`, symmetrized after assembly.
pub fn build_r2(sys: &MechanicalSystem, tgt: &TargetDynamics, q: &Vector) -> Result<Matrix> {
    build_r2_with_gain(sys, tgt, q, tgt.damping_gain())
}

pub fn build_r2_with_gain(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    q: &Vector,
    kv: &Matrix,
) -> Result<Matrix> {
    let g = sys.input_coupling(q);
    let r2 = damping_product(sys, tgt, q)? * 0.5 + &g * kv * g.transpose();
    Ok(linalg::symmetrize(&r2))
}

/// `G⊥ (RM⁻¹M_d + M_dM⁻¹R) G⊥ᵀ`; positive definiteness makes `R₂` positive definite.
pub fn condition5_matrix(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    q: &Vector,
) -> Result<Matrix> {
    let a = sys.annihilator(q);
    Ok(linalg::symmetrize(
        &(&a * damping_product(sys, tgt, q)? * a.transpose()),
    ))
}

/// `∇_q H_d = ∇V_d + ∇_q K_d`.
pub fn hd_grad_q(tgt: &TargetDynamics, q: &Vector, p: &Vector) -> Result<Vector> {
    Ok(tgt.potential_d_grad(q) + tgt.kinetic_d_grad(q, p)?)
}

/// Target closed-loop field
/// `q̇ = M⁻¹M_d∇_pH_d`, `ṗ = −M_dM⁻¹∇_qH_d + (J₂ − R₂)∇_pH_d`, stacked.
pub fn closed_loop_vector_field(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    s: &ConfigState,
) -> Result<Vector> {
    sys.check_dims(s)?;
    let (q, p) = (&s.q, &s.p);
    let n = q.len();
    let ptilde = tgt.ptilde(q, p)?;
    let qdot = sys.velocity(q, p)?;
    let lam = lambda_matrix(sys, tgt, q)?;
    let pdot = -(&lam * hd_grad_q(tgt, q, p)?) + (tgt.j2(q, p) - build_r2(sys, tgt, q)?) * &ptilde;
    let mut out = Vector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(&qdot);
    out.rows_mut(n, n).copy_from(&pdot);
    Ok(out)
}

/// `dH_d/dt` along an arbitrary stacked field `(q̇, ṗ)`.
pub fn hd_derivative_along(tgt: &TargetDynamics, s: &ConfigState, field: &Vector) -> Result<f64> {
    let n = s.q.len();
    let grad_q = hd_grad_q(tgt, &s.q, &s.p)?;
    let ptilde = tgt.ptilde(&s.q, &s.p)?;
    Ok(grad_q.dot(&field.rows(0, n)) + ptilde.dot(&field.rows(n, n)))
}

/// `−p̃ᵀ R₂ p̃`.
pub fn hd_rate(sys: &MechanicalSystem, tgt: &TargetDynamics, s: &ConfigState) -> Result<f64> {
    let ptilde = tgt.ptilde(&s.q, &s.p)?;
    Ok(-ptilde.dot(&(build_r2(sys, tgt, &s.q)? * &ptilde)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingConfig {
    pub samples: usize,
    pub momentum_radius: f64,
    /// Sampling box; defaults to the system workspace.
    pub region: Option<Workspace>,
    /// Pass threshold; defaults by gradient source.
    pub threshold: Option<f64>,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            momentum_radius: 2.0,
            region: None,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSource {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingReport {
    pub kinetic_residual_max: f64,
    pub potential_residual_max: f64,
    pub r2_min_eig: f64,
    /// Absent for fully actuated systems.
    pub condition5_min_eig: Option<f64>,
    pub annihilator_leak_max: f64,
    pub equilibrium_grad_norm: f64,
    pub equilibrium_hessian_min_eig: f64,
    pub equilibrium_ok: bool,
    pub samples: usize,
    pub gradient_source: GradientSource,
    pub threshold: f64,
    pub passed: bool,
}

struct SampleResult {
    kinetic: f64,
    potential: f64,
    r2_min: f64,
    cond5_min: f64,
    leak: f64,
}

/// Sample the matching equations over the region × momentum ball with a Halton sequence.
pub fn verify_matching(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    cfg: &MatchingConfig,
) -> Result<MatchingReport> {
    if cfg.samples == 0 {
        return Err(Error::InvalidArgument(
            "matching verification needs at least one sample".into(),
        ));
    }
    let n = sys.dof();
    let region = cfg
        .region
        .clone()
        .unwrap_or_else(|| sys.workspace().clone());
    let results: Vec<SampleResult> = (1..=cfg.samples as u64)
        .into_par_iter()
        .map(|k| {
            let u = halton(k, 2 * n + 1);
            let q = region.map_unit(&u[..n]);
            let p = unit_to_ball(&u[n..], cfg.momentum_radius);
            let kinetic = kinetic_pde_residual(sys, tgt, &q, &p)?.norm();
            let potential = potential_pde_residual(sys, tgt, &q)?.norm();
            let r2_min = linalg::min_eigenvalue(&build_r2(sys, tgt, &q)?);
            let c5 = condition5_matrix(sys, tgt, &q)?;
            let cond5_min = linalg::min_eigenvalue(&c5);
            let leak = (sys.annihilator(&q) * sys.input_coupling(&q)).abs().max();
            Ok(SampleResult {
                kinetic,
                potential,
                r2_min,
                cond5_min,
                leak,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let fold = |f: fn(&SampleResult) -> f64, init: f64, op: fn(f64, f64) -> f64| {
        results.iter().map(f).fold(init, op)
    };
    let kinetic_residual_max = fold(|r| r.kinetic, 0.0, f64::max);
    let potential_residual_max = fold(|r| r.potential, 0.0, f64::max);
    let r2_min_eig = fold(|r| r.r2_min, f64::INFINITY, f64::min);
    let cond5 = fold(|r| r.cond5_min, f64::INFINITY, f64::min);
    let annihilator_leak_max = fold(|r| r.leak, 0.0, f64::max);

    let (equilibrium_grad_norm, equilibrium_hessian_min_eig) = tgt.equilibrium_check();
    let equilibrium_ok = equilibrium_grad_norm < 1e-8 && equilibrium_hessian_min_eig > 0.0;
    let gradient_source = if sys.has_analytic_gradients() && tgt.has_analytic_gradients() {
        GradientSource::Analytic
    } else {
        GradientSource::FiniteDifference
    };
    let threshold = cfg.threshold.unwrap_or(match gradient_source {
        GradientSource::Analytic => ANALYTIC_THRESHOLD,
        GradientSource::FiniteDifference => FINITE_DIFFERENCE_THRESHOLD,
    });
    let passed =
        kinetic_residual_max < threshold && potential_residual_max < threshold && equilibrium_ok;
    Ok(MatchingReport {
        kinetic_residual_max,
        potential_residual_max,
        r2_min_eig,
        condition5_min_eig: if sys.dof() > sys.inputs() {
            Some(cond5)
        } else {
            None
        },
        annihilator_leak_max,
        equilibrium_grad_norm,
        equilibrium_hessian_min_eig,
        equilibrium_ok,
        samples: cfg.samples,
        gradient_source,
        threshold,
        passed,
    })
}
