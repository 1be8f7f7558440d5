//! Ball and beam. `q₁` is the ball position along the beam, `q₂` the beam angle and the
//! single input is the beam torque.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundConstants, SampleSpec};
use crate::controller::TargetDynamics;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::sampling::Workspace;
use crate::system::{ConfigState, MechanicalSystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BallBeamParams {
    /// Half beam length.
    pub l: f64,
    pub g: f64,
    /// Diagonal of the physical damping `R`.
    pub r: [f64; 2],
    pub kp: f64,
    pub kv: f64,
    /// Workspace half-widths `(|q₁|, |q₂|)`.
    pub workspace: [f64; 2],
    /// Half-widths of the box the bound constants are taken over.
    pub bound_region: [f64; 2],
}

impl Default for BallBeamParams {
    fn default() -> Self {
        Self {
            l: 2.0,
            g: 9.81,
            r: [0.2, 0.1],
            kp: 5.0,
            kv: 5.0,
            workspace: [2.0, 1.0],
            bound_region: [0.96, 1.0],
        }
    }
}

impl BallBeamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "beam half length must be positive, got {}",
                self.l
            )));
        }
        if !(self.kp > 0.0 && self.kv > 0.0) {
            return Err(Error::InvalidArgument(
                "k_p and k_v must be positive".into(),
            ));
        }
        if self.r.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidArgument(
                "damping entries must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn initial_state() -> ConfigState {
        ConfigState::from_slices(&[0.5, -0.1], &[0.1, 0.0]).expect("finite")
    }

    /// Constant-estimation setup: the bound box intersected with the sublevel set of the
    /// initial energy.
    pub fn bound_spec(&self, hd_t0: f64) -> SampleSpec {
        SampleSpec {
            region: Some(Workspace::symmetric(&self.bound_region)),
            energy_cap: Some(hd_t0),
            ..SampleSpec::default()
        }
    }
}

/// Constant values reported for this design with the default parameters, in the order
/// `c_V₂, c_Vd, c_Λ₂, c_Md, c_J, λ_max{M_d⁻¹}, λ_min{M_d⁻¹}`.
pub const REFERENCE_CONSTANTS: [(&str, f64); 7] = [
    ("c_V2", 10.4),
    ("c_Vd", 2.4),
    ("c_Lambda2", 6.0),
    ("c_Md", 0.9),
    ("c_J", 10.4),
    ("lam_max_MdInv", 0.82),
    ("lam_min_MdInv", 0.06),
];

/// Energy at the reference initial state and the reported control-effort bound.
pub const REFERENCE_HD0: f64 = 0.24;
pub const REFERENCE_TAU_BOUND: f64 = 20.0;

/// Reference constants in place of the estimated ones, keeping the structural fields
/// (`G` norms, eigen-extremes of `R₂` and `K_v`, `μ`) of `estimated`.
pub fn reference_bound_constants(estimated: &BoundConstants) -> BoundConstants {
    let r = |name: &str| {
        REFERENCE_CONSTANTS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
            .expect("listed reference constant")
    };
    BoundConstants {
        c_v: vec![r("c_V2")],
        c_vd: r("c_Vd"),
        c_m: vec![0.0],
        c_md: r("c_Md"),
        c_j: r("c_J"),
        c_lambda: vec![r("c_Lambda2")],
        lam_max_md_inv: r("lam_max_MdInv"),
        lam_min_md_inv: r("lam_min_MdInv"),
        ..estimated.clone()
    }
}

/// `J₂ = [[0, j], [−j, 0]]` with `j = q₁(p₁ − √2 a^{-1/2} p₂)`, `a = L² + q₁²`.
pub fn j2_entry(l: f64, q: &Vector, p: &Vector) -> f64 {
    let a = l * l + q[0] * q[0];
    q[0] * (p[0] - SQRT_2 / a.sqrt() * p[1])
}

pub fn make_ball_beam(params: &BallBeamParams) -> Result<(MechanicalSystem, TargetDynamics)> {
    params.validate()?;
    let BallBeamParams {
        l, g, r, kp, kv, ..
    } = params.clone();
    let l2 = l * l;

    let sys = MechanicalSystem::new(
        2,
        1,
        Arc::new(move |q: &Vector| {
            Matrix::from_diagonal(&Vector::from_vec(vec![1.0, l2 + q[0] * q[0]]))
        }),
        Arc::new(move |q: &Vector| g * q[0] * q[1].sin()),
        Arc::new(|_: &Vector| Matrix::from_column_slice(2, 1, &[0.0, 1.0])),
        Workspace::symmetric(&params.workspace),
    )?
    .with_potential_grad(Arc::new(move |q: &Vector| {
        Vector::from_vec(vec![g * q[1].sin(), g * q[0] * q[1].cos()])
    }))
    .with_kinetic_grad(Arc::new(move |q: &Vector, p: &Vector| {
        let a = l2 + q[0] * q[0];
        Vector::from_vec(vec![-q[0] * p[1] * p[1] / (a * a), 0.0])
    }))
    .with_damping(Arc::new(move |_: &Vector| {
        Matrix::from_diagonal(&Vector::from_vec(r.to_vec()))
    }))
    .with_annihilator(Arc::new(|_: &Vector| {
        Matrix::from_row_slice(1, 2, &[1.0, 0.0])
    }));

    let z = move |q: &Vector| q[1] - (q[0] / l).asinh() / SQRT_2;
    let tgt = TargetDynamics::new(
        Arc::new(move |q: &Vector| {
            let a = l2 + q[0] * q[0];
            Matrix::from_row_slice(2, 2, &[SQRT_2 * a.sqrt(), a, a, SQRT_2 * a.powf(1.5)])
        }),
        Arc::new(move |q: &Vector| g * (1.0 - q[1].cos()) + 0.5 * kp * z(q).powi(2)),
        Matrix::from_element(1, 1, kv),
        Vector::zeros(2),
    )
    .with_potential_grad(Arc::new(move |q: &Vector| {
        let a = l2 + q[0] * q[0];
        let zq = z(q);
        Vector::from_vec(vec![
            -kp * zq / (SQRT_2 * a.sqrt()),
            g * q[1].sin() + kp * zq,
        ])
    }))
    .with_kinetic_grad(Arc::new(move |q: &Vector, p: &Vector| {
        let a = l2 + q[0] * q[0];
        let d = q[0]
            * (-0.5 * SQRT_2 * a.powf(-1.5) * p[0] * p[0] + 2.0 * p[0] * p[1] / (a * a)
                - 1.5 * SQRT_2 * a.powf(-2.5) * p[1] * p[1]);
        Vector::from_vec(vec![d, 0.0])
    }))
    .with_j2(Arc::new(move |q: &Vector, p: &Vector| {
        let j = j2_entry(l, q, p);
        Matrix::from_row_slice(2, 2, &[0.0, j, -j, 0.0])
    }));
    Ok((sys, tgt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_energy() {
        let (_, tgt) = make_ball_beam(&BallBeamParams::default()).unwrap();
        let hd = tgt.energy(&BallBeamParams::initial_state()).unwrap();
        assert!((hd - 0.24148).abs() < 1e-4, "{hd}");
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let (sys, tgt) = make_ball_beam(&BallBeamParams::default()).unwrap();
        let q = Vector::from_vec(vec![0.7, -0.3]);
        let p = Vector::from_vec(vec![0.4, -1.1]);
        assert!((sys.potential_grad(&q) - sys.potential_grad_fd(&q)).norm() < 1e-6);
        assert!(
            (sys.kinetic_grad(&q, &p).unwrap() - sys.kinetic_grad_fd(&q, &p).unwrap()).norm()
                < 1e-6
        );
        assert!((tgt.potential_d_grad(&q) - tgt.potential_d_grad_fd(&q)).norm() < 1e-6);
        assert!(
            (tgt.kinetic_d_grad(&q, &p).unwrap() - tgt.kinetic_d_grad_fd(&q, &p).unwrap()).norm()
                < 1e-6
        );
    }

    #[test]
    fn inertia_determinant() {
        let (_, tgt) = make_ball_beam(&BallBeamParams::default()).unwrap();
        let q = Vector::from_vec(vec![1.3, 0.0]);
        let a: f64 = 4.0 + 1.69;
        assert!((tgt.mass_d(&q).determinant() - a * a).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_params() {
        let p = BallBeamParams {
            l: 0.0,
            ..BallBeamParams::default()
        };
        assert!(make_ball_beam(&p).is_err());
    }
}
