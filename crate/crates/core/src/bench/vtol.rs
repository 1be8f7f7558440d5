//! Planar VTOL aircraft with slopped wings, `q = (x, y, θ)`, thrust and rolling moment
//! as inputs. The design shapes only the potential energy with a non-smooth `V_d` whose
//! gradient blows up at `cos θ = 0.1`, so a hand-designed primary law keeps `θ` small
//! before the IDA-PBC law takes over.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{
    estimate_constants, levelset_confinement, sharp_row_bounds, BoundConstants, Confinement,
    SampleSpec, SharpBound,
};
use crate::controller::{
    ln_cosh, DampingMode, IdaPbcPolicy, SaturationFunction, TargetDynamics, TwoPhaseController,
};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::sampling::Workspace;
use crate::system::{ConfigState, MechanicalSystem};

/// Coefficients of the `arctanh(c₁ tan(θ/2))` term of `V_d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VtolCoefficients {
    /// `c₁ = sqrt(1.1/0.9)`, `c₀ = 0.1/sqrt(0.99)`: the exact antiderivative of
    /// `0.05/(cos θ − 0.1)`, which solves the potential matching equation.
    #[default]
    Exact,
    /// `c₁ = 1.1055`, `c₀ = 0.1`, rounded literals that leave a residual of order 1e-4.
    Rounded,
}

impl VtolCoefficients {
    /// `(c₀, c₁)`.
    pub fn values(self) -> (f64, f64) {
        match self {
            VtolCoefficients::Exact => (0.1 / 0.99f64.sqrt(), (1.1f64 / 0.9).sqrt()),
            VtolCoefficients::Rounded => (0.1, 1.1055),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VtolParams {
    pub epsilon: f64,
    pub g: f64,
    pub k1: f64,
    pub k2: f64,
    /// `K_v = kv·I₂`.
    pub kv: f64,
    /// Primary-law amplitudes `(ϰ₁, ϰ₂)`.
    pub primary_amplitude: [f64; 2],
    /// Primary-law gains `(κ₁, κ₂, κ₃, κ₄)` on `(y, ẏ, θ, θ̇)`.
    pub primary_gains: [f64; 4],
    /// Switch once `|θ| <` first and `|θ̇| <` second.
    pub switch_threshold: [f64; 2],
    pub coefficients: VtolCoefficients,
    /// `(x, y, θ, p_x, p_y, p_θ)` at `t₀`; `ρ` is set so that `V_d` vanishes there.
    pub initial: [f64; 6],
    /// Workspace half-widths.
    pub workspace: [f64; 3],
}

impl Default for VtolParams {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            g: 9.81,
            k1: 4.0,
            k2: 5.0,
            kv: 1.0,
            primary_amplitude: [8.0, 8.0],
            primary_gains: [30.0, 20.0, 80.0, 30.0],
            switch_threshold: [0.05, 0.05],
            coefficients: VtolCoefficients::Exact,
            initial: [20.0, -15.0, 1.3, 0.0, 0.0, 0.0],
            workspace: [150.0, 100.0, 1.47],
        }
    }
}

impl VtolParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.kv > 0.0) {
            return Err(Error::InvalidArgument(
                "k1, k2 and kv must be positive".into(),
            ));
        }
        if !self.g.is_finite() || self.initial.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite VTOL parameter".into()));
        }
        if !(self.workspace[2] > 0.0 && self.workspace[2] < 0.1f64.acos()) {
            return Err(Error::InvalidArgument(
                "θ workspace must stay inside cos θ > 0.1".into(),
            ));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> ConfigState {
        ConfigState::from_slices(&self.initial[..3], &self.initial[3..]).expect("finite")
    }
}

/// Reported ingredients of the sharp per-row bound: `max|g − row₁|`, `max|row₂|`,
/// `max‖(GᵀG)⁻¹GᵀM_dM⁻¹‖` and `c_Vd`.
pub const REFERENCE_SHARP: [f64; 4] = [10.0, 2.25, 1.75, 170.0];
pub const REFERENCE_THETA_BOUND: f64 = 1.33;
pub const REFERENCE_PRIMARY_BOUND: f64 = 10.0;

/// `V_d` without the offset `ρ`, and its gradient.
#[derive(Debug, Clone, Copy)]
struct Shaping {
    eps: f64,
    g: f64,
    k1: f64,
    k2: f64,
    c0: f64,
    c1: f64,
    t: f64,
}

impl Shaping {
    fn new(p: &VtolParams) -> Self {
        let (c0, c1) = p.coefficients.values();
        Self {
            eps: p.epsilon,
            g: p.g,
            k1: p.k1,
            k2: p.k2,
            c0,
            c1,
            t: (0.9 * p.epsilon).ln().tanh(),
        }
    }

    fn args(&self, q: &Vector) -> (f64, f64, f64) {
        let (x, y, th) = (q[0], q[1], q[2]);
        let log_term = (self.eps * (th.cos() - 0.1)).ln();
        let a = self.eps * y + log_term;
        let b = x / (20.0 * self.eps) - th - self.c0 * (self.c1 * (0.5 * th).tan()).atanh();
        (a, b, log_term)
    }

    fn value(&self, q: &Vector) -> f64 {
        let (a, b, log_term) = self.args(q);
        self.k1 * ln_cosh(a) + self.k2 * ln_cosh(b)
            - self.k1 * self.eps * self.t * q[1]
            - (self.g + self.k1 * self.eps * self.t) / self.eps * log_term
    }

    fn grad(&self, q: &Vector) -> Vector {
        let th = q[2];
        let (s, c) = th.sin_cos();
        let (a, b, _) = self.args(q);
        let (ta, tb) = (a.tanh(), b.tanh());
        let half_tan = (0.5 * th).tan();
        let sec2 = 1.0 + half_tan * half_tan;
        let atanh_d =
            self.c0 * self.c1 * 0.5 * sec2 / (1.0 - self.c1 * self.c1 * half_tan * half_tan);
        let dlog = -s / (c - 0.1);
        Vector::from_vec(vec![
            self.k2 * tb / (20.0 * self.eps),
            self.k1 * self.eps * (ta - self.t),
            self.k1 * ta * dlog + self.k2 * tb * (-1.0 - atanh_d)
                - (self.g + self.k1 * self.eps * self.t) / self.eps * dlog,
        ])
    }
}

/// The VTOL design wired for every operation.
#[derive(Debug, Clone)]
pub struct VtolDesign {
    pub system: MechanicalSystem,
    pub target: TargetDynamics,
    pub two_phase: TwoPhaseController,
    /// The single-phase law with saturated damping.
    pub nonsmooth: IdaPbcPolicy,
    pub rho: f64,
    pub initial: ConfigState,
    /// `H_d(t₀) − V_d(q*)`.
    pub hd_t0: f64,
    pub theta_confinement: Confinement,
}

pub fn input_coupling(eps: f64, th: f64) -> Matrix {
    let (s, c) = th.sin_cos();
    Matrix::from_row_slice(3, 2, &[-s, eps * c, c, eps * s, 0.0, 1.0])
}

pub fn make_vtol(params: &VtolParams) -> Result<VtolDesign> {
    params.validate()?;
    let eps = params.epsilon;
    let g = params.g;
    let shaping = Shaping::new(params);
    let initial = params.initial_state();
    let rho = shaping.value(&initial.q);
    if !rho.is_finite() {
        return Err(Error::InvalidArgument(
            "initial attitude outside the domain of V_d".into(),
        ));
    }

    let system = MechanicalSystem::new(
        3,
        2,
        Arc::new(|_: &Vector| Matrix::identity(3, 3)),
        Arc::new(move |q: &Vector| g * q[1]),
        Arc::new(move |q: &Vector| input_coupling(eps, q[2])),
        Workspace::symmetric(&params.workspace),
    )?
    .with_potential_grad(Arc::new(move |_: &Vector| {
        Vector::from_vec(vec![0.0, g, 0.0])
    }))
    .with_kinetic_grad(Arc::new(|_: &Vector, _: &Vector| Vector::zeros(3)))
    .with_annihilator(Arc::new(move |q: &Vector| {
        Matrix::from_row_slice(1, 3, &[q[2].cos(), q[2].sin(), -eps])
    }));

    let md = Matrix::from_row_slice(
        3,
        3,
        &[20.0 * eps * eps, 0.0, eps, 0.0, 1.0, 0.0, eps, 0.0, 0.1],
    );
    let target = TargetDynamics::new(
        Arc::new(move |_: &Vector| md.clone()),
        Arc::new(move |q: &Vector| shaping.value(q) - rho),
        Matrix::identity(2, 2) * params.kv,
        Vector::zeros(3),
    )
    .with_potential_grad(Arc::new(move |q: &Vector| shaping.grad(q)))
    .with_kinetic_grad(Arc::new(|_: &Vector, _: &Vector| Vector::zeros(3)));

    let mode = DampingMode::Saturated(SaturationFunction::tanh());
    let [amp1, amp2] = params.primary_amplitude;
    let [g1, g2, g3, g4] = params.primary_gains;
    let primary = Arc::new(move |_t: f64, s: &ConfigState| {
        Vector::from_vec(vec![
            g - amp1 * (g1 * s.q[1] + g2 * s.p[1]).tanh(),
            -amp2 * (g3 * s.q[2] + g4 * s.p[2]).tanh(),
        ])
    });
    let [th_tol, rate_tol] = params.switch_threshold;
    let switch = Arc::new(move |s: &ConfigState| s.q[2].abs() < th_tol && s.p[2].abs() < rate_tol);
    let two_phase = TwoPhaseController::new(primary, switch, target.clone(), mode);

    let hd_t0 = target.energy_above_min(&initial)?;
    let theta_confinement = levelset_confinement(&target, system.workspace(), hd_t0, 2)?;
    Ok(VtolDesign {
        nonsmooth: IdaPbcPolicy {
            target: target.clone(),
            mode,
        },
        system,
        target,
        two_phase,
        rho,
        initial,
        hd_t0,
        theta_confinement,
    })
}

impl VtolDesign {
    /// Workspace with `θ` restricted to its confinement interval.
    pub fn confined_region(&self) -> Workspace {
        let c = &self.theta_confinement;
        self.system.workspace().with_axis(2, c.lower, c.upper)
    }

    /// Constants over the confined region.
    pub fn constants(&self, points: usize) -> Result<BoundConstants> {
        let spec = SampleSpec {
            points,
            region: Some(self.confined_region()),
            ..SampleSpec::default()
        };
        estimate_constants(&self.system, &self.target, &spec)
    }

    /// Sharp per-row bound `|τ₁ − g| ≤ r₁`, `|τ₂| ≤ r₂` after the switch.
    pub fn sharp_bound(&self, params: &VtolParams, points: usize) -> Result<SharpBound> {
        let constants = self.constants(points)?;
        sharp_row_bounds(
            &self.system,
            &self.target,
            &self.confined_region(),
            &[params.g, 0.0],
            constants.c_vd,
            params.kv,
            points,
            constants.inflation,
        )
    }
}
