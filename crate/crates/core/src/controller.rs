//! IDA-PBC control law, bounded potential shaping and the two-phase scheme.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    self, fd_gradient, fd_hessian, singular_mass, singular_mass_d, spd_solve, spd_solve_mat,
    LeftInverse, Matrix, Vector,
};
use crate::sampling::halton;
use crate::system::{
    ConfigState, MatrixField, MechanicalSystem, PhaseMatrixField, PhaseVectorField, ScalarField,
    VectorField,
};

/// Closed-loop design: desired inertia `M_d`, potential `V_d`, interconnection `J₂`,
/// damping gain `K_v` and the equilibrium `q*`.
///
/// `J₂` is a function of `(q, p)`, linear in the momentum.
#[derive(Clone)]
pub struct TargetDynamics {
    n: usize,
    mass_d: MatrixField,
    potential_d: ScalarField,
    potential_d_grad: Option<VectorField>,
    kinetic_d_grad: Option<PhaseVectorField>,
    j2: PhaseMatrixField,
    damping_gain: Matrix,
    equilibrium: Vector,
}

impl fmt::Debug for TargetDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetDynamics")
            .field("n", &self.n)
            .field("damping_gain", &self.damping_gain)
            .field("equilibrium", &self.equilibrium.as_slice())
            .finish()
    }
}

impl TargetDynamics {
    pub fn new(
        mass_d: MatrixField,
        potential_d: ScalarField,
        damping_gain: Matrix,
        equilibrium: Vector,
    ) -> Self {
        let n = equilibrium.len();
        Self {
            n,
            mass_d,
            potential_d,
            potential_d_grad: None,
            kinetic_d_grad: None,
            j2: Arc::new(move |_, _| Matrix::zeros(n, n)),
            damping_gain,
            equilibrium,
        }
    }

    pub fn with_potential_grad(mut self, grad: VectorField) -> Self {
        self.potential_d_grad = Some(grad);
        self
    }

    /// Analytic `∇_q K_d` with `K_d = ½ pᵀ M_d⁻¹ p`.
    pub fn with_kinetic_grad(mut self, grad: PhaseVectorField) -> Self {
        self.kinetic_d_grad = Some(grad);
        self
    }

    pub fn with_j2(mut self, j2: PhaseMatrixField) -> Self {
        self.j2 = j2;
        self
    }

    pub fn with_damping_gain(mut self, kv: Matrix) -> Self {
        self.damping_gain = kv;
        self
    }

    pub fn dof(&self) -> usize {
        self.n
    }

    pub fn equilibrium(&self) -> &Vector {
        &self.equilibrium
    }

    pub fn damping_gain(&self) -> &Matrix {
        &self.damping_gain
    }

    pub fn has_analytic_gradients(&self) -> bool {
        self.potential_d_grad.is_some() && self.kinetic_d_grad.is_some()
    }

    pub fn mass_d(&self, q: &Vector) -> Matrix {
        (self.mass_d)(q)
    }

    pub fn potential_d(&self, q: &Vector) -> f64 {
        (self.potential_d)(q)
    }

    pub fn potential_d_grad(&self, q: &Vector) -> Vector {
        match &self.potential_d_grad {
            Some(g) => g(q),
            None => self.potential_d_grad_fd(q),
        }
    }

    pub fn potential_d_grad_fd(&self, q: &Vector) -> Vector {
        fd_gradient(|x| (self.potential_d)(x), q)
    }

    /// `p̃ = M_d⁻¹ p`.
    pub fn ptilde(&self, q: &Vector, p: &Vector) -> Result<Vector> {
        spd_solve(&self.mass_d(q), p, singular_mass_d)
    }

    pub fn kinetic_d(&self, q: &Vector, p: &Vector) -> Result<f64> {
        Ok(0.5 * p.dot(&self.ptilde(q, p)?))
    }

    pub fn kinetic_d_grad(&self, q: &Vector, p: &Vector) -> Result<Vector> {
        match &self.kinetic_d_grad {
            Some(g) => Ok(g(q, p)),
            None => self.kinetic_d_grad_fd(q, p),
        }
    }

    pub fn kinetic_d_grad_fd(&self, q: &Vector, p: &Vector) -> Result<Vector> {
        self.kinetic_d(q, p)?;
        Ok(fd_gradient(|x| self.kinetic_d(x, p).unwrap_or(f64::NAN), q))
    }

    pub fn j2(&self, q: &Vector, p: &Vector) -> Matrix {
        (self.j2)(q, p)
    }

    /// Closed-loop energy `H_d = K_d + V_d`.
    pub fn energy(&self, s: &ConfigState) -> Result<f64> {
        Ok(self.kinetic_d(&s.q, &s.p)? + self.potential_d(&s.q))
    }

    /// `H_d(s) - V_d(q*)`, the energy above the minimum used by every level-set bound.
    pub fn energy_above_min(&self, s: &ConfigState) -> Result<f64> {
        Ok(self.energy(s)? - self.potential_d(&self.equilibrium))
    }

    /// `(‖∇V_d(q*)‖, λ_min of the finite-difference Hessian of V_d at q*)`.
    pub fn equilibrium_check(&self) -> (f64, f64) {
        let q = &self.equilibrium;
        let grad_norm = self.potential_d_grad(q).norm();
        let hess = fd_hessian(|x| self.potential_d_grad(x), q);
        (grad_norm, linalg::min_eigenvalue(&hess))
    }

    /// Check `M_d ≻ 0`, `J₂` skew-symmetric and linear in `p`, `K_v ⪰ 0`, and the
    /// equilibrium conditions at `samples` points of `sys`'s workspace.
    pub fn validate(&self, sys: &MechanicalSystem, samples: usize) -> Result<()> {
        let kv = &self.damping_gain;
        if kv.shape() != (sys.inputs(), sys.inputs()) {
            return Err(Error::Dimension(format!(
                "K_v is {:?}, expected {}x{}",
                kv.shape(),
                sys.inputs(),
                sys.inputs()
            )));
        }
        if (kv - kv.transpose()).abs().max() > 1e-12 || linalg::min_eigenvalue(kv) < -1e-12 {
            return Err(Error::Invariant(
                "K_v must be symmetric positive semi-definite".into(),
            ));
        }
        let n = self.n;
        for k in 1..=samples as u64 {
            let u = halton(k, 2 * n);
            let q = sys.workspace().map_unit(&u[..n]);
            let p = Vector::from_iterator(n, u[n..].iter().map(|t| 4.0 * t - 2.0));
            let md = self.mass_d(&q);
            if (&md - md.transpose()).abs().max() > 1e-10 * md.abs().max().max(1.0)
                || linalg::min_eigenvalue(&md) <= 0.0
            {
                return Err(Error::Invariant(format!(
                    "M_d(q) not SPD at q={:?}",
                    q.as_slice()
                )));
            }
            let j = self.j2(&q, &p);
            if (&j + j.transpose()).abs().max() > 1e-12 * j.abs().max().max(1.0) {
                return Err(Error::Invariant(format!(
                    "J2 not skew-symmetric at q={:?}",
                    q.as_slice()
                )));
            }
            let j_double = self.j2(&q, &(&p * 2.0));
            if (&j_double - &j * 2.0).abs().max() > 1e-12 * j.abs().max().max(1.0) {
                return Err(Error::Invariant(
                    "J2 is not homogeneous of degree one in p".into(),
                ));
            }
        }
        let (grad_norm, hess_min) = self.equilibrium_check();
        if grad_norm >= 1e-8 || hess_min <= 0.0 {
            return Err(Error::Invariant(format!(
                "q* is not a strict minimum of V_d (|∇V_d| = {grad_norm:.3e}, λ_min(Hess) = {hess_min:.3e})"
            )));
        }
        Ok(())
    }
}

/// Saturation function: `S(0) = 0`, strictly increasing, `|S| ≤ 1`, `S'' ≠ 0` away from 0.
#[derive(Clone, Copy)]
pub struct SaturationFunction {
    pub name: &'static str,
    pub eval: fn(f64) -> f64,
    /// An antiderivative of `eval`.
    pub antiderivative: fn(f64) -> f64,
    pub slope_at_zero: f64,
}

impl fmt::Debug for SaturationFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SaturationFunction({})", self.name)
    }
}

impl PartialEq for SaturationFunction {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

/// `ln cosh x`, without overflow for large `|x|`.
pub fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl SaturationFunction {
    pub fn tanh() -> Self {
        Self {
            name: "tanh",
            eval: f64::tanh,
            antiderivative: ln_cosh,
            slope_at_zero: 1.0,
        }
    }

    /// `x / sqrt(1 + x²)`.
    pub fn algebraic() -> Self {
        Self {
            name: "algebraic",
            eval: |x| x / (1.0 + x * x).sqrt(),
            antiderivative: |x| (1.0 + x * x).sqrt(),
            slope_at_zero: 1.0,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Self::tanh()),
            "algebraic" => Some(Self::algebraic()),
            _ => None,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        v.map(self.eval)
    }

    /// Check the saturation contract on a uniform grid of `points` nodes over `[lo, hi]`.
    pub fn check_contract(
        &self,
        lo: f64,
        hi: f64,
        points: usize,
    ) -> std::result::Result<(), String> {
        if self.eval(0.0) != 0.0 {
            return Err(format!("S(0) = {}", self.eval(0.0)));
        }
        let h = (hi - lo) / (points - 1) as f64;
        let xs: Vec<f64> = (0..points).map(|i| lo + i as f64 * h).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| self.eval(x)).collect();
        for w in ys.windows(2) {
            if w[1] <= w[0] {
                return Err(format!("not strictly increasing near S = {}", w[0]));
            }
        }
        if let Some(y) = ys.iter().find(|y| y.abs() > 1.0) {
            return Err(format!("|S| exceeds one: {y}"));
        }
        for i in 1..points - 1 {
            if xs[i].abs() < 1e-3 {
                continue;
            }
            let second = ys[i + 1] - 2.0 * ys[i] + ys[i - 1];
            if second == 0.0 {
                return Err(format!("second difference vanishes at x = {}", xs[i]));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DampingMode {
    /// `K_v Gᵀ p̃`
    Linear,
    /// `K_v S(Gᵀ p̃)`, elementwise
    Saturated(SaturationFunction),
}

/// The individual contributions to the IDA-PBC input, each already mapped through
/// `(GᵀG)⁻¹Gᵀ` so that `total = potential + kinetic + interconnection - damping`.
#[derive(Debug, Clone)]
pub struct ControlTerms {
    pub potential: Vector,
    pub kinetic: Vector,
    pub interconnection: Vector,
    pub damping: Vector,
}

impl ControlTerms {
    pub fn total(&self) -> Vector {
        &self.potential + &self.kinetic + &self.interconnection - &self.damping
    }
}

/// `M_d M⁻¹`, computed as `(M⁻¹ M_d)ᵀ` from a linear solve.
pub fn lambda_matrix(sys: &MechanicalSystem, tgt: &TargetDynamics, q: &Vector) -> Result<Matrix> {
    Ok(spd_solve_mat(&sys.mass(q), &tgt.mass_d(q), singular_mass)?.transpose())
}

pub fn ida_pbc_terms(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    s: &ConfigState,
    mode: DampingMode,
) -> Result<ControlTerms> {
    sys.check_dims(s)?;
    let (q, p) = (&s.q, &s.p);
    let g = sys.input_coupling(q);
    let left = LeftInverse::new(&g)?;
    let lam = lambda_matrix(sys, tgt, q)?;
    let ptilde = tgt.ptilde(q, p)?;

    let potential = left.apply(&(sys.potential_grad(q) - &lam * tgt.potential_d_grad(q)));
    let kinetic = left.apply(&(sys.kinetic_grad(q, p)? - &lam * tgt.kinetic_d_grad(q, p)?));
    let interconnection = left.apply(&(tgt.j2(q, p) * &ptilde));
    let passive = g.transpose() * &ptilde;
    let damping = match mode {
        DampingMode::Linear => tgt.damping_gain() * passive,
        DampingMode::Saturated(sat) => tgt.damping_gain() * sat.apply(&passive),
    };
    Ok(ControlTerms {
        potential,
        kinetic,
        interconnection,
        damping,
    })
}

/// IDA-PBC input
/// `τ = (GᵀG)⁻¹Gᵀ(∇V − M_dM⁻¹∇V_d + ∇K − M_dM⁻¹∇K_d + (J₂ − GK_vGᵀ)M_d⁻¹p)`,
/// with the damping term optionally saturated.
pub fn ida_pbc_control(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    s: &ConfigState,
    mode: DampingMode,
) -> Result<Vector> {
    Ok(ida_pbc_terms(sys, tgt, s, mode)?.total())
}

/// One homogeneous-solution term of a bounded potential shaping.
#[derive(Clone)]
pub struct ShapingTerm {
    pub gain: f64,
    pub func: ScalarField,
    pub grad: VectorField,
    reference: f64,
}

impl ShapingTerm {
    pub fn reference(&self) -> f64 {
        self.reference
    }
}

/// `V_dh = Σ k_i ∫ S(V_dhi − V_dhi*) dV_dhi`.
#[derive(Clone)]
pub struct BoundedShaping {
    terms: Vec<ShapingTerm>,
    sat: SaturationFunction,
}

#[derive(Debug, Clone)]
pub struct ShapingValue {
    pub value: f64,
    pub grad_contributions: Vec<Vector>,
}

impl ShapingValue {
    pub fn gradient(&self) -> Vector {
        let n = self.grad_contributions.first().map_or(0, |g| g.len());
        self.grad_contributions
            .iter()
            .fold(Vector::zeros(n), |acc, g| acc + g)
    }
}

impl BoundedShaping {
    /// `terms` holds `(k_i, V_dhi, ∇V_dhi)`; the references `V_dhi*` are taken at `q_star`.
    pub fn new(
        sat: SaturationFunction,
        terms: Vec<(f64, ScalarField, VectorField)>,
        q_star: &Vector,
    ) -> Result<Self> {
        let terms = terms
            .into_iter()
            .map(|(gain, func, grad)| {
                if !(gain > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "shaping gain must be positive, got {gain}"
                    )));
                }
                let reference = func(q_star);
                Ok(ShapingTerm {
                    gain,
                    func,
                    grad,
                    reference,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { terms, sat })
    }

    pub fn terms(&self) -> &[ShapingTerm] {
        &self.terms
    }

    pub fn evaluate(&self, q: &Vector) -> ShapingValue {
        let a0 = (self.sat.antiderivative)(0.0);
        let mut value = 0.0;
        let mut grad_contributions = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let shifted = (t.func)(q) - t.reference;
            value += t.gain * ((self.sat.antiderivative)(shifted) - a0);
            grad_contributions.push((t.grad)(q) * (t.gain * self.sat.eval(shifted)));
        }
        ShapingValue {
            value,
            grad_contributions,
        }
    }
}

/// Value and per-term gradient of a bounded potential shaping at `q`.
pub fn bounded_vdh(shaping: &BoundedShaping, q: &Vector) -> ShapingValue {
    shaping.evaluate(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Primary,
    Secondary,
}

impl Phase {
    pub fn index(self) -> u8 {
        match self {
            Phase::Primary => 1,
            Phase::Secondary => 2,
        }
    }
}

/// Anything the simulator can close the loop with.
pub trait ControlPolicy {
    /// Called once per step with the step-start state, before any `control` call of
    /// that step. Returns the new phase when a switch happened.
    fn observe(&mut self, _t: f64, _s: &ConfigState) -> Option<Phase> {
        None
    }

    fn control(&self, sys: &MechanicalSystem, t: f64, s: &ConfigState) -> Result<Vector>;

    fn phase(&self) -> Phase {
        Phase::Secondary
    }

    /// Target dynamics whose energy should be monitored, if any.
    fn target(&self) -> Option<&TargetDynamics> {
        None
    }
}

/// Zero input.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroInput;

impl ControlPolicy for ZeroInput {
    fn control(&self, sys: &MechanicalSystem, _t: f64, _s: &ConfigState) -> Result<Vector> {
        Ok(Vector::zeros(sys.inputs()))
    }
}

#[derive(Debug, Clone)]
pub struct IdaPbcPolicy {
    pub target: TargetDynamics,
    pub mode: DampingMode,
}

impl ControlPolicy for IdaPbcPolicy {
    fn control(&self, sys: &MechanicalSystem, _t: f64, s: &ConfigState) -> Result<Vector> {
        ida_pbc_control(sys, &self.target, s, self.mode)
    }

    fn target(&self) -> Option<&TargetDynamics> {
        Some(&self.target)
    }
}

pub type PrimaryLaw = Arc<dyn Fn(f64, &ConfigState) -> Vector + Send + Sync>;
pub type SwitchPredicate = Arc<dyn Fn(&ConfigState) -> bool + Send + Sync>;

/// A hand-designed primary law that runs until `switch` first holds, then the IDA-PBC
/// law for good. The latch makes an instance single-use per simulation.
#[derive(Clone)]
pub struct TwoPhaseController {
    primary: PrimaryLaw,
    switch: SwitchPredicate,
    secondary: IdaPbcPolicy,
    switched_at: Option<f64>,
}

impl fmt::Debug for TwoPhaseController {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TwoPhaseController")
            .field("secondary", &self.secondary)
            .field("switched_at", &self.switched_at)
            .finish()
    }
}

impl TwoPhaseController {
    pub fn new(
        primary: PrimaryLaw,
        switch: SwitchPredicate,
        target: TargetDynamics,
        mode: DampingMode,
    ) -> Self {
        Self {
            primary,
            switch,
            secondary: IdaPbcPolicy { target, mode },
            switched_at: None,
        }
    }

    pub fn switched_at(&self) -> Option<f64> {
        self.switched_at
    }

    pub fn secondary(&self) -> &IdaPbcPolicy {
        &self.secondary
    }

    pub fn primary_law(&self, t: f64, s: &ConfigState) -> Vector {
        (self.primary)(t, s)
    }

    pub fn reset(&mut self) {
        self.switched_at = None;
    }

    /// Latch the switch if the predicate holds at `s`, then evaluate the active law.
    pub fn two_phase_control(
        &mut self,
        sys: &MechanicalSystem,
        t: f64,
        s: &ConfigState,
    ) -> Result<(Vector, Phase)> {
        self.observe(t, s);
        let tau = self.control(sys, t, s)?;
        Ok((tau, self.phase()))
    }
}

impl ControlPolicy for TwoPhaseController {
    fn observe(&mut self, t: f64, s: &ConfigState) -> Option<Phase> {
        if self.switched_at.is_none() && (self.switch)(s) {
            self.switched_at = Some(t);
            return Some(Phase::Secondary);
        }
        None
    }

    fn control(&self, sys: &MechanicalSystem, t: f64, s: &ConfigState) -> Result<Vector> {
        match self.switched_at {
            None => Ok((self.primary)(t, s)),
            Some(_) => self.secondary.control(sys, t, s),
        }
    }

    fn phase(&self) -> Phase {
        if self.switched_at.is_some() {
            Phase::Secondary
        } else {
            Phase::Primary
        }
    }

    fn target(&self) -> Option<&TargetDynamics> {
        Some(&self.secondary.target)
    }
}
