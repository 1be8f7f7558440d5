//! Workspace constants and certified bounds on momentum and control effort.
//!
//! The momentum bounds come from the closed-loop energy as a Lyapunov function: along
//! any trajectory `½ λ_min{M_d⁻¹} ‖p‖² ≤ K_d ≤ H_d ≤ H_d(t₀)`. The control bound adds up
//! worst cases of each term of the IDA-PBC law over the workspace.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{lambda_matrix, TargetDynamics};
use crate::error::{Error, Result};
use crate::linalg::{self, spectral_norm, LeftInverse, Matrix, Vector};
use crate::matching::{build_r2, build_r2_with_gain, damping_product};
use crate::sampling::{halton, unit_to_sphere, Workspace};
use crate::system::{ConfigState, MechanicalSystem};

pub const DEFAULT_MU: f64 = 1e-6;
pub const DEFAULT_INFLATION: f64 = 1.05;

/// How configurations are sampled when estimating workspace suprema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    /// Halton points in the region (the box corners are always added).
    pub points: usize,
    /// Unit momentum directions per configuration for the quadratic-in-`p` constants.
    pub directions: usize,
    /// Sampling box; defaults to the system workspace.
    pub region: Option<Workspace>,
    /// Keep only configurations with `V_d(q) − V_d(q*) ≤ cap`, i.e. inside the energy
    /// level set a trajectory starting below `cap` can never leave.
    pub energy_cap: Option<f64>,
    /// Multiplier on every sampled supremum.
    pub inflation: f64,
    pub mu: f64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            points: 1000,
            directions: 64,
            region: None,
            energy_cap: None,
            inflation: DEFAULT_INFLATION,
            mu: DEFAULT_MU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// `|(∇V)_i| ≤ c_V_i` on actuated rows.
    #[serde(rename = "c_V")]
    pub c_v: Vec<f64>,
    #[serde(rename = "c_Vd")]
    pub c_vd: f64,
    /// `|(∇K)_i| ≤ c_M_i ‖p‖²` on actuated rows.
    #[serde(rename = "c_M")]
    pub c_m: Vec<f64>,
    #[serde(rename = "c_Md")]
    pub c_md: f64,
    /// `‖J₂‖ ≤ c_J ‖p̃‖`.
    #[serde(rename = "c_J")]
    pub c_j: f64,
    /// `‖(M_dM⁻¹)_i‖ ≤ c_Λ_i` on actuated rows.
    #[serde(rename = "c_Lambda")]
    pub c_lambda: Vec<f64>,
    #[serde(rename = "lam_min_MdInv")]
    pub lam_min_md_inv: f64,
    #[serde(rename = "lam_max_MdInv")]
    pub lam_max_md_inv: f64,
    #[serde(rename = "lam_min_Md")]
    pub lam_min_md: f64,
    #[serde(rename = "lam_max_Md")]
    pub lam_max_md: f64,
    #[serde(rename = "lam_min_R2")]
    pub lam_min_r2: f64,
    #[serde(rename = "lam_max_Kv")]
    pub lam_max_kv: f64,
    /// `sup ‖(GᵀG)⁻¹Gᵀ‖`.
    #[serde(rename = "G_M")]
    pub g_left_norm: f64,
    /// `sup ‖G‖`.
    #[serde(rename = "G_m")]
    pub g_norm: f64,
    /// Row-wise infimum of `(GᵀG)⁻¹Gᵀ(∇V − M_dM⁻¹∇V_d)`.
    pub sigma: Vec<f64>,
    pub mu: f64,
    pub inflation: f64,
    pub samples: usize,
    /// Configuration row driven by each input.
    pub actuated_rows: Vec<usize>,
    /// Whether `G` is a column selection of the identity on every sample.
    pub selection_coupling: bool,
}

/// Row of `G` each input acts on: the entry of largest magnitude in its column.
pub fn actuated_rows(g: &Matrix) -> Vec<usize> {
    (0..g.ncols()).map(|j| g.column(j).iamax()).collect()
}

fn is_selection(g: &Matrix) -> bool {
    let rows = actuated_rows(g);
    g.iter().all(|x| *x == 0.0 || *x == 1.0)
        && (0..g.ncols()).all(|j| g.column(j).sum() == 1.0)
        && {
            let mut r = rows.clone();
            r.sort_unstable();
            r.dedup();
            r.len() == rows.len()
        }
}

/// Region points: `points` Halton points satisfying the energy cap (drawing up to a
/// hundred times as many), plus the box corners that satisfy it.
pub fn region_samples(
    tgt: &TargetDynamics,
    region: &Workspace,
    points: usize,
    energy_cap: Option<f64>,
) -> Vec<Vector> {
    let n = region.dim();
    let v_star = tgt.potential_d(tgt.equilibrium());
    let admissible = |q: &Vector| match energy_cap {
        Some(cap) => {
            let v = tgt.potential_d(q) - v_star;
            v.is_finite() && v <= cap
        }
        None => true,
    };
    let mut out = Vec::with_capacity(points + (1 << n));
    for k in 1..=(100 * points.max(1)) as u64 {
        if out.len() == points {
            break;
        }
        let q = region.map_unit(&halton(k, n));
        if admissible(&q) {
            out.push(q);
        }
    }
    for mask in 0..(1u32 << n) {
        let corner: Vec<f64> = (0..n)
            .map(|i| if mask >> i & 1 == 1 { 1.0 } else { 0.0 })
            .collect();
        let q = region.map_unit(&corner);
        if admissible(&q) {
            out.push(q);
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Partial {
    c_v: Vec<f64>,
    c_vd: f64,
    c_m: Vec<f64>,
    c_md: f64,
    c_j: f64,
    c_lambda: Vec<f64>,
    lam_min_md: f64,
    lam_max_md: f64,
    lam_min_r2: f64,
    g_left_norm: f64,
    g_norm: f64,
    sigma: Vec<f64>,
    selection: bool,
}

impl Partial {
    fn merge(mut self, o: Partial) -> Partial {
        let vmax =
            |a: &mut Vec<f64>, b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x = x.max(*y));
        vmax(&mut self.c_v, &o.c_v);
        vmax(&mut self.c_m, &o.c_m);
        vmax(&mut self.c_lambda, &o.c_lambda);
        self.sigma
            .iter_mut()
            .zip(&o.sigma)
            .for_each(|(x, y)| *x = x.min(*y));
        self.c_vd = self.c_vd.max(o.c_vd);
        self.c_md = self.c_md.max(o.c_md);
        self.c_j = self.c_j.max(o.c_j);
        self.lam_min_md = self.lam_min_md.min(o.lam_min_md);
        self.lam_max_md = self.lam_max_md.max(o.lam_max_md);
        self.lam_min_r2 = self.lam_min_r2.min(o.lam_min_r2);
        self.g_left_norm = self.g_left_norm.max(o.g_left_norm);
        self.g_norm = self.g_norm.max(o.g_norm);
        self.selection &= o.selection;
        self
    }
}

fn sample_constants(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    q: &Vector,
    rows: &[usize],
    directions: &[Vector],
) -> Result<Partial> {
    let g = sys.input_coupling(q);
    let left = LeftInverse::new(&g)?;
    let lam = lambda_matrix(sys, tgt, q)?;
    let md = tgt.mass_d(q);
    let grad_v = sys.potential_grad(q);
    let grad_vd = tgt.potential_d_grad(q);

    let mut c_m = vec![0.0f64; rows.len()];
    let mut c_md: f64 = 0.0;
    let mut c_j: f64 = 0.0;
    for d in directions {
        let grad_k = sys.kinetic_grad(q, d)?;
        for (c, &r) in c_m.iter_mut().zip(rows) {
            *c = c.max(grad_k[r].abs());
        }
        c_md = c_md.max(tgt.kinetic_d_grad(q, d)?.norm());
        // d is a unit p̃, so the momentum is M_d d
        c_j = c_j.max(spectral_norm(&tgt.j2(q, &(&md * d))));
    }
    let eig_md = linalg::sym_eigenvalues(&md);
    let potential_rows = left.apply(&(&grad_v - &lam * &grad_vd));
    let sv = g.singular_values();
    Ok(Partial {
        c_v: rows.iter().map(|&r| grad_v[r].abs()).collect(),
        c_vd: grad_vd.norm(),
        c_m,
        c_md,
        c_j,
        c_lambda: rows.iter().map(|&r| lam.row(r).norm()).collect(),
        lam_min_md: eig_md[0],
        lam_max_md: eig_md[eig_md.len() - 1],
        lam_min_r2: linalg::min_eigenvalue(&build_r2(sys, tgt, q)?),
        g_left_norm: 1.0 / sv.min(),
        g_norm: sv.max(),
        sigma: potential_rows.iter().copied().collect(),
        selection: is_selection(&g),
    })
}

/// Estimate every constant as a sampled supremum (or infimum) over the region.
pub fn estimate_constants(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    spec: &SampleSpec,
) -> Result<BoundConstants> {
    if !(spec.mu > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mu must be positive, got {}",
            spec.mu
        )));
    }
    if !(spec.inflation >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "inflation must be at least one, got {}",
            spec.inflation
        )));
    }
    let n = sys.dof();
    let region = spec
        .region
        .clone()
        .unwrap_or_else(|| sys.workspace().clone());
    let qs = region_samples(tgt, &region, spec.points, spec.energy_cap);
    if qs.is_empty() {
        return Err(Error::EmptyWorkspace);
    }
    let rows = actuated_rows(&sys.input_coupling(tgt.equilibrium()));
    let directions: Vec<Vector> = (1..=spec.directions.max(1) as u64)
        .map(|k| unit_to_sphere(&halton(k, n)))
        .collect();

    let merged = qs
        .par_iter()
        .map(|q| sample_constants(sys, tgt, q, &rows, &directions))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .reduce(Partial::merge)
        .expect("non-empty sample set");

    let k = spec.inflation;
    let inflate = |v: &[f64]| v.iter().map(|x| x * k).collect::<Vec<_>>();
    let kv = tgt.damping_gain();
    Ok(BoundConstants {
        c_v: inflate(&merged.c_v),
        c_vd: merged.c_vd * k,
        c_m: inflate(&merged.c_m),
        c_md: merged.c_md * k,
        c_j: merged.c_j * k,
        c_lambda: inflate(&merged.c_lambda),
        lam_min_md_inv: 1.0 / merged.lam_max_md,
        lam_max_md_inv: 1.0 / merged.lam_min_md,
        lam_min_md: merged.lam_min_md,
        lam_max_md: merged.lam_max_md,
        lam_min_r2: merged.lam_min_r2,
        lam_max_kv: if kv.is_empty() {
            0.0
        } else {
            linalg::max_eigenvalue(kv).max(0.0)
        },
        g_left_norm: merged.g_left_norm * k,
        g_norm: merged.g_norm * k,
        sigma: merged
            .sigma
            .iter()
            .map(|s| s - (k - 1.0) * s.abs())
            .collect(),
        mu: spec.mu,
        inflation: k,
        samples: qs.len(),
        actuated_rows: rows,
        selection_coupling: merged.selection,
    })
}

/// Outcome of checking estimated constants on fresh random samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantCheck {
    pub samples: usize,
    pub violations: usize,
    pub first_violation: Option<String>,
    /// Samples whose `M_d` eigenvalues fall outside the sampled extremes. These carry no
    /// inflation, so excursions are expected and reported apart from the violations.
    pub eigen_range_excursions: usize,
}

/// Check every inequality the constants claim at `count` random `(q, p)` pairs drawn from
/// the same region and energy cap, with momenta uniform in the ball of radius `momentum_cap`.
pub fn validate_constants(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    constants: &BoundConstants,
    spec: &SampleSpec,
    momentum_cap: f64,
    count: usize,
    seed: u64,
) -> Result<ConstantCheck> {
    let n = sys.dof();
    let region = spec
        .region
        .clone()
        .unwrap_or_else(|| sys.workspace().clone());
    let v_star = tgt.potential_d(tgt.equilibrium());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while pairs.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return Err(Error::EmptyWorkspace);
        }
        let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let q = region.map_unit(&u);
        if let Some(cap) = spec.energy_cap {
            let v = tgt.potential_d(&q) - v_star;
            if !(v.is_finite() && v <= cap) {
                continue;
            }
        }
        let mut p = Vector::from_iterator(n, (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0));
        if p.norm() > 1.0 || p.norm() < 1e-9 {
            continue;
        }
        p *= momentum_cap;
        pairs.push((q, p));
    }

    let checks: Vec<(Option<String>, bool)> = pairs
        .par_iter()
        .map(|(q, p)| -> Result<(Option<String>, bool)> {
            let ev = linalg::sym_eigenvalues(&tgt.mass_d(q));
            let excursion = ev[0] < constants.lam_min_md || ev[ev.len() - 1] > constants.lam_max_md;
            let violation = check_pair(sys, tgt, constants, q, p)?;
            Ok((violation, excursion))
        })
        .collect::<Result<Vec<_>>>()?;
    let violations = checks.iter().filter(|c| c.0.is_some()).count();
    let eigen_range_excursions = checks.iter().filter(|c| c.1).count();
    Ok(ConstantCheck {
        samples: count,
        violations,
        first_violation: checks.into_iter().find_map(|c| c.0),
        eigen_range_excursions,
    })
}

fn check_pair(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    constants: &BoundConstants,
    q: &Vector,
    p: &Vector,
) -> Result<Option<String>> {
    let rel = 1e-12;
    let p2 = p.norm_squared();
    let grad_v = sys.potential_grad(q);
    let grad_k = sys.kinetic_grad(q, p)?;
    let lam = lambda_matrix(sys, tgt, q)?;
    let ptilde = tgt.ptilde(q, p)?;
    for (i, &r) in constants.actuated_rows.iter().enumerate() {
        if grad_v[r].abs() > constants.c_v[i] * (1.0 + rel) {
            return Ok(Some(format!(
                "|∇V|_{r} = {} > c_V = {}",
                grad_v[r].abs(),
                constants.c_v[i]
            )));
        }
        if grad_k[r].abs() > constants.c_m[i] * p2 * (1.0 + rel) + 1e-14 {
            return Ok(Some(format!(
                "|∇K|_{r} = {} > c_M‖p‖² at q={:?}",
                grad_k[r].abs(),
                q.as_slice()
            )));
        }
        if lam.row(r).norm() > constants.c_lambda[i] * (1.0 + rel) {
            return Ok(Some(format!(
                "‖Λ_{r}‖ = {} > c_Λ = {}",
                lam.row(r).norm(),
                constants.c_lambda[i]
            )));
        }
    }
    let gvd = tgt.potential_d_grad(q).norm();
    if gvd > constants.c_vd * (1.0 + rel) {
        return Ok(Some(format!(
            "‖∇V_d‖ = {gvd} > c_Vd = {} at q={:?}",
            constants.c_vd,
            q.as_slice()
        )));
    }
    let gkd = tgt.kinetic_d_grad(q, p)?.norm();
    if gkd > constants.c_md * p2 * (1.0 + rel) + 1e-14 {
        return Ok(Some(format!(
            "‖∇K_d‖ = {gkd} > c_Md‖p‖² = {}",
            constants.c_md * p2
        )));
    }
    let j = spectral_norm(&tgt.j2(q, p));
    if j > constants.c_j * ptilde.norm() * (1.0 + rel) + 1e-14 {
        return Ok(Some(format!(
            "‖J₂‖ = {j} > c_J‖p̃‖ = {}",
            constants.c_j * ptilde.norm()
        )));
    }
    Ok(None)
}

/// Which level-set inequality turns `H_d(t₀)` into a momentum bound.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentumBoundForm {
    /// `‖p‖ ≤ sqrt(H_d(t₀) / λ_min{M_d⁻¹})`.
    #[default]
    Nominal,
    /// `‖p‖ ≤ sqrt(2 H_d(t₀) / λ_min{M_d⁻¹})`, which follows from `½λ_min‖p‖² ≤ K_d ≤ H_d(t₀)`.
    Rigorous,
}

impl MomentumBoundForm {
    fn factor(self) -> f64 {
        match self {
            MomentumBoundForm::Nominal => 1.0,
            MomentumBoundForm::Rigorous => 2.0,
        }
    }
}

/// `(c_p1, c_p̃1)` from the initial energy above the minimum.
pub fn momentum_bounds(constants: &BoundConstants, hd_t0: f64) -> Result<(f64, f64)> {
    momentum_bounds_with(constants, hd_t0, MomentumBoundForm::Nominal)
}

pub fn momentum_bounds_with(
    constants: &BoundConstants,
    hd_t0: f64,
    form: MomentumBoundForm,
) -> Result<(f64, f64)> {
    if !(hd_t0 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "H_d(t0) must be non-negative, got {hd_t0}"
        )));
    }
    if !(constants.lam_min_md_inv > 0.0) {
        return Err(Error::NonpositiveEigenvalue {
            name: "lambda_min(M_d^-1)",
            value: constants.lam_min_md_inv,
        });
    }
    if !(constants.lam_min_md > 0.0) {
        return Err(Error::NonpositiveEigenvalue {
            name: "lambda_min(M_d)",
            value: constants.lam_min_md,
        });
    }
    let e = form.factor() * hd_t0;
    Ok((
        (e / constants.lam_min_md_inv).sqrt(),
        (e / constants.lam_min_md).sqrt(),
    ))
}

/// Ultimate bounds `(c_p2, c_p̃2)`; absent unless `λ_min{R₂} > 0`.
pub fn ultimate_bounds(constants: &BoundConstants) -> Option<(f64, f64)> {
    let c = constants;
    if !(c.lam_min_r2 > 0.0) || !(c.mu > 0.0) {
        return None;
    }
    let c_p2 = (c.lam_max_md_inv / c.lam_min_md_inv).sqrt() * c.c_vd * c.lam_max_md_inv
        / (c.lam_min_md_inv.powi(2) * c.lam_min_r2 + c.mu);
    let c_pt2 = (c.lam_max_md / c.lam_min_md).sqrt() * c.c_vd / (c.lam_min_r2 + c.mu);
    Some((c_p2, c_pt2))
}

/// Upper bound on `|τ_i|` for every input when `G` selects the actuated rows.
pub fn control_upper_bound(constants: &BoundConstants, c_p: f64, c_ptilde: f64) -> Vec<f64> {
    let c = constants;
    (0..c.c_v.len())
        .map(|i| {
            c.c_v[i]
                + c.c_lambda[i] * c.c_vd
                + (c.c_m[i] + c.c_lambda[i] * c.c_md) * c_p * c_p
                + c.c_j * c_ptilde * c_ptilde
                + c.lam_max_kv * c_ptilde
        })
        .collect()
}

/// Bounds for a general full-rank `G(q)`: `(upper, lower)`, the lower one built on the
/// infimum `σ` of the potential terms.
pub fn control_bound_general_g(
    constants: &BoundConstants,
    c_p: f64,
    c_ptilde: f64,
) -> (Vec<f64>, Vec<f64>) {
    let c = constants;
    let c_m_max = c.c_m.iter().copied().fold(0.0, f64::max);
    let damp = c.g_norm * c.lam_max_kv * c_ptilde;
    let upper = (0..c.c_v.len())
        .map(|i| {
            c.g_left_norm
                * (c.c_v[i]
                    + c.c_lambda[i] * c.c_vd
                    + (c_m_max + c.c_lambda[i] * c.c_md) * c_p * c_p
                    + c.c_j * c_ptilde * c_ptilde)
                + damp
        })
        .collect();
    let lower = (0..c.c_v.len())
        .map(|i| {
            c.sigma[i]
                - c.g_left_norm
                    * ((c.c_m[i] + c.c_lambda[i] * c.c_md) * c_p * c_p
                        + c.c_j * c_ptilde * c_ptilde)
                - damp
        })
        .collect();
    (upper, lower)
}

/// Quantities of the initial state the bounds depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    /// `H_d(t₀) − V_d(q*)`.
    pub hd_t0: f64,
    pub p_norm: f64,
    pub ptilde_norm: f64,
}

impl InitialCondition {
    pub fn from_state(tgt: &TargetDynamics, s: &ConfigState) -> Result<Self> {
        Ok(Self {
            hd_t0: tgt.energy_above_min(s)?,
            p_norm: s.p.norm(),
            ptilde_norm: tgt.ptilde(&s.q, &s.p)?.norm(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub c_p1: f64,
    pub c_ptilde1: f64,
    pub c_p2: Option<f64>,
    pub c_ptilde2: Option<f64>,
    pub c_p: f64,
    pub c_ptilde: f64,
    /// Whether the ultimate bounds entered `c_p`, `c_p̃`.
    pub ultimate_applied: bool,
    /// Selection-matrix form when `G` is a selection, the general form otherwise.
    pub tau_upper: Vec<f64>,
    pub tau_upper_general: Vec<f64>,
    pub tau_lower: Option<Vec<f64>>,
    pub hd_t0: f64,
    pub momentum_form: MomentumBoundForm,
}

/// Full bound evaluation, including the selection between level-set and ultimate bounds:
/// the ultimate ones are used only if the initial momenta already lie below them.
pub fn bound_report(
    constants: &BoundConstants,
    init: &InitialCondition,
    form: MomentumBoundForm,
) -> Result<BoundReport> {
    let (c_p1, c_ptilde1) = momentum_bounds_with(constants, init.hd_t0, form)?;
    let ultimate = ultimate_bounds(constants);
    let (c_p, c_ptilde, applied) = match ultimate {
        Some((c_p2, c_pt2)) if init.p_norm <= c_p2 && init.ptilde_norm <= c_pt2 => (
            c_p1.min(c_p2),
            c_ptilde1.min(c_pt2),
            c_p2 < c_p1 || c_pt2 < c_ptilde1,
        ),
        _ => (c_p1, c_ptilde1, false),
    };
    let selection = control_upper_bound(constants, c_p, c_ptilde);
    let (general, lower) = control_bound_general_g(constants, c_p, c_ptilde);
    Ok(BoundReport {
        c_p1,
        c_ptilde1,
        c_p2: ultimate.map(|u| u.0),
        c_ptilde2: ultimate.map(|u| u.1),
        c_p,
        c_ptilde,
        ultimate_applied: applied,
        tau_upper: if constants.selection_coupling {
            selection
        } else {
            general.clone()
        },
        tau_upper_general: general,
        tau_lower: if lower.iter().all(|x| x.is_finite()) {
            Some(lower)
        } else {
            None
        },
        hd_t0: init.hd_t0,
        momentum_form: form,
    })
}

/// Interval a coordinate cannot leave while `V_d − V_d(q*) ≤ hd_t0`, with the other
/// coordinates pinned at `q*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confinement {
    pub coordinate: usize,
    pub lower: f64,
    pub upper: f64,
    /// No level crossing before the region edge on that side; the end is the edge.
    pub lower_clipped: bool,
    pub upper_clipped: bool,
}

impl Confinement {
    pub fn bounded(&self) -> bool {
        !self.lower_clipped && !self.upper_clipped
    }

    pub fn max_abs(&self) -> f64 {
        self.lower.abs().max(self.upper.abs())
    }
}

const MARCH_STEPS: usize = 4000;

/// Solve `V_d(q*; q_i = x) − V_d(q*) = hd_t0` by marching outward from `q*_i` to the first
/// crossing and bisecting. Non-finite values of `V_d` count as above the level.
pub fn levelset_confinement(
    tgt: &TargetDynamics,
    region: &Workspace,
    hd_t0: f64,
    coordinate: usize,
) -> Result<Confinement> {
    let q_star = tgt.equilibrium();
    if coordinate >= q_star.len() {
        return Err(Error::Dimension(format!(
            "coordinate {coordinate} out of range"
        )));
    }
    if !(hd_t0 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "H_d(t0) must be non-negative, got {hd_t0}"
        )));
    }
    let v_star = tgt.potential_d(q_star);
    let excess = |x: f64| {
        let mut q = q_star.clone();
        q[coordinate] = x;
        let v = tgt.potential_d(&q) - v_star - hd_t0;
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let origin = q_star[coordinate];
    let side = |edge: f64| -> (f64, bool) {
        if excess(origin) >= 0.0 {
            return (origin, false);
        }
        let mut inside = origin;
        for k in 1..=MARCH_STEPS {
            let x = origin + (edge - origin) * k as f64 / MARCH_STEPS as f64;
            if excess(x) >= 0.0 {
                let (mut a, mut b) = (inside, x);
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if mid == a || mid == b {
                        break;
                    }
                    if excess(mid) >= 0.0 {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                return (b, false);
            }
            inside = x;
        }
        (edge, true)
    };
    let (upper, upper_clipped) = side(region.upper[coordinate]);
    let (lower, lower_clipped) = side(region.lower[coordinate]);
    Ok(Confinement {
        coordinate,
        lower,
        upper,
        lower_clipped,
        upper_clipped,
    })
}

/// Box of all per-coordinate confinement intervals.
pub fn confinement_box(
    tgt: &TargetDynamics,
    region: &Workspace,
    hd_t0: f64,
) -> Result<(Workspace, Vec<Confinement>)> {
    let intervals = (0..region.dim())
        .map(|i| levelset_confinement(tgt, region, hd_t0, i))
        .collect::<Result<Vec<_>>>()?;
    let ws = Workspace::new(
        intervals.iter().map(|c| c.lower).collect(),
        intervals.iter().map(|c| c.upper).collect(),
    );
    Ok((ws, intervals))
}

/// Per-input bound `|τ_i − offset_i| ≤ radius_i` for designs with constant `M`, `M_d` and
/// `J₂ = 0`, keeping `(GᵀG)⁻¹Gᵀ` inside the suprema instead of bounding it by `G_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpBound {
    pub offsets: Vec<f64>,
    /// `max_q |offset_i − ((GᵀG)⁻¹Gᵀ∇V)_i|`.
    pub potential_max: Vec<f64>,
    /// `max_q ‖(GᵀG)⁻¹Gᵀ M_dM⁻¹‖`.
    pub map_norm_max: f64,
    pub c_vd: f64,
    /// Bound on a row of the damping term.
    pub damping: f64,
    pub radius: Vec<f64>,
}

/// Evaluate the sharp per-row bound over `region` (Halton points plus corners).
/// `damping` is the row bound of the damping term; with saturated damping and diagonal
/// `K_v` it is `λ_max{K_v}`.
#[allow(clippy::too_many_arguments)]
pub fn sharp_row_bounds(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    region: &Workspace,
    offsets: &[f64],
    c_vd: f64,
    damping: f64,
    points: usize,
    inflation: f64,
) -> Result<SharpBound> {
    let m = sys.inputs();
    if offsets.len() != m {
        return Err(Error::Dimension(format!(
            "need {m} offsets, got {}",
            offsets.len()
        )));
    }
    let qs = region_samples(tgt, region, points, None);
    let per: Vec<(Vec<f64>, f64)> = qs
        .par_iter()
        .map(|q| {
            let left = LeftInverse::new(&sys.input_coupling(q))?;
            let pot = left.apply(&sys.potential_grad(q));
            let map = left.apply_mat(&lambda_matrix(sys, tgt, q)?);
            Ok((
                (0..m).map(|i| (offsets[i] - pot[i]).abs()).collect(),
                spectral_norm(&map),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut potential_max = vec![0.0f64; m];
    let mut map_norm_max: f64 = 0.0;
    for (pot, map) in per {
        potential_max
            .iter_mut()
            .zip(&pot)
            .for_each(|(a, b)| *a = a.max(*b));
        map_norm_max = map_norm_max.max(map);
    }
    potential_max.iter_mut().for_each(|x| *x *= inflation);
    map_norm_max *= inflation;
    let radius = potential_max
        .iter()
        .map(|pm| pm + map_norm_max * c_vd + damping)
        .collect();
    Ok(SharpBound {
        offsets: offsets.to_vec(),
        potential_max,
        map_norm_max,
        c_vd,
        damping,
        radius,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KvBranch {
    /// `RM⁻¹M_d + M_dM⁻¹R ≻ 0`: keep `K_v` small.
    SmallGain,
    /// Otherwise `K_v` must be large enough that `R₂ ≻ 0`.
    LargeGain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KvAdvisory {
    pub branch: KvBranch,
    pub damping_product_min_eig: f64,
    /// Smallest `κ` (with `K_v = κI`) making `R₂ ≻ 0` on the samples, if one exists.
    pub kappa_for_positive_r2: Option<f64>,
    /// `λ_min{R₂}` keeps vanishing on unactuated directions for every `κ`.
    pub r2_degenerate: bool,
    /// `(κ, λ_max{K_v} c_p̃2 / (stated damping row))`, i.e. the damping-term fraction.
    pub fraction: Vec<(f64, f64)>,
    pub limit_small_gain: f64,
    pub limit_large_gain: f64,
    /// Some `κ` from a logarithmic scan whose fraction is below one.
    pub kappa_below_one: Option<f64>,
}

/// `(λ_M{M_d}/λ_m{M_d})^{1/2} c_Vd κ / (λ_m{R₂(κ)} + μ)`; infinite while `R₂(κ)` is not
/// positive definite.
fn damping_fraction(constants: &BoundConstants, kappa: f64, r2_min: f64) -> f64 {
    if r2_min <= 0.0 {
        return f64::INFINITY;
    }
    (constants.lam_max_md / constants.lam_min_md).sqrt() * constants.c_vd * kappa
        / (r2_min + constants.mu)
}

/// Classify the design and tabulate the damping-term fraction for `K_v = κI`.
pub fn kv_advisory(
    sys: &MechanicalSystem,
    tgt: &TargetDynamics,
    constants: &BoundConstants,
    spec: &SampleSpec,
    kappas: &[f64],
) -> Result<KvAdvisory> {
    let region = spec
        .region
        .clone()
        .unwrap_or_else(|| sys.workspace().clone());
    let qs = region_samples(tgt, &region, spec.points.min(400), spec.energy_cap);
    if qs.is_empty() {
        return Err(Error::EmptyWorkspace);
    }
    let m = sys.inputs();
    let n = sys.dof();
    let mut s_min = f64::INFINITY;
    let mut ggt_min = f64::INFINITY;
    for q in &qs {
        s_min = s_min.min(linalg::min_eigenvalue(&damping_product(sys, tgt, q)?));
        let g = sys.input_coupling(q);
        ggt_min = ggt_min.min(linalg::min_eigenvalue(&(&g * g.transpose())));
    }
    let r2_min = |kappa: f64| -> Result<f64> {
        let kv = Matrix::identity(m, m) * kappa;
        let mut lo = f64::INFINITY;
        for q in &qs {
            lo = lo.min(linalg::min_eigenvalue(&build_r2_with_gain(
                sys, tgt, q, &kv,
            )?));
        }
        Ok(lo)
    };
    let tol = 1e-12;
    let kappa_hi = 1e6;
    let hi_min = r2_min(kappa_hi)?;
    let r2_degenerate = hi_min <= tol * kappa_hi.max(1.0) && m < n;
    let kappa_for_positive_r2 = if r2_min(0.0)? > tol {
        Some(0.0)
    } else if hi_min > tol && !r2_degenerate {
        let (mut a, mut b) = (0.0, kappa_hi);
        for _ in 0..100 {
            let mid = 0.5 * (a + b);
            if r2_min(mid)? > tol {
                b = mid;
            } else {
                a = mid;
            }
        }
        Some(b)
    } else {
        None
    };
    let fraction = kappas
        .iter()
        .map(|&k| Ok((k, damping_fraction(constants, k, r2_min(k)?))))
        .collect::<Result<Vec<_>>>()?;
    let limit_small_gain = if s_min > 0.0 { 0.0 } else { f64::INFINITY };
    let limit_large_gain = if ggt_min > tol {
        (constants.lam_max_md / constants.lam_min_md).sqrt() * constants.c_vd / ggt_min
    } else {
        f64::INFINITY
    };
    let mut kappa_below_one = None;
    for k in (-16..=16).map(|e| 10f64.powf(e as f64 / 4.0)) {
        if damping_fraction(constants, k, r2_min(k)?) < 1.0 {
            kappa_below_one = Some(k);
            break;
        }
    }
    Ok(KvAdvisory {
        branch: if s_min > 0.0 {
            KvBranch::SmallGain
        } else {
            KvBranch::LargeGain
        },
        damping_product_min_eig: s_min,
        kappa_for_positive_r2,
        r2_degenerate,
        fraction,
        limit_small_gain,
        limit_large_gain,
        kappa_below_one,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constants() -> BoundConstants {
        BoundConstants {
            c_v: vec![10.4],
            c_vd: 2.4,
            c_m: vec![0.0],
            c_md: 0.9,
            c_j: 10.4,
            c_lambda: vec![6.0],
            lam_min_md_inv: 0.06,
            lam_max_md_inv: 0.82,
            lam_min_md: 1.0 / 0.82,
            lam_max_md: 1.0 / 0.06,
            lam_min_r2: 0.0,
            lam_max_kv: 5.0,
            g_left_norm: 1.0,
            g_norm: 1.0,
            sigma: vec![-3.0],
            mu: DEFAULT_MU,
            inflation: 1.0,
            samples: 1,
            actuated_rows: vec![1],
            selection_coupling: true,
        }
    }

    #[test]
    fn level_set_bound_from_reference_values() {
        let (c_p1, c_pt1) = momentum_bounds(&constants(), 0.24).unwrap();
        assert!((c_p1 - 2.0).abs() < 1e-12);
        assert!((c_pt1 - (0.24f64 * 0.82).sqrt()).abs() < 1e-12);
        assert!((c_pt1 - 0.44).abs() < 0.005);
    }

    #[test]
    fn zero_energy_gives_zero_bounds() {
        assert_eq!(momentum_bounds(&constants(), 0.0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn rigorous_form_adds_sqrt_two() {
        let c = constants();
        let (a, _) = momentum_bounds(&c, 0.3).unwrap();
        let (b, _) = momentum_bounds_with(&c, 0.3, MomentumBoundForm::Rigorous).unwrap();
        assert!((b / a - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn momentum_bound_errors() {
        let mut c = constants();
        assert!(momentum_bounds(&c, -1.0).is_err());
        c.lam_min_md_inv = 0.0;
        assert!(matches!(
            momentum_bounds(&c, 1.0),
            Err(Error::NonpositiveEigenvalue { .. })
        ));
    }

    #[test]
    fn ultimate_bound_absent_without_damping() {
        assert!(ultimate_bounds(&constants()).is_none());
    }

    #[test]
    fn reference_plug_in_certificate() {
        // 10.4 + 6·2.4 + (0 + 6·0.9)·2² + 10.4·0.44² + 5·0.44
        let tau = control_upper_bound(&constants(), 2.0, 0.44);
        let expect = 10.4 + 14.4 + 21.6 + 10.4 * 0.1936 + 2.2;
        assert!((tau[0] - expect).abs() < 1e-12);
        assert!((tau[0] - 50.6).abs() < 0.05);
    }

    #[test]
    fn constant_inertia_special_case() {
        let mut c = constants();
        c.c_m = vec![0.0];
        c.c_md = 0.0;
        c.c_j = 0.0;
        c.lam_max_kv = 0.0;
        let tau = control_upper_bound(&c, 123.0, 45.0);
        assert!((tau[0] - (10.4 + 6.0 * 2.4)).abs() < 1e-12);
    }

    #[test]
    fn general_form_collapses_for_unit_coupling() {
        let c = constants();
        let (upper, lower) = control_bound_general_g(&c, 2.0, 0.44);
        let sel = control_upper_bound(&c, 2.0, 0.44);
        assert!((upper[0] - sel[0]).abs() < 1e-12);
        assert!(lower[0] < 0.0);
    }

    #[test]
    fn selection_rule_uses_ultimate_bound_only_when_initial_momentum_below_it() {
        let mut c = constants();
        c.lam_min_r2 = 1e3;
        let (c_p2, c_pt2) = ultimate_bounds(&c).unwrap();
        let inside = InitialCondition {
            hd_t0: 0.24,
            p_norm: 0.5 * c_p2,
            ptilde_norm: 0.5 * c_pt2,
        };
        let r = bound_report(&c, &inside, MomentumBoundForm::Nominal).unwrap();
        assert_eq!(r.c_p, r.c_p1.min(c_p2));
        assert_eq!(r.c_ptilde, r.c_ptilde1.min(c_pt2));
        let outside = InitialCondition {
            p_norm: 2.0 * c_p2,
            ..inside
        };
        let r = bound_report(&c, &outside, MomentumBoundForm::Nominal).unwrap();
        assert_eq!(r.c_p, r.c_p1);
        assert!(!r.ultimate_applied);
    }

    #[test]
    fn selection_detection() {
        let g = Matrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(is_selection(&g));
        assert_eq!(actuated_rows(&g), vec![1, 2]);
        let g = Matrix::from_column_slice(2, 1, &[0.5, 1.0]);
        assert!(!is_selection(&g));
    }
}
