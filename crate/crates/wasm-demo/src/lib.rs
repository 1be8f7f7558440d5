//! Browser bindings: each exported function runs one scenario and returns JSON for the
//! page in `www/` to plot. The plain Rust functions underneath are what the tests call.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use bounded_idapbc::bench::{make_ball_beam, make_vtol, BallBeamParams, VtolParams};
use bounded_idapbc::bounds::{
    bound_report, estimate_constants, kv_advisory, levelset_confinement, InitialCondition,
    KvBranch, MomentumBoundForm, SampleSpec,
};
use bounded_idapbc::controller::{DampingMode, IdaPbcPolicy, Phase};
use bounded_idapbc::simulator::{simulate, ControlEnvelope, Monitor, SimConfig, Trajectory};
use bounded_idapbc::ConfigState;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const DT: f64 = 1e-3;
const MAX_T_END: f64 = 120.0;
/// Plotted samples per run.
const PLOT_POINTS: usize = 600;
/// Constant samples; fewer than the CLI default to keep a single-threaded page responsive.
const BOUND_POINTS: usize = 300;

fn stride(t_end: f64) -> usize {
    ((t_end / DT).ceil() as usize).div_ceil(PLOT_POINTS).max(1)
}

fn check_horizon(t_end: f64) -> Result<(), String> {
    if t_end > 0.0 && t_end <= MAX_T_END {
        Ok(())
    } else {
        Err(format!("horizon must lie in (0, {MAX_T_END}] s"))
    }
}

fn column(traj: &Trajectory, f: impl Fn(usize) -> f64) -> Vec<f64> {
    (0..traj.len()).map(f).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct BallBeamRun {
    pub t: Vec<f64>,
    pub ball: Vec<f64>,
    pub angle: Vec<f64>,
    pub tau: Vec<f64>,
    pub hd: Vec<f64>,
    pub p_norm: Vec<f64>,
    pub c_p: f64,
    pub tau_bound: f64,
    pub peak_tau: f64,
    pub peak_p: f64,
    /// Whether the initial level set closes inside the beam on both coordinates; the
    /// bounds are only certified when it does.
    pub confined: bool,
    pub violations: usize,
}

/// Closed loop from `(q₁, q₂)` at rest with the given potential and damping gains.
pub fn ball_beam_run(
    kp: f64,
    kv: f64,
    q1: f64,
    q2: f64,
    t_end: f64,
) -> Result<BallBeamRun, String> {
    check_horizon(t_end)?;
    let params = BallBeamParams {
        kp,
        kv,
        ..BallBeamParams::default()
    };
    let (sys, tgt) = make_ball_beam(&params).map_err(|e| e.to_string())?;
    let s0 = ConfigState::from_slices(&[q1, q2], &[0.0, 0.0]).map_err(|e| e.to_string())?;
    let init = InitialCondition::from_state(&tgt, &s0).map_err(|e| e.to_string())?;
    let spec = SampleSpec {
        points: BOUND_POINTS,
        ..params.bound_spec(init.hd_t0)
    };
    let constants = estimate_constants(&sys, &tgt, &spec).map_err(|e| e.to_string())?;
    let report =
        bound_report(&constants, &init, MomentumBoundForm::Rigorous).map_err(|e| e.to_string())?;
    let region = spec.region.as_ref().unwrap_or(sys.workspace());
    let confined = (0..2).all(|i| {
        levelset_confinement(&tgt, region, init.hd_t0, i)
            .is_ok_and(|c| !c.lower_clipped && !c.upper_clipped)
    });

    let cfg = SimConfig::new(DT, t_end)
        .with_stride(stride(t_end))
        .with_monitor(Monitor::EnergyDecrease { tol: 1e-6 })
        .with_monitor(Monitor::MomentumBound {
            c_p: report.c_p,
            c_ptilde: report.c_ptilde,
        })
        .with_monitor(Monitor::ControlBound {
            envelopes: vec![ControlEnvelope::symmetric(report.tau_upper.clone())],
        });
    let mut policy = IdaPbcPolicy {
        target: tgt,
        mode: DampingMode::Linear,
    };
    let traj = simulate(&sys, &mut policy, &s0, &cfg).map_err(|e| e.to_string())?;
    let tau = column(&traj, |k| traj.controls[k][0]);
    Ok(BallBeamRun {
        t: traj.times.clone(),
        ball: column(&traj, |k| traj.states[k].q[0]),
        angle: column(&traj, |k| traj.states[k].q[1]),
        peak_tau: tau.iter().fold(0.0, |a, b| a.max(b.abs())),
        peak_p: traj.p_norm.iter().copied().fold(0.0, f64::max),
        tau,
        hd: traj.hd.clone(),
        p_norm: traj.p_norm.clone(),
        c_p: report.c_p,
        tau_bound: report.tau_upper[0],
        confined,
        violations: traj.violation_count(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VtolRun {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub theta: Vec<f64>,
    /// `τ₁ − g`.
    pub thrust_offset: Vec<f64>,
    pub torque: Vec<f64>,
    pub switch_time: Option<f64>,
    /// Peaks of `|τ₁ − g|` and `|τ₂|` before the switch.
    pub primary_peak: [f64; 2],
    pub theta_bound: f64,
}

/// Two-phase VTOL landing from `(x, y, θ)` at rest.
pub fn vtol_run(epsilon: f64, x: f64, y: f64, theta: f64, t_end: f64) -> Result<VtolRun, String> {
    check_horizon(t_end)?;
    let params = VtolParams {
        epsilon,
        initial: [x, y, theta, 0.0, 0.0, 0.0],
        ..VtolParams::default()
    };
    let d = make_vtol(&params).map_err(|e| e.to_string())?;
    let mut ctrl = d.two_phase.clone();
    let traj = simulate(
        &d.system,
        &mut ctrl,
        &d.initial,
        &SimConfig::new(DT, t_end).with_stride(stride(t_end)),
    )
    .map_err(|e| e.to_string())?;
    let thrust_offset = column(&traj, |k| traj.controls[k][0] - params.g);
    let torque = column(&traj, |k| traj.controls[k][1]);
    let mut primary_peak = [0.0f64; 2];
    for k in (0..traj.len()).filter(|&k| traj.phases[k] == Phase::Primary) {
        primary_peak[0] = primary_peak[0].max(thrust_offset[k].abs());
        primary_peak[1] = primary_peak[1].max(torque[k].abs());
    }
    Ok(VtolRun {
        t: traj.times.clone(),
        x: column(&traj, |k| traj.states[k].q[0]),
        y: column(&traj, |k| traj.states[k].q[1]),
        theta: column(&traj, |k| traj.states[k].q[2]),
        thrust_offset,
        torque,
        switch_time: traj.switch_time(),
        primary_peak,
        theta_bound: d.theta_confinement.max_abs(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct KvTable {
    pub branch: KvBranch,
    pub kappa_for_positive_r2: Option<f64>,
    /// `(κ, fraction)`; `null` where `R₂` is not positive definite.
    pub rows: Vec<(f64, Option<f64>)>,
}

/// Damping-fraction advisory for the ball-and-beam design at the given gains.
pub fn kv_table(kappas: &[f64]) -> Result<KvTable, String> {
    if kappas.is_empty() || kappas.iter().any(|k| !(*k > 0.0)) {
        return Err("gains must be positive".into());
    }
    let params = BallBeamParams::default();
    let (sys, tgt) = make_ball_beam(&params).map_err(|e| e.to_string())?;
    let init = InitialCondition::from_state(&tgt, &BallBeamParams::initial_state())
        .map_err(|e| e.to_string())?;
    let spec = SampleSpec {
        points: BOUND_POINTS,
        ..params.bound_spec(init.hd_t0)
    };
    let constants = estimate_constants(&sys, &tgt, &spec).map_err(|e| e.to_string())?;
    let advisory = kv_advisory(&sys, &tgt, &constants, &spec, kappas).map_err(|e| e.to_string())?;
    Ok(KvTable {
        branch: advisory.branch,
        kappa_for_positive_r2: advisory.kappa_for_positive_r2,
        rows: advisory
            .fraction
            .iter()
            .map(|(k, f)| (*k, f.is_finite().then_some(*f)))
            .collect(),
    })
}

fn to_js<T: Serialize>(result: Result<T, String>) -> Result<String, JsValue> {
    result
        .and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = ballBeamRun)]
pub fn ball_beam_run_js(kp: f64, kv: f64, q1: f64, q2: f64, t_end: f64) -> Result<String, JsValue> {
    to_js(ball_beam_run(kp, kv, q1, q2, t_end))
}

#[wasm_bindgen(js_name = vtolRun)]
pub fn vtol_run_js(
    epsilon: f64,
    x: f64,
    y: f64,
    theta: f64,
    t_end: f64,
) -> Result<String, JsValue> {
    to_js(vtol_run(epsilon, x, y, theta, t_end))
}

#[wasm_bindgen(js_name = kvTable)]
pub fn kv_table_js(kappas: Vec<f64>) -> Result<String, JsValue> {
    to_js(kv_table(&kappas))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_beam_default_run_stays_inside_its_bounds() {
        let run = ball_beam_run(5.0, 5.0, 0.5, -0.1, 20.0).unwrap();
        assert!(run.confined);
        assert_eq!(run.violations, 0);
        assert!(run.peak_tau < run.tau_bound && run.peak_p <= run.c_p);
        assert!(run.t.len() <= PLOT_POINTS + 2);
        assert!(run.ball.last().unwrap().abs() < 1e-2);
    }

    #[test]
    fn ball_beam_far_start_is_flagged_unconfined() {
        let run = ball_beam_run(5.0, 5.0, 1.9, 0.9, 5.0).unwrap();
        assert!(!run.confined);
    }

    #[test]
    fn vtol_run_switches_within_primary_amplitude() {
        let run = vtol_run(0.5, 20.0, -15.0, 1.3, 60.0).unwrap();
        let switch = run.switch_time.unwrap();
        assert!(switch > 0.0 && switch < 5.0);
        assert!(run.primary_peak.iter().all(|p| *p <= 8.0 + 1e-12));
        assert!(run.y.last().unwrap().abs() < 0.05 && run.theta.last().unwrap().abs() < 0.1);
    }

    #[test]
    fn kv_table_matches_library_advisory() {
        let table = kv_table(&[0.1, 1.0, 50.0]).unwrap();
        assert_eq!(table.branch, KvBranch::LargeGain);
        assert_eq!(table.rows[0].1, None);
        assert!(table.rows[1].1.unwrap() < table.rows[2].1.unwrap());
        let json = serde_json::to_string(&table).unwrap();
        assert!(json.contains("\"large_gain\""));
    }

    #[test]
    fn invalid_inputs_are_errors() {
        assert!(ball_beam_run(5.0, 5.0, 0.5, 0.0, 0.0).is_err());
        assert!(ball_beam_run(-1.0, 5.0, 0.5, 0.0, 1.0).is_err());
        assert!(vtol_run(1.5, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(kv_table(&[]).is_err());
    }
}
