#![allow(dead_code)]

use bounded_idapbc::bench::{make_ball_beam, make_vtol, BallBeamParams, VtolDesign, VtolParams};
use bounded_idapbc::bounds::{
    bound_report, estimate_constants, levelset_confinement, sharp_row_bounds, BoundReport,
    InitialCondition, MomentumBoundForm, SampleSpec,
};
use bounded_idapbc::controller::{DampingMode, IdaPbcPolicy, TargetDynamics};
use bounded_idapbc::simulator::{simulate, ControlEnvelope, Monitor, SimConfig, Trajectory};
use bounded_idapbc::{ConfigState, MechanicalSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest initial energy whose sublevel set stays inside the ball-and-beam bound box.
pub const BALL_BEAM_SAFE_ENERGY: f64 = 0.17;

pub fn ball_beam() -> (MechanicalSystem, TargetDynamics) {
    make_ball_beam(&BallBeamParams::default()).unwrap()
}

pub fn vtol() -> VtolDesign {
    make_vtol(&VtolParams::default()).unwrap()
}

pub fn ball_beam_initial_states(count: usize, seed: u64) -> Vec<ConfigState> {
    let (_, tgt) = ball_beam();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let s = ConfigState::from_slices(
            &[rng.random_range(-0.8..0.8), rng.random_range(-0.5..0.5)],
            &[rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)],
        )
        .unwrap();
        if tgt.energy_above_min(&s).unwrap() <= BALL_BEAM_SAFE_ENERGY {
            out.push(s);
        }
    }
    out
}

pub fn vtol_initial_states(count: usize, seed: u64) -> Vec<ConfigState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            ConfigState::from_slices(
                &[
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-15.0..15.0),
                    rng.random_range(-1.2..1.2),
                ],
                &[
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ],
            )
            .unwrap()
        })
        .collect()
}

/// Bounds for one ball-and-beam run, re-estimated on the sublevel set of its own energy.
pub fn ball_beam_bounds(
    tgt: &TargetDynamics,
    sys: &MechanicalSystem,
    s0: &ConfigState,
    form: MomentumBoundForm,
) -> BoundReport {
    let init = InitialCondition::from_state(tgt, s0).unwrap();
    let spec = BallBeamParams::default().bound_spec(init.hd_t0);
    let constants = estimate_constants(sys, tgt, &spec).unwrap();
    bound_report(&constants, &init, form).unwrap()
}

/// Run with momentum, control and energy monitors derived from freshly computed bounds.
pub fn ball_beam_monitored_run(s0: &ConfigState, t_end: f64) -> (Trajectory, BoundReport) {
    let (sys, tgt) = ball_beam();
    let report = ball_beam_bounds(&tgt, &sys, s0, MomentumBoundForm::Rigorous);
    let cfg = SimConfig::new(1e-3, t_end)
        .with_stride(10)
        .with_monitor(Monitor::EnergyDecrease { tol: 1e-6 })
        .with_monitor(Monitor::MomentumBound {
            c_p: report.c_p,
            c_ptilde: report.c_ptilde,
        })
        .with_monitor(Monitor::ControlBound {
            envelopes: vec![ControlEnvelope::symmetric(report.tau_upper.clone())],
        });
    let mut policy = IdaPbcPolicy {
        target: tgt.clone(),
        mode: DampingMode::Linear,
    };
    (simulate(&sys, &mut policy, s0, &cfg).unwrap(), report)
}

/// Single-phase VTOL run with the sharp per-row envelope over the confinement of the run's
/// own initial energy.
pub fn vtol_monitored_run(d: &VtolDesign, s0: &ConfigState, t_end: f64) -> Trajectory {
    let params = VtolParams::default();
    let init = InitialCondition::from_state(&d.target, s0).unwrap();
    let theta =
        levelset_confinement(&d.target, d.system.workspace(), init.hd_t0.max(0.0), 2).unwrap();
    let region = d.system.workspace().with_axis(2, theta.lower, theta.upper);
    let spec = SampleSpec {
        points: 500,
        region: Some(region.clone()),
        ..SampleSpec::default()
    };
    let constants = estimate_constants(&d.system, &d.target, &spec).unwrap();
    let report = bound_report(&constants, &init, MomentumBoundForm::Rigorous).unwrap();
    let sharp = sharp_row_bounds(
        &d.system,
        &d.target,
        &region,
        &[params.g, 0.0],
        constants.c_vd,
        params.kv,
        500,
        constants.inflation,
    )
    .unwrap();
    let envelope = ControlEnvelope {
        phase: None,
        center: sharp.offsets.clone(),
        radius: sharp.radius.clone(),
    };
    let cfg = SimConfig::new(1e-3, t_end)
        .with_stride(10)
        .with_monitor(Monitor::EnergyDecrease { tol: 1e-6 })
        .with_monitor(Monitor::MomentumBound {
            c_p: report.c_p,
            c_ptilde: report.c_ptilde,
        })
        .with_monitor(Monitor::ControlBound {
            envelopes: vec![envelope],
        });
    let mut policy = d.nonsmooth.clone();
    simulate(&d.system, &mut policy, s0, &cfg).unwrap()
}
