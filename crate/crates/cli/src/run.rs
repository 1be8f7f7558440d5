//! The verify, bound, simulate and benchmark pipelines.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use bounded_idapbc::bench::ball_beam::{reference_bound_constants, REFERENCE_TAU_BOUND};
use bounded_idapbc::bench::{
    make_ball_beam, make_vtol, BallBeamParams, BenchmarkName, VtolDesign, VtolParams,
};
use bounded_idapbc::bounds::{
    bound_report, control_upper_bound, estimate_constants, kv_advisory, levelset_confinement,
    sharp_row_bounds, validate_constants, BoundConstants, BoundReport, Confinement, ConstantCheck,
    InitialCondition, KvAdvisory, MomentumBoundForm, SampleSpec, SharpBound,
};
use bounded_idapbc::controller::{ControlPolicy, DampingMode, IdaPbcPolicy, Phase, TargetDynamics};
use bounded_idapbc::matching::{verify_matching, MatchingConfig, MatchingReport};
use bounded_idapbc::sampling::Workspace;
use bounded_idapbc::simulator::{
    simulate, write_csv, ControlEnvelope, Event, EventKind, Monitor, SimConfig, Trajectory,
    TrajectorySummary,
};
use bounded_idapbc::{ConfigState, MechanicalSystem};
use serde::Serialize;

use crate::spec::{Command, RunSpec};
use crate::AppError;

/// What a run produced and whether it should fail the process.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub matching_passed: Option<bool>,
    pub soundness_violations: usize,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        let failed = self.soundness_violations > 0 || self.matching_passed == Some(false);
        i32::from(failed)
    }
}

// built once per run
#[allow(clippy::large_enum_variant)]
enum Plant {
    BallBeam {
        sys: MechanicalSystem,
        tgt: TargetDynamics,
        params: BallBeamParams,
    },
    Vtol {
        design: VtolDesign,
        params: VtolParams,
    },
}

struct Scenario {
    name: BenchmarkName,
    plant: Plant,
    initial: ConfigState,
}

impl Scenario {
    fn build(spec: &RunSpec) -> Result<Self, AppError> {
        let sys = &spec.system;
        let name = sys.benchmark;
        Ok(match name {
            BenchmarkName::BallBeam => {
                let params = sys.ball_beam.clone().unwrap_or_default();
                let (s, t) = make_ball_beam(&params)?;
                let initial = match &sys.initial {
                    Some(v) => ConfigState::from_slices(&v[..2], &v[2..])?,
                    None => BallBeamParams::initial_state(),
                };
                Scenario {
                    name,
                    plant: Plant::BallBeam {
                        sys: s,
                        tgt: t,
                        params,
                    },
                    initial,
                }
            }
            BenchmarkName::VtolNonsmooth | BenchmarkName::VtolTwoPhase => {
                let mut params = sys.vtol.clone().unwrap_or_default();
                if let Some(v) = &sys.initial {
                    params.initial.copy_from_slice(v);
                }
                let design = make_vtol(&params)?;
                let initial = design.initial.clone();
                Scenario {
                    name,
                    plant: Plant::Vtol { design, params },
                    initial,
                }
            }
        })
    }

    fn parts(&self) -> (&MechanicalSystem, &TargetDynamics) {
        match &self.plant {
            Plant::BallBeam { sys, tgt, .. } => (sys, tgt),
            Plant::Vtol { design, .. } => (&design.system, &design.target),
        }
    }

    fn sample_spec(&self, spec: &RunSpec, hd_t0: f64) -> SampleSpec {
        let base = match &self.plant {
            Plant::BallBeam { params, .. } => params.bound_spec(hd_t0),
            Plant::Vtol { design, .. } => SampleSpec {
                region: Some(design.confined_region()),
                ..SampleSpec::default()
            },
        };
        SampleSpec {
            points: spec.bounds.samples,
            mu: spec.bounds.mu,
            inflation: spec.bounds.inflation,
            ..base
        }
    }
}

/// Constants plus an independent check that fresh samples stay below them.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsArtifact {
    pub benchmark: BenchmarkName,
    pub constants: BoundConstants,
    pub validation: ConstantCheck,
    pub validation_seed: u64,
}

/// Control-effort bound recomputed from the reference constants, next to the reference
/// effort bound.
#[derive(Debug, Clone, Serialize)]
pub struct ReferenceComparison {
    pub c_p: f64,
    pub c_ptilde: f64,
    pub certificate_from_reference_constants: f64,
    pub reported_bound: f64,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsArtifact {
    pub benchmark: BenchmarkName,
    pub initial: InitialCondition,
    pub nominal: BoundReport,
    pub rigorous: BoundReport,
    /// The form the simulation monitors use.
    pub monitor_form: MomentumBoundForm,
    pub confinement: Vec<Confinement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sharp: Option<SharpBound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceComparison>,
    pub kv_advisory: KvAdvisory,
}

struct Bounds {
    constants: BoundConstants,
    spec: SampleSpec,
    artifact: BoundsArtifact,
    envelope: ControlEnvelope,
}

fn compute_bounds(sc: &Scenario, spec: &RunSpec) -> Result<Bounds, AppError> {
    let (sys, tgt) = sc.parts();
    let init = InitialCondition::from_state(tgt, &sc.initial)?;
    let sample = sc.sample_spec(spec, init.hd_t0);
    let constants = estimate_constants(sys, tgt, &sample)?;
    let nominal = bound_report(&constants, &init, MomentumBoundForm::Nominal)?;
    let rigorous = bound_report(&constants, &init, MomentumBoundForm::Rigorous)?;
    let region = sample
        .region
        .clone()
        .unwrap_or_else(|| sys.workspace().clone());
    let confinement = (0..sys.dof())
        .map(|i| levelset_confinement(tgt, sys.workspace(), init.hd_t0.max(0.0), i))
        .collect::<Result<Vec<_>, _>>()?;
    let advisory = kv_advisory(sys, tgt, &constants, &sample, &spec.bounds.advisory_gains)?;

    let (sharp, reference, envelope) = match &sc.plant {
        Plant::BallBeam { .. } => {
            let (c_p, c_ptilde) = (2.0, 0.44);
            let plug_in =
                control_upper_bound(&reference_bound_constants(&constants), c_p, c_ptilde)[0];
            let note = format!(
                "effort bound formula at the reference constants with c_p = {c_p}, c_ptilde = {c_ptilde} gives \
                 {plug_in:.1}, not the reference effort bound {REFERENCE_TAU_BOUND}; the monitored certificate is the \
                 formula at the estimated constants"
            );
            let reference = ReferenceComparison {
                c_p,
                c_ptilde,
                certificate_from_reference_constants: plug_in,
                reported_bound: REFERENCE_TAU_BOUND,
                note,
            };
            (
                None,
                Some(reference),
                ControlEnvelope::symmetric(rigorous.tau_upper.clone()),
            )
        }
        Plant::Vtol { params, .. } => {
            let sharp = sharp_row_bounds(
                sys,
                tgt,
                &region,
                &[params.g, 0.0],
                constants.c_vd,
                params.kv,
                spec.bounds.samples,
                constants.inflation,
            )?;
            let envelope = ControlEnvelope {
                phase: None,
                center: sharp.offsets.clone(),
                radius: sharp.radius.clone(),
            };
            (Some(sharp), None, envelope)
        }
    };
    Ok(Bounds {
        constants,
        spec: sample,
        envelope,
        artifact: BoundsArtifact {
            benchmark: sc.name,
            initial: init,
            nominal,
            rigorous,
            monitor_form: MomentumBoundForm::Rigorous,
            confinement,
            sharp,
            reference,
            kv_advisory: advisory,
        },
    })
}

/// Peak control deviation from the envelope centre within one phase.
#[derive(Debug, Clone, Serialize)]
pub struct PhasePeaks {
    pub phase: Phase,
    pub samples: usize,
    pub center: Vec<f64>,
    pub peak_tau_offset: Vec<f64>,
    pub peak_p_norm: f64,
}

/// Bounds re-derived from the state at the switch, for the second phase.
#[derive(Debug, Clone, Serialize)]
pub struct PostSwitchBounds {
    pub time: f64,
    pub hd: f64,
    pub c_p: f64,
    pub c_ptilde: f64,
    pub tau_radius: Vec<f64>,
    pub theta_confinement: Confinement,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub benchmark: BenchmarkName,
    pub command: Command,
    pub dt: f64,
    pub t_end: f64,
    pub monitors: Vec<Monitor>,
    #[serde(flatten)]
    pub trajectory: TrajectorySummary,
    pub phases: Vec<PhasePeaks>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub post_switch: Option<PostSwitchBounds>,
    pub distance_to_equilibrium: f64,
    pub final_momentum: f64,
    pub soundness_violations: usize,
    /// Violation and switch events, capped at [`MAX_EVENTS`].
    pub events: Vec<Event>,
}

pub const MAX_EVENTS: usize = 100;

/// Second-phase checks of a two-phase run, on the recorded samples after the switch. The
/// momentum bound and control envelope only hold from the switch on, so they are derived
/// from the switch state rather than from `t₀`.
fn check_after_switch(
    design: &VtolDesign,
    params: &VtolParams,
    spec: &RunSpec,
    traj: &mut Trajectory,
) -> Result<Option<PostSwitchBounds>, AppError> {
    let Some(k) = traj.phases.iter().position(|p| *p == Phase::Secondary) else {
        return Ok(None);
    };
    let (sys, tgt) = (&design.system, &design.target);
    let init = InitialCondition::from_state(tgt, &traj.states[k])?;
    let theta = levelset_confinement(tgt, sys.workspace(), init.hd_t0.max(0.0), 2)?;
    let region: Workspace = sys.workspace().with_axis(2, theta.lower, theta.upper);
    let sample = SampleSpec {
        points: spec.bounds.samples,
        region: Some(region.clone()),
        mu: spec.bounds.mu,
        inflation: spec.bounds.inflation,
        ..SampleSpec::default()
    };
    let constants = estimate_constants(sys, tgt, &sample)?;
    let report = bound_report(&constants, &init, MomentumBoundForm::Rigorous)?;
    let sharp = sharp_row_bounds(
        sys,
        tgt,
        &region,
        &[params.g, 0.0],
        constants.c_vd,
        params.kv,
        spec.bounds.samples,
        constants.inflation,
    )?;
    let envelope = ControlEnvelope {
        phase: None,
        center: sharp.offsets.clone(),
        radius: sharp.radius.clone(),
    };
    let mut found = Vec::new();
    for j in k..traj.len() {
        let (p, pt) = (traj.p_norm[j], traj.ptilde_norm[j]);
        if p > report.c_p || pt > report.c_ptilde {
            found.push(Event {
                time: traj.times[j],
                kind: EventKind::MomentumBound,
                sample: j,
                detail: format!(
                    "after switch: |p| = {p:.6} (bound {:.6}), |ptilde| = {pt:.6} (bound {:.6})",
                    report.c_p, report.c_ptilde
                ),
            });
        }
        if let Some((i, value, bound)) = envelope.violation(&traj.controls[j]) {
            found.push(Event {
                time: traj.times[j],
                kind: EventKind::ControlBound,
                sample: j,
                detail: format!(
                    "after switch: |tau_{} - center| = {value:.6} > {bound:.6}",
                    i + 1
                ),
            });
        }
    }
    traj.events.extend(found);
    traj.events.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(Some(PostSwitchBounds {
        time: traj.times[k],
        hd: init.hd_t0,
        c_p: report.c_p,
        c_ptilde: report.c_ptilde,
        tau_radius: sharp.radius,
        theta_confinement: theta,
    }))
}

fn phase_peaks(traj: &Trajectory, center: &[f64]) -> Vec<PhasePeaks> {
    [Phase::Primary, Phase::Secondary]
        .into_iter()
        .filter_map(|phase| {
            let idx: Vec<usize> = (0..traj.len())
                .filter(|&j| traj.phases[j] == phase)
                .collect();
            if idx.is_empty() {
                return None;
            }
            let mut peak = vec![0.0f64; center.len()];
            for &j in &idx {
                for (i, c) in center.iter().enumerate() {
                    peak[i] = peak[i].max((traj.controls[j][i] - c).abs());
                }
            }
            let peak_p_norm = idx.iter().map(|&j| traj.p_norm[j]).fold(0.0, f64::max);
            Some(PhasePeaks {
                phase,
                samples: idx.len(),
                center: center.to_vec(),
                peak_tau_offset: peak,
                peak_p_norm,
            })
        })
        .collect()
}

fn run_simulation(
    sc: &Scenario,
    bounds: &Bounds,
    spec: &RunSpec,
) -> Result<(Trajectory, RunSummary), AppError> {
    let (sys, tgt) = sc.parts();
    let rig = &bounds.artifact.rigorous;
    let t_end = spec.t_end();
    let mut monitors = vec![Monitor::EnergyDecrease {
        tol: spec.simulation.hd_tol,
    }];
    let (mut policy, center): (Box<dyn ControlPolicy>, Vec<f64>) = match (&sc.plant, sc.name) {
        (Plant::BallBeam { tgt, .. }, _) => (
            Box::new(IdaPbcPolicy {
                target: tgt.clone(),
                mode: DampingMode::Linear,
            }),
            vec![0.0],
        ),
        (Plant::Vtol { design, params }, BenchmarkName::VtolTwoPhase) => {
            monitors.push(Monitor::ControlBound {
                envelopes: vec![ControlEnvelope {
                    phase: Some(Phase::Primary),
                    center: vec![params.g, 0.0],
                    radius: params.primary_amplitude.to_vec(),
                }],
            });
            (Box::new(design.two_phase.clone()), vec![params.g, 0.0])
        }
        (Plant::Vtol { design, params }, _) => {
            (Box::new(design.nonsmooth.clone()), vec![params.g, 0.0])
        }
    };
    if sc.name != BenchmarkName::VtolTwoPhase {
        monitors.push(Monitor::MomentumBound {
            c_p: rig.c_p,
            c_ptilde: rig.c_ptilde,
        });
        monitors.push(Monitor::ControlBound {
            envelopes: vec![bounds.envelope.clone()],
        });
    }
    let mut cfg =
        SimConfig::new(spec.simulation.dt, t_end).with_stride(spec.simulation.record_stride);
    for m in &monitors {
        cfg = cfg.with_monitor(m.clone());
    }
    let mut traj = simulate(sys, policy.as_mut(), &sc.initial, &cfg)?;
    let post_switch = match &sc.plant {
        Plant::Vtol { design, params } if sc.name == BenchmarkName::VtolTwoPhase => {
            check_after_switch(design, params, spec, &mut traj)?
        }
        _ => None,
    };
    let summary = TrajectorySummary::from_trajectory(&traj, spec.simulation.hd_tol);
    let last = traj
        .last_state()
        .cloned()
        .unwrap_or_else(|| sc.initial.clone());
    let events: Vec<Event> = traj
        .events
        .iter()
        .filter(|e| e.kind.is_violation() || e.kind == EventKind::PhaseSwitch)
        .take(MAX_EVENTS)
        .cloned()
        .collect();
    let violations = summary.soundness_violations() + traj.truncated as usize;
    let run = RunSummary {
        benchmark: sc.name,
        command: spec.command,
        dt: spec.simulation.dt,
        t_end,
        monitors,
        phases: phase_peaks(&traj, &center),
        post_switch,
        distance_to_equilibrium: (&last.q - tgt.equilibrium()).norm(),
        final_momentum: last.p.norm(),
        soundness_violations: violations,
        events,
        trajectory: summary,
    };
    Ok((traj, run))
}

fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    value: &T,
    out: &mut Outcome,
) -> Result<(), AppError> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| AppError::io(&path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(|e| AppError::Output {
        path: path.clone(),
        message: e.to_string(),
    })?;
    out.files.push(path);
    Ok(())
}

fn verify(sc: &Scenario, spec: &RunSpec, out: &mut Outcome) -> Result<MatchingReport, AppError> {
    let (sys, tgt) = sc.parts();
    let cfg = MatchingConfig {
        samples: spec.bounds.matching_samples,
        ..MatchingConfig::default()
    };
    let report = verify_matching(sys, tgt, &cfg)?;
    out.matching_passed = Some(report.passed);
    write_json(&spec.output.dir, "matching.json", &report, out)?;
    Ok(report)
}

fn bound(
    sc: &Scenario,
    bounds: &Bounds,
    spec: &RunSpec,
    out: &mut Outcome,
) -> Result<(), AppError> {
    let (sys, tgt) = sc.parts();
    let validation = validate_constants(
        sys,
        tgt,
        &bounds.constants,
        &bounds.spec,
        bounds.artifact.rigorous.c_p,
        spec.bounds.validation_samples,
        spec.bounds.seed,
    )?;
    let constants = ConstantsArtifact {
        benchmark: sc.name,
        constants: bounds.constants.clone(),
        validation,
        validation_seed: spec.bounds.seed,
    };
    write_json(&spec.output.dir, "constants.json", &constants, out)?;
    write_json(&spec.output.dir, "bounds.json", &bounds.artifact, out)
}

fn simulate_and_write(
    sc: &Scenario,
    bounds: &Bounds,
    spec: &RunSpec,
    out: &mut Outcome,
) -> Result<RunSummary, AppError> {
    let (traj, summary) = run_simulation(sc, bounds, spec)?;
    let path = spec.output.dir.join("trajectory.csv");
    let file = File::create(&path).map_err(|e| AppError::io(&path, e))?;
    write_csv(&traj, BufWriter::new(file)).map_err(|e| AppError::Output {
        path: path.clone(),
        message: e.to_string(),
    })?;
    out.files.push(path);
    out.soundness_violations = summary.soundness_violations;
    write_json(&spec.output.dir, "summary.json", &summary, out)?;
    Ok(summary)
}

/// Execute `spec`, writing its artifacts into the output directory.
pub fn run(spec: &RunSpec) -> Result<Outcome, AppError> {
    spec.validate()?;
    let dir = &spec.output.dir;
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    let sc = Scenario::build(spec)?;
    let mut out = Outcome::default();
    match spec.command {
        Command::Verify => {
            verify(&sc, spec, &mut out)?;
        }
        Command::Bound => {
            let b = compute_bounds(&sc, spec)?;
            bound(&sc, &b, spec, &mut out)?;
        }
        Command::Simulate => {
            let b = compute_bounds(&sc, spec)?;
            simulate_and_write(&sc, &b, spec, &mut out)?;
        }
        Command::Benchmark => {
            verify(&sc, spec, &mut out)?;
            let b = compute_bounds(&sc, spec)?;
            bound(&sc, &b, spec, &mut out)?;
            simulate_and_write(&sc, &b, spec, &mut out)?;
        }
    }
    Ok(out)
}
