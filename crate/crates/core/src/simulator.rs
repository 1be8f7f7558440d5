//! Fixed-step RK4 simulation in `(q, p)` coordinates with per-step monitors.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::controller::{ControlPolicy, Phase};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::system::{ConfigState, MechanicalSystem};

pub const BLOWUP_LIMIT: f64 = 1e9;

/// Allowed control region `|τ_i − center_i| ≤ radius_i`, active in one phase or in all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEnvelope {
    pub phase: Option<Phase>,
    pub center: Vec<f64>,
    pub radius: Vec<f64>,
}

impl ControlEnvelope {
    pub fn symmetric(radius: Vec<f64>) -> Self {
        let center = vec![0.0; radius.len()];
        Self {
            phase: None,
            center,
            radius,
        }
    }

    pub fn in_phase(mut self, phase: Phase) -> Self {
        self.phase = Some(phase);
        self
    }

    /// First input outside the envelope, with its excess `|τ_i − center_i|` and radius.
    /// The subtraction's own rounding error is not counted as a violation.
    pub fn violation(&self, tau: &Vector) -> Option<(usize, f64, f64)> {
        (0..tau.len()).find_map(|i| {
            let d = (tau[i] - self.center[i]).abs();
            let slack = 4.0 * f64::EPSILON * (tau[i].abs() + self.center[i].abs());
            (!(d <= self.radius[i] + slack)).then_some((i, d, self.radius[i]))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Monitor {
    /// Flag steps where `H_d` grows by more than `tol·dt`.
    EnergyDecrease {
        tol: f64,
    },
    MomentumBound {
        c_p: f64,
        c_ptilde: f64,
    },
    ControlBound {
        envelopes: Vec<ControlEnvelope>,
    },
    PhaseSwitch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub record_stride: usize,
    pub monitors: Vec<Monitor>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 10.0,
            record_stride: 1,
            monitors: vec![Monitor::PhaseSwitch],
        }
    }
}

impl SimConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            ..Self::default()
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn with_monitor(mut self, monitor: Monitor) -> Self {
        self.monitors.push(monitor);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_end > 0.0 && self.dt <= self.t_end) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < dt <= t_end, got dt={} t_end={}",
                self.dt, self.t_end
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidArgument(
                "record_stride must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    EnergyDecrease,
    MomentumBound,
    ControlBound,
    PhaseSwitch,
    NumericalBlowup,
}

impl EventKind {
    /// Whether the event invalidates a bound certificate.
    pub fn is_violation(self) -> bool {
        matches!(
            self,
            EventKind::EnergyDecrease | EventKind::MomentumBound | EventKind::ControlBound
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    /// Index into the recorded samples this event refers to.
    pub sample: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ConfigState>,
    pub controls: Vec<Vector>,
    pub hd: Vec<f64>,
    pub p_norm: Vec<f64>,
    pub ptilde_norm: Vec<f64>,
    pub phases: Vec<Phase>,
    pub events: Vec<Event>,
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&ConfigState> {
        self.states.last()
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn violation_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind.is_violation()).count()
    }

    pub fn switch_time(&self) -> Option<f64> {
        self.events_of(EventKind::PhaseSwitch)
            .next()
            .map(|e| e.time)
    }
}

struct Sample {
    tau: Vector,
    hd: f64,
    p_norm: f64,
    ptilde_norm: f64,
}

fn observe_sample<C: ControlPolicy + ?Sized>(
    sys: &MechanicalSystem,
    ctrl: &C,
    t: f64,
    s: &ConfigState,
) -> Result<Sample> {
    let tau = ctrl.control(sys, t, s)?;
    let (hd, ptilde_norm) = match ctrl.target() {
        Some(tgt) => (tgt.energy(s)?, tgt.ptilde(&s.q, &s.p)?.norm()),
        None => (f64::NAN, f64::NAN),
    };
    Ok(Sample {
        tau,
        hd,
        p_norm: s.p.norm(),
        ptilde_norm,
    })
}

fn field<C: ControlPolicy + ?Sized>(
    sys: &MechanicalSystem,
    ctrl: &C,
    t: f64,
    x: &Vector,
) -> Result<Vector> {
    let s = ConfigState::from_stacked(x);
    let tau = ctrl.control(sys, t, &s)?;
    sys.open_loop_vector_field(&s, &tau)
}

fn rk4_step<C: ControlPolicy + ?Sized>(
    sys: &MechanicalSystem,
    ctrl: &C,
    t: f64,
    x: &Vector,
    dt: f64,
) -> Result<Vector> {
    let k1 = field(sys, ctrl, t, x)?;
    let k2 = field(sys, ctrl, t + 0.5 * dt, &(x + &k1 * (0.5 * dt)))?;
    let k3 = field(sys, ctrl, t + 0.5 * dt, &(x + &k2 * (0.5 * dt)))?;
    let k4 = field(sys, ctrl, t + dt, &(x + &k3 * dt))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
}

fn blown_up(x: &Vector) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_LIMIT)
}

/// Integrate the closed loop from `s0`. The controller's `observe` runs once per step on
/// the step-start state; the control is re-evaluated at every RK4 stage. Steps that fire a
/// monitor are always recorded, whatever the stride.
pub fn simulate<C: ControlPolicy + ?Sized>(
    sys: &MechanicalSystem,
    ctrl: &mut C,
    s0: &ConfigState,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    sys.check_dims(s0)?;
    let mut traj = Trajectory::default();
    let mut x = s0.stacked();
    let steps = cfg.steps();
    let mut prev_hd: Option<f64> = None;

    for k in 0..=steps {
        let t = (k as f64 * cfg.dt).min(cfg.t_end);
        let s = ConfigState::from_stacked(&x);
        let switched = ctrl.observe(t, &s);
        let sample = match observe_sample(sys, ctrl, t, &s) {
            Ok(v) => v,
            Err(e) => {
                truncate(&mut traj, t, format!("control evaluation failed: {e}"));
                break;
            }
        };

        let mut events = Vec::new();
        for m in &cfg.monitors {
            match m {
                Monitor::EnergyDecrease { tol } => {
                    if let (Some(h), Phase::Secondary) = (prev_hd, ctrl.phase()) {
                        let dt_prev = t - traj_time_before(k, cfg);
                        if sample.hd - h > tol * dt_prev {
                            events.push((
                                EventKind::EnergyDecrease,
                                format!("H_d rose by {:.3e}", sample.hd - h),
                            ));
                        }
                    }
                }
                Monitor::MomentumBound { c_p, c_ptilde } => {
                    if !(sample.p_norm <= *c_p) {
                        events.push((
                            EventKind::MomentumBound,
                            format!("|p| = {} > {}", sample.p_norm, c_p),
                        ));
                    }
                    if sample.ptilde_norm.is_finite() && !(sample.ptilde_norm <= *c_ptilde) {
                        events.push((
                            EventKind::MomentumBound,
                            format!("|p~| = {} > {}", sample.ptilde_norm, c_ptilde),
                        ));
                    }
                }
                Monitor::ControlBound { envelopes } => {
                    let phase = ctrl.phase();
                    for env in envelopes
                        .iter()
                        .filter(|e| e.phase.is_none_or(|p| p == phase))
                    {
                        if let Some((i, d, r)) = env.violation(&sample.tau) {
                            events.push((
                                EventKind::ControlBound,
                                format!("|tau_{} - {}| = {} > {}", i + 1, env.center[i], d, r),
                            ));
                        }
                    }
                }
                Monitor::PhaseSwitch => {
                    if let Some(p) = switched {
                        events.push((
                            EventKind::PhaseSwitch,
                            format!("entered phase {}", p.index()),
                        ));
                    }
                }
            }
        }
        // H_d need not decrease under a primary law; restart the comparison at the switch
        prev_hd = (ctrl.phase() == Phase::Secondary).then_some(sample.hd);

        if k % cfg.record_stride == 0 || k == steps || !events.is_empty() {
            let idx = traj.times.len();
            traj.events
                .extend(events.into_iter().map(|(kind, detail)| Event {
                    time: t,
                    kind,
                    sample: idx,
                    detail,
                }));
            traj.times.push(t);
            traj.states.push(s);
            traj.controls.push(sample.tau);
            traj.hd.push(sample.hd);
            traj.p_norm.push(sample.p_norm);
            traj.ptilde_norm.push(sample.ptilde_norm);
            traj.phases.push(ctrl.phase());
        }
        if k == steps {
            break;
        }

        let h = ((k + 1) as f64 * cfg.dt).min(cfg.t_end) - t;
        match rk4_step(sys, ctrl, t, &x, h) {
            Ok(next) if !blown_up(&next) => x = next,
            Ok(next) => {
                truncate(
                    &mut traj,
                    t + h,
                    format!("state left the finite range: {:?}", next.as_slice()),
                );
                break;
            }
            Err(e) => {
                truncate(
                    &mut traj,
                    t + h,
                    format!("vector field evaluation failed: {e}"),
                );
                break;
            }
        }
    }
    Ok(traj)
}

fn traj_time_before(k: usize, cfg: &SimConfig) -> f64 {
    (k.saturating_sub(1) as f64 * cfg.dt).min(cfg.t_end)
}

fn truncate(traj: &mut Trajectory, t: f64, detail: String) {
    let sample = traj.times.len().saturating_sub(1);
    traj.events.push(Event {
        time: t,
        kind: EventKind::NumericalBlowup,
        sample,
        detail,
    });
    traj.truncated = true;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdViolation {
    pub index: usize,
    pub time: f64,
    pub increase: f64,
}

/// Recorded steps where `hd[k+1] − hd[k] > tol·(t[k+1] − t[k])`. Steps that start or end
/// under a primary law are skipped.
pub fn check_hd_decrease(traj: &Trajectory, tol: f64) -> Vec<HdViolation> {
    let secondary = |k: usize| traj.phases.get(k).is_none_or(|p| *p == Phase::Secondary);
    traj.hd
        .windows(2)
        .zip(traj.times.windows(2))
        .enumerate()
        .filter(|(k, _)| secondary(*k) && secondary(k + 1))
        .filter_map(|(k, (h, t))| {
            let inc = h[1] - h[0];
            (inc > tol * (t[1] - t[0])).then_some(HdViolation {
                index: k,
                time: t[1],
                increase: inc,
            })
        })
        .collect()
}

/// Peaks and outcome of a run, as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub samples: usize,
    pub t_final: f64,
    pub truncated: bool,
    pub final_q: Vec<f64>,
    pub final_p: Vec<f64>,
    pub peak_p_norm: f64,
    pub peak_ptilde_norm: f64,
    /// `max_t |τ_i|` per input.
    pub peak_tau: Vec<f64>,
    pub hd_initial: f64,
    pub hd_final: f64,
    pub hd_decrease_violations: usize,
    pub momentum_bound_violations: usize,
    pub control_bound_violations: usize,
    pub switch_time: Option<f64>,
}

impl TrajectorySummary {
    pub fn from_trajectory(traj: &Trajectory, hd_tol: f64) -> Self {
        let m = traj.controls.first().map_or(0, |c| c.len());
        let mut peak_tau = vec![0.0f64; m];
        for c in &traj.controls {
            peak_tau
                .iter_mut()
                .zip(c.iter())
                .for_each(|(a, b)| *a = a.max(b.abs()));
        }
        let last = traj.states.last();
        let fmax = |v: &[f64]| {
            v.iter()
                .copied()
                .filter(|x| x.is_finite())
                .fold(0.0, f64::max)
        };
        let count = |k| traj.events_of(k).count();
        Self {
            samples: traj.len(),
            t_final: traj.times.last().copied().unwrap_or(0.0),
            truncated: traj.truncated,
            final_q: last.map_or(vec![], |s| s.q.iter().copied().collect()),
            final_p: last.map_or(vec![], |s| s.p.iter().copied().collect()),
            peak_p_norm: fmax(&traj.p_norm),
            peak_ptilde_norm: fmax(&traj.ptilde_norm),
            peak_tau,
            hd_initial: traj.hd.first().copied().unwrap_or(f64::NAN),
            hd_final: traj.hd.last().copied().unwrap_or(f64::NAN),
            hd_decrease_violations: check_hd_decrease(traj, hd_tol)
                .len()
                .max(count(EventKind::EnergyDecrease)),
            momentum_bound_violations: count(EventKind::MomentumBound),
            control_bound_violations: count(EventKind::ControlBound),
            switch_time: traj.switch_time(),
        }
    }

    pub fn soundness_violations(&self) -> usize {
        self.hd_decrease_violations + self.momentum_bound_violations + self.control_bound_violations
    }
}

/// Write `t, q_1..q_n, p_1..p_n, tau_1..tau_m, H_d, norm_p, norm_ptilde, phase`.
pub fn write_csv<W: Write>(traj: &Trajectory, writer: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let n = traj.states.first().map_or(0, |s| s.dim());
    let m = traj.controls.first().map_or(0, |c| c.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("q_{i}")));
    header.extend((1..=n).map(|i| format!("p_{i}")));
    header.extend((1..=m).map(|i| format!("tau_{i}")));
    header.extend(["H_d", "norm_p", "norm_ptilde", "phase"].map(String::from));
    w.write_record(&header)?;
    for k in 0..traj.len() {
        let s = &traj.states[k];
        let mut row = vec![traj.times[k].to_string()];
        row.extend(
            s.q.iter()
                .chain(s.p.iter())
                .chain(traj.controls[k].iter())
                .map(|v| v.to_string()),
        );
        row.extend([traj.hd[k], traj.p_norm[k], traj.ptilde_norm[k]].map(|v| v.to_string()));
        row.push(traj.phases[k].index().to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
