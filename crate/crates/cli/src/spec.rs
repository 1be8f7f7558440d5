//! Run specification and its TOML form.

use std::path::{Path, PathBuf};

use bounded_idapbc::bench::{BallBeamParams, BenchmarkName, VtolParams};
use bounded_idapbc::bounds::{DEFAULT_INFLATION, DEFAULT_MU};
use serde::{Deserialize, Serialize};

use crate::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Verify,
    Bound,
    Simulate,
    Benchmark,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Bound => "bound",
            Command::Simulate => "simulate",
            Command::Benchmark => "benchmark",
        }
    }
}

/// Which system to build. Parameter sections override the benchmark defaults; a section
/// for the other family is rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub benchmark: BenchmarkName,
    /// `(q, p)` at `t₀`; defaults to the benchmark's own initial state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_beam: Option<BallBeamParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vtol: Option<VtolParams>,
}

impl SystemSpec {
    pub fn benchmark(name: BenchmarkName) -> Self {
        Self {
            benchmark: name,
            initial: None,
            ball_beam: None,
            vtol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSpec {
    pub dt: f64,
    /// Benchmark default when absent (30 s ball-and-beam, 60 s VTOL).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    pub record_stride: usize,
    /// Slack on the step-to-step `H_d` decrease check.
    pub hd_tol: f64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: None,
            record_stride: 10,
            hd_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSpec {
    /// Admissible configuration samples for the constant estimates.
    pub samples: usize,
    pub mu: f64,
    pub inflation: f64,
    /// Seed of the independent validation draw.
    pub seed: u64,
    pub validation_samples: usize,
    pub matching_samples: usize,
    /// Gains at which the damping-fraction advisory is tabulated.
    pub advisory_gains: Vec<f64>,
}

impl Default for BoundSpec {
    fn default() -> Self {
        Self {
            samples: 1000,
            mu: DEFAULT_MU,
            inflation: DEFAULT_INFLATION,
            seed: 0,
            validation_samples: 10_000,
            matching_samples: 1000,
            advisory_gains: vec![0.1, 1.0, 5.0, 50.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub command: Command,
    pub system: SystemSpec,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub bounds: BoundSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Config file shape: the command may come from the command line instead.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    command: Option<Command>,
    system: SystemSpec,
    #[serde(default)]
    simulation: SimulationSpec,
    #[serde(default)]
    bounds: BoundSpec,
    #[serde(default)]
    output: OutputSpec,
}

impl RunSpec {
    pub fn new(command: Command, benchmark: BenchmarkName) -> Self {
        Self {
            command,
            system: SystemSpec::benchmark(benchmark),
            simulation: SimulationSpec::default(),
            bounds: BoundSpec::default(),
            output: OutputSpec::default(),
        }
    }

    /// Parse a config; `command` fills in or must agree with the file's own command.
    pub fn from_toml(text: &str, command: Option<Command>) -> Result<Self, AppError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        let command = match (file.command, command) {
            (Some(a), Some(b)) if a != b => {
                return Err(AppError::Config(format!(
                    "command: config says `{}` but `{}` was requested",
                    a.as_str(),
                    b.as_str()
                )))
            }
            (Some(c), _) | (None, Some(c)) => c,
            (None, None) => return Err(AppError::Config("command: missing".into())),
        };
        let spec = Self {
            command,
            system: file.system,
            simulation: file.simulation,
            bounds: file.bounds,
            output: file.output,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path, command: Option<Command>) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::from_toml(&text, command).map_err(|e| match e {
            AppError::Config(msg) => AppError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String, AppError> {
        toml::to_string(self).map_err(|e| AppError::Config(e.to_string()))
    }

    pub fn t_end(&self) -> f64 {
        self.simulation
            .t_end
            .unwrap_or(match self.system.benchmark {
                BenchmarkName::BallBeam => 30.0,
                BenchmarkName::VtolNonsmooth | BenchmarkName::VtolTwoPhase => 60.0,
            })
    }

    /// Field-level checks beyond what the TOML types enforce.
    pub fn validate(&self) -> Result<(), AppError> {
        let bad = |field: &str, msg: &str| Err(AppError::Config(format!("{field}: {msg}")));
        let sim = &self.simulation;
        if !(sim.dt > 0.0 && sim.dt.is_finite()) {
            return bad("simulation.dt", "must be positive");
        }
        if let Some(t) = sim.t_end {
            if !(t > 0.0 && t.is_finite()) {
                return bad("simulation.t_end", "must be positive");
            }
        }
        if sim.record_stride == 0 {
            return bad("simulation.record_stride", "must be at least 1");
        }
        if !(sim.hd_tol >= 0.0) {
            return bad("simulation.hd_tol", "must be non-negative");
        }
        let b = &self.bounds;
        if b.samples == 0 || b.matching_samples == 0 {
            return bad("bounds.samples", "must be at least 1");
        }
        if !(b.mu > 0.0 && b.mu.is_finite()) {
            return bad("bounds.mu", "must be positive");
        }
        if !(b.inflation >= 1.0) {
            return bad("bounds.inflation", "must be at least 1");
        }
        if b.advisory_gains.iter().any(|k| !(*k > 0.0)) {
            return bad("bounds.advisory_gains", "gains must be positive");
        }
        let sys = &self.system;
        let vtol = sys.benchmark != BenchmarkName::BallBeam;
        if vtol && sys.ball_beam.is_some() {
            return bad("system.ball_beam", "given for a VTOL benchmark");
        }
        if !vtol && sys.vtol.is_some() {
            return bad("system.vtol", "given for the ball-and-beam benchmark");
        }
        if let Some(init) = &sys.initial {
            let want = if vtol { 6 } else { 4 };
            if init.len() != want {
                return bad(
                    "system.initial",
                    &format!("expected {want} values (q then p), got {}", init.len()),
                );
            }
            if init.iter().any(|v| !v.is_finite()) {
                return bad("system.initial", "values must be finite");
            }
        }
        let params = match (&sys.ball_beam, &sys.vtol) {
            (Some(p), _) => p.validate(),
            (_, Some(p)) => p.validate(),
            _ => Ok(()),
        };
        params.map_err(|e| {
            AppError::Config(format!(
                "system.{}: {e}",
                if vtol { "vtol" } else { "ball_beam" }
            ))
        })
    }
}
