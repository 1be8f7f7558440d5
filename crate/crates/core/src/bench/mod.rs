//! Closed-form benchmark designs: a ball on a rotating beam and a VTOL aircraft with
//! slopped wings.

pub mod ball_beam;
pub mod vtol;

use serde::{Deserialize, Serialize};

pub use ball_beam::{make_ball_beam, BallBeamParams};
pub use vtol::{make_vtol, VtolCoefficients, VtolDesign, VtolParams};

/// Benchmarks addressable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchmarkName {
    #[serde(rename = "ball-beam")]
    BallBeam,
    #[serde(rename = "vtol-nonsmooth")]
    VtolNonsmooth,
    #[serde(rename = "vtol-two-phase")]
    VtolTwoPhase,
}

impl BenchmarkName {
    pub const ALL: [BenchmarkName; 3] = [
        BenchmarkName::BallBeam,
        BenchmarkName::VtolNonsmooth,
        BenchmarkName::VtolTwoPhase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkName::BallBeam => "ball-beam",
            BenchmarkName::VtolNonsmooth => "vtol-nonsmooth",
            BenchmarkName::VtolTwoPhase => "vtol-two-phase",
        }
    }
}

impl std::str::FromStr for BenchmarkName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown benchmark `{s}` (expected one of: ball-beam, vtol-nonsmooth, vtol-two-phase)"))
    }
}

impl std::fmt::Display for BenchmarkName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
