//! Interconnection and damping assignment passivity-based control (IDA-PBC) for
//! underactuated mechanical systems, with certified workspace bounds on momentum and
//! control effort.
//!
//! The crate is organised bottom-up:
//!
//! * [`system`]: port-Hamiltonian plant model and energy evaluation,
//! * [`controller`]: the IDA-PBC law, bounded potential shaping, two-phase control,
//! * [`matching`]: sampled checks of the matching equations and the energy balance,
//! * [`bounds`]: workspace constants and the momentum/control-effort certificates,
//! * [`simulator`]: fixed-step RK4 closed-loop simulation with monitors,
//! * [`bench`]: the ball-and-beam and VTOL benchmark designs.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod bounds;
pub mod controller;
pub mod error;
pub mod linalg;
pub mod matching;
pub mod sampling;
pub mod simulator;
pub mod system;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
pub use system::{ConfigState, EnergyRecord, MechanicalSystem};
