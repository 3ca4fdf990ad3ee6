//! Receding-horizon controllers and their reference schedules.

mod mpc;
mod reference;

pub use mpc::{ControlDecision, ControllerConfig, ControllerKind, MpcController, RecordedInstance};
pub use reference::ReferenceSchedule;
