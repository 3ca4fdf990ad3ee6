//! Plants and the closed-loop executive.

pub mod executive;
pub mod lpv;
pub mod truth;

pub use executive::{
    generate_sysid_data, run_executive, ClosedLoopTrace, ControlContext, Controller, DelayLine, EdgeConstraint,
    ExecutiveOptions, PendingPellet, Plant, RandomFiring, StepDecision, SysidExperiment, Timing,
};
pub use lpv::{DrawMode, LpvPlant};
pub use truth::{Deposit, ParticleBudget, TruthPlant, TruthPlantConfig};
