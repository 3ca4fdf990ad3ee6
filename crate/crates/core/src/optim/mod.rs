//! Condensing of the scenario OCP and the solvers that act on it.

mod condense;
mod bnb;
mod pth;
mod qp;

pub use condense::{condense, rollout, CondenseAudit, CondensedQp, OcpSpec, PredictionMap};
pub use bnb::{enumerate_oracle, solve_miqp_bnb, BnbOptions};
pub use pth::{pth_solve, pth_solve_condensed, PthIteration, PthOutcome, PthSchedule, PthSolution};
pub use qp::{kkt_residuals, solve_qp, solve_qp_with, KktResiduals, QpOptions, QpSolution, QpStatus};
