pub mod control;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod optim;
pub mod plant;
pub mod scenario;
mod serde_mat;
pub mod sysid;

pub use error::{Error, Result};
