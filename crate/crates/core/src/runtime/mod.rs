//! Refinement of abstract controllers to the concrete network and Monte Carlo
//! validation of the closeness guarantee.

pub mod cosim;
pub mod em;
pub mod interface;
pub mod stats;

use thiserror::Error;

pub use cosim::{cosimulate, CosimOutput, InitialState, SimConfig, SimSummary, TrajectoryRecord};
pub use em::em_step;
pub use interface::{interface_input, InterfaceState};
pub use stats::clopper_pearson_upper;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("latched step {latched} does not match the current step {expected}")]
    StaleLatch { latched: u64, expected: u64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("the interface needs as many inputs as states (subsystem {0})")]
    NonSquareInput(usize),
    #[error("initial state of subsystem {0} lies outside its state grid")]
    InitialStateOffGrid(usize),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}
