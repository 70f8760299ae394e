//! Compositional construction of finite abstractions for networks of
//! stochastic affine subsystems, with safety controller synthesis and a
//! Monte Carlo co-simulation of the refined closed loop.

pub mod abstraction;
pub mod bounds;
pub mod certificates;
pub mod composition;
pub mod condition;
pub mod interval;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod runtime;
pub mod scenario;
pub mod synthesis;

#[cfg(test)]
pub(crate) mod testing;

pub use certificates::{SstfConstants, StorageCertificate};
pub use condition::{Condition, Verdict};
pub use interval::IntervalBox;
pub use linalg::{Matrix, Vector};
pub use model::{AffineSystem, DiscretizationSpec, InterconnectionSpec, ModelError, Network};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineError, RunOptions, Stage};
pub use scenario::{generate_rooms, RoomParams};
