//! Circular network of heated rooms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{Axis, Grid, GridSpace};
use crate::bounds;
use crate::interval::IntervalBox;
use crate::linalg::{scalar, Matrix, Vector};
use crate::model::{AffineSystem, DiscretizationSpec};
use crate::pipeline::config::{
    BoundConfig, CertificatesConfig, CouplingSpec, InterconnectionConfig, OneOrMany, PipelineConfig, SafetyConfig,
    SolveConfig, SupplyConfig, SystemEntry, SystemsSpec,
};
use crate::runtime::{InitialState, SimConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("a ring needs at least 3 rooms, got {0}")]
    TooFewRooms(usize),
}

/// Physical parameters: conduction `η`, external loss `β`, heater gain `θ`,
/// heater and external temperatures `T_h`, `T_e`, diffusion `g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomParams {
    pub n: usize,
    pub eta: f64,
    pub beta: f64,
    pub theta: f64,
    pub t_h: f64,
    pub t_e: f64,
    pub g: f64,
}

impl Default for RoomParams {
    fn default() -> Self {
        Self { n: 100, eta: 0.05, beta: 0.005, theta: 0.01, t_h: 50.0, t_e: -1.0, g: 0.5 }
    }
}

/// Sampling time of the room abstraction.
pub const ROOM_TAU: f64 = 0.1;
/// Extra closed-loop decay requested from the gain construction.
pub const ROOM_DECAY_MARGIN: f64 = 180.0;
/// Slope of the linear `γ` used for the room certificates.
pub const ROOM_GAMMA_SLOPE: f64 = 2.0;

/// `ψ̂` for which the room bound at `ε = 0.5`, `T = 12` is exactly 0.09.
pub fn room_reproduction_psi_hat() -> f64 {
    0.25 * (1.0 - 0.91f64.powf(1.0 / 12.0))
}

/// `dT = ((-2η - β)T + θT_h ν + η w + βT_e)dt + g dW`, with the heater valve as
/// input and the sum of both neighbours' temperatures as internal input.
pub fn room_system(p: &RoomParams) -> AffineSystem {
    AffineSystem {
        a: scalar(-2.0 * p.eta - p.beta),
        b: scalar(p.theta * p.t_h),
        c1: scalar(1.0),
        c2: scalar(1.0),
        d: scalar(p.eta),
        g: scalar(p.g),
        offset: Vector::from_element(1, p.beta * p.t_e),
        state_box: IntervalBox::cube(1, 20.0, 21.0),
        input_box: IntervalBox::cube(1, -100.0, 100.0),
        internal_box: IntervalBox::cube(1, 40.0, 42.0),
    }
}

pub fn room_grid() -> Grid {
    Grid {
        state: GridSpace::new(vec![Axis::new(19.9975, 21.0025, 0.005)]),
        input: GridSpace::new(vec![Axis::new(-1.5e-4, 1.5e-4, 1e-4)]),
        internal: GridSpace::new(vec![Axis::new(40.0, 42.0, 2.0)]),
    }
}

pub fn generate_rooms(p: &RoomParams) -> Result<PipelineConfig, ScenarioError> {
    if p.n < 3 {
        return Err(ScenarioError::TooFewRooms(p.n));
    }
    let sys = room_system(p);
    Ok(PipelineConfig {
        systems: SystemsSpec::Replicated { replicate: p.n, system: SystemEntry::Inline(Box::new(sys.clone())) },
        interconnection: InterconnectionConfig { m: CouplingSpec::Ring { ring: p.n }, mu: OneOrMany::One(1.0) },
        discretization: OneOrMany::One(DiscretizationSpec {
            tau: ROOM_TAU,
            d_tilde: Matrix::zeros(1, 1),
            r_tilde: Matrix::zeros(1, 1),
        }),
        certificates: CertificatesConfig::Solve(SolveConfig {
            kappa_bar: 0.499,
            kappa: 0.5,
            pi: 1.0,
            decay_margin: ROOM_DECAY_MARGIN,
            supply: SupplyConfig::Matched,
            gamma_slope: Some(ROOM_GAMMA_SLOPE),
        }),
        grid: OneOrMany::One(room_grid()),
        safety: SafetyConfig {
            safe_box: OneOrMany::One(IntervalBox::cube(1, 20.0, 21.0)),
            contraction: None,
            horizon: None,
        },
        bound: BoundConfig {
            epsilon: 0.5,
            horizon: 12,
            v0: None,
            nu_hat_sup: None,
            psi_hat: Some(room_reproduction_psi_hat()),
            alpha_mode: None,
        },
        simulation: Some(SimConfig {
            n_substeps: 20,
            n_trials: 10_000,
            rng_seed: 1,
            horizon: 12,
            epsilon: 0.5,
            initial_state: InitialState::Constant(20.5),
            record_outputs: 2,
            convergence_check: true,
        }),
        stages: None,
        output_dir: None,
    })
}

/// Closeness bound for the composed room constants at the reproduction `ψ̂`.
pub fn room_reproduction_bound() -> bounds::ClosenessBound {
    bounds::ClosenessBound::evaluate(1.0, 0.5, 0.5, 12, room_reproduction_psi_hat(), 0.0)
        .expect("valid room constants")
}
