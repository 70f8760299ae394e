//! Stochastic affine subsystems, their time discretization, and interconnections.
//!
//! A subsystem evolves as
//!
//! ```text
//! dξ = (Aξ + Bν + Dw + b) dt + G dW,    ζ₁ = C₁ξ,    ζ₂ = C₂ξ
//! ```
//!
//! where `ν` is the external (control) input, `w` the internal input fed by
//! other subsystems through the coupling matrix, and `W` a standard Brownian
//! motion with as many components as `G` has columns.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::IntervalBox;
use crate::linalg::{self, serde_matrix, serde_vector, Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in `{0}`")]
    DimensionMismatch(String),
    #[error("non-finite entry in `{0}`")]
    NonFiniteEntry(String),
    #[error("empty box `{0}` (lower bound exceeds upper bound)")]
    EmptyBox(String),
    #[error("interconnection is not well posed: internal input component {0} can leave its box")]
    NotWellPosed(usize),
    #[error("interconnection weight mu[{0}] must be positive")]
    WeightNotPositive(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "AffineSystemRepr")]
pub struct AffineSystem {
    #[serde(with = "serde_matrix")]
    pub a: Matrix,
    #[serde(with = "serde_matrix")]
    pub b: Matrix,
    #[serde(with = "serde_matrix")]
    pub c1: Matrix,
    #[serde(with = "serde_matrix")]
    pub c2: Matrix,
    #[serde(with = "serde_matrix")]
    pub d: Matrix,
    #[serde(with = "serde_matrix")]
    pub g: Matrix,
    /// Constant drift offset `b`.
    #[serde(with = "serde_vector")]
    pub offset: Vector,
    pub state_box: IntervalBox,
    pub input_box: IntervalBox,
    pub internal_box: IntervalBox,
}

/// JSON cannot express `0×n` matrices as arrays of rows, so the column count of
/// empty `C₂` / `D` blocks is restored from the state dimension on load.
#[derive(Deserialize)]
struct AffineSystemRepr {
    #[serde(with = "serde_matrix")]
    a: Matrix,
    #[serde(with = "serde_matrix")]
    b: Matrix,
    #[serde(with = "serde_matrix")]
    c1: Matrix,
    #[serde(with = "serde_matrix", default = "empty")]
    c2: Matrix,
    #[serde(with = "serde_matrix", default = "empty")]
    d: Matrix,
    #[serde(with = "serde_matrix")]
    g: Matrix,
    #[serde(with = "serde_vector")]
    offset: Vector,
    state_box: IntervalBox,
    input_box: IntervalBox,
    #[serde(default = "IntervalBox::empty_dim")]
    internal_box: IntervalBox,
}

fn empty() -> Matrix {
    Matrix::zeros(0, 0)
}

impl From<AffineSystemRepr> for AffineSystem {
    fn from(r: AffineSystemRepr) -> Self {
        let n = r.a.nrows();
        let c2 = if r.c2.nrows() == 0 { Matrix::zeros(0, n) } else { r.c2 };
        let d = if r.d.nrows() == 0 && r.d.ncols() == 0 { Matrix::zeros(n, 0) } else { r.d };
        AffineSystem {
            a: r.a,
            b: r.b,
            c1: r.c1,
            c2,
            d,
            g: r.g,
            offset: r.offset,
            state_box: r.state_box,
            input_box: r.input_box,
            internal_box: r.internal_box,
        }
    }
}

impl AffineSystem {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn p(&self) -> usize {
        self.d.ncols()
    }
    pub fn q1(&self) -> usize {
        self.c1.nrows()
    }
    pub fn q2(&self) -> usize {
        self.c2.nrows()
    }
    pub fn noise_dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn dims(&self) -> SubsystemDims {
        SubsystemDims { n: self.n(), m: self.m(), p: self.p(), q2: self.q2() }
    }

    /// Interval enclosure of the internal outputs `C₂ · state_box`.
    pub fn internal_output_box(&self) -> IntervalBox {
        self.state_box.linear_image(&self.c2)
    }

    pub fn drift(&self, x: &Vector, nu: &Vector, w: &Vector) -> Vector {
        &self.a * x + &self.b * nu + &self.d * w + &self.offset
    }
}

/// Checks shape consistency, finiteness and box non-emptiness, reporting the
/// first violation in field order.
pub fn validate_system(sys: &AffineSystem) -> Result<(), ModelError> {
    let mismatch = |f: &str| Err(ModelError::DimensionMismatch(f.to_string()));
    let n = sys.a.nrows();
    if n == 0 || !sys.a.is_square() {
        return mismatch("a");
    }
    if sys.b.nrows() != n || sys.b.ncols() == 0 {
        return mismatch("b");
    }
    if sys.c1.ncols() != n || sys.c1.nrows() == 0 {
        return mismatch("c1");
    }
    if sys.c2.ncols() != n {
        return mismatch("c2");
    }
    if sys.d.nrows() != n {
        return mismatch("d");
    }
    if sys.g.nrows() != n || sys.g.ncols() == 0 {
        return mismatch("g");
    }
    if sys.offset.len() != n {
        return mismatch("offset");
    }
    if sys.state_box.dim() != n {
        return mismatch("state_box");
    }
    if sys.input_box.dim() != sys.m() {
        return mismatch("input_box");
    }
    if sys.internal_box.dim() != sys.p() {
        return mismatch("internal_box");
    }

    let matrices = [
        ("a", &sys.a),
        ("b", &sys.b),
        ("c1", &sys.c1),
        ("c2", &sys.c2),
        ("d", &sys.d),
        ("g", &sys.g),
    ];
    for (name, m) in matrices {
        if !linalg::all_finite(m) {
            return Err(ModelError::NonFiniteEntry(name.to_string()));
        }
    }
    if sys.offset.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteEntry("offset".into()));
    }

    for (name, b) in [
        ("state_box", &sys.state_box),
        ("input_box", &sys.input_box),
        ("internal_box", &sys.internal_box),
    ] {
        if b.first_inverted().is_some() {
            return Err(ModelError::EmptyBox(name.to_string()));
        }
    }
    Ok(())
}

/// Sampling time and the free matrices of the time-discretized abstraction
/// `ξ̃(k+1) = ξ̃(k) + ν̃(k) + D̃ w̃(k) + R̃ ς(k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationSpec {
    pub tau: f64,
    #[serde(with = "serde_matrix")]
    pub d_tilde: Matrix,
    #[serde(with = "serde_matrix")]
    pub r_tilde: Matrix,
}

impl DiscretizationSpec {
    /// Non-stochastic abstraction without internal coupling (`D̃ = 0`, `R̃ = 0`).
    pub fn deterministic(sys: &AffineSystem, tau: f64) -> Self {
        Self {
            tau,
            d_tilde: Matrix::zeros(sys.n(), sys.p()),
            r_tilde: Matrix::zeros(sys.n(), sys.noise_dim()),
        }
    }

    pub fn validate(&self, sys: &AffineSystem) -> Result<(), ModelError> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(ModelError::DimensionMismatch("tau must be positive".into()));
        }
        // Empty D̃ stands for an n×0 block when the subsystem has no internal input.
        let d_ok = self.d_tilde.shape() == (sys.n(), sys.p())
            || (sys.p() == 0 && self.d_tilde.is_empty());
        if !d_ok {
            return Err(ModelError::DimensionMismatch("d_tilde".into()));
        }
        if self.r_tilde.nrows() != sys.n() {
            return Err(ModelError::DimensionMismatch("r_tilde".into()));
        }
        if !linalg::all_finite(&self.d_tilde) || !linalg::all_finite(&self.r_tilde) {
            return Err(ModelError::NonFiniteEntry("discretization".into()));
        }
        Ok(())
    }

    pub fn is_stochastic(&self) -> bool {
        !linalg::is_zero(&self.r_tilde)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsystemDims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub q2: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterconnectionSpec {
    /// Coupling matrix: stacked internal inputs = `m` · stacked internal outputs.
    #[serde(with = "serde_matrix")]
    pub m: Matrix,
    pub mu: Vec<f64>,
    #[serde(default)]
    pub subsystem_dims: Vec<SubsystemDims>,
}

impl InterconnectionSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if let Some(i) = self.mu.iter().position(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(ModelError::WeightNotPositive(i));
        }
        if self.mu.len() != self.subsystem_dims.len() {
            return Err(ModelError::DimensionMismatch("mu".into()));
        }
        let p: usize = self.subsystem_dims.iter().map(|d| d.p).sum();
        let q: usize = self.subsystem_dims.iter().map(|d| d.q2).sum();
        if self.m.shape() != (p, q) {
            return Err(ModelError::DimensionMismatch("m".into()));
        }
        if !linalg::all_finite(&self.m) {
            return Err(ModelError::NonFiniteEntry("m".into()));
        }
        Ok(())
    }
}

/// Well-posedness: the interval image of the stacked internal outputs under
/// `M` must lie inside the stacked internal-input boxes.
pub fn check_well_posed(
    ic: &InterconnectionSpec,
    internal_output_boxes: &[IntervalBox],
    internal_input_boxes: &[IntervalBox],
) -> Result<(), ModelError> {
    let outputs = IntervalBox::stack(internal_output_boxes);
    let inputs = IntervalBox::stack(internal_input_boxes);
    if ic.m.ncols() != outputs.dim() || ic.m.nrows() != inputs.dim() {
        return Err(ModelError::DimensionMismatch("m".into()));
    }
    let image = outputs.linear_image(&ic.m);
    match inputs.first_escape(&image) {
        Some(i) => Err(ModelError::NotWellPosed(i)),
        None => Ok(()),
    }
}

/// Subsystems together with their interconnection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub systems: Vec<AffineSystem>,
    pub interconnection: InterconnectionSpec,
}

impl Network {
    pub fn new(systems: Vec<AffineSystem>, m: Matrix, mu: Vec<f64>) -> Self {
        let subsystem_dims = systems.iter().map(AffineSystem::dims).collect();
        Self { systems, interconnection: InterconnectionSpec { m, mu, subsystem_dims } }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for sys in &self.systems {
            validate_system(sys)?;
        }
        let dims: Vec<_> = self.systems.iter().map(AffineSystem::dims).collect();
        if !self.interconnection.subsystem_dims.is_empty()
            && self.interconnection.subsystem_dims != dims
        {
            return Err(ModelError::DimensionMismatch("subsystem_dims".into()));
        }
        let mut ic = self.interconnection.clone();
        ic.subsystem_dims = dims;
        ic.validate()
    }

    pub fn check_well_posed(&self) -> Result<(), ModelError> {
        let outs: Vec<_> = self.systems.iter().map(AffineSystem::internal_output_box).collect();
        let ins: Vec<_> = self.systems.iter().map(|s| s.internal_box.clone()).collect();
        check_well_posed(&self.interconnection, &outs, &ins)
    }

    pub fn state_dim(&self) -> usize {
        self.systems.iter().map(AffineSystem::n).sum()
    }
}

/// Circular coupling where each node reads both ring neighbours.
pub fn ring_coupling(n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        m[(i, (i + 1) % n)] = 1.0;
        m[((i + 1) % n, i)] = 1.0;
    }
    m
}
