use crate::certificates::StorageCertificate;
use crate::linalg::{Matrix, Vector};

use super::RuntimeError;

/// Gains of the interface together with the values latched at the last
/// sampling instant and the current continuous values.
#[derive(Clone, Debug, PartialEq)]
pub struct InterfaceState {
    pub k: Matrix,
    pub p: Matrix,
    pub q: Matrix,
    pub h: Matrix,
    pub step: u64,
    /// `ξ(kτ)`.
    pub x_latched: Vector,
    /// `ξ̂(k)`.
    pub x_hat: Vector,
    /// `ŵ(k)`.
    pub w_hat: Vector,
    /// `w(kτ)`.
    pub w_latched: Vector,
    /// `ξ(t)`.
    pub x: Vector,
    /// `w(t)`.
    pub w: Vector,
}

impl InterfaceState {
    pub fn new(k: Matrix, p: Matrix, q: Matrix, h: Matrix) -> Self {
        let (n, pw) = (p.nrows(), h.ncols());
        Self {
            k,
            p,
            q,
            h,
            step: 0,
            x_latched: Vector::zeros(n),
            x_hat: Vector::zeros(n),
            w_hat: Vector::zeros(pw),
            w_latched: Vector::zeros(pw),
            x: Vector::zeros(n),
            w: Vector::zeros(pw),
        }
    }

    pub fn from_certificate(cert: &StorageCertificate) -> Self {
        Self::new(cert.k.clone(), cert.p.clone(), cert.q.clone(), cert.h.clone())
    }

    /// Refreshes the sampling-instant values; the current values are set to them.
    pub fn latch(&mut self, step: u64, x: Vector, x_hat: Vector, w: Vector, w_hat: Vector) {
        self.step = step;
        self.x = x.clone();
        self.w = w.clone();
        self.x_latched = x;
        self.x_hat = x_hat;
        self.w_latched = w;
        self.w_hat = w_hat;
    }

    pub fn set_current(&mut self, x: Vector, w: Vector) {
        self.x = x;
        self.w = w;
    }
}

/// Step index of `t`, robust to round-off at sampling instants.
pub fn step_of(t: f64, tau: f64) -> u64 {
    (t / tau + 1e-9).floor().max(0.0) as u64
}

/// `ν(t) = K(ξ(t) - Pξ̂) - Qξ̂ + (ξ(kτ) - Pξ̂) + H(w(kτ) - ŵ) - Hw(t)`.
pub fn interface_input(state: &InterfaceState, tau: f64, t: f64) -> Result<Vector, RuntimeError> {
    let expected = step_of(t, tau);
    if state.step != expected {
        return Err(RuntimeError::StaleLatch { latched: state.step, expected });
    }
    if state.k.nrows() != state.x.len() {
        return Err(RuntimeError::NonSquareInput(0));
    }
    let px = &state.p * &state.x_hat;
    Ok(&state.k * (&state.x - &px) - &state.q * &state.x_hat + (&state.x_latched - &px)
        + &state.h * (&state.w_latched - &state.w_hat)
        - &state.h * &state.w)
}
