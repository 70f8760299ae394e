//! Fixtures shared by unit tests: a single room of the temperature network.

use crate::certificates::{kappa_tilde_from, StorageCertificate};
use crate::interval::IntervalBox;
use crate::linalg::{scalar, Vector};
use crate::model::AffineSystem;

pub(crate) fn room() -> AffineSystem {
    AffineSystem {
        a: scalar(-0.105),
        b: scalar(0.5),
        c1: scalar(1.0),
        c2: scalar(1.0),
        d: scalar(0.05),
        g: scalar(0.5),
        offset: Vector::from_element(1, -0.005),
        state_box: IntervalBox::cube(1, 20.0, 21.0),
        input_box: IntervalBox::cube(1, -100.0, 100.0),
        internal_box: IntervalBox::cube(1, 40.0, 42.0),
    }
}

pub(crate) fn room_certificate(pi: f64) -> StorageCertificate {
    let tau = 0.1;
    let kappa_bar = 0.499;
    let kappa_tilde = kappa_tilde_from(kappa_bar, 0.5, tau);
    let e = (-kappa_tilde * tau).exp();
    StorageCertificate {
        m_bar: scalar(1.0),
        k: scalar(-140.0),
        p: scalar(1.0),
        q: scalar(-0.21),
        h: scalar(0.1),
        kappa_tilde,
        tau,
        pi,
        kappa_bar,
        xbar11: scalar(e * tau * 0.05 * 0.05),
        xbar12: scalar(0.0),
        xbar21: scalar(0.0),
        xbar22: scalar(-pi * e * tau * 0.25),
        eta_bar: 1.0,
        eta_bar_p: 1.0,
        eta_bar_pp: 1.0,
        gamma_slope: 2.0,
        delta: 0.0,
    }
}
