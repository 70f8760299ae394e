//! Quadratic storage-function certificates `S(x, x̂) = (x - Px̂)ᵀ M̄ (x - Px̂)`
//! relating a stochastic affine subsystem to its discrete-time abstraction.
//!
//! The checks here verify supplied candidate matrices; nothing searches over
//! LMIs. [`solve_candidates`] constructs a candidate analytically when none is
//! given, and the result is still run through the same checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::{Condition, Verdict};
use crate::linalg::{self, serde_matrix, Matrix, TOL_EQ};
use crate::model::{AffineSystem, DiscretizationSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertificateError {
    #[error("`{name}` is not positive definite (minimum eigenvalue {min_eig:e})")]
    NotPositiveDefinite { name: &'static str, min_eig: f64 },
    #[error("kappa_bar = {kappa_bar} is outside (0, 1 - exp(-kappa_tilde*tau)) = (0, {upper})")]
    KappaBarOutOfRange { kappa_bar: f64, upper: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{condition} cannot be met: {reason}")]
    Infeasible { condition: Condition, reason: String },
    #[error("state box is unbounded along dimension {0}")]
    UnboundedStateBox(usize),
    #[error("{condition} violated (margin {margin:e})")]
    ConditionViolated { condition: Condition, margin: f64 },
    #[error("invalid certificate: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, CertificateError>;

/// All data of a per-subsystem storage-function certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageCertificate {
    #[serde(with = "serde_matrix")]
    pub m_bar: Matrix,
    #[serde(with = "serde_matrix")]
    pub k: Matrix,
    #[serde(with = "serde_matrix")]
    pub p: Matrix,
    #[serde(with = "serde_matrix")]
    pub q: Matrix,
    #[serde(with = "serde_matrix")]
    pub h: Matrix,
    pub kappa_tilde: f64,
    pub tau: f64,
    pub pi: f64,
    pub kappa_bar: f64,
    #[serde(with = "serde_matrix")]
    pub xbar11: Matrix,
    #[serde(with = "serde_matrix")]
    pub xbar12: Matrix,
    #[serde(with = "serde_matrix")]
    pub xbar21: Matrix,
    #[serde(with = "serde_matrix")]
    pub xbar22: Matrix,
    #[serde(default = "one")]
    pub eta_bar: f64,
    #[serde(default = "one")]
    pub eta_bar_p: f64,
    #[serde(default = "one")]
    pub eta_bar_pp: f64,
    pub gamma_slope: f64,
    #[serde(default)]
    pub delta: f64,
}

fn one() -> f64 {
    1.0
}

impl StorageCertificate {
    pub fn decay_factor(&self) -> f64 {
        (-self.kappa_tilde * self.tau).exp()
    }

    /// Scalar and structural invariants of the certificate.
    pub fn validate(&self) -> Result<()> {
        let n = self.m_bar.nrows();
        if !self.m_bar.is_square() {
            return Err(CertificateError::DimensionMismatch("m_bar must be square".into()));
        }
        if !linalg::is_symmetric(&self.m_bar, 1e-12) {
            return Err(CertificateError::Invalid("m_bar is not symmetric".into()));
        }
        let min_eig = linalg::min_eigenvalue(&self.m_bar);
        if !(min_eig > 0.0) {
            return Err(CertificateError::NotPositiveDefinite { name: "m_bar", min_eig });
        }
        if self.p.shape() != (n, n) {
            return Err(CertificateError::DimensionMismatch("p must be n×n".into()));
        }
        for (name, v) in [
            ("kappa_tilde", self.kappa_tilde),
            ("tau", self.tau),
            ("pi", self.pi),
            ("eta_bar", self.eta_bar),
            ("eta_bar_p", self.eta_bar_p),
            ("eta_bar_pp", self.eta_bar_pp),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CertificateError::Invalid(format!("{name} must be positive")));
            }
        }
        if !(self.delta >= 0.0) || !(self.gamma_slope >= 0.0) {
            return Err(CertificateError::Invalid("delta and gamma_slope must be non-negative".into()));
        }
        let upper = 1.0 - self.decay_factor();
        if !(self.kappa_bar > 0.0 && self.kappa_bar < upper) {
            return Err(CertificateError::KappaBarOutOfRange { kappa_bar: self.kappa_bar, upper });
        }
        let (p, q2) = (self.xbar11.nrows(), self.xbar22.nrows());
        if self.xbar11.shape() != (p, p)
            || self.xbar22.shape() != (q2, q2)
            || self.xbar12.shape() != (p, q2)
            || self.xbar21.shape() != (q2, p)
        {
            return Err(CertificateError::DimensionMismatch("supply-rate blocks".into()));
        }
        let xbar = self.supply_matrix();
        if !linalg::is_symmetric(&xbar, 1e-12) {
            return Err(CertificateError::Invalid("supply-rate matrix is not symmetric".into()));
        }
        Ok(())
    }

    /// `[X̄¹¹ X̄¹²; X̄²¹ X̄²²]`.
    pub fn supply_matrix(&self) -> Matrix {
        let (p, q2) = (self.xbar11.nrows(), self.xbar22.nrows());
        let mut x = Matrix::zeros(p + q2, p + q2);
        x.view_mut((0, 0), (p, p)).copy_from(&self.xbar11);
        x.view_mut((0, p), (p, q2)).copy_from(&self.xbar12);
        x.view_mut((p, 0), (q2, p)).copy_from(&self.xbar21);
        x.view_mut((p, p), (q2, q2)).copy_from(&self.xbar22);
        x
    }

    /// Storage value `(x - Px̂)ᵀ M̄ (x - Px̂)`.
    pub fn storage(&self, x: &[f64], x_hat: &[f64]) -> f64 {
        let x = linalg::Vector::from_column_slice(x);
        let xh = linalg::Vector::from_column_slice(x_hat);
        let e = x - &self.p * xh;
        (e.transpose() * &self.m_bar * &e)[(0, 0)]
    }
}

/// Constants of the per-subsystem storage function:
/// `α(s) = alpha_coeff·s²`, decay `κ`, `ρ_ext(s) = rho_ext_slope·s` and offset `ψ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SstfConstants {
    pub alpha_coeff: f64,
    pub kappa: f64,
    pub rho_ext_slope: f64,
    pub psi: f64,
    /// `C₁` is square and nonsingular, so the storage function bounds the full output error.
    pub full_state_output: bool,
}

fn check_square(name: &str, m: &Matrix, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(CertificateError::DimensionMismatch(format!("{name} must be {n}×{n}")));
    }
    Ok(())
}

/// Closed-loop decay `(A+BK)ᵀM̄ + M̄(A+BK) ⪯ -κ̃M̄`. The margin is the minimum
/// eigenvalue of `-[(A+BK)ᵀM̄ + M̄(A+BK)] - κ̃M̄`.
pub fn check_lyapunov(sys: &AffineSystem, m_bar: &Matrix, k: &Matrix, kappa_tilde: f64) -> Result<Verdict> {
    let n = sys.n();
    check_square("m_bar", m_bar, n)?;
    if k.shape() != (sys.m(), n) {
        return Err(CertificateError::DimensionMismatch("k must be m×n".into()));
    }
    let min_eig = linalg::min_eigenvalue(m_bar);
    if !(min_eig > 0.0) {
        return Err(CertificateError::NotPositiveDefinite { name: "m_bar", min_eig });
    }
    let acl = &sys.a + &sys.b * k;
    let lhs = acl.transpose() * m_bar + m_bar * &acl;
    let slack = -lhs - m_bar * kappa_tilde;
    Ok(Verdict {
        condition: Condition::LyapunovDecay,
        margin: linalg::min_eigenvalue(&slack),
        tolerance: linalg::psd_tolerance(&slack),
    })
}

/// Frobenius residuals of `BQ = AP` and `D = BH` with their relative tolerances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricReport {
    pub state_residual: f64,
    pub state_tolerance: f64,
    pub internal_residual: f64,
    pub internal_tolerance: f64,
}

impl GeometricReport {
    pub fn first_violation(&self) -> Option<Condition> {
        if !(self.state_residual <= self.state_tolerance) {
            Some(Condition::StateMatching)
        } else if !(self.internal_residual <= self.internal_tolerance) {
            Some(Condition::InternalMatching)
        } else {
            None
        }
    }

    pub fn passed(&self) -> bool {
        self.first_violation().is_none()
    }
}

pub fn check_geometric(sys: &AffineSystem, p: &Matrix, q: &Matrix, h: &Matrix) -> Result<GeometricReport> {
    let (n, m) = (sys.n(), sys.m());
    check_square("p", p, n)?;
    if q.shape() != (m, n) {
        return Err(CertificateError::DimensionMismatch("q must be m×n".into()));
    }
    if h.shape() != (m, sys.p()) && !(sys.p() == 0 && h.is_empty()) {
        return Err(CertificateError::DimensionMismatch("h must be m×p".into()));
    }
    let ap = &sys.a * p;
    let state_residual = (&sys.b * q - &ap).norm();
    let internal_residual = if sys.p() == 0 { 0.0 } else { (&sys.d - &sys.b * h).norm() };
    Ok(GeometricReport {
        state_residual,
        state_tolerance: TOL_EQ * (1.0 + ap.norm()),
        internal_residual,
        internal_tolerance: TOL_EQ * (1.0 + sys.d.norm()),
    })
}

/// Targets for [`solve_candidates`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateTargets {
    pub kappa_tilde: f64,
    /// Extra decay demanded beyond `κ̃`; the closed loop is built for `κ̃ + decay_margin`.
    #[serde(default)]
    pub decay_margin: f64,
    /// Defaults to the identity.
    #[serde(default, with = "option_matrix")]
    pub p: Option<Matrix>,
}

mod option_matrix {
    use super::Matrix;
    use crate::linalg::serde_matrix;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<Matrix>, s: S) -> Result<S::Ok, S::Error> {
        match m {
            Some(m) => serde_matrix::serialize(m, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Matrix>, D::Error> {
        let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
        rows.map(|r| serde_matrix::from_rows(&r).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidates {
    pub m_bar: Matrix,
    pub k: Matrix,
    pub p: Matrix,
    pub q: Matrix,
    pub h: Matrix,
}

/// Builds `(M̄, K, P, Q, H)` meeting the decay and matching conditions.
///
/// Diagonal systems with square diagonal `B` use the per-coordinate closed form
/// `K = (-(κ̃+margin)/2 - A)/B` with `M̄ = I`. Otherwise a gain family is scanned
/// (`K = B†(-A - c/2·I)`, then `K = -cBᵀ`), with `c` grown geometrically and then
/// bisected down, and `M̄` is obtained from a shifted Lyapunov equation.
pub fn solve_candidates(sys: &AffineSystem, targets: &CandidateTargets) -> Result<Candidates> {
    let (n, m) = (sys.n(), sys.m());
    if !(targets.kappa_tilde > 0.0) || !(targets.decay_margin >= 0.0) {
        return Err(CertificateError::Invalid("kappa_tilde must be positive and decay_margin non-negative".into()));
    }
    let rate = targets.kappa_tilde + targets.decay_margin;
    let p = targets.p.clone().unwrap_or_else(|| Matrix::identity(n, n));
    check_square("p", &p, n)?;

    let (m_bar, k) = if linalg::is_diagonal(&sys.a) && m == n && linalg::is_diagonal(&sys.b) {
        diagonal_gain(sys, rate)?
    } else {
        scanned_gain(sys, rate, targets.kappa_tilde)?
    };
    let verdict = check_lyapunov(sys, &m_bar, &k, targets.kappa_tilde)?;
    if !verdict.passed() {
        return Err(CertificateError::Infeasible {
            condition: Condition::LyapunovDecay,
            reason: format!("constructed gain misses the decay rate (margin {:e})", verdict.margin),
        });
    }

    let b_pinv = linalg::pseudo_inverse(&sys.b);
    let q = &b_pinv * &sys.a * &p;
    let h = &b_pinv * &sys.d;
    let report = check_geometric(sys, &p, &q, &h)?;
    match report.first_violation() {
        Some(condition @ Condition::StateMatching) => Err(CertificateError::Infeasible {
            condition,
            reason: format!("im(AP) is not contained in im(B): residual {:e}", report.state_residual),
        }),
        Some(condition) => Err(CertificateError::Infeasible {
            condition,
            reason: format!("im(D) is not contained in im(B): residual {:e}", report.internal_residual),
        }),
        None => Ok(Candidates { m_bar, k, p, q, h }),
    }
}

fn diagonal_gain(sys: &AffineSystem, rate: f64) -> Result<(Matrix, Matrix)> {
    let n = sys.n();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        let (a, b) = (sys.a[(i, i)], sys.b[(i, i)]);
        if b != 0.0 {
            k[(i, i)] = (-rate / 2.0 - a) / b;
        } else if 2.0 * a > -rate {
            return Err(CertificateError::Infeasible {
                condition: Condition::LyapunovDecay,
                reason: format!("coordinate {i} has no actuation and open-loop rate {a} misses the target"),
            });
        }
    }
    Ok((Matrix::identity(n, n), k))
}

fn scanned_gain(sys: &AffineSystem, rate: f64, kappa_tilde: f64) -> Result<(Matrix, Matrix)> {
    let n = sys.n();
    let eye = Matrix::identity(n, n);
    let b_pinv = linalg::pseudo_inverse(&sys.b);
    let shift_rule = |c: f64| &b_pinv * (-&sys.a - &eye * (c / 2.0));
    let high_gain_rule = |c: f64| -sys.b.transpose() * c;
    let rules: [&dyn Fn(f64) -> Matrix; 2] = [&shift_rule, &high_gain_rule];

    let attempt = |k: &Matrix| -> Option<Matrix> {
        let shifted = &sys.a + &sys.b * k + &eye * (rate / 2.0);
        if linalg::spectral_abscissa(&shifted) >= 0.0 {
            return None;
        }
        let m_bar = linalg::lyapunov_identity_rhs(&shifted)?;
        if !(linalg::min_eigenvalue(&m_bar) > 0.0) {
            return None;
        }
        let v = check_lyapunov(sys, &m_bar, k, kappa_tilde).ok()?;
        v.passed().then_some(m_bar)
    };

    for rule in rules {
        let mut lo = 0.0;
        let mut hi = rate.max(1e-3);
        let mut found = None;
        for _ in 0..60 {
            if let Some(mb) = attempt(&rule(hi)) {
                found = Some((rule(hi), mb));
                break;
            }
            lo = hi;
            hi *= 2.0;
        }
        let Some(mut best) = found else { continue };
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            match attempt(&rule(mid)) {
                Some(mb) => {
                    hi = mid;
                    best = (rule(mid), mb);
                }
                None => lo = mid,
            }
        }
        return Ok((best.1, best.0));
    }
    Err(CertificateError::Infeasible {
        condition: Condition::LyapunovDecay,
        reason: "(A, B) could not be stabilized to the target decay rate".into(),
    })
}

/// Result of the dissipativity check, with the full slack matrix
/// `RHS - LHS` for auditing individual entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DissipativityReport {
    pub verdict: Verdict,
    pub slack: Matrix,
}

/// Verifies
///
/// ```text
/// diag(πe^{-κ̃τ}τ BᵀM̄B, πe^{-κ̃τ}τ DᵀM̄D) ⪯ [κ̄M̄ + C₂ᵀX̄²²C₂, C₂ᵀX̄²¹; X̄¹²C₂, X̄¹¹]
/// ```
///
/// The sampled-state correction in the refinement law enters through `B`, so
/// the input and state dimensions must agree.
pub fn check_dissipativity_lmi(cert: &StorageCertificate, sys: &AffineSystem) -> Result<DissipativityReport> {
    let upper = 1.0 - cert.decay_factor();
    if !(cert.kappa_bar > 0.0 && cert.kappa_bar < upper) {
        return Err(CertificateError::KappaBarOutOfRange { kappa_bar: cert.kappa_bar, upper });
    }
    let (n, p, q2) = (sys.n(), sys.p(), sys.q2());
    if sys.m() != n {
        return Err(CertificateError::DimensionMismatch(
            "the sampled-state correction needs as many inputs as states (m = n)".into(),
        ));
    }
    check_square("m_bar", &cert.m_bar, n)?;
    if cert.xbar11.shape() != (p, p)
        || cert.xbar22.shape() != (q2, q2)
        || cert.xbar12.shape() != (p, q2)
        || cert.xbar21.shape() != (q2, p)
    {
        return Err(CertificateError::DimensionMismatch("supply-rate blocks vs (p, q2)".into()));
    }
    let scale = cert.pi * cert.decay_factor() * cert.tau;
    let lhs = linalg::block_diag(&[
        &(sys.b.transpose() * &cert.m_bar * &sys.b * scale),
        &(sys.d.transpose() * &cert.m_bar * &sys.d * scale),
    ]);
    let mut rhs = Matrix::zeros(n + p, n + p);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(&cert.m_bar * cert.kappa_bar + sys.c2.transpose() * &cert.xbar22 * &sys.c2));
    rhs.view_mut((0, n), (n, p)).copy_from(&(sys.c2.transpose() * &cert.xbar21));
    rhs.view_mut((n, 0), (p, n)).copy_from(&(&cert.xbar12 * &sys.c2));
    rhs.view_mut((n, n), (p, p)).copy_from(&cert.xbar11);
    let slack = rhs - lhs;
    Ok(DissipativityReport {
        verdict: Verdict {
            condition: Condition::Dissipativity,
            margin: linalg::min_eigenvalue(&slack),
            tolerance: linalg::psd_tolerance(&slack),
        },
        slack,
    })
}

/// Slope `L_γ` of a linear (hence concave) `γ` with
/// `S(x,x′) - S(x,x″) ≤ L_γ‖x′ - x″‖` on the state box:
/// `L_γ = 2λ_max(M̄)‖P‖Δ + λ_max(M̄)‖P‖²·diam`, where `Δ` bounds `‖x - Px″‖`.
pub fn gamma_slope_bound(cert: &StorageCertificate, sys: &AffineSystem) -> Result<f64> {
    let bx = &sys.state_box;
    if let Some(i) = (0..bx.dim()).find(|&i| !bx.lower[i].is_finite() || !bx.upper[i].is_finite()) {
        return Err(CertificateError::UnboundedStateBox(i));
    }
    check_square("p", &cert.p, sys.n())?;
    let p_norm = linalg::spectral_norm(&cert.p);
    let lam = linalg::max_eigenvalue(&cert.m_bar);
    let spread = bx.minus(&bx.linear_image(&cert.p)).max_norm();
    Ok(2.0 * lam * p_norm * spread + lam * p_norm * p_norm * bx.diameter())
}

/// `κ̃ = -ln(κ - κ̄)/τ`, the decay rate that yields a prescribed `κ`.
pub fn kappa_tilde_from(kappa_bar: f64, kappa_target: f64, tau: f64) -> f64 {
    -(kappa_target - kappa_bar).ln() / tau
}

/// Derives the storage-function constants after re-running all three checks.
///
/// With `δ = 0` the certificate relates the subsystem to the (infinite)
/// time-discretized system and the reduced gains apply: `ρ_ext = γ` and
/// `ψ = e^{-κ̃τ}τ(Tr GᵀM̄G + π‖√M̄ b‖²)` when `R̃ = 0, D̃ = 0`, otherwise the
/// variant carrying the `R̃` and `D̃‖ŵ‖` terms. With `δ > 0` the full
/// finite-abstraction formula including `γ((1+η̄)δ)` is used.
pub fn derive_constants(
    cert: &StorageCertificate,
    sys: &AffineSystem,
    disc: &DiscretizationSpec,
    w_hat_bound: f64,
) -> Result<SstfConstants> {
    cert.validate()?;
    if (cert.tau - disc.tau).abs() > 1e-12 * disc.tau {
        return Err(CertificateError::Invalid(format!(
            "certificate tau {} differs from discretization tau {}",
            cert.tau, disc.tau
        )));
    }
    let lyap = check_lyapunov(sys, &cert.m_bar, &cert.k, cert.kappa_tilde)?;
    if !lyap.passed() {
        return Err(CertificateError::ConditionViolated { condition: lyap.condition, margin: lyap.margin });
    }
    let geo = check_geometric(sys, &cert.p, &cert.q, &cert.h)?;
    if let Some(condition) = geo.first_violation() {
        let margin = match condition {
            Condition::StateMatching => -geo.state_residual,
            _ => -geo.internal_residual,
        };
        return Err(CertificateError::ConditionViolated { condition, margin });
    }
    let diss = check_dissipativity_lmi(cert, sys)?;
    if !diss.verdict.passed() {
        return Err(CertificateError::ConditionViolated {
            condition: Condition::Dissipativity,
            margin: diss.verdict.margin,
        });
    }

    let decay = cert.decay_factor();
    let noise = (sys.g.transpose() * &cert.m_bar * &sys.g).trace();
    let bias = (sys.offset.transpose() * &cert.m_bar * &sys.offset)[(0, 0)];
    let base = decay * cert.tau * (noise + cert.pi * bias);

    let gamma = |s: f64| cert.gamma_slope * s;
    let (e1, e2, e3) = (cert.eta_bar, cert.eta_bar_p, cert.eta_bar_pp);
    let noise_gain = disc.r_tilde.norm_squared().sqrt();
    let coupling = linalg::spectral_norm(&disc.d_tilde) * w_hat_bound;
    let no_noise = linalg::is_zero(&disc.r_tilde);
    let no_coupling = linalg::is_zero(&disc.d_tilde);

    let (rho_ext_slope, psi) = if cert.delta == 0.0 {
        if no_noise && no_coupling {
            (gamma(1.0), base)
        } else {
            (
                gamma((1.0 + e1) * (1.0 + e2)),
                base + gamma((1.0 + 1.0 / e1) * noise_gain)
                    + gamma((1.0 + e1) * (1.0 + 1.0 / e2) * coupling),
            )
        }
    } else {
        (
            gamma((1.0 + 1.0 / e1) * (1.0 + e2) * (1.0 + e3)),
            base + gamma((1.0 + e1) * cert.delta)
                + gamma((1.0 + 1.0 / e1) * (1.0 + 1.0 / e2) * noise_gain)
                + gamma((1.0 + 1.0 / e1) * (1.0 + e2) * (1.0 + 1.0 / e3) * coupling),
        )
    };

    let c1tc1 = sys.c1.transpose() * &sys.c1;
    let full_state_output = sys.c1.is_square() && sys.c1.singular_values().min() > 1e-12;
    Ok(SstfConstants {
        alpha_coeff: linalg::min_eigenvalue(&cert.m_bar) / linalg::max_eigenvalue(&c1tc1),
        kappa: cert.kappa_bar + decay,
        rho_ext_slope,
        psi,
        full_state_output,
    })
}
