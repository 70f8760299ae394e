//! Finite-horizon probabilistic closeness between concrete and abstract outputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("kappa must lie in (0, 1), got {0}")]
    InvalidKappa(f64),
    #[error("{name} must be non-negative (positive for alpha), got {value}")]
    NegativeInput { name: &'static str, value: f64 },
    #[error("target violation {target} is unachievable: {reason}")]
    Unachievable { target: f64, reason: String },
}

type Result<T> = std::result::Result<T, BoundError>;

/// Smallest admissible `ψ̂ = ρ_ext(‖ν̂‖∞) + ψ` for a linear `ρ_ext`.
pub fn psi_hat(rho_ext_slope: f64, nu_hat_sup: f64, psi: f64) -> f64 {
    rho_ext_slope * nu_hat_sup + psi
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `α(ε) ≥ ψ̂/κ`.
    Case1,
    Case2,
}

/// Both branches of the bound, before and after regime selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub regime: Regime,
    pub case1_raw: f64,
    pub case2_raw: f64,
    pub violation_bound: f64,
    pub clamped: bool,
}

impl Evaluation {
    pub fn success_bound(&self) -> f64 {
        1.0 - self.violation_bound
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 {
        Ok(())
    } else {
        Err(BoundError::NegativeInput { name, value })
    }
}

/// Upper bound on `P{ sup_k ‖ζ(kτ) - ζ̂(k)‖ ≥ ε }` over `horizon` sampling steps.
pub fn violation_probability(alpha_of_eps: f64, kappa: f64, psi_hat: f64, v0: f64, horizon: u32) -> Result<Evaluation> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(BoundError::InvalidKappa(kappa));
    }
    if !(alpha_of_eps > 0.0) {
        return Err(BoundError::NegativeInput { name: "alpha", value: alpha_of_eps });
    }
    non_negative("psi_hat", psi_hat)?;
    non_negative("v0", v0)?;

    let t = horizon as i32;
    let case1_raw = 1.0 - (1.0 - v0 / alpha_of_eps) * (1.0 - psi_hat / alpha_of_eps).powi(t);
    let decay = (1.0 - kappa).powi(t);
    let case2_raw = v0 / alpha_of_eps * decay + psi_hat / (kappa * alpha_of_eps) * (1.0 - decay);
    let regime = if alpha_of_eps >= psi_hat / kappa { Regime::Case1 } else { Regime::Case2 };
    let raw = match regime {
        Regime::Case1 => case1_raw,
        Regime::Case2 => case2_raw,
    };
    let violation_bound = raw.clamp(0.0, 1.0);
    let clamped = violation_bound != raw;
    if clamped {
        log::info!("violation bound {raw} clamped to {violation_bound}");
    }
    Ok(Evaluation { regime, case1_raw, case2_raw, violation_bound, clamped })
}

/// Serialized bound report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosenessBound {
    pub epsilon: f64,
    pub horizon: u32,
    pub psi_hat: f64,
    pub v0: f64,
    pub regime: Regime,
    pub violation_bound: f64,
    pub success_bound: f64,
}

impl ClosenessBound {
    /// Evaluates the bound with a quadratic `α(s) = alpha_coeff·s²`.
    pub fn evaluate(alpha_coeff: f64, kappa: f64, epsilon: f64, horizon: u32, psi_hat: f64, v0: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(BoundError::NegativeInput { name: "epsilon", value: epsilon });
        }
        let e = violation_probability(alpha_coeff * epsilon * epsilon, kappa, psi_hat, v0, horizon)?;
        Ok(ClosenessBound {
            epsilon,
            horizon,
            psi_hat,
            v0,
            regime: e.regime,
            violation_bound: e.violation_bound,
            success_bound: e.success_bound(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonQuery {
    pub epsilon: f64,
    /// Every `ε > 0` meets the target; `epsilon` is the infimum 0.
    pub degenerate: bool,
}

/// Smallest `ε ∈ (0, eps_max]` whose bound meets `target`, by bisection to `1e-12`.
pub fn min_epsilon(
    alpha_coeff: f64,
    kappa: f64,
    psi_hat: f64,
    v0: f64,
    horizon: u32,
    target: f64,
    eps_max: f64,
) -> Result<EpsilonQuery> {
    if !(alpha_coeff > 0.0) {
        return Err(BoundError::NegativeInput { name: "alpha", value: alpha_coeff });
    }
    if !(eps_max > 0.0) {
        return Err(BoundError::NegativeInput { name: "eps_max", value: eps_max });
    }
    let bound = |eps: f64| violation_probability(alpha_coeff * eps * eps, kappa, psi_hat, v0, horizon).map(|e| e.violation_bound);
    if bound(eps_max)? > target {
        return Err(BoundError::Unachievable {
            target,
            reason: format!("bound at eps_max = {eps_max} is {}", bound(eps_max)?),
        });
    }
    if psi_hat == 0.0 && v0 == 0.0 {
        return Ok(EpsilonQuery { epsilon: 0.0, degenerate: true });
    }
    let (mut lo, mut hi) = (0.0, eps_max);
    while hi - lo > 1e-12 * (1.0 + hi) {
        let mid = 0.5 * (lo + hi);
        if bound(mid)? <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(EpsilonQuery { epsilon: hi, degenerate: false })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HorizonQuery {
    pub horizon: u32,
    /// The scan hit `cap` without exceeding the target.
    pub capped: bool,
}

/// Largest horizon whose bound stays within `target`, scanning `0..=cap`.
pub fn max_horizon(alpha_of_eps: f64, kappa: f64, psi_hat: f64, v0: f64, target: f64, cap: u32) -> Result<HorizonQuery> {
    let bound = |t: u32| violation_probability(alpha_of_eps, kappa, psi_hat, v0, t).map(|e| e.violation_bound);
    let at_zero = bound(0)?;
    if at_zero > target {
        return Err(BoundError::Unachievable { target, reason: format!("bound at horizon 0 is {at_zero}") });
    }
    for t in 1..=cap {
        if bound(t)? > target {
            return Ok(HorizonQuery { horizon: t - 1, capped: false });
        }
    }
    Ok(HorizonQuery { horizon: cap, capped: true })
}
