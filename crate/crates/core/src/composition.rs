//! Network-level simulation function assembled from subsystem certificates.
//!
//! With `V = Σ μᵢ Sᵢ`, the dissipativity condition `[M; I]ᵀ X_cmp [M; I] ⪯ 0`
//! cancels the supply-rate terms and the subsystem constants aggregate into
//! closed forms (the quadratic `α` and linear `ρ_ext` cases only).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::{SstfConstants, StorageCertificate};
use crate::condition::{Condition, Verdict};
use crate::linalg::{self, serde_matrix, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompositionError {
    #[error("weight mu[{0}] must be positive")]
    WeightNotPositive(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("supply-rate blocks are not in shared scalar form: {0}")]
    StructureMismatch(String),
    #[error("stacked-quadratic aggregation needs a square nonsingular C1 (subsystem {0})")]
    StackedModeUnavailable(usize),
    #[error("{condition} violated (margin {margin:e})")]
    ConditionViolated { condition: Condition, margin: f64 },
}

type Result<T> = std::result::Result<T, CompositionError>;

fn check_weights(n: usize, mu: &[f64]) -> Result<()> {
    if mu.len() != n || n == 0 {
        return Err(CompositionError::DimensionMismatch(format!(
            "{} weights for {} subsystems",
            mu.len(),
            n
        )));
    }
    match mu.iter().position(|m| !(*m > 0.0)) {
        Some(i) => Err(CompositionError::WeightNotPositive(i)),
        None => Ok(()),
    }
}

/// Block matrix with `blockdiag(μᵢX̄ᵢ¹¹)` on the internal-input rows and
/// `blockdiag(μᵢX̄ᵢ²²)` on the internal-output rows.
pub fn build_x_cmp(certs: &[StorageCertificate], mu: &[f64]) -> Result<Matrix> {
    check_weights(certs.len(), mu)?;
    let p_total: usize = certs.iter().map(|c| c.xbar11.nrows()).sum();
    let q_total: usize = certs.iter().map(|c| c.xbar22.nrows()).sum();
    let mut x = Matrix::zeros(p_total + q_total, p_total + q_total);
    let (mut po, mut qo) = (0, p_total);
    for (c, &w) in certs.iter().zip(mu) {
        let (p, q) = (c.xbar11.nrows(), c.xbar22.nrows());
        if c.xbar12.shape() != (p, q) || c.xbar21.shape() != (q, p) {
            return Err(CompositionError::DimensionMismatch("off-diagonal supply-rate block".into()));
        }
        x.view_mut((po, po), (p, p)).copy_from(&(&c.xbar11 * w));
        x.view_mut((po, qo), (p, q)).copy_from(&(&c.xbar12 * w));
        x.view_mut((qo, po), (q, p)).copy_from(&(&c.xbar21 * w));
        x.view_mut((qo, qo), (q, q)).copy_from(&(&c.xbar22 * w));
        po += p;
        qo += q;
    }
    Ok(x)
}

/// `[M; I]ᵀ X_cmp [M; I] ⪯ 0`; the margin is `-λ_max` of the left side.
pub fn check_compositional_lmi(m: &Matrix, x_cmp: &Matrix) -> Result<Verdict> {
    let (p, q) = m.shape();
    if x_cmp.shape() != (p + q, p + q) {
        return Err(CompositionError::DimensionMismatch(format!(
            "X_cmp is {:?} but [M; I] needs {}",
            x_cmp.shape(),
            p + q
        )));
    }
    let x11 = x_cmp.view((0, 0), (p, p));
    let x12 = x_cmp.view((0, p), (p, q));
    let x21 = x_cmp.view((p, 0), (q, p));
    let x22 = x_cmp.view((p, p), (q, q));
    let upper = x11 * m + x12;
    let form = m.transpose() * upper + x21 * m + x22;
    Ok(Verdict {
        condition: Condition::Compositional,
        margin: -linalg::max_eigenvalue(&form),
        tolerance: linalg::psd_tolerance(&form),
    })
}

/// Shared scalar supply-rate structure `X̄ᵢ = [a·I 0; 0 d·I]` (weights folded in).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarBlocks {
    pub a: f64,
    pub d: f64,
}

impl ScalarBlocks {
    pub fn from_certificates(certs: &[StorageCertificate], mu: &[f64]) -> Result<Self> {
        check_weights(certs.len(), mu)?;
        let scalar_part = |m: &Matrix, what: &str| -> Result<f64> {
            if m.is_empty() {
                return Err(CompositionError::StructureMismatch(format!("empty {what} block")));
            }
            let v = m[(0, 0)];
            let target = Matrix::identity(m.nrows(), m.ncols()) * v;
            if m.is_square() && m == &target {
                Ok(v)
            } else {
                Err(CompositionError::StructureMismatch(format!("{what} is not a multiple of I")))
            }
        };
        let mut shared: Option<ScalarBlocks> = None;
        for (c, &w) in certs.iter().zip(mu) {
            if !linalg::is_zero(&c.xbar12) || !linalg::is_zero(&c.xbar21) {
                return Err(CompositionError::StructureMismatch("nonzero off-diagonal block".into()));
            }
            let blocks = ScalarBlocks {
                a: w * scalar_part(&c.xbar11, "X11")?,
                d: w * scalar_part(&c.xbar22, "X22")?,
            };
            match shared {
                None => shared = Some(blocks),
                Some(s) if s == blocks => {}
                Some(_) => {
                    return Err(CompositionError::StructureMismatch(
                        "subsystems carry different blocks".into(),
                    ))
                }
            }
        }
        Ok(shared.expect("at least one certificate"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GershgorinOutcome {
    Certified,
    Inconclusive,
}

/// Sufficient test for `a·MᵀM + d·I ⪯ 0` using `‖M‖₂² ≤ ‖M‖₁‖M‖_∞`
/// (the squared maximal row sum when `M` is symmetric).
pub fn gershgorin_fast_check(m: &Matrix, blocks: ScalarBlocks) -> GershgorinOutcome {
    let ok = if blocks.a <= 0.0 {
        blocks.d <= 0.0
    } else {
        let row = m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let col = m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        blocks.a * row * col + blocks.d <= 0.0
    };
    if ok {
        GershgorinOutcome::Certified
    } else {
        GershgorinOutcome::Inconclusive
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// Inverse of `ᾱ(s) = max{Σ αᵢ⁻¹(sᵢ) : Σ μᵢsᵢ = s}`: `α(s) = s² / Σ 1/(aᵢμᵢ)`.
    General,
    /// `α(s) = minᵢ(μᵢaᵢ)·s²`, valid when every `C₁ᵢ` is square and nonsingular.
    StackedQuadratic,
}

/// Network simulation-function constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSsf {
    pub alpha_mode: AlphaMode,
    pub alpha_coeff: f64,
    pub kappa: f64,
    pub rho_ext_slope: f64,
    pub psi: f64,
}

impl NetworkSsf {
    pub fn alpha(&self, s: f64) -> f64 {
        self.alpha_coeff * s * s
    }
}

pub fn compose_ssf(constants: &[SstfConstants], mu: &[f64], mode: AlphaMode) -> Result<NetworkSsf> {
    check_weights(constants.len(), mu)?;
    let kappa = constants.iter().map(|c| c.kappa).fold(f64::NEG_INFINITY, f64::max);
    let psi = constants.iter().zip(mu).map(|(c, w)| w * c.psi).sum();
    let rho_ext_slope = constants
        .iter()
        .zip(mu)
        .map(|(c, w)| (w * c.rho_ext_slope).powi(2))
        .sum::<f64>()
        .sqrt();
    let alpha_coeff = match mode {
        AlphaMode::General => {
            1.0 / constants.iter().zip(mu).map(|(c, w)| 1.0 / (c.alpha_coeff * w)).sum::<f64>()
        }
        AlphaMode::StackedQuadratic => {
            if let Some(i) = constants.iter().position(|c| !c.full_state_output) {
                return Err(CompositionError::StackedModeUnavailable(i));
            }
            constants
                .iter()
                .zip(mu)
                .map(|(c, w)| c.alpha_coeff * w)
                .fold(f64::INFINITY, f64::min)
        }
    };
    Ok(NetworkSsf { alpha_mode: mode, alpha_coeff, kappa, rho_ext_slope, psi })
}

/// Audit record of a composition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompositionResult {
    #[serde(with = "serde_matrix")]
    pub x_cmp: Matrix,
    pub lmi_margin: f64,
    pub lmi_tolerance: f64,
    pub gershgorin: Option<GershgorinOutcome>,
    pub ssf: NetworkSsf,
    pub q_tilde: usize,
}

/// Builds `X_cmp`, verifies the compositional LMI (after the Gershgorin fast
/// path when the blocks allow it), and aggregates the constants.
pub fn compose(
    certs: &[StorageCertificate],
    constants: &[SstfConstants],
    m: &Matrix,
    mu: &[f64],
    mode: AlphaMode,
) -> Result<CompositionResult> {
    let x_cmp = build_x_cmp(certs, mu)?;
    let gershgorin = ScalarBlocks::from_certificates(certs, mu)
        .ok()
        .map(|b| gershgorin_fast_check(m, b));
    let verdict = check_compositional_lmi(m, &x_cmp)?;
    if !verdict.passed() {
        return Err(CompositionError::ConditionViolated { condition: verdict.condition, margin: verdict.margin });
    }
    let ssf = compose_ssf(constants, mu, mode)?;
    Ok(CompositionResult {
        q_tilde: m.ncols(),
        x_cmp,
        lmi_margin: verdict.margin,
        lmi_tolerance: verdict.tolerance,
        gershgorin,
        ssf,
    })
}
