use std::fmt;

use serde::{Deserialize, Serialize};

/// The named conditions a certificate or network can fail.
///
/// The short tags (`Con_1`, `Eq_8a`, ...) are stable identifiers used in
/// reports, error messages and the CLI exit diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// Closed-loop decay `(A+BK)ᵀM̄ + M̄(A+BK) ⪯ -κ̃M̄`.
    #[serde(rename = "Con_1")]
    LyapunovDecay,
    /// `BQ = AP`.
    #[serde(rename = "Con_2")]
    StateMatching,
    /// `D = BH`.
    #[serde(rename = "Con_3")]
    InternalMatching,
    /// Sampled-data dissipativity block inequality.
    #[serde(rename = "Eq_8a")]
    Dissipativity,
    /// `[M; I]ᵀ X_cmp [M; I] ⪯ 0`.
    #[serde(rename = "Con_1a")]
    Compositional,
    /// Concrete interconnection maps internal outputs into internal inputs.
    #[serde(rename = "well-posedness")]
    WellPosed,
    /// The abstract interconnection maps abstract internal outputs into the internal-input grid.
    #[serde(rename = "Con111")]
    AbstractWellPosed,
}

impl Condition {
    pub fn tag(self) -> &'static str {
        match self {
            Condition::LyapunovDecay => "Con_1",
            Condition::StateMatching => "Con_2",
            Condition::InternalMatching => "Con_3",
            Condition::Dissipativity => "Eq_8a",
            Condition::Compositional => "Con_1a",
            Condition::WellPosed => "well-posedness",
            Condition::AbstractWellPosed => "Con111",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Condition::LyapunovDecay => "closed-loop Lyapunov decay",
            Condition::StateMatching => "state matching BQ = AP",
            Condition::InternalMatching => "internal-input matching D = BH",
            Condition::Dissipativity => "sampled-data dissipativity inequality",
            Condition::Compositional => "compositional dissipativity LMI",
            Condition::WellPosed => "well-posed concrete interconnection",
            Condition::AbstractWellPosed => "well-posed abstract interconnection",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.tag(), self.describe())
    }
}

/// Outcome of a semidefinite check: `margin` is the minimum eigenvalue of the
/// matrix that must be PSD; the check passes when `margin >= -tolerance`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub condition: Condition,
    pub margin: f64,
    pub tolerance: f64,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.margin >= -self.tolerance
    }
}
