//! JSON pipeline configuration.
//!
//! Per-subsystem sections accept either a single value, applied to every
//! subsystem, or a list with one entry per subsystem.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::abstraction::Grid;
use crate::composition::AlphaMode;
use crate::interval::IntervalBox;
use crate::linalg::{serde_matrix, Matrix};
use crate::model::{ring_coupling, AffineSystem, DiscretizationSpec, Network};
use crate::runtime::SimConfig;
use crate::StorageCertificate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn expand(&self, n: usize, what: &str) -> Result<Vec<T>, String> {
        match self {
            OneOrMany::One(v) => Ok(vec![v.clone(); n]),
            OneOrMany::Many(vs) if vs.len() == n => Ok(vs.clone()),
            OneOrMany::Many(vs) => Err(format!("`{what}` lists {} entries for {n} subsystems", vs.len())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub file: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemEntry {
    /// Path relative to the config file's directory.
    File(FileRef),
    Inline(Box<AffineSystem>),
}

impl SystemEntry {
    pub fn load(&self, base: &Path) -> Result<AffineSystem, String> {
        match self {
            SystemEntry::Inline(s) => Ok((**s).clone()),
            SystemEntry::File(r) => {
                let path = base.join(&r.file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| format!("cannot read system file {}: {e}", path.display()))?;
                serde_json::from_str(&text).map_err(|e| format!("system file {}: {e}", path.display()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemsSpec {
    Replicated { replicate: usize, system: SystemEntry },
    List(Vec<SystemEntry>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CouplingSpec {
    /// Circular coupling of `ring` scalar nodes.
    Ring { ring: usize },
    Dense(Vec<Vec<f64>>),
}

impl CouplingSpec {
    pub fn matrix(&self) -> Result<Matrix, String> {
        match self {
            CouplingSpec::Ring { ring } => Ok(ring_coupling(*ring)),
            CouplingSpec::Dense(rows) => serde_matrix::from_rows(rows),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterconnectionConfig {
    pub m: CouplingSpec,
    pub mu: OneOrMany<f64>,
}

/// How the supply-rate blocks are chosen when certificates are solved for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupplyConfig {
    /// `X̄¹¹ = πe^{-κ̃τ}τDᵀM̄D`, `X̄¹² = X̄²¹ = 0`, `X̄²² = -πe^{-κ̃τ}τBᵀM̄B`
    /// (needs as many internal outputs as inputs).
    Matched,
    Explicit {
        #[serde(with = "serde_matrix")]
        xbar11: Matrix,
        #[serde(with = "serde_matrix")]
        xbar12: Matrix,
        #[serde(with = "serde_matrix")]
        xbar21: Matrix,
        #[serde(with = "serde_matrix")]
        xbar22: Matrix,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub kappa_bar: f64,
    /// Target `κ = κ̄ + e^{-κ̃τ}`; fixes `κ̃`.
    pub kappa: f64,
    pub pi: f64,
    #[serde(default)]
    pub decay_margin: f64,
    pub supply: SupplyConfig,
    /// Overrides the slope derived from the state box.
    #[serde(default)]
    pub gamma_slope: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CertificatesConfig {
    Given { certificates: OneOrMany<StorageCertificate> },
    Solve(SolveConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyConfig {
    pub safe_box: OneOrMany<IntervalBox>,
    #[serde(default)]
    pub contraction: Option<f64>,
    /// Horizon for value iteration on stochastic abstractions; defaults to the bound horizon.
    #[serde(default)]
    pub horizon: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub epsilon: f64,
    pub horizon: u32,
    /// Defaults to `V` at the simulation's initial state and its quantization.
    #[serde(default)]
    pub v0: Option<f64>,
    /// Defaults to the norm of the per-subsystem input-grid suprema.
    #[serde(default)]
    pub nu_hat_sup: Option<f64>,
    /// Replaces `ρ_ext(ν̂_sup) + ψ` in the reported bound.
    #[serde(default)]
    pub psi_hat: Option<f64>,
    #[serde(default)]
    pub alpha_mode: Option<AlphaMode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub systems: SystemsSpec,
    pub interconnection: InterconnectionConfig,
    pub discretization: OneOrMany<DiscretizationSpec>,
    pub certificates: CertificatesConfig,
    pub grid: OneOrMany<Grid>,
    pub safety: SafetyConfig,
    pub bound: BoundConfig,
    #[serde(default)]
    pub simulation: Option<SimConfig>,
    #[serde(default)]
    pub stages: Option<Vec<Stage>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load_systems(&self, base: &Path) -> Result<Vec<AffineSystem>, String> {
        match &self.systems {
            SystemsSpec::Replicated { replicate, system } => {
                if *replicate == 0 {
                    return Err("`replicate` must be at least 1".into());
                }
                Ok(vec![system.load(base)?; *replicate])
            }
            SystemsSpec::List(entries) => {
                if entries.is_empty() {
                    return Err("no systems given".into());
                }
                entries.iter().map(|e| e.load(base)).collect()
            }
        }
    }

    pub fn network(&self, base: &Path) -> Result<Network, String> {
        let systems = self.load_systems(base)?;
        let n = systems.len();
        let m = self.interconnection.m.matrix()?;
        let mu = self.interconnection.mu.expand(n, "interconnection.mu")?;
        Ok(Network::new(systems, m, mu))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Verify,
    Compose,
    Abstract,
    Synthesize,
    Bound,
    Simulate,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::Verify, Stage::Compose, Stage::Abstract, Stage::Synthesize, Stage::Bound, Stage::Simulate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Verify => "verify",
            Stage::Compose => "compose",
            Stage::Abstract => "abstract",
            Stage::Synthesize => "synthesize",
            Stage::Bound => "bound",
            Stage::Simulate => "simulate",
        }
    }

    /// All stages up to and including `self`.
    pub fn prefix(self) -> Vec<Stage> {
        Stage::ALL[..=self as usize].to_vec()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

/// Stages must be a non-empty prefix of verify → compose → abstract → synthesize → bound → simulate.
pub fn validate_stages(stages: &[Stage]) -> Result<(), String> {
    if stages.is_empty() {
        return Err("no stages requested".into());
    }
    if stages != &Stage::ALL[..stages.len().min(Stage::ALL.len())] || stages.len() > Stage::ALL.len() {
        let names: Vec<_> = stages.iter().map(|s| s.name()).collect();
        return Err(format!("stages [{}] are not a prefix of verify,compose,abstract,synthesize,bound,simulate", names.join(",")));
    }
    Ok(())
}

pub fn parse_stages(list: &str) -> Result<Vec<Stage>, String> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(Stage::from_str).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_rooms, RoomParams};

    #[test]
    fn stage_prefixes() {
        assert!(validate_stages(&[Stage::Verify]).is_ok());
        assert!(validate_stages(&Stage::ALL).is_ok());
        assert!(validate_stages(&[Stage::Verify, Stage::Abstract]).is_err());
        assert!(validate_stages(&[Stage::Compose]).is_err());
        assert!(validate_stages(&[]).is_err());
        assert_eq!(parse_stages("verify, compose").unwrap(), vec![Stage::Verify, Stage::Compose]);
        assert!(parse_stages("verify,plot").is_err());
        assert_eq!(Stage::Abstract.prefix().len(), 3);
    }

    #[test]
    fn one_or_many() {
        assert_eq!(OneOrMany::One(2.0).expand(3, "mu").unwrap(), vec![2.0; 3]);
        assert!(OneOrMany::Many(vec![1.0, 2.0]).expand(3, "mu").is_err());
        let v: OneOrMany<f64> = serde_json::from_str("[1.0, 2.0]").unwrap();
        assert_eq!(v, OneOrMany::Many(vec![1.0, 2.0]));
    }

    #[test]
    fn rooms_round_trip() {
        let cfg = generate_rooms(&RoomParams { n: 4, ..Default::default() }).unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = PipelineConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        let net = back.network(Path::new(".")).unwrap();
        assert_eq!(net.systems.len(), 4);
        net.validate().unwrap();
    }

    #[test]
    fn system_file_reference() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = generate_rooms(&RoomParams { n: 3, ..Default::default() }).unwrap();
        let SystemsSpec::Replicated { system: SystemEntry::Inline(sys), .. } = &cfg.systems else { unreachable!() };
        std::fs::write(dir.path().join("room.json"), serde_json::to_string(sys).unwrap()).unwrap();
        let mut value = serde_json::to_value(&cfg).unwrap();
        value["systems"] = serde_json::json!([{"file": "room.json"}, {"file": "room.json"}, {"file": "room.json"}]);
        let cfg: PipelineConfig = serde_json::from_value(value).unwrap();
        assert!(matches!(&cfg.systems, SystemsSpec::List(v) if matches!(v[0], SystemEntry::File(_))));
        let systems = cfg.load_systems(dir.path()).unwrap();
        assert_eq!(systems[2], **sys);
        assert!(cfg.load_systems(Path::new("/nonexistent")).unwrap_err().contains("cannot read"));
    }
}
