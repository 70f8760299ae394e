//! Stage orchestration: verify → compose → abstract → synthesize → bound → simulate.
//!
//! Every stage writes its artifacts into the output directory before the next
//! one starts, so a failing run leaves the evidence of the failing stage behind.
//! Artifacts contain no timestamps or paths and are byte-identical across runs
//! with the same config and seed.

pub mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::abstraction::{
    build_deterministic, build_stochastic, check_abstract_well_posed, input_sup_norm, AbstractionError,
    AbstractionHeader, FiniteAbstraction, Grid, Quantized,
};
use crate::bounds::{self, ClosenessBound};
use crate::certificates::{
    check_dissipativity_lmi, check_geometric, check_lyapunov, derive_constants, gamma_slope_bound, kappa_tilde_from,
    solve_candidates, CandidateTargets, CertificateError, GeometricReport, SstfConstants, StorageCertificate,
};
use crate::composition::{compose, AlphaMode, CompositionError, CompositionResult};
use crate::condition::{Condition, Verdict};
use crate::linalg::{serde_matrix, Matrix};
use crate::model::{AffineSystem, DiscretizationSpec, ModelError, Network};
use crate::runtime::cosim::{write_error_realizations_csv, write_trajectories_csv};
use crate::runtime::{cosimulate, InitialState, RuntimeError, SimSummary};
use crate::synthesis::{safety_fixpoint, safety_value_iteration, Controller, ControllerMetadata, SafetySpec};

pub use config::{parse_stages, validate_stages, PipelineConfig, Stage};
pub use config::{CertificatesConfig, SolveConfig, SupplyConfig};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "STOCHSYM_THREADS";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[{}] config error: {message}", stage_label(.stage))]
    Config { stage: Option<Stage>, message: String },
    #[error("[{stage}] {condition} violated{}: {detail}", subsystem_label(.subsystem))]
    Condition { stage: Stage, condition: Condition, subsystem: Option<usize>, detail: String },
    #[error("[{stage}] runtime error: {message}")]
    Runtime { stage: Stage, message: String },
}

fn stage_label(stage: &Option<Stage>) -> String {
    stage.map_or_else(|| "config".to_string(), |s| s.to_string())
}

fn subsystem_label(sub: &Option<usize>) -> String {
    sub.map(|i| format!(" in subsystem {i}")).unwrap_or_default()
}

impl PipelineError {
    /// 2 condition violated, 3 config error, 4 runtime error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Condition { .. } => 2,
            PipelineError::Config { .. } => 3,
            PipelineError::Runtime { .. } => 4,
        }
    }

    pub fn condition(&self) -> Option<Condition> {
        match self {
            PipelineError::Condition { condition, .. } => Some(*condition),
            _ => None,
        }
    }

    fn config(stage: Stage, message: impl fmt::Display) -> Self {
        PipelineError::Config { stage: Some(stage), message: message.to_string() }
    }

    fn io(stage: Stage, path: &Path, e: impl fmt::Display) -> Self {
        PipelineError::Runtime { stage, message: format!("{}: {e}", path.display()) }
    }

    fn from_certificate(stage: Stage, sub: usize, e: CertificateError) -> Self {
        match e {
            CertificateError::Infeasible { condition, reason } => {
                PipelineError::Condition { stage, condition, subsystem: Some(sub), detail: reason }
            }
            CertificateError::ConditionViolated { condition, margin } => PipelineError::Condition {
                stage,
                condition,
                subsystem: Some(sub),
                detail: format!("margin {margin:e}"),
            },
            other => PipelineError::Config { stage: Some(stage), message: format!("subsystem {sub}: {other}") },
        }
    }

    fn from_model(stage: Stage, e: ModelError) -> Self {
        match e {
            ModelError::NotWellPosed(i) => PipelineError::Condition {
                stage,
                condition: Condition::WellPosed,
                subsystem: None,
                detail: format!("internal input component {i} can leave its box"),
            },
            other => PipelineError::config(stage, other),
        }
    }

    fn from_abstraction(stage: Stage, sub: Option<usize>, e: AbstractionError) -> Self {
        match e {
            AbstractionError::NotWellPosed { condition, dim } => PipelineError::Condition {
                stage,
                condition,
                subsystem: sub,
                detail: format!("escape in stacked internal-input dimension {dim}"),
            },
            AbstractionError::Model(m) => PipelineError::from_model(stage, m),
            other => PipelineError::Config {
                stage: Some(stage),
                message: match sub {
                    Some(i) => format!("subsystem {i}: {other}"),
                    None => other.to_string(),
                },
            },
        }
    }

    fn from_runtime(stage: Stage, e: RuntimeError) -> Self {
        match e {
            RuntimeError::InvalidConfig(m) | RuntimeError::DimensionMismatch(m) => PipelineError::config(stage, m),
            other => PipelineError::Runtime { stage, message: other.to_string() },
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

/// Command-line overrides of a [`PipelineConfig`].
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub stages: Option<Vec<Stage>>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    /// Directory that relative file references are resolved against.
    pub base_dir: Option<PathBuf>,
}

/// Results kept in memory after a run.
#[derive(Clone, Debug, Default)]
pub struct PipelineRun {
    pub stages: Vec<Stage>,
    pub out_dir: PathBuf,
    pub artifacts: Vec<PathBuf>,
    pub certificates: Vec<StorageCertificate>,
    pub constants: Vec<SstfConstants>,
    pub composition: Option<CompositionResult>,
    pub bound: Option<BoundReport>,
    pub simulation: Option<SimSummary>,
}

/// Applies `STOCHSYM_THREADS` to the global worker pool. Returns the thread cap
/// if one was set; the pool can only be configured once per process.
pub fn configure_threads_from_env() -> std::result::Result<Option<usize>, String> {
    let Ok(value) = std::env::var(THREADS_ENV) else { return Ok(None) };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got `{value}`"))?;
    match rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        Ok(()) => Ok(Some(n)),
        Err(e) => {
            log::debug!("worker pool already configured: {e}");
            Ok(Some(n))
        }
    }
}

#[derive(Serialize)]
struct CertificateChecks {
    #[serde(rename = "Con_1")]
    decay: Verdict,
    #[serde(rename = "Con_2")]
    state_matching: CheckedResidual,
    #[serde(rename = "Con_3")]
    internal_matching: CheckedResidual,
    #[serde(rename = "Eq_8a")]
    dissipativity: Verdict,
    #[serde(with = "serde_matrix")]
    dissipativity_slack: Matrix,
}

#[derive(Serialize)]
struct CheckedResidual {
    residual: f64,
    tolerance: f64,
    passed: bool,
}

#[derive(Serialize)]
struct CertificateEntry<'a> {
    subsystem: usize,
    certificate: &'a StorageCertificate,
    checks: CertificateChecks,
    constants: Option<SstfConstants>,
}

#[derive(Serialize)]
struct CertificatesArtifact<'a> {
    source: &'static str,
    passed: bool,
    subsystems: Vec<CertificateEntry<'a>>,
}

#[derive(Serialize)]
struct CompositionArtifact<'a> {
    subsystems: usize,
    mu: &'a [f64],
    #[serde(flatten)]
    result: &'a CompositionResult,
}

#[derive(Serialize)]
struct AbstractionIndex {
    /// `assignment[i]` is the file index used by subsystem `i`.
    assignment: Vec<usize>,
    files: Vec<AbstractionFile>,
}

#[derive(Serialize)]
struct AbstractionFile {
    header: String,
    rows: String,
    states: usize,
    inputs: usize,
    internal: usize,
}

#[derive(Serialize)]
struct ControllerArtifact {
    assignment: Vec<usize>,
    controllers: Vec<ControllerMetadata>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiHatSource {
    Formula,
    Override,
}

/// `bound.json`: the reported bound flattened at top level, plus the bound the
/// formula `ψ̂ = ρ_ext(ν̂_sup) + ψ` would give.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    #[serde(flatten)]
    pub reported: ClosenessBound,
    pub psi_hat_source: PsiHatSource,
    pub psi_hat_formula: f64,
    /// The override is at least the formula value, so the reported bound is covered by the theory.
    pub psi_hat_admissible: bool,
    pub formula_bound: ClosenessBound,
    pub nu_hat_sup: f64,
    pub alpha_mode: AlphaMode,
    pub alpha_coeff: f64,
    pub alpha_of_epsilon: f64,
    pub kappa: f64,
    pub rho_ext_slope: f64,
    pub psi: f64,
}

#[derive(Serialize)]
struct SimulationArtifact<'a> {
    #[serde(flatten)]
    summary: &'a SimSummary,
    theoretical_violation_bound: Option<f64>,
    /// Clopper–Pearson upper bound does not exceed the reported bound.
    dominated: Option<bool>,
}

struct Ctx<'a> {
    cfg: &'a PipelineConfig,
    out: PathBuf,
    net: Network,
    discs: Vec<DiscretizationSpec>,
    run: PipelineRun,
    abstractions: Vec<FiniteAbstraction>,
    abstraction_assignment: Vec<usize>,
    controllers: Vec<Controller>,
}

impl Ctx<'_> {
    fn write(&mut self, stage: Stage, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| PipelineError::io(stage, parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| PipelineError::io(stage, &path, e))?;
        self.run.artifacts.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, stage: Stage, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::config(stage, e))?;
        text.push('\n');
        self.write(stage, rel, text.as_bytes())
    }

    fn n(&self) -> usize {
        self.net.systems.len()
    }
}

pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<PipelineRun> {
    let stages = opts.stages.clone().or_else(|| cfg.stages.clone()).unwrap_or_else(|| Stage::ALL.to_vec());
    validate_stages(&stages).map_err(|message| PipelineError::Config { stage: None, message })?;
    let base = opts.base_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let out = match (&opts.out_dir, &cfg.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => PathBuf::from("stochsym-out"),
    };
    let net = cfg.network(&base).map_err(|message| PipelineError::Config { stage: None, message })?;
    let discs = cfg
        .discretization
        .expand(net.systems.len(), "discretization")
        .map_err(|message| PipelineError::Config { stage: None, message })?;
    fs::create_dir_all(&out).map_err(|e| PipelineError::io(Stage::Verify, &out, e))?;

    let mut ctx = Ctx {
        cfg,
        out: out.clone(),
        net,
        discs,
        run: PipelineRun { stages: stages.clone(), out_dir: out, ..Default::default() },
        abstractions: Vec::new(),
        abstraction_assignment: Vec::new(),
        controllers: Vec::new(),
    };
    for stage in stages {
        log::info!("stage {stage}");
        match stage {
            Stage::Verify => verify(&mut ctx)?,
            Stage::Compose => compose_stage(&mut ctx)?,
            Stage::Abstract => abstract_stage(&mut ctx)?,
            Stage::Synthesize => synthesize(&mut ctx)?,
            Stage::Bound => bound(&mut ctx)?,
            Stage::Simulate => simulate(&mut ctx, opts.seed)?,
        }
    }
    Ok(ctx.run)
}

/// Reads a config file and runs it with relative references resolved against its directory.
pub fn run_config_file(path: &Path, opts: &RunOptions) -> Result<PipelineRun> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::Config { stage: None, message: format!("{}: {e}", path.display()) })?;
    let cfg = PipelineConfig::from_json(&text)
        .map_err(|e| PipelineError::Config { stage: None, message: format!("{}: {e}", path.display()) })?;
    let mut opts = opts.clone();
    if opts.base_dir.is_none() {
        opts.base_dir = Some(path.parent().map(Path::to_path_buf).unwrap_or_default());
    }
    run_pipeline(&cfg, &opts)
}

/// Matched supply rate for a solved certificate.
fn matched_supply(sys: &AffineSystem, m_bar: &Matrix, pi: f64, scale: f64) -> Option<[Matrix; 4]> {
    if sys.q2() != sys.m() {
        return None;
    }
    let x11 = (sys.d.transpose() * m_bar * &sys.d) * (pi * scale);
    let x22 = (sys.b.transpose() * m_bar * &sys.b) * (-pi * scale);
    Some([x11, Matrix::zeros(sys.p(), sys.q2()), Matrix::zeros(sys.q2(), sys.p()), x22])
}

/// Analytic certificate for one subsystem with the configured supply rate.
pub fn solve_certificate(
    sys: &AffineSystem,
    disc: &DiscretizationSpec,
    s: &SolveConfig,
) -> std::result::Result<StorageCertificate, CertificateError> {
    let tau = disc.tau;
    if !(s.kappa > s.kappa_bar) {
        return Err(CertificateError::Invalid(format!("kappa {} must exceed kappa_bar {}", s.kappa, s.kappa_bar)));
    }
    let kappa_tilde = kappa_tilde_from(s.kappa_bar, s.kappa, tau);
    let c = solve_candidates(sys, &CandidateTargets { kappa_tilde, decay_margin: s.decay_margin, p: None })?;
    let scale = (-kappa_tilde * tau).exp() * tau;
    let [xbar11, xbar12, xbar21, xbar22] = match &s.supply {
        SupplyConfig::Matched => matched_supply(sys, &c.m_bar, s.pi, scale).ok_or_else(|| {
            CertificateError::DimensionMismatch("matched supply needs as many internal outputs as inputs".into())
        })?,
        SupplyConfig::Explicit { xbar11, xbar12, xbar21, xbar22 } => {
            [xbar11.clone(), xbar12.clone(), xbar21.clone(), xbar22.clone()]
        }
    };
    let mut cert = StorageCertificate {
        m_bar: c.m_bar,
        k: c.k,
        p: c.p,
        q: c.q,
        h: c.h,
        kappa_tilde,
        tau,
        pi: s.pi,
        kappa_bar: s.kappa_bar,
        xbar11,
        xbar12,
        xbar21,
        xbar22,
        eta_bar: 1.0,
        eta_bar_p: 1.0,
        eta_bar_pp: 1.0,
        gamma_slope: 0.0,
        delta: 0.0,
    };
    cert.gamma_slope = match s.gamma_slope {
        Some(g) => g,
        None => gamma_slope_bound(&cert, sys)?,
    };
    Ok(cert)
}

fn verify(ctx: &mut Ctx) -> Result<()> {
    const STAGE: Stage = Stage::Verify;
    ctx.net.validate().map_err(|e| PipelineError::from_model(STAGE, e))?;
    for (sys, disc) in ctx.net.systems.iter().zip(&ctx.discs) {
        disc.validate(sys).map_err(|e| PipelineError::config(STAGE, e))?;
    }
    ctx.net.check_well_posed().map_err(|e| PipelineError::from_model(STAGE, e))?;

    let n = ctx.n();
    let (source, certs) = match &ctx.cfg.certificates {
        CertificatesConfig::Given { certificates } => {
            ("given", certificates.expand(n, "certificates").map_err(|m| PipelineError::config(STAGE, m))?)
        }
        CertificatesConfig::Solve(s) => {
            let mut certs: Vec<StorageCertificate> = Vec::with_capacity(n);
            for i in 0..n {
                let (sys, disc) = (&ctx.net.systems[i], &ctx.discs[i]);
                // Identical subsystems share one solve.
                let reuse = (0..i).find(|&j| ctx.net.systems[j] == *sys && ctx.discs[j] == *disc);
                let cert = match reuse {
                    Some(j) => certs[j].clone(),
                    None => solve_certificate(sys, disc, s).map_err(|e| PipelineError::from_certificate(STAGE, i, e))?,
                };
                certs.push(cert);
            }
            ("solved", certs)
        }
    };

    let mut entries = Vec::with_capacity(n);
    let mut failure: Option<PipelineError> = None;
    let mut constants = Vec::with_capacity(n);
    for (i, cert) in certs.iter().enumerate() {
        let (sys, disc) = (&ctx.net.systems[i], &ctx.discs[i]);
        let fail = |e| PipelineError::from_certificate(STAGE, i, e);
        cert.validate().map_err(fail)?;
        let decay = check_lyapunov(sys, &cert.m_bar, &cert.k, cert.kappa_tilde).map_err(fail)?;
        let geo: GeometricReport = check_geometric(sys, &cert.p, &cert.q, &cert.h).map_err(fail)?;
        let diss = check_dissipativity_lmi(cert, sys).map_err(fail)?;
        let violated = if !decay.passed() {
            Some((Condition::LyapunovDecay, format!("margin {:e}", decay.margin)))
        } else if let Some(c) = geo.first_violation() {
            let r = if c == Condition::StateMatching { geo.state_residual } else { geo.internal_residual };
            Some((c, format!("residual {r:e}")))
        } else if !diss.verdict.passed() {
            Some((Condition::Dissipativity, format!("margin {:e}", diss.verdict.margin)))
        } else {
            None
        };
        let consts = match &violated {
            Some((condition, detail)) => {
                if failure.is_none() {
                    failure = Some(PipelineError::Condition {
                        stage: STAGE,
                        condition: *condition,
                        subsystem: Some(i),
                        detail: detail.clone(),
                    });
                }
                None
            }
            None => {
                let w_hat = sys.internal_box.max_norm();
                Some(derive_constants(cert, sys, disc, w_hat).map_err(fail)?)
            }
        };
        if let Some(c) = &consts {
            constants.push(c.clone());
        }
        entries.push(CertificateEntry {
            subsystem: i,
            certificate: cert,
            checks: CertificateChecks {
                decay,
                state_matching: CheckedResidual {
                    residual: geo.state_residual,
                    tolerance: geo.state_tolerance,
                    passed: geo.state_residual <= geo.state_tolerance,
                },
                internal_matching: CheckedResidual {
                    residual: geo.internal_residual,
                    tolerance: geo.internal_tolerance,
                    passed: geo.internal_residual <= geo.internal_tolerance,
                },
                dissipativity: diss.verdict,
                dissipativity_slack: diss.slack,
            },
            constants: consts,
        });
    }
    let artifact = CertificatesArtifact { source, passed: failure.is_none(), subsystems: entries };
    ctx.write_json(STAGE, "certificates.json", &artifact)?;
    if let Some(e) = failure {
        return Err(e);
    }
    ctx.run.certificates = certs;
    ctx.run.constants = constants;
    Ok(())
}

fn alpha_mode(ctx: &Ctx) -> AlphaMode {
    ctx.cfg.bound.alpha_mode.unwrap_or(if ctx.run.constants.iter().all(|c| c.full_state_output) {
        AlphaMode::StackedQuadratic
    } else {
        AlphaMode::General
    })
}

fn compose_stage(ctx: &mut Ctx) -> Result<()> {
    const STAGE: Stage = Stage::Compose;
    let mode = alpha_mode(ctx);
    let ic = &ctx.net.interconnection;
    let result = compose(&ctx.run.certificates, &ctx.run.constants, &ic.m, &ic.mu, mode).map_err(|e| match e {
        CompositionError::ConditionViolated { condition, margin } => PipelineError::Condition {
            stage: STAGE,
            condition,
            subsystem: None,
            detail: format!("margin {margin:e}"),
        },
        other => PipelineError::config(STAGE, other),
    })?;
    let mu = ic.mu.clone();
    ctx.write_json(STAGE, "composition.json", &CompositionArtifact { subsystems: ctx.n(), mu: &mu, result: &result })?;
    ctx.run.composition = Some(result);
    Ok(())
}

fn abstract_stage(ctx: &mut Ctx) -> Result<()> {
    const STAGE: Stage = Stage::Abstract;
    let n = ctx.n();
    let grids: Vec<Grid> = ctx.cfg.grid.expand(n, "grid").map_err(|m| PipelineError::config(STAGE, m))?;
    let mut distinct: Vec<FiniteAbstraction> = Vec::new();
    let mut keys: Vec<usize> = Vec::new();
    let mut assignment = Vec::with_capacity(n);
    for i in 0..n {
        let (sys, disc, grid, cert) = (&ctx.net.systems[i], &ctx.discs[i], &grids[i], &ctx.run.certificates[i]);
        let same = keys.iter().position(|&j| {
            ctx.net.systems[j] == *sys
                && ctx.discs[j] == *disc
                && grids[j] == *grid
                && ctx.run.certificates[j].p == cert.p
        });
        if let Some(d) = same {
            assignment.push(d);
            continue;
        }
        let fail = |e| PipelineError::from_abstraction(STAGE, Some(i), e);
        let abs = if disc.is_stochastic() {
            build_stochastic(sys, disc, grid)
        } else {
            build_deterministic(sys, disc, grid)
        }
        .map_err(fail)?
        .with_p_map(sys, &cert.p)
        .map_err(fail)?;
        for w in &abs.warnings {
            log::warn!("subsystem {i}: {w}");
        }
        assignment.push(distinct.len());
        keys.push(i);
        distinct.push(abs);
    }
    let all: Vec<FiniteAbstraction> = assignment.iter().map(|&d| distinct[d].clone()).collect();
    check_abstract_well_posed(&ctx.net.interconnection, &all)
        .map_err(|e| PipelineError::from_abstraction(STAGE, None, e))?;

    let mut files = Vec::with_capacity(distinct.len());
    for (d, abs) in distinct.iter().enumerate() {
        let header_name = format!("abstractions/abstraction_{d}.json");
        let rows_name = format!("abstractions/abstraction_{d}.csv");
        let header: AbstractionHeader = abs.header();
        ctx.write_json(STAGE, &header_name, &header)?;
        let mut buf = Vec::new();
        abs.write_csv(&mut buf).map_err(|e| PipelineError::Runtime { stage: STAGE, message: e.to_string() })?;
        ctx.write(STAGE, &rows_name, &buf)?;
        files.push(AbstractionFile {
            header: format!("abstraction_{d}.json"),
            rows: format!("abstraction_{d}.csv"),
            states: abs.n_states(),
            inputs: abs.n_inputs(),
            internal: abs.n_internal(),
        });
    }
    ctx.write_json(STAGE, "abstractions/index.json", &AbstractionIndex { assignment: assignment.clone(), files })?;
    ctx.abstractions = all;
    ctx.abstraction_assignment = assignment;
    Ok(())
}

fn synthesize(ctx: &mut Ctx) -> Result<()> {
    const STAGE: Stage = Stage::Synthesize;
    let n = ctx.n();
    let safety = &ctx.cfg.safety;
    let boxes = safety.safe_box.expand(n, "safety.safe_box").map_err(|m| PipelineError::config(STAGE, m))?;
    let horizon = safety.horizon.unwrap_or(ctx.cfg.bound.horizon);

    let mut distinct: Vec<Controller> = Vec::new();
    let mut keys: Vec<usize> = Vec::new();
    let mut assignment = Vec::with_capacity(n);
    for i in 0..n {
        let same = keys.iter().position(|&j| {
            ctx.abstraction_assignment[j] == ctx.abstraction_assignment[i] && boxes[j] == boxes[i]
        });
        if let Some(d) = same {
            assignment.push(d);
            continue;
        }
        let abs = &ctx.abstractions[i];
        let mut spec = if abs.disc.is_stochastic() {
            SafetySpec::finite(boxes[i].clone(), horizon)
        } else {
            SafetySpec::infinite(boxes[i].clone())
        };
        spec.contraction = safety.contraction;
        let ctrl = if abs.disc.is_stochastic() {
            safety_value_iteration(abs, &spec)
        } else {
            safety_fixpoint(abs, &spec)
        }
        .map_err(|e| PipelineError::config(STAGE, format!("subsystem {i}: {e}")))?;
        if ctrl.is_empty() {
            log::warn!("subsystem {i}: controller has an empty winning set");
        }
        assignment.push(distinct.len());
        keys.push(i);
        distinct.push(ctrl);
    }

    let mut csv = String::from("controller,state,step,input\n");
    for (d, c) in distinct.iter().enumerate() {
        let stationary = c.table.len() == 1;
        for s in 0..c.n_states {
            for (k, row) in c.table.iter().enumerate() {
                if let Some(u) = row[s] {
                    let step = if stationary { String::new() } else { k.to_string() };
                    csv.push_str(&format!("{d},{s},{step},{u}\n"));
                }
            }
        }
    }
    ctx.write(STAGE, "controller.csv", csv.as_bytes())?;
    let meta = ControllerArtifact {
        assignment: assignment.clone(),
        controllers: distinct.iter().map(Controller::metadata).collect(),
    };
    ctx.write_json(STAGE, "controller.json", &meta)?;
    ctx.controllers = assignment.iter().map(|&d| distinct[d].clone()).collect();
    Ok(())
}

/// `V(x₀, x̂₀) = Σ μᵢSᵢ` at the simulation's initial state and its quantization.
fn initial_storage(ctx: &Ctx) -> Result<f64> {
    let Some(sim) = &ctx.cfg.simulation else { return Ok(0.0) };
    let n = ctx.n();
    let x0: Vec<Vec<f64>> = match &sim.initial_state {
        InitialState::Constant(v) => ctx.net.systems.iter().map(|s| vec![*v; s.n()]).collect(),
        InitialState::PerSubsystem(vs) if vs.len() == n => vs.clone(),
        InitialState::PerSubsystem(_) => {
            return Err(PipelineError::config(Stage::Bound, "initial_state has the wrong number of subsystems"))
        }
    };
    let mut v0 = 0.0;
    for i in 0..n {
        let abs = &ctx.abstractions[i];
        let x_hat = match abs.grid.state.quantize(&x0[i]) {
            Quantized::Inside { rep, .. } => rep,
            Quantized::Outside => {
                return Err(PipelineError::Runtime {
                    stage: Stage::Bound,
                    message: RuntimeError::InitialStateOffGrid(i).to_string(),
                })
            }
        };
        v0 += ctx.net.interconnection.mu[i] * ctx.run.certificates[i].storage(&x0[i], &x_hat);
    }
    Ok(v0)
}

fn bound(ctx: &mut Ctx) -> Result<()> {
    const STAGE: Stage = Stage::Bound;
    let bc = &ctx.cfg.bound;
    let ssf = ctx.run.composition.as_ref().expect("compose ran before bound").ssf.clone();
    let nu_hat_sup = match bc.nu_hat_sup {
        Some(v) => v,
        None => {
            let grids: Vec<&Grid> = ctx.abstractions.iter().map(|a| &a.grid).collect();
            grids.iter().map(|g| input_sup_norm(g).powi(2)).sum::<f64>().sqrt()
        }
    };
    let psi_hat_formula = bounds::psi_hat(ssf.rho_ext_slope, nu_hat_sup, ssf.psi);
    let (psi_hat, source) = match bc.psi_hat {
        Some(v) => (v, PsiHatSource::Override),
        None => (psi_hat_formula, PsiHatSource::Formula),
    };
    let v0 = match bc.v0 {
        Some(v) => v,
        None => initial_storage(ctx)?,
    };
    let eval = |psi_hat: f64| {
        ClosenessBound::evaluate(ssf.alpha_coeff, ssf.kappa, bc.epsilon, bc.horizon, psi_hat, v0)
            .map_err(|e| PipelineError::config(STAGE, e))
    };
    let reported = eval(psi_hat)?;
    let formula_bound = eval(psi_hat_formula)?;
    let psi_hat_admissible = psi_hat >= psi_hat_formula;
    if !psi_hat_admissible {
        log::warn!("psi_hat override {psi_hat:e} is below the formula value {psi_hat_formula:e}");
    }
    let report = BoundReport {
        reported,
        psi_hat_source: source,
        psi_hat_formula,
        psi_hat_admissible,
        formula_bound,
        nu_hat_sup,
        alpha_mode: ssf.alpha_mode,
        alpha_coeff: ssf.alpha_coeff,
        alpha_of_epsilon: ssf.alpha(bc.epsilon),
        kappa: ssf.kappa,
        rho_ext_slope: ssf.rho_ext_slope,
        psi: ssf.psi,
    };
    ctx.write_json(STAGE, "bound.json", &report)?;
    ctx.run.bound = Some(report);
    Ok(())
}

fn simulate(ctx: &mut Ctx, seed: Option<u64>) -> Result<()> {
    const STAGE: Stage = Stage::Simulate;
    let mut sim = ctx
        .cfg
        .simulation
        .clone()
        .ok_or_else(|| PipelineError::config(STAGE, "no `simulation` section"))?;
    if let Some(s) = seed {
        sim.rng_seed = s;
    }
    let out = cosimulate(&ctx.net, &ctx.abstractions, &ctx.controllers, &ctx.run.certificates, &sim)
        .map_err(|e| PipelineError::from_runtime(STAGE, e))?;
    let theoretical = ctx.run.bound.as_ref().map(|b| b.reported.violation_bound);
    let artifact = SimulationArtifact {
        summary: &out.summary,
        theoretical_violation_bound: theoretical,
        dominated: theoretical.map(|t| out.summary.violation_upper_95 <= t),
    };
    ctx.write_json(STAGE, "simulation_summary.json", &artifact)?;
    let io = |e: std::io::Error| PipelineError::Runtime { stage: STAGE, message: e.to_string() };
    let mut buf = Vec::new();
    write_trajectories_csv(&out.records, &mut buf).map_err(io)?;
    ctx.write(STAGE, "trajectories.csv", &buf)?;
    buf.clear();
    write_error_realizations_csv(&out.records, &mut buf).map_err(io)?;
    ctx.write(STAGE, "error_realizations.csv", &buf)?;
    if let Some(c) = &out.summary.convergence {
        if !c.accepted {
            return Err(PipelineError::Runtime {
                stage: STAGE,
                message: format!(
                    "doubling the sub-steps moved the violation frequency by {:.4}",
                    c.violation_frequency_drift
                ),
            });
        }
    }
    ctx.run.simulation = Some(out.summary);
    Ok(())
}
