//! Closed-loop co-simulation of the concrete network (Euler–Maruyama) and the
//! finite abstractions driven by their safety controllers.
//!
//! Over one sampling interval the interface input splits into a latched part
//! and a part linear in `ξ(t)`, `w(t)`:
//! `Bν(t) = BKξ(t) + B c_k - BHw(t)` with
//! `c_k = -KPξ̂ - Qξ̂ + (ξ(kτ) - Pξ̂) + H(w(kτ) - ŵ)`,
//! so the drift becomes `(A + BK)ξ + (B c_k + b) + (D - BH)w(t)`.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{FiniteAbstraction, Quantized, Transitions};
use crate::certificates::StorageCertificate;
use crate::linalg::{self, Matrix};
use crate::model::Network;
use crate::synthesis::Controller;

use super::stats::clopper_pearson_upper;
use super::RuntimeError;

fn default_substeps() -> usize {
    20
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    /// Same value in every state coordinate.
    Constant(f64),
    PerSubsystem(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default = "default_substeps")]
    pub n_substeps: usize,
    pub n_trials: usize,
    #[serde(default)]
    pub rng_seed: u64,
    pub horizon: u32,
    pub epsilon: f64,
    pub initial_state: InitialState,
    /// Number of leading trials whose outputs are kept at every sub-step.
    #[serde(default)]
    pub record_outputs: usize,
    /// Re-run with twice the sub-steps and compare the summaries.
    #[serde(default = "yes")]
    pub convergence_check: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.n_substeps == 0 {
            return Err(RuntimeError::InvalidConfig("n_substeps must be at least 1".into()));
        }
        if self.n_trials == 0 {
            return Err(RuntimeError::InvalidConfig("n_trials must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(RuntimeError::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Trial aborted because an abstract state reached the sink or lost its action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractStateLost {
    pub trial: usize,
    pub step: usize,
    pub subsystem: usize,
}

/// Outputs at every sub-step; only sampling instants carry the guarantee.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordedOutputs {
    pub times: Vec<f64>,
    pub guaranteed: Vec<bool>,
    pub concrete: Vec<Vec<f64>>,
    pub abstract_outputs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub trial: usize,
    /// `‖ζ(kτ) - ζ̂(k)‖` for the recorded sampling instants.
    pub errors: Vec<f64>,
    pub sup_error: f64,
    pub violated: bool,
    pub aborted: Option<AbstractStateLost>,
    /// Range of all concrete outputs at sampling instants.
    pub output_min: f64,
    pub output_max: f64,
    pub outputs: Option<RecordedOutputs>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCheck {
    pub n_substeps: usize,
    pub violation_frequency: f64,
    pub violation_frequency_drift: f64,
    pub mean_sup_error: f64,
    pub mean_sup_error_drift: f64,
    pub accepted: bool,
}

/// Absolute drift in violation frequency tolerated between the two resolutions.
pub const CONVERGENCE_TOLERANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub n_trials: usize,
    pub n_substeps: usize,
    pub horizon: u32,
    pub epsilon: f64,
    pub rng_seed: u64,
    pub violations: u64,
    pub aborted: u64,
    pub violation_frequency: f64,
    /// Two-sided 95% Clopper–Pearson upper limit on the violation probability.
    pub violation_upper_95: f64,
    pub mean_sup_error: f64,
    pub max_sup_error: f64,
    pub violation_free_output_range: Option<[f64; 2]>,
    pub convergence: Option<ConvergenceCheck>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CosimOutput {
    pub records: Vec<TrajectoryRecord>,
    pub summary: SimSummary,
}

/// Row-major dense block.
#[derive(Clone, Debug)]
struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Dense {
    fn new(m: &Matrix) -> Self {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    /// `out += scale · M x`.
    #[inline]
    fn mul_add(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            out[i] += scale * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// Sparse rows of the coupling matrix.
#[derive(Clone, Debug)]
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    fn new(m: &Matrix) -> Self {
        let mut row_ptr = vec![0];
        let (mut cols, mut vals) = (Vec::new(), Vec::new());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    cols.push(j);
                    vals.push(m[(i, j)]);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { row_ptr, cols, vals }
    }

    #[inline]
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (self.row_ptr[i]..self.row_ptr[i + 1]).map(|k| self.vals[k] * x[self.cols[k]]).sum();
        }
    }
}

struct Sub<'a> {
    n: usize,
    m: usize,
    x_off: usize,
    w_off: usize,
    p: usize,
    y1_off: usize,
    q1: usize,
    y2_off: usize,
    nb: usize,
    a_cl: Dense,
    b: Dense,
    kp: Dense,
    p_map: Dense,
    q: Dense,
    h: Dense,
    /// `D - BH`, `None` when exactly zero.
    e: Option<Dense>,
    g: Dense,
    c1: Dense,
    c2: Dense,
    offset: Vec<f64>,
    abs: &'a FiniteAbstraction,
    ctrl: &'a Controller,
    /// Representative points, `C̃₁` and `C̃₂` images per abstract state.
    centers: Vec<f64>,
    y1_hat: Vec<f64>,
    y2_hat: Vec<f64>,
    s0: usize,
}

struct Compiled<'a> {
    subs: Vec<Sub<'a>>,
    coupling: Csr,
    nx: usize,
    nw: usize,
    ny1: usize,
    ny2: usize,
    needs_w: bool,
    tau: f64,
}

fn per_state(abs: &FiniteAbstraction, map: &Matrix) -> Vec<f64> {
    let d = Dense::new(map);
    let mut out = vec![0.0; abs.n_states() * d.rows];
    for s in 0..abs.n_states() {
        d.mul_add(&abs.grid.state.center(s), 1.0, &mut out[s * d.rows..(s + 1) * d.rows]);
    }
    out
}

fn initial_vectors(net: &Network, init: &InitialState) -> Result<Vec<Vec<f64>>, RuntimeError> {
    match init {
        InitialState::Constant(v) => Ok(net.systems.iter().map(|s| vec![*v; s.n()]).collect()),
        InitialState::PerSubsystem(vs) => {
            if vs.len() != net.systems.len() || vs.iter().zip(&net.systems).any(|(v, s)| v.len() != s.n()) {
                return Err(RuntimeError::DimensionMismatch("initial_state".into()));
            }
            Ok(vs.clone())
        }
    }
}

fn compile<'a>(
    net: &'a Network,
    abstractions: &'a [FiniteAbstraction],
    controllers: &'a [Controller],
    certs: &'a [StorageCertificate],
    init: &InitialState,
) -> Result<Compiled<'a>, RuntimeError> {
    let count = net.systems.len();
    if abstractions.len() != count || controllers.len() != count || certs.len() != count {
        return Err(RuntimeError::DimensionMismatch(format!(
            "{count} subsystems, {} abstractions, {} controllers, {} certificates",
            abstractions.len(),
            controllers.len(),
            certs.len()
        )));
    }
    let x0 = initial_vectors(net, init)?;
    let mut subs = Vec::with_capacity(count);
    let (mut nx, mut nw, mut ny1, mut ny2) = (0, 0, 0, 0);
    let mut taus = Vec::new();
    for (i, (((sys, abs), ctrl), cert)) in net.systems.iter().zip(abstractions).zip(controllers).zip(certs).enumerate() {
        if sys.m() != sys.n() {
            return Err(RuntimeError::NonSquareInput(i));
        }
        if cert.k.shape() != (sys.m(), sys.n()) || cert.p.shape() != (sys.n(), sys.n()) || cert.h.shape() != (sys.m(), sys.p()) {
            return Err(RuntimeError::DimensionMismatch(format!("certificate {i}")));
        }
        if abs.grid.state.dim() != sys.n() || ctrl.n_states != abs.n_states() {
            return Err(RuntimeError::DimensionMismatch(format!("abstraction or controller {i}")));
        }
        let s0 = match abs.grid.state.quantize(&x0[i]) {
            Quantized::Inside { index, .. } => index,
            Quantized::Outside => return Err(RuntimeError::InitialStateOffGrid(i)),
        };
        let e = &sys.d - &sys.b * &cert.h;
        taus.push(abs.disc.tau);
        subs.push(Sub {
            n: sys.n(),
            m: sys.m(),
            x_off: nx,
            w_off: nw,
            p: sys.p(),
            y1_off: ny1,
            q1: sys.q1(),
            y2_off: ny2,
            nb: sys.noise_dim(),
            a_cl: Dense::new(&(&sys.a + &sys.b * &cert.k)),
            b: Dense::new(&sys.b),
            kp: Dense::new(&(&cert.k * &cert.p)),
            p_map: Dense::new(&cert.p),
            q: Dense::new(&cert.q),
            h: Dense::new(&cert.h),
            e: (!linalg::is_zero(&e)).then(|| Dense::new(&e)),
            g: Dense::new(&sys.g),
            c1: Dense::new(&sys.c1),
            c2: Dense::new(&sys.c2),
            offset: sys.offset.iter().copied().collect(),
            centers: (0..abs.n_states()).flat_map(|s| abs.grid.state.center(s)).collect(),
            y1_hat: per_state(abs, &abs.c1_tilde),
            y2_hat: per_state(abs, &abs.c2_tilde),
            abs,
            ctrl,
            s0,
        });
        nx += sys.n();
        nw += sys.p();
        ny1 += sys.q1();
        ny2 += sys.q2();
    }
    let tau = taus[0];
    if taus.iter().any(|t| (t - tau).abs() > 1e-12 * tau) {
        return Err(RuntimeError::DimensionMismatch("subsystems use different sampling times".into()));
    }
    if net.interconnection.m.shape() != (nw, ny2) {
        return Err(RuntimeError::DimensionMismatch("interconnection".into()));
    }
    let needs_w = subs.iter().any(|s| s.e.is_some());
    Ok(Compiled { subs, coupling: Csr::new(&net.interconnection.m), nx, nw, ny1, ny2, needs_w, tau })
}

struct Buffers {
    x: Vec<f64>,
    y1: Vec<f64>,
    y1_hat: Vec<f64>,
    y2: Vec<f64>,
    y2_hat: Vec<f64>,
    w: Vec<f64>,
    w_hat: Vec<f64>,
    w_k: Vec<f64>,
    u_const: Vec<f64>,
    c: Vec<f64>,
    tmp: Vec<f64>,
    z: Vec<f64>,
}

impl Compiled<'_> {
    fn buffers(&self) -> Buffers {
        let max_m = self.subs.iter().map(|s| s.m).max().unwrap_or(0);
        let max_n = self.subs.iter().map(|s| s.n).max().unwrap_or(0);
        let max_b = self.subs.iter().map(|s| s.nb).max().unwrap_or(0);
        Buffers {
            x: vec![0.0; self.nx],
            y1: vec![0.0; self.ny1],
            y1_hat: vec![0.0; self.ny1],
            y2: vec![0.0; self.ny2],
            y2_hat: vec![0.0; self.ny2],
            w: vec![0.0; self.nw],
            w_hat: vec![0.0; self.nw],
            w_k: vec![0.0; self.nw],
            u_const: vec![0.0; self.nx],
            c: vec![0.0; max_m],
            tmp: vec![0.0; max_n.max(max_m)],
            z: vec![0.0; max_b],
        }
    }

    fn concrete_outputs(&self, buf: &mut Buffers) {
        for s in &self.subs {
            let y = &mut buf.y1[s.y1_off..s.y1_off + s.q1];
            y.fill(0.0);
            s.c1.mul_add(&buf.x[s.x_off..s.x_off + s.n], 1.0, y);
        }
    }

    fn concrete_internal(&self, x: &[f64], y2: &mut [f64], w: &mut [f64]) {
        for s in &self.subs {
            let y = &mut y2[s.y2_off..s.y2_off + s.c2.rows];
            y.fill(0.0);
            s.c2.mul_add(&x[s.x_off..s.x_off + s.n], 1.0, y);
        }
        self.coupling.apply(y2, w);
    }

    fn abstract_outputs(&self, states: &[usize], buf: &mut Buffers) {
        for (s, &idx) in self.subs.iter().zip(states) {
            buf.y1_hat[s.y1_off..s.y1_off + s.q1].copy_from_slice(&s.y1_hat[idx * s.q1..(idx + 1) * s.q1]);
            let q2 = s.c2.rows;
            buf.y2_hat[s.y2_off..s.y2_off + q2].copy_from_slice(&s.y2_hat[idx * q2..(idx + 1) * q2]);
        }
    }

    fn run_trial(&self, trial: usize, cfg: &SimConfig, x0: &[f64], n_substeps: usize) -> TrajectoryRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream(trial as u64);
        let mut buf = self.buffers();
        buf.x.copy_from_slice(x0);
        let mut states: Vec<usize> = self.subs.iter().map(|s| s.s0).collect();
        let mut next = states.clone();
        let horizon = cfg.horizon as usize;
        let dt = self.tau / n_substeps as f64;
        let sqrt_dt = dt.sqrt();
        let record = trial < cfg.record_outputs;
        let mut recorded = record.then(|| RecordedOutputs {
            times: Vec::new(),
            guaranteed: Vec::new(),
            concrete: Vec::new(),
            abstract_outputs: Vec::new(),
        });
        let mut errors = Vec::with_capacity(horizon + 1);
        let (mut out_min, mut out_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut aborted = None;

        for k in 0..=horizon {
            self.concrete_outputs(&mut buf);
            self.abstract_outputs(&states, &mut buf);
            let err = buf.y1.iter().zip(&buf.y1_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            errors.push(err);
            for &y in &buf.y1 {
                out_min = out_min.min(y);
                out_max = out_max.max(y);
            }
            if let Some(r) = recorded.as_mut() {
                r.times.push(k as f64 * self.tau);
                r.guaranteed.push(true);
                r.concrete.push(buf.y1.clone());
                r.abstract_outputs.push(buf.y1_hat.clone());
            }
            if k == horizon {
                break;
            }

            // Latch: abstract internal inputs, concrete internal inputs, abstract moves.
            self.coupling.apply(&buf.y2_hat, &mut buf.w_hat);
            self.concrete_internal(&buf.x, &mut buf.y2, &mut buf.w_k);
            for (i, s) in self.subs.iter().enumerate() {
                let lost = AbstractStateLost { trial, step: k, subsystem: i };
                let Some(u) = s.ctrl.action(states[i], k) else {
                    aborted = Some(lost);
                    break;
                };
                let w_hat = &buf.w_hat[s.w_off..s.w_off + s.p];
                let w_idx = match s.abs.grid.internal.quantize(w_hat) {
                    Quantized::Inside { index, .. } => index,
                    Quantized::Outside => {
                        aborted = Some(lost);
                        break;
                    }
                };
                next[i] = match &s.abs.transitions {
                    Transitions::Deterministic(_) => s.abs.successor(states[i], u, w_idx),
                    Transitions::Stochastic(rows) => {
                        let row = &rows[s.abs.row_index(states[i], u, w_idx)];
                        sample_row(row, rng.random::<f64>(), s.abs.sink())
                    }
                };

                // c_k = -KPξ̂ - Qξ̂ + (ξ(kτ) - Pξ̂) + H(w(kτ) - ŵ)
                let x_hat = &s.centers[states[i] * s.n..(states[i] + 1) * s.n];
                let c = &mut buf.c[..s.m];
                c.copy_from_slice(&buf.x[s.x_off..s.x_off + s.n]);
                s.kp.mul_add(x_hat, -1.0, c);
                s.q.mul_add(x_hat, -1.0, c);
                s.p_map.mul_add(x_hat, -1.0, c);
                let dw = &mut buf.tmp[..s.p];
                for (j, d) in dw.iter_mut().enumerate() {
                    *d = buf.w_k[s.w_off + j] - w_hat[j];
                }
                let dw: Vec<f64> = dw.to_vec();
                s.h.mul_add(&dw, 1.0, c);
                let uc = &mut buf.u_const[s.x_off..s.x_off + s.n];
                uc.copy_from_slice(&s.offset);
                s.b.mul_add(c, 1.0, uc);
            }
            if aborted.is_some() {
                break;
            }

            for j in 0..n_substeps {
                if self.needs_w {
                    self.concrete_internal(&buf.x, &mut buf.y2, &mut buf.w);
                }
                for s in &self.subs {
                    let drift = &mut buf.tmp[..s.n];
                    drift.copy_from_slice(&buf.u_const[s.x_off..s.x_off + s.n]);
                    s.a_cl.mul_add(&buf.x[s.x_off..s.x_off + s.n], 1.0, drift);
                    if let Some(e) = &s.e {
                        e.mul_add(&buf.w[s.w_off..s.w_off + s.p], 1.0, drift);
                    }
                    let z = &mut buf.z[..s.nb];
                    for v in z.iter_mut() {
                        *v = rng.sample(StandardNormal);
                    }
                    let x = &mut buf.x[s.x_off..s.x_off + s.n];
                    for (xi, d) in x.iter_mut().zip(drift.iter()) {
                        *xi += dt * d;
                    }
                    s.g.mul_add(z, sqrt_dt, x);
                }
                if let Some(r) = recorded.as_mut() {
                    if j + 1 < n_substeps {
                        self.concrete_outputs(&mut buf);
                        r.times.push(k as f64 * self.tau + (j + 1) as f64 * dt);
                        r.guaranteed.push(false);
                        r.concrete.push(buf.y1.clone());
                        r.abstract_outputs.push(buf.y1_hat.clone());
                    }
                }
            }

            std::mem::swap(&mut states, &mut next);
            if let Some(i) = self.subs.iter().zip(&states).position(|(s, &st)| st >= s.abs.sink()) {
                aborted = Some(AbstractStateLost { trial, step: k + 1, subsystem: i });
                break;
            }
        }

        let sup_error = errors.iter().copied().fold(0.0, f64::max);
        TrajectoryRecord {
            trial,
            violated: aborted.is_some() || sup_error >= cfg.epsilon,
            errors,
            sup_error,
            aborted,
            output_min: out_min,
            output_max: out_max,
            outputs: recorded,
        }
    }
}

fn sample_row(row: &[(usize, f64)], u: f64, sink: usize) -> usize {
    let mut acc = 0.0;
    for &(t, p) in row {
        acc += p;
        if u < acc {
            return t;
        }
    }
    row.last().map_or(sink, |&(t, _)| t)
}

fn summarize(records: &[TrajectoryRecord], cfg: &SimConfig, n_substeps: usize) -> SimSummary {
    let n = records.len();
    let violations = records.iter().filter(|r| r.violated).count() as u64;
    let aborted = records.iter().filter(|r| r.aborted.is_some()).count() as u64;
    let range = records.iter().filter(|r| !r.violated).fold(None, |acc: Option<[f64; 2]>, r| {
        Some(match acc {
            None => [r.output_min, r.output_max],
            Some([lo, hi]) => [lo.min(r.output_min), hi.max(r.output_max)],
        })
    });
    SimSummary {
        n_trials: n,
        n_substeps,
        horizon: cfg.horizon,
        epsilon: cfg.epsilon,
        rng_seed: cfg.rng_seed,
        violations,
        aborted,
        violation_frequency: violations as f64 / n as f64,
        violation_upper_95: clopper_pearson_upper(violations, n as u64, 0.95),
        mean_sup_error: records.iter().map(|r| r.sup_error).sum::<f64>() / n as f64,
        max_sup_error: records.iter().map(|r| r.sup_error).fold(0.0, f64::max),
        violation_free_output_range: range,
        convergence: None,
    }
}

/// Runs `cfg.n_trials` independent trials (in parallel, ordered by trial index).
pub fn cosimulate(
    net: &Network,
    abstractions: &[FiniteAbstraction],
    controllers: &[Controller],
    certs: &[StorageCertificate],
    cfg: &SimConfig,
) -> Result<CosimOutput, RuntimeError> {
    cfg.validate()?;
    let compiled = compile(net, abstractions, controllers, certs, &cfg.initial_state)?;
    let x0: Vec<f64> = initial_vectors(net, &cfg.initial_state)?.concat();
    let run = |substeps: usize| -> Vec<TrajectoryRecord> {
        (0..cfg.n_trials).into_par_iter().map(|t| compiled.run_trial(t, cfg, &x0, substeps)).collect()
    };
    let records = run(cfg.n_substeps);
    let mut summary = summarize(&records, cfg, cfg.n_substeps);
    if cfg.convergence_check {
        let fine_steps = 2 * cfg.n_substeps;
        let mut fine_cfg = cfg.clone();
        fine_cfg.record_outputs = 0;
        let fine_records: Vec<TrajectoryRecord> = (0..cfg.n_trials)
            .into_par_iter()
            .map(|t| compiled.run_trial(t, &fine_cfg, &x0, fine_steps))
            .collect();
        let fine = summarize(&fine_records, cfg, fine_steps);
        let drift = (fine.violation_frequency - summary.violation_frequency).abs();
        let check = ConvergenceCheck {
            n_substeps: fine_steps,
            violation_frequency: fine.violation_frequency,
            violation_frequency_drift: drift,
            mean_sup_error: fine.mean_sup_error,
            mean_sup_error_drift: (fine.mean_sup_error - summary.mean_sup_error).abs(),
            accepted: drift < CONVERGENCE_TOLERANCE,
        };
        if !check.accepted {
            log::warn!("sub-step refinement moved the violation frequency by {drift}");
        }
        summary.convergence = Some(check);
    }
    Ok(CosimOutput { records, summary })
}

/// `trial,k,error,sup_error` with the running supremum.
pub fn write_trajectories_csv<W: Write>(records: &[TrajectoryRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "trial,k,error,sup_error")?;
    for r in records {
        let mut sup = 0.0f64;
        for (k, e) in r.errors.iter().enumerate() {
            sup = sup.max(*e);
            writeln!(out, "{},{k},{e},{sup}", r.trial)?;
        }
    }
    Ok(())
}

/// Long format `trial,time,output,concrete,abstract,error,guaranteed` for the
/// recorded trials; sub-step rows are not covered by the guarantee.
pub fn write_error_realizations_csv<W: Write>(records: &[TrajectoryRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "trial,time,output,concrete,abstract,error,guaranteed")?;
    for r in records {
        let Some(o) = &r.outputs else { continue };
        for (i, t) in o.times.iter().enumerate() {
            for (j, (y, yh)) in o.concrete[i].iter().zip(&o.abstract_outputs[i]).enumerate() {
                writeln!(out, "{},{t},{j},{y},{yh},{},{}", r.trial, y - yh, u8::from(o.guaranteed[i]))?;
            }
        }
    }
    Ok(())
}
