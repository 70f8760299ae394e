//! Safety controllers on finite abstractions. Internal inputs are treated as
//! adversarial: an action must work for every internal-input cell.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{AbstractionKind, FiniteAbstraction, Transitions};
use crate::interval::IntervalBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("{0:?} abstraction is not supported by this algorithm")]
    WrongKind(AbstractionKind),
    #[error("safe box is empty after contraction by {0}")]
    EmptyContraction(f64),
    #[error("safe box has {got} dimensions, the output has {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("safe box is invalid (dimension {0})")]
    InvalidSafeBox(usize),
    #[error("fixpoint synthesis needs an infinite horizon, value iteration a finite one")]
    HorizonMismatch,
}

type Result<T> = std::result::Result<T, SynthesisError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Infinite,
    Finite(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetySpec {
    /// Safe set in the output space of `C̃₁`.
    pub safe_box: IntervalBox,
    #[serde(default)]
    pub contraction: Option<f64>,
    pub horizon: Horizon,
}

impl SafetySpec {
    pub fn infinite(safe_box: IntervalBox) -> Self {
        Self { safe_box, contraction: None, horizon: Horizon::Infinite }
    }

    pub fn finite(safe_box: IntervalBox, steps: u32) -> Self {
        Self { safe_box, contraction: None, horizon: Horizon::Finite(steps) }
    }

    pub fn effective_box(&self) -> Result<IntervalBox> {
        if let Some(i) = self.safe_box.first_inverted() {
            return Err(SynthesisError::InvalidSafeBox(i));
        }
        match self.contraction {
            None => Ok(self.safe_box.clone()),
            Some(eps) => self.safe_box.contract(eps).ok_or(SynthesisError::EmptyContraction(eps)),
        }
    }
}

/// Indicator of states whose representative output lies in the safe box.
pub fn safe_states(abs: &FiniteAbstraction, spec: &SafetySpec) -> Result<Vec<bool>> {
    let safe = spec.effective_box()?;
    if safe.dim() != abs.c1_tilde.nrows() {
        return Err(SynthesisError::DimensionMismatch { got: safe.dim(), want: abs.c1_tilde.nrows() });
    }
    Ok((0..abs.n_states())
        .map(|s| {
            let x = nalgebra::DVector::from_vec(abs.grid.state.center(s));
            let y: Vec<f64> = (&abs.c1_tilde * x).iter().copied().collect();
            safe.contains_point(&y)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    DeterministicMap,
    TimeVaryingMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub kind: ControllerKind,
    pub spec: SafetySpec,
    /// `table[step][state]`; a single step for stationary controllers.
    pub table: Vec<Vec<Option<usize>>>,
    pub winning_set: Vec<usize>,
    /// Safety probability at step 0 (value iteration only).
    pub values: Option<Vec<f64>>,
    pub n_states: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerMetadata {
    pub kind: ControllerKind,
    pub spec: SafetySpec,
    pub states: usize,
    pub winning_states: usize,
    pub winning_fraction: f64,
    pub steps: usize,
}

impl Controller {
    /// Action at `state` and `step`; stationary controllers ignore `step`,
    /// time-varying ones reuse the last step past the horizon.
    pub fn action(&self, state: usize, step: usize) -> Option<usize> {
        let k = step.min(self.table.len().saturating_sub(1));
        self.table.get(k).and_then(|row| row.get(state).copied().flatten())
    }

    pub fn is_empty(&self) -> bool {
        self.winning_set.is_empty()
    }

    pub fn metadata(&self) -> ControllerMetadata {
        ControllerMetadata {
            kind: self.kind,
            spec: self.spec.clone(),
            states: self.n_states,
            winning_states: self.winning_set.len(),
            winning_fraction: self.winning_set.len() as f64 / self.n_states.max(1) as f64,
            steps: self.table.len(),
        }
    }

    /// `state,input` rows (`state,step,input` when time-varying).
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        match self.kind {
            ControllerKind::DeterministicMap => {
                writeln!(out, "state,input")?;
                for (s, a) in self.table[0].iter().enumerate() {
                    if let Some(u) = a {
                        writeln!(out, "{s},{u}")?;
                    }
                }
            }
            ControllerKind::TimeVaryingMap => {
                writeln!(out, "state,step,input")?;
                for s in 0..self.n_states {
                    for (k, row) in self.table.iter().enumerate() {
                        if let Some(u) = row[s] {
                            writeln!(out, "{s},{k},{u}")?;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn deterministic_table(abs: &FiniteAbstraction) -> Result<&[usize]> {
    match &abs.transitions {
        Transitions::Deterministic(t) => Ok(t),
        Transitions::Stochastic(_) => Err(SynthesisError::WrongKind(AbstractionKind::Stochastic)),
    }
}

/// Lowest input whose successors stay in `z` for every internal input.
fn witness(abs: &FiniteAbstraction, succ: &[usize], z: &[bool], s: usize) -> Option<usize> {
    let (nu, nw) = (abs.n_inputs(), abs.n_internal());
    (0..nu).find(|&u| {
        let base = (s * nu + u) * nw;
        succ[base..base + nw].iter().all(|&t| t < z.len() && z[t])
    })
}

/// Maximal controlled invariant subset of the safe cells.
pub fn safety_fixpoint(abs: &FiniteAbstraction, spec: &SafetySpec) -> Result<Controller> {
    if spec.horizon != Horizon::Infinite {
        return Err(SynthesisError::HorizonMismatch);
    }
    let succ = deterministic_table(abs)?;
    let mut z = safe_states(abs, spec)?;
    loop {
        let next: Vec<bool> = (0..z.len())
            .into_par_iter()
            .map(|s| z[s] && witness(abs, succ, &z, s).is_some())
            .collect();
        if next == z {
            break;
        }
        z = next;
    }
    let actions: Vec<Option<usize>> = (0..z.len())
        .into_par_iter()
        .map(|s| if z[s] { witness(abs, succ, &z, s) } else { None })
        .collect();
    let winning_set: Vec<usize> = (0..z.len()).filter(|&s| z[s]).collect();
    if winning_set.is_empty() {
        log::warn!("EmptyWinningSet: no controlled invariant safe state");
    }
    Ok(Controller {
        kind: ControllerKind::DeterministicMap,
        spec: spec.clone(),
        table: vec![actions],
        winning_set,
        values: None,
        n_states: z.len(),
    })
}

/// Finite-horizon maximal safety probability by backward recursion
/// `V_k(s) = max_u min_w Σ_t row(s,u,w)[t] V_{k+1}(t)` on safe cells.
pub fn safety_value_iteration(abs: &FiniteAbstraction, spec: &SafetySpec) -> Result<Controller> {
    let Horizon::Finite(steps) = spec.horizon else {
        return Err(SynthesisError::HorizonMismatch);
    };
    let rows = match &abs.transitions {
        Transitions::Stochastic(r) => r,
        Transitions::Deterministic(_) => return Err(SynthesisError::WrongKind(AbstractionKind::Deterministic)),
    };
    let safe = safe_states(abs, spec)?;
    let (ns, nu, nw) = (abs.n_states(), abs.n_inputs(), abs.n_internal());
    let mut v: Vec<f64> = safe.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut table = vec![vec![None; ns]; steps as usize];
    for k in (0..steps as usize).rev() {
        let updated: Vec<(f64, Option<usize>)> = (0..ns)
            .into_par_iter()
            .map(|s| {
                if !safe[s] {
                    return (0.0, None);
                }
                let mut best = (f64::NEG_INFINITY, None);
                for u in 0..nu {
                    let worst = (0..nw)
                        .map(|w| {
                            rows[(s * nu + u) * nw + w]
                                .iter()
                                .map(|&(t, p)| if t < ns { p * v[t] } else { 0.0 })
                                .sum::<f64>()
                        })
                        .fold(f64::INFINITY, f64::min);
                    if worst > best.0 {
                        best = (worst, Some(u));
                    }
                }
                (best.0.clamp(0.0, 1.0), best.1)
            })
            .collect();
        for (s, (val, act)) in updated.into_iter().enumerate() {
            v[s] = val;
            table[k][s] = act;
        }
    }
    let winning_set: Vec<usize> = (0..ns).filter(|&s| safe[s] && v[s] > 0.0).collect();
    if steps > 0 {
        for (s, slot) in table[0].iter_mut().enumerate() {
            if !(safe[s] && v[s] > 0.0) {
                *slot = None;
            }
        }
    }
    Ok(Controller {
        kind: ControllerKind::TimeVaryingMap,
        spec: spec.clone(),
        table,
        winning_set,
        values: Some(v),
        n_states: ns,
    })
}
