//! Uniform grids, the quantizer and finite abstractions of the
//! time-discretized dynamics `ξ̃⁺ = ξ̃ + ν̃ + D̃w̃ + R̃ς`.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::condition::Condition;
use crate::interval::IntervalBox;
use crate::linalg::{serde_matrix, Matrix};
use crate::model::{AffineSystem, DiscretizationSpec, InterconnectionSpec, ModelError};

/// Rows above this count are refused instead of allocated.
pub const MAX_ROWS: usize = 50_000_000;
/// Gaussian masses are only evaluated within this many standard deviations.
const TRUNCATION_SIGMAS: f64 = 8.0;
const ROW_MASS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbstractionError {
    #[error("grid axis {axis} of the {space} space: {reason}")]
    InvalidAxis { space: &'static str, axis: usize, reason: String },
    #[error("{space} grid does not cover its box in dimension {dim}")]
    DoesNotCover { space: &'static str, dim: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("deterministic abstraction requires R_tilde = 0")]
    NotDeterministic,
    #[error("stochastic abstraction requires R_tilde != 0")]
    NotStochastic,
    #[error("R_tilde R_tildeᵀ is not diagonal")]
    NonDiagonalNoise,
    #[error("row {row} carries probability mass {mass}")]
    RowMassError { row: usize, mass: f64 },
    #[error("abstraction would have {0} rows")]
    TooLarge(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{condition}: abstract internal output escapes the internal-input grid in dimension {dim}")]
    NotWellPosed { condition: Condition, dim: usize },
}

type Result<T> = std::result::Result<T, AbstractionError>;

/// One axis of half-open cells `[lower + i·width, lower + (i+1)·width)`; the
/// last cell is closed at the top.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, width: f64) -> Self {
        Self { lower, upper, width }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(self.lower.is_finite() && self.upper.is_finite() && self.width.is_finite()) {
            return Err("non-finite bound or width".into());
        }
        if !(self.width > 0.0) {
            return Err(format!("width {} is not positive", self.width));
        }
        if !(self.upper > self.lower) {
            return Err(format!("empty interval [{}, {}]", self.lower, self.upper));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        let t = (self.upper - self.lower) / self.width;
        let r = t.round();
        if (t - r).abs() <= 1e-9 * r.max(1.0) {
            (r as usize).max(1)
        } else {
            t.ceil() as usize
        }
    }

    /// Upper edge of the last cell (at least `upper`).
    pub fn grid_upper(&self) -> f64 {
        self.lower + self.cells() as f64 * self.width
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lower + (i as f64 + 0.5) * self.width
    }

    pub fn cell_bounds(&self, i: usize) -> (f64, f64) {
        (self.lower + i as f64 * self.width, self.lower + (i + 1) as f64 * self.width)
    }

    /// Cell containing `x`; coordinates within `1e-9` cells of an edge snap to it.
    pub fn locate(&self, x: f64) -> Option<usize> {
        let cells = self.cells();
        let mut t = (x - self.lower) / self.width;
        let r = t.round();
        if (t - r).abs() <= 1e-9 {
            t = r;
        }
        if !(t >= 0.0) || t > cells as f64 {
            return None;
        }
        Some((t.floor() as usize).min(cells - 1))
    }
}

/// Product grid over one space; the first axis varies slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub axes: Vec<Axis>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Quantized {
    Inside { index: usize, rep: Vec<f64> },
    Outside,
}

impl GridSpace {
    pub fn new(axes: Vec<Axis>) -> Self {
        Self { axes }
    }

    pub fn uniform(bx: &IntervalBox, width: f64) -> Self {
        Self::new(bx.lower.iter().zip(&bx.upper).map(|(&lo, &hi)| Axis::new(lo, hi, width)).collect())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Number of cells; a zero-dimensional space has a single point.
    pub fn len(&self) -> usize {
        self.axes.iter().map(Axis::cells).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn widths(&self) -> Vec<f64> {
        self.axes.iter().map(|a| a.width).collect()
    }

    pub fn validate(&self, space: &'static str) -> Result<()> {
        for (axis, a) in self.axes.iter().enumerate() {
            a.validate().map_err(|reason| AbstractionError::InvalidAxis { space, axis, reason })?;
        }
        Ok(())
    }

    pub fn multi_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for (d, a) in self.axes.iter().enumerate().rev() {
            let c = a.cells();
            out[d] = index % c;
            index /= c;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        self.axes.iter().zip(multi).fold(0, |acc, (a, &i)| acc * a.cells() + i)
    }

    pub fn center(&self, index: usize) -> Vec<f64> {
        self.multi_index(index).iter().zip(&self.axes).map(|(&i, a)| a.center(i)).collect()
    }

    pub fn quantize(&self, x: &[f64]) -> Quantized {
        assert_eq!(x.len(), self.dim(), "quantize dimension mismatch");
        let mut multi = Vec::with_capacity(self.dim());
        for (a, &v) in self.axes.iter().zip(x) {
            match a.locate(v) {
                Some(i) => multi.push(i),
                None => return Quantized::Outside,
            }
        }
        let rep = multi.iter().zip(&self.axes).map(|(&i, a)| a.center(i)).collect();
        Quantized::Inside { index: self.flat_index(&multi), rep }
    }

    /// Box spanned by the cells.
    pub fn cell_box(&self) -> IntervalBox {
        IntervalBox::new(
            self.axes.iter().map(|a| a.lower).collect(),
            self.axes.iter().map(Axis::grid_upper).collect(),
        )
    }

    /// Box spanned by the representative points.
    pub fn rep_box(&self) -> IntervalBox {
        IntervalBox::new(
            self.axes.iter().map(|a| a.center(0)).collect(),
            self.axes.iter().map(|a| a.center(a.cells() - 1)).collect(),
        )
    }
}

/// `δ = ‖widths‖₂`, the largest distance between two points of a cell.
pub fn delta_of(space: &GridSpace) -> f64 {
    space.widths().iter().map(|w| w * w).sum::<f64>().sqrt()
}

pub fn quantize(space: &GridSpace, x: &[f64]) -> Quantized {
    space.quantize(x)
}

/// Grids over abstract states, abstract external inputs (`ν̂ ∈ ℝⁿ`) and
/// internal inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub state: GridSpace,
    pub input: GridSpace,
    pub internal: GridSpace,
}

impl Grid {
    pub fn validate(&self, sys: &AffineSystem) -> Result<()> {
        self.state.validate("state")?;
        self.input.validate("input")?;
        self.internal.validate("internal")?;
        let dims = [(self.state.dim(), sys.n(), "state"), (self.input.dim(), sys.n(), "input"), (self.internal.dim(), sys.p(), "internal")];
        for (got, want, what) in dims {
            if got != want {
                return Err(AbstractionError::DimensionMismatch(format!("{what} grid has {got} axes, expected {want}")));
            }
        }
        if let Some(dim) = self.state.cell_box().first_escape(&sys.state_box) {
            return Err(AbstractionError::DoesNotCover { space: "state", dim });
        }
        if let Some(dim) = self.internal.cell_box().first_escape(&sys.internal_box) {
            return Err(AbstractionError::DoesNotCover { space: "internal", dim });
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.state.len().saturating_mul(self.input.len()).saturating_mul(self.internal.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstractionKind {
    Deterministic,
    Stochastic,
}

/// Transition rows indexed by `(state·inputs + input)·internal + internal`.
#[derive(Clone, Debug, PartialEq)]
pub enum Transitions {
    Deterministic(Vec<usize>),
    /// Sparse `(target, probability)` rows; the sink index may appear as a target.
    Stochastic(Vec<Vec<(usize, f64)>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteAbstraction {
    pub grid: Grid,
    pub disc: DiscretizationSpec,
    pub p_map: Matrix,
    /// `C₁P` and `C₂P`, evaluated on representative points.
    pub c1_tilde: Matrix,
    pub c2_tilde: Matrix,
    pub transitions: Transitions,
    pub warnings: Vec<String>,
}

impl FiniteAbstraction {
    pub fn kind(&self) -> AbstractionKind {
        match self.transitions {
            Transitions::Deterministic(_) => AbstractionKind::Deterministic,
            Transitions::Stochastic(_) => AbstractionKind::Stochastic,
        }
    }

    pub fn n_states(&self) -> usize {
        self.grid.state.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.grid.input.len()
    }

    pub fn n_internal(&self) -> usize {
        self.grid.internal.len()
    }

    /// Absorbing index for mass leaving the state grid.
    pub fn sink(&self) -> usize {
        self.n_states()
    }

    pub fn row_index(&self, s: usize, u: usize, w: usize) -> usize {
        (s * self.n_inputs() + u) * self.n_internal() + w
    }

    /// Deterministic successor; panics on stochastic abstractions.
    pub fn successor(&self, s: usize, u: usize, w: usize) -> usize {
        match &self.transitions {
            Transitions::Deterministic(t) => t[self.row_index(s, u, w)],
            Transitions::Stochastic(_) => panic!("successor() on a stochastic abstraction"),
        }
    }

    /// Probability row (a single unit entry for deterministic abstractions).
    pub fn row(&self, s: usize, u: usize, w: usize) -> Vec<(usize, f64)> {
        let r = self.row_index(s, u, w);
        match &self.transitions {
            Transitions::Deterministic(t) => vec![(t[r], 1.0)],
            Transitions::Stochastic(rows) => rows[r].clone(),
        }
    }

    /// Abstraction over an index line: state `i` sits at `i + 0.5` on `[0, states)`,
    /// with identity output maps. Intended for synthetic transition tables.
    pub fn from_transitions(states: usize, inputs: usize, internal: usize, transitions: Transitions) -> Result<Self> {
        let rows = states * inputs * internal;
        let len = match &transitions {
            Transitions::Deterministic(t) => t.len(),
            Transitions::Stochastic(r) => r.len(),
        };
        if states == 0 || inputs == 0 || internal == 0 || len != rows {
            return Err(AbstractionError::DimensionMismatch(format!("{len} rows for {states}x{inputs}x{internal}")));
        }
        let line = |k: usize| Axis::new(0.0, k as f64, 1.0);
        let internal_axes = if internal > 1 { vec![line(internal)] } else { vec![] };
        let p = internal_axes.len();
        Ok(FiniteAbstraction {
            grid: Grid {
                state: GridSpace::new(vec![line(states)]),
                input: GridSpace::new(vec![line(inputs)]),
                internal: GridSpace::new(internal_axes),
            },
            disc: DiscretizationSpec { tau: 1.0, d_tilde: Matrix::zeros(1, p), r_tilde: Matrix::zeros(1, 0) },
            p_map: Matrix::identity(1, 1),
            c1_tilde: Matrix::identity(1, 1),
            c2_tilde: Matrix::identity(1, 1),
            transitions,
            warnings: Vec::new(),
        })
    }

    /// Replaces the coordinate map `P` and recomputes the output maps.
    pub fn with_p_map(mut self, sys: &AffineSystem, p: &Matrix) -> Result<Self> {
        if p.shape() != (sys.n(), self.grid.state.dim()) {
            return Err(AbstractionError::DimensionMismatch("p_map".into()));
        }
        self.c1_tilde = &sys.c1 * p;
        self.c2_tilde = &sys.c2 * p;
        self.p_map = p.clone();
        Ok(self)
    }

    /// Abstract internal output `C̃₂ x̂` at a state index.
    pub fn internal_output(&self, s: usize) -> Vec<f64> {
        let x = nalgebra::DVector::from_vec(self.grid.state.center(s));
        (&self.c2_tilde * x).iter().copied().collect()
    }

    pub fn header(&self) -> AbstractionHeader {
        AbstractionHeader {
            kind: self.kind(),
            grid: self.grid.clone(),
            states: self.n_states(),
            inputs: self.n_inputs(),
            internal: self.n_internal(),
            sink: self.sink(),
            delta: delta_of(&self.grid.state),
            disc: self.disc.clone(),
            p_map: self.p_map.clone(),
            c1_tilde: self.c1_tilde.clone(),
            c2_tilde: self.c2_tilde.clone(),
            warnings: self.warnings.clone(),
        }
    }

    /// Writes `state,input,internal,target,prob` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "state,input,internal,target,prob")?;
        for s in 0..self.n_states() {
            for u in 0..self.n_inputs() {
                for w in 0..self.n_internal() {
                    for (t, p) in self.row(s, u, w) {
                        writeln!(out, "{s},{u},{w},{t},{p:e}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbstractionHeader {
    pub kind: AbstractionKind,
    pub grid: Grid,
    pub states: usize,
    pub inputs: usize,
    pub internal: usize,
    pub sink: usize,
    pub delta: f64,
    pub disc: DiscretizationSpec,
    #[serde(with = "serde_matrix")]
    pub p_map: Matrix,
    #[serde(with = "serde_matrix")]
    pub c1_tilde: Matrix,
    #[serde(with = "serde_matrix")]
    pub c2_tilde: Matrix,
    pub warnings: Vec<String>,
}

fn prepare(sys: &AffineSystem, disc: &DiscretizationSpec, grid: &Grid) -> Result<()> {
    disc.validate(sys)?;
    grid.validate(sys)?;
    let rows = grid.rows();
    if rows > MAX_ROWS {
        return Err(AbstractionError::TooLarge(rows));
    }
    Ok(())
}

/// Mean of the successor distribution for row `(s, u, w)`.
fn successor_mean(grid: &Grid, d_tilde: &Matrix, s: usize, u: usize, w: usize) -> Vec<f64> {
    let mut m = grid.state.center(s);
    for (mi, ui) in m.iter_mut().zip(grid.input.center(u)) {
        *mi += ui;
    }
    if d_tilde.ncols() > 0 {
        let wc = grid.internal.center(w);
        for (i, mi) in m.iter_mut().enumerate() {
            *mi += (0..wc.len()).map(|j| d_tilde[(i, j)] * wc[j]).sum::<f64>();
        }
    }
    m
}

fn coarse_grid_warnings(grid: &Grid) -> Vec<String> {
    let mut warnings = Vec::new();
    for u in 0..grid.input.len() {
        let c = grid.input.center(u);
        if let Some(d) = c.iter().zip(&grid.state.axes).position(|(v, a)| v.abs() > a.grid_upper() - a.lower) {
            warnings.push(format!(
                "GridTooCoarse: input {u} moves {} in dimension {d}, beyond the state grid span",
                c[d]
            ));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    warnings
}

fn assemble(sys: &AffineSystem, disc: &DiscretizationSpec, grid: &Grid, transitions: Transitions) -> FiniteAbstraction {
    let n = sys.n();
    FiniteAbstraction {
        grid: grid.clone(),
        disc: disc.clone(),
        p_map: Matrix::identity(n, n),
        c1_tilde: sys.c1.clone(),
        c2_tilde: sys.c2.clone(),
        transitions,
        warnings: coarse_grid_warnings(grid),
    }
}

fn row_triple(grid: &Grid, r: usize) -> (usize, usize, usize) {
    let (nu, nw) = (grid.input.len(), grid.internal.len());
    (r / (nu * nw), (r / nw) % nu, r % nw)
}

/// `successor(s, u, w) = Π(x̄_s + ν̄_u + D̃w̄_w)`, or the sink when the image leaves the grid.
pub fn build_deterministic(sys: &AffineSystem, disc: &DiscretizationSpec, grid: &Grid) -> Result<FiniteAbstraction> {
    if disc.is_stochastic() {
        return Err(AbstractionError::NotDeterministic);
    }
    prepare(sys, disc, grid)?;
    let sink = grid.state.len();
    let succ: Vec<usize> = (0..grid.rows())
        .into_par_iter()
        .map(|r| {
            let (s, u, w) = row_triple(grid, r);
            match grid.state.quantize(&successor_mean(grid, &disc.d_tilde, s, u, w)) {
                Quantized::Inside { index, .. } => index,
                Quantized::Outside => sink,
            }
        })
        .collect();
    Ok(assemble(sys, disc, grid, Transitions::Deterministic(succ)))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Gaussian mass of `[lo, hi]` for `N(mean, σ²)`.
pub fn gaussian_interval_mass(lo: f64, hi: f64, mean: f64, sigma: f64) -> f64 {
    let (a, b) = ((lo - mean) / sigma, (hi - mean) / sigma);
    // Evaluate in the tail that keeps both CDF values small.
    if a > 0.0 {
        normal_cdf(-a) - normal_cdf(-b)
    } else {
        normal_cdf(b) - normal_cdf(a)
    }
}

/// Per-axis `(cell, mass)` pairs within the truncation window.
fn axis_masses(axis: &Axis, mean: f64, sigma: f64) -> Vec<(usize, f64)> {
    let cells = axis.cells();
    let first = ((mean - TRUNCATION_SIGMAS * sigma - axis.lower) / axis.width).floor();
    let last = ((mean + TRUNCATION_SIGMAS * sigma - axis.lower) / axis.width).floor();
    if last < 0.0 || first >= cells as f64 {
        return Vec::new();
    }
    let first = first.max(0.0) as usize;
    let last = (last as usize).min(cells - 1);
    (first..=last)
        .filter_map(|i| {
            let (lo, hi) = axis.cell_bounds(i);
            let p = gaussian_interval_mass(lo, hi, mean, sigma);
            (p > 0.0).then_some((i, p))
        })
        .collect()
}

/// Rows of cell masses `∏_d [Φ((hi_d - m_d)/σ_d) - Φ((lo_d - m_d)/σ_d)]`, with the
/// remaining mass on the sink.
pub fn build_stochastic(sys: &AffineSystem, disc: &DiscretizationSpec, grid: &Grid) -> Result<FiniteAbstraction> {
    if !disc.is_stochastic() {
        return Err(AbstractionError::NotStochastic);
    }
    prepare(sys, disc, grid)?;
    let cov = &disc.r_tilde * disc.r_tilde.transpose();
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    for i in 0..cov.nrows() {
        for j in 0..cov.ncols() {
            if i != j && cov[(i, j)].abs() > 1e-12 * scale {
                return Err(AbstractionError::NonDiagonalNoise);
            }
        }
    }
    let sigma: Vec<f64> = (0..cov.nrows()).map(|i| cov[(i, i)].sqrt()).collect();
    let sink = grid.state.len();

    let rows: Vec<Result<Vec<(usize, f64)>>> = (0..grid.rows())
        .into_par_iter()
        .map(|r| {
            let (s, u, w) = row_triple(grid, r);
            let mean = successor_mean(grid, &disc.d_tilde, s, u, w);
            let per_axis: Vec<Vec<(usize, f64)>> = grid
                .state
                .axes
                .iter()
                .zip(&mean)
                .zip(&sigma)
                .map(|((axis, &m), &sd)| {
                    if sd > 0.0 {
                        axis_masses(axis, m, sd)
                    } else {
                        axis.locate(m).map(|i| vec![(i, 1.0)]).unwrap_or_default()
                    }
                })
                .collect();
            let mut row: Vec<(usize, f64)> = vec![(0, 1.0)];
            for (axis, masses) in grid.state.axes.iter().zip(&per_axis) {
                let c = axis.cells();
                row = row
                    .iter()
                    .flat_map(|&(idx, p)| masses.iter().map(move |&(i, q)| (idx * c + i, p * q)))
                    .filter(|&(_, p)| p > 0.0)
                    .collect();
            }
            let mass: f64 = row.iter().map(|(_, p)| p).sum();
            if mass > 1.0 + ROW_MASS_TOL || !mass.is_finite() {
                return Err(AbstractionError::RowMassError { row: r, mass });
            }
            if mass > 1.0 {
                row.iter_mut().for_each(|(_, p)| *p /= mass);
            } else if mass < 1.0 {
                row.push((sink, 1.0 - mass));
            }
            Ok(row)
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(assemble(sys, disc, grid, Transitions::Stochastic(rows)))
}

/// Abstract well-posedness: `M` applied to the stacked abstract internal
/// outputs at representative points lands inside the stacked internal-input grids.
pub fn check_abstract_well_posed(ic: &InterconnectionSpec, abstractions: &[FiniteAbstraction]) -> Result<()> {
    let outs: Vec<IntervalBox> = abstractions
        .iter()
        .map(|a| a.grid.state.rep_box().linear_image(&a.c2_tilde))
        .collect();
    let ins: Vec<IntervalBox> = abstractions.iter().map(|a| a.grid.internal.cell_box()).collect();
    let outputs = IntervalBox::stack(&outs);
    let inputs = IntervalBox::stack(&ins);
    if ic.m.shape() != (inputs.dim(), outputs.dim()) {
        return Err(AbstractionError::DimensionMismatch("interconnection versus abstractions".into()));
    }
    match inputs.first_escape(&outputs.linear_image(&ic.m)) {
        Some(dim) => Err(AbstractionError::NotWellPosed { condition: Condition::AbstractWellPosed, dim }),
        None => Ok(()),
    }
}

/// Largest `‖ν̂‖` over the input grid's representative points.
pub fn input_sup_norm(grid: &Grid) -> f64 {
    (0..grid.input.len())
        .map(|u| grid.input.center(u).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{mat, scalar};
    use crate::testing::room;
    use proptest::prelude::*;

    fn room_grid(width: f64, input: Vec<f64>) -> Grid {
        let iw = if input.len() > 1 { input[1] - input[0] } else { 1.0 };
        Grid {
            state: GridSpace::new(vec![Axis::new(20.0, 21.0, width)]),
            input: GridSpace::new(vec![Axis::new(input[0] - iw / 2.0, input[input.len() - 1] + iw / 2.0, iw)]),
            internal: GridSpace::new(vec![Axis::new(40.0, 42.0, 2.0)]),
        }
    }

    #[test]
    fn quantize_examples() {
        let g = GridSpace::new(vec![Axis::new(20.0, 21.0, 0.1)]);
        match g.quantize(&[20.07]) {
            Quantized::Inside { index, rep } => {
                assert_eq!(index, 0);
                assert!((rep[0] - 20.05).abs() < 1e-12);
            }
            Quantized::Outside => panic!(),
        }
        assert!(matches!(g.quantize(&[20.1]), Quantized::Inside { index: 1, .. }));
        assert!(matches!(g.quantize(&[21.0]), Quantized::Inside { index: 9, .. }));
        assert_eq!(g.quantize(&[21.01]), Quantized::Outside);
        assert_eq!(g.quantize(&[19.99]), Quantized::Outside);
        assert_eq!(g.len(), 10);
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta_of(&GridSpace::new(vec![Axis::new(0.0, 1.0, 0.1)])), 0.1);
        let g2 = GridSpace::new(vec![Axis::new(0.0, 1.0, 0.1), Axis::new(0.0, 1.0, 0.1)]);
        assert!((delta_of(&g2) - 0.1 * 2f64.sqrt()).abs() < 1e-15);
        let g3 = GridSpace::new(vec![Axis::new(0.0, 1.0, 0.1), Axis::new(0.0, 1.0, 0.2), Axis::new(0.0, 1.0, 0.5)]);
        assert!((delta_of(&g3) - (0.01f64 + 0.04 + 0.25).sqrt()).abs() < 1e-15);
        assert_eq!(GridSpace::new(vec![]).len(), 1);
    }

    #[test]
    fn multi_index_roundtrip() {
        let g = GridSpace::new(vec![Axis::new(0.0, 3.0, 1.0), Axis::new(0.0, 1.0, 0.25)]);
        for i in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(i)), i);
        }
        assert_eq!(g.multi_index(5), vec![1, 1]);
    }

    #[test]
    fn room_shift_abstraction() {
        let sys = room();
        let disc = DiscretizationSpec::deterministic(&sys, 0.1);
        let grid = room_grid(0.1, vec![-0.1, 0.0, 0.1]);
        let abs = build_deterministic(&sys, &disc, &grid).unwrap();
        assert_eq!((abs.n_states(), abs.n_inputs(), abs.n_internal()), (10, 3, 1));
        // Oracle: exhaustive enumeration of index shifts.
        for s in 0..10usize {
            for (u, shift) in [-1i64, 0, 1].iter().enumerate() {
                let t = s as i64 + shift;
                let expected = if (0..10).contains(&t) { t as usize } else { abs.sink() };
                assert_eq!(abs.successor(s, u, 0), expected, "s={s} u={u}");
            }
        }
        assert!(abs.warnings.is_empty());
    }

    #[test]
    fn zero_input_self_loops_and_internal_independence() {
        let mut sys = room();
        sys.internal_box = IntervalBox::cube(1, 40.0, 42.0);
        let disc = DiscretizationSpec::deterministic(&sys, 0.1);
        let mut grid = room_grid(0.1, vec![0.0]);
        grid.internal = GridSpace::new(vec![Axis::new(40.0, 42.0, 0.5)]);
        let abs = build_deterministic(&sys, &disc, &grid).unwrap();
        for s in 0..abs.n_states() {
            for w in 0..abs.n_internal() {
                assert_eq!(abs.successor(s, 0, w), s);
            }
        }
    }

    #[test]
    fn coarse_input_warns() {
        let sys = room();
        let disc = DiscretizationSpec::deterministic(&sys, 0.1);
        let grid = room_grid(0.1, vec![-2.0, 0.0, 2.0]);
        let abs = build_deterministic(&sys, &disc, &grid).unwrap();
        assert_eq!(abs.warnings.len(), 2);
        assert_eq!(abs.successor(3, 2, 0), abs.sink());
    }

    #[test]
    fn grid_errors() {
        let sys = room();
        let disc = DiscretizationSpec::deterministic(&sys, 0.1);
        let mut grid = room_grid(0.1, vec![0.0]);
        grid.state.axes[0].width = 0.0;
        assert!(matches!(build_deterministic(&sys, &disc, &grid), Err(AbstractionError::InvalidAxis { .. })));
        let mut grid = room_grid(0.1, vec![0.0]);
        grid.state.axes[0].lower = 20.5;
        assert!(matches!(build_deterministic(&sys, &disc, &grid), Err(AbstractionError::DoesNotCover { .. })));
        let mut noisy = disc.clone();
        noisy.r_tilde = scalar(0.1);
        assert_eq!(build_deterministic(&sys, &noisy, &room_grid(0.1, vec![0.0])), Err(AbstractionError::NotDeterministic));
        assert_eq!(build_stochastic(&sys, &disc, &room_grid(0.1, vec![0.0])), Err(AbstractionError::NotStochastic));
    }

    /// Composite Simpson rule on the Gaussian density.
    fn simpson_mass(lo: f64, hi: f64, mean: f64, sigma: f64) -> f64 {
        let n = 2000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| (-(x - mean).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn center_cell_mass() {
        let p = gaussian_interval_mass(-0.05, 0.05, 0.0, 0.1);
        assert!((p - 0.382924922548026).abs() < 1e-12);
        assert!((p - simpson_mass(-0.05, 0.05, 0.0, 0.1)).abs() < 1e-10);
    }

    #[test]
    fn stochastic_rows_match_oracle() {
        let sys = room();
        let mut disc = DiscretizationSpec::deterministic(&sys, 0.1);
        disc.r_tilde = scalar(0.1);
        let grid = room_grid(0.1, vec![-0.1, 0.0, 0.1]);
        let abs = build_stochastic(&sys, &disc, &grid).unwrap();
        for s in 0..abs.n_states() {
            for u in 0..abs.n_inputs() {
                let row = abs.row(s, u, 0);
                let total: f64 = row.iter().map(|(_, p)| p).sum();
                assert!((total - 1.0).abs() < 1e-12);
                let mean = grid.state.center(s)[0] + grid.input.center(u)[0];
                for t in 0..abs.n_states() {
                    let (lo, hi) = grid.state.axes[0].cell_bounds(t);
                    let got = row.iter().find(|(i, _)| *i == t).map_or(0.0, |(_, p)| *p);
                    assert!((got - simpson_mass(lo, hi, mean, 0.1)).abs() < 1e-6);
                }
            }
        }
        let center = abs.row(5, 1, 0);
        let p = center.iter().find(|(i, _)| *i == 5).unwrap().1;
        assert!((p - 0.3829249225480262).abs() < 1e-12);
    }

    #[test]
    fn vanishing_noise_matches_deterministic() {
        let sys = room();
        let det_disc = DiscretizationSpec::deterministic(&sys, 0.1);
        let mut disc = det_disc.clone();
        disc.r_tilde = scalar(1e-12);
        let grid = room_grid(0.1, vec![-0.1, 0.0, 0.1]);
        let det = build_deterministic(&sys, &det_disc, &grid).unwrap();
        let sto = build_stochastic(&sys, &disc, &grid).unwrap();
        for s in 0..det.n_states() {
            for u in 0..det.n_inputs() {
                let row = sto.row(s, u, 0);
                let best = row.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
                assert_eq!(best.0, det.successor(s, u, 0));
                assert!((best.1 - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_diagonal_noise_rejected() {
        let mut sys = room();
        sys.a = Matrix::identity(2, 2) * -1.0;
        sys.b = Matrix::identity(2, 2);
        sys.c1 = Matrix::identity(2, 2);
        sys.c2 = Matrix::zeros(0, 2);
        sys.d = Matrix::zeros(2, 0);
        sys.g = Matrix::zeros(2, 1);
        sys.offset = crate::linalg::Vector::zeros(2);
        sys.state_box = IntervalBox::cube(2, 0.0, 1.0);
        sys.input_box = IntervalBox::cube(2, -1.0, 1.0);
        sys.internal_box = IntervalBox::empty_dim();
        let disc = DiscretizationSpec { tau: 0.1, d_tilde: Matrix::zeros(2, 0), r_tilde: mat(2, 1, &[0.1, 0.1]) };
        let grid = Grid {
            state: GridSpace::uniform(&sys.state_box, 0.25),
            input: GridSpace::uniform(&IntervalBox::cube(2, -0.5, 0.5), 0.5),
            internal: GridSpace::new(vec![]),
        };
        assert_eq!(build_stochastic(&sys, &disc, &grid), Err(AbstractionError::NonDiagonalNoise));
    }

    /// Block-diagonal dynamics with `D̃ = 0`: the network abstraction is the
    /// index product of the subsystem abstractions.
    #[test]
    fn two_room_product() {
        let one = room();
        let disc1 = DiscretizationSpec::deterministic(&one, 0.1);
        let grid1 = room_grid(0.1, vec![-0.1, 0.0, 0.1]);
        let a1 = build_deterministic(&one, &disc1, &grid1).unwrap();

        let mut two = one.clone();
        two.a = Matrix::identity(2, 2) * -0.105;
        two.b = Matrix::identity(2, 2) * 0.5;
        two.c1 = Matrix::identity(2, 2);
        two.c2 = Matrix::identity(2, 2);
        two.d = Matrix::identity(2, 2) * 0.05;
        two.g = Matrix::identity(2, 2) * 0.5;
        two.offset = crate::linalg::Vector::from_element(2, -0.005);
        two.state_box = IntervalBox::cube(2, 20.0, 21.0);
        two.input_box = IntervalBox::cube(2, -100.0, 100.0);
        two.internal_box = IntervalBox::cube(2, 40.0, 42.0);
        let disc2 = DiscretizationSpec::deterministic(&two, 0.1);
        let grid2 = Grid {
            state: GridSpace::new(vec![grid1.state.axes[0]; 2]),
            input: GridSpace::new(vec![grid1.input.axes[0]; 2]),
            internal: GridSpace::new(vec![grid1.internal.axes[0]; 2]),
        };
        let a2 = build_deterministic(&two, &disc2, &grid2).unwrap();
        let (ns, nu) = (a1.n_states(), a1.n_inputs());
        for s1 in 0..ns {
            for s2 in 0..ns {
                for u1 in 0..nu {
                    for u2 in 0..nu {
                        let (t1, t2) = (a1.successor(s1, u1, 0), a1.successor(s2, u2, 0));
                        let expected = if t1 == a1.sink() || t2 == a1.sink() { a2.sink() } else { t1 * ns + t2 };
                        assert_eq!(a2.successor(s1 * ns + s2, u1 * nu + u2, 0), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn abstract_well_posedness() {
        let sys = room();
        let disc = DiscretizationSpec::deterministic(&sys, 0.1);
        let grid = Grid {
            state: GridSpace::new(vec![Axis::new(19.9975, 21.0025, 0.005)]),
            input: GridSpace::new(vec![Axis::new(-1.5e-4, 1.5e-4, 1e-4)]),
            internal: GridSpace::new(vec![Axis::new(40.0, 42.0, 2.0)]),
        };
        assert_eq!(grid.state.len(), 201);
        assert_eq!(grid.input.len(), 3);
        let abs = build_deterministic(&sys, &disc, &grid).unwrap();
        let net = crate::model::Network::new(vec![sys; 3], crate::model::ring_coupling(3), vec![1.0; 3]);
        let abstractions = vec![abs.clone(), abs.clone(), abs];
        assert_eq!(check_abstract_well_posed(&net.interconnection, &abstractions), Ok(()));
        let mut doubled = net.interconnection.clone();
        doubled.m *= 2.0;
        assert!(matches!(
            check_abstract_well_posed(&doubled, &abstractions),
            Err(AbstractionError::NotWellPosed { condition: Condition::AbstractWellPosed, .. })
        ));
    }

    #[test]
    fn header_and_csv() {
        let sys = room();
        let disc = DiscretizationSpec::deterministic(&sys, 0.1);
        let abs = build_deterministic(&sys, &disc, &room_grid(0.1, vec![-0.1, 0.0, 0.1])).unwrap();
        let header = serde_json::to_value(abs.header()).unwrap();
        assert_eq!(header["kind"], "deterministic");
        assert_eq!(header["sink"], 10);
        let mut buf = Vec::new();
        abs.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 31);
        assert!(text.lines().nth(1).unwrap().starts_with("0,0,0,10,"));
    }

    proptest! {
        #[test]
        fn quantization_radius(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            let g = GridSpace::new(vec![Axis::new(0.0, 1.0, 0.1), Axis::new(0.0, 1.0, 0.1)]);
            match g.quantize(&[x, y]) {
                Quantized::Inside { rep, .. } => {
                    let dist = ((rep[0] - x).powi(2) + (rep[1] - y).powi(2)).sqrt();
                    prop_assert!(dist <= 0.5 * delta_of(&g) + 1e-12);
                    prop_assert!(dist <= delta_of(&g));
                }
                Quantized::Outside => prop_assert!(false, "inside point reported outside"),
            }
        }

        #[test]
        fn stochastic_rows_are_distributions(sigma in 0.01f64..1.0, u in 0usize..3) {
            let sys = room();
            let mut disc = DiscretizationSpec::deterministic(&sys, 0.1);
            disc.r_tilde = scalar(sigma);
            let abs = build_stochastic(&sys, &disc, &room_grid(0.1, vec![-0.1, 0.0, 0.1])).unwrap();
            for s in 0..abs.n_states() {
                let row = abs.row(s, u, 0);
                prop_assert!(row.iter().all(|(_, p)| *p >= 0.0));
                prop_assert!((row.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn sink_mass_grows_away_from_center(sigma in 0.05f64..0.5) {
            let sys = room();
            let mut disc = DiscretizationSpec::deterministic(&sys, 0.1);
            disc.r_tilde = scalar(sigma);
            let abs = build_stochastic(&sys, &disc, &room_grid(0.1, vec![0.0])).unwrap();
            let sink_mass = |s: usize| abs.row(s, 0, 0).iter().find(|(t, _)| *t == abs.sink()).map_or(0.0, |(_, p)| *p);
            for s in 5..9 {
                prop_assert!(sink_mass(s + 1) >= sink_mass(s) - 1e-15);
            }
            for s in 1..5 {
                prop_assert!(sink_mass(s - 1) >= sink_mass(s) - 1e-15);
            }
        }
    }
}
