//! Axis-aligned interval boxes and their images under linear maps.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl IntervalBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "box bounds of unequal length");
        Self { lower, upper }
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn empty_dim() -> Self {
        Self::new(Vec::new(), Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// First dimension whose lower bound exceeds its upper bound.
    pub fn first_inverted(&self) -> Option<usize> {
        self.lower
            .iter()
            .zip(&self.upper)
            .position(|(lo, hi)| !(lo <= hi))
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|v| v.is_finite())
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .collect()
    }

    /// Euclidean diameter.
    pub fn diameter(&self) -> f64 {
        self.widths().iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Componentwise `max(|lo|, |hi|)`.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo.abs().max(hi.abs()))
            .collect()
    }

    /// Largest Euclidean norm of any point in the box.
    pub fn max_norm(&self) -> f64 {
        self.magnitudes().iter().map(|m| m * m).sum::<f64>().sqrt()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    /// Returns the first component where `inner` escapes `self`, if any.
    /// A relative slack of `1e-12` absorbs round-off in interval sums.
    pub fn first_escape(&self, inner: &IntervalBox) -> Option<usize> {
        assert_eq!(self.dim(), inner.dim());
        (0..self.dim()).find(|&i| {
            let slack_lo = 1e-12 * (1.0 + self.lower[i].abs());
            let slack_hi = 1e-12 * (1.0 + self.upper[i].abs());
            inner.lower[i] < self.lower[i] - slack_lo || inner.upper[i] > self.upper[i] + slack_hi
        })
    }

    pub fn contains_box(&self, inner: &IntervalBox) -> bool {
        self.first_escape(inner).is_none()
    }

    /// Tight interval enclosure of `{ M x : x in self }`.
    pub fn linear_image(&self, m: &Matrix) -> IntervalBox {
        assert_eq!(m.ncols(), self.dim(), "linear image dimension mismatch");
        let mut lower = vec![0.0; m.nrows()];
        let mut upper = vec![0.0; m.nrows()];
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let c = m[(i, j)];
                if c == 0.0 {
                    continue;
                }
                let (a, b) = (c * self.lower[j], c * self.upper[j]);
                lower[i] += a.min(b);
                upper[i] += a.max(b);
            }
        }
        IntervalBox { lower, upper }
    }

    /// Minkowski difference enclosure `self - other`.
    pub fn minus(&self, other: &IntervalBox) -> IntervalBox {
        assert_eq!(self.dim(), other.dim());
        IntervalBox {
            lower: (0..self.dim()).map(|i| self.lower[i] - other.upper[i]).collect(),
            upper: (0..self.dim()).map(|i| self.upper[i] - other.lower[i]).collect(),
        }
    }

    /// Shrinks every side by `eps`; `None` if the result is empty.
    pub fn contract(&self, eps: f64) -> Option<IntervalBox> {
        let b = IntervalBox {
            lower: self.lower.iter().map(|v| v + eps).collect(),
            upper: self.upper.iter().map(|v| v - eps).collect(),
        };
        b.first_inverted().is_none().then_some(b)
    }

    pub fn stack(boxes: &[IntervalBox]) -> IntervalBox {
        IntervalBox {
            lower: boxes.iter().flat_map(|b| b.lower.iter().copied()).collect(),
            upper: boxes.iter().flat_map(|b| b.upper.iter().copied()).collect(),
        }
    }
}
