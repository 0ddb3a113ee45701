//! Interval vectors and the sign-split matrix algebra used to push boxes
//! through affine maps.
//!
//! For a matrix `X` the split is `X⁺ = max{0, X}`, `X⁻ = X⁺ − X` and
//! `|X| = X⁺ + X⁻`. For `x ∈ [x̲, x̄]` this gives the enclosure
//! `X⁺x̲ − X⁻x̄ ≤ Xx ≤ X⁺x̄ − X⁻x̲`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Crossings smaller than this (relative to the magnitude of the bounds) are
/// treated as solver round-off and collapsed to the midpoint.
pub const CROSSING_TOLERANCE: f64 = 1e-12;

/// Elementwise lower/upper bounds of a real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInterval", into = "RawInterval")]
pub struct IntervalVector {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawInterval {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawInterval> for IntervalVector {
    type Error = Error;

    fn try_from(raw: RawInterval) -> Result<Self> {
        IntervalVector::new(DVector::from_vec(raw.lower), DVector::from_vec(raw.upper))
    }
}

impl From<IntervalVector> for RawInterval {
    fn from(b: IntervalVector) -> Self {
        RawInterval {
            lower: b.lower.iter().copied().collect(),
            upper: b.upper.iter().copied().collect(),
        }
    }
}

impl IntervalVector {
    /// Builds a box, rejecting NaN entries and crossed bounds.
    ///
    /// Bounds crossed by no more than [`CROSSING_TOLERANCE`] (scaled by the
    /// bound magnitude) are clamped to their midpoint.
    pub fn new(mut lower: DVector<f64>, mut upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::invalid(format!(
                "interval bounds have different dimensions ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        for i in 0..lower.len() {
            let (lo, hi) = (lower[i], upper[i]);
            if lo.is_nan() || hi.is_nan() {
                return Err(Error::invalid(format!("NaN bound at index {i}")));
            }
            if lo > hi {
                let scale = 1.0_f64.max(lo.abs()).max(hi.abs());
                if lo - hi > CROSSING_TOLERANCE * scale {
                    return Err(Error::invalid(format!(
                        "lower bound {lo} exceeds upper bound {hi} at index {i}"
                    )));
                }
                let mid = 0.5 * (lo + hi);
                lower[i] = mid;
                upper[i] = mid;
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_slices(lower: &[f64], upper: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(lower), DVector::from_column_slice(upper))
    }

    /// Zero-width box around `point`.
    pub fn point(point: DVector<f64>) -> Self {
        Self { lower: point.clone(), upper: point }
    }

    /// `center ± radius` elementwise.
    pub fn symmetric(center: &DVector<f64>, radius: &DVector<f64>) -> Result<Self> {
        Self::new(center - radius, center + radius)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn width(&self) -> DVector<f64> {
        width(self)
    }

    pub fn midpoint(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn is_degenerate(&self) -> bool {
        self.lower == self.upper
    }

    /// `true` when every component of `x` lies in the box, up to `tol`.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| x[i] >= self.lower[i] - tol && x[i] <= self.upper[i] + tol)
    }

    /// `true` when `self ⊆ other` componentwise, up to `tol`.
    pub fn is_subset_of(&self, other: &IntervalVector, tol: f64) -> bool {
        self.dim() == other.dim()
            && (0..self.dim())
                .all(|i| self.lower[i] >= other.lower[i] - tol && self.upper[i] <= other.upper[i] + tol)
    }

    /// Stacks `self` on top of `other`.
    pub fn concat(&self, other: &IntervalVector) -> IntervalVector {
        let lower = DVector::from_iterator(
            self.dim() + other.dim(),
            self.lower.iter().chain(other.lower.iter()).copied(),
        );
        let upper = DVector::from_iterator(
            self.dim() + other.dim(),
            self.upper.iter().chain(other.upper.iter()).copied(),
        );
        IntervalVector { lower, upper }
    }

    /// Sub-box of the given components.
    pub fn select(&self, indices: &[usize]) -> IntervalVector {
        IntervalVector {
            lower: DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.lower[i])),
            upper: DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.upper[i])),
        }
    }

    /// Component `i` as a `(lower, upper)` pair.
    pub fn component(&self, i: usize) -> (f64, f64) {
        (self.lower[i], self.upper[i])
    }

    /// Minkowski sum of two boxes.
    pub fn add(&self, other: &IntervalVector) -> Result<IntervalVector> {
        if self.dim() != other.dim() {
            return Err(Error::invalid("interval sum dimension mismatch"));
        }
        Ok(IntervalVector {
            lower: &self.lower + &other.lower,
            upper: &self.upper + &other.upper,
        })
    }
}

/// Nonnegative split of a matrix: `pos − neg == X`, `pos + neg == |X|`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSplit {
    pub pos: DMatrix<f64>,
    pub neg: DMatrix<f64>,
    pub abs: DMatrix<f64>,
}

/// Splits `x` into `(X⁺, X⁻, |X|)`.
///
/// Entries are routed by comparison only, so the reconstruction
/// `pos − neg == x` holds bit-for-bit (up to the sign of zero).
pub fn split_matrix(x: &DMatrix<f64>) -> Result<MatrixSplit> {
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite matrix entry {bad}")));
    }
    let pos = x.map(|v| if v > 0.0 { v } else { 0.0 });
    let neg = x.map(|v| if v < 0.0 { -v } else { 0.0 });
    let abs = x.map(|v| if v < 0.0 { -v } else if v > 0.0 { v } else { 0.0 });
    Ok(MatrixSplit { pos, neg, abs })
}

/// Encloses `{ Xx : x ∈ box }` by `[X⁺x̲ − X⁻x̄, X⁺x̄ − X⁻x̲]`.
///
/// Zero coefficients are skipped, so unbounded components of the box only
/// leak into rows that actually read them.
pub fn propagate_affine(x: &DMatrix<f64>, bx: &IntervalVector) -> Result<IntervalVector> {
    if x.ncols() != bx.dim() {
        return Err(Error::invalid(format!(
            "matrix has {} columns but box has dimension {}",
            x.ncols(),
            bx.dim()
        )));
    }
    let mut lower = DVector::zeros(x.nrows());
    let mut upper = DVector::zeros(x.nrows());
    for i in 0..x.nrows() {
        let (mut lo, mut hi) = (0.0, 0.0);
        for j in 0..x.ncols() {
            let a = x[(i, j)];
            if a > 0.0 {
                lo += a * bx.lower[j];
                hi += a * bx.upper[j];
            } else if a < 0.0 {
                lo += a * bx.upper[j];
                hi += a * bx.lower[j];
            }
        }
        lower[i] = lo;
        upper[i] = hi;
    }
    Ok(IntervalVector { lower, upper })
}

/// `upper − lower`.
pub fn width(bx: &IntervalVector) -> DVector<f64> {
    &bx.upper - &bx.lower
}
