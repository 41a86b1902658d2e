//! Order-of-accuracy constraints on stencil coefficients.
//!
//! A Taylor expansion of `sum_k c_k u(x + k dx)` turns "accurate to order n"
//! into linear equations `A c = b`. Arbitrary candidate coefficients `c_hat`
//! are moved onto that affine set by the minimum-norm correction
//!
//! ```text
//! c = c_hat + A^T (A A^T)^{-1} (b - A c_hat) = P c_hat + q
//! ```
//!
//! `P` and `q` are computed once per constraint, so inside the network the
//! projection is a fixed affine layer whose backward pass is `P^T = P`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn factorial(m: usize) -> f64 {
    (1..=m).map(|k| k as f64).product()
}

/// Row `m` of the point-value moment system: `k^m / m!` for each offset.
pub fn fdm_moment_row(m: usize, offsets: &[isize]) -> Vec<f64> {
    let f = factorial(m);
    offsets.iter().map(|&k| (k as f64).powi(m as i32) / f).collect()
}

/// Row `m` of the cell-average moment system: the average of `x^m / m!`
/// over cell `k` (unit width, centred on `k`).
pub fn face_moment_row(m: usize, offsets: &[isize]) -> Vec<f64> {
    let f = factorial(m + 1);
    offsets
        .iter()
        .map(|&k| {
            let k = k as f64;
            ((k + 0.5).powi(m as i32 + 1) - (k - 0.5).powi(m as i32 + 1)) / f
        })
        .collect()
}

/// Value of `x^m / m!` at the right face `x = 1/2` of cell 0.
pub fn face_moment_target(m: usize) -> f64 {
    0.5_f64.powi(m as i32) / factorial(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// Point-value stencil for the given derivative (finite differences).
    Derivative(usize),
    /// Cell averages to the right-face point value (finite volumes).
    FaceValue,
}

/// The linear system `A c = b` plus its precomputed projection.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderConstraint {
    pub kind: ConstraintKind,
    pub accuracy_order: usize,
    pub offsets: Vec<isize>,
    /// `m x width`, row-major.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    projector: Vec<f64>,
    shift: Vec<f64>,
}

impl OrderConstraint {
    fn from_rows(
        kind: ConstraintKind,
        accuracy_order: usize,
        offsets: &[isize],
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    ) -> Result<Self> {
        let mut sorted = offsets.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("stencil offsets must be distinct: {offsets:?}")));
        }
        let m = a.len();
        let w = offsets.len();
        let am = DMatrix::from_fn(m, w, |r, c| a[r][c]);
        let gram = &am * am.transpose();
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::invalid("constraint rows are linearly dependent"))?;
        // A^T E with E = (A A^T)^{-1}
        let at_e = chol.solve(&am).transpose();
        let projector = DMatrix::identity(w, w) - &at_e * &am;
        let shift = &at_e * DVector::from_column_slice(&b);
        Ok(Self {
            kind,
            accuracy_order,
            offsets: offsets.to_vec(),
            a,
            b,
            projector: projector.transpose().as_slice().to_vec(),
            shift: shift.as_slice().to_vec(),
        })
    }

    pub fn width(&self) -> usize {
        self.offsets.len()
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    /// Derivative order (0 for face reconstruction).
    pub fn derivative_order(&self) -> usize {
        match self.kind {
            ConstraintKind::Derivative(d) => d,
            ConstraintKind::FaceValue => 0,
        }
    }

    /// Row-major `P = I - A^T (A A^T)^{-1} A`.
    pub fn projector(&self) -> &[f64] {
        &self.projector
    }

    /// `q = A^T (A A^T)^{-1} b`.
    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn project(&self, c_hat: &[f64]) -> Vec<f64> {
        let w = self.width();
        (0..w)
            .map(|r| {
                self.shift[r]
                    + self.projector[r * w..(r + 1) * w]
                        .iter()
                        .zip(c_hat)
                        .map(|(p, c)| p * c)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Writes `P c_hat + q` into `out`.
    #[inline]
    pub fn project_into(&self, c_hat: &[f64], out: &mut [f64]) {
        let w = self.width();
        for (r, o) in out.iter_mut().enumerate().take(w) {
            let row = &self.projector[r * w..(r + 1) * w];
            let mut acc = self.shift[r];
            for (p, c) in row.iter().zip(c_hat) {
                acc += p * c;
            }
            *o = acc;
        }
    }

    /// Pulls a gradient w.r.t. projected coefficients back to `c_hat`.
    #[inline]
    pub fn backward_into(&self, grad_c: &[f64], out: &mut [f64]) {
        let w = self.width();
        for (col, o) in out.iter_mut().enumerate().take(w) {
            let mut acc = 0.0;
            for (r, g) in grad_c.iter().enumerate().take(w) {
                acc += self.projector[r * w + col] * g;
            }
            *o = acc;
        }
    }

    /// Minimum-norm correction `delta_c` with `A (c_hat + delta_c) = b`.
    pub fn correction(&self, c_hat: &[f64]) -> Vec<f64> {
        self.project(c_hat)
            .iter()
            .zip(c_hat)
            .map(|(c, h)| c - h)
            .collect()
    }

    /// Largest violation `max_m |(A c - b)_m|`.
    pub fn residual(&self, c: &[f64]) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, b)| (row.iter().zip(c).map(|(a, c)| a * c).sum::<f64>() - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Moment conditions `sum_k c_k k^m / m! = delta_{m,d}` for `m < d + n`.
pub fn build_constraint_system(
    derivative_order: usize,
    accuracy_order: usize,
    offsets: &[isize],
) -> Result<OrderConstraint> {
    if derivative_order == 0 || accuracy_order == 0 {
        return Err(Error::invalid("derivative and accuracy orders must be >= 1"));
    }
    let m = derivative_order + accuracy_order;
    if m > offsets.len() {
        return Err(Error::invalid(format!(
            "order {accuracy_order} for derivative {derivative_order} needs {m} points, stencil has {}",
            offsets.len()
        )));
    }
    let a = (0..m).map(|r| fdm_moment_row(r, offsets)).collect();
    let b = (0..m).map(|r| if r == derivative_order { 1.0 } else { 0.0 }).collect();
    OrderConstraint::from_rows(
        ConstraintKind::Derivative(derivative_order),
        accuracy_order,
        offsets,
        a,
        b,
    )
}

/// Face reconstruction from cell averages, exact for polynomials of degree
/// below `accuracy_order`.
pub fn face_constraint_system(accuracy_order: usize, offsets: &[isize]) -> Result<OrderConstraint> {
    if accuracy_order == 0 || accuracy_order > offsets.len() {
        return Err(Error::invalid(format!(
            "face accuracy order must be in 1..={}, got {accuracy_order}",
            offsets.len()
        )));
    }
    let a = (0..accuracy_order).map(|r| face_moment_row(r, offsets)).collect();
    let b = (0..accuracy_order).map(face_moment_target).collect();
    OrderConstraint::from_rows(ConstraintKind::FaceValue, accuracy_order, offsets, a, b)
}

pub fn project_coefficients(c_hat: &[f64], oc: &OrderConstraint) -> Result<Vec<f64>> {
    if c_hat.len() != oc.width() {
        return Err(Error::shape(format!(
            "{} coefficients for a {}-point constraint",
            c_hat.len(),
            oc.width()
        )));
    }
    Ok(oc.project(c_hat))
}
