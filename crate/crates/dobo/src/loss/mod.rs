//! Loss assembly: weak-form residuals, initial/boundary penalties, DO/BO
//! constraint penalties, the original-equation regularizer, and their
//! weighted total.
//!
//! Two implementations coexist on purpose. [`direct`] evaluates every term
//! pointwise from a [`crate::modal::ModalEval`] — slow, simple, and usable
//! with closed-form components. [`graph`] assembles the same quantities on
//! a gradient tape from batched network evaluations, exploiting the
//! separable structure of the expansion; it is the training path. The two
//! agree to floating-point reassociation error, which the tests pin.

pub mod direct;
pub mod graph;

use serde::{Deserialize, Serialize};

/// Which constraint family the run penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// Dynamically orthogonal: <dU_i/dt, U_j> = 0 plus diagonal E[Y_i dY_i/dt] = 0.
    Do,
    /// Bi-orthogonal: symmetrized spatial and stochastic constraints.
    Bo,
}

impl std::fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConstraintKind::Do => write!(f, "do"),
            ConstraintKind::Bo => write!(f, "bo"),
        }
    }
}

/// Weights of the loss tiers; the defaults follow the reference choice
/// (1, 100, 0.1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the weak-formulation term.
    pub weak: f64,
    /// Weight shared by the IC, BC, constraint, and observation terms.
    pub ic_bc: f64,
    /// Weight of the original-equation regularizer.
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            weak: 1.0,
            ic_bc: 100.0,
            reg: 0.1,
        }
    }
}

/// Per-component loss values and their weighted total.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse_w: f64,
    pub mse_ic: f64,
    pub mse_bc: f64,
    /// The DO or BO constraint penalty, per `kind`.
    pub mse_constraint: f64,
    /// Observation mismatch for inverse runs; zero otherwise.
    pub mse_obs: f64,
    pub mse_0: f64,
    pub total: f64,
    pub kind: ConstraintKind,
    pub weights: LossWeights,
}

impl LossBreakdown {
    /// Weighted total from components:
    /// `w_w mse_w + w_icbc (mse_ic + mse_bc + mse_constraint + mse_obs) + w_reg mse_0`.
    pub fn assemble(
        kind: ConstraintKind,
        weights: LossWeights,
        mse_w: f64,
        mse_ic: f64,
        mse_bc: f64,
        mse_constraint: f64,
        mse_obs: f64,
        mse_0: f64,
    ) -> Self {
        let total = weights.weak * mse_w
            + weights.ic_bc * (mse_ic + mse_bc + mse_constraint + mse_obs)
            + weights.reg * mse_0;
        LossBreakdown {
            mse_w,
            mse_ic,
            mse_bc,
            mse_constraint,
            mse_obs,
            mse_0,
            total,
            kind,
            weights,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// The fixed collocation points of a training run: equidistant spatial grid
/// with trapezoid weights, sorted uniform time samples, and weighted
/// stochastic points.
#[derive(Debug, Clone)]
pub struct TrainingGrid {
    pub x: Vec<f64>,
    pub wx: Vec<f64>,
    pub times: Vec<f64>,
    pub pts: crate::quad::StochasticPoints,
    pub t0: f64,
}

impl TrainingGrid {
    pub fn new(
        x: Vec<f64>,
        times: Vec<f64>,
        pts: crate::quad::StochasticPoints,
        t0: f64,
    ) -> Self {
        let wx = crate::quad::trapezoid_weights(&x);
        TrainingGrid {
            x,
            wx,
            times,
            pts,
            t0,
        }
    }

    pub fn n_x(&self) -> usize {
        self.x.len()
    }

    pub fn n_t(&self) -> usize {
        self.times.len()
    }

    pub fn n_xi(&self) -> usize {
        self.pts.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_weighted_sum() {
        let b = LossBreakdown::assemble(
            ConstraintKind::Bo,
            LossWeights::default(),
            0.0,
            1e-4,
            0.0,
            1e-5,
            0.0,
            0.0,
        );
        approx::assert_abs_diff_eq!(b.total, 1.1e-2, epsilon = 1e-16);
        let b = LossBreakdown::assemble(
            ConstraintKind::Do,
            LossWeights::default(),
            0.1,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
        );
        approx::assert_abs_diff_eq!(b.total, 0.1, epsilon = 1e-16);
        let z = LossBreakdown::assemble(
            ConstraintKind::Do,
            LossWeights::default(),
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
        );
        assert_eq!(z.total, 0.0);
    }
}
