//! Error types shared across the solver modules.

use thiserror::Error;

/// Failures of the adaptive two-dimensional quadrature.
#[derive(Error, Debug, Clone)]
pub enum QuadError {
    /// The tilt makes the integral diverge: the log-integrand keeps growing
    /// towards the edge of the scanned region.
    #[error("non-integrable tilt: log-integrand grows outward at radius {radius:.2} (max {boundary_log:.3e} vs interior {interior_log:.3e})")]
    NonIntegrable {
        radius: f64,
        boundary_log: f64,
        interior_log: f64,
    },
    /// The refinement budget was exhausted before the error target was met.
    #[error("quadrature tolerance not met after {cells} cells (worst relative error {worst_rel:.3e})")]
    ToleranceNotMet { cells: usize, worst_rel: f64 },
    /// Invalid parameters (|q| >= 1, g <= 0, ...).
    #[error("invalid quadrature input: {0}")]
    BadInput(String),
}

/// Failures of the Marchenko-Pastur / spectral module.
#[derive(Error, Debug, Clone)]
pub enum MpError {
    #[error("Stieltjes root iteration did not converge at z = {z_re:.6e}+{z_im:.6e}i (last residual {residual:.3e})")]
    NoConvergence { z_re: f64, z_im: f64, residual: f64 },
    #[error("no admissible left-edge Stieltjes value in [{s_lo:.3e}, {s_hi:.3e}] ({detail})")]
    EdgeNotFound { s_lo: f64, s_hi: f64, detail: String },
    #[error("invalid spectral input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

/// Failures of the variational complexity solvers.
#[derive(Error, Debug, Clone)]
pub enum SolveError {
    /// Inner dual objective is unbounded below: the outer point is infeasible.
    #[error("inner minimization diverged at A = {big_a:.6e}, g = {g:.6e}")]
    InnerDiverged { big_a: f64, g: f64 },
    /// Outer ascent line search failed repeatedly; best point is returned by value.
    #[error("outer ascent stalled after {iters} iterations (grad norm {grad_norm:.3e})")]
    OuterStalled { iters: usize, grad_norm: f64 },
    /// The fixed-point iteration for the total complexity ran out of budget.
    #[error("no fixed point after {iters} iterations (last change {last_change:.3e})")]
    NoFixedPoint { iters: usize, last_change: f64 },
    /// Im g dropped to or below zero during the fixed-point iteration.
    #[error("Im g collapsed to {g_im:.3e} at iteration {iter}")]
    ImCollapse { iter: usize, g_im: f64 },
    /// No positive-complexity energy exists at this (q, alpha).
    #[error("empty energy band: max_e complexity = {sigma_free:.6e} <= 0")]
    EmptyBand { sigma_free: f64 },
    /// Operation requires a converged solution.
    #[error("solution did not converge")]
    NotConverged,
    /// Bisection bracket carries no sign change.
    #[error("no sign change over [{lo:.6e}, {hi:.6e}] (f(lo) = {f_lo:.3e}, f(hi) = {f_hi:.3e})")]
    NoSignChange { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    /// d_alpha >= 0 but the outlier fixed point could not be bracketed.
    #[error("no outlier solution below the bulk edge ({detail})")]
    NoSolutionBelowEdge { detail: String },
    #[error("invalid solver input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Mp(#[from] MpError),
}

/// Failures of the gradient-descent simulator.
#[derive(Error, Debug, Clone)]
pub enum GdError {
    #[error("NaN encountered at step {step}")]
    NaNEncountered { step: usize },
    #[error("degenerate orthogonal component during projection at step {step} (norm {norm:.3e})")]
    DegenerateOrth { step: usize, norm: f64 },
    #[error("eigensolver failed: {0}")]
    Eigen(String),
    #[error("invalid simulator input: {0}")]
    BadInput(String),
}
