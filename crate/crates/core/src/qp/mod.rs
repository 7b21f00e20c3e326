//! Dense convex QP solver.
//!
//! Problems have the form
//!
//! ```text
//!   min  1/2 x' diag(q) x + c' x
//!   s.t. A x  = b
//!        G x <= h
//! ```
//!
//! solved by operator splitting (ADMM on the `l <= Kx <= u` embedding with a
//! cached Cholesky factorization of the regularized KKT block), followed by
//! an active-set polish step. A solution is reported `Optimal` only after the
//! independent KKT check in [`kkt`] accepts it.

mod chebyshev;
pub mod kkt;
mod osqp;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use chebyshev::{chebyshev_center, ChebyshevCenter};
pub use kkt::{verify_kkt, KktReport};
pub use osqp::{IterTrace, QpSolver};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("Hessian diagonal has a negative entry at {0}")]
    NotConvex(usize),
    #[error("problem is primal infeasible")]
    Infeasible,
    #[error("iteration limit reached after {0} iterations")]
    MaxIter(usize),
    #[error("polytope has empty interior (radius {0:e})")]
    EmptyInterior(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q_diag: DVector<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.n();
        let dim = |what: String| Err(QpError::DimensionMismatch(what));
        if self.q_diag.len() != n {
            return dim(format!("q has {} entries for {} variables", self.q_diag.len(), n));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return dim(format!(
                "equality block is {}x{} with {} right-hand sides",
                self.a_eq.nrows(),
                self.a_eq.ncols(),
                self.b_eq.len()
            ));
        }
        if self.g.ncols() != n || self.g.nrows() != self.h.len() {
            return dim(format!(
                "inequality block is {}x{} with {} right-hand sides",
                self.g.nrows(),
                self.g.ncols(),
                self.h.len()
            ));
        }
        if let Some(k) = self.q_diag.iter().position(|&q| !(q >= 0.0)) {
            return Err(QpError::NotConvex(k));
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(k, &v)| 0.5 * self.q_diag[k] * v * v + self.c[k] * v)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub dual_eq: Vec<f64>,
    pub dual_ineq: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
    pub trace: Vec<IterTrace>,
}

impl QpSolution {
    /// Converts a non-optimal status into the matching error.
    pub fn into_optimal(self) -> Result<Self, QpError> {
        match self.status {
            QpStatus::Optimal => Ok(self),
            QpStatus::Infeasible => Err(QpError::Infeasible),
            QpStatus::MaxIter => Err(QpError::MaxIter(self.iterations)),
        }
    }

    /// Writes the per-iteration residual trace as CSV.
    pub fn write_trace_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "primal_residual", "dual_residual", "rho", "merit"])?;
        for t in &self.trace {
            out.write_record(&[
                t.iteration.to_string(),
                t.primal_residual.to_string(),
                t.dual_residual.to_string(),
                t.rho.to_string(),
                t.merit.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
    /// Absolute bound on the stationarity residual of an accepted solution.
    pub stationarity_tol: f64,
    /// Absolute bound on `max |z_i (h - Gx)_i|` of an accepted solution.
    pub complementarity_tol: f64,
    pub rho: f64,
    pub sigma: f64,
    /// Iterations between step-size adaptations (0 disables).
    pub adaptive_rho_interval: usize,
    pub check_interval: usize,
    /// Window over which the multiplier drift is tested for an
    /// infeasibility certificate.
    pub infeasibility_window: usize,
    pub polish: bool,
    /// Start from the previous solution when the problem structure repeats.
    pub warm_start: bool,
    /// Record residuals every check.
    pub trace: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol_abs: 1e-8,
            tol_rel: 1e-8,
            max_iter: 20_000,
            stationarity_tol: 1e-6,
            complementarity_tol: 1e-6,
            rho: 0.1,
            sigma: 1e-6,
            adaptive_rho_interval: 25,
            check_interval: 5,
            infeasibility_window: 100,
            polish: true,
            warm_start: true,
            trace: false,
        }
    }
}

/// One-shot solve with a fresh solver instance.
pub fn solve(p: &QpProblem, settings: QpSettings) -> Result<QpSolution, QpError> {
    QpSolver::new(settings).solve(p)
}
