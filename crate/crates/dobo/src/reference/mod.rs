//! Independent reference solvers: Monte Carlo finite differences and the
//! classical bi-orthogonal modal integrator.
//!
//! Both discretize space with second-order central differences on an
//! equidistant grid (periodic wrap or pinned Dirichlet endpoints) and are
//! used to validate the trained networks and to generate reference modal
//! components.

pub mod bo;
pub mod mc;
pub mod tables;

pub use bo::{bo_classical_solve, compute_g_m_s, BoConfig, BoRun, BoState};
pub use mc::{mc_solve, McConfig, McStats};

use crate::problem::{BoundaryCondition, Operator, ProblemSpec};
use ndarray::{Array1, Array2};

/// Spatial discretization of `N_x[u]` for the reference solvers.
pub(crate) struct FdOperator {
    pub grid: Vec<f64>,
    dx: f64,
    periodic: bool,
    /// Forcing factor table (n_x rows) for separable forcings; layout per
    /// operator kind.
    forcing_table: Option<Array2<f64>>,
}

impl FdOperator {
    pub fn new(problem: &ProblemSpec, n_x: usize) -> crate::error::Result<Self> {
        let grid = crate::quad::spatial_grid(problem.x_domain.0, problem.x_domain.1, n_x)?;
        let dx = grid[1] - grid[0];
        let periodic = matches!(problem.bc, BoundaryCondition::Periodic { .. });
        let forcing_table = match &problem.operator {
            Operator::DiffusionReaction { forcing } => Some(forcing.factor_table(&grid)),
            _ => None,
        };
        Ok(FdOperator {
            grid,
            dx,
            periodic,
            forcing_table,
        })
    }

    pub fn n_x(&self) -> usize {
        self.grid.len()
    }

    /// Central first derivative. Periodic domains identify the endpoints
    /// (`u[0] == u[n-1]`), so the wrap skips the duplicate point.
    fn d1(&self, u: &[f64], k: usize) -> f64 {
        let n = u.len();
        if self.periodic {
            let prev = if k == 0 { n - 2 } else { k - 1 };
            let next = if k >= n - 1 { 1 } else { k + 1 };
            (u[next] - u[prev]) / (2.0 * self.dx)
        } else {
            if k == 0 || k == n - 1 {
                return 0.0;
            }
            (u[k + 1] - u[k - 1]) / (2.0 * self.dx)
        }
    }

    /// Standard 3-point second derivative with the same wrapping rules.
    fn d2(&self, u: &[f64], k: usize) -> f64 {
        let n = u.len();
        if self.periodic {
            let prev = if k == 0 { n - 2 } else { k - 1 };
            let next = if k >= n - 1 { 1 } else { k + 1 };
            (u[next] - 2.0 * u[k] + u[prev]) / (self.dx * self.dx)
        } else {
            if k == 0 || k == n - 1 {
                return 0.0;
            }
            (u[k + 1] - 2.0 * u[k] + u[k - 1]) / (self.dx * self.dx)
        }
    }

    /// `N_x[u]` on the whole grid for one stochastic realization.
    pub fn apply(
        &self,
        problem: &ProblemSpec,
        u: &[f64],
        t: f64,
        xi: &[f64],
        out: &mut [f64],
    ) {
        let n = u.len();
        match &problem.operator {
            Operator::Zero => {
                out.fill(0.0);
            }
            Operator::Advection => {
                for k in 0..n {
                    out[k] = -xi[0] * self.d1(u, k);
                }
            }
            Operator::Burgers { nu } => {
                for k in 0..n {
                    out[k] = -u[k] * self.d1(u, k) + nu * self.d2(u, k)
                        + crate::problem::burgers::forcing(*nu, self.grid[k], t, xi);
                }
            }
            Operator::DiffusionReaction { .. } => {
                let a = problem.params.values[0];
                let b = problem.params.values[1];
                let table = self.forcing_table.as_ref().expect("forcing table");
                for k in 0..n {
                    let mut f = table[[k, 0]];
                    for (m, &z) in xi.iter().enumerate() {
                        f += table[[k, m + 1]] * z;
                    }
                    out[k] = a * self.d2(u, k) + b * u[k] * u[k] + f;
                }
            }
        }
        if !self.periodic {
            out[0] = 0.0;
            out[n - 1] = 0.0;
        }
    }

    /// Initial field for one realization, with Dirichlet endpoints pinned.
    pub fn initial_field(&self, problem: &ProblemSpec, xi: &[f64]) -> Array1<f64> {
        let mut u = Array1::zeros(self.n_x());
        match &problem.ic {
            crate::problem::InitialCondition::Deterministic(ic)
            | crate::problem::InitialCondition::Sensor { base: ic, .. } => {
                for (k, &x) in self.grid.iter().enumerate() {
                    u[k] = (ic.u0)(x);
                }
            }
            crate::problem::InitialCondition::Stochastic { u0 } => {
                for (k, &x) in self.grid.iter().enumerate() {
                    u[k] = u0(x, xi);
                }
            }
        }
        u
    }

    /// One classical RK4 step of `du/dt = N_x[u]` for one realization.
    pub fn rk4_step(
        &self,
        problem: &ProblemSpec,
        u: &mut Array1<f64>,
        t: f64,
        dt: f64,
        xi: &[f64],
        scratch: &mut [Array1<f64>; 5],
    ) {
        let n = u.len();
        let [k1, k2, k3, k4, tmp] = scratch;
        self.apply(problem, u.as_slice().unwrap(), t, xi, k1.as_slice_mut().unwrap());
        for k in 0..n {
            tmp[k] = u[k] + 0.5 * dt * k1[k];
        }
        self.apply(
            problem,
            tmp.as_slice().unwrap(),
            t + 0.5 * dt,
            xi,
            k2.as_slice_mut().unwrap(),
        );
        for k in 0..n {
            tmp[k] = u[k] + 0.5 * dt * k2[k];
        }
        self.apply(
            problem,
            tmp.as_slice().unwrap(),
            t + 0.5 * dt,
            xi,
            k3.as_slice_mut().unwrap(),
        );
        for k in 0..n {
            tmp[k] = u[k] + dt * k3[k];
        }
        self.apply(
            problem,
            tmp.as_slice().unwrap(),
            t + dt,
            xi,
            k4.as_slice_mut().unwrap(),
        );
        for k in 0..n {
            u[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
        if !self.periodic {
            u[0] = 0.0;
            u[n - 1] = 0.0;
        }
    }
}
