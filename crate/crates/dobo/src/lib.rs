//! Modal-space physics-informed neural networks for time-dependent
//! stochastic PDEs.
//!
//! The solution of an SPDE `du/dt = N_x[u(x,t;omega)]` is represented as a
//! generalized Karhunen-Loeve expansion
//!
//! ```text
//! u(x,t;xi) = ubar(x,t) + sum_i a_i(t) u_i(x,t) Y_i(t;xi)
//! ```
//!
//! with `<u_i, u_i> = 1` and `E[Y_i^2] = 1`. Four networks (mean field,
//! scaling factors, spatial modes, stochastic coefficients) are trained
//! jointly against the weak-form residuals of the SPDE plus initial/boundary
//! penalties and either dynamically-orthogonal (DO) or bi-orthogonal (BO)
//! constraint penalties.
//!
//! Crate layout:
//! - [`nn`]: networks, jet propagation, reverse-mode tape, Adam;
//! - [`quad`]: quadrature rules, stochastic points, grids, inner products;
//! - [`modal`]: the modal solution, KL tools, Gaussian random fields;
//! - [`loss`]: the weak-form / IC / BC / DO / BO / regularization losses;
//! - [`problem`]: the benchmark problems (advection, Burgers,
//!   diffusion-reaction) with exact solutions where available;
//! - [`reference`]: Monte Carlo and classical BO reference solvers;
//! - [`train`]: the training loop, time-domain decomposition, inverse
//!   parameter inference, and error metrics;
//! - [`config`]: run configuration files and presets.

pub mod config;
pub mod error;
pub mod loss;
pub mod modal;
pub mod nn;
pub mod problem;
pub mod quad;
pub mod reference;
pub mod train;

pub use error::{Error, Result};

/// Caps worker parallelism when set (e.g. `DOBO_THREADS=1`).
pub const THREADS_ENV_VAR: &str = "DOBO_THREADS";

/// Number of worker threads to use: `DOBO_THREADS` if set, else the number
/// of available cores. Read once and cached.
pub fn worker_threads() -> usize {
    static CACHED: std::sync::OnceLock<usize> = std::sync::OnceLock::new();
    *CACHED.get_or_init(|| {
        std::env::var(THREADS_ENV_VAR)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            })
    })
}
