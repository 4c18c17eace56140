//! Monte Carlo reference solver: per-realization RK4 time stepping on a
//! finite-difference grid, streaming mean/variance statistics at snapshot
//! times.

use super::FdOperator;
use crate::error::{Error, Result};
use crate::problem::{Operator, ProblemSpec, StochasticSpec};
use crate::quad::StochasticPoints;
use ndarray::{Array1, Array2};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct McConfig {
    pub n_samples: usize,
    pub n_x: usize,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// Times at which mean/variance fields are recorded (t_end is always
    /// included).
    pub snapshot_times: Vec<f64>,
}

/// Ensemble statistics on the (snapshot, x) grid; variance uses the
/// unbiased 1/(n-1) estimator.
#[derive(Debug, Clone)]
pub struct McStats {
    pub grid: Vec<f64>,
    pub times: Vec<f64>,
    pub mean: Array2<f64>,
    pub variance: Array2<f64>,
    pub n_samples: usize,
}

impl McStats {
    /// Index of the snapshot closest to `t`.
    pub fn snapshot_at(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &ti) in self.times.iter().enumerate() {
            if (ti - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

fn stability_check(problem: &ProblemSpec, dt: f64, dx: f64, pts: &StochasticPoints) -> Result<()> {
    match &problem.operator {
        Operator::Zero => {}
        Operator::DiffusionReaction { .. } => {
            let a = problem.params.values[0].abs();
            let bound = 0.4 * dx * dx / a.max(1e-12);
            if dt > bound {
                return Err(Error::config(format!(
                    "dt = {dt} violates the diffusion stability bound {bound:.3e} \
                     (0.4 dx^2 / a)"
                )));
            }
        }
        Operator::Advection => {
            let max_speed = pts
                .points
                .column(0)
                .iter()
                .fold(0.0f64, |m, &v| m.max(v.abs()));
            let bound = dx / max_speed.max(1e-12);
            if dt > bound {
                return Err(Error::config(format!(
                    "dt = {dt} violates the advective CFL bound {bound:.3e}"
                )));
            }
        }
        Operator::Burgers { nu } => {
            let bound = (0.4 * dx * dx / nu.max(1e-12)).min(0.25 * dx);
            if dt > bound {
                return Err(Error::config(format!(
                    "dt = {dt} violates the Burgers stability bound {bound:.3e}"
                )));
            }
        }
    }
    Ok(())
}

/// Draws the realization parameters for the problem's stochastic model.
pub fn draw_samples(problem: &ProblemSpec, n: usize, seed: u64) -> Result<StochasticPoints> {
    match &problem.default_points {
        StochasticSpec::NormalQuadrature { sigma } => {
            let mut pts =
                crate::quad::sample_mc(1, n, seed, crate::quad::McDistribution::StandardNormal)?;
            pts.points.mapv_inplace(|v| v * sigma);
            Ok(pts)
        }
        StochasticSpec::UniformTensor { .. } => {
            crate::quad::sample_mc(problem.stoch_dim, n, seed, crate::quad::McDistribution::Uniform01)
        }
        StochasticSpec::McNormal { dim } => {
            crate::quad::sample_mc(*dim, n, seed, crate::quad::McDistribution::StandardNormal)
        }
    }
}

/// Integrates every realization and accumulates snapshot statistics.
pub fn mc_solve(problem: &ProblemSpec, cfg: &McConfig) -> Result<McStats> {
    if cfg.n_samples < 2 {
        return Err(Error::config("Monte Carlo needs at least 2 samples"));
    }
    let fd = FdOperator::new(problem, cfg.n_x)?;
    let samples = draw_samples(problem, cfg.n_samples, cfg.seed)?;
    stability_check(problem, cfg.dt, fd.grid[1] - fd.grid[0], &samples)?;

    let t0 = problem.t_domain.0;
    let mut times: Vec<f64> = cfg
        .snapshot_times
        .iter()
        .copied()
        .filter(|&t| t >= t0 && t <= cfg.t_end + 1e-12)
        .collect();
    if times.last().map(|&t| (t - cfg.t_end).abs() > 1e-12) != Some(false) {
        times.push(cfg.t_end);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Snap to whole steps.
    let steps: Vec<usize> = times
        .iter()
        .map(|&t| ((t - t0) / cfg.dt).round() as usize)
        .collect();
    let n_steps = *steps.last().unwrap();
    let exact_times: Vec<f64> = steps.iter().map(|&s| t0 + s as f64 * cfg.dt).collect();

    let n_x = fd.n_x();
    let n_snap = exact_times.len();

    // Each realization produces its snapshot trajectory; statistics are
    // reduced in fixed chunk order for determinism.
    let chunk = 16usize;
    let sample_ids: Vec<usize> = (0..cfg.n_samples).collect();
    let mut sum = Array2::<f64>::zeros((n_snap, n_x));
    let mut sumsq = Array2::<f64>::zeros((n_snap, n_x));
    let results: Result<Vec<(usize, Array2<f64>, Array2<f64>)>> = sample_ids
        .par_chunks(chunk)
        .enumerate()
        .map(|(ci, ids)| {
            let mut csum = Array2::<f64>::zeros((n_snap, n_x));
            let mut csumsq = Array2::<f64>::zeros((n_snap, n_x));
            let mut scratch = [
                Array1::zeros(n_x),
                Array1::zeros(n_x),
                Array1::zeros(n_x),
                Array1::zeros(n_x),
                Array1::zeros(n_x),
            ];
            for &s in ids {
                let xi: Vec<f64> = samples.points.row(s).to_vec();
                let mut u = fd.initial_field(problem, &xi);
                let mut snap = 0;
                for step in 0..=n_steps {
                    if snap < steps.len() && step == steps[snap] {
                        for k in 0..n_x {
                            let v = u[k];
                            if !v.is_finite() {
                                return Err(Error::Divergence {
                                    context: "mc_solve".into(),
                                    detail: format!(
                                        "non-finite value in sample {s} at t = {}",
                                        t0 + step as f64 * cfg.dt
                                    ),
                                });
                            }
                            csum[[snap, k]] += v;
                            csumsq[[snap, k]] += v * v;
                        }
                        snap += 1;
                    }
                    if step < n_steps {
                        let t = t0 + step as f64 * cfg.dt;
                        fd.rk4_step(problem, &mut u, t, cfg.dt, &xi, &mut scratch);
                    }
                }
            }
            Ok((ci, csum, csumsq))
        })
        .collect();
    let mut results = results?;
    results.sort_by_key(|(ci, _, _)| *ci);
    for (_, csum, csumsq) in results {
        sum += &csum;
        sumsq += &csumsq;
    }

    let n = cfg.n_samples as f64;
    let mean = &sum / n;
    let mut variance = Array2::zeros((n_snap, n_x));
    for i in 0..n_snap {
        for k in 0..n_x {
            variance[[i, k]] = (sumsq[[i, k]] - sum[[i, k]] * sum[[i, k]] / n) / (n - 1.0);
        }
    }
    Ok(McStats {
        grid: fd.grid.clone(),
        times: exact_times,
        mean,
        variance,
        n_samples: cfg.n_samples,
    })
}
