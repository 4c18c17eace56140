//! Classical numerical bi-orthogonal solver.
//!
//! The modal system is the closed-form BO evolution: with scaled modes
//! `w_i` (carrying the eigenvalues, `<w_i, w_j> = lambda_i delta_ij`) and
//! orthonormal coefficients `Y_i`,
//!
//! ```text
//! d ubar / dt      = E[N[u]]
//! lambda_i dY_i/dt = -sum_j S_ij Y_j + <N[u] - E[N[u]], w_i>
//! d w_i / dt       = -sum_j M_ij w_j + E[N[u] Y_i]
//! ```
//!
//! where `G_ij = <E[N[u] Y_j], w_i>`, `M_ij = (G_ij + G_ji)/(lambda_j -
//! lambda_i)` off-diagonal (zero on it), and `S_ij = G_ij + lambda_i M_ij`
//! off-diagonal with `S_ii = G_ii`. The closed forms are singular at
//! eigenvalue crossings, which the solver detects and reports as an error —
//! that failure mode is the point of the Burgers benchmark.
//!
//! Deterministic initial data carries no modal structure, so the run
//! bootstraps with a short Monte Carlo stage and initializes the modes from
//! the KL decomposition of the ensemble; stochastic initial data is
//! KL-initialized directly at t0. Time stepping is third-order
//! Adams-Bashforth with an RK4 startup.

use super::{mc::draw_samples, FdOperator};
use crate::error::{Error, Result};
use crate::modal::kl_decompose_cov;
use crate::problem::ProblemSpec;
use crate::quad::{trapezoid_weights, StochasticPoints};
use ndarray::{Array1, Array2};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct BoConfig {
    pub n_modes: usize,
    pub n_x: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Monte Carlo bootstrap horizon for deterministic initial data; use
    /// the initial time itself for stochastic initial data.
    pub bootstrap_t: f64,
    /// Ensemble size carrying the stochastic coefficients.
    pub n_samples: usize,
    pub seed: u64,
    /// Static crossing guard: relative gap below which the closed forms are
    /// treated as singular.
    pub tol_cross_rel: f64,
    pub snapshot_times: Vec<f64>,
}

impl BoConfig {
    pub fn default_tol() -> f64 {
        1e-8
    }
}

/// Modal state at one time: mean, scaled modes (columns), coefficients at
/// the ensemble points, and the eigenvalues `lambda_i = <w_i, w_i>`.
#[derive(Debug, Clone)]
pub struct BoState {
    pub t: f64,
    pub ubar: Array1<f64>,
    pub modes: Array2<f64>,
    pub coeffs: Array2<f64>,
    pub lambdas: Vec<f64>,
}

/// A finished BO run: grid, ensemble, and the recorded snapshots.
pub struct BoRun {
    pub grid: Vec<f64>,
    pub wx: Vec<f64>,
    pub samples: StochasticPoints,
    pub snapshots: Vec<BoState>,
}

impl BoRun {
    pub fn snapshot_at(&self, t: f64) -> &BoState {
        let mut best = 0;
        for (i, s) in self.snapshots.iter().enumerate() {
            if (s.t - t).abs() < (self.snapshots[best].t - t).abs() {
                best = i;
            }
        }
        &self.snapshots[best]
    }

    /// Mean and variance fields of a snapshot: `Var = sum_i w_i(x)^2`
    /// up to the ensemble covariance of the coefficients.
    pub fn stats_at(&self, t: f64) -> (Array1<f64>, Array1<f64>) {
        let s = self.snapshot_at(t);
        let n = s.lambdas.len();
        let n_s = s.coeffs.nrows() as f64;
        let mut cy = Array2::<f64>::zeros((n, n));
        for l in 0..s.coeffs.nrows() {
            for i in 0..n {
                for j in 0..n {
                    cy[[i, j]] += s.coeffs[[l, i]] * s.coeffs[[l, j]] / n_s;
                }
            }
        }
        let mut var = Array1::zeros(s.ubar.len());
        for k in 0..s.ubar.len() {
            let mut v = 0.0;
            for i in 0..n {
                for j in 0..n {
                    v += s.modes[[k, i]] * cy[[i, j]] * s.modes[[k, j]];
                }
            }
            var[k] = v;
        }
        (s.ubar.clone(), var)
    }
}

struct Rhs {
    dubar: Array1<f64>,
    dmodes: Array2<f64>,
    dcoeffs: Array2<f64>,
}

/// Ensemble evaluation of N[u] plus the G matrix and crossing guards.
fn rhs(
    problem: &ProblemSpec,
    fd: &FdOperator,
    wx: &[f64],
    samples: &StochasticPoints,
    state: &BoState,
    dt: f64,
    tol_cross_rel: f64,
) -> Result<Rhs> {
    let n_x = state.ubar.len();
    let n = state.lambdas.len();
    let n_s = state.coeffs.nrows();
    let inv_ns = 1.0 / n_s as f64;

    // Per-sample N[u] accumulated into E[N] and E[N Y_i].
    let chunk = 64usize;
    let ids: Vec<usize> = (0..n_s).collect();
    let mut partials: Vec<(usize, Array1<f64>, Array2<f64>, Array2<f64>)> = ids
        .par_chunks(chunk)
        .enumerate()
        .map(|(ci, chunk_ids)| {
            let mut en = Array1::<f64>::zeros(n_x);
            let mut eny = Array2::<f64>::zeros((n_x, n));
            let mut nvals = Array2::<f64>::zeros((chunk_ids.len(), n_x));
            let mut u = vec![0.0; n_x];
            let mut nv = vec![0.0; n_x];
            for (row, &s) in chunk_ids.iter().enumerate() {
                for k in 0..n_x {
                    let mut v = state.ubar[k];
                    for i in 0..n {
                        v += state.modes[[k, i]] * state.coeffs[[s, i]];
                    }
                    u[k] = v;
                }
                let xi: Vec<f64> = samples.points.row(s).to_vec();
                fd.apply(problem, &u, state.t, &xi, &mut nv);
                for k in 0..n_x {
                    en[k] += nv[k] * inv_ns;
                    nvals[[row, k]] = nv[k];
                    for i in 0..n {
                        eny[[k, i]] += nv[k] * state.coeffs[[s, i]] * inv_ns;
                    }
                }
            }
            (ci, en, eny, nvals)
        })
        .collect();
    partials.sort_by_key(|(ci, ..)| *ci);
    let mut en = Array1::<f64>::zeros(n_x);
    let mut eny = Array2::<f64>::zeros((n_x, n));
    for (_, pen, peny, _) in &partials {
        en += pen;
        eny += peny;
    }

    // G_ij = <E[N Y_j], w_i>.
    let mut g = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n_x {
                acc += wx[k] * eny[[k, j]] * state.modes[[k, i]];
            }
            g[[i, j]] = acc;
        }
    }

    // Crossing guards: the closed forms divide by lambda_j - lambda_i.
    let lmax = state
        .lambdas
        .iter()
        .fold(0.0f64, |m, &l| m.max(l.abs()))
        .max(1e-300);
    for i in 0..n {
        if state.lambdas[i] <= 0.0 {
            return Err(Error::Crossing {
                time: state.t,
                detail: format!("eigenvalue {i} lost positivity ({})", state.lambdas[i]),
            });
        }
        for j in i + 1..n {
            let gap = (state.lambdas[i] - state.lambdas[j]).abs();
            if gap < tol_cross_rel * lmax {
                return Err(Error::Crossing {
                    time: state.t,
                    detail: format!(
                        "eigenvalues {i} and {j} indistinguishable (gap {gap:.3e})"
                    ),
                });
            }
            // d lambda_i / dt = 2 S_ii = 2 G_ii: a gap closing within a few
            // steps is a crossing at the integrator's resolution.
            let rate = 2.0 * (g[[i, i]] - g[[j, j]]).abs();
            if gap < 3.0 * dt * rate {
                return Err(Error::Crossing {
                    time: state.t,
                    detail: format!(
                        "eigenvalues {i} and {j} crossing (gap {gap:.3e}, closing \
                         rate {rate:.3e})"
                    ),
                });
            }
        }
    }

    // Closed forms for M and S.
    let mut m = Array2::<f64>::zeros((n, n));
    let mut s_mat = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                s_mat[[i, i]] = g[[i, i]];
            } else {
                m[[i, j]] = (g[[i, j]] + g[[j, i]]) / (state.lambdas[j] - state.lambdas[i]);
                s_mat[[i, j]] = g[[i, j]] + state.lambdas[i] * m[[i, j]];
            }
        }
    }

    let mut dmodes = Array2::<f64>::zeros((n_x, n));
    for k in 0..n_x {
        for i in 0..n {
            let mut v = eny[[k, i]];
            for j in 0..n {
                v -= m[[i, j]] * state.modes[[k, j]];
            }
            dmodes[[k, i]] = v;
        }
    }
    let dirichlet = matches!(
        problem.bc,
        crate::problem::BoundaryCondition::Dirichlet { .. }
    );
    let mut dubar = en;
    if dirichlet {
        dubar[0] = 0.0;
        dubar[n_x - 1] = 0.0;
        for i in 0..n {
            dmodes[[0, i]] = 0.0;
            dmodes[[n_x - 1, i]] = 0.0;
        }
    }

    // lambda_i dY_i/dt = -sum_j S_ij Y_j + <N - E[N], w_i>.
    let mut dcoeffs = Array2::<f64>::zeros((n_s, n));
    let mut row0 = 0;
    for (_, _, _, nvals) in &partials {
        for row in 0..nvals.nrows() {
            let s = row0 + row;
            for i in 0..n {
                // For homogeneous Dirichlet data N vanishes at the pinned
                // endpoints, so dubar equals the raw E[N] there too.
                let mut proj = 0.0;
                for k in 0..n_x {
                    proj += wx[k] * (nvals[[row, k]] - dubar[k]) * state.modes[[k, i]];
                }
                let mut v = proj;
                for j in 0..n {
                    v -= s_mat[[i, j]] * state.coeffs[[s, j]];
                }
                dcoeffs[[s, i]] = v / state.lambdas[i];
            }
        }
        row0 += nvals.nrows();
    }

    Ok(Rhs {
        dubar,
        dmodes,
        dcoeffs,
    })
}

fn axpy_state(state: &BoState, c: f64, r: &Rhs, t: f64) -> BoState {
    let mut out = state.clone();
    out.t = t;
    out.ubar = &state.ubar + &(c * &r.dubar);
    out.modes = &state.modes + &(c * &r.dmodes);
    out.coeffs = &state.coeffs + &(c * &r.dcoeffs);
    out
}

fn refresh_lambdas(state: &mut BoState, wx: &[f64]) {
    let n = state.lambdas.len();
    for i in 0..n {
        let mut l = 0.0;
        for k in 0..state.ubar.len() {
            l += wx[k] * state.modes[[k, i]] * state.modes[[k, i]];
        }
        state.lambdas[i] = l;
    }
}

/// Ensemble KL initialization of the modal state at time `t`.
fn kl_init(
    fields: &Array2<f64>,
    grid: &[f64],
    wx: &[f64],
    n_modes: usize,
    t: f64,
) -> Result<BoState> {
    let n_s = fields.nrows();
    let n_x = fields.ncols();
    let inv_ns = 1.0 / n_s as f64;
    let mut mean = Array1::<f64>::zeros(n_x);
    for s in 0..n_s {
        for k in 0..n_x {
            mean[k] += fields[[s, k]] * inv_ns;
        }
    }
    let mut cov = Array2::<f64>::zeros((n_x, n_x));
    for s in 0..n_s {
        for i in 0..n_x {
            let di = fields[[s, i]] - mean[i];
            for j in i..n_x {
                cov[[i, j]] += di * (fields[[s, j]] - mean[j]) * inv_ns;
            }
        }
    }
    for i in 0..n_x {
        for j in 0..i {
            cov[[i, j]] = cov[[j, i]];
        }
    }
    let basis = kl_decompose_cov(&cov, grid)?;
    if basis.eigenvalues[n_modes - 1] <= 1e-14 {
        return Err(Error::DegenerateReference(format!(
            "ensemble resolves fewer than {n_modes} modes at t = {t}"
        )));
    }
    let mut modes = Array2::<f64>::zeros((n_x, n_modes));
    let mut coeffs = Array2::<f64>::zeros((n_s, n_modes));
    let mut lambdas = vec![0.0; n_modes];
    for i in 0..n_modes {
        let li = basis.eigenvalues[i];
        lambdas[i] = li;
        let scale = li.sqrt();
        for k in 0..n_x {
            modes[[k, i]] = scale * basis.eigenfunctions[[k, i]];
        }
        for s in 0..n_s {
            let mut proj = 0.0;
            for k in 0..n_x {
                proj += wx[k] * (fields[[s, k]] - mean[k]) * basis.eigenfunctions[[k, i]];
            }
            coeffs[[s, i]] = proj / scale;
        }
    }
    Ok(BoState {
        t,
        ubar: mean,
        modes,
        coeffs,
        lambdas,
    })
}

/// Integrates the classical BO system. Fails with a crossing error when two
/// eigenvalues become numerically indistinguishable or are about to cross.
pub fn bo_classical_solve(problem: &ProblemSpec, cfg: &BoConfig) -> Result<BoRun> {
    if cfg.n_modes < 1 {
        return Err(Error::config("BO needs at least one mode"));
    }
    let fd = FdOperator::new(problem, cfg.n_x)?;
    let wx = trapezoid_weights(&fd.grid);
    let samples = draw_samples(problem, cfg.n_samples, cfg.seed)?;
    let t0 = problem.t_domain.0;

    // Bootstrap ensemble to the KL initialization time.
    let mut fields = Array2::<f64>::zeros((cfg.n_samples, fd.n_x()));
    let boot_steps = ((cfg.bootstrap_t - t0) / cfg.dt).round().max(0.0) as usize;
    let rows: Vec<Array1<f64>> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|s| {
            let xi: Vec<f64> = samples.points.row(s).to_vec();
            let mut u = fd.initial_field(problem, &xi);
            let mut scratch = [
                Array1::zeros(fd.n_x()),
                Array1::zeros(fd.n_x()),
                Array1::zeros(fd.n_x()),
                Array1::zeros(fd.n_x()),
                Array1::zeros(fd.n_x()),
            ];
            for step in 0..boot_steps {
                fd.rk4_step(problem, &mut u, t0 + step as f64 * cfg.dt, cfg.dt, &xi, &mut scratch);
            }
            u
        })
        .collect();
    for (s, row) in rows.into_iter().enumerate() {
        fields.row_mut(s).assign(&row);
    }
    let boot_t = t0 + boot_steps as f64 * cfg.dt;
    let mut state = kl_init(&fields, &fd.grid, &wx, cfg.n_modes, boot_t)?;

    let mut snapshots = vec![state.clone()];
    let mut want: Vec<f64> = cfg
        .snapshot_times
        .iter()
        .copied()
        .filter(|&t| t > boot_t && t <= cfg.t_end + 1e-12)
        .collect();
    want.sort_by(|a, b| a.partial_cmp(b).unwrap());
    want.push(cfg.t_end);

    let n_steps = ((cfg.t_end - boot_t) / cfg.dt).round() as usize;
    let mut history: Vec<Rhs> = Vec::with_capacity(3);
    let mut next_want = 0;
    for step in 0..n_steps {
        let t = boot_t + step as f64 * cfg.dt;
        state.t = t;
        refresh_lambdas(&mut state, &wx);
        let f_n = rhs(problem, &fd, &wx, &samples, &state, cfg.dt, cfg.tol_cross_rel)?;
        let t_next = boot_t + (step + 1) as f64 * cfg.dt;
        if history.len() < 2 {
            // RK4 startup.
            let k1 = f_n;
            let s2 = axpy_state(&state, 0.5 * cfg.dt, &k1, t + 0.5 * cfg.dt);
            let k2 = rhs(problem, &fd, &wx, &samples, &s2, cfg.dt, cfg.tol_cross_rel)?;
            let s3 = axpy_state(&state, 0.5 * cfg.dt, &k2, t + 0.5 * cfg.dt);
            let k3 = rhs(problem, &fd, &wx, &samples, &s3, cfg.dt, cfg.tol_cross_rel)?;
            let s4 = axpy_state(&state, cfg.dt, &k3, t + cfg.dt);
            let k4 = rhs(problem, &fd, &wx, &samples, &s4, cfg.dt, cfg.tol_cross_rel)?;
            state.ubar = &state.ubar
                + &((cfg.dt / 6.0) * (&k1.dubar + &(2.0 * &k2.dubar) + &(2.0 * &k3.dubar) + &k4.dubar));
            state.modes = &state.modes
                + &((cfg.dt / 6.0)
                    * (&k1.dmodes + &(2.0 * &k2.dmodes) + &(2.0 * &k3.dmodes) + &k4.dmodes));
            state.coeffs = &state.coeffs
                + &((cfg.dt / 6.0)
                    * (&k1.dcoeffs + &(2.0 * &k2.dcoeffs) + &(2.0 * &k3.dcoeffs) + &k4.dcoeffs));
            history.push(k1);
        } else {
            // AB3: y_{n+1} = y_n + dt (23 f_n - 16 f_{n-1} + 5 f_{n-2}) / 12.
            let f1 = &history[history.len() - 1];
            let f2 = &history[history.len() - 2];
            let c = cfg.dt / 12.0;
            state.ubar = &state.ubar
                + &(c * (23.0 * &f_n.dubar - 16.0 * &f1.dubar + 5.0 * &f2.dubar));
            state.modes = &state.modes
                + &(c * (23.0 * &f_n.dmodes - 16.0 * &f1.dmodes + 5.0 * &f2.dmodes));
            state.coeffs = &state.coeffs
                + &(c * (23.0 * &f_n.dcoeffs - 16.0 * &f1.dcoeffs + 5.0 * &f2.dcoeffs));
            history.push(f_n);
            if history.len() > 3 {
                history.remove(0);
            }
        }
        state.t = t_next;
        for v in state.ubar.iter().chain(state.modes.iter()) {
            if !v.is_finite() {
                return Err(Error::Divergence {
                    context: "bo_classical_solve".into(),
                    detail: format!("non-finite state at t = {t_next}"),
                });
            }
        }
        refresh_lambdas(&mut state, &wx);
        while next_want < want.len() && t_next + 0.5 * cfg.dt >= want[next_want] {
            snapshots.push(state.clone());
            next_want += 1;
        }
    }
    if snapshots.last().map(|s| s.t) != Some(state.t) {
        snapshots.push(state.clone());
    }
    Ok(BoRun {
        grid: fd.grid.clone(),
        wx,
        samples,
        snapshots,
    })
}

/// The (G, M, S) matrices of a state under the closed forms; errors on an
/// eigenvalue crossing.
pub fn compute_g_m_s(
    state: &BoState,
    problem: &ProblemSpec,
    grid: &[f64],
    samples: &StochasticPoints,
    tol_cross_rel: f64,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let fd = FdOperator::new(problem, grid.len())?;
    let wx = trapezoid_weights(grid);
    let n = state.lambdas.len();
    let n_x = grid.len();
    let n_s = state.coeffs.nrows();
    let inv_ns = 1.0 / n_s as f64;
    let mut eny = Array2::<f64>::zeros((n_x, n));
    let mut u = vec![0.0; n_x];
    let mut nv = vec![0.0; n_x];
    for s in 0..n_s {
        for k in 0..n_x {
            let mut v = state.ubar[k];
            for i in 0..n {
                v += state.modes[[k, i]] * state.coeffs[[s, i]];
            }
            u[k] = v;
        }
        let xi: Vec<f64> = samples.points.row(s).to_vec();
        fd.apply(problem, &u, state.t, &xi, &mut nv);
        for k in 0..n_x {
            for i in 0..n {
                eny[[k, i]] += nv[k] * state.coeffs[[s, i]] * inv_ns;
            }
        }
    }
    let mut g = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n_x {
                acc += wx[k] * eny[[k, j]] * state.modes[[k, i]];
            }
            g[[i, j]] = acc;
        }
    }
    let lmax = state.lambdas.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let mut m = Array2::<f64>::zeros((n, n));
    let mut s_mat = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                s_mat[[i, i]] = g[[i, i]];
                continue;
            }
            let gap = (state.lambdas[j] - state.lambdas[i]).abs();
            if gap < tol_cross_rel * lmax {
                return Err(Error::Crossing {
                    time: state.t,
                    detail: format!("eigenvalues {i} and {j} indistinguishable"),
                });
            }
            m[[i, j]] = (g[[i, j]] + g[[j, i]]) / (state.lambdas[j] - state.lambdas[i]);
            s_mat[[i, j]] = g[[i, j]] + state.lambdas[i] * m[[i, j]];
        }
    }
    Ok((g, m, s_mat))
}
