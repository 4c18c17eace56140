//! Pointwise loss evaluation from any [`ModalEval`].
//!
//! Every quantity is computed exactly as defined: the residual tensor entry
//! by entry through jet reconstruction, the weak residuals by explicit
//! quadrature loops, the constraint terms from component jets. This is the
//! reference implementation the fast tape path is validated against, and it
//! is what the exact-solution loss oracle runs on.

use super::{ConstraintKind, LossBreakdown, LossWeights, TrainingGrid};
use crate::error::{Error, Result};
use crate::modal::{reconstruct_jet, InitialComponents, ModalEval};
use crate::problem::{BoundaryCondition, InitialCondition, Observation, ProblemSpec};
use ndarray::{Array2, Array3};

/// The residual field `r(x,t,xi) = du/dt - N_x[u]` on the training tensor,
/// indexed (time, space, stochastic). Identically zero when the expansion
/// solves the SPDE.
pub fn residual_field(
    ms: &dyn ModalEval,
    problem: &ProblemSpec,
    grid: &TrainingGrid,
) -> Result<Array3<f64>> {
    let (nt, nx, nz) = (grid.n_t(), grid.n_x(), grid.n_xi());
    let mut r = Array3::zeros((nt, nx, nz));
    for (s, &t) in grid.times.iter().enumerate() {
        for (k, &x) in grid.x.iter().enumerate() {
            for l in 0..nz {
                let xi: Vec<f64> = grid.pts.points.row(l).to_vec();
                let u = reconstruct_jet(ms, x, t, &xi)?;
                r[[s, k, l]] =
                    u.d_dt - problem.operator.value(&u, x, t, &xi, &problem.params.values);
            }
        }
    }
    Ok(r)
}

/// The three weak-form residual families.
#[derive(Debug, Clone)]
pub struct WeakResiduals {
    /// `E_xi[r]` at each (t, x).
    pub eps1: Array2<f64>,
    /// `<r, U_i>_x` at each (t, mode, xi).
    pub eps2: Array3<f64>,
    /// `E_xi[r Y_i]` at each (t, x, mode).
    pub eps3: Array3<f64>,
}

/// Weak residuals of the expansion against its own modes and coefficients
/// as test functions.
pub fn weak_residuals(
    ms: &dyn ModalEval,
    problem: &ProblemSpec,
    grid: &TrainingGrid,
) -> Result<WeakResiduals> {
    let r = residual_field(ms, problem, grid)?;
    weak_residuals_from_field(ms, &r, grid)
}

/// Weak residuals from a precomputed residual field.
pub fn weak_residuals_from_field(
    ms: &dyn ModalEval,
    r: &Array3<f64>,
    grid: &TrainingGrid,
) -> Result<WeakResiduals> {
    let (nt, nx, nz) = (grid.n_t(), grid.n_x(), grid.n_xi());
    let n = ms.n_modes();
    let wz = &grid.pts.weights;
    let mut eps1 = Array2::zeros((nt, nx));
    let mut eps2 = Array3::zeros((nt, n, nz));
    let mut eps3 = Array3::zeros((nt, nx, n));
    for (s, &t) in grid.times.iter().enumerate() {
        // Component samples at this time.
        let mut modes = Array2::zeros((nx, n));
        for (k, &x) in grid.x.iter().enumerate() {
            let m = ms.modes_jet(x, t);
            for i in 0..n {
                modes[[k, i]] = m[i].value;
            }
        }
        let mut coeffs = Array2::zeros((nz, n));
        for l in 0..nz {
            let xi: Vec<f64> = grid.pts.points.row(l).to_vec();
            let y = ms.coeffs_jet(&xi, t);
            for i in 0..n {
                coeffs[[l, i]] = y[i].value;
            }
        }
        for k in 0..nx {
            for l in 0..nz {
                eps1[[s, k]] += wz[l] * r[[s, k, l]];
                for i in 0..n {
                    eps3[[s, k, i]] += wz[l] * r[[s, k, l]] * coeffs[[l, i]];
                }
            }
        }
        for i in 0..n {
            for l in 0..nz {
                let mut ip = 0.0;
                for k in 0..nx {
                    ip += grid.wx[k] * r[[s, k, l]] * modes[[k, i]];
                }
                eps2[[s, i, l]] = ip;
            }
        }
    }
    Ok(WeakResiduals { eps1, eps2, eps3 })
}

/// MSE of the weak residuals. The mode-indexed families carry an extra 1/N
/// so loss magnitudes stay comparable across truncation orders.
pub fn mse_weak(w: &WeakResiduals) -> f64 {
    let (nt, nx) = (w.eps1.nrows(), w.eps1.ncols());
    let n = w.eps2.shape()[1];
    let nz = w.eps2.shape()[2];
    let s1: f64 = w.eps1.iter().map(|&v| v * v).sum();
    let s2: f64 = w.eps2.iter().map(|&v| v * v).sum();
    let s3: f64 = w.eps3.iter().map(|&v| v * v).sum();
    s1 / (nx * nt) as f64 + s2 / (n * nt * nz) as f64 + s3 / (n * nx * nt) as f64
}

/// Mean-squared mismatch of all four component families at the initial time.
/// For sensor initial data the mean-field term is the data mismatch at the
/// sensor locations instead of the grid mismatch.
pub fn mse_ic(
    ms: &dyn ModalEval,
    targets: &InitialComponents,
    grid: &TrainingGrid,
    sensor: Option<(&[f64], &[f64])>,
) -> f64 {
    let t0 = grid.t0;
    let n = ms.n_modes();
    let (nx, nz) = (grid.n_x(), grid.n_xi());
    let mean_term = match sensor {
        Some((locs, vals)) => {
            let mut s = 0.0;
            for (x, d) in locs.iter().zip(vals) {
                s += (ms.mean_jet(*x, t0).value - d).powi(2);
            }
            s / locs.len() as f64
        }
        None => {
            let mut s = 0.0;
            for (k, &x) in grid.x.iter().enumerate() {
                s += (ms.mean_jet(x, t0).value - targets.mean[k]).powi(2);
            }
            s / nx as f64
        }
    };
    let mut mode_term = 0.0;
    for (k, &x) in grid.x.iter().enumerate() {
        let m = ms.modes_jet(x, t0);
        for i in 0..n {
            mode_term += (m[i].value - targets.modes[[k, i]]).powi(2);
        }
    }
    mode_term /= (n * nx) as f64;
    let a = ms.scales_jet(t0);
    let mut scale_term = 0.0;
    for i in 0..n {
        scale_term += (a[i].value - targets.scales[i]).powi(2);
    }
    scale_term /= n as f64;
    let mut coeff_term = 0.0;
    for l in 0..nz {
        let xi: Vec<f64> = grid.pts.points.row(l).to_vec();
        let y = ms.coeffs_jet(&xi, t0);
        for i in 0..n {
            coeff_term += (y[i].value - targets.coeffs[[l, i]]).powi(2);
        }
    }
    coeff_term /= (n * nz) as f64;
    mean_term + mode_term + scale_term + coeff_term
}

/// Weak-form Dirichlet boundary penalty, summed over the two boundary
/// points. Calling this for a periodic problem is a configuration error:
/// periodicity is built into the input embedding.
pub fn mse_bc(ms: &dyn ModalEval, problem: &ProblemSpec, grid: &TrainingGrid) -> Result<f64> {
    let h = match &problem.bc {
        BoundaryCondition::Periodic { .. } => {
            return Err(Error::config(
                "boundary penalty is not defined for periodic problems: the \
                 embedding imposes periodicity exactly",
            ))
        }
        BoundaryCondition::Dirichlet { h } => h,
    };
    let n = ms.n_modes();
    let nt = grid.n_t();
    let nz = grid.n_xi();
    let wz = &grid.pts.weights;
    let boundary = [problem.x_domain.0, problem.x_domain.1];
    let mut mean_term = 0.0;
    let mut mode_term = 0.0;
    for &t in &grid.times {
        // Covariance and E[h Y_i] need the coefficients at this time.
        let mut coeffs = Array2::zeros((nz, n));
        for l in 0..nz {
            let xi: Vec<f64> = grid.pts.points.row(l).to_vec();
            let y = ms.coeffs_jet(&xi, t);
            for i in 0..n {
                coeffs[[l, i]] = y[i].value;
            }
        }
        let mut cy: Array2<f64> = Array2::zeros((n, n));
        for l in 0..nz {
            for i in 0..n {
                for j in 0..n {
                    cy[[i, j]] += wz[l] * coeffs[[l, i]] * coeffs[[l, j]];
                }
            }
        }
        let a = ms.scales_jet(t);
        for &xb in &boundary {
            let mut eh = 0.0;
            let mut ehy = vec![0.0; n];
            for l in 0..nz {
                let xi: Vec<f64> = grid.pts.points.row(l).to_vec();
                let hv = h.eval(xb, t, &xi);
                eh += wz[l] * hv;
                for i in 0..n {
                    ehy[i] += wz[l] * hv * coeffs[[l, i]];
                }
            }
            mean_term += (ms.mean_jet(xb, t).value - eh).powi(2);
            let modes = ms.modes_jet(xb, t);
            for i in 0..n {
                let mut lhs = 0.0f64;
                for j in 0..n {
                    lhs += cy[[i, j]] * a[j].value * modes[j].value;
                }
                mode_term += (lhs - ehy[i]).powi(2);
            }
        }
    }
    Ok(mean_term / nt as f64 + mode_term / (n * nt) as f64)
}

/// Dynamically-orthogonal constraint penalty: E[Y_i]^2, <dU_i/dt, U_j>^2,
/// and the diagonal E[Y_i dY_i/dt]^2.
pub fn mse_do(ms: &dyn ModalEval, grid: &TrainingGrid) -> f64 {
    constraint_terms(ms, grid, ConstraintKind::Do)
}

/// Bi-orthogonal constraint penalty: E[Y_i]^2 plus the symmetrized spatial
/// and stochastic terms over all (i, j), including i = j.
pub fn mse_bo(ms: &dyn ModalEval, grid: &TrainingGrid) -> f64 {
    constraint_terms(ms, grid, ConstraintKind::Bo)
}

fn constraint_terms(ms: &dyn ModalEval, grid: &TrainingGrid, kind: ConstraintKind) -> f64 {
    let n = ms.n_modes();
    let (nt, nx, nz) = (grid.n_t(), grid.n_x(), grid.n_xi());
    let wz = &grid.pts.weights;
    let mut term1 = 0.0;
    let mut term2 = 0.0;
    let mut term3 = 0.0;
    for &t in &grid.times {
        // Spatial factor: s_ij = <dU_i/dt, U_j>.
        let mut u = Array2::zeros((nx, n));
        let mut ut = Array2::zeros((nx, n));
        for (k, &x) in grid.x.iter().enumerate() {
            let m = ms.modes_jet(x, t);
            for i in 0..n {
                u[[k, i]] = m[i].value;
                ut[[k, i]] = m[i].d_dt;
            }
        }
        let mut s = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let mut ip = 0.0;
                for k in 0..nx {
                    ip += grid.wx[k] * ut[[k, i]] * u[[k, j]];
                }
                s[[i, j]] = ip;
            }
        }
        // Stochastic factors.
        let mut y = Array2::zeros((nz, n));
        let mut yt = Array2::zeros((nz, n));
        for l in 0..nz {
            let xi: Vec<f64> = grid.pts.points.row(l).to_vec();
            let jets = ms.coeffs_jet(&xi, t);
            for i in 0..n {
                y[[l, i]] = jets[i].value;
                yt[[l, i]] = jets[i].d_dt;
            }
        }
        for i in 0..n {
            let mut ey = 0.0;
            for l in 0..nz {
                ey += wz[l] * y[[l, i]];
            }
            term1 += ey * ey;
        }
        match kind {
            ConstraintKind::Do => {
                for i in 0..n {
                    for j in 0..n {
                        term2 += s[[i, j]] * s[[i, j]];
                    }
                    let mut eyy = 0.0;
                    for l in 0..nz {
                        eyy += wz[l] * y[[l, i]] * yt[[l, i]];
                    }
                    term3 += eyy * eyy;
                }
            }
            ConstraintKind::Bo => {
                let mut m = Array2::zeros((n, n));
                for i in 0..n {
                    for j in 0..n {
                        let mut e = 0.0;
                        for l in 0..nz {
                            e += wz[l] * y[[l, i]] * yt[[l, j]];
                        }
                        m[[i, j]] = e;
                    }
                }
                for i in 0..n {
                    for j in 0..n {
                        let sym_s = s[[i, j]] + s[[j, i]];
                        term2 += sym_s * sym_s;
                        let sym_m = m[[i, j]] + m[[j, i]];
                        term3 += sym_m * sym_m;
                    }
                }
            }
        }
    }
    term1 / (n * nt) as f64 + term2 / (n * n * nt) as f64 + term3 / (n * nt) as f64
}

/// Mean square of the residual over the whole training tensor.
pub fn mse_regularization(r: &Array3<f64>) -> f64 {
    let total: f64 = r.iter().map(|&v| v * v).sum();
    total / r.len() as f64
}

/// Mean-squared mismatch of the mean field against observations.
pub fn mse_observations(ms: &dyn ModalEval, obs: &[Observation]) -> f64 {
    if obs.is_empty() {
        return 0.0;
    }
    let s: f64 = obs
        .iter()
        .map(|o| (ms.mean_jet(o.x, o.t).value - o.mean).powi(2))
        .sum();
    s / obs.len() as f64
}

/// Full loss breakdown of an expansion on a problem, pointwise.
pub fn assemble(
    ms: &dyn ModalEval,
    problem: &ProblemSpec,
    grid: &TrainingGrid,
    kind: ConstraintKind,
    weights: LossWeights,
    ic_targets: &InitialComponents,
    observations: &[Observation],
) -> Result<LossBreakdown> {
    let r = residual_field(ms, problem, grid)?;
    let weak = weak_residuals_from_field(ms, &r, grid)?;
    let mse_w = mse_weak(&weak);
    let sensor_data = match &problem.ic {
        InitialCondition::Sensor {
            locations, values, ..
        } => Some((locations.as_slice(), values.as_slice())),
        _ => None,
    };
    let ic = mse_ic(ms, ic_targets, grid, sensor_data);
    let bc = match &problem.bc {
        BoundaryCondition::Periodic { .. } => 0.0,
        BoundaryCondition::Dirichlet { .. } => mse_bc(ms, problem, grid)?,
    };
    let constraint = match kind {
        ConstraintKind::Do => mse_do(ms, grid),
        ConstraintKind::Bo => mse_bo(ms, grid),
    };
    let obs = mse_observations(ms, observations);
    let reg = mse_regularization(&r);
    Ok(LossBreakdown::assemble(
        kind, weights, mse_w, ic, bc, constraint, obs, reg,
    ))
}
