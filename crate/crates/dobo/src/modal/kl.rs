//! Karhunen-Loeve tools: covariance kernels, the Nystrom-discretized
//! eigenproblem, and Gaussian-random-field sampling.

use crate::error::{Error, Result};
use crate::quad::trapezoid_weights;
use ndarray::{Array1, Array2};

/// Squared-exponential covariance kernel
/// `C(x1, x2) = sigma^2 exp(-(x1-x2)^2 / l_c^2)` with a mean function.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub sigma: f64,
    pub corr_len: f64,
    pub mean: MeanFn,
}

/// Mean function of the random field.
#[derive(Debug, Clone, Copy)]
pub enum MeanFn {
    Constant(f64),
}

impl MeanFn {
    pub fn eval(&self, _x: f64) -> f64 {
        match self {
            MeanFn::Constant(c) => *c,
        }
    }
}

impl KernelSpec {
    pub fn squared_exponential(sigma: f64, corr_len: f64) -> Result<Self> {
        if !(sigma > 0.0 && corr_len > 0.0) {
            return Err(Error::config(format!(
                "kernel needs sigma > 0 and corr_len > 0, got {sigma}, {corr_len}"
            )));
        }
        Ok(KernelSpec {
            sigma,
            corr_len,
            mean: MeanFn::Constant(1.0),
        })
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        let d = (x1 - x2) / self.corr_len;
        self.sigma * self.sigma * (-d * d).exp()
    }

    /// Kernel matrix on a grid.
    pub fn matrix(&self, grid: &[f64]) -> Array2<f64> {
        let n = grid.len();
        Array2::from_shape_fn((n, n), |(i, j)| self.eval(grid[i], grid[j]))
    }
}

/// Eigenpairs of a covariance operator discretized on a grid.
///
/// Eigenvalues are sorted descending; eigenfunctions are orthonormal under
/// the grid's trapezoid inner product.
#[derive(Debug, Clone)]
pub struct KlBasis {
    pub eigenvalues: Vec<f64>,
    /// One eigenfunction per column, sampled on `grid`.
    pub eigenfunctions: Array2<f64>,
    pub grid: Vec<f64>,
}

impl KlBasis {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Smallest K whose leading eigenvalue sum reaches `fraction` of the
    /// total energy.
    pub fn modes_for_energy(&self, fraction: f64) -> usize {
        let total: f64 = self.eigenvalues.iter().sum();
        let mut acc = 0.0;
        for (k, &l) in self.eigenvalues.iter().enumerate() {
            acc += l;
            if acc >= fraction * total {
                return k + 1;
            }
        }
        self.eigenvalues.len()
    }

    /// Nystrom extension of eigenfunction `k` to arbitrary points:
    /// `phi_k(x) = (1/lambda_k) sum_j w_j C(x, x_j) phi_k(x_j)`, where `C`
    /// must be the same covariance the basis was decomposed from. At the
    /// basis grid points this reproduces the stored values exactly.
    pub fn extend(&self, kernel: &dyn Fn(f64, f64) -> f64, k: usize, xs: &[f64]) -> Vec<f64> {
        let w = trapezoid_weights(&self.grid);
        let lam = self.eigenvalues[k];
        xs.iter()
            .map(|&x| {
                let mut s = 0.0;
                for (j, &xj) in self.grid.iter().enumerate() {
                    s += w[j] * kernel(x, xj) * self.eigenfunctions[[j, k]];
                }
                s / lam
            })
            .collect()
    }
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Returns eigenvalues (descending) and the matching eigenvectors as
/// columns. Off-diagonal mass is annihilated to `tol` times the initial
/// Frobenius norm.
pub fn symmetric_eigen(a: &Array2<f64>, tol: f64) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen: square matrix expected");
    let mut m = a.clone();
    let mut v: Array2<f64> = Array2::eye(n);
    let norm0 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= tol * norm0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[[i, i]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (newcol, &oldcol) in order.iter().enumerate() {
        for r in 0..n {
            vectors[[r, newcol]] = v[[r, oldcol]];
        }
    }
    (eigenvalues, vectors)
}

fn kl_from_cov_matrix(cov: &Array2<f64>, grid: &[f64]) -> Result<KlBasis> {
    let n = grid.len();
    if n < 2 {
        return Err(Error::config("KL grid needs at least 2 points"));
    }
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::shape(format!(
            "covariance matrix {}x{} does not match grid of {} points",
            cov.nrows(),
            cov.ncols(),
            n
        )));
    }
    let max_asym = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (cov[[i, j]] - cov[[j, i]]).abs())
        .fold(0.0f64, f64::max);
    if max_asym > 1e-10 {
        return Err(Error::Data(format!(
            "covariance matrix is not symmetric (max asymmetry {max_asym:.3e})"
        )));
    }

    // Nystrom: eigen-decompose B = W^{1/2} C W^{1/2}, then phi = W^{-1/2} v.
    let w = trapezoid_weights(grid);
    let sqrt_w: Vec<f64> = w.iter().map(|&x| x.sqrt()).collect();
    let mut b = cov.clone();
    for i in 0..n {
        for j in 0..n {
            b[[i, j]] *= sqrt_w[i] * sqrt_w[j];
        }
    }
    // Symmetrize rounding residue before the eigensolve.
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (b[[i, j]] + b[[j, i]]);
            b[[i, j]] = avg;
            b[[j, i]] = avg;
        }
    }
    let (eigenvalues, vectors) = symmetric_eigen(&b, 1e-12);
    let mut eigenfunctions = Array2::zeros((n, n));
    for k in 0..n {
        for i in 0..n {
            eigenfunctions[[i, k]] = vectors[[i, k]] / sqrt_w[i];
        }
    }
    Ok(KlBasis {
        eigenvalues,
        eigenfunctions,
        grid: grid.to_vec(),
    })
}

/// KL decomposition of a covariance kernel on a grid.
pub fn kl_decompose_kernel(kernel: &KernelSpec, grid: &[f64]) -> Result<KlBasis> {
    kl_from_cov_matrix(&kernel.matrix(grid), grid)
}

/// KL decomposition of a sampled covariance matrix on a grid.
pub fn kl_decompose_cov(cov: &Array2<f64>, grid: &[f64]) -> Result<KlBasis> {
    kl_from_cov_matrix(cov, grid)
}

/// One realization of the random field: `g = mean + sum_k sqrt(lambda_k)
/// phi_k xi_k` over the retained modes, sampled on the basis grid.
pub fn grf_sample(
    basis: &KlBasis,
    mean_fn: &dyn Fn(f64) -> f64,
    xi: &[f64],
) -> Result<Array1<f64>> {
    if xi.len() > basis.n_modes() {
        return Err(Error::shape(format!(
            "{} coefficients but basis has {} modes",
            xi.len(),
            basis.n_modes()
        )));
    }
    let n = basis.grid.len();
    let mut g = Array1::from_shape_fn(n, |i| mean_fn(basis.grid[i]));
    for (k, &z) in xi.iter().enumerate() {
        let scale = basis.eigenvalues[k].max(0.0).sqrt() * z;
        for i in 0..n {
            g[i] += scale * basis.eigenfunctions[[i, k]];
        }
    }
    Ok(g)
}
