//! Nonlinear diffusion-reaction equation `u_t = a u_xx + b u^2 + f(x;xi)`
//! on [-1, 1] x [0, 1] with homogeneous Dirichlet boundary, deterministic
//! initial data `-sin(pi x)`, and a Gaussian-random-field forcing
//! `f = (1 - x^2) g(x;omega)`, `g ~ GP(1, C)` with a squared-exponential
//! kernel.
//!
//! The forcing is parameterized by the KL expansion of its own covariance
//! `(1-x1^2) C(x1,x2) (1-x2^2)`; with sigma_g = 1 and l_c = 0.1 the leading
//! 19 modes carry 98% of the fluctuation energy, which fixes the stochastic
//! dimension of the forward problem.

use super::{
    BoundaryCondition, BoundaryData, DeterministicIc, InitialCondition, Operator, Params,
    ProblemSpec, StochasticSpec,
};
use crate::error::{Error, Result};
use crate::modal::{kl_decompose_cov, KernelSpec, KlBasis};
use crate::quad::spatial_grid;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;

/// Fixed value or learnable (trainable) physical parameter.
#[derive(Debug, Clone, Copy)]
pub enum ParamSpec {
    Fixed(f64),
    Learnable { init: f64 },
}

impl ParamSpec {
    pub fn init(&self) -> f64 {
        match self {
            ParamSpec::Fixed(v) => *v,
            ParamSpec::Learnable { init } => *init,
        }
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self, ParamSpec::Learnable { .. })
    }
}

/// KL-parameterized random forcing `f(x;xi) = (1-x^2) + sum_k sqrt(lambda_k)
/// phi_k(x) xi_k`, where (lambda_k, phi_k) decompose the forcing covariance.
pub struct DrForcing {
    pub kernel: KernelSpec,
    pub basis: KlBasis,
    pub n_kl: usize,
}

impl DrForcing {
    /// Decomposes the forcing covariance on a 101-point reference grid.
    pub fn build(kernel: KernelSpec, n_kl: usize) -> Result<Self> {
        if n_kl < 1 {
            return Err(Error::config("diffusion forcing needs n_kl >= 1"));
        }
        let grid = spatial_grid(-1.0, 1.0, 101)?;
        let n = grid.len();
        let cov = Array2::from_shape_fn((n, n), |(i, j)| {
            (1.0 - grid[i] * grid[i]) * kernel.eval(grid[i], grid[j]) * (1.0 - grid[j] * grid[j])
        });
        let basis = kl_decompose_cov(&cov, &grid)?;
        if n_kl > basis.n_modes() {
            return Err(Error::config(format!(
                "n_kl = {n_kl} exceeds the {} resolvable modes",
                basis.n_modes()
            )));
        }
        Ok(DrForcing {
            kernel,
            basis,
            n_kl,
        })
    }

    fn cov(&self, x1: f64, x2: f64) -> f64 {
        (1.0 - x1 * x1) * self.kernel.eval(x1, x2) * (1.0 - x2 * x2)
    }

    /// Separable factors of the forcing at the given points: column 0 is the
    /// mean `(1-x^2)`, column k is `sqrt(lambda_k) phi_k(x)` by Nystrom
    /// extension. `f(x; xi) = col0 + sum_k col_k xi_k`.
    pub fn factor_table(&self, xs: &[f64]) -> Array2<f64> {
        let mut table = Array2::zeros((xs.len(), 1 + self.n_kl));
        for (r, &x) in xs.iter().enumerate() {
            table[[r, 0]] = 1.0 - x * x;
        }
        let kfn = |a: f64, b: f64| self.cov(a, b);
        for k in 0..self.n_kl {
            let scale = self.basis.eigenvalues[k].max(0.0).sqrt();
            let phi = self.basis.extend(&kfn, k, xs);
            for (r, &v) in phi.iter().enumerate() {
                table[[r, k + 1]] = scale * v;
            }
        }
        table
    }

    /// Forcing value at one point.
    pub fn value(&self, x: f64, xi: &[f64]) -> f64 {
        let table = self.factor_table(&[x]);
        let mut f = table[[0, 0]];
        for k in 0..self.n_kl {
            f += table[[0, k + 1]] * xi[k];
        }
        f
    }
}

/// The diffusion-reaction benchmark. `a` and `b` may be learnable for
/// inverse runs (the trainer requires observations in that case).
pub fn diffusion_reaction_problem(
    a: ParamSpec,
    b: ParamSpec,
    kernel: KernelSpec,
    n_kl: usize,
) -> Result<ProblemSpec> {
    let forcing = Arc::new(DrForcing::build(kernel, n_kl)?);
    let pi = std::f64::consts::PI;
    let ic = DeterministicIc {
        u0: Arc::new(move |x: f64| -(pi * x).sin()),
        // Orthonormal Dirichlet basis on [-1, 1]: sin(k pi x) has unit norm.
        basis: Arc::new(move |i: usize, x: f64| ((i + 1) as f64 * pi * x).sin()),
        // First-order Hermite chaos: coordinate i of the standard-normal xi.
        chaos: Arc::new(|i: usize, xi: &[f64]| xi[i]),
    };
    Ok(ProblemSpec {
        name: "diffusion-reaction".to_string(),
        x_domain: (-1.0, 1.0),
        t_domain: (0.0, 1.0),
        stoch_dim: n_kl,
        operator: Operator::DiffusionReaction { forcing },
        bc: BoundaryCondition::Dirichlet {
            h: BoundaryData::Zero,
        },
        ic: InitialCondition::Deterministic(ic),
        params: Params {
            names: vec!["a".to_string(), "b".to_string()],
            values: vec![a.init(), b.init()],
            learnable: vec![a.is_learnable(), b.is_learnable()],
        },
        exact: None,
        xi_affine: None,
        default_points: StochasticSpec::McNormal { dim: n_kl },
    })
}

/// Replaces the analytic initial-mean penalty with noisy sensor data:
/// `n_sensors` uniformly placed measurements of `u(x, t0)` perturbed by
/// independent Gaussian noise. The modal components keep the deterministic
/// recipe.
pub fn sensor_ic_variant(
    problem: &ProblemSpec,
    n_sensors: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<ProblemSpec> {
    if n_sensors < 2 {
        return Err(Error::config(format!(
            "need at least 2 sensors, got {n_sensors}"
        )));
    }
    let base = match &problem.ic {
        InitialCondition::Deterministic(ic) => ic.clone(),
        InitialCondition::Sensor { base, .. } => base.clone(),
        InitialCondition::Stochastic { .. } => {
            return Err(Error::config(
                "sensor variant requires a deterministic initial condition".to_string(),
            ))
        }
    };
    let locations = spatial_grid(problem.x_domain.0, problem.x_domain.1, n_sensors)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = locations
        .iter()
        .map(|&x| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            (base.u0)(x) + noise_sd * noise
        })
        .collect();
    let mut out = problem.clone();
    out.name = format!("{}+sensors", problem.name);
    out.ic = InitialCondition::Sensor {
        base,
        locations,
        values,
        noise_sd,
    };
    Ok(out)
}
