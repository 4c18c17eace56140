//! The benchmark problems as pluggable operator / IC / BC / exact-solution
//! packages.

pub mod advection;
pub mod burgers;
pub mod diffusion;

pub use advection::{advection_problem, AdvectionExact, AdvectionExactQuad};
pub use burgers::{burgers_eigenvalue_crossings, burgers_problem, BurgersExact};
pub use diffusion::{diffusion_reaction_problem, sensor_ic_variant, DrForcing, ParamSpec};

use crate::error::{Error, Result};
use crate::modal::{
    init::initial_components_deterministic, sample_components, InitialComponents, ModalEval,
};
use crate::nn::jet::Jet;
use crate::quad::StochasticPoints;
use std::sync::Arc;

/// The spatial operator `N_x[u]` of the SPDE `du/dt = N_x[u]`.
#[derive(Clone)]
pub enum Operator {
    /// `N_x[u] = 0` (diagnostics: the solution should stay frozen).
    Zero,
    /// `N_x[u] = -xi u_x`.
    Advection,
    /// `N_x[u] = -u u_x + nu u_xx + f(x,t;xi)` with the manufactured forcing.
    Burgers { nu: f64 },
    /// `N_x[u] = a u_xx + b u^2 + f(x;xi)` with a KL-parameterized forcing;
    /// `a`, `b` are params 0 and 1.
    DiffusionReaction { forcing: Arc<DrForcing> },
}

impl Operator {
    /// Whether the operator differentiates twice in space.
    pub fn needs_uxx(&self) -> bool {
        !matches!(self, Operator::Advection | Operator::Zero)
    }

    /// Value of `N_x[u]` at a point, given the solution jet at that point.
    pub fn value(&self, u: &Jet, x: f64, t: f64, xi: &[f64], params: &[f64]) -> f64 {
        match self {
            Operator::Zero => 0.0,
            Operator::Advection => -xi[0] * u.d_dx,
            Operator::Burgers { nu } => {
                -u.value * u.d_dx + nu * u.d2_dx2 + burgers::forcing(*nu, x, t, xi)
            }
            Operator::DiffusionReaction { forcing } => {
                params[0] * u.d2_dx2 + params[1] * u.value * u.value + forcing.value(x, xi)
            }
        }
    }
}

/// Boundary data `h` on the Dirichlet boundary.
#[derive(Clone)]
pub enum BoundaryData {
    Zero,
    Fn(Arc<dyn Fn(f64, f64, &[f64]) -> f64 + Send + Sync>),
}

impl BoundaryData {
    pub fn eval(&self, x_b: f64, t: f64, xi: &[f64]) -> f64 {
        match self {
            BoundaryData::Zero => 0.0,
            BoundaryData::Fn(f) => f(x_b, t, xi),
        }
    }
}

/// Boundary condition of the problem.
#[derive(Clone)]
pub enum BoundaryCondition {
    /// Periodic on a domain of the given length: imposed exactly through the
    /// (sin, cos) input embedding of the spatial networks.
    Periodic { length: f64 },
    /// Dirichlet `u(x_b, t; xi) = h(x_b, t; xi)` on both endpoints.
    Dirichlet { h: BoundaryData },
}

/// Deterministic initial data with the orthonormal bases and unit-variance
/// chaos coefficients that seed the expansion (the scales start at zero).
#[derive(Clone)]
pub struct DeterministicIc {
    pub u0: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Mode `i` of the problem-supplied orthonormal basis at `x`.
    pub basis: Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>,
    /// Chaos coefficient `i` at `xi`.
    pub chaos: Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>,
}

/// Initial condition variants.
#[derive(Clone)]
pub enum InitialCondition {
    Deterministic(DeterministicIc),
    /// Random initial field; components at t0 come from the exact oracle
    /// when one is attached, else from the KL of the sampled field.
    Stochastic {
        u0: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    },
    /// Noisy point measurements replace the mean-field target; the modal
    /// components keep the deterministic recipe.
    Sensor {
        base: DeterministicIc,
        locations: Vec<f64>,
        values: Vec<f64>,
        noise_sd: f64,
    },
}

/// Named physical parameters, each fixed or learnable.
#[derive(Debug, Clone, Default)]
pub struct Params {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub learnable: Vec<bool>,
}

impl Params {
    pub fn any_learnable(&self) -> bool {
        self.learnable.iter().any(|&l| l)
    }
}

/// Closed-form solution data attached to a benchmark problem.
pub trait ExactOracle: ModalEval {
    fn mean(&self, x: f64, t: f64) -> f64;
    fn variance(&self, x: f64, t: f64) -> f64;
    fn solution(&self, x: f64, t: f64, xi: &[f64]) -> f64;
}

/// One mean-value observation for inverse runs.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct Observation {
    pub x: f64,
    pub t: f64,
    pub mean: f64,
}

/// A set of observations; points must lie inside the problem domain.
pub type ObservationSet = Vec<Observation>;

/// How the problem's stochastic training points are generated by default.
#[derive(Debug, Clone)]
pub enum StochasticSpec {
    /// 1-D inverse-CDF Gauss-Legendre points for N(0, sigma^2).
    NormalQuadrature { sigma: f64 },
    /// Tensor product of per-dimension Gauss-Legendre rules on [0, 1].
    UniformTensor { order: usize },
    /// Monte Carlo standard-normal samples in `dim` dimensions.
    McNormal { dim: usize },
}

/// A benchmark problem: operator, boundary and initial data, stochastic
/// parameterization, physical parameters, and (when available) the exact
/// solution package.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub x_domain: (f64, f64),
    pub t_domain: (f64, f64),
    pub stoch_dim: usize,
    pub operator: Operator,
    pub bc: BoundaryCondition,
    pub ic: InitialCondition,
    pub params: Params,
    pub exact: Option<Arc<dyn ExactOracle>>,
    /// Per-dimension affine preprocessing of stochastic inputs fed to the
    /// coefficient network (`input = a xi + b`).
    pub xi_affine: Option<Vec<(f64, f64)>>,
    pub default_points: StochasticSpec,
}

impl ProblemSpec {
    /// Residual `du/dt - N_x[u]` of a modal expansion at one point.
    pub fn residual(&self, ms: &dyn ModalEval, x: f64, t: f64, xi: &[f64]) -> Result<f64> {
        let u = crate::modal::reconstruct_jet(ms, x, t, xi)?;
        Ok(u.d_dt - self.operator.value(&u, x, t, xi, &self.params.values))
    }

    /// Expansion components at the initial time on the given grid/points.
    pub fn initial_components(
        &self,
        grid: &[f64],
        pts: &StochasticPoints,
        n_modes: usize,
    ) -> Result<InitialComponents> {
        match &self.ic {
            InitialCondition::Deterministic(ic) | InitialCondition::Sensor { base: ic, .. } => {
                let basis: Vec<Box<dyn Fn(f64) -> f64 + Send + Sync>> = (0..n_modes)
                    .map(|i| {
                        let b = ic.basis.clone();
                        Box::new(move |x: f64| b(i, x)) as Box<dyn Fn(f64) -> f64 + Send + Sync>
                    })
                    .collect();
                let chaos: Vec<Box<dyn Fn(&[f64]) -> f64 + Send + Sync>> = (0..n_modes)
                    .map(|i| {
                        let c = ic.chaos.clone();
                        Box::new(move |xi: &[f64]| c(i, xi))
                            as Box<dyn Fn(&[f64]) -> f64 + Send + Sync>
                    })
                    .collect();
                initial_components_deterministic(&*ic.u0, &basis, &chaos, grid, pts, n_modes)
            }
            InitialCondition::Stochastic { u0 } => match &self.exact {
                Some(oracle) => {
                    let c = sample_components(oracle.as_ref(), self.t_domain.0, grid, pts);
                    if n_modes > c.scales.len() {
                        return Err(Error::config(format!(
                            "problem provides {} exact modes, {} requested",
                            c.scales.len(),
                            n_modes
                        )));
                    }
                    Ok(InitialComponents {
                        mean: c.mean,
                        modes: c.modes.slice(ndarray::s![.., ..n_modes]).to_owned(),
                        scales: c.scales[..n_modes].to_vec(),
                        coeffs: c.coeffs.slice(ndarray::s![.., ..n_modes]).to_owned(),
                    })
                }
                None => {
                    crate::modal::initial_components_from_field(&**u0, pts, grid, n_modes, None)
                }
            },
        }
    }

    /// Default stochastic training points for this problem.
    pub fn stochastic_points(&self, n: usize, seed: u64) -> Result<StochasticPoints> {
        match &self.default_points {
            StochasticSpec::NormalQuadrature { sigma } => crate::quad::normal_quadrature(n, *sigma),
            StochasticSpec::UniformTensor { order } => {
                let rule = crate::quad::map_rule(&crate::quad::gauss_legendre(*order)?, 0.0, 1.0)?;
                let one = StochasticPoints {
                    points: ndarray::Array2::from_shape_vec(
                        (rule.nodes.len(), 1),
                        rule.nodes.clone(),
                    )
                    .expect("rule nodes"),
                    weights: rule.weights.clone(),
                    kind: crate::quad::PointKind::Quadrature,
                };
                let factors = vec![one; self.stoch_dim];
                crate::quad::tensor_product(&factors)
            }
            StochasticSpec::McNormal { dim } => {
                crate::quad::sample_mc(*dim, n, seed, crate::quad::McDistribution::StandardNormal)
            }
        }
    }

    /// Validates that observation points lie inside the domain.
    pub fn check_observations(&self, obs: &[Observation]) -> Result<()> {
        for o in obs {
            if o.x < self.x_domain.0
                || o.x > self.x_domain.1
                || o.t < self.t_domain.0
                || o.t > self.t_domain.1
            {
                return Err(Error::Data(format!(
                    "observation at (x={}, t={}) lies outside the domain",
                    o.x, o.t
                )));
            }
        }
        Ok(())
    }
}
