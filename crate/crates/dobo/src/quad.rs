//! Deterministic integration and sampling.
//!
//! Provides Gauss-Legendre rules, stochastic collocation points built by
//! pushing Gauss-Legendre nodes through the inverse normal CDF, equidistant
//! spatial grids with trapezoid weights, spatial inner products, expectations
//! against weighted point sets, tensor-product rules, and seeded Monte Carlo
//! sampling. Everything here is a pure function of its inputs.

use crate::error::{Error, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A one-dimensional quadrature rule on an interval.
#[derive(Debug, Clone)]
pub struct QuadRule {
    /// Strictly increasing abscissae inside the domain.
    pub nodes: Vec<f64>,
    /// Positive weights; they sum to the domain length.
    pub weights: Vec<f64>,
    /// Closed interval the rule integrates over.
    pub domain: (f64, f64),
}

/// How a stochastic point set was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Quadrature,
    MonteCarlo,
}

/// A weighted set of points in d-dimensional stochastic space.
///
/// Weights are nonnegative and sum to one, so `expectation` is a convex
/// combination: a quadrature rule for E[f(xi)] or a sample mean.
#[derive(Debug, Clone)]
pub struct StochasticPoints {
    /// Realizations, one row per point (n x d).
    pub points: Array2<f64>,
    /// Nonnegative weights summing to 1.
    pub weights: Vec<f64>,
    pub kind: PointKind,
}

impl StochasticPoints {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Values of the single stochastic coordinate, for 1-D point sets.
    pub fn column(&self, d: usize) -> Vec<f64> {
        self.points.column(d).to_vec()
    }
}

const GL_MAX_N: usize = 64;

/// Evaluate the Legendre polynomial `P_n` and its derivative at `x` via the
/// three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    // P'_n(x) = n (x P_n - P_{n-1}) / (x^2 - 1)
    let dp = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Legendre rule with `n` nodes on [-1, 1].
///
/// Nodes are the roots of `P_n`, found by Newton iteration on the recurrence
/// to 1e-15; weights are `2 / ((1 - x^2) P'_n(x)^2)`. The rule is exactly
/// symmetric: the lower half mirrors the computed upper half.
pub fn gauss_legendre(n: usize) -> Result<QuadRule> {
    if n < 1 || n > GL_MAX_N {
        return Err(Error::config(format!(
            "Gauss-Legendre order must be in 1..={GL_MAX_N}, got {n}"
        )));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Initial guess for the i-th largest root (Abramowitz & Stegun 22.16.6).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_pair(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-15 {
                let (_, d) = legendre_pair(n, x);
                dp = d;
                break;
            }
        }
        if n % 2 == 1 && i == m - 1 {
            x = 0.0;
            let (_, d) = legendre_pair(n, x);
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    Ok(QuadRule {
        nodes,
        weights,
        domain: (-1.0, 1.0),
    })
}

/// Affinely map a rule to the interval [a, b], scaling weights by (b-a)/2.
pub fn map_rule(rule: &QuadRule, a: f64, b: f64) -> Result<QuadRule> {
    if !(a < b) {
        return Err(Error::config(format!(
            "interval endpoints must satisfy a < b, got [{a}, {b}]"
        )));
    }
    let (lo, hi) = rule.domain;
    let scale = (b - a) / (hi - lo);
    let nodes = rule.nodes.iter().map(|&x| a + (x - lo) * scale).collect();
    let weights = rule.weights.iter().map(|&w| w * scale).collect();
    Ok(QuadRule {
        nodes,
        weights,
        domain: (a, b),
    })
}

// Coefficients of the Acklam rational approximation to the inverse normal CDF.
const ACKLAM_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const ACKLAM_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const ACKLAM_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const ACKLAM_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

fn acklam(p: f64) -> f64 {
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((ACKLAM_C[0] * q + ACKLAM_C[1]) * q + ACKLAM_C[2]) * q + ACKLAM_C[3]) * q
            + ACKLAM_C[4])
            * q
            + ACKLAM_C[5])
            / ((((ACKLAM_D[0] * q + ACKLAM_D[1]) * q + ACKLAM_D[2]) * q + ACKLAM_D[3]) * q + 1.0)
    } else {
        // Central region formula; only called with p in [P_LOW, 0.5].
        let q = p - 0.5;
        let r = q * q;
        (((((ACKLAM_A[0] * r + ACKLAM_A[1]) * r + ACKLAM_A[2]) * r + ACKLAM_A[3]) * r
            + ACKLAM_A[4])
            * r
            + ACKLAM_A[5])
            * q
            / (((((ACKLAM_B[0] * r + ACKLAM_B[1]) * r + ACKLAM_B[2]) * r + ACKLAM_B[3]) * r
                + ACKLAM_B[4])
                * r
                + 1.0)
    }
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse CDF of the standard normal distribution.
///
/// Acklam's rational approximation refined by one Halley step against erfc;
/// absolute error is below 1e-9 over [1e-10, 1 - 1e-10]. Exactly odd around
/// p = 1/2 (the reflection 1 - p is exact for p >= 1/2).
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "inverse normal CDF requires p in (0, 1), got {p}"
        )));
    }
    if p > 0.5 {
        return Ok(-inverse_normal_cdf(1.0 - p)?);
    }
    let mut x = acklam(p);
    // One Halley refinement: e = Phi(x) - p, u = e * sqrt(2 pi) * exp(x^2/2).
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x -= u / (1.0 + 0.5 * x * u);
    Ok(x)
}

/// 1-D stochastic collocation points for N(0, sigma^2).
///
/// A Gauss-Legendre rule on [0, 1] is pushed through the inverse normal CDF,
/// `xi_l = sigma * Phi^{-1}(p_l)`; weights are the [0, 1] rule weights and sum
/// to one. The node set is exactly antisymmetric so odd moments vanish.
pub fn normal_quadrature(n: usize, sigma: f64) -> Result<StochasticPoints> {
    if !(sigma > 0.0) {
        return Err(Error::config(format!("sigma must be positive, got {sigma}")));
    }
    let rule = map_rule(&gauss_legendre(n)?, 0.0, 1.0)?;
    let mut xi = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let v = sigma * inverse_normal_cdf(rule.nodes[i])?;
        xi[i] = v;
        xi[n - 1 - i] = -v;
    }
    if n % 2 == 1 {
        xi[n / 2] = 0.0;
    }
    let points = Array2::from_shape_vec((n, 1), xi)
        .map_err(|e| Error::shape(format!("normal quadrature points: {e}")))?;
    Ok(StochasticPoints {
        points,
        weights: rule.weights,
        kind: PointKind::Quadrature,
    })
}

/// `n` equidistant points on [a, b] including both endpoints.
pub fn spatial_grid(a: f64, b: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::config(format!(
            "spatial grid needs at least 2 points, got {n}"
        )));
    }
    let mut g: Vec<f64> = (0..n)
        .map(|k| a + (b - a) * (k as f64) / ((n - 1) as f64))
        .collect();
    g[0] = a;
    g[n - 1] = b;
    Ok(g)
}

/// Composite trapezoid weights for an ordered grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    assert!(n >= 2, "trapezoid weights need at least 2 grid points");
    let mut w = vec![0.0; n];
    w[0] = 0.5 * (grid[1] - grid[0]);
    w[n - 1] = 0.5 * (grid[n - 1] - grid[n - 2]);
    for k in 1..n - 1 {
        w[k] = 0.5 * (grid[k + 1] - grid[k - 1]);
    }
    w
}

/// Spatial inner product of two sampled functions by the composite trapezoid
/// rule on `grid`.
pub fn inner_product(f_values: &[f64], g_values: &[f64], grid: &[f64]) -> Result<f64> {
    if f_values.len() != grid.len() || g_values.len() != grid.len() {
        return Err(Error::shape(format!(
            "inner product: value lengths {} and {} must match grid length {}",
            f_values.len(),
            g_values.len(),
            grid.len()
        )));
    }
    let w = trapezoid_weights(grid);
    Ok(f_values
        .iter()
        .zip(g_values)
        .zip(&w)
        .map(|((&f, &g), &wk)| wk * f * g)
        .sum())
}

/// Expectation of sampled values against a stochastic point set.
pub fn expectation(values: &[f64], pts: &StochasticPoints) -> Result<f64> {
    if values.len() != pts.len() {
        return Err(Error::shape(format!(
            "expectation: {} values vs {} points",
            values.len(),
            pts.len()
        )));
    }
    Ok(values.iter().zip(&pts.weights).map(|(&v, &w)| w * v).sum())
}

/// Cartesian product of 1-D stochastic point sets; weights multiply.
///
/// The first factor varies slowest (row-major ordering of the grid).
pub fn tensor_product(rules: &[StochasticPoints]) -> Result<StochasticPoints> {
    if rules.is_empty() {
        return Err(Error::config("tensor product of zero rules".to_string()));
    }
    for r in rules {
        if r.dim() != 1 {
            return Err(Error::shape(
                "tensor product expects 1-D factors".to_string(),
            ));
        }
    }
    let total: usize = rules.iter().map(|r| r.len()).product();
    let d = rules.len();
    let mut points = Array2::zeros((total, d));
    let mut weights = vec![1.0; total];
    for idx in 0..total {
        let mut rem = idx;
        for (j, r) in rules.iter().enumerate().rev() {
            let i = rem % r.len();
            rem /= r.len();
            points[[idx, j]] = r.points[[i, 0]];
            weights[idx] *= r.weights[i];
        }
    }
    let kind = if rules.iter().all(|r| r.kind == PointKind::Quadrature) {
        PointKind::Quadrature
    } else {
        PointKind::MonteCarlo
    };
    Ok(StochasticPoints {
        points,
        weights,
        kind,
    })
}

/// `n` time samples drawn uniformly from [t0, t1], sorted ascending.
/// Deterministic for a given seed.
pub fn sample_uniform_times(n: usize, t0: f64, t1: f64, seed: u64) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::config("need at least one time sample".to_string()));
    }
    if !(t0 < t1) {
        return Err(Error::config(format!(
            "time interval endpoints must satisfy t0 < t1, got [{t0}, {t1}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ts: Vec<f64> = (0..n).map(|_| rng.random_range(t0..t1)).collect();
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ts)
}

/// Base distribution for Monte Carlo sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McDistribution {
    StandardNormal,
    Uniform01,
}

/// `n` Monte Carlo points in `dim` dimensions with uniform weights 1/n.
/// Deterministic for a given seed.
pub fn sample_mc(
    dim: usize,
    n: usize,
    seed: u64,
    distribution: McDistribution,
) -> Result<StochasticPoints> {
    if n < 1 || dim < 1 {
        return Err(Error::config(format!(
            "Monte Carlo sampling needs n >= 1 and dim >= 1, got n={n}, dim={dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Array2::zeros((n, dim));
    for i in 0..n {
        for j in 0..dim {
            points[[i, j]] = match distribution {
                McDistribution::StandardNormal => StandardNormal.sample(&mut rng),
                McDistribution::Uniform01 => rng.random::<f64>(),
            };
        }
    }
    Ok(StochasticPoints {
        points,
        weights: vec![1.0 / n as f64; n],
        kind: PointKind::MonteCarlo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gl_one_point_is_midpoint() {
        let r = gauss_legendre(1).unwrap();
        assert_eq!(r.nodes, vec![0.0]);
        assert_eq!(r.weights, vec![2.0]);
    }

    #[test]
    fn gl_two_point_nodes() {
        let r = gauss_legendre(2).unwrap();
        assert_abs_diff_eq!(r.nodes[1], 0.5773502691896258, epsilon = 1e-15);
        assert_abs_diff_eq!(r.nodes[0], -0.5773502691896258, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.weights[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn gl_rejects_out_of_range() {
        assert!(gauss_legendre(0).is_err());
        assert!(gauss_legendre(65).is_err());
    }

    /// GL(n) integrates monomials exactly up to degree 2n-1.
    #[test]
    fn gl_exactness_all_orders() {
        for n in 1..=20 {
            let r = gauss_legendre(n).unwrap();
            for deg in 0..=(2 * n - 1) {
                let got: f64 = r
                    .nodes
                    .iter()
                    .zip(&r.weights)
                    .map(|(&x, &w)| w * x.powi(deg as i32))
                    .sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                assert_abs_diff_eq!(got, exact, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gl8_degree_15_and_14() {
        let r = gauss_legendre(8).unwrap();
        let m15: f64 = r
            .nodes
            .iter()
            .zip(&r.weights)
            .map(|(&x, &w)| w * x.powi(15))
            .sum();
        let m14: f64 = r
            .nodes
            .iter()
            .zip(&r.weights)
            .map(|(&x, &w)| w * x.powi(14))
            .sum();
        assert_abs_diff_eq!(m15, 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(m14, 2.0 / 15.0, epsilon = 1e-13);
    }

    #[test]
    fn map_rule_identity_and_unit_interval() {
        let r = gauss_legendre(2).unwrap();
        let same = map_rule(&r, -1.0, 1.0).unwrap();
        assert_eq!(same.nodes, r.nodes);
        let unit = map_rule(&r, 0.0, 1.0).unwrap();
        let s3 = 1.0 / 3f64.sqrt();
        assert_abs_diff_eq!(unit.nodes[0], (1.0 - s3) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(unit.nodes[1], (1.0 + s3) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(unit.weights[0], 0.5, epsilon = 1e-15);
        let to_pi = map_rule(&r, 0.0, std::f64::consts::PI).unwrap();
        let sum: f64 = to_pi.weights.iter().sum();
        assert_abs_diff_eq!(sum, std::f64::consts::PI, epsilon = 1e-14);
        assert!(map_rule(&r, 1.0, 1.0).is_err());
    }

    #[test]
    fn inverse_cdf_center_and_tail() {
        assert_eq!(inverse_normal_cdf(0.5).unwrap(), 0.0);
        // Reference value from bisection on a high-precision erf.
        assert_abs_diff_eq!(
            inverse_normal_cdf(0.975).unwrap(),
            1.9599639845400545,
            epsilon = 1e-9
        );
        assert!(inverse_normal_cdf(0.0).is_err());
        assert!(inverse_normal_cdf(1.0).is_err());
        assert!(inverse_normal_cdf(-0.2).is_err());
    }

    #[test]
    fn inverse_cdf_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p: f64 = rng.random_range(1e-10..1.0 - 1e-10);
            let x = inverse_normal_cdf(p).unwrap();
            assert_abs_diff_eq!(normal_cdf(x), p, epsilon = 1e-9);
        }
    }

    #[test]
    fn inverse_cdf_is_odd() {
        // For p >= 1/2 the reflection 1 - p is exact, so the mirrored pair is
        // bit-identical; for arbitrary p the rounding of 1 - p intervenes.
        for &q in &[0.001, 0.1, 0.3, 0.49] {
            let hi = 1.0 - q;
            let lo = inverse_normal_cdf(1.0 - hi).unwrap();
            assert_eq!(lo, -inverse_normal_cdf(hi).unwrap());
        }
    }

    #[test]
    fn normal_quadrature_moments() {
        let pts = normal_quadrature(50, 0.8).unwrap();
        let xi = pts.column(0);
        let wsum: f64 = pts.weights.iter().sum();
        assert_abs_diff_eq!(wsum, 1.0, epsilon = 1e-12);
        let moment = |k: i32| -> f64 {
            xi.iter()
                .zip(&pts.weights)
                .map(|(&x, &w)| w * x.powi(k))
                .sum()
        };
        assert_abs_diff_eq!(moment(1), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(moment(2), 0.64, epsilon = 1e-3);
        assert_abs_diff_eq!(moment(3), 0.0, epsilon = 1e-12);
        // The inverse-CDF construction converges slowly in the tails; at
        // n = 50 the raw fourth moment carries ~1.14e-2 of error (matches an
        // independent high-precision evaluation of the same rule).
        assert_abs_diff_eq!(moment(4), 3.0 * 0.8f64.powi(4), epsilon = 1.2e-2);
        assert_abs_diff_eq!(moment(5), 0.0, epsilon = 1e-12);
    }

    /// E[cos(xi t)] for xi ~ N(0, sigma^2) is the Gaussian characteristic
    /// function exp(-sigma^2 t^2 / 2).
    #[test]
    fn normal_quadrature_characteristic_function() {
        let pts = normal_quadrature(50, 0.8).unwrap();
        let t = std::f64::consts::PI;
        let vals: Vec<f64> = pts.column(0).iter().map(|&x| (x * t).cos()).collect();
        let got = expectation(&vals, &pts).unwrap();
        let exact = (-0.32 * t * t).exp();
        assert_abs_diff_eq!(got, exact, epsilon = 1e-3);
    }

    #[test]
    fn spatial_grid_basics() {
        let pi = std::f64::consts::PI;
        let g = spatial_grid(-pi, pi, 3).unwrap();
        assert_eq!(g, vec![-pi, 0.0, pi]);
        let g = spatial_grid(-1.0, 1.0, 51).unwrap();
        assert_abs_diff_eq!(g[1] - g[0], 0.04, epsilon = 1e-15);
        for k in 1..50 {
            assert_abs_diff_eq!(g[k + 1] - g[k], g[1] - g[0], epsilon = 1e-14);
        }
        assert!(spatial_grid(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let pi = std::f64::consts::PI;
        let grid = spatial_grid(-pi, pi, 51).unwrap();
        let ones = vec![1.0; 51];
        assert_abs_diff_eq!(
            inner_product(&ones, &ones, &grid).unwrap(),
            2.0 * pi,
            epsilon = 1e-12
        );
        let c: Vec<f64> = grid.iter().map(|&x| x.cos() / pi.sqrt()).collect();
        assert_abs_diff_eq!(inner_product(&c, &c, &grid).unwrap(), 1.0, epsilon = 1e-3);
        let s: Vec<f64> = grid.iter().map(|&x| x.sin()).collect();
        let cc: Vec<f64> = grid.iter().map(|&x| x.cos()).collect();
        assert_abs_diff_eq!(inner_product(&s, &cc, &grid).unwrap(), 0.0, epsilon = 1e-12);
        assert!(inner_product(&ones[..10], &ones, &grid).is_err());
    }

    /// Halving the spacing reduces the trapezoid error of int sin^2 by ~4x.
    #[test]
    fn trapezoid_second_order_convergence() {
        let exact = std::f64::consts::PI; // integral of sin^2 over [0, 2 pi]
        let err = |n: usize| -> f64 {
            // Shifted interval so the integrand is not periodic-exact.
            let grid = spatial_grid(0.0, 0.75 * std::f64::consts::PI, n).unwrap();
            let s: Vec<f64> = grid.iter().map(|&x| x.sin()).collect();
            let exact = 0.75 * std::f64::consts::PI / 2.0
                - (2.0 * 0.75 * std::f64::consts::PI).sin() / 4.0;
            (inner_product(&s, &s, &grid).unwrap() - exact).abs()
        };
        let _ = exact;
        let e1 = err(33);
        let e2 = err(65);
        let ratio = e1 / e2;
        assert!(
            (3.0..5.0).contains(&ratio),
            "expected ~4x reduction, got {ratio}"
        );
    }

    #[test]
    fn expectation_examples() {
        let pts = normal_quadrature(20, 1.0).unwrap();
        let consts = vec![3.25; 20];
        assert_abs_diff_eq!(expectation(&consts, &pts).unwrap(), 3.25, epsilon = 1e-14);
        let odd: Vec<f64> = pts.column(0).iter().map(|&x| x.powi(3) + x).collect();
        assert_abs_diff_eq!(expectation(&odd, &pts).unwrap(), 0.0, epsilon = 1e-12);
    }

    /// E[(2 xi - 1)^2] = 1/3 for xi ~ U(0, 1): the BO coefficient
    /// sqrt(3)(2 xi - 1) has unit variance.
    #[test]
    fn expectation_uniform_second_moment() {
        let rule = map_rule(&gauss_legendre(8).unwrap(), 0.0, 1.0).unwrap();
        let pts = StochasticPoints {
            points: Array2::from_shape_vec((8, 1), rule.nodes.clone()).unwrap(),
            weights: rule.weights.clone(),
            kind: PointKind::Quadrature,
        };
        let vals: Vec<f64> = pts.column(0).iter().map(|&x| (2.0 * x - 1.0).powi(2)).collect();
        assert_abs_diff_eq!(
            expectation(&vals, &pts).unwrap(),
            1.0 / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn tensor_product_of_two_gl8() {
        let rule = map_rule(&gauss_legendre(8).unwrap(), 0.0, 1.0).unwrap();
        let one = StochasticPoints {
            points: Array2::from_shape_vec((8, 1), rule.nodes.clone()).unwrap(),
            weights: rule.weights.clone(),
            kind: PointKind::Quadrature,
        };
        let prod = tensor_product(&[one.clone(), one]).unwrap();
        assert_eq!(prod.len(), 64);
        assert_eq!(prod.dim(), 2);
        let wsum: f64 = prod.weights.iter().sum();
        assert_abs_diff_eq!(wsum, 1.0, epsilon = 1e-12);
        // E[xi1 xi2] = E[xi1] E[xi2] = 1/4 for independent U(0,1).
        let vals: Vec<f64> = (0..64)
            .map(|i| prod.points[[i, 0]] * prod.points[[i, 1]])
            .collect();
        assert_abs_diff_eq!(expectation(&vals, &prod).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn uniform_times_seeded() {
        let a = sample_uniform_times(40, 0.0, 2.0, 11).unwrap();
        let b = sample_uniform_times(40, 0.0, 2.0, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&t| (0.0..2.0).contains(&t)));
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(sample_uniform_times(5, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn mc_sampling_seeded_and_unbiased() {
        let a = sample_mc(1, 10_000, 3, McDistribution::StandardNormal).unwrap();
        let b = sample_mc(1, 10_000, 3, McDistribution::StandardNormal).unwrap();
        assert_eq!(a.points, b.points);
        let mean: f64 = a.points.column(0).sum() / 10_000.0;
        assert!(mean.abs() < 0.03, "CLT bound violated: {mean}");
        assert!(a.weights.iter().all(|&w| w == 1e-4));
    }
}
