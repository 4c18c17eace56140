//! Stochastic Burgers' equation `u_t + u u_x = nu u_xx + f(x,t;xi)` on
//! [-pi, pi] with periodic boundary and a manufactured solution
//!
//! ```text
//! u* = -sin(x-t) - sqrt(3)(1.5+sin t) cos(x-t) z1 + sqrt(3)(1.5+cos 3t) cos(2x-3t) z2,
//! ```
//!
//! where `z_i = 2 xi_i - 1` and `xi_i ~ U(0,1)`. The forcing is whatever
//! makes `u*` exact: `f = u*_t + u* u*_x - nu u*_xx`, assembled from the
//! hand-differentiated factors below. The normalized expansion of `u*` is
//! known in closed form, and its two scale trajectories cross repeatedly
//! (first at t = pi/8), which is what defeats the classical BO solver.

use super::{
    BoundaryCondition, ExactOracle, InitialCondition, Operator, Params, ProblemSpec,
    StochasticSpec,
};
use crate::modal::ModalEval;
use crate::nn::jet::Jet;
use std::sync::Arc;

const SQRT3: f64 = 1.7320508075688772;

/// x-t factors of `u* = c0 + c1 z1 + c2 z2` and their derivatives.
struct Factors {
    c: [f64; 3],
    cx: [f64; 3],
    cxx: [f64; 3],
    ct: [f64; 3],
}

fn factors(x: f64, t: f64) -> Factors {
    let th1 = x - t;
    let th2 = 2.0 * x - 3.0 * t;
    let (s1, co1) = th1.sin_cos();
    let (s2, co2) = th2.sin_cos();
    let a = 1.5 + t.sin();
    let b = 1.5 + (3.0 * t).cos();
    let da = t.cos();
    let db = -3.0 * (3.0 * t).sin();
    Factors {
        c: [-s1, -SQRT3 * a * co1, SQRT3 * b * co2],
        cx: [-co1, SQRT3 * a * s1, -2.0 * SQRT3 * b * s2],
        cxx: [s1, SQRT3 * a * co1, -4.0 * SQRT3 * b * co2],
        ct: [
            co1,
            -SQRT3 * (da * co1 + a * s1),
            SQRT3 * (db * co2 + 3.0 * b * s2),
        ],
    }
}

/// Monomials of (z1, z2) the separable forcing expands over.
pub fn forcing_zbasis(xi: &[f64]) -> [f64; 6] {
    let z1 = 2.0 * xi[0] - 1.0;
    let z2 = 2.0 * xi[1] - 1.0;
    [1.0, z1, z2, z1 * z1, z1 * z2, z2 * z2]
}

/// x-t coefficients of the forcing over [`forcing_zbasis`]:
/// `f(x,t;xi) = sum_m F_m(x,t) g_m(z)`.
pub fn forcing_factors(nu: f64, x: f64, t: f64) -> [f64; 6] {
    let f = factors(x, t);
    [
        f.ct[0] + f.c[0] * f.cx[0] - nu * f.cxx[0],
        f.ct[1] + f.c[0] * f.cx[1] + f.c[1] * f.cx[0] - nu * f.cxx[1],
        f.ct[2] + f.c[0] * f.cx[2] + f.c[2] * f.cx[0] - nu * f.cxx[2],
        f.c[1] * f.cx[1],
        f.c[1] * f.cx[2] + f.c[2] * f.cx[1],
        f.c[2] * f.cx[2],
    ]
}

/// The manufactured forcing at a point.
pub fn forcing(nu: f64, x: f64, t: f64, xi: &[f64]) -> f64 {
    forcing_factors(nu, x, t)
        .iter()
        .zip(forcing_zbasis(xi))
        .map(|(&f, g)| f * g)
        .sum()
}

/// The manufactured solution and its partial derivatives.
pub fn manufactured(x: f64, t: f64, xi: &[f64]) -> (f64, f64, f64, f64) {
    let f = factors(x, t);
    let z1 = 2.0 * xi[0] - 1.0;
    let z2 = 2.0 * xi[1] - 1.0;
    let comb = |v: &[f64; 3]| v[0] + v[1] * z1 + v[2] * z2;
    (comb(&f.c), comb(&f.cx), comb(&f.cxx), comb(&f.ct))
}

/// Closed-form normalized expansion of the manufactured Burgers solution.
#[derive(Debug, Clone)]
pub struct BurgersExact;

impl BurgersExact {
    pub fn scale1(t: f64) -> f64 {
        std::f64::consts::PI.sqrt() * (1.5 + t.sin())
    }

    pub fn scale2(t: f64) -> f64 {
        std::f64::consts::PI.sqrt() * (1.5 + (3.0 * t).cos())
    }
}

impl ModalEval for BurgersExact {
    fn n_modes(&self) -> usize {
        2
    }

    fn stoch_dim(&self) -> usize {
        2
    }

    fn mean_jet(&self, x: f64, t: f64) -> Jet {
        let (s1, c1) = (x - t).sin_cos();
        Jet {
            value: -s1,
            d_dx: -c1,
            d2_dx2: s1,
            d_dt: c1,
        }
    }

    fn modes_jet(&self, x: f64, t: f64) -> Vec<Jet> {
        let rp = std::f64::consts::PI.sqrt();
        let (s1, c1) = (x - t).sin_cos();
        let (s2, c2) = (2.0 * x - 3.0 * t).sin_cos();
        vec![
            Jet {
                value: -c1 / rp,
                d_dx: s1 / rp,
                d2_dx2: c1 / rp,
                d_dt: -s1 / rp,
            },
            Jet {
                value: c2 / rp,
                d_dx: -2.0 * s2 / rp,
                d2_dx2: -4.0 * c2 / rp,
                d_dt: 3.0 * s2 / rp,
            },
        ]
    }

    fn scales_jet(&self, t: f64) -> Vec<Jet> {
        let rp = std::f64::consts::PI.sqrt();
        vec![
            Jet {
                value: Self::scale1(t),
                d_dx: 0.0,
                d2_dx2: 0.0,
                d_dt: rp * t.cos(),
            },
            Jet {
                value: Self::scale2(t),
                d_dx: 0.0,
                d2_dx2: 0.0,
                d_dt: -3.0 * rp * (3.0 * t).sin(),
            },
        ]
    }

    fn coeffs_jet(&self, xi: &[f64], _t: f64) -> Vec<Jet> {
        vec![
            Jet::constant(SQRT3 * (2.0 * xi[0] - 1.0)),
            Jet::constant(SQRT3 * (2.0 * xi[1] - 1.0)),
        ]
    }
}

impl ExactOracle for BurgersExact {
    fn mean(&self, x: f64, t: f64) -> f64 {
        -(x - t).sin()
    }

    /// Var[u*] = A^2 cos^2(x-t) + B^2 cos^2(2x-3t) with A = 1.5+sin t,
    /// B = 1.5+cos 3t (each z_i has variance 1/3 and the sqrt(3) squares it
    /// away).
    fn variance(&self, x: f64, t: f64) -> f64 {
        let a = 1.5 + t.sin();
        let b = 1.5 + (3.0 * t).cos();
        let c1 = (x - t).cos();
        let c2 = (2.0 * x - 3.0 * t).cos();
        a * a * c1 * c1 + b * b * c2 * c2
    }

    fn solution(&self, x: f64, t: f64, xi: &[f64]) -> f64 {
        manufactured(x, t, xi).0
    }
}

/// The stochastic Burgers benchmark with viscosity `nu` (paper: 0.1).
pub fn burgers_problem(nu: f64) -> ProblemSpec {
    assert!(nu > 0.0, "burgers needs nu > 0");
    let pi = std::f64::consts::PI;
    ProblemSpec {
        name: "burgers".to_string(),
        x_domain: (-pi, pi),
        t_domain: (0.0, 10.0 * pi),
        stoch_dim: 2,
        operator: Operator::Burgers { nu },
        bc: BoundaryCondition::Periodic { length: 2.0 * pi },
        ic: InitialCondition::Stochastic {
            u0: Arc::new(|x: f64, xi: &[f64]| manufactured(x, 0.0, xi).0),
        },
        params: Params {
            names: vec!["nu".to_string()],
            values: vec![nu],
            learnable: vec![false],
        },
        exact: Some(Arc::new(BurgersExact)),
        // Center the uniform inputs: the coefficient network sees 2 xi - 1.
        xi_affine: Some(vec![(2.0, -1.0), (2.0, -1.0)]),
        default_points: StochasticSpec::UniformTensor { order: 8 },
    }
}

/// Times in `[t0, t1]` where the two scale trajectories cross
/// (`sin t = cos 3t`), located by sign-change bisection to 1e-10.
pub fn burgers_eigenvalue_crossings(t0: f64, t1: f64) -> Vec<f64> {
    let g = |t: f64| t.sin() - (3.0 * t).cos();
    let mut out = Vec::new();
    if !(t0 < t1) {
        return out;
    }
    let steps = ((t1 - t0) / 1e-3).ceil() as usize;
    let h = (t1 - t0) / steps as f64;
    let mut prev_t = t0;
    let mut prev_g = g(t0);
    for k in 1..=steps {
        let t = t0 + k as f64 * h;
        let gt = g(t);
        if prev_g == 0.0 {
            out.push(prev_t);
        } else if prev_g * gt < 0.0 {
            let (mut lo, mut hi) = (prev_t, t);
            let (mut glo, _) = (prev_g, gt);
            while hi - lo > 1e-10 {
                let mid = 0.5 * (lo + hi);
                let gm = g(mid);
                if glo * gm <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    glo = gm;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        prev_t = t;
        prev_g = gt;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modal::reconstruct;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    const NU: f64 = 0.1;

    /// The assembled operator annihilates the manufactured solution: this is
    /// the defining property of the forcing.
    #[test]
    fn manufactured_solution_annihilates_residual() {
        let problem = burgers_problem(NU);
        let ex = BurgersExact;
        let pi = std::f64::consts::PI;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut max_r: f64 = 0.0;
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-pi..pi);
            let t: f64 = rng.random_range(0.0..10.0 * pi);
            let xi = [rng.random::<f64>(), rng.random::<f64>()];
            let r = problem.residual(&ex, x, t, &xi).unwrap();
            max_r = max_r.max(r.abs());
        }
        assert!(max_r < 1e-9, "max residual {max_r}");
    }

    /// Independent check of the hand-derived forcing: numerical derivatives
    /// of the manufactured solution.
    #[test]
    fn forcing_matches_numerical_differentiation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        for _ in 0..200 {
            let x: f64 = rng.random_range(-3.0..3.0);
            let t: f64 = rng.random_range(0.1..5.0);
            let xi = [rng.random::<f64>(), rng.random::<f64>()];
            let u = |x: f64, t: f64| manufactured(x, t, &xi).0;
            let ut = (u(x, t + h) - u(x, t - h)) / (2.0 * h);
            let ux = (u(x + h, t) - u(x - h, t)) / (2.0 * h);
            let uxx = (u(x + h, t) - 2.0 * u(x, t) + u(x - h, t)) / (h * h);
            let f_num = ut + u(x, t) * ux - NU * uxx;
            let f_ana = forcing(NU, x, t, &xi);
            assert!((f_num - f_ana).abs() < 1e-4, "{f_num} vs {f_ana}");
        }
    }

    /// Analytic partials agree with finite differences of the value.
    #[test]
    fn manufactured_partials() {
        let xi = [0.3, 0.8];
        let (x, t) = (0.7, 2.3);
        let h = 1e-6;
        let (_, ux, uxx, ut) = manufactured(x, t, &xi);
        let u = |x: f64, t: f64| manufactured(x, t, &xi).0;
        assert_abs_diff_eq!(ux, (u(x + h, t) - u(x - h, t)) / (2.0 * h), epsilon = 1e-8);
        assert_abs_diff_eq!(ut, (u(x, t + h) - u(x, t - h)) / (2.0 * h), epsilon = 1e-8);
        let h2 = 1e-4; // wider step: the second difference amplifies rounding
        assert_abs_diff_eq!(
            uxx,
            (u(x + h2, t) - 2.0 * u(x, t) + u(x - h2, t)) / (h2 * h2),
            epsilon = 1e-4
        );
    }

    #[test]
    fn scales_at_t0() {
        let rp = std::f64::consts::PI.sqrt();
        assert_abs_diff_eq!(BurgersExact::scale1(0.0), rp * 1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(BurgersExact::scale2(0.0), rp * 2.5, epsilon = 1e-14);
    }

    /// E[u*] = -sin(x - t): the fluctuation terms have zero mean.
    #[test]
    fn mean_under_quadrature() {
        let problem = burgers_problem(NU);
        let pts = problem.stochastic_points(64, 0).unwrap();
        assert_eq!(pts.len(), 64);
        let (x, t) = (1.2, 4.5);
        let mut mean = 0.0;
        for l in 0..64 {
            let xi: Vec<f64> = pts.points.row(l).to_vec();
            mean += pts.weights[l] * manufactured(x, t, &xi).0;
        }
        assert_abs_diff_eq!(mean, -(x - t).sin(), epsilon = 1e-12);
    }

    /// Exact expansion reproduces the manufactured solution pointwise.
    #[test]
    fn expansion_matches_manufactured() {
        let ex = BurgersExact;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let x: f64 = rng.random_range(-3.0..3.0);
            let t: f64 = rng.random_range(0.0..31.0);
            let xi = [rng.random::<f64>(), rng.random::<f64>()];
            let u = reconstruct(&ex, x, t, &xi).unwrap();
            assert_abs_diff_eq!(u, manufactured(x, t, &xi).0, epsilon = 1e-12);
        }
    }

    /// The manufactured components stay bi-orthogonal over the whole time
    /// range: <u_i, u_j> prop delta_ij and E[Y_i Y_j] = delta_ij.
    #[test]
    fn components_are_biorthogonal() {
        let pi = std::f64::consts::PI;
        let ex = BurgersExact;
        let problem = burgers_problem(NU);
        let grid = crate::quad::spatial_grid(-pi, pi, 201).unwrap();
        let pts = problem.stochastic_points(64, 0).unwrap();
        for k in 0..8 {
            let t = 10.0 * pi * (k as f64 + 0.31) / 8.0;
            let comp = crate::modal::sample_components(&ex, t, &grid, &pts);
            let u1 = comp.modes.column(0).to_vec();
            let u2 = comp.modes.column(1).to_vec();
            let ip12 = crate::quad::inner_product(&u1, &u2, &grid).unwrap();
            assert_abs_diff_eq!(ip12, 0.0, epsilon = 1e-10);
            let c = crate::modal::covariance_y(&ex, t, &pts);
            assert_abs_diff_eq!(c[[0, 0]], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(c[[1, 1]], 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(c[[0, 1]], 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn eigenvalue_crossings() {
        let pi = std::f64::consts::PI;
        // sin(t) = cos(3t) has its first root at t = pi/8.
        let roots = burgers_eigenvalue_crossings(0.0, pi);
        assert!(!roots.is_empty());
        assert_abs_diff_eq!(roots[0], pi / 8.0, epsilon = 1e-9);
        let many = burgers_eigenvalue_crossings(0.0, 10.0 * pi);
        assert!(many.len() >= 10, "found {} crossings", many.len());
        assert!(burgers_eigenvalue_crossings(1.0, 1.0).is_empty());
    }

    /// Initial components taken from the exact expansion keep the paper's
    /// mode labeling (low frequency first).
    #[test]
    fn initial_components_keep_paper_order() {
        let pi = std::f64::consts::PI;
        let problem = burgers_problem(NU);
        let grid = crate::quad::spatial_grid(-pi, pi, 50).unwrap();
        let pts = problem.stochastic_points(64, 0).unwrap();
        let c = problem.initial_components(&grid, &pts, 2).unwrap();
        assert_abs_diff_eq!(c.scales[0], pi.sqrt() * 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(c.scales[1], pi.sqrt() * 2.5, epsilon = 1e-12);
    }
}
