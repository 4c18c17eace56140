//! The four-network modal representation of the solution and its statistics.
//!
//! Anything that can produce the expansion components (mean field, spatial
//! modes, scaling factors, stochastic coefficients) with jet derivatives
//! implements [`ModalEval`]; that covers both trained [`ModalSolution`]s and
//! the closed-form exact components of the benchmark problems.

pub mod checkpoint;
pub mod init;
pub mod kl;

pub use init::{initial_components_from_field, InitialComponents};
pub use kl::{grf_sample, kl_decompose_cov, kl_decompose_kernel, KernelSpec, KlBasis, MeanFn};

use crate::error::{Error, Result};
use crate::nn::jet::Jet;
use crate::nn::Mlp;
use crate::quad::StochasticPoints;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Anything that evaluates the modal expansion components with derivatives.
pub trait ModalEval: Send + Sync {
    fn n_modes(&self) -> usize;
    fn stoch_dim(&self) -> usize;

    /// Mean field `ubar(x,t)` with (d/dx, d^2/dx^2, d/dt).
    fn mean_jet(&self, x: f64, t: f64) -> Jet;

    /// Spatial modes `u_i(x,t)` with (d/dx, d^2/dx^2, d/dt).
    fn modes_jet(&self, x: f64, t: f64) -> Vec<Jet>;

    /// Scaling factors `a_i(t)` with d/dt.
    fn scales_jet(&self, t: f64) -> Vec<Jet>;

    /// Stochastic coefficients `Y_i(t; xi)` with d/dt.
    fn coeffs_jet(&self, xi: &[f64], t: f64) -> Vec<Jet>;
}

/// Reconstruction `u = ubar + sum_i a_i u_i Y_i` at a point.
pub fn reconstruct(ms: &dyn ModalEval, x: f64, t: f64, xi: &[f64]) -> Result<f64> {
    Ok(reconstruct_jet(ms, x, t, xi)?.value)
}

/// Reconstruction with (d/dx, d^2/dx^2, d/dt) by the product rule across the
/// three factors.
pub fn reconstruct_jet(ms: &dyn ModalEval, x: f64, t: f64, xi: &[f64]) -> Result<Jet> {
    if xi.len() != ms.stoch_dim() {
        return Err(Error::shape(format!(
            "reconstruct: xi has {} entries, expansion expects {}",
            xi.len(),
            ms.stoch_dim()
        )));
    }
    let mut u = ms.mean_jet(x, t);
    let modes = ms.modes_jet(x, t);
    let scales = ms.scales_jet(t);
    let coeffs = ms.coeffs_jet(xi, t);
    for i in 0..ms.n_modes() {
        u = u + scales[i] * modes[i] * coeffs[i];
    }
    Ok(u)
}

/// Mean of the expansion: the mean-field network itself.
pub fn mean_field(ms: &dyn ModalEval, x: f64, t: f64) -> f64 {
    ms.mean_jet(x, t).value
}

/// First moments E[Y_i] of the stochastic coefficients under `pts`.
pub fn coeff_means(ms: &dyn ModalEval, t: f64, pts: &StochasticPoints) -> Vec<f64> {
    let n = ms.n_modes();
    let mut m = vec![0.0; n];
    for (l, w) in pts.weights.iter().enumerate() {
        let xi: Vec<f64> = pts.points.row(l).to_vec();
        let y = ms.coeffs_jet(&xi, t);
        for i in 0..n {
            m[i] += w * y[i].value;
        }
    }
    m
}

/// Second-moment matrix `C_{Y_i Y_j}(t) = E[Y_i Y_j]` under `pts`.
/// Symmetric by construction.
pub fn covariance_y(ms: &dyn ModalEval, t: f64, pts: &StochasticPoints) -> Array2<f64> {
    let n = ms.n_modes();
    let mut c = Array2::zeros((n, n));
    for (l, w) in pts.weights.iter().enumerate() {
        let xi: Vec<f64> = pts.points.row(l).to_vec();
        let y = ms.coeffs_jet(&xi, t);
        for i in 0..n {
            for j in i..n {
                c[[i, j]] += w * y[i].value * y[j].value;
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            c[[i, j]] = c[[j, i]];
        }
    }
    c
}

/// Pointwise variance of the expansion under `pts`:
/// `sum_ij b_i b_j E[Y_i Y_j] - (sum_i b_i E[Y_i])^2` with `b_i = a_i u_i`.
///
/// Retaining the first-moment term makes this identical to the weighted
/// sample variance of the reconstruction; it reduces to the textbook
/// `sum_ij u_i E[Y_i Y_j] u_j` form when the coefficients are centered.
pub fn variance_field(ms: &dyn ModalEval, x: f64, t: f64, pts: &StochasticPoints) -> f64 {
    let n = ms.n_modes();
    let modes = ms.modes_jet(x, t);
    let scales = ms.scales_jet(t);
    let b: Vec<f64> = (0..n).map(|i| scales[i].value * modes[i].value).collect();
    let c = covariance_y(ms, t, pts);
    let m = coeff_means(ms, t, pts);
    let mut var = 0.0;
    let mut shift = 0.0;
    for i in 0..n {
        shift += b[i] * m[i];
        for j in 0..n {
            var += b[i] * c[[i, j]] * b[j];
        }
    }
    var - shift * shift
}

/// The scaling-factor representation: a single joint network with N outputs,
/// or N independent scalar networks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ScalingNet {
    Joint(Mlp),
    Independent(Vec<Mlp>),
}

impl ScalingNet {
    pub fn n_outputs(&self) -> usize {
        match self {
            ScalingNet::Joint(net) => net.output_dim(),
            ScalingNet::Independent(nets) => nets.len(),
        }
    }

    pub fn forward_jet(&self, t: Jet) -> Result<Vec<Jet>> {
        match self {
            ScalingNet::Joint(net) => net.forward_jet(&[t]),
            ScalingNet::Independent(nets) => nets
                .iter()
                .map(|n| n.forward_jet(&[t]).map(|v| v[0]))
                .collect(),
        }
    }

    pub fn nets(&self) -> Vec<&Mlp> {
        match self {
            ScalingNet::Joint(net) => vec![net],
            ScalingNet::Independent(nets) => nets.iter().collect(),
        }
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Mlp> {
        match self {
            ScalingNet::Joint(net) => vec![net],
            ScalingNet::Independent(nets) => nets.iter_mut().collect(),
        }
    }
}

/// Domain metadata a solution carries so it is self-contained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionMeta {
    pub x_domain: (f64, f64),
    pub t_domain: (f64, f64),
    pub stoch_dim: usize,
    /// Optional per-dimension affine preprocessing of the stochastic inputs
    /// fed to the coefficient network: `input = scale * xi + shift`.
    pub xi_affine: Option<Vec<(f64, f64)>>,
}

/// The trained four-network representation of the solution.
///
/// Time inputs are shifted to the local coordinate `t - t_domain.0` before
/// entering the networks, which keeps inputs O(1) on late subdomains; all
/// public evaluation is in global time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModalSolution {
    pub ubar_net: Mlp,
    pub u_net: Mlp,
    pub y_net: Mlp,
    pub a_net: ScalingNet,
    pub n_modes: usize,
    pub meta: SolutionMeta,
}

impl ModalSolution {
    pub fn local_time(&self, t: f64) -> f64 {
        t - self.meta.t_domain.0
    }

    /// Stochastic inputs after the affine preprocessing.
    pub fn map_xi(&self, xi: &[f64]) -> Vec<f64> {
        match &self.meta.xi_affine {
            Some(map) => xi
                .iter()
                .zip(map)
                .map(|(&v, &(a, b))| a * v + b)
                .collect(),
            None => xi.to_vec(),
        }
    }

    /// All networks in the canonical parameter order (mean, modes,
    /// coefficients, scalings).
    pub fn nets(&self) -> Vec<&Mlp> {
        let mut v = vec![&self.ubar_net, &self.u_net, &self.y_net];
        v.extend(self.a_net.nets());
        v
    }

    pub fn param_count(&self) -> usize {
        self.nets().iter().map(|n| n.param_count()).sum()
    }

    /// Flattens all parameters in the canonical order.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for n in self.nets() {
            n.write_params(out);
        }
    }

    /// Restores parameters from the canonical flat layout.
    pub fn read_params(&mut self, data: &[f64]) -> Result<()> {
        let mut off = 0;
        off += self.ubar_net.read_params(&data[off..])?;
        off += self.u_net.read_params(&data[off..])?;
        off += self.y_net.read_params(&data[off..])?;
        for n in self.a_net.nets_mut() {
            off += n.read_params(&data[off..])?;
        }
        let _ = off;
        Ok(())
    }
}

impl ModalEval for ModalSolution {
    fn n_modes(&self) -> usize {
        self.n_modes
    }

    fn stoch_dim(&self) -> usize {
        self.meta.stoch_dim
    }

    fn mean_jet(&self, x: f64, t: f64) -> Jet {
        let tau = self.local_time(t);
        self.ubar_net
            .forward_jet(&[Jet::spatial(x), Jet::time(tau)])
            .expect("mean network input")[0]
    }

    fn modes_jet(&self, x: f64, t: f64) -> Vec<Jet> {
        let tau = self.local_time(t);
        self.u_net
            .forward_jet(&[Jet::spatial(x), Jet::time(tau)])
            .expect("mode network input")
    }

    fn scales_jet(&self, t: f64) -> Vec<Jet> {
        let tau = self.local_time(t);
        self.a_net
            .forward_jet(Jet::time(tau))
            .expect("scaling network input")
    }

    fn coeffs_jet(&self, xi: &[f64], t: f64) -> Vec<Jet> {
        let tau = self.local_time(t);
        let mapped = self.map_xi(xi);
        let mut input: Vec<Jet> = mapped.into_iter().map(Jet::constant).collect();
        input.push(Jet::time(tau));
        self.y_net
            .forward_jet(&input)
            .expect("coefficient network input")
    }
}

/// A time-partitioned solution: one set of networks per subdomain, queries
/// dispatched by time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StitchedSolution {
    pub segments: Vec<ModalSolution>,
}

impl StitchedSolution {
    pub fn segment_for(&self, t: f64) -> &ModalSolution {
        for seg in &self.segments {
            if t <= seg.meta.t_domain.1 {
                return seg;
            }
        }
        self.segments.last().expect("stitched solution is nonempty")
    }
}

impl ModalEval for StitchedSolution {
    fn n_modes(&self) -> usize {
        self.segments[0].n_modes
    }

    fn stoch_dim(&self) -> usize {
        self.segments[0].meta.stoch_dim
    }

    fn mean_jet(&self, x: f64, t: f64) -> Jet {
        self.segment_for(t).mean_jet(x, t)
    }

    fn modes_jet(&self, x: f64, t: f64) -> Vec<Jet> {
        self.segment_for(t).modes_jet(x, t)
    }

    fn scales_jet(&self, t: f64) -> Vec<Jet> {
        self.segment_for(t).scales_jet(t)
    }

    fn coeffs_jet(&self, xi: &[f64], t: f64) -> Vec<Jet> {
        self.segment_for(t).coeffs_jet(xi, t)
    }
}

/// Fields of the expansion sampled on a grid, used for hand-off between
/// subdomains and for error tables.
#[derive(Debug, Clone)]
pub struct SampledComponents {
    pub mean: Array1<f64>,
    pub modes: Array2<f64>,
    pub scales: Vec<f64>,
    pub coeffs: Array2<f64>,
}

/// Samples all components of `ms` at time `t` on the given spatial grid and
/// stochastic points.
pub fn sample_components(
    ms: &dyn ModalEval,
    t: f64,
    grid: &[f64],
    pts: &StochasticPoints,
) -> SampledComponents {
    let n = ms.n_modes();
    let mean = Array1::from_shape_fn(grid.len(), |k| ms.mean_jet(grid[k], t).value);
    let mut modes = Array2::zeros((grid.len(), n));
    for (k, &x) in grid.iter().enumerate() {
        let m = ms.modes_jet(x, t);
        for i in 0..n {
            modes[[k, i]] = m[i].value;
        }
    }
    let scales: Vec<f64> = ms.scales_jet(t).iter().map(|j| j.value).collect();
    let mut coeffs = Array2::zeros((pts.len(), n));
    for l in 0..pts.len() {
        let xi: Vec<f64> = pts.points.row(l).to_vec();
        let y = ms.coeffs_jet(&xi, t);
        for i in 0..n {
            coeffs[[l, i]] = y[i].value;
        }
    }
    SampledComponents {
        mean,
        modes,
        scales,
        coeffs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpSpec;
    use crate::quad::{normal_quadrature, PointKind};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2 as A2;

    fn tiny_solution(n_modes: usize, stoch_dim: usize) -> ModalSolution {
        ModalSolution {
            ubar_net: Mlp::init(&MlpSpec::new(vec![2, 6, 1]), 1).unwrap(),
            u_net: Mlp::init(&MlpSpec::new(vec![2, 6, n_modes]), 2).unwrap(),
            y_net: Mlp::init(&MlpSpec::new(vec![stoch_dim + 1, 6, n_modes]), 3).unwrap(),
            a_net: ScalingNet::Joint(Mlp::init(&MlpSpec::new(vec![1, 4, n_modes]), 4).unwrap()),
            n_modes,
            meta: SolutionMeta {
                x_domain: (-1.0, 1.0),
                t_domain: (0.0, 1.0),
                stoch_dim,
                xi_affine: None,
            },
        }
    }

    /// With every a_i equal to zero the reconstruction is the mean network
    /// and the variance vanishes.
    #[test]
    fn zero_scales_reconstruct_is_mean() {
        let mut ms = tiny_solution(1, 1);
        if let ScalingNet::Joint(net) = &mut ms.a_net {
            let count = net.param_count();
            net.read_params(&vec![0.0; count]).unwrap();
        }
        let u = reconstruct(&ms, 0.3, 0.5, &[0.7]).unwrap();
        assert_abs_diff_eq!(u, mean_field(&ms, 0.3, 0.5), epsilon = 1e-15);
        let pts = normal_quadrature(8, 1.0).unwrap();
        assert_abs_diff_eq!(variance_field(&ms, 0.3, 0.5, &pts), 0.0, epsilon = 1e-18);
    }

    #[test]
    fn reconstruct_checks_xi_length() {
        let ms = tiny_solution(2, 3);
        assert!(reconstruct(&ms, 0.0, 0.0, &[1.0]).is_err());
    }

    /// Jet derivatives of the reconstruction match finite differences.
    #[test]
    fn reconstruct_jet_matches_fd() {
        let ms = tiny_solution(2, 1);
        let (x, t, xi) = (0.4, 0.6, [0.3]);
        let jet = reconstruct_jet(&ms, x, t, &xi).unwrap();
        let h = 1e-5;
        let up = reconstruct(&ms, x, t + h, &xi).unwrap();
        let dn = reconstruct(&ms, x, t - h, &xi).unwrap();
        let fd_t = (up - dn) / (2.0 * h);
        assert!((jet.d_dt - fd_t).abs() / fd_t.abs().max(1e-3) < 1e-5);
        let up = reconstruct(&ms, x + h, t, &xi).unwrap();
        let dn = reconstruct(&ms, x - h, t, &xi).unwrap();
        let fd_x = (up - dn) / (2.0 * h);
        assert!((jet.d_dx - fd_x).abs() / fd_x.abs().max(1e-3) < 1e-5);
    }

    /// The expansion is linear in each factor holding the others fixed.
    #[test]
    fn reconstruction_linearity_in_scales() {
        let ms = tiny_solution(2, 1);
        let (x, t, xi) = (0.2, 0.8, [0.4]);
        let base = reconstruct(&ms, x, t, &xi).unwrap();
        let mean = mean_field(&ms, x, t);
        let scales = ms.scales_jet(t);
        let modes = ms.modes_jet(x, t);
        let coeffs = ms.coeffs_jet(&xi, t);
        let fluct: f64 = (0..2)
            .map(|i| scales[i].value * modes[i].value * coeffs[i].value)
            .sum();
        assert_abs_diff_eq!(base, mean + fluct, epsilon = 1e-13);
    }

    /// variance_field equals the weighted sample variance of the
    /// reconstruction over the same points (algebraic identity).
    #[test]
    fn variance_equals_weighted_sample_variance() {
        let ms = tiny_solution(3, 2);
        let rule = crate::quad::gauss_legendre(6).unwrap();
        let mapped = crate::quad::map_rule(&rule, 0.0, 1.0).unwrap();
        let mut pts_mat = A2::zeros((36, 2));
        let mut w = vec![0.0; 36];
        for i in 0..6 {
            for j in 0..6 {
                pts_mat[[i * 6 + j, 0]] = mapped.nodes[i];
                pts_mat[[i * 6 + j, 1]] = mapped.nodes[j];
                w[i * 6 + j] = mapped.weights[i] * mapped.weights[j];
            }
        }
        let pts = StochasticPoints {
            points: pts_mat,
            weights: w,
            kind: PointKind::Quadrature,
        };
        let (x, t) = (0.15, 0.45);
        let var = variance_field(&ms, x, t, &pts);
        let mut mean = 0.0;
        let mut second = 0.0;
        for l in 0..pts.len() {
            let xi: Vec<f64> = pts.points.row(l).to_vec();
            let u = reconstruct(&ms, x, t, &xi).unwrap();
            mean += pts.weights[l] * u;
            second += pts.weights[l] * u * u;
        }
        let sample_var = second - mean * mean;
        assert_abs_diff_eq!(var, sample_var, epsilon = 1e-10);
    }

    #[test]
    fn covariance_symmetric_and_diag_consistent() {
        let ms = tiny_solution(3, 1);
        let pts = normal_quadrature(12, 0.8).unwrap();
        let c = covariance_y(&ms, 0.3, &pts);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(c[[i, j]], c[[j, i]]);
            }
            let mut second = 0.0;
            for l in 0..pts.len() {
                let xi: Vec<f64> = pts.points.row(l).to_vec();
                let y = ms.coeffs_jet(&xi, 0.3);
                second += pts.weights[l] * y[i].value * y[i].value;
            }
            assert_abs_diff_eq!(c[[i, i]], second, epsilon = 1e-14);
        }
    }

    #[test]
    fn stitched_dispatch_by_time() {
        let mut s1 = tiny_solution(1, 1);
        s1.meta.t_domain = (0.0, 1.0);
        let mut s2 = tiny_solution(1, 1);
        s2.meta.t_domain = (1.0, 2.0);
        let st = StitchedSolution {
            segments: vec![s1.clone(), s2.clone()],
        };
        assert_abs_diff_eq!(
            st.mean_jet(0.1, 0.5).value,
            s1.mean_jet(0.1, 0.5).value,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            st.mean_jet(0.1, 1.5).value,
            s2.mean_jet(0.1, 1.5).value,
            epsilon = 1e-15
        );
    }
}
