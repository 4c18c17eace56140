//! Dense feed-forward networks with nested differentiation.
//!
//! The building blocks: [`Mlp`] (the network itself, with optional periodic
//! input embedding), [`jet::Jet`] forward-mode propagation for input
//! derivatives, [`batch`] for the vectorized jet forward/backward used by
//! training, [`tape::GradTape`] for reverse-mode gradients of assembled
//! losses, and [`adam`] for the optimizer.

pub mod adam;
pub mod batch;
pub mod jet;
pub mod tape;

use crate::error::{Error, Result};
use jet::Jet;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Nonlinearity applied to every layer except the last.
///
/// Only `tanh` is offered: the residual losses differentiate the network
/// twice in space, which rules out piecewise-linear activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
}

/// Periodic input embedding: the raw spatial input x is replaced by the pair
/// (sin(2 pi x / L), cos(2 pi x / L)), which builds the periodic boundary
/// condition into the network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicEmbed {
    /// Length of the periodic domain.
    pub length: f64,
}

/// Network shape: declared widths (raw input dim first, output dim last),
/// activation, and the optional periodic embedding of input 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub embed: Option<PeriodicEmbed>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Self {
        MlpSpec {
            widths,
            activation: Activation::Tanh,
            embed: None,
        }
    }

    pub fn with_embed(mut self, length: f64) -> Self {
        self.embed = Some(PeriodicEmbed { length });
        self
    }
}

/// A dense feed-forward network.
///
/// Layer k maps width_k inputs to width_{k+1} outputs through a weight matrix
/// of shape (width_{k+1}, width_k) and a bias vector; `tanh` is applied after
/// every layer except the last. If the periodic embedding is set, the first
/// raw input is expanded to its (sin, cos) pair before layer 0, so the
/// effective input dimension is one larger than declared.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    activation: Activation,
    embed: Option<PeriodicEmbed>,
}

impl Mlp {
    /// Initializes a network from `spec` with Glorot-uniform weights and zero
    /// biases. Deterministic for a given seed.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        if spec.widths.len() < 2 {
            return Err(Error::config(format!(
                "network needs at least input and output widths, got {:?}",
                spec.widths
            )));
        }
        if spec.widths.iter().any(|&w| w == 0) {
            return Err(Error::config(format!(
                "all layer widths must be positive, got {:?}",
                spec.widths
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = effective_dims(&spec.widths, spec.embed.is_some());
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = Array2::zeros((fan_out, fan_in));
            for r in 0..fan_out {
                for c in 0..fan_in {
                    w[[r, c]] = rng.random_range(-limit..limit);
                }
            }
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp {
            widths: spec.widths.clone(),
            weights,
            biases,
            activation: spec.activation,
            embed: spec.embed,
        })
    }

    pub fn spec(&self) -> MlpSpec {
        MlpSpec {
            widths: self.widths.clone(),
            activation: self.activation,
            embed: self.embed,
        }
    }

    /// Declared (pre-embedding) input dimension.
    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn embed(&self) -> Option<PeriodicEmbed> {
        self.embed
    }

    pub(crate) fn layer(&self, k: usize) -> (&Array2<f64>, &Array1<f64>) {
        (&self.weights[k], &self.biases[k])
    }

    /// Total number of weights and biases.
    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Copies all parameters into `out` in a fixed order (per layer: weights
    /// row-major, then biases). Returns the number written.
    pub fn write_params(&self, out: &mut Vec<f64>) -> usize {
        let start = out.len();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out.len() - start
    }

    /// Loads parameters from a flat slice in the `write_params` order.
    pub fn read_params(&mut self, data: &[f64]) -> Result<usize> {
        if data.len() < self.param_count() {
            return Err(Error::shape(format!(
                "parameter buffer too short: {} < {}",
                data.len(),
                self.param_count()
            )));
        }
        let mut i = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for v in w.iter_mut() {
                *v = data[i];
                i += 1;
            }
            for v in b.iter_mut() {
                *v = data[i];
                i += 1;
            }
        }
        Ok(i)
    }

    /// Applies the in-place update `params[i] += f(i)` style visitor used by
    /// the optimizer; visits parameters in the `write_params` order.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for v in w.iter_mut() {
                f(v);
            }
            for v in b.iter_mut() {
                f(v);
            }
        }
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.widths[0] {
            return Err(Error::shape(format!(
                "input length {} does not match declared input dim {}",
                len, self.widths[0]
            )));
        }
        Ok(())
    }

    /// Standard affine-activation forward pass on raw (pre-embedding) inputs.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let mut a: Vec<f64> = match self.embed {
            Some(PeriodicEmbed { length }) => {
                let arg = 2.0 * std::f64::consts::PI * input[0] / length;
                let mut v = vec![arg.sin(), arg.cos()];
                v.extend_from_slice(&input[1..]);
                v
            }
            None => input.to_vec(),
        };
        let last = self.weights.len() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z: Vec<f64> = b.to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                for (c, &ac) in a.iter().enumerate() {
                    *zr += w[[r, c]] * ac;
                }
            }
            if k < last {
                for zr in z.iter_mut() {
                    *zr = match self.activation {
                        Activation::Tanh => zr.tanh(),
                    };
                }
            }
            a = z;
        }
        Ok(a)
    }

    /// Forward pass on jets: propagates value, d/dx, d^2/dx^2 and d/dt
    /// analytically through the embedding and every layer.
    pub fn forward_jet(&self, input: &[Jet]) -> Result<Vec<Jet>> {
        self.check_input(input.len())?;
        let mut a: Vec<Jet> = match self.embed {
            Some(PeriodicEmbed { length }) => {
                let arg = input[0].scale(2.0 * std::f64::consts::PI / length);
                let mut v = vec![arg.sin(), arg.cos()];
                v.extend_from_slice(&input[1..]);
                v
            }
            None => input.to_vec(),
        };
        let last = self.weights.len() - 1;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z: Vec<Jet> = b.iter().map(|&bb| Jet::constant(bb)).collect();
            for (r, zr) in z.iter_mut().enumerate() {
                for (c, &ac) in a.iter().enumerate() {
                    *zr = *zr + ac.scale(w[[r, c]]);
                }
            }
            if k < last {
                for zr in z.iter_mut() {
                    *zr = match self.activation {
                        Activation::Tanh => zr.tanh(),
                    };
                }
            }
            a = z;
        }
        Ok(a)
    }
}

/// Layer dimensions after applying the embedding to the declared widths.
pub(crate) fn effective_dims(widths: &[usize], embed: bool) -> Vec<usize> {
    let mut dims = widths.to_vec();
    if embed {
        dims[0] += 1;
    }
    dims
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn init_rejects_bad_widths() {
        assert!(Mlp::init(&MlpSpec::new(vec![]), 0).is_err());
        assert!(Mlp::init(&MlpSpec::new(vec![2]), 0).is_err());
        assert!(Mlp::init(&MlpSpec::new(vec![2, 0, 1]), 0).is_err());
    }

    #[test]
    fn init_glorot_bound_and_determinism() {
        let spec = MlpSpec::new(vec![1, 1]);
        let net = Mlp::init(&spec, 42).unwrap();
        let bound = 3f64.sqrt(); // sqrt(6 / (1 + 1))
        let w = net.weights[0][[0, 0]];
        assert!(w.abs() <= bound);
        assert_eq!(net.biases[0][0], 0.0);
        let again = Mlp::init(&spec, 42).unwrap();
        assert_eq!(w.to_bits(), again.weights[0][[0, 0]].to_bits());
    }

    #[test]
    fn param_count_formula() {
        let net = Mlp::init(&MlpSpec::new(vec![2, 32, 32, 32, 1]), 0).unwrap();
        assert_eq!(net.param_count(), 2241); // sum of w_k w_{k+1} + w_{k+1}
        let net = Mlp::init(&MlpSpec::new(vec![2, 32, 32, 32, 1]).with_embed(1.0), 0).unwrap();
        assert_eq!(net.param_count(), 2273); // embedding widens the input to 3
    }

    #[test]
    fn forward_affine_identity() {
        let mut net = Mlp::init(&MlpSpec::new(vec![3, 2]), 1).unwrap();
        net.weights[0].fill(0.0);
        net.biases[0][0] = 0.5;
        net.biases[0][1] = -1.5;
        let y = net.forward(&[9.0, -2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.5, -1.5]);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn forward_single_linear_layer() {
        let mut net = Mlp::init(&MlpSpec::new(vec![1, 1]), 1).unwrap();
        net.weights[0][[0, 0]] = -2.5;
        let y = net.forward(&[1.2]).unwrap();
        assert_abs_diff_eq!(y[0], -3.0, epsilon = 1e-15);
    }

    /// Independent straightforward re-evaluation of the same formula.
    #[test]
    fn forward_matches_naive_reimplementation() {
        let net = Mlp::init(&MlpSpec::new(vec![2, 7, 5, 1]), 9).unwrap();
        let x = [0.3, -1.1];
        let mut a = vec![x[0], x[1]];
        for k in 0..net.n_layers() {
            let (w, b) = net.layer(k);
            let mut z = vec![0.0; w.nrows()];
            for r in 0..w.nrows() {
                z[r] = b[r];
                for c in 0..w.ncols() {
                    z[r] += w[[r, c]] * a[c];
                }
                if k + 1 < net.n_layers() {
                    z[r] = z[r].tanh();
                }
            }
            a = z;
        }
        let y = net.forward(&x).unwrap();
        assert_abs_diff_eq!(y[0], a[0], epsilon = 1e-14);
    }

    #[test]
    fn forward_jet_linear_and_tanh() {
        let mut lin = Mlp::init(&MlpSpec::new(vec![1, 1]), 1).unwrap();
        lin.weights[0][[0, 0]] = 3.5;
        let y = lin.forward_jet(&[Jet::spatial(2.0)]).unwrap();
        assert_abs_diff_eq!(y[0].d_dx, 3.5, epsilon = 1e-15);
        assert_abs_diff_eq!(y[0].d2_dx2, 0.0, epsilon = 1e-15);

        // Network computing tanh(x): [1,1,1] with unit weights, zero biases.
        let mut th = Mlp::init(&MlpSpec::new(vec![1, 1, 1]), 1).unwrap();
        th.weights[0][[0, 0]] = 1.0;
        th.weights[1][[0, 0]] = 1.0;
        th.biases[0][0] = 0.0;
        th.biases[1][0] = 0.0;
        let y = th.forward_jet(&[Jet::spatial(0.0)]).unwrap();
        assert_abs_diff_eq!(y[0].value, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y[0].d_dx, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y[0].d2_dx2, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn forward_jet_matches_finite_differences() {
        let net = Mlp::init(&MlpSpec::new(vec![2, 8, 8, 1]), 5).unwrap();
        let (x, t) = (0.37, 0.81);
        let jets = net
            .forward_jet(&[Jet::spatial(x), Jet::time(t)])
            .unwrap();
        let f = |x: f64, t: f64| net.forward(&[x, t]).unwrap()[0];
        let h = 1e-4;
        let fd_x = (f(x + h, t) - f(x - h, t)) / (2.0 * h);
        let fd_xx = (f(x + h, t) - 2.0 * f(x, t) + f(x - h, t)) / (h * h);
        let fd_t = (f(x, t + h) - f(x, t - h)) / (2.0 * h);
        assert_abs_diff_eq!(jets[0].value, f(x, t), epsilon = 1e-14);
        assert!((jets[0].d_dx - fd_x).abs() / fd_x.abs().max(1e-3) < 1e-5);
        assert!((jets[0].d2_dx2 - fd_xx).abs() / fd_xx.abs().max(1e-3) < 1e-5);
        assert!((jets[0].d_dt - fd_t).abs() / fd_t.abs().max(1e-3) < 1e-5);
    }

    /// With the embedding on [-pi, pi], outputs at the two endpoints match.
    #[test]
    fn periodic_embedding_endpoint_agreement() {
        let pi = std::f64::consts::PI;
        let net = Mlp::init(&MlpSpec::new(vec![2, 16, 16, 1]).with_embed(2.0 * pi), 3).unwrap();
        let lo = net.forward(&[-pi, 0.4]).unwrap()[0];
        let hi = net.forward(&[pi, 0.4]).unwrap()[0];
        assert_abs_diff_eq!(lo, hi, epsilon = 1e-12);
    }

    /// Degree <= 3 polynomials represented by a linear layer over polynomial
    /// features have exact jet derivatives.
    #[test]
    fn jet_polynomial_consistency() {
        // p(x) = 2 - x + 3 x^2 - 0.5 x^3 via features (1, x, x^2, x^3).
        let coef = [2.0, -1.0, 3.0, -0.5];
        let x = 0.73;
        let feats = [
            Jet::constant(1.0),
            Jet::spatial(x),
            Jet::spatial(x) * Jet::spatial(x),
            Jet::spatial(x) * Jet::spatial(x) * Jet::spatial(x),
        ];
        let mut net = Mlp::init(&MlpSpec::new(vec![4, 1]), 0).unwrap();
        for (c, &v) in coef.iter().enumerate() {
            net.weights[0][[0, c]] = v;
        }
        net.biases[0][0] = 0.0;
        let y = net.forward_jet(&feats).unwrap()[0];
        let p = coef[0] + coef[1] * x + coef[2] * x * x + coef[3] * x * x * x;
        let dp = coef[1] + 2.0 * coef[2] * x + 3.0 * coef[3] * x * x;
        let d2p = 2.0 * coef[2] + 6.0 * coef[3] * x;
        assert_abs_diff_eq!(y.value, p, epsilon = 1e-12);
        assert_abs_diff_eq!(y.d_dx, dp, epsilon = 1e-12);
        assert_abs_diff_eq!(y.d2_dx2, d2p, epsilon = 1e-12);
    }
}
