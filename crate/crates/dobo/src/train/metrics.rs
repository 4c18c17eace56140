//! Error metrics between candidate and reference fields.
//!
//! L2 norms use the grid quadrature; relative norms divide by the reference
//! norm. Modes and coefficients are compared after gauge alignment: the
//! expansion is invariant under (u_i, Y_i) -> (-u_i, -Y_i) and trained
//! modes may emerge permuted, so candidates are matched to references by
//! greedily maximizing absolute spatial correlation, then sign-aligned.
//! Mean and variance comparisons are gauge-free and never aligned.

use crate::error::{Error, Result};
use crate::modal::SampledComponents;
use ndarray::Array2;

/// Weighted L2 norm of sampled values.
pub fn l2_norm(values: &[f64], weights: &[f64]) -> f64 {
    values
        .iter()
        .zip(weights)
        .map(|(&v, &w)| w * v * v)
        .sum::<f64>()
        .sqrt()
}

/// Weighted L2 distance.
pub fn l2_error(a: &[f64], b: &[f64], weights: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(weights)
        .map(|((&x, &y), &w)| w * (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Relative weighted L2 distance; rejects an identically-zero reference.
pub fn rel_l2(a: &[f64], b: &[f64], weights: &[f64]) -> Result<f64> {
    let denom = l2_norm(b, weights);
    if denom < 1e-300 {
        return Err(Error::DegenerateReference(
            "relative L2 against a zero reference".into(),
        ));
    }
    Ok(l2_error(a, b, weights) / denom)
}

/// Plain root-mean-square error over sample points.
pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    (s / a.len() as f64).sqrt()
}

/// Greedy mode matching: for each reference column pick the unused
/// candidate column with maximal |<cand, ref>| and the matching sign.
/// Returns (candidate index, sign) per reference mode.
pub fn align_modes(
    cand: &Array2<f64>,
    reference: &Array2<f64>,
    weights: &[f64],
) -> Vec<(usize, f64)> {
    let n = reference.ncols().min(cand.ncols());
    let mut taken = vec![false; cand.ncols()];
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let mut best = (usize::MAX, -1.0f64, 1.0f64);
        for i in 0..cand.ncols() {
            if taken[i] {
                continue;
            }
            let mut ip = 0.0;
            let mut nc = 0.0;
            for k in 0..cand.nrows() {
                ip += weights[k] * cand[[k, i]] * reference[[k, j]];
                nc += weights[k] * cand[[k, i]] * cand[[k, i]];
            }
            let score = ip.abs() / nc.sqrt().max(1e-300);
            if score > best.1 {
                best = (i, score, ip.signum());
            }
        }
        taken[best.0] = true;
        out.push((best.0, best.2));
    }
    out
}

/// One named error entry of a comparison table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct QuantityError {
    pub name: String,
    pub l2: f64,
    pub rel_l2: f64,
}

/// Componentwise errors of candidate components against reference
/// components on a shared grid and point set. Mode-indexed quantities are
/// gauge-aligned first; mean and variance are compared as raw fields by the
/// caller (they are not part of `SampledComponents` comparisons here beyond
/// the mean).
pub fn component_errors(
    cand: &SampledComponents,
    reference: &SampledComponents,
    wx: &[f64],
) -> Result<Vec<QuantityError>> {
    let mut out = Vec::new();
    out.push(QuantityError {
        name: "mean".into(),
        l2: l2_error(
            cand.mean.as_slice().unwrap(),
            reference.mean.as_slice().unwrap(),
            wx,
        ),
        rel_l2: rel_l2(
            cand.mean.as_slice().unwrap(),
            reference.mean.as_slice().unwrap(),
            wx,
        )?,
    });
    let n = reference.scales.len().min(cand.scales.len());
    let alignment = align_modes(&cand.modes, &reference.modes, wx);
    let n_xi = reference.coeffs.nrows();
    let uw = vec![1.0 / n_xi as f64; n_xi];
    for j in 0..n {
        let (i, sign) = alignment[j];
        let cu: Vec<f64> = (0..cand.modes.nrows())
            .map(|k| sign * cand.modes[[k, i]])
            .collect();
        let ru: Vec<f64> = (0..reference.modes.nrows())
            .map(|k| reference.modes[[k, j]])
            .collect();
        out.push(QuantityError {
            name: format!("u_{}", j + 1),
            l2: l2_error(&cu, &ru, wx),
            rel_l2: rel_l2(&cu, &ru, wx)?,
        });
        let ca = cand.scales[i].abs();
        let ra = reference.scales[j].abs();
        out.push(QuantityError {
            name: format!("a_{}", j + 1),
            l2: (ca - ra).abs(),
            rel_l2: (ca - ra).abs() / ra.max(1e-300),
        });
        let cy: Vec<f64> = (0..n_xi).map(|l| sign * cand.coeffs[[l, i]]).collect();
        let ry: Vec<f64> = (0..n_xi).map(|l| reference.coeffs[[l, j]]).collect();
        out.push(QuantityError {
            name: format!("Y_{}", j + 1),
            l2: rmse(&cy, &ry),
            rel_l2: rel_l2(&cy, &ry, &uw)?,
        });
    }
    Ok(out)
}
