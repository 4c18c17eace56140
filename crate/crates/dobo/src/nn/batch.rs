//! Vectorized jet propagation through a network, with the layer caches and
//! reverse pass needed to differentiate jet-bearing losses with respect to
//! the parameters.
//!
//! A batch of inputs is carried as one matrix per derivative slot (value,
//! d/dx, d^2/dx^2, d/dt), so every layer is a handful of GEMMs plus an
//! elementwise activation map. The reverse pass propagates adjoints for all
//! four slots and accumulates weight/bias gradients; collocation inputs are
//! constants, so no input adjoints are produced.

use super::{effective_dims, Activation, Mlp, PeriodicEmbed};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2};

/// Which derivative slots to propagate (the value slot is always on).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotMask {
    pub dx: bool,
    pub dxx: bool,
    pub dt: bool,
}

impl SlotMask {
    pub fn value_only() -> Self {
        SlotMask {
            dx: false,
            dxx: false,
            dt: false,
        }
    }

    pub fn with_dt() -> Self {
        SlotMask {
            dx: false,
            dxx: false,
            dt: true,
        }
    }

    pub fn full(dxx: bool) -> Self {
        SlotMask {
            dx: true,
            dxx,
            dt: true,
        }
    }
}

/// A batch of jets: one (batch x width) matrix per active slot.
#[derive(Debug, Clone)]
pub struct JetArrays {
    pub v: Array2<f64>,
    pub dx: Option<Array2<f64>>,
    pub dxx: Option<Array2<f64>>,
    pub dt: Option<Array2<f64>>,
}

impl JetArrays {
    pub fn rows(&self) -> usize {
        self.v.nrows()
    }

    fn zeros(n: usize, w: usize, mask: SlotMask) -> Self {
        JetArrays {
            v: Array2::zeros((n, w)),
            dx: mask.dx.then(|| Array2::zeros((n, w))),
            dxx: mask.dxx.then(|| Array2::zeros((n, w))),
            dt: mask.dt.then(|| Array2::zeros((n, w))),
        }
    }
}

/// Adjoints with respect to a network's output slots; `None` means zero.
#[derive(Debug, Clone, Default)]
pub struct OutputAdjoints {
    pub v: Option<Array2<f64>>,
    pub dx: Option<Array2<f64>>,
    pub dxx: Option<Array2<f64>>,
    pub dt: Option<Array2<f64>>,
}

impl OutputAdjoints {
    pub fn is_zero(&self) -> bool {
        self.v.is_none() && self.dx.is_none() && self.dxx.is_none() && self.dt.is_none()
    }

    pub fn accumulate(slot: &mut Option<Array2<f64>>, delta: &Array2<f64>) {
        match slot {
            Some(a) => *a += delta,
            None => *slot = Some(delta.clone()),
        }
    }
}

/// Parameter gradients with the same layout as the network.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        let mut w = Vec::with_capacity(net.n_layers());
        let mut b = Vec::with_capacity(net.n_layers());
        for k in 0..net.n_layers() {
            let (wk, bk) = net.layer(k);
            w.push(Array2::zeros(wk.raw_dim()));
            b.push(Array1::zeros(bk.raw_dim()));
        }
        MlpGrads { w, b }
    }

    /// Appends all gradients in the `Mlp::write_params` order.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
    }
}

/// Per-hidden-layer cache from the forward pass.
struct HiddenRecord {
    /// Post-activation jets (= input of the next layer); `act.v` holds tanh.
    act: JetArrays,
    /// Pre-activation derivative slots.
    zx: Option<Array2<f64>>,
    zxx: Option<Array2<f64>>,
    zt: Option<Array2<f64>>,
}

/// Everything the reverse pass needs, plus the network output jets.
pub struct EvalCache {
    hidden: Vec<HiddenRecord>,
    pub out: JetArrays,
    mask: SlotMask,
}

/// Builds the (possibly embedded) input jet arrays for a batch of raw points.
///
/// `spatial_col`/`time_col` designate which raw columns carry the d/dx and
/// d/dt seeds. When the network has a periodic embedding, the spatial column
/// must be column 0; it is replaced by the (sin, cos) pair with analytically
/// seeded derivatives.
pub fn prepare_inputs(
    net: &Mlp,
    raw: ArrayView2<f64>,
    spatial_col: Option<usize>,
    time_col: Option<usize>,
    mask: SlotMask,
) -> Result<JetArrays> {
    if raw.ncols() != net.input_dim() {
        return Err(Error::shape(format!(
            "batch input has {} columns, network expects {}",
            raw.ncols(),
            net.input_dim()
        )));
    }
    if mask.dxx && !mask.dx {
        return Err(Error::State(
            "second spatial derivatives require the first-derivative slot".into(),
        ));
    }
    if (mask.dx || mask.dxx) && spatial_col.is_none() {
        return Err(Error::config(
            "spatial derivative slots requested without a spatial column",
        ));
    }
    if mask.dt && time_col.is_none() {
        return Err(Error::config(
            "time derivative slot requested without a time column",
        ));
    }
    let n = raw.nrows();
    match net.embed() {
        Some(PeriodicEmbed { length }) => {
            if spatial_col != Some(0) {
                return Err(Error::config(
                    "periodic embedding requires the spatial input in column 0",
                ));
            }
            let d = raw.ncols() + 1;
            let omega = 2.0 * std::f64::consts::PI / length;
            let mut out = JetArrays::zeros(n, d, mask);
            for i in 0..n {
                let arg = omega * raw[[i, 0]];
                let (s, c) = arg.sin_cos();
                out.v[[i, 0]] = s;
                out.v[[i, 1]] = c;
                for j in 1..raw.ncols() {
                    out.v[[i, j + 1]] = raw[[i, j]];
                }
                if let Some(dx) = out.dx.as_mut() {
                    dx[[i, 0]] = omega * c;
                    dx[[i, 1]] = -omega * s;
                }
                if let Some(dxx) = out.dxx.as_mut() {
                    dxx[[i, 0]] = -omega * omega * s;
                    dxx[[i, 1]] = -omega * omega * c;
                }
                if let (Some(dt), Some(tc)) = (out.dt.as_mut(), time_col) {
                    dt[[i, tc + 1]] = 1.0;
                }
            }
            Ok(out)
        }
        None => {
            let mut out = JetArrays::zeros(n, raw.ncols(), mask);
            out.v.assign(&raw);
            if let (Some(dx), Some(sc)) = (out.dx.as_mut(), spatial_col) {
                dx.column_mut(sc).fill(1.0);
            }
            if let (Some(dt), Some(tc)) = (out.dt.as_mut(), time_col) {
                dt.column_mut(tc).fill(1.0);
            }
            Ok(out)
        }
    }
}

fn affine_slot(a: &Array2<f64>, w: &Array2<f64>, out: &mut Array2<f64>) {
    ndarray::linalg::general_mat_mul(1.0, a, &w.t(), 0.0, out);
}

/// Runs the per-slot affine maps, in parallel when worthwhile.
fn affine_all(a: &JetArrays, w: &Array2<f64>, z: &mut JetArrays, n: usize) {
    let parallel = n * w.nrows() * w.ncols() > 64 * 1024 && crate::worker_threads() > 1;
    let mut jobs: Vec<(&Array2<f64>, &mut Array2<f64>)> = Vec::with_capacity(4);
    jobs.push((&a.v, &mut z.v));
    if let (Some(zx), Some(ax)) = (z.dx.as_mut(), a.dx.as_ref()) {
        jobs.push((ax, zx));
    }
    if let (Some(zxx), Some(axx)) = (z.dxx.as_mut(), a.dxx.as_ref()) {
        jobs.push((axx, zxx));
    }
    if let (Some(zt), Some(at)) = (z.dt.as_mut(), a.dt.as_ref()) {
        jobs.push((at, zt));
    }
    if parallel && jobs.len() > 1 {
        use rayon::prelude::*;
        jobs.into_par_iter()
            .for_each(|(src, dst)| affine_slot(src, w, dst));
    } else {
        for (src, dst) in jobs {
            affine_slot(src, w, dst);
        }
    }
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

/// Forward pass over a prepared input batch, caching what backward needs.
pub fn forward_batch(net: &Mlp, input: &JetArrays, mask: SlotMask) -> EvalCache {
    let dims = effective_dims(&net.spec().widths, net.embed().is_some());
    debug_assert_eq!(input.v.ncols(), dims[0]);
    let n = input.rows();
    let n_layers = net.n_layers();
    let mut hidden: Vec<HiddenRecord> = Vec::with_capacity(n_layers.saturating_sub(1));

    for k in 0..n_layers {
        let (w, b) = net.layer(k);
        let width = w.nrows();
        let mut z = JetArrays::zeros(n, width, mask);
        {
            let a: &JetArrays = if k == 0 { input } else { &hidden[k - 1].act };
            affine_all(a, w, &mut z, n);
            for mut row in z.v.rows_mut() {
                row += b;
            }
        }

        if k + 1 == n_layers {
            // Linear output layer.
            return EvalCache {
                hidden,
                out: z,
                mask,
            };
        }

        // Activation: v = tanh(z), with slot maps
        //   vx  = s zx,  vxx = s zxx - 2 T s zx^2,  vt = s zt,  s = 1 - T^2.
        let mut act = JetArrays::zeros(n, width, mask);
        let zx = z.dx;
        let zxx = z.dxx;
        let zt = z.dt;
        match net.spec().activation {
            Activation::Tanh => {
                act.v.zip_mut_with(&z.v, |t, &zz| *t = zz.tanh());
            }
        }
        let tv = slice2(&act.v);
        if let (Some(vx), Some(zx)) = (act.dx.as_mut(), zx.as_ref()) {
            let (vx, zx) = (slice2_mut(vx), slice2(zx));
            for i in 0..tv.len() {
                vx[i] = (1.0 - tv[i] * tv[i]) * zx[i];
            }
        }
        if let (Some(vxx), Some(zxx)) = (act.dxx.as_mut(), zxx.as_ref()) {
            let zx = slice2(zx.as_ref().expect("dxx slot requires dx slot"));
            let (vxx, zxx) = (slice2_mut(vxx), slice2(zxx));
            for i in 0..tv.len() {
                let s = 1.0 - tv[i] * tv[i];
                vxx[i] = s * zxx[i] - 2.0 * tv[i] * s * zx[i] * zx[i];
            }
        }
        if let (Some(vt), Some(zt)) = (act.dt.as_mut(), zt.as_ref()) {
            let (vt, zt) = (slice2_mut(vt), slice2(zt));
            for i in 0..tv.len() {
                vt[i] = (1.0 - tv[i] * tv[i]) * zt[i];
            }
        }
        hidden.push(HiddenRecord { act, zx, zxx, zt });
    }
    unreachable!("network has at least one layer");
}

/// Reverse pass: accumulates parameter gradients for a forward evaluation.
///
/// `input` must be the same batch that produced `cache`.
pub fn backward_batch(
    net: &Mlp,
    input: &JetArrays,
    cache: &EvalCache,
    out_adj: &OutputAdjoints,
    grads: &mut MlpGrads,
) {
    if out_adj.is_zero() {
        return;
    }
    let n_layers = net.n_layers();
    let mask = cache.mask;

    // Adjoint of the current layer's pre-activation jets.
    let mut gv = out_adj.v.clone();
    let mut gx = out_adj.dx.clone();
    let mut gxx = out_adj.dxx.clone();
    let mut gt = out_adj.dt.clone();

    for k in (0..n_layers).rev() {
        let (w, _) = net.layer(k);
        let a: &JetArrays = if k == 0 {
            input
        } else {
            &cache.hidden[k - 1].act
        };

        // Affine backward: accumulate grads, then push adjoints to the input.
        let grad_jobs: Vec<(&Array2<f64>, &Array2<f64>)> = [
            (gv.as_ref(), Some(&a.v)),
            (gx.as_ref(), a.dx.as_ref()),
            (gxx.as_ref(), a.dxx.as_ref()),
            (gt.as_ref(), a.dt.as_ref()),
        ]
        .into_iter()
        .filter_map(|(g, src)| match (g, src) {
            (Some(g), Some(src)) => Some((g, src)),
            _ => None,
        })
        .collect();
        let parallel = grad_jobs
            .iter()
            .map(|(g, _)| g.len() * w.ncols())
            .sum::<usize>()
            > 256 * 1024
            && crate::worker_threads() > 1
            && grad_jobs.len() > 1;
        if parallel {
            use rayon::prelude::*;
            let partials: Vec<Array2<f64>> = grad_jobs
                .par_iter()
                .map(|(g, src)| {
                    let mut p = Array2::zeros(grads.w[k].raw_dim());
                    ndarray::linalg::general_mat_mul(1.0, &g.t(), src, 0.0, &mut p);
                    p
                })
                .collect();
            for p in partials {
                grads.w[k] += &p;
            }
        } else {
            for (g, src) in &grad_jobs {
                ndarray::linalg::general_mat_mul(1.0, &g.t(), src, 1.0, &mut grads.w[k]);
            }
        }
        if let Some(g) = gv.as_ref() {
            for (j, col) in g.t().rows().into_iter().enumerate() {
                grads.b[k][j] += col.sum();
            }
        }
        if k == 0 {
            break;
        }

        let push_parallel = crate::worker_threads() > 1;
        let push_one = |g: &Array2<f64>| -> Array2<f64> {
            let mut out = Array2::zeros((g.nrows(), w.ncols()));
            ndarray::linalg::general_mat_mul(1.0, g, w, 0.0, &mut out);
            out
        };
        let (av, ax, axx, at) = if push_parallel {
            use rayon::prelude::*;
            let inputs = [gv.as_ref(), gx.as_ref(), gxx.as_ref(), gt.as_ref()];
            let mut outs: Vec<Option<Array2<f64>>> = inputs
                .into_par_iter()
                .map(|g| g.map(push_one))
                .collect();
            let at = outs.pop().unwrap();
            let axx = outs.pop().unwrap();
            let ax = outs.pop().unwrap();
            let av = outs.pop().unwrap();
            (av, ax, axx, at)
        } else {
            (
                gv.as_ref().map(push_one),
                gx.as_ref().map(push_one),
                gxx.as_ref().map(push_one),
                gt.as_ref().map(push_one),
            )
        };

        // Activation backward for hidden layer k-1, one vectorized pass per
        // active slot.
        let rec = &cache.hidden[k - 1];
        let t = slice2(&rec.act.v);
        let n = rec.act.v.nrows();
        let width = rec.act.v.ncols();
        let mut zv = Array2::zeros((n, width));
        let mut zx_adj =
            (mask.dx && (ax.is_some() || axx.is_some())).then(|| Array2::zeros((n, width)));
        let mut zxx_adj = (mask.dxx && axx.is_some()).then(|| Array2::zeros((n, width)));
        let mut zt_adj = (mask.dt && at.is_some()).then(|| Array2::zeros((n, width)));

        {
            let zvs = slice2_mut(&mut zv);
            if let Some(av) = av.as_ref() {
                let av = slice2(av);
                for i in 0..zvs.len() {
                    zvs[i] = av[i] * (1.0 - t[i] * t[i]);
                }
            }
            if let Some(ax) = ax.as_ref() {
                let ax = slice2(ax);
                let zx = slice2(rec.zx.as_ref().expect("dx cache"));
                let za = slice2_mut(zx_adj.as_mut().expect("dx adjoint"));
                for i in 0..zvs.len() {
                    let s = 1.0 - t[i] * t[i];
                    zvs[i] += ax[i] * (-2.0 * t[i] * s) * zx[i];
                    za[i] += ax[i] * s;
                }
            }
            if let Some(axx) = axx.as_ref() {
                let axx = slice2(axx);
                let zx = slice2(rec.zx.as_ref().expect("dx cache"));
                let zxx = slice2(rec.zxx.as_ref().expect("dxx cache"));
                let za = slice2_mut(zx_adj.as_mut().expect("dx adjoint"));
                let zxa = slice2_mut(zxx_adj.as_mut().expect("dxx adjoint"));
                for i in 0..zvs.len() {
                    let tv = t[i];
                    let s = 1.0 - tv * tv;
                    let tpp = -2.0 * tv * s;
                    let tppp = -2.0 * s * (1.0 - 3.0 * tv * tv);
                    zvs[i] += axx[i] * (tppp * zx[i] * zx[i] + tpp * zxx[i]);
                    za[i] += axx[i] * 2.0 * tpp * zx[i];
                    zxa[i] += axx[i] * s;
                }
            }
            if let Some(at) = at.as_ref() {
                let at = slice2(at);
                let zt = slice2(rec.zt.as_ref().expect("dt cache"));
                let zta = slice2_mut(zt_adj.as_mut().expect("dt adjoint"));
                for i in 0..zvs.len() {
                    let tv = t[i];
                    let s = 1.0 - tv * tv;
                    zvs[i] += at[i] * (-2.0 * tv * s) * zt[i];
                    zta[i] += at[i] * s;
                }
            }
        }

        gv = Some(zv);
        gx = zx_adj;
        gxx = zxx_adj;
        gt = zt_adj;
    }
}
