//! Tape-based loss assembly for training.
//!
//! The expansion is separable: every field entering the residual is a sum
//! of products of an (x,t) factor and a (t,xi) factor. Residuals are kept
//! in that factored form — a stack of (t, x, K) coefficients paired with a
//! stack of (t, K, xi) coefficients — so expectations, inner products and
//! the full-tensor mean square all reduce to batched matrix products, and
//! nothing of size n_x * n_t * n_xi is ever materialized. All quantities
//! agree with the pointwise [`super::direct`] path to reassociation error.

use super::{ConstraintKind, LossBreakdown, LossWeights, TrainingGrid};
use crate::error::{Error, Result};
use crate::modal::{InitialComponents, ModalSolution};
use crate::nn::batch::{prepare_inputs, JetArrays, SlotMask};
use crate::nn::tape::{GradTape, Gradients, NetOutputs, NodeId};
use crate::problem::burgers::{forcing_factors, forcing_zbasis};
use crate::problem::{
    BoundaryCondition, BoundaryData, InitialCondition, Observation, Operator, ProblemSpec,
};
use ndarray::{Array2, Array3, ArrayView2};

/// Trainable state: the four networks plus any learnable physical scalars.
#[derive(Debug, Clone)]
pub struct Model {
    pub solution: ModalSolution,
    /// Learnable physical parameters, in problem order.
    pub scalars: Vec<f64>,
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.solution.param_count() + self.scalars.len()
    }

    /// Flat parameters: networks in canonical order, then scalars.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        self.solution.write_params(out);
        out.extend(&self.scalars);
    }

    pub fn read_params(&mut self, data: &[f64]) -> Result<()> {
        let net_count = self.solution.param_count();
        let n_scalars = self.scalars.len();
        self.solution.read_params(&data[..net_count])?;
        for (s, v) in self
            .scalars
            .iter_mut()
            .zip(&data[net_count..net_count + n_scalars])
        {
            *s = *v;
        }
        Ok(())
    }
}

/// Binding of a physical parameter: a fixed value or a learnable scalar.
#[derive(Debug, Clone, Copy)]
enum ParamBinding {
    Fixed(f64),
    Learnable(usize),
}

enum OperatorPlan {
    Zero,
    Advection,
    Burgers { nu: f64 },
    DiffusionReaction { a: ParamBinding, b: ParamBinding },
}

/// Everything fixed for a whole training run: prepared input batches,
/// constant factor stacks, targets, weights.
pub struct EvalPlan {
    pub kind: ConstraintKind,
    pub weights: LossWeights,
    n_modes: usize,
    nt: usize,
    nx: usize,
    nz: usize,
    xt_mask: SlotMask,
    op: OperatorPlan,
    // Prepared input batches.
    in_ub: JetArrays,
    in_u: JetArrays,
    in_y: JetArrays,
    in_a: JetArrays,
    in_ub0: JetArrays,
    in_u0: JetArrays,
    in_y0: JetArrays,
    in_a0: JetArrays,
    in_ub_bnd: Vec<JetArrays>,
    in_u_bnd: Vec<JetArrays>,
    in_ub_sensor: Option<JetArrays>,
    in_ub_obs: Option<JetArrays>,
    // Constants.
    wx: Vec<f64>,
    wz: Vec<f64>,
    xi_col: Vec<f64>,
    forcing_xt: Option<Array3<f64>>,
    forcing_tz: Option<Array3<f64>>,
    ones_tz: Array3<f64>,
    // Dirichlet boundary data: E-ready h values per boundary point, already
    // weighted by wz, shape (nt, 1, nz); `None` for h = 0.
    h_weighted: Option<Vec<Array3<f64>>>,
    // Targets.
    tgt_mean: Array2<f64>,
    tgt_modes: Array2<f64>,
    tgt_scales: Array2<f64>,
    tgt_coeffs: Array2<f64>,
    sensor_vals: Option<Array2<f64>>,
    obs_vals: Option<Array2<f64>>,
}

/// Scalar nodes of the assembled loss.
pub struct LossNodes {
    pub mse_w: NodeId,
    pub mse_ic: NodeId,
    pub mse_bc: NodeId,
    pub mse_constraint: NodeId,
    pub mse_obs: NodeId,
    pub mse_0: NodeId,
    pub total: NodeId,
}

struct SepField {
    xt: NodeId,
    tz: NodeId,
}

impl EvalPlan {
    pub fn new(
        solution: &ModalSolution,
        problem: &ProblemSpec,
        grid: &TrainingGrid,
        ic: &InitialComponents,
        observations: &[Observation],
        kind: ConstraintKind,
        weights: LossWeights,
    ) -> Result<EvalPlan> {
        let (nt, nx, nz) = (grid.n_t(), grid.n_x(), grid.n_xi());
        let n_modes = solution.n_modes;
        let t_off = solution.meta.t_domain.0;
        let needs_uxx = problem.operator.needs_uxx();
        let xt_mask = SlotMask {
            dx: true,
            dxx: needs_uxx,
            dt: true,
        };
        let dt_mask = SlotMask::with_dt();
        let v_mask = SlotMask::value_only();

        // (x, tau) batch, time-major.
        let mut raw_xt = Array2::zeros((nt * nx, 2));
        for (s, &t) in grid.times.iter().enumerate() {
            for (k, &x) in grid.x.iter().enumerate() {
                raw_xt[[s * nx + k, 0]] = x;
                raw_xt[[s * nx + k, 1]] = t - t_off;
            }
        }
        // (xi..., tau) batch, time-major, with the affine input map applied.
        let d = problem.stoch_dim;
        let mut raw_y = Array2::zeros((nt * nz, d + 1));
        for (s, &t) in grid.times.iter().enumerate() {
            for l in 0..nz {
                let xi: Vec<f64> = grid.pts.points.row(l).to_vec();
                let mapped = solution.map_xi(&xi);
                for (j, &v) in mapped.iter().enumerate() {
                    raw_y[[s * nz + l, j]] = v;
                }
                raw_y[[s * nz + l, d]] = t - t_off;
            }
        }
        let mut raw_a = Array2::zeros((nt, 1));
        for (s, &t) in grid.times.iter().enumerate() {
            raw_a[[s, 0]] = t - t_off;
        }

        let tau0 = grid.t0 - t_off;
        let mut raw_xt0 = Array2::zeros((nx, 2));
        for (k, &x) in grid.x.iter().enumerate() {
            raw_xt0[[k, 0]] = x;
            raw_xt0[[k, 1]] = tau0;
        }
        let mut raw_y0 = Array2::zeros((nz, d + 1));
        for l in 0..nz {
            let xi: Vec<f64> = grid.pts.points.row(l).to_vec();
            let mapped = solution.map_xi(&xi);
            for (j, &v) in mapped.iter().enumerate() {
                raw_y0[[l, j]] = v;
            }
            raw_y0[[l, d]] = tau0;
        }
        let raw_a0 = Array2::from_elem((1, 1), tau0);

        let a_nets = solution.a_net.nets();
        let in_a = prepare_nets_a(&a_nets, raw_a.view(), dt_mask)?;
        let in_a0 = prepare_nets_a(&a_nets, raw_a0.view(), v_mask)?;

        // Operator-specific constants.
        let mut xi_col = vec![0.0; nz];
        let mut forcing_xt = None;
        let mut forcing_tz = None;
        let op = match &problem.operator {
            Operator::Zero => OperatorPlan::Zero,
            Operator::Advection => {
                for l in 0..nz {
                    xi_col[l] = grid.pts.points[[l, 0]];
                }
                OperatorPlan::Advection
            }
            Operator::Burgers { nu } => {
                let mut fxt = Array3::zeros((nt, nx, 6));
                for (s, &t) in grid.times.iter().enumerate() {
                    for (k, &x) in grid.x.iter().enumerate() {
                        let f = forcing_factors(*nu, x, t);
                        for m in 0..6 {
                            fxt[[s, k, m]] = f[m];
                        }
                    }
                }
                let mut ftz = Array3::zeros((nt, 6, nz));
                for l in 0..nz {
                    let xi: Vec<f64> = grid.pts.points.row(l).to_vec();
                    let g = forcing_zbasis(&xi);
                    for s in 0..nt {
                        for m in 0..6 {
                            ftz[[s, m, l]] = g[m];
                        }
                    }
                }
                forcing_xt = Some(fxt);
                forcing_tz = Some(ftz);
                OperatorPlan::Burgers { nu: *nu }
            }
            Operator::DiffusionReaction { forcing } => {
                let table = forcing.factor_table(&grid.x); // (nx, 1 + n_kl)
                let kf = table.ncols();
                let mut fxt = Array3::zeros((nt, nx, kf));
                for s in 0..nt {
                    for k in 0..nx {
                        for m in 0..kf {
                            fxt[[s, k, m]] = table[[k, m]];
                        }
                    }
                }
                let mut ftz = Array3::zeros((nt, kf, nz));
                for l in 0..nz {
                    for s in 0..nt {
                        ftz[[s, 0, l]] = 1.0;
                        for m in 1..kf {
                            ftz[[s, m, l]] = grid.pts.points[[l, m - 1]];
                        }
                    }
                }
                forcing_xt = Some(fxt);
                forcing_tz = Some(ftz);
                let mut scalar_idx = 0;
                let mut bind = |learnable: bool, value: f64| {
                    if learnable {
                        let b = ParamBinding::Learnable(scalar_idx);
                        scalar_idx += 1;
                        b
                    } else {
                        ParamBinding::Fixed(value)
                    }
                };
                OperatorPlan::DiffusionReaction {
                    a: bind(problem.params.learnable[0], problem.params.values[0]),
                    b: bind(problem.params.learnable[1], problem.params.values[1]),
                }
            }
        };

        // Dirichlet boundary batches and h data.
        let mut in_ub_bnd = Vec::new();
        let mut in_u_bnd = Vec::new();
        let mut h_weighted = None;
        if let BoundaryCondition::Dirichlet { h } = &problem.bc {
            for &xb in &[problem.x_domain.0, problem.x_domain.1] {
                let mut raw_b = Array2::zeros((nt, 2));
                for (s, &t) in grid.times.iter().enumerate() {
                    raw_b[[s, 0]] = xb;
                    raw_b[[s, 1]] = t - t_off;
                }
                in_ub_bnd.push(prepare_inputs(
                    &solution.ubar_net,
                    raw_b.view(),
                    Some(0),
                    Some(1),
                    v_mask,
                )?);
                in_u_bnd.push(prepare_inputs(
                    &solution.u_net,
                    raw_b.view(),
                    Some(0),
                    Some(1),
                    v_mask,
                )?);
            }
            if let BoundaryData::Fn(hf) = h {
                let mut tables = Vec::new();
                for &xb in &[problem.x_domain.0, problem.x_domain.1] {
                    let mut hv = Array3::zeros((nt, 1, nz));
                    for (s, &t) in grid.times.iter().enumerate() {
                        for l in 0..nz {
                            let xi: Vec<f64> = grid.pts.points.row(l).to_vec();
                            hv[[s, 0, l]] = hf(xb, t, &xi) * grid.pts.weights[l];
                        }
                    }
                    tables.push(hv);
                }
                h_weighted = Some(tables);
            }
        }

        // Sensor / observation batches.
        let mut in_ub_sensor = None;
        let mut sensor_vals = None;
        if let InitialCondition::Sensor {
            locations, values, ..
        } = &problem.ic
        {
            let mut raw_s = Array2::zeros((locations.len(), 2));
            for (r, &x) in locations.iter().enumerate() {
                raw_s[[r, 0]] = x;
                raw_s[[r, 1]] = tau0;
            }
            in_ub_sensor = Some(prepare_inputs(
                &solution.ubar_net,
                raw_s.view(),
                Some(0),
                Some(1),
                v_mask,
            )?);
            sensor_vals = Some(Array2::from_shape_vec((values.len(), 1), values.clone()).unwrap());
        }
        let mut in_ub_obs = None;
        let mut obs_vals = None;
        if !observations.is_empty() {
            problem.check_observations(observations)?;
            let mut raw_o = Array2::zeros((observations.len(), 2));
            let mut vals = Array2::zeros((observations.len(), 1));
            for (r, o) in observations.iter().enumerate() {
                raw_o[[r, 0]] = o.x;
                raw_o[[r, 1]] = o.t - t_off;
                vals[[r, 0]] = o.mean;
            }
            in_ub_obs = Some(prepare_inputs(
                &solution.ubar_net,
                raw_o.view(),
                Some(0),
                Some(1),
                v_mask,
            )?);
            obs_vals = Some(vals);
        }

        let tgt_mean = ic
            .mean
            .clone()
            .into_shape_with_order((nx, 1))
            .expect("mean target shape");
        let tgt_scales = Array2::from_shape_fn((1, n_modes), |(_, i)| ic.scales[i]);

        Ok(EvalPlan {
            kind,
            weights,
            n_modes,
            nt,
            nx,
            nz,
            xt_mask,
            op,
            in_ub: prepare_inputs(&solution.ubar_net, raw_xt.view(), Some(0), Some(1), xt_mask)?,
            in_u: prepare_inputs(&solution.u_net, raw_xt.view(), Some(0), Some(1), xt_mask)?,
            in_y: prepare_inputs(&solution.y_net, raw_y.view(), None, Some(d), dt_mask)?,
            in_a,
            in_ub0: prepare_inputs(&solution.ubar_net, raw_xt0.view(), Some(0), Some(1), v_mask)?,
            in_u0: prepare_inputs(&solution.u_net, raw_xt0.view(), Some(0), Some(1), v_mask)?,
            in_y0: prepare_inputs(&solution.y_net, raw_y0.view(), None, Some(d), v_mask)?,
            in_a0,
            in_ub_bnd,
            in_u_bnd,
            in_ub_sensor,
            in_ub_obs,
            wx: grid.wx.clone(),
            wz: grid.pts.weights.clone(),
            xi_col,
            forcing_xt,
            forcing_tz,
            ones_tz: Array3::ones((nt, 1, nz)),
            h_weighted,
            tgt_mean,
            tgt_modes: ic.modes.clone(),
            tgt_scales,
            tgt_coeffs: ic.coeffs.clone(),
            sensor_vals,
            obs_vals,
        })
    }
}

fn prepare_nets_a(
    nets: &[&crate::nn::Mlp],
    raw: ArrayView2<f64>,
    mask: SlotMask,
) -> Result<JetArrays> {
    // All scaling networks share the same 1-D time input.
    prepare_inputs(nets[0], raw, None, Some(0), mask)
}

/// Applies the scaling networks and returns (value, d/dt) nodes of shape
/// (nt, N).
fn apply_scaling<'a>(
    tape: &mut GradTape<'a>,
    first_net: usize,
    n_nets: usize,
    input: &'a JetArrays,
    dt: bool,
) -> (NodeId, Option<NodeId>) {
    let mask = if dt {
        SlotMask::with_dt()
    } else {
        SlotMask::value_only()
    };
    if n_nets == 1 {
        let out = tape.apply_net(first_net, input, mask);
        (out.v, out.dt)
    } else {
        let outs: Vec<NetOutputs> = (0..n_nets)
            .map(|i| tape.apply_net(first_net + i, input, mask))
            .collect();
        let vs: Vec<NodeId> = outs.iter().map(|o| o.v).collect();
        let v = tape.concat(&vs, 1);
        let t = if dt {
            let ts: Vec<NodeId> = outs.iter().map(|o| o.dt.unwrap()).collect();
            Some(tape.concat(&ts, 1))
        } else {
            None
        };
        (v, t)
    }
}

/// Assembles the full loss on `tape`. Network indices follow
/// `ModalSolution::nets()`: 0 = mean, 1 = modes, 2 = coefficients, 3.. =
/// scalings.
pub fn build_loss<'a>(tape: &mut GradTape<'a>, plan: &'a EvalPlan) -> LossNodes {
    let (nt, nx, nz, n) = (plan.nt, plan.nx, plan.nz, plan.n_modes);

    // Factor evaluations.
    let ub = tape.apply_net(0, &plan.in_ub, plan.xt_mask);
    let uu = tape.apply_net(1, &plan.in_u, plan.xt_mask);
    let yy = tape.apply_net(2, &plan.in_y, SlotMask::with_dt());
    let n_a_nets = tape.n_nets() - 3;
    let (a_v, a_t) = apply_scaling(tape, 3, n_a_nets, &plan.in_a, true);
    let a_t = a_t.expect("scaling dt slot");

    let r3 = |tape: &mut GradTape, id: NodeId, cols: usize| tape.reshape(id, &[nt, nx, cols]);
    let ub_v = r3(tape, ub.v, 1);
    let ub_x = r3(tape, ub.dx.expect("ubar dx"), 1);
    let ub_t = r3(tape, ub.dt.expect("ubar dt"), 1);
    let u_v = r3(tape, uu.v, n);
    let u_x = r3(tape, uu.dx.expect("u dx"), n);
    let u_t = r3(tape, uu.dt.expect("u dt"), n);
    let y_v3 = tape.reshape(yy.v, &[nt, nz, n]);
    let y_t3 = tape.reshape(yy.dt.expect("y dt"), &[nt, nz, n]);
    let y_tz = tape.swap_last2(y_v3);
    let yt_tz = tape.swap_last2(y_t3);

    // tz-side mode factors.
    let ay = tape.mul_pair(y_tz, a_v);
    let at_y = tape.mul_pair(y_tz, a_t);
    let a_yt = tape.mul_pair(yt_tz, a_v);
    let day = tape.add(at_y, a_yt);
    let ones = tape.constant3(plan.ones_tz.clone());

    // Separable fields.
    let u_field = SepField {
        xt: tape.concat(&[ub_v, u_v], 2),
        tz: tape.concat(&[ones, ay], 1),
    };
    let ux_field = SepField {
        xt: tape.concat(&[ub_x, u_x], 2),
        tz: u_field.tz,
    };
    let ut_field = SepField {
        xt: tape.concat(&[ub_t, u_v, u_t], 2),
        tz: tape.concat(&[ones, day, ay], 1),
    };

    // Residual r = u_t - N_x[u] in separable form.
    let r = match &plan.op {
        OperatorPlan::Zero => SepField {
            xt: ut_field.xt,
            tz: ut_field.tz,
        },
        OperatorPlan::Advection => {
            // r = u_t + xi u_x.
            let xi_ux = tape.mul_axis_vec(ux_field.tz, &plan.xi_col, 2);
            SepField {
                xt: tape.concat(&[ut_field.xt, ux_field.xt], 2),
                tz: tape.concat(&[ut_field.tz, xi_ux], 1),
            }
        }
        OperatorPlan::Burgers { nu } => {
            // r = u_t + u u_x - nu u_xx - f.
            let ub_xx = r3(tape, ub.dxx.expect("ubar dxx"), 1);
            let u_xx = r3(tape, uu.dxx.expect("u dxx"), n);
            let uxx_xt = tape.concat(&[ub_xx, u_xx], 2);
            let prod_xt = tape.outer_last(u_field.xt, ux_field.xt);
            let prod_tz = tape.outer_mid(u_field.tz, ux_field.tz);
            let nuxx = tape.scale(uxx_xt, -*nu);
            let fxt = tape.constant3(plan.forcing_xt.clone().expect("burgers forcing"));
            let ftz = tape.constant3(plan.forcing_tz.clone().expect("burgers forcing"));
            let neg_fxt = tape.scale(fxt, -1.0);
            SepField {
                xt: tape.concat(&[ut_field.xt, prod_xt, nuxx, neg_fxt], 2),
                tz: tape.concat(&[ut_field.tz, prod_tz, u_field.tz, ftz], 1),
            }
        }
        OperatorPlan::DiffusionReaction { a, b } => {
            // r = u_t - a u_xx - b u^2 - f.
            let ub_xx = r3(tape, ub.dxx.expect("ubar dxx"), 1);
            let u_xx = r3(tape, uu.dxx.expect("u dxx"), n);
            let uxx_xt = tape.concat(&[ub_xx, u_xx], 2);
            let a_uxx = bind_scale(tape, uxx_xt, *a);
            let neg_a_uxx = tape.scale(a_uxx, -1.0);
            let sq_xt = tape.outer_last(u_field.xt, u_field.xt);
            let sq_tz = tape.outer_mid(u_field.tz, u_field.tz);
            let b_sq = bind_scale(tape, sq_xt, *b);
            let neg_b_sq = tape.scale(b_sq, -1.0);
            let fxt = tape.constant3(plan.forcing_xt.clone().expect("dr forcing"));
            let ftz = tape.constant3(plan.forcing_tz.clone().expect("dr forcing"));
            let neg_fxt = tape.scale(fxt, -1.0);
            // The u_xx term shares the tz factors of u.
            SepField {
                xt: tape.concat(&[ut_field.xt, neg_a_uxx, neg_b_sq, neg_fxt], 2),
                tz: tape.concat(&[ut_field.tz, u_field.tz, sq_tz, ftz], 1),
            }
        }
    };

    // Weak residuals.
    let rtz_w = tape.mul_axis_vec(r.tz, &plan.wz, 2);
    let ez = tape.sum_axis(rtz_w, 2);
    let k_r = tape.value(ez).shape()[1];
    let ez3 = tape.reshape(ez, &[nt, k_r, 1]);
    let e1 = tape.bmm(r.xt, ez3, false, false);
    let mse1 = tape.sum_sq(e1, 1.0 / (nx * nt) as f64);
    let myd = tape.bmm(rtz_w, y_v3, false, false);
    let e3 = tape.bmm(r.xt, myd, false, false);
    let mse3 = tape.sum_sq(e3, 1.0 / (n * nx * nt) as f64);
    let rxt_w = tape.mul_axis_vec(r.xt, &plan.wx, 1);
    let xu = tape.bmm(rxt_w, u_v, true, false);
    let e2 = tape.bmm(xu, r.tz, true, false);
    let mse2 = tape.sum_sq(e2, 1.0 / (n * nt * nz) as f64);
    let mse_w = tape.affine_combine(&[(mse1, 1.0), (mse2, 1.0), (mse3, 1.0)]);

    // Original-equation regularizer.
    let xm = tape.bmm(r.xt, r.xt, true, false);
    let dm = tape.bmm(r.tz, r.tz, false, true);
    let mse_0 = tape.dot(xm, dm, 1.0 / (nx * nt * nz) as f64);

    // DO / BO constraints.
    let y_tz_w = tape.mul_axis_vec(y_tz, &plan.wz, 2);
    let ey = tape.sum_axis(y_tz_w, 2);
    let c1 = tape.sum_sq(ey, 1.0 / (n * nt) as f64);
    let ut_w = tape.mul_axis_vec(u_t, &plan.wx, 1);
    let s_mat = tape.bmm(ut_w, u_v, true, false);
    let mse_constraint = match plan.kind {
        ConstraintKind::Do => {
            let c2 = tape.sum_sq(s_mat, 1.0 / (n * n * nt) as f64);
            let yy_t = tape.mul(y_tz, yt_tz);
            let yy_tw = tape.mul_axis_vec(yy_t, &plan.wz, 2);
            let eyy = tape.sum_axis(yy_tw, 2);
            let c3 = tape.sum_sq(eyy, 1.0 / (n * nt) as f64);
            tape.affine_combine(&[(c1, 1.0), (c2, 1.0), (c3, 1.0)])
        }
        ConstraintKind::Bo => {
            let s_t = tape.swap_last2(s_mat);
            let s_sym = tape.add(s_mat, s_t);
            let c2 = tape.sum_sq(s_sym, 1.0 / (n * n * nt) as f64);
            let m_mat = tape.bmm(y_tz_w, yt_tz, false, true);
            let m_t = tape.swap_last2(m_mat);
            let m_sym = tape.add(m_mat, m_t);
            let c3 = tape.sum_sq(m_sym, 1.0 / (n * nt) as f64);
            tape.affine_combine(&[(c1, 1.0), (c2, 1.0), (c3, 1.0)])
        }
    };

    // Initial condition.
    let ub0 = tape.apply_net(0, &plan.in_ub0, SlotMask::value_only());
    let u0 = tape.apply_net(1, &plan.in_u0, SlotMask::value_only());
    let y0 = tape.apply_net(2, &plan.in_y0, SlotMask::value_only());
    let (a0_v, _) = apply_scaling(tape, 3, n_a_nets, &plan.in_a0, false);
    let mean_ic = match (&plan.in_ub_sensor, &plan.sensor_vals) {
        (Some(inp), Some(vals)) => {
            let s = tape.apply_net(0, inp, SlotMask::value_only());
            let tgt = tape.constant2(vals.clone());
            let d = tape.sub(s.v, tgt);
            tape.sum_sq(d, 1.0 / vals.nrows() as f64)
        }
        _ => {
            let tgt = tape.constant2(plan.tgt_mean.clone());
            let d = tape.sub(ub0.v, tgt);
            tape.sum_sq(d, 1.0 / nx as f64)
        }
    };
    let tgt_u = tape.constant2(plan.tgt_modes.clone());
    let d_u = tape.sub(u0.v, tgt_u);
    let ic_u = tape.sum_sq(d_u, 1.0 / (n * nx) as f64);
    let tgt_a = tape.constant2(plan.tgt_scales.clone());
    let d_a = tape.sub(a0_v, tgt_a);
    let ic_a = tape.sum_sq(d_a, 1.0 / n as f64);
    let tgt_y = tape.constant2(plan.tgt_coeffs.clone());
    let d_y = tape.sub(y0.v, tgt_y);
    let ic_y = tape.sum_sq(d_y, 1.0 / (n * nz) as f64);
    let mse_ic = tape.affine_combine(&[(mean_ic, 1.0), (ic_u, 1.0), (ic_a, 1.0), (ic_y, 1.0)]);

    // Boundary condition (Dirichlet only; periodic is exact by embedding).
    let mse_bc = if plan.in_ub_bnd.is_empty() {
        tape.scalar_const(0.0)
    } else {
        let cy = tape.bmm(y_tz_w, y_tz, false, true);
        let mut parts = Vec::new();
        for b in 0..plan.in_ub_bnd.len() {
            let ub_b = tape.apply_net(0, &plan.in_ub_bnd[b], SlotMask::value_only());
            let u_b = tape.apply_net(1, &plan.in_u_bnd[b], SlotMask::value_only());
            // Mean term: (ubar(x_b, t) - E[h])^2.
            let mean_term = match &plan.h_weighted {
                Some(tables) => {
                    let hw = tape.constant3(tables[b].clone());
                    let eh3 = tape.sum_axis(hw, 2);
                    let d = tape.sub(ub_b.v, eh3);
                    tape.sum_sq(d, 1.0 / nt as f64)
                }
                None => tape.sum_sq(ub_b.v, 1.0 / nt as f64),
            };
            // Mode term: (sum_j C_ij a_j U_j(x_b) - E[h Y_i])^2.
            let v = tape.mul(u_b.v, a_v);
            let v3 = tape.reshape(v, &[nt, n, 1]);
            let w3 = tape.bmm(cy, v3, false, false);
            let w2 = tape.reshape(w3, &[nt, n]);
            let mode_term = match &plan.h_weighted {
                Some(tables) => {
                    let hw = tape.constant3(tables[b].clone());
                    let ehy3 = tape.bmm(hw, y_v3, false, false);
                    let ehy = tape.reshape(ehy3, &[nt, n]);
                    let d = tape.sub(w2, ehy);
                    tape.sum_sq(d, 1.0 / (n * nt) as f64)
                }
                None => tape.sum_sq(w2, 1.0 / (n * nt) as f64),
            };
            parts.push((mean_term, 1.0));
            parts.push((mode_term, 1.0));
        }
        tape.affine_combine(&parts)
    };

    // Observations (inverse runs).
    let mse_obs = match (&plan.in_ub_obs, &plan.obs_vals) {
        (Some(inp), Some(vals)) => {
            let o = tape.apply_net(0, inp, SlotMask::value_only());
            let tgt = tape.constant2(vals.clone());
            let d = tape.sub(o.v, tgt);
            tape.sum_sq(d, 1.0 / vals.nrows() as f64)
        }
        _ => tape.scalar_const(0.0),
    };

    let total = tape.affine_combine(&[
        (mse_w, plan.weights.weak),
        (mse_ic, plan.weights.ic_bc),
        (mse_bc, plan.weights.ic_bc),
        (mse_constraint, plan.weights.ic_bc),
        (mse_obs, plan.weights.ic_bc),
        (mse_0, plan.weights.reg),
    ]);

    LossNodes {
        mse_w,
        mse_ic,
        mse_bc,
        mse_constraint,
        mse_obs,
        mse_0,
        total,
    }
}

fn bind_scale(tape: &mut GradTape<'_>, a: NodeId, binding: ParamBinding) -> NodeId {
    match binding {
        ParamBinding::Fixed(v) => tape.scale(a, v),
        ParamBinding::Learnable(idx) => {
            let s = tape.param_scalar(idx);
            tape.scale_by_scalar(a, s)
        }
    }
}

/// One full loss + gradient evaluation of `model` under `plan`.
pub fn run_epoch(model: &Model, plan: &EvalPlan) -> Result<(LossBreakdown, Gradients)> {
    let mut tape = GradTape::new(model.solution.nets(), model.scalars.clone());
    let nodes = build_loss(&mut tape, plan);
    let breakdown = breakdown_from(&tape, &nodes, plan);
    if !breakdown.is_finite() {
        return Err(Error::Divergence {
            context: "loss evaluation".into(),
            detail: format!("non-finite total loss {}", breakdown.total),
        });
    }
    let grads = tape.backward(nodes.total)?;
    Ok((breakdown, grads))
}

/// Loss only (no gradients), on the same code path as training.
pub fn eval_loss(model: &Model, plan: &EvalPlan) -> Result<LossBreakdown> {
    let mut tape = GradTape::new(model.solution.nets(), model.scalars.clone());
    let nodes = build_loss(&mut tape, plan);
    Ok(breakdown_from(&tape, &nodes, plan))
}

fn breakdown_from(tape: &GradTape<'_>, nodes: &LossNodes, plan: &EvalPlan) -> LossBreakdown {
    LossBreakdown {
        mse_w: tape.scalar_value(nodes.mse_w),
        mse_ic: tape.scalar_value(nodes.mse_ic),
        mse_bc: tape.scalar_value(nodes.mse_bc),
        mse_constraint: tape.scalar_value(nodes.mse_constraint),
        mse_obs: tape.scalar_value(nodes.mse_obs),
        mse_0: tape.scalar_value(nodes.mse_0),
        total: tape.scalar_value(nodes.total),
        kind: plan.kind,
        weights: plan.weights,
    }
}
