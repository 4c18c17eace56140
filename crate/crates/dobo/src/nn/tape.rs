//! Reverse-mode differentiation over recorded array computations.
//!
//! [`GradTape`] records a DAG of array-valued operations — network
//! applications (with jet slots), elementwise arithmetic, batched matrix
//! products, weighted reductions — seals it with a scalar loss, and replays
//! it backwards to produce exact gradients of that loss with respect to
//! every weight and bias of every registered network (and any registered
//! scalar parameters). Inputs to network applications are treated as
//! constants: collocation points are fixed for a whole training run.
//!
//! Evaluation is eager: each recorded node carries its value, so the loss
//! and its diagnostic components can be read off the same tape that is
//! differentiated.

use super::batch::{
    backward_batch, forward_batch, EvalCache, JetArrays, MlpGrads, OutputAdjoints, SlotMask,
};
use super::Mlp;
use crate::error::{Error, Result};
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array3, ArrayD, ArrayView2, ArrayViewD, Axis, IxDyn};

pub type NodeId = usize;

/// Output slot of a network application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Value,
    Dx,
    Dxx,
    Dt,
}

enum Op {
    Const,
    ParamScalar(usize),
    /// Anchor owning a network evaluation; slot nodes refer back to it.
    NetAnchor {
        eval: usize,
    },
    NetSlot {
        eval: usize,
        slot: Slot,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    Square(NodeId),
    /// Tensor times a scalar node.
    ScaleByScalar {
        a: NodeId,
        s: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    /// Swap the last two axes of a rank-3 tensor.
    SwapLast2(NodeId),
    Reshape {
        a: NodeId,
    },
    /// Batched matrix product over axis 0 of two rank-3 tensors.
    Bmm {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    /// Multiply along `axis` by a constant vector (quadrature weights).
    MulAxisVec {
        a: NodeId,
        v: Vec<f64>,
        axis: usize,
    },
    /// Rank-3 (i,j,k) times rank-2 (i,j), broadcast over k.
    MulPair {
        a: NodeId,
        b: NodeId,
    },
    /// Plain sum along `axis` of a rank-3 tensor.
    SumAxis {
        a: NodeId,
        axis: usize,
    },
    /// Pairwise products along the last axis:
    /// out[t,x,i*Kb+j] = a[t,x,i] b[t,x,j].
    OuterLast {
        a: NodeId,
        b: NodeId,
    },
    /// Pairwise products along the middle axis:
    /// out[t,i*Kb+j,l] = a[t,i,l] b[t,j,l].
    OuterMid {
        a: NodeId,
        b: NodeId,
    },
    /// scale * sum of squares of all entries -> scalar.
    SumSq {
        a: NodeId,
        scale: f64,
    },
    /// scale * sum(a .* b) -> scalar.
    Dot {
        a: NodeId,
        b: NodeId,
        scale: f64,
    },
    /// Weighted sum of scalar nodes -> scalar.
    AffineCombine {
        parts: Vec<(NodeId, f64)>,
    },
}

struct Node {
    op: Op,
    val: ArrayD<f64>,
}

struct EvalRecord<'a> {
    net: usize,
    input: &'a JetArrays,
    cache: EvalCache,
}

/// Handles to the slot nodes of one network application.
#[derive(Debug, Clone, Copy)]
pub struct NetOutputs {
    pub v: NodeId,
    pub dx: Option<NodeId>,
    pub dxx: Option<NodeId>,
    pub dt: Option<NodeId>,
}

/// Gradients for every registered network and scalar parameter.
pub struct Gradients {
    pub nets: Vec<MlpGrads>,
    pub scalars: Vec<f64>,
}

impl Gradients {
    /// Flattens all gradients in registration order (nets first, then
    /// scalars), matching the parameter flattening of the model.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for g in &self.nets {
            g.write_flat(out);
        }
        out.extend(&self.scalars);
    }
}

/// A recorded computation over registered networks and scalar parameters.
pub struct GradTape<'a> {
    nets: Vec<&'a Mlp>,
    scalars: Vec<f64>,
    nodes: Vec<Node>,
    evals: Vec<EvalRecord<'a>>,
}

impl<'a> GradTape<'a> {
    pub fn new(nets: Vec<&'a Mlp>, scalars: Vec<f64>) -> Self {
        GradTape {
            nets,
            scalars,
            nodes: Vec::with_capacity(256),
            evals: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, val: ArrayD<f64>) -> NodeId {
        self.nodes.push(Node { op, val });
        self.nodes.len() - 1
    }

    pub fn n_nets(&self) -> usize {
        self.nets.len()
    }

    pub fn value(&self, id: NodeId) -> ArrayViewD<'_, f64> {
        self.nodes[id].val.view()
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id].val[IxDyn(&[])]
    }

    pub fn constant(&mut self, val: ArrayD<f64>) -> NodeId {
        self.push(Op::Const, val)
    }

    pub fn constant2(&mut self, val: Array2<f64>) -> NodeId {
        self.push(Op::Const, val.into_dyn())
    }

    pub fn constant3(&mut self, val: Array3<f64>) -> NodeId {
        self.push(Op::Const, val.into_dyn())
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.push(Op::Const, ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// A learnable scalar (index into the registered scalar parameters).
    pub fn param_scalar(&mut self, idx: usize) -> NodeId {
        let v = self.scalars[idx];
        self.push(Op::ParamScalar(idx), ArrayD::from_elem(IxDyn(&[]), v))
    }

    /// Applies registered network `net` to a prepared constant input batch,
    /// producing one node per active derivative slot.
    pub fn apply_net(&mut self, net: usize, input: &'a JetArrays, mask: SlotMask) -> NetOutputs {
        let cache = forward_batch(self.nets[net], input, mask);
        let eval = self.evals.len();
        let out_v = cache.out.v.clone().into_dyn();
        let out_dx = cache.out.dx.clone();
        let out_dxx = cache.out.dxx.clone();
        let out_dt = cache.out.dt.clone();
        self.evals.push(EvalRecord {
            net,
            input,
            cache,
        });
        // Anchor precedes the slot nodes so that by the time the reverse
        // sweep reaches it every slot adjoint has been accumulated.
        self.push(Op::NetAnchor { eval }, ArrayD::zeros(IxDyn(&[0])));
        let v = self.push(Op::NetSlot { eval, slot: Slot::Value }, out_v);
        let dx = out_dx.map(|a| self.push(Op::NetSlot { eval, slot: Slot::Dx }, a.into_dyn()));
        let dxx = out_dxx.map(|a| self.push(Op::NetSlot { eval, slot: Slot::Dxx }, a.into_dyn()));
        let dt = out_dt.map(|a| self.push(Op::NetSlot { eval, slot: Slot::Dt }, a.into_dyn()));
        NetOutputs { v, dx, dxx, dt }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let val = &self.nodes[a].val + &self.nodes[b].val;
        self.push(Op::Add(a, b), val)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let val = &self.nodes[a].val - &self.nodes[b].val;
        self.push(Op::Sub(a, b), val)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let val = &self.nodes[a].val * &self.nodes[b].val;
        self.push(Op::Mul(a, b), val)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let val = self.nodes[a].val.mapv(|x| -x);
        self.push(Op::Neg(a), val)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let val = self.nodes[a].val.mapv(|x| c * x);
        self.push(Op::Scale(a, c), val)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let val = self.nodes[a].val.mapv(|x| x * x);
        self.push(Op::Square(a), val)
    }

    pub fn scale_by_scalar(&mut self, a: NodeId, s: NodeId) -> NodeId {
        let sv = self.scalar_value(s);
        let val = self.nodes[a].val.mapv(|x| sv * x);
        self.push(Op::ScaleByScalar { a, s }, val)
    }

    /// Concatenates along `axis`; parts must agree on the other axes.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.nodes[p].val.view()).collect();
        let val = ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch");
        self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            val,
        )
    }

    pub fn swap_last2(&mut self, a: NodeId) -> NodeId {
        let v3 = self.as3(a);
        let val = v3.permuted_axes([0, 2, 1]).to_owned().into_dyn();
        self.push(Op::SwapLast2(a), val)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let val = standardize(self.nodes[a].val.clone())
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        self.push(Op::Reshape { a }, val)
    }

    fn as3(&self, a: NodeId) -> ndarray::ArrayView3<'_, f64> {
        self.nodes[a]
            .val
            .view()
            .into_dimensionality()
            .expect("rank-3 tensor expected")
    }

    fn as2(&self, a: NodeId) -> ArrayView2<'_, f64> {
        self.nodes[a]
            .val
            .view()
            .into_dimensionality()
            .expect("rank-2 tensor expected")
    }

    /// Batched matrix product over axis 0: out[t] = opA(a[t]) . opB(b[t]).
    pub fn bmm(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let av = self.as3(a);
        let bv = self.as3(b);
        let nt = av.shape()[0];
        assert_eq!(nt, bv.shape()[0], "bmm: batch dims differ");
        let (m, ka) = if ta {
            (av.shape()[2], av.shape()[1])
        } else {
            (av.shape()[1], av.shape()[2])
        };
        let (kb, n) = if tb {
            (bv.shape()[2], bv.shape()[1])
        } else {
            (bv.shape()[1], bv.shape()[2])
        };
        assert_eq!(ka, kb, "bmm: inner dims differ");
        let mut out = Array3::<f64>::zeros((nt, m, n));
        for t in 0..nt {
            let at = av.index_axis(Axis(0), t);
            let bt = bv.index_axis(Axis(0), t);
            let mut ot = out.index_axis_mut(Axis(0), t);
            match (ta, tb) {
                (false, false) => general_mat_mul(1.0, &at, &bt, 0.0, &mut ot),
                (true, false) => general_mat_mul(1.0, &at.t(), &bt, 0.0, &mut ot),
                (false, true) => general_mat_mul(1.0, &at, &bt.t(), 0.0, &mut ot),
                (true, true) => general_mat_mul(1.0, &at.t(), &bt.t(), 0.0, &mut ot),
            }
        }
        self.push(Op::Bmm { a, b, ta, tb }, out.into_dyn())
    }

    /// Multiplies a rank-3 tensor along `axis` by a constant vector.
    pub fn mul_axis_vec(&mut self, a: NodeId, v: &[f64], axis: usize) -> NodeId {
        let av = self.as3(a);
        assert_eq!(av.shape()[axis], v.len(), "mul_axis_vec: length mismatch");
        let mut out = av.to_owned();
        for (i, mut lane) in out.axis_iter_mut(Axis(axis)).enumerate() {
            lane.mapv_inplace(|x| x * v[i]);
        }
        self.push(
            Op::MulAxisVec {
                a,
                v: v.to_vec(),
                axis,
            },
            out.into_dyn(),
        )
    }

    /// out[i,j,k] = a[i,j,k] * b[i,j].
    pub fn mul_pair(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.as3(a);
        let bv = self.as2(b);
        assert_eq!(av.shape()[0], bv.shape()[0]);
        assert_eq!(av.shape()[1], bv.shape()[1]);
        let mut out = av.to_owned();
        for i in 0..av.shape()[0] {
            for j in 0..av.shape()[1] {
                let s = bv[[i, j]];
                out.index_axis_mut(Axis(0), i)
                    .index_axis_mut(Axis(0), j)
                    .mapv_inplace(|x| x * s);
            }
        }
        self.push(Op::MulPair { a, b }, out.into_dyn())
    }

    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> NodeId {
        let val = self.as3(a).sum_axis(Axis(axis)).into_dyn();
        self.push(Op::SumAxis { a, axis }, val)
    }

    /// out[t,x,i*Kb+j] = a[t,x,i] * b[t,x,j].
    pub fn outer_last(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.as3(a);
        let bv = self.as3(b);
        let (nt, nx, ka) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let kb = bv.shape()[2];
        assert_eq!(nt, bv.shape()[0]);
        assert_eq!(nx, bv.shape()[1]);
        let mut out = Array3::zeros((nt, nx, ka * kb));
        for t in 0..nt {
            for x in 0..nx {
                for i in 0..ka {
                    let ai = av[[t, x, i]];
                    for j in 0..kb {
                        out[[t, x, i * kb + j]] = ai * bv[[t, x, j]];
                    }
                }
            }
        }
        self.push(Op::OuterLast { a, b }, out.into_dyn())
    }

    /// out[t,i*Kb+j,l] = a[t,i,l] * b[t,j,l].
    pub fn outer_mid(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.as3(a);
        let bv = self.as3(b);
        let (nt, ka, nz) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let kb = bv.shape()[1];
        assert_eq!(nt, bv.shape()[0]);
        assert_eq!(nz, bv.shape()[2]);
        let mut out = Array3::zeros((nt, ka * kb, nz));
        for t in 0..nt {
            for i in 0..ka {
                for j in 0..kb {
                    for l in 0..nz {
                        out[[t, i * kb + j, l]] = av[[t, i, l]] * bv[[t, j, l]];
                    }
                }
            }
        }
        self.push(Op::OuterMid { a, b }, out.into_dyn())
    }

    pub fn sum_sq(&mut self, a: NodeId, scale: f64) -> NodeId {
        let s: f64 = self.nodes[a].val.iter().map(|&x| x * x).sum();
        self.push(
            Op::SumSq { a, scale },
            ArrayD::from_elem(IxDyn(&[]), scale * s),
        )
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId, scale: f64) -> NodeId {
        let s: f64 = self.nodes[a]
            .val
            .iter()
            .zip(self.nodes[b].val.iter())
            .map(|(&x, &y)| x * y)
            .sum();
        self.push(
            Op::Dot { a, b, scale },
            ArrayD::from_elem(IxDyn(&[]), scale * s),
        )
    }

    pub fn affine_combine(&mut self, parts: &[(NodeId, f64)]) -> NodeId {
        let s: f64 = parts
            .iter()
            .map(|&(id, w)| w * self.scalar_value(id))
            .sum();
        self.push(
            Op::AffineCombine {
                parts: parts.to_vec(),
            },
            ArrayD::from_elem(IxDyn(&[]), s),
        )
    }

    /// Reverse sweep from the scalar node `root`; returns gradients for all
    /// registered networks and scalar parameters. The tape is not consumed:
    /// repeated calls yield identical gradients.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if root >= self.nodes.len() {
            return Err(Error::State("backward: unknown root node".into()));
        }
        if self.nodes[root].val.ndim() != 0 {
            return Err(Error::State(
                "backward requires a scalar loss at the tape root".into(),
            ));
        }
        let mut adj: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        let mut eval_adj: Vec<OutputAdjoints> = (0..self.evals.len())
            .map(|_| OutputAdjoints::default())
            .collect();
        adj[root] = Some(ArrayD::from_elem(IxDyn(&[]), 1.0));

        let mut grads = Gradients {
            nets: self.nets.iter().map(|n| MlpGrads::zeros_like(n)).collect(),
            scalars: vec![0.0; self.scalars.len()],
        };

        for i in (0..=root).rev() {
            // Anchors fire unconditionally: their inputs are the slot
            // adjoints accumulated above, not a node adjoint.
            if let Op::NetAnchor { eval } = &self.nodes[i].op {
                let rec = &self.evals[*eval];
                backward_batch(
                    self.nets[rec.net],
                    rec.input,
                    &rec.cache,
                    &eval_adj[*eval],
                    &mut grads.nets[rec.net],
                );
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::ParamScalar(idx) => {
                    grads.scalars[*idx] += g[IxDyn(&[])];
                }
                Op::NetAnchor { .. } => unreachable!(),
                Op::NetSlot { eval, slot } => {
                    let g2: Array2<f64> = g.into_dimensionality().expect("slot adjoint rank");
                    let tgt = &mut eval_adj[*eval];
                    let slot_ref = match slot {
                        Slot::Value => &mut tgt.v,
                        Slot::Dx => &mut tgt.dx,
                        Slot::Dxx => &mut tgt.dxx,
                        Slot::Dt => &mut tgt.dt,
                    };
                    OutputAdjoints::accumulate(slot_ref, &g2);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g.mapv(|x| -x));
                }
                Op::Mul(a, b) => {
                    let da = &g * &self.nodes[*b].val;
                    let db = g * &self.nodes[*a].val;
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::Neg(a) => acc(&mut adj, *a, g.mapv(|x| -x)),
                Op::Scale(a, c) => acc(&mut adj, *a, g.mapv(|x| c * x)),
                Op::Square(a) => {
                    let da = 2.0 * &g * &self.nodes[*a].val;
                    acc(&mut adj, *a, da);
                }
                Op::ScaleByScalar { a, s } => {
                    let sv = self.scalar_value(*s);
                    acc(&mut adj, *a, g.mapv(|x| sv * x));
                    let ds: f64 = g
                        .iter()
                        .zip(self.nodes[*a].val.iter())
                        .map(|(&x, &y)| x * y)
                        .sum();
                    acc(&mut adj, *s, ArrayD::from_elem(IxDyn(&[]), ds));
                }
                Op::Concat { parts, axis } => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].val.shape()[*axis];
                        let piece = g
                            .slice_axis(Axis(*axis), ndarray::Slice::from(offset..offset + w))
                            .to_owned();
                        acc(&mut adj, p, piece);
                        offset += w;
                    }
                }
                Op::SwapLast2(a) => {
                    let g3: Array3<f64> = g.into_dimensionality().expect("rank-3 adjoint");
                    acc(&mut adj, *a, g3.permuted_axes([0, 2, 1]).to_owned().into_dyn());
                }
                Op::Reshape { a } => {
                    let shape = self.nodes[*a].val.shape().to_vec();
                    acc(
                        &mut adj,
                        *a,
                        standardize(g)
                            .into_shape_with_order(IxDyn(&shape))
                            .expect("reshape adjoint"),
                    );
                }
                Op::Bmm { a, b, ta, tb } => {
                    let g3: Array3<f64> = g.into_dimensionality().expect("bmm adjoint rank");
                    let av = self.as3(*a);
                    let bv = self.as3(*b);
                    let mut da = Array3::<f64>::zeros((av.shape()[0], av.shape()[1], av.shape()[2]));
                    let mut db = Array3::<f64>::zeros((bv.shape()[0], bv.shape()[1], bv.shape()[2]));
                    for t in 0..av.shape()[0] {
                        let gt = g3.index_axis(Axis(0), t);
                        let at = av.index_axis(Axis(0), t);
                        let bt = bv.index_axis(Axis(0), t);
                        let mut dat = da.index_axis_mut(Axis(0), t);
                        let mut dbt = db.index_axis_mut(Axis(0), t);
                        // O = opA(A) opB(B); dA = g . opB(B)^T (transposed back),
                        // dB = opA(A)^T . g (transposed back).
                        match (*ta, *tb) {
                            (false, false) => {
                                general_mat_mul(1.0, &gt, &bt.t(), 0.0, &mut dat);
                                general_mat_mul(1.0, &at.t(), &gt, 0.0, &mut dbt);
                            }
                            (true, false) => {
                                general_mat_mul(1.0, &bt, &gt.t(), 0.0, &mut dat);
                                general_mat_mul(1.0, &at, &gt, 0.0, &mut dbt);
                            }
                            (false, true) => {
                                general_mat_mul(1.0, &gt, &bt, 0.0, &mut dat);
                                general_mat_mul(1.0, &gt.t(), &at, 0.0, &mut dbt);
                            }
                            (true, true) => {
                                general_mat_mul(1.0, &bt.t(), &gt.t(), 0.0, &mut dat);
                                general_mat_mul(1.0, &gt.t(), &at.t(), 0.0, &mut dbt);
                            }
                        }
                    }
                    acc(&mut adj, *a, da.into_dyn());
                    acc(&mut adj, *b, db.into_dyn());
                }
                Op::MulAxisVec { a, v, axis } => {
                    let mut da = g;
                    for (ix, mut lane) in da.axis_iter_mut(Axis(*axis)).enumerate() {
                        lane.mapv_inplace(|x| x * v[ix]);
                    }
                    acc(&mut adj, *a, da);
                }
                Op::MulPair { a, b } => {
                    let g3: Array3<f64> = g.into_dimensionality().expect("rank-3 adjoint");
                    let av = self.as3(*a);
                    let bv = self.as2(*b);
                    let mut da = g3.clone();
                    let mut db = Array2::<f64>::zeros((bv.shape()[0], bv.shape()[1]));
                    for i in 0..av.shape()[0] {
                        for j in 0..av.shape()[1] {
                            let s = bv[[i, j]];
                            let mut lane = da.index_axis_mut(Axis(0), i);
                            let mut lane = lane.index_axis_mut(Axis(0), j);
                            lane.mapv_inplace(|x| x * s);
                            db[[i, j]] = g3
                                .index_axis(Axis(0), i)
                                .index_axis(Axis(0), j)
                                .iter()
                                .zip(av.index_axis(Axis(0), i).index_axis(Axis(0), j).iter())
                                .map(|(&x, &y)| x * y)
                                .sum();
                        }
                    }
                    acc(&mut adj, *a, da.into_dyn());
                    acc(&mut adj, *b, db.into_dyn());
                }
                Op::SumAxis { a, axis } => {
                    let shape = self.nodes[*a].val.shape().to_vec();
                    let mut da = ArrayD::<f64>::zeros(IxDyn(&shape));
                    for mut lane in da.axis_iter_mut(Axis(*axis)) {
                        lane += &g.view();
                    }
                    acc(&mut adj, *a, da);
                }
                Op::OuterLast { a, b } => {
                    let g3: Array3<f64> = g.into_dimensionality().expect("rank-3 adjoint");
                    let av = self.as3(*a);
                    let bv = self.as3(*b);
                    let (nt, nx, ka) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                    let kb = bv.shape()[2];
                    let mut da = Array3::zeros((nt, nx, ka));
                    let mut db = Array3::zeros((nt, nx, kb));
                    for t in 0..nt {
                        for x in 0..nx {
                            for i in 0..ka {
                                for j in 0..kb {
                                    let gv = g3[[t, x, i * kb + j]];
                                    da[[t, x, i]] += gv * bv[[t, x, j]];
                                    db[[t, x, j]] += gv * av[[t, x, i]];
                                }
                            }
                        }
                    }
                    acc(&mut adj, *a, da.into_dyn());
                    acc(&mut adj, *b, db.into_dyn());
                }
                Op::OuterMid { a, b } => {
                    let g3: Array3<f64> = g.into_dimensionality().expect("rank-3 adjoint");
                    let av = self.as3(*a);
                    let bv = self.as3(*b);
                    let (nt, ka, nz) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                    let kb = bv.shape()[1];
                    let mut da = Array3::zeros((nt, ka, nz));
                    let mut db = Array3::zeros((nt, kb, nz));
                    for t in 0..nt {
                        for i in 0..ka {
                            for j in 0..kb {
                                for l in 0..nz {
                                    let gv = g3[[t, i * kb + j, l]];
                                    da[[t, i, l]] += gv * bv[[t, j, l]];
                                    db[[t, j, l]] += gv * av[[t, i, l]];
                                }
                            }
                        }
                    }
                    acc(&mut adj, *a, da.into_dyn());
                    acc(&mut adj, *b, db.into_dyn());
                }
                Op::SumSq { a, scale } => {
                    let gs = g[IxDyn(&[])];
                    let da = self.nodes[*a].val.mapv(|x| 2.0 * scale * gs * x);
                    acc(&mut adj, *a, da);
                }
                Op::Dot { a, b, scale } => {
                    let gs = g[IxDyn(&[])] * scale;
                    let da = self.nodes[*b].val.mapv(|x| gs * x);
                    let db = self.nodes[*a].val.mapv(|x| gs * x);
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::AffineCombine { parts } => {
                    let gs = g[IxDyn(&[])];
                    for &(id, w) in parts {
                        acc(
                            &mut adj,
                            id,
                            ArrayD::from_elem(IxDyn(&[]), gs * w),
                        );
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn acc(adj: &mut [Option<ArrayD<f64>>], id: NodeId, delta: ArrayD<f64>) {
    match &mut adj[id] {
        Some(a) => *a += &delta,
        None => adj[id] = Some(delta),
    }
}

fn standardize(a: ArrayD<f64>) -> ArrayD<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::batch::prepare_inputs;
    use crate::nn::MlpSpec;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    /// loss = (w x - y)^2 with w = 1, x = 2, y = 0: d loss / d w = 8.
    #[test]
    fn hand_chain_rule() {
        let mut net = Mlp::init(&MlpSpec::new(vec![1, 1]), 0).unwrap();
        net.read_params(&[1.0, 0.0]).unwrap();
        let raw = array![[2.0]];
        let input = prepare_inputs(&net, raw.view(), None, None, SlotMask::value_only()).unwrap();
        let mut tape = GradTape::new(vec![&net], vec![]);
        let out = tape.apply_net(0, &input, SlotMask::value_only());
        let loss = tape.sum_sq(out.v, 1.0);
        assert_abs_diff_eq!(tape.scalar_value(loss), 4.0, epsilon = 1e-15);
        let grads = tape.backward(loss).unwrap();
        assert_abs_diff_eq!(grads.nets[0].w[0][[0, 0]], 8.0, epsilon = 1e-12);
        // d loss / d b = 2 (wx - y) = 4
        assert_abs_diff_eq!(grads.nets[0].b[0][0], 4.0, epsilon = 1e-12);
    }

    /// A loss that never touches the network's second layer bias leaves its
    /// gradient exactly zero; untouched scalar params too.
    #[test]
    fn untouched_parameters_have_zero_gradient() {
        let net = Mlp::init(&MlpSpec::new(vec![1, 3, 1]), 1).unwrap();
        let other = Mlp::init(&MlpSpec::new(vec![1, 2, 1]), 2).unwrap();
        let raw = array![[0.5]];
        let input = prepare_inputs(&net, raw.view(), None, None, SlotMask::value_only()).unwrap();
        let mut tape = GradTape::new(vec![&net, &other], vec![1.5]);
        let out = tape.apply_net(0, &input, SlotMask::value_only());
        let loss = tape.sum_sq(out.v, 1.0);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.nets[1].w.iter().all(|w| w.iter().all(|&x| x == 0.0)));
        assert_eq!(grads.scalars[0], 0.0);
    }

    #[test]
    fn two_backward_passes_identical() {
        let net = Mlp::init(&MlpSpec::new(vec![2, 4, 1]), 3).unwrap();
        let raw = array![[0.3, 0.9], [1.1, -0.2]];
        let mask = SlotMask::full(false);
        let input = prepare_inputs(&net, raw.view(), Some(0), Some(1), mask).unwrap();
        let mut tape = GradTape::new(vec![&net], vec![]);
        let out = tape.apply_net(0, &input, mask);
        let sq = tape.square(out.dx.unwrap());
        let loss = tape.sum_sq(sq, 0.5);
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        for (a, b) in g1.nets[0].w.iter().zip(&g2.nets[0].w) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn backward_requires_scalar_root() {
        let net = Mlp::init(&MlpSpec::new(vec![1, 1]), 0).unwrap();
        let raw = array![[1.0]];
        let input = prepare_inputs(&net, raw.view(), None, None, SlotMask::value_only()).unwrap();
        let mut tape = GradTape::new(vec![&net], vec![]);
        let out = tape.apply_net(0, &input, SlotMask::value_only());
        assert!(matches!(tape.backward(out.v), Err(Error::State(_))));
    }

    /// Gradient of a second-derivative-bearing loss on a random two-hidden-
    /// layer net matches central finite differences.
    #[test]
    fn dxx_loss_gradient_matches_fd() {
        let mut net = Mlp::init(&MlpSpec::new(vec![2, 6, 6, 1]), 11).unwrap();
        let raw = array![[0.1, 0.2], [0.7, -0.9], [-1.3, 0.55]];
        let mask = SlotMask::full(true);

        let loss_of = |tape_net: &Mlp| -> f64 {
            let input =
                prepare_inputs(tape_net, raw.view(), Some(0), Some(1), mask).unwrap();
            let mut tape = GradTape::new(vec![tape_net], vec![]);
            let out = tape.apply_net(0, &input, mask);
            let prod = tape.mul(out.dxx.unwrap(), out.v);
            let loss = tape.sum_sq(prod, 1.0);
            tape.scalar_value(loss)
        };

        let input = prepare_inputs(&net, raw.view(), Some(0), Some(1), mask).unwrap();
        let mut tape = GradTape::new(vec![&net], vec![]);
        let out = tape.apply_net(0, &input, mask);
        let prod = tape.mul(out.dxx.unwrap(), out.v);
        let loss = tape.sum_sq(prod, 1.0);
        let grads = tape.backward(loss).unwrap();
        drop(tape);

        let mut flat = Vec::new();
        net.write_params(&mut flat);
        let mut gflat = Vec::new();
        grads.nets[0].write_flat(&mut gflat);
        let h = 1e-6;
        let mut max_rel: f64 = 0.0;
        for p in 0..flat.len() {
            let orig = flat[p];
            flat[p] = orig + h;
            net.read_params(&flat).unwrap();
            let lp = loss_of(&net);
            flat[p] = orig - h;
            net.read_params(&flat).unwrap();
            let lm = loss_of(&net);
            flat[p] = orig;
            net.read_params(&flat).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (gflat[p] - fd).abs() / fd.abs().max(1e-4);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max rel grad error {max_rel}");
    }

    /// Scalar parameters scaling tensors get correct gradients.
    #[test]
    fn scalar_param_gradient() {
        let net = Mlp::init(&MlpSpec::new(vec![1, 1]), 0).unwrap();
        let mut tape = GradTape::new(vec![&net], vec![3.0]);
        let c = tape.constant2(array![[2.0, -1.0]]);
        let s = tape.param_scalar(0);
        let scaled = tape.scale_by_scalar(c, s);
        let loss = tape.sum_sq(scaled, 1.0); // (3*2)^2 + (3*-1)^2 = 45
        assert_abs_diff_eq!(tape.scalar_value(loss), 45.0, epsilon = 1e-13);
        let grads = tape.backward(loss).unwrap();
        // d/ds [s^2 (4 + 1)] = 2 s 5 = 30
        assert_abs_diff_eq!(grads.scalars[0], 30.0, epsilon = 1e-12);
    }

    #[test]
    fn bmm_matches_manual() {
        let net = Mlp::init(&MlpSpec::new(vec![1, 1]), 0).unwrap();
        let mut tape = GradTape::new(vec![&net], vec![]);
        let a = tape.constant3(ndarray::Array3::from_shape_fn((2, 2, 3), |(t, i, j)| {
            (t + i + 2 * j) as f64
        }));
        let b = tape.constant3(ndarray::Array3::from_shape_fn((2, 3, 2), |(t, i, j)| {
            (1 + t + i) as f64 * (j as f64 - 0.5)
        }));
        let o = tape.bmm(a, b, false, false);
        let ov = tape.value(o);
        for t in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut s = 0.0;
                    for k in 0..3 {
                        s += ((t + i + 2 * k) as f64) * ((1 + t + k) as f64 * (j as f64 - 0.5));
                    }
                    assert_abs_diff_eq!(ov[IxDyn(&[t, i, j])], s, epsilon = 1e-13);
                }
            }
        }
    }
}
