//! Tape-based reverse-mode differentiation over flat row-major arrays.
//!
//! The engine is deliberately small: it provides exactly the operations the
//! attention blocks, the ROI/CBAM block, the losses, and the backbone need,
//! each with a hand-written backward rule that is checked against central
//! finite differences (see [`gradcheck`]).
//!
//! All arithmetic is in `f64`. Broadcasting is restricted to the few cases
//! with auditable backward rules: scalar constants ([`Tape::scale`],
//! [`Tape::add_const`]), per-channel gates ([`Tape::mul_channel`],
//! [`Tape::add_channel`]), per-position gates ([`Tape::mul_spatial`]), and
//! trailing-suffix bias addition ([`Tape::add_bias`]).

mod backward;
pub mod gradcheck;
pub mod serial;

use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};

/// N-dimensional real array with an accumulated gradient.
///
/// `values.len() == grad.len() == product(shape)` always holds; `grad` is
/// zero right after construction and after [`Tensor::zero_grad`].
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!(
                "tensor shape {:?} implies {} elements, got {}",
                shape,
                n,
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            grad: vec![0.0; values.len()],
            values,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
            grad: vec![0.0; n],
            requires_grad: false,
        }
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            values: vec![v; n],
            grad: vec![0.0; n],
            requires_grad: false,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            values: vec![v],
            grad: vec![0.0],
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for parameter updates. Recorded ops never call this.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        &mut self.grad
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Row-major strides for a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Row-major walk over `shape` calling `f(flat, mapped)`, where `mapped`
/// advances by `map_strides[d]` along dimension d (zero strides collapse a
/// dimension). Odometer carries instead of per-element div/mod.
pub(crate) fn for_each_mapped(shape: &[usize], map_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n: usize = shape.iter().product();
    if n == 0 {
        return;
    }
    let rank = shape.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let mut coords = vec![0usize; rank];
    let mut mapped = 0usize;
    for flat in 0..n {
        f(flat, mapped);
        for d in (0..rank).rev() {
            coords[d] += 1;
            mapped += map_strides[d];
            if coords[d] < shape[d] {
                break;
            }
            mapped -= map_strides[d] * shape[d];
            coords[d] = 0;
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PoolKind {
    /// B×C×H×W → B×C×1×1, mean over the spatial plane.
    GlobalAvg,
    /// B×C×H×W → B×C×1×1, max over the spatial plane.
    GlobalMax,
    /// B×C×H×W → B×1×H×W, mean over channels.
    ChannelAvg,
    /// B×C×H×W → B×1×H×W, max over channels.
    ChannelMax,
    /// k×k average pooling with the given stride, no padding.
    WindowAvg { k: usize, stride: usize },
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    /// map[B,C,H,W] ⊙ gate[B,C]
    MulChannel { map: VarId, gate: VarId },
    /// map[B,C,H,W] ⊙ gate[B,1,H,W]
    MulSpatial { map: VarId, gate: VarId },
    /// a[..., suffix] + bias[suffix]
    AddBias { a: VarId, bias: VarId },
    /// map[B,C,H,W] + bias[C]
    AddChannel { map: VarId, bias: VarId },
    Scale { a: VarId, c: f64 },
    AddConst { a: VarId },
    Sigmoid(VarId),
    Relu(VarId),
    Softplus(VarId),
    Matmul { a: VarId, b: VarId, batch: usize, m: usize, k: usize, n: usize, b_is_2d: bool },
    Conv2d { input: VarId, kernel: VarId, stride: usize, padding: usize },
    Pool { input: VarId, kind: PoolKind },
    /// Crop the per-sample normalized box from the input and resample it to
    /// out_h×out_w with corner-aligned bilinear interpolation. Differentiable
    /// in both the input and the box coordinates.
    CropResize { input: VarId, boxes: VarId, out_h: usize, out_w: usize },
    ReduceSum { input: VarId, axes: Vec<usize> },
    ReduceMean { input: VarId, axes: Vec<usize> },
    Concat { inputs: Vec<VarId>, axis: usize },
    Reshape { input: VarId },
    Permute { input: VarId, perm: Vec<usize> },
    Slice { input: VarId, axis: usize, start: usize, end: usize },
    /// Softmax over the last axis.
    Softmax { input: VarId },
    /// Elementwise stable binary cross-entropy on logits:
    /// max(o,0) − o·y + ln(1+exp(−|o|)).
    BceWithLogits { logits: VarId, targets: VarId },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulChannel { .. } => "mul_channel",
            Op::MulSpatial { .. } => "mul_spatial",
            Op::AddBias { .. } => "add_bias",
            Op::AddChannel { .. } => "add_channel",
            Op::Scale { .. } => "scale",
            Op::AddConst { .. } => "add_const",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::Matmul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Pool { .. } => "pool",
            Op::CropResize { .. } => "crop_resize",
            Op::ReduceSum { .. } => "sum",
            Op::ReduceMean { .. } => "mean",
            Op::Concat { .. } => "concat",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Slice { .. } => "slice",
            Op::Softmax { .. } => "softmax",
            Op::BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

pub(crate) struct Node {
    pub t: Tensor,
    pub op: Op,
}

/// Recording tape for one forward/backward pass.
///
/// Single-threaded; independent tapes may live on different threads. Ops
/// never mutate their inputs' values — only `grad` fields accumulate, and
/// running `backward` twice without [`Tape::zero_grad`] doubles every
/// gradient.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    check_finite: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable ln(1+exp(x)).
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), check_finite: Cell::new(false) }
    }

    /// When enabled, every op output is scanned for NaN/Inf.
    pub fn set_check_finite(&self, on: bool) {
        self.check_finite.set(on);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    // ── node access ─────────────────────────────────────────────────────

    pub fn leaf(&self, t: Tensor) -> VarId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { t, op: Op::Leaf });
        VarId(nodes.len() - 1)
    }

    /// Leaf that requires gradients.
    pub fn var(&self, t: Tensor) -> VarId {
        self.leaf(t.with_grad())
    }

    /// Non-differentiable leaf.
    pub fn constant(&self, shape: Vec<usize>, values: Vec<f64>) -> Result<VarId> {
        Ok(self.leaf(Tensor::new(shape, values)?))
    }

    pub fn shape_of(&self, v: VarId) -> Vec<usize> {
        self.nodes.borrow()[v.0].t.shape.clone()
    }

    pub fn numel(&self, v: VarId) -> usize {
        self.nodes.borrow()[v.0].t.values.len()
    }

    pub fn value_vec(&self, v: VarId) -> Vec<f64> {
        self.nodes.borrow()[v.0].t.values.clone()
    }

    pub fn grad_vec(&self, v: VarId) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let t = &nodes[v.0].t;
        if t.grad.len() == t.values.len() {
            t.grad.clone()
        } else {
            vec![0.0; t.values.len()]
        }
    }

    pub fn requires_grad(&self, v: VarId) -> bool {
        self.nodes.borrow()[v.0].t.requires_grad
    }

    /// Read values without cloning.
    pub fn with_values<R>(&self, v: VarId, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.nodes.borrow()[v.0].t.values)
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.t.zero_grad();
        }
    }

    /// Error if the node holds any non-finite value, naming `context`.
    pub fn assert_finite(&self, v: VarId, context: &str) -> Result<()> {
        if self.nodes.borrow()[v.0].t.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    fn push(&self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool, op: Op) -> Result<VarId> {
        if self.check_finite.get() && !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("output of op '{}'", op.name())));
        }
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let mut nodes = self.nodes.borrow_mut();
        // interior grad buffers materialize on first backward touch
        let grad = if requires_grad { vec![0.0; values.len()] } else { Vec::new() };
        nodes.push(Node { t: Tensor { shape, values, grad, requires_grad }, op });
        Ok(VarId(nodes.len() - 1))
    }

    fn any_grad(&self, ids: &[VarId]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|v| nodes[v.0].t.requires_grad)
    }

    // ── elementwise ─────────────────────────────────────────────────────

    fn binary_same_shape(&self, a: VarId, b: VarId, name: &str) -> Result<Vec<usize>> {
        let nodes = self.nodes.borrow();
        let (sa, sb) = (&nodes[a.0].t.shape, &nodes[b.0].t.shape);
        if sa != sb {
            return Err(Error::Shape(format!("{name}: operand shapes {sa:?} vs {sb:?} must match")));
        }
        Ok(sa.clone())
    }

    pub fn add(&self, a: VarId, b: VarId) -> Result<VarId> {
        let shape = self.binary_same_shape(a, b, "add")?;
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .t
                .values
                .iter()
                .zip(&nodes[b.0].t.values)
                .map(|(x, y)| x + y)
                .collect()
        };
        self.push(shape, out, self.any_grad(&[a, b]), Op::Add(a, b))
    }

    pub fn sub(&self, a: VarId, b: VarId) -> Result<VarId> {
        let shape = self.binary_same_shape(a, b, "sub")?;
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .t
                .values
                .iter()
                .zip(&nodes[b.0].t.values)
                .map(|(x, y)| x - y)
                .collect()
        };
        self.push(shape, out, self.any_grad(&[a, b]), Op::Sub(a, b))
    }

    pub fn mul(&self, a: VarId, b: VarId) -> Result<VarId> {
        let shape = self.binary_same_shape(a, b, "mul")?;
        let out = {
            let nodes = self.nodes.borrow();
            nodes[a.0]
                .t
                .values
                .iter()
                .zip(&nodes[b.0].t.values)
                .map(|(x, y)| x * y)
                .collect()
        };
        self.push(shape, out, self.any_grad(&[a, b]), Op::Mul(a, b))
    }

    /// map[B,C,H,W] ⊙ gate[B,C], broadcast over the spatial plane.
    pub fn mul_channel(&self, map: VarId, gate: VarId) -> Result<VarId> {
        let (shape, out) = {
            let nodes = self.nodes.borrow();
            let sm = &nodes[map.0].t.shape;
            let sg = &nodes[gate.0].t.shape;
            if sm.len() != 4 || sg.len() != 2 || sm[0] != sg[0] || sm[1] != sg[1] {
                return Err(Error::Shape(format!(
                    "mul_channel: map {sm:?} with gate {sg:?}, expected [B,C,H,W] and [B,C]"
                )));
            }
            let (b, c, hw) = (sm[0], sm[1], sm[2] * sm[3]);
            let mv = &nodes[map.0].t.values;
            let gv = &nodes[gate.0].t.values;
            let mut out = vec![0.0; mv.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let g = gv[bi * c + ci];
                    let base = (bi * c + ci) * hw;
                    for p in 0..hw {
                        out[base + p] = mv[base + p] * g;
                    }
                }
            }
            (sm.clone(), out)
        };
        self.push(shape, out, self.any_grad(&[map, gate]), Op::MulChannel { map, gate })
    }

    /// map[B,C,H,W] ⊙ gate[B,1,H,W], broadcast over channels.
    pub fn mul_spatial(&self, map: VarId, gate: VarId) -> Result<VarId> {
        let (shape, out) = {
            let nodes = self.nodes.borrow();
            let sm = &nodes[map.0].t.shape;
            let sg = &nodes[gate.0].t.shape;
            if sm.len() != 4 || sg.len() != 4 || sg[1] != 1 || sm[0] != sg[0] || sm[2] != sg[2] || sm[3] != sg[3]
            {
                return Err(Error::Shape(format!(
                    "mul_spatial: map {sm:?} with gate {sg:?}, expected [B,C,H,W] and [B,1,H,W]"
                )));
            }
            let (b, c, hw) = (sm[0], sm[1], sm[2] * sm[3]);
            let mv = &nodes[map.0].t.values;
            let gv = &nodes[gate.0].t.values;
            let mut out = vec![0.0; mv.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * hw;
                    let gbase = bi * hw;
                    for p in 0..hw {
                        out[base + p] = mv[base + p] * gv[gbase + p];
                    }
                }
            }
            (sm.clone(), out)
        };
        self.push(shape, out, self.any_grad(&[map, gate]), Op::MulSpatial { map, gate })
    }

    /// a[..., suffix] + bias[suffix]; the bias shape must be a strict
    /// trailing suffix of a's shape.
    pub fn add_bias(&self, a: VarId, bias: VarId) -> Result<VarId> {
        let (shape, out) = {
            let nodes = self.nodes.borrow();
            let sa = &nodes[a.0].t.shape;
            let sb = &nodes[bias.0].t.shape;
            if sb.is_empty() || sb.len() >= sa.len() || &sa[sa.len() - sb.len()..] != sb.as_slice() {
                return Err(Error::Shape(format!(
                    "add_bias: bias {sb:?} is not a trailing suffix of {sa:?}"
                )));
            }
            let bn = nodes[bias.0].t.values.len();
            let av = &nodes[a.0].t.values;
            let bv = &nodes[bias.0].t.values;
            let out = av.iter().enumerate().map(|(i, x)| x + bv[i % bn]).collect();
            (sa.clone(), out)
        };
        self.push(shape, out, self.any_grad(&[a, bias]), Op::AddBias { a, bias })
    }

    /// map[B,C,H,W] + bias[C], broadcast over batch and the spatial plane.
    pub fn add_channel(&self, map: VarId, bias: VarId) -> Result<VarId> {
        let (shape, out) = {
            let nodes = self.nodes.borrow();
            let sm = &nodes[map.0].t.shape;
            let sb = &nodes[bias.0].t.shape;
            if sm.len() != 4 || sb.len() != 1 || sb[0] != sm[1] {
                return Err(Error::Shape(format!(
                    "add_channel: map {sm:?} with bias {sb:?}, expected [B,C,H,W] and [C]"
                )));
            }
            let (b, c, hw) = (sm[0], sm[1], sm[2] * sm[3]);
            let mv = &nodes[map.0].t.values;
            let bv = &nodes[bias.0].t.values;
            let mut out = vec![0.0; mv.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * hw;
                    for p in 0..hw {
                        out[base + p] = mv[base + p] + bv[ci];
                    }
                }
            }
            (sm.clone(), out)
        };
        self.push(shape, out, self.any_grad(&[map, bias]), Op::AddChannel { map, bias })
    }

    pub fn scale(&self, a: VarId, c: f64) -> Result<VarId> {
        let (shape, out, rg) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].t;
            (t.shape.clone(), t.values.iter().map(|x| x * c).collect(), t.requires_grad)
        };
        self.push(shape, out, rg, Op::Scale { a, c })
    }

    pub fn add_const(&self, a: VarId, c: f64) -> Result<VarId> {
        let (shape, out, rg) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].t;
            (t.shape.clone(), t.values.iter().map(|x| x + c).collect(), t.requires_grad)
        };
        self.push(shape, out, rg, Op::AddConst { a })
    }

    pub fn sigmoid(&self, a: VarId) -> Result<VarId> {
        let (shape, out, rg) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].t;
            (t.shape.clone(), t.values.iter().map(|&x| sigmoid(x)).collect(), t.requires_grad)
        };
        self.push(shape, out, rg, Op::Sigmoid(a))
    }

    pub fn relu(&self, a: VarId) -> Result<VarId> {
        let (shape, out, rg) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].t;
            (t.shape.clone(), t.values.iter().map(|&x| x.max(0.0)).collect(), t.requires_grad)
        };
        self.push(shape, out, rg, Op::Relu(a))
    }

    pub fn softplus(&self, a: VarId) -> Result<VarId> {
        let (shape, out, rg) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[a.0].t;
            (t.shape.clone(), t.values.iter().map(|&x| softplus(x)).collect(), t.requires_grad)
        };
        self.push(shape, out, rg, Op::Softplus(a))
    }

    // ── linear algebra ──────────────────────────────────────────────────

    /// Matrix product over the two trailing axes. `b` is either 2-D (a
    /// shared weight applied to every leading batch of `a`) or has the same
    /// leading dimensions as `a`.
    pub fn matmul(&self, a: VarId, b: VarId) -> Result<VarId> {
        let (out_shape, batch, m, k, n, b_is_2d) = {
            let nodes = self.nodes.borrow();
            let sa = &nodes[a.0].t.shape;
            let sb = &nodes[b.0].t.shape;
            if sa.len() < 2 || sb.len() < 2 {
                return Err(Error::Shape(format!("matmul: ranks of {sa:?} and {sb:?} must be ≥ 2")));
            }
            let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
            let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
            if k != kb {
                return Err(Error::Shape(format!(
                    "matmul: inner dimensions disagree, {sa:?} · {sb:?}"
                )));
            }
            let lead_a = &sa[..sa.len() - 2];
            let b_is_2d = sb.len() == 2 && sa.len() > 2;
            if !b_is_2d && sb.len() != sa.len() {
                return Err(Error::Shape(format!(
                    "matmul: leading dimensions of {sa:?} and {sb:?} must match (or b must be 2-D)"
                )));
            }
            if !b_is_2d && &sb[..sb.len() - 2] != lead_a {
                return Err(Error::Shape(format!(
                    "matmul: batch dimensions disagree, {sa:?} · {sb:?}"
                )));
            }
            let batch: usize = lead_a.iter().product();
            let mut out_shape = lead_a.to_vec();
            out_shape.push(m);
            out_shape.push(n);
            (out_shape, batch.max(1), m, k, n, b_is_2d)
        };
        let out = {
            let nodes = self.nodes.borrow();
            let av = &nodes[a.0].t.values;
            let bv = &nodes[b.0].t.values;
            let mut out = vec![0.0; batch * m * n];
            for t in 0..batch {
                let ao = t * m * k;
                let bo = if b_is_2d { 0 } else { t * k * n };
                let co = t * m * n;
                for i in 0..m {
                    let arow = &av[ao + i * k..ao + (i + 1) * k];
                    let crow = &mut out[co + i * n..co + (i + 1) * n];
                    for (p, &aip) in arow.iter().enumerate() {
                        let brow = &bv[bo + p * n..bo + (p + 1) * n];
                        for (c, &bpj) in crow.iter_mut().zip(brow) {
                            *c += aip * bpj;
                        }
                    }
                }
            }
            out
        };
        self.push(out_shape, out, self.any_grad(&[a, b]), Op::Matmul { a, b, batch, m, k, n, b_is_2d })
    }

    /// 2-D convolution, input [B,Cin,H,W] with kernel [Cout,Cin,k,k].
    /// The output size must divide exactly: (H + 2·padding − k) % stride == 0.
    pub fn conv2d(&self, input: VarId, kernel: VarId, stride: usize, padding: usize) -> Result<VarId> {
        let (out_shape, out) = {
            let nodes = self.nodes.borrow();
            let si = &nodes[input.0].t.shape;
            let sk = &nodes[kernel.0].t.shape;
            if si.len() != 4 || sk.len() != 4 {
                return Err(Error::Shape(format!("conv2d: input {si:?}, kernel {sk:?} must be 4-D")));
            }
            if si[1] != sk[1] {
                return Err(Error::Shape(format!(
                    "conv2d: input channels {} != kernel channels {}",
                    si[1], sk[1]
                )));
            }
            if sk[2] != sk[3] {
                return Err(Error::Shape(format!("conv2d: kernel must be square, got {sk:?}")));
            }
            let (b, cin, h, w) = (si[0], si[1], si[2], si[3]);
            let (cout, kk) = (sk[0], sk[2]);
            if stride == 0 {
                return Err(Error::Config("conv2d: stride must be ≥ 1".into()));
            }
            if h + 2 * padding < kk || w + 2 * padding < kk {
                return Err(Error::Shape(format!(
                    "conv2d: kernel {kk} larger than padded input {h}x{w} (+{padding})"
                )));
            }
            if (h + 2 * padding - kk) % stride != 0 || (w + 2 * padding - kk) % stride != 0 {
                return Err(Error::Shape(format!(
                    "conv2d: non-integral output size for input {h}x{w}, k={kk}, stride={stride}, padding={padding}"
                )));
            }
            let oh = (h + 2 * padding - kk) / stride + 1;
            let ow = (w + 2 * padding - kk) / stride + 1;
            let iv = &nodes[input.0].t.values;
            let kv = &nodes[kernel.0].t.values;
            let mut out = vec![0.0; b * cout * oh * ow];
            if stride == 1 {
                // tap-major: each kernel tap contributes one shifted row axpy
                for bi in 0..b {
                    for co in 0..cout {
                        let obase = (bi * cout + co) * oh * ow;
                        for ci in 0..cin {
                            let ibase = (bi * cin + ci) * h * w;
                            let kbase = (co * cin + ci) * kk * kk;
                            for u in 0..kk {
                                let oy_lo = padding.saturating_sub(u);
                                let oy_hi = oh.min((h + padding).saturating_sub(u));
                                for v in 0..kk {
                                    let kvv = kv[kbase + u * kk + v];
                                    let ox_lo = padding.saturating_sub(v);
                                    let ox_hi = ow.min((w + padding).saturating_sub(v));
                                    if ox_lo >= ox_hi {
                                        continue;
                                    }
                                    let len = ox_hi - ox_lo;
                                    for oy in oy_lo..oy_hi {
                                        let iy = oy + u - padding;
                                        let ioff = ibase + iy * w + (ox_lo + v - padding);
                                        let irow = &iv[ioff..ioff + len];
                                        let orow = &mut out[obase + oy * ow + ox_lo..obase + oy * ow + ox_hi];
                                        for (o, ivv) in orow.iter_mut().zip(irow) {
                                            *o += kvv * ivv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            } else {
                for bi in 0..b {
                    for co in 0..cout {
                        for oy in 0..oh {
                            let y0 = oy * stride;
                            let u_lo = padding.saturating_sub(y0);
                            let u_hi = kk.min((h + padding).saturating_sub(y0));
                            for ox in 0..ow {
                                let x0 = ox * stride;
                                let v_lo = padding.saturating_sub(x0);
                                let v_hi = kk.min((w + padding).saturating_sub(x0));
                                if v_lo >= v_hi || u_lo >= u_hi {
                                    continue;
                                }
                                let mut acc = 0.0;
                                for ci in 0..cin {
                                    let ibase = (bi * cin + ci) * h * w;
                                    let kbase = (co * cin + ci) * kk * kk;
                                    for u in u_lo..u_hi {
                                        let iy = y0 + u - padding;
                                        let irow = &iv[ibase + iy * w + (x0 + v_lo - padding)..];
                                        let krow = &kv[kbase + u * kk + v_lo..kbase + u * kk + v_hi];
                                        for (ivv, kvv) in irow.iter().zip(krow) {
                                            acc += ivv * kvv;
                                        }
                                    }
                                }
                                out[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                            }
                        }
                    }
                }
            }
            (vec![b, cout, oh, ow], out)
        };
        self.push(out_shape, out, self.any_grad(&[input, kernel]), Op::Conv2d { input, kernel, stride, padding })
    }

    pub fn pool(&self, input: VarId, kind: PoolKind) -> Result<VarId> {
        let (out_shape, out) = {
            let nodes = self.nodes.borrow();
            let s = &nodes[input.0].t.shape;
            if s.len() != 4 {
                return Err(Error::Shape(format!("pool: input {s:?} must be 4-D")));
            }
            let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
            let v = &nodes[input.0].t.values;
            match kind {
                PoolKind::GlobalAvg => {
                    let mut out = vec![0.0; b * c];
                    let hw = (h * w) as f64;
                    for i in 0..b * c {
                        out[i] = v[i * h * w..(i + 1) * h * w].iter().sum::<f64>() / hw;
                    }
                    (vec![b, c, 1, 1], out)
                }
                PoolKind::GlobalMax => {
                    let mut out = vec![0.0; b * c];
                    for i in 0..b * c {
                        out[i] = v[i * h * w..(i + 1) * h * w]
                            .iter()
                            .copied()
                            .fold(f64::NEG_INFINITY, f64::max);
                    }
                    (vec![b, c, 1, 1], out)
                }
                PoolKind::ChannelAvg => {
                    let mut out = vec![0.0; b * h * w];
                    for bi in 0..b {
                        for p in 0..h * w {
                            let mut acc = 0.0;
                            for ci in 0..c {
                                acc += v[(bi * c + ci) * h * w + p];
                            }
                            out[bi * h * w + p] = acc / c as f64;
                        }
                    }
                    (vec![b, 1, h, w], out)
                }
                PoolKind::ChannelMax => {
                    let mut out = vec![0.0; b * h * w];
                    for bi in 0..b {
                        for p in 0..h * w {
                            let mut best = f64::NEG_INFINITY;
                            for ci in 0..c {
                                best = best.max(v[(bi * c + ci) * h * w + p]);
                            }
                            out[bi * h * w + p] = best;
                        }
                    }
                    (vec![b, 1, h, w], out)
                }
                PoolKind::WindowAvg { k, stride } => {
                    if k == 0 || stride == 0 {
                        return Err(Error::Config("pool: window and stride must be ≥ 1".into()));
                    }
                    if h < k || w < k || (h - k) % stride != 0 || (w - k) % stride != 0 {
                        return Err(Error::Shape(format!(
                            "pool: window {k}/stride {stride} does not tile {h}x{w} exactly"
                        )));
                    }
                    let oh = (h - k) / stride + 1;
                    let ow = (w - k) / stride + 1;
                    let mut out = vec![0.0; b * c * oh * ow];
                    let kk = (k * k) as f64;
                    for i in 0..b * c {
                        let plane = &v[i * h * w..(i + 1) * h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = 0.0;
                                for u in 0..k {
                                    for t in 0..k {
                                        acc += plane[(oy * stride + u) * w + ox * stride + t];
                                    }
                                }
                                out[(i * oh + oy) * ow + ox] = acc / kk;
                            }
                        }
                    }
                    (vec![b, c, oh, ow], out)
                }
            }
        };
        let rg = self.requires_grad(input);
        self.push(out_shape, out, rg, Op::Pool { input, kind })
    }

    /// See [`Op::CropResize`]. `boxes` is [B,4] with normalized
    /// (x1,y1,x2,y2) per batch element; sampling is corner-aligned so the
    /// full box with the original size reproduces the input exactly.
    pub fn crop_resize(&self, input: VarId, boxes: VarId, out_h: usize, out_w: usize) -> Result<VarId> {
        let (out_shape, out) = {
            let nodes = self.nodes.borrow();
            let si = &nodes[input.0].t.shape;
            let sb = &nodes[boxes.0].t.shape;
            if si.len() != 4 {
                return Err(Error::Shape(format!("crop_resize: input {si:?} must be 4-D")));
            }
            if sb.len() != 2 || sb[0] != si[0] || sb[1] != 4 {
                return Err(Error::Shape(format!(
                    "crop_resize: boxes {sb:?} must be [B,4] matching input batch {}",
                    si[0]
                )));
            }
            if out_h < 2 || out_w < 2 {
                return Err(Error::Config(format!(
                    "crop_resize: output size {out_h}x{out_w} must be at least 2x2"
                )));
            }
            let (b, c, h, w) = (si[0], si[1], si[2], si[3]);
            if h < 2 || w < 2 {
                return Err(Error::Shape(format!("crop_resize: input plane {h}x{w} must be at least 2x2")));
            }
            let iv = &nodes[input.0].t.values;
            let bv = &nodes[boxes.0].t.values;
            let mut out = vec![0.0; b * c * out_h * out_w];
            for bi in 0..b {
                let (x1, y1, x2, y2) = (bv[bi * 4], bv[bi * 4 + 1], bv[bi * 4 + 2], bv[bi * 4 + 3]);
                if !(x2 - x1 > 1e-12 && y2 - y1 > 1e-12) {
                    return Err(Error::Shape(format!(
                        "crop_resize: degenerate box [{x1},{y1},{x2},{y2}] for batch element {bi}"
                    )));
                }
                for oy in 0..out_h {
                    let ry = oy as f64 / (out_h - 1) as f64;
                    let sy = ((y1 + (y2 - y1) * ry) * (h - 1) as f64).clamp(0.0, (h - 1) as f64);
                    let y0 = (sy.floor() as usize).min(h - 2);
                    let fy = sy - y0 as f64;
                    for ox in 0..out_w {
                        let rx = ox as f64 / (out_w - 1) as f64;
                        let sx = ((x1 + (x2 - x1) * rx) * (w - 1) as f64).clamp(0.0, (w - 1) as f64);
                        let x0 = (sx.floor() as usize).min(w - 2);
                        let fx = sx - x0 as f64;
                        for ci in 0..c {
                            let plane = &iv[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                            let v00 = plane[y0 * w + x0];
                            let v01 = plane[y0 * w + x0 + 1];
                            let v10 = plane[(y0 + 1) * w + x0];
                            let v11 = plane[(y0 + 1) * w + x0 + 1];
                            let val = (1.0 - fy) * (1.0 - fx) * v00
                                + (1.0 - fy) * fx * v01
                                + fy * (1.0 - fx) * v10
                                + fy * fx * v11;
                            out[((bi * c + ci) * out_h + oy) * out_w + ox] = val;
                        }
                    }
                }
            }
            (vec![b, c, out_h, out_w], out)
        };
        self.push(out_shape, out, self.any_grad(&[input, boxes]), Op::CropResize { input, boxes, out_h, out_w })
    }

    // ── reductions and shape ────────────────────────────────────────────

    fn check_axes(shape: &[usize], axes: &[usize], name: &str) -> Result<()> {
        if axes.is_empty() {
            return Err(Error::Shape(format!("{name}: empty axis list")));
        }
        let mut seen = vec![false; shape.len()];
        for &ax in axes {
            if ax >= shape.len() {
                return Err(Error::Shape(format!("{name}: axis {ax} out of range for {shape:?}")));
            }
            if seen[ax] {
                return Err(Error::Shape(format!("{name}: duplicate axis {ax}")));
            }
            seen[ax] = true;
        }
        Ok(())
    }

    fn reduce(&self, input: VarId, axes: &[usize], mean: bool) -> Result<VarId> {
        let name = if mean { "mean" } else { "sum" };
        let (out_shape, out) = {
            let nodes = self.nodes.borrow();
            let s = &nodes[input.0].t.shape;
            Self::check_axes(s, axes, name)?;
            let keep: Vec<usize> = (0..s.len()).filter(|i| !axes.contains(i)).collect();
            let out_shape: Vec<usize> = keep.iter().map(|&i| s[i]).collect();
            let out_n: usize = out_shape.iter().product();
            let out_strides = strides(&out_shape);
            let mut map_strides = vec![0usize; s.len()];
            for (ki, &dim) in keep.iter().enumerate() {
                map_strides[dim] = out_strides[ki];
            }
            let mut out = vec![0.0; out_n];
            let v = &nodes[input.0].t.values;
            for_each_mapped(s, &map_strides, |flat, oi| {
                out[oi] += v[flat];
            });
            if mean {
                let count: f64 = axes.iter().map(|&a| s[a] as f64).product();
                out.iter_mut().for_each(|x| *x /= count);
            }
            (out_shape, out)
        };
        let rg = self.requires_grad(input);
        let op = if mean {
            Op::ReduceMean { input, axes: axes.to_vec() }
        } else {
            Op::ReduceSum { input, axes: axes.to_vec() }
        };
        self.push(out_shape, out, rg, op)
    }

    pub fn sum_axes(&self, input: VarId, axes: &[usize]) -> Result<VarId> {
        self.reduce(input, axes, false)
    }

    pub fn mean_axes(&self, input: VarId, axes: &[usize]) -> Result<VarId> {
        self.reduce(input, axes, true)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum_all(&self, input: VarId) -> Result<VarId> {
        let rank = self.shape_of(input).len();
        if rank == 0 {
            // already scalar; sum over nothing is the identity
            return self.scale(input, 1.0);
        }
        let axes: Vec<usize> = (0..rank).collect();
        self.sum_axes(input, &axes)
    }

    pub fn concat(&self, inputs: &[VarId], axis: usize) -> Result<VarId> {
        if inputs.is_empty() {
            return Err(Error::Shape("concat: no inputs".into()));
        }
        let (out_shape, out) = {
            let nodes = self.nodes.borrow();
            let first = &nodes[inputs[0].0].t.shape;
            if axis >= first.len() {
                return Err(Error::Shape(format!("concat: axis {axis} out of range for {first:?}")));
            }
            let mut axis_total = 0;
            for v in inputs {
                let s = &nodes[v.0].t.shape;
                if s.len() != first.len()
                    || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
                {
                    return Err(Error::Shape(format!(
                        "concat: incompatible shapes {first:?} vs {s:?} on axis {axis}"
                    )));
                }
                axis_total += s[axis];
            }
            let mut out_shape = first.clone();
            out_shape[axis] = axis_total;
            let outer: usize = first[..axis].iter().product();
            let inner: usize = first[axis + 1..].iter().product();
            let mut out = vec![0.0; outer * axis_total * inner];
            let mut offset = 0;
            for v in inputs {
                let s = &nodes[v.0].t.shape;
                let len = s[axis];
                let vals = &nodes[v.0].t.values;
                for o in 0..outer {
                    let src = o * len * inner;
                    let dst = (o * axis_total + offset) * inner;
                    out[dst..dst + len * inner].copy_from_slice(&vals[src..src + len * inner]);
                }
                offset += len;
            }
            (out_shape, out)
        };
        self.push(out_shape, out, self.any_grad(inputs), Op::Concat { inputs: inputs.to_vec(), axis })
    }

    pub fn reshape(&self, input: VarId, shape: Vec<usize>) -> Result<VarId> {
        let (out, rg) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[input.0].t;
            let n: usize = shape.iter().product();
            if n != t.values.len() {
                return Err(Error::Shape(format!(
                    "reshape: {:?} has {} elements, target {:?} wants {}",
                    t.shape,
                    t.values.len(),
                    shape,
                    n
                )));
            }
            (t.values.clone(), t.requires_grad)
        };
        self.push(shape, out, rg, Op::Reshape { input })
    }

    pub fn permute(&self, input: VarId, perm: &[usize]) -> Result<VarId> {
        let (out_shape, out, rg) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[input.0].t;
            let rank = t.shape.len();
            let mut seen = vec![false; rank];
            if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
                return Err(Error::Shape(format!(
                    "permute: {perm:?} is not a permutation of 0..{rank}"
                )));
            }
            let out_shape: Vec<usize> = perm.iter().map(|&p| t.shape[p]).collect();
            let out_strides = strides(&out_shape);
            let mut map_strides = vec![0usize; rank];
            for (od, &src_dim) in perm.iter().enumerate() {
                map_strides[src_dim] = out_strides[od];
            }
            let mut out = vec![0.0; t.values.len()];
            let v = &t.values;
            for_each_mapped(&t.shape, &map_strides, |flat, oi| {
                out[oi] = v[flat];
            });
            (out_shape, out, t.requires_grad)
        };
        self.push(out_shape, out, rg, Op::Permute { input, perm: perm.to_vec() })
    }

    /// Contiguous range `[start, end)` along one axis.
    pub fn slice(&self, input: VarId, axis: usize, start: usize, end: usize) -> Result<VarId> {
        let (out_shape, out, rg) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[input.0].t;
            if axis >= t.shape.len() {
                return Err(Error::Shape(format!("slice: axis {axis} out of range for {:?}", t.shape)));
            }
            if start >= end || end > t.shape[axis] {
                return Err(Error::Shape(format!(
                    "slice: range {start}..{end} invalid for axis {axis} of {:?}",
                    t.shape
                )));
            }
            let mut out_shape = t.shape.clone();
            out_shape[axis] = end - start;
            let outer: usize = t.shape[..axis].iter().product();
            let inner: usize = t.shape[axis + 1..].iter().product();
            let len = end - start;
            let mut out = vec![0.0; outer * len * inner];
            for o in 0..outer {
                let src = (o * t.shape[axis] + start) * inner;
                let dst = o * len * inner;
                out[dst..dst + len * inner].copy_from_slice(&t.values[src..src + len * inner]);
            }
            (out_shape, out, t.requires_grad)
        };
        self.push(out_shape, out, rg, Op::Slice { input, axis, start, end })
    }

    /// Softmax over the last axis, max-subtracted for stability.
    pub fn softmax(&self, input: VarId) -> Result<VarId> {
        let (shape, out, rg) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[input.0].t;
            if t.shape.is_empty() {
                return Err(Error::Shape("softmax: scalar input".into()));
            }
            let last = *t.shape.last().unwrap();
            let rows = t.values.len() / last;
            let mut out = vec![0.0; t.values.len()];
            for r in 0..rows {
                let row = &t.values[r * last..(r + 1) * last];
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let dst = &mut out[r * last..(r + 1) * last];
                let mut sum = 0.0;
                for (d, &x) in dst.iter_mut().zip(row) {
                    *d = (x - mx).exp();
                    sum += *d;
                }
                dst.iter_mut().for_each(|d| *d /= sum);
            }
            (t.shape.clone(), out, t.requires_grad)
        };
        self.push(shape, out, rg, Op::Softmax { input })
    }

    /// Elementwise binary cross-entropy on logits in the stable form
    /// max(o,0) − o·y + ln(1+exp(−|o|)). Targets may be soft ([0,1]).
    pub fn bce_with_logits(&self, logits: VarId, targets: VarId) -> Result<VarId> {
        let shape = self.binary_same_shape(logits, targets, "bce_with_logits")?;
        let out = {
            let nodes = self.nodes.borrow();
            let ov = &nodes[logits.0].t.values;
            if !ov.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("bce_with_logits: logits".into()));
            }
            let yv = &nodes[targets.0].t.values;
            ov.iter()
                .zip(yv)
                .map(|(&o, &y)| o.max(0.0) - o * y + (-o.abs()).exp().ln_1p())
                .collect()
        };
        self.push(shape, out, self.any_grad(&[logits, targets]), Op::BceWithLogits { logits, targets })
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Backward from a scalar output with seed 1.
    pub fn backward(&self, out: VarId) -> Result<()> {
        if self.numel(out) != 1 {
            return Err(Error::Shape(format!(
                "backward: output shape {:?} is not scalar; provide an explicit seed",
                self.shape_of(out)
            )));
        }
        self.backward_seeded(out, &[1.0])
    }

    /// Backward with an explicit seed of the output's shape. Gradients
    /// accumulate into each node's `grad`.
    pub fn backward_seeded(&self, out: VarId, seed: &[f64]) -> Result<()> {
        if seed.len() != self.numel(out) {
            return Err(Error::Shape(format!(
                "backward: seed length {} does not match output numel {}",
                seed.len(),
                self.numel(out)
            )));
        }
        backward::run(self, out, seed)
    }

    pub(crate) fn nodes(&self) -> &RefCell<Vec<Node>> {
        &self.nodes
    }
}

#[cfg(test)]
mod tests;
