use std::collections::HashMap;

use super::{axis_extents, Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var, usize),
    Mean(Var, usize),
    SumAll(Var),
    Max {
        input: Var,
        axis: usize,
        argmax: Vec<usize>,
    },
    Cumsum(Var, usize),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Sqrt(Var),
    Relu(Var),
    Softmax(Var, usize),
    LogSumExp(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations as they run and replays them in reverse for gradients.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order of the computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    leaf_grads: HashMap<usize, Tensor>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after one or more `backward` calls.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(&v.0)
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Loads a parameter into the graph. Repeated loads of the same id share
    /// one node, so gradients from every use are summed.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone(), true);
        self.params.insert(id, v);
        v
    }

    /// Adds every loaded parameter's accumulated gradient into `grads`.
    pub fn param_grads(&self, grads: &mut Gradients) {
        for (&id, v) in &self.params {
            if let Some(g) = self.leaf_grads.get(&v.0) {
                grads.accumulate(id, g);
            }
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- elementwise binary ops -------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| {
            Error::shape(name, format!("{:?} vs {:?}", ta.shape(), tb.shape()))
        })?;
        let (da, db) = (ta.data(), tb.data());
        let n: usize = out_shape.iter().product();
        let data = (0..n)
            .map(|i| f(da[i % da.len()], db[i % db.len()]))
            .collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(out_shape, data)?, op, rg))
    }

    /// Elementwise sum. A tensor whose shape is a suffix of the other's is
    /// broadcast over the leading dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v * s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|v| v + s);
        let rg = self.rg(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    // ---- linear algebra and layout ----------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.ndim() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", t.shape())));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let out = transpose_raw(t.data(), r, c);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape("concat", format!("{base:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_extents(&out_shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Concat(parts.to_vec(), axis),
            rg,
        ))
    }

    /// Keeps indices `start..end` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("{start}..{end} on axis {axis} of {shape:?}"),
            ));
        }
        let (outer, len, inner) = axis_extents(shape, axis);
        let width = end - start;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&t.data()[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = width;
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Slice {
                input: a,
                axis,
                start,
            },
            rg,
        ))
    }

    // ---- reductions -------------------------------------------------------

    fn check_axis(&self, name: &'static str, a: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(a).len() {
            return Err(Error::shape(
                name,
                format!("axis {axis} for {:?}", self.shape(a)),
            ));
        }
        Ok(())
    }

    fn reduce(&mut self, a: Var, axis: usize, f: impl Fn(&[f64]) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let (outer, len, inner) = axis_extents(t.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let mut lane = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                for (l, slot) in lane.iter_mut().enumerate() {
                    *slot = t.data()[(o * len + l) * inner + i];
                }
                out[o * inner + i] = f(&lane);
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let rg = self.rg(&[a]);
        self.push(Tensor::new(shape, out).expect("reduce shape"), op, rg)
    }

    /// Sums out `axis` (the axis is removed).
    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("sum", a, axis)?;
        Ok(self.reduce(a, axis, |l| l.iter().sum(), Op::Sum(a, axis)))
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean", a, axis)?;
        Ok(self.reduce(
            a,
            axis,
            |l| l.iter().sum::<f64>() / l.len() as f64,
            Op::Mean(a, axis),
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("max", a, axis)?;
        let t = self.value(a);
        let (outer, len, inner) = axis_extents(t.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0;
                let mut best_v = f64::NEG_INFINITY;
                for l in 0..len {
                    let v = t.data()[(o * len + l) * inner + i];
                    if v > best_v {
                        best_v = v;
                        best = l;
                    }
                }
                out[o * inner + i] = best_v;
                argmax[o * inner + i] = best;
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Max {
                input: a,
                axis,
                argmax,
            },
            rg,
        ))
    }

    /// Running sum along `axis` (shape preserved).
    pub fn cumsum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("cumsum", a, axis)?;
        let mut value = self.value(a).clone();
        cumsum_in_place(&mut value, axis, false);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Cumsum(a, axis), rg))
    }

    // ---- pointwise nonlinearities ----------------------------------------

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Natural log; every input must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| v.is_nan() || v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| v.is_nan() || v < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("negative input {bad}"),
            });
        }
        Ok(self.unary(a, f64::sqrt, Op::Sqrt(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.max(0.0), Op::Relu(a))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", a, axis)?;
        let t = self.value(a);
        let (outer, len, inner) = axis_extents(t.shape(), axis);
        let mut out = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let m = (0..len).map(|l| out[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for l in 0..len {
                    let e = (out[idx(l)] - m).exp();
                    out[idx(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    out[idx(l)] /= z;
                }
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(a, axis), rg))
    }

    /// `log(sum(exp(x)))` along `axis` (the axis is removed).
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("logsumexp", a, axis)?;
        Ok(self.reduce(a, axis, logsumexp_slice, Op::LogSumExp(a, axis)))
    }

    // ---- backward ---------------------------------------------------------

    /// Propagates d(loss)/d(node) to every leaf that requires a gradient and
    /// adds it to that leaf's accumulated gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(shape, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match self.leaf_grads.get_mut(&idx) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        self.leaf_grads.insert(idx, g);
                    }
                }
                continue;
            }
            for (input, contrib) in self.input_grads(idx, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, idx: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => {
                let mut out = vec![];
                if wants(*a) {
                    out.push((*a, reduce_to(g, val(*a).shape())));
                }
                if wants(*b) {
                    out.push((*b, reduce_to(g, val(*b).shape())));
                }
                out
            }
            Op::Sub(a, b) => {
                let mut out = vec![];
                if wants(*a) {
                    out.push((*a, reduce_to(g, val(*a).shape())));
                }
                if wants(*b) {
                    let mut gb = reduce_to(g, val(*b).shape());
                    gb.scale_assign(-1.0);
                    out.push((*b, gb));
                }
                out
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let mut out = vec![];
                if wants(*a) {
                    out.push((*a, reduce_to(&bmul(g, tb), ta.shape())));
                }
                if wants(*b) {
                    out.push((*b, reduce_to(&bmul(g, ta), tb.shape())));
                }
                out
            }
            Op::Scale(a, s) => vec![(*a, g.map(|v| v * s))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut out = vec![];
                if wants(*a) {
                    // dA = G B^T
                    let bt = transpose_raw(tb.data(), k, n);
                    let d = matmul_raw(g.data(), &bt, m, n, k);
                    out.push((*a, Tensor::new(vec![m, k], d).expect("shape")));
                }
                if wants(*b) {
                    // dB = A^T G
                    let at = transpose_raw(ta.data(), m, k);
                    let d = matmul_raw(&at, g.data(), k, m, n);
                    out.push((*b, Tensor::new(vec![k, n], d).expect("shape")));
                }
                out
            }
            Op::Transpose(a) => {
                let (r, c) = (g.shape()[0], g.shape()[1]);
                let d = transpose_raw(g.data(), r, c);
                vec![(*a, Tensor::new(vec![c, r], d).expect("shape"))]
            }
            Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                vec![(*a, g.clone().reshaped(&shape).expect("shape"))]
            }
            Op::Concat(parts, axis) => {
                let (outer, total, inner) = axis_extents(g.shape(), *axis);
                let mut offset = 0;
                let mut out = vec![];
                for p in parts {
                    let shape = val(*p).shape();
                    let width = shape[*axis];
                    if wants(*p) {
                        let mut d = Vec::with_capacity(outer * width * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g.data()[base..base + width * inner]);
                        }
                        out.push((*p, Tensor::new(shape.to_vec(), d).expect("shape")));
                    }
                    offset += width;
                }
                out
            }
            Op::Slice { input, axis, start } => {
                let shape = val(*input).shape();
                let (outer, len, inner) = axis_extents(shape, *axis);
                let width = g.shape()[*axis];
                let mut d = Tensor::zeros(shape);
                for o in 0..outer {
                    let src = o * width * inner;
                    let dst = (o * len + start) * inner;
                    d.data_mut()[dst..dst + width * inner]
                        .copy_from_slice(&g.data()[src..src + width * inner]);
                }
                vec![(*input, d)]
            }
            Op::Sum(a, axis) => vec![(*a, expand_axis(g, val(*a).shape(), *axis, 1.0))],
            Op::Mean(a, axis) => {
                let shape = val(*a).shape();
                let scale = 1.0 / shape[*axis] as f64;
                vec![(*a, expand_axis(g, shape, *axis, scale))]
            }
            Op::SumAll(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
            Op::Max {
                input,
                axis,
                argmax,
            } => {
                let shape = val(*input).shape();
                let (_, len, inner) = axis_extents(shape, *axis);
                let mut d = Tensor::zeros(shape);
                for (j, &l) in argmax.iter().enumerate() {
                    let (o, i) = (j / inner, j % inner);
                    d.data_mut()[(o * len + l) * inner + i] += g.data()[j];
                }
                vec![(*input, d)]
            }
            Op::Cumsum(a, axis) => {
                let mut d = g.clone();
                cumsum_in_place(&mut d, *axis, true);
                vec![(*a, d)]
            }
            Op::Exp(a) => vec![(*a, zip_map(g, y, |gv, yv| gv * yv))],
            Op::Log(a) => vec![(*a, zip_map(g, val(*a), |gv, xv| gv / xv))],
            Op::Tanh(a) => vec![(*a, zip_map(g, y, |gv, yv| gv * (1.0 - yv * yv)))],
            Op::Sigmoid(a) => vec![(*a, zip_map(g, y, |gv, yv| gv * yv * (1.0 - yv)))],
            Op::Sqrt(a) => vec![(
                *a,
                zip_map(g, y, |gv, yv| if yv > 0.0 { gv / (2.0 * yv) } else { 0.0 }),
            )],
            Op::Relu(a) => vec![(
                *a,
                zip_map(g, val(*a), |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
            )],
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = axis_extents(y.shape(), *axis);
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| g.data()[idx(l)] * y.data()[idx(l)]).sum();
                        for l in 0..len {
                            d[idx(l)] = y.data()[idx(l)] * (g.data()[idx(l)] - dot);
                        }
                    }
                }
                vec![(*a, Tensor::new(y.shape().to_vec(), d).expect("shape"))]
            }
            Op::LogSumExp(a, axis) => {
                let x = val(*a);
                let (outer, len, inner) = axis_extents(x.shape(), *axis);
                let mut d = vec![0.0; x.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let lse = y.data()[o * inner + i];
                        let gv = g.data()[o * inner + i];
                        for l in 0..len {
                            d[idx(l)] = gv * (x.data()[idx(l)] - lse).exp();
                        }
                    }
                }
                vec![(*a, Tensor::new(x.shape().to_vec(), d).expect("shape"))]
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logsumexp_slice(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Output shape when `a` and `b` are equal or one is a suffix of the other.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a == b {
        Some(a.to_vec())
    } else if a.len() > b.len() && a.ends_with(b) {
        Some(a.to_vec())
    } else if b.len() > a.len() && b.ends_with(a) {
        Some(b.to_vec())
    } else {
        None
    }
}

/// Sums a broadcast gradient back down to `shape` (a suffix of `g`'s shape).
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape);
    let n = out.len();
    for (i, v) in g.data().iter().enumerate() {
        out.data_mut()[i % n] += v;
    }
    out
}

/// Elementwise product where `other` may be the smaller broadcast operand
/// (or the larger one, in which case `g` already has its shape).
fn bmul(g: &Tensor, other: &Tensor) -> Tensor {
    let n = other.len();
    let data = g
        .data()
        .iter()
        .enumerate()
        .map(|(i, gv)| gv * other.data()[i % n])
        .collect();
    Tensor::new(g.shape().to_vec(), data).expect("shape")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape")
}

/// Broadcasts a reduced gradient back along `axis` of `shape`.
fn expand_axis(g: &Tensor, shape: &[usize], axis: usize, scale: f64) -> Tensor {
    let (outer, len, inner) = axis_extents(shape, axis);
    let mut out = Tensor::zeros(shape);
    for o in 0..outer {
        for l in 0..len {
            for i in 0..inner {
                out.data_mut()[(o * len + l) * inner + i] = g.data()[o * inner + i] * scale;
            }
        }
    }
    out
}

fn cumsum_in_place(t: &mut Tensor, axis: usize, reverse: bool) {
    let (outer, len, inner) = axis_extents(t.shape(), axis);
    let data = t.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let mut acc = 0.0;
            for step in 0..len {
                let l = if reverse { len - 1 - step } else { step };
                let idx = (o * len + l) * inner + i;
                acc += data[idx];
                data[idx] = acc;
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}
