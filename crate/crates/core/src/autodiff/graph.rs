//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every primitive is evaluated eagerly when it is recorded, so the node list
//! is topologically ordered by construction and the backward pass is a single
//! sweep over node indices in descending order.

use super::kernels::{self, ConvDims};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    Log { x: Var, floor: f64 },
    MatMul(Var, Var),
    Conv1d { x: Var, w: Var, stride: usize, padding: usize },
    Sum { x: Var, axis: Option<usize> },
    Mean { x: Var, axis: Option<usize> },
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var },
    Embedding { table: Var, ids: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Transpose(Var),
    L2Normalize { x: Var, eps: f64 },
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log { .. } => "log",
            Op::MatMul(..) => "matmul",
            Op::Conv1d { .. } => "conv1d",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Embedding { .. } => "embedding",
            Op::Concat { .. } => "concat",
            Op::Transpose(_) => "transpose",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::Reshape(_) => "reshape",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Per-op saved statistics (row norms, inverse std).
    cache: Vec<f64>,
}

/// Single-owner computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
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

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Constant copy of `x`'s current value; gradients stop here.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.clone();
        self.constant(v)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            cache: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, x: Var) -> &Tensor {
        &self.nodes[x.0].value
    }

    pub fn shape(&self, x: Var) -> &[usize] {
        self.nodes[x.0].value.shape()
    }

    pub fn requires_grad(&self, x: Var) -> bool {
        self.nodes[x.0].requires_grad
    }

    /// Accumulated adjoint of `x` after [`Graph::backward`]. `None` for nodes
    /// that do not require a gradient or were not reached.
    pub fn grad(&self, x: Var) -> Option<&Tensor> {
        self.grads.get(x.0).and_then(Option::as_ref)
    }

    /// Drop stored adjoints so that another backward pass may run.
    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, op: Op, value: Tensor, cache: Vec<f64>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NumericOverflow { op: op.name() });
        }
        let requires_grad = self.inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            cache,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Conv1d { x, w, .. } => vec![*x, *w],
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Exp(x)
            | Op::Log { x, .. }
            | Op::Sum { x, .. }
            | Op::Mean { x, .. }
            | Op::Softmax { x, .. }
            | Op::LayerNorm { x }
            | Op::Transpose(x)
            | Op::L2Normalize { x, .. }
            | Op::Reshape(x) => vec![*x],
            Op::Embedding { table, .. } => vec![*table],
            Op::Concat { xs, .. } => xs.clone(),
        }
    }

    fn check(&self, x: Var) -> Result<()> {
        if x.0 >= self.nodes.len() {
            return Err(Error::invalid(format!("variable {} is not part of this graph", x.0)));
        }
        Ok(())
    }

    // ----- elementwise -----

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = kernels::broadcast_shape(&sa, &sb).ok_or_else(|| Error::ShapeMismatch {
            op: op.name(),
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let data = if sa == sb {
            va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect()
        } else {
            let n: usize = out_shape.iter().product();
            let mut out = vec![0.0; n];
            let (ta, tb) = (
                kernels::aligned_strides(&sa, &out_shape),
                kernels::aligned_strides(&sb, &out_shape),
            );
            kernels::for_each_broadcast(&out_shape, &ta, &tb, |o, i, j| out[o] = f(va[i], vb[j]));
            out
        };
        let t = Tensor::new(out_shape, data)?;
        self.push(op, t, vec![])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise (broadcasting) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect())?;
        self.push(op, t, vec![])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    /// Natural logarithm; non-positive inputs produce a numeric error.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Log { x, floor: 0.0 }, f64::ln)
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Result<Var> {
        if floor <= 0.0 {
            return Err(Error::invalid("log floor must be positive"));
        }
        self.unary(x, Op::Log { x, floor }, |v| v.max(floor).ln())
    }

    // ----- linear algebra -----

    /// `[m,k]·[k,n]`, `[b,m,k]·[k,n]` or batched `[b,m,k]·[b,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let t = match (sa.len(), sb.len()) {
            (2 | 3, 2) => {
                let k = sa[sa.len() - 1];
                if sb[0] != k {
                    return Err(mismatch());
                }
                let rows: usize = sa[..sa.len() - 1].iter().product();
                let n = sb[1];
                let mut out = vec![0.0; rows * n];
                kernels::mm_nn(va, vb, &mut out, rows, k, n);
                let mut shape = sa[..sa.len() - 1].to_vec();
                shape.push(n);
                Tensor::new(shape, out)?
            }
            (3, 3) => {
                let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                if sb[0] != bt || sb[1] != k {
                    return Err(mismatch());
                }
                let mut out = vec![0.0; bt * m * n];
                for i in 0..bt {
                    kernels::mm_nn(
                        &va[i * m * k..(i + 1) * m * k],
                        &vb[i * k * n..(i + 1) * k * n],
                        &mut out[i * m * n..(i + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
                Tensor::new(vec![bt, m, n], out)?
            }
            _ => return Err(mismatch()),
        };
        self.push(Op::MatMul(a, b), t, vec![])
    }

    /// 1D cross-correlation: x `[b, c_in, len]`, w `[c_out, c_in, kernel]`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let d = self.conv_dims(x, w, stride, padding)?;
        let mut out = vec![0.0; d.batch * d.c_out * d.len_out];
        kernels::conv1d_forward(self.value(x).data(), self.value(w).data(), &mut out, &d);
        let t = Tensor::new(vec![d.batch, d.c_out, d.len_out], out)?;
        self.push(
            Op::Conv1d {
                x,
                w,
                stride,
                padding,
            },
            t,
            vec![],
        )
    }

    fn conv_dims(&self, x: Var, w: Var, stride: usize, padding: usize) -> Result<ConvDims> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        if stride == 0 || sx[2] + 2 * padding < sw[2] {
            return Err(Error::InvalidShape {
                op: "conv1d",
                msg: format!(
                    "kernel {} with stride {stride} and padding {padding} does not fit length {}",
                    sw[2], sx[2]
                ),
            });
        }
        Ok(ConvDims {
            batch: sx[0],
            c_in: sx[1],
            c_out: sw[0],
            len_in: sx[2],
            len_out: (sx[2] + 2 * padding - sw[2]) / stride + 1,
            kernel: sw[2],
            stride,
            padding,
        })
    }

    // ----- reductions -----

    fn reduce(&mut self, x: Var, axis: Option<usize>, keepdim: bool, mean: bool) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        let v = self.value(x).data();
        let op = if mean { Op::Mean { x, axis } } else { Op::Sum { x, axis } };
        let t = match axis {
            None => {
                let mut s: f64 = v.iter().sum();
                if mean {
                    s /= v.len().max(1) as f64;
                }
                let out_shape = if keepdim { vec![1; shape.len()] } else { vec![] };
                Tensor::new(out_shape, vec![s])?
            }
            Some(ax) => {
                if ax >= shape.len() {
                    return Err(Error::InvalidShape {
                        op: op.name(),
                        msg: format!("axis {ax} out of range for shape {shape:?}"),
                    });
                }
                let (outer, n, inner) = kernels::axis_split(&shape, ax);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for j in 0..n {
                        let src = &v[(o * n + j) * inner..][..inner];
                        for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                if mean {
                    out.iter_mut().for_each(|s| *s /= n as f64);
                }
                let mut out_shape = shape.clone();
                if keepdim {
                    out_shape[ax] = 1;
                } else {
                    out_shape.remove(ax);
                }
                Tensor::new(out_shape, out)?
            }
        };
        self.push(op, t, vec![])
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, None, false, false)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, None, false, true)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.reduce(x, Some(axis), keepdim, false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        self.reduce(x, Some(axis), keepdim, true)
    }

    // ----- normalisation -----

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidShape {
                op: "softmax",
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let (outer, n, inner) = kernels::axis_split(&shape, axis);
        let mut out = vec![0.0; outer * n * inner];
        kernels::softmax_forward(self.value(x).data(), &mut out, outer, n, inner);
        let t = Tensor::new(shape, out)?;
        self.push(Op::Softmax { x, axis }, t, vec![])
    }

    /// Normalise the last axis to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::InvalidShape {
            op: "layer_norm",
            msg: "scalar input".into(),
        })?;
        let v = self.value(x).data();
        let rows = v.len() / d.max(1);
        let mut out = vec![0.0; v.len()];
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &v[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            for (o, a) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (a - mu) * rs;
            }
            rstd.push(rs);
        }
        let t = Tensor::new(shape, out)?;
        self.push(Op::LayerNorm { x }, t, rstd)
    }

    /// Divide each row (last axis) by `max(‖row‖₂, eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::InvalidShape {
            op: "l2_normalize",
            msg: "scalar input".into(),
        })?;
        let v = self.value(x).data();
        let rows = v.len() / d.max(1);
        let mut out = vec![0.0; v.len()];
        let mut norms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &v[r * d..(r + 1) * d];
            let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            let denom = norm.max(eps);
            for (o, a) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = a / denom;
            }
            norms.push(norm);
        }
        let t = Tensor::new(shape, out)?;
        self.push(Op::L2Normalize { x, eps }, t, norms)
    }

    // ----- indexing and layout -----

    /// Gather rows of a `[vocab, dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.check(table)?;
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::InvalidShape {
                op: "embedding",
                msg: format!("table must be rank 2, got {shape:?}"),
            });
        }
        let (vocab, dim) = (shape[0], shape[1]);
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::InvalidShape {
                    op: "embedding",
                    msg: format!("id {id} out of range for vocabulary {vocab}"),
                });
            }
            out.extend_from_slice(&tv[id * dim..(id + 1) * dim]);
        }
        let t = Tensor::new(vec![ids.len(), dim], out)?;
        self.push(
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            t,
            vec![],
        )
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::InvalidShape {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        for &x in xs {
            self.check(x)?;
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidShape {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {base:?}"),
            });
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let n = self.shape(x)[axis];
                out.extend_from_slice(&self.value(x).data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        self.push(
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            t,
            vec![],
        )
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                msg: format!("need rank >= 2, got {shape:?}"),
            });
        }
        let out = transpose_last2(self.value(x).data(), &shape);
        let mut out_shape = shape.clone();
        let r = shape.len();
        out_shape.swap(r - 1, r - 2);
        let t = Tensor::new(out_shape, out)?;
        self.push(Op::Transpose(x), t, vec![])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let src = self.value(x);
        if shape.iter().product::<usize>() != src.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: src.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let t = Tensor::new(shape.to_vec(), src.data().to_vec())?;
        self.push(Op::Reshape(x), t, vec![])
    }

    // ----- reverse pass -----

    /// Back-propagate from a scalar `loss`. Adjoints are kept until
    /// [`Graph::zero_grad`]; a second call without zeroing is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward(
                "gradients already computed; call zero_grad before another backward pass".into(),
            ));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Backward(
                "loss was not produced by a forward pass on this graph".into(),
            ));
        }
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                lv.shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj);
            grads[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    fn slot<'a>(&self, adj: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(adj[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let out_shape = node.value.shape();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(da) = self.slot(adj, *a) {
                    kernels::reduce_to(g, out_shape, self.shape(*a), da);
                }
                if let Some(db) = self.slot(adj, *b) {
                    if sign > 0.0 {
                        kernels::reduce_to(g, out_shape, self.shape(*b), db);
                    } else {
                        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                        kernels::reduce_to(&neg, out_shape, self.shape(*b), db);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ta = kernels::aligned_strides(sa, out_shape);
                let tb = kernels::aligned_strides(sb, out_shape);
                if let Some(da) = self.slot(adj, *a) {
                    kernels::for_each_broadcast(out_shape, &ta, &tb, |o, ia, ib| {
                        da[ia] += g[o] * vb[ib]
                    });
                }
                if let Some(db) = self.slot(adj, *b) {
                    kernels::for_each_broadcast(out_shape, &ta, &tb, |o, ia, ib| {
                        db[ib] += g[o] * va[ia]
                    });
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = self.slot(adj, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, g)| *d += g * c);
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.slot(adj, *x) {
                    for ((d, g), v) in dx.iter_mut().zip(g).zip(xv) {
                        if *v > 0.0 {
                            *d += g;
                        }
                    }
                }
            }
            Op::Exp(x) => {
                if let Some(dx) = self.slot(adj, *x) {
                    dx.iter_mut().zip(g).zip(y).for_each(|((d, g), y)| *d += g * y);
                }
            }
            Op::Log { x, floor } => {
                let xv = self.value(*x).data();
                if let Some(dx) = self.slot(adj, *x) {
                    for ((d, g), v) in dx.iter_mut().zip(g).zip(xv) {
                        if *v > *floor {
                            *d += g / v;
                        }
                    }
                }
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, g, adj),
            Op::Conv1d {
                x,
                w,
                stride,
                padding,
            } => {
                let d = self
                    .conv_dims(*x, *w, *stride, *padding)
                    .expect("conv dims validated in forward");
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx_buf = self.nodes[x.0].requires_grad.then(|| vec![0.0; xv.len()]);
                let mut dw_buf = self.nodes[w.0].requires_grad.then(|| vec![0.0; wv.len()]);
                kernels::conv1d_backward(xv, wv, g, dx_buf.as_deref_mut(), dw_buf.as_deref_mut(), &d);
                if let (Some(buf), Some(dx)) = (dx_buf, self.slot(adj, *x)) {
                    dx.iter_mut().zip(buf).for_each(|(d, b)| *d += b);
                }
                if let (Some(buf), Some(dw)) = (dw_buf, self.slot(adj, *w)) {
                    dw.iter_mut().zip(buf).for_each(|(d, b)| *d += b);
                }
            }
            Op::Sum { x, axis } | Op::Mean { x, axis } => {
                let is_mean = matches!(node.op, Op::Mean { .. });
                let sx = self.shape(*x).to_vec();
                if let Some(dx) = self.slot(adj, *x) {
                    match axis {
                        None => {
                            let c = if is_mean { g[0] / dx.len().max(1) as f64 } else { g[0] };
                            dx.iter_mut().for_each(|d| *d += c);
                        }
                        Some(ax) => {
                            let (outer, n, inner) = kernels::axis_split(&sx, *ax);
                            let c = if is_mean { 1.0 / n as f64 } else { 1.0 };
                            for o in 0..outer {
                                let gs = &g[o * inner..(o + 1) * inner];
                                for j in 0..n {
                                    let dst = &mut dx[(o * n + j) * inner..][..inner];
                                    dst.iter_mut().zip(gs).for_each(|(d, g)| *d += g * c);
                                }
                            }
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = kernels::axis_split(out_shape, *axis);
                if let Some(dx) = self.slot(adj, *x) {
                    kernels::softmax_backward(y, g, dx, outer, n, inner);
                }
            }
            Op::LayerNorm { x } => {
                let d = *out_shape.last().unwrap();
                if let Some(dx) = self.slot(adj, *x) {
                    for (r, rs) in node.cache.iter().enumerate() {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let mg = gr.iter().sum::<f64>() / d as f64;
                        let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for ((dst, gv), yv) in dx[r * d..(r + 1) * d].iter_mut().zip(gr).zip(yr) {
                            *dst += rs * (gv - mg - yv * mgy);
                        }
                    }
                }
            }
            Op::L2Normalize { x, eps } => {
                let d = *out_shape.last().unwrap();
                if let Some(dx) = self.slot(adj, *x) {
                    for (r, norm) in node.cache.iter().enumerate() {
                        let yr = &y[r * d..(r + 1) * d];
                        let gr = &g[r * d..(r + 1) * d];
                        let dst = &mut dx[r * d..(r + 1) * d];
                        if *norm > *eps {
                            let gy: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for ((o, gv), yv) in dst.iter_mut().zip(gr).zip(yr) {
                                *o += (gv - yv * gy) / norm;
                            }
                        } else {
                            for (o, gv) in dst.iter_mut().zip(gr) {
                                *o += gv / eps;
                            }
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let dim = self.shape(*table)[1];
                if let Some(dt) = self.slot(adj, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &g[r * dim..(r + 1) * dim];
                        for (d, s) in dt[id * dim..(id + 1) * dim].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut offset = 0;
                for &x in xs {
                    let n = self.shape(x)[*axis];
                    if let Some(dx) = self.slot(adj, x) {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..][..n * inner];
                            let dst = &mut dx[o * n * inner..(o + 1) * n * inner];
                            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += n;
                }
            }
            Op::Transpose(x) => {
                let gt = transpose_last2(g, out_shape);
                if let Some(dx) = self.slot(adj, *x) {
                    dx.iter_mut().zip(gt).for_each(|(d, s)| *d += s);
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = self.slot(adj, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
            }
        }
    }

    fn matmul_backward(&self, a: Var, b: Var, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        if sb.len() == 2 {
            let k = sb[0];
            let n = sb[1];
            let rows: usize = sa[..sa.len() - 1].iter().product();
            if let Some(da) = self.slot(adj, a) {
                kernels::mm_nt(g, vb, da, rows, k, n);
            }
            if let Some(db) = self.slot(adj, b) {
                kernels::mm_tn(va, g, db, rows, k, n);
            }
        } else {
            let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
            if let Some(da) = self.slot(adj, a) {
                for i in 0..bt {
                    kernels::mm_nt(
                        &g[i * m * n..(i + 1) * m * n],
                        &vb[i * k * n..(i + 1) * k * n],
                        &mut da[i * m * k..(i + 1) * m * k],
                        m,
                        k,
                        n,
                    );
                }
            }
            if let Some(db) = self.slot(adj, b) {
                for i in 0..bt {
                    kernels::mm_tn(
                        &va[i * m * k..(i + 1) * m * k],
                        &g[i * m * n..(i + 1) * m * n],
                        &mut db[i * k * n..(i + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
            }
        }
    }
}

fn transpose_last2(v: &[f64], shape: &[usize]) -> Vec<f64> {
    let r = shape.len();
    let (rows, cols) = (shape[r - 2], shape[r - 1]);
    let batch: usize = shape[..r - 2].iter().product();
    let mut out = vec![0.0; v.len()];
    for b in 0..batch {
        let base = b * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                out[base + j * rows + i] = v[base + i * cols + j];
            }
        }
    }
    out
}
