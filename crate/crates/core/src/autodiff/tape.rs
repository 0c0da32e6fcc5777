//! Dynamic reverse-mode tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so walking the node list backwards is a valid reverse
//! topological order. Parameters enter the tape by value (see
//! [`Tape::param`]) and their gradients are scattered back into the
//! [`ParamStore`] by [`Tape::backward`].

use super::tensor::{numel, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Named operations accepted by [`Tape::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpName {
    Add,
    Mul,
    MatMul,
    Exp,
    Log,
    Sum,
    Mean,
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
        end: usize,
    },
    Relu,
    SoftmaxRows,
    L2NormalizeRows,
    ScalarScale(f64),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Sum(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    L2NormalizeRows(Var),
    LayerNormRows {
        x: Var,
        inv_std: Vec<f64>,
    },
    Scale(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    Reshape(Var),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
    },
    AvgPool2d {
        x: Var,
        ph: usize,
        pw: usize,
    },
    /// Output depends on scalar inputs through precomputed elementwise partials.
    ScalarJacobian {
        inputs: Vec<Var>,
        partials: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    no_grad: bool,
}

fn shape_err(op: &'static str, shapes: &[&[usize]]) -> Error {
    Error::Shape {
        op,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For each flat index of `out`, the flat index into a tensor of shape `inp`
/// broadcast to `out`.
fn broadcast_map(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0usize; rank];
    let mut acc = 1;
    for i in (0..inp.len()).rev() {
        let oi = i + rank - inp.len();
        strides[oi] = if inp[i] == 1 && out[oi] != 1 { 0 } else { acc };
        acc *= inp[i];
    }
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut flat = 0usize;
    for _ in 0..n {
        map.push(flat);
        for d in (0..rank).rev() {
            idx[d] += 1;
            flat += strides[d];
            if idx[d] < out[d] {
                break;
            }
            flat -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().unwrap_or(&1);
    let rows = if cols == 0 { 0 } else { numel(shape) / cols };
    (rows, cols)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape on which nothing requires gradients (inference).
    pub fn no_grad() -> Self {
        Self {
            no_grad: true,
            ..Self::default()
        }
    }

    pub fn is_no_grad(&self) -> bool {
        self.no_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad: requires_grad && !self.no_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if `v` requires grad.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        if numel(&shape) != value.len() {
            return Err(shape_err("constant", &[&shape, &[value.len()]]));
        }
        Ok(self.push(shape, value, false, Op::Leaf { param: None }))
    }

    /// A free leaf that requires grad but is not backed by a parameter.
    pub fn leaf(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        if numel(&shape) != value.len() {
            return Err(shape_err("leaf", &[&shape, &[value.len()]]));
        }
        Ok(self.push(shape, value, true, Op::Leaf { param: None }))
    }

    /// Copy a parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        let rg = t.requires_grad();
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            rg,
            Op::Leaf { param: Some(id) },
        )
    }

    /// Generic entry point by operation name.
    pub fn apply(&mut self, op: OpName, inputs: &[Var]) -> Result<Var> {
        let arity = match op {
            OpName::Add | OpName::Mul | OpName::MatMul => 2,
            OpName::Concat { .. } => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::Contract(format!(
                "{op:?} expects {arity} input(s), got {}",
                inputs.len()
            )));
        }
        match op {
            OpName::Add => self.add(inputs[0], inputs[1]),
            OpName::Mul => self.mul(inputs[0], inputs[1]),
            OpName::MatMul => self.matmul(inputs[0], inputs[1]),
            OpName::Exp => Ok(self.exp(inputs[0])),
            OpName::Log => Ok(self.log(inputs[0])),
            OpName::Sum => Ok(self.sum(inputs[0])),
            OpName::Mean => Ok(self.mean(inputs[0])),
            OpName::Concat { axis } => self.concat(inputs, axis),
            OpName::Slice { axis, start, end } => self.slice(inputs[0], axis, start, end),
            OpName::Relu => Ok(self.relu(inputs[0])),
            OpName::SoftmaxRows => Ok(self.softmax_rows(inputs[0])),
            OpName::L2NormalizeRows => Ok(self.l2_normalize_rows(inputs[0])),
            OpName::ScalarScale(c) => Ok(self.scale(inputs[0], c)),
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let out = broadcast_shape(sa, sb).ok_or_else(|| shape_err(name, &[sa, sb]))?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = if sa == sb {
            va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect()
        } else {
            let ma = broadcast_map(&out, sa);
            let mb = broadcast_map(&out, sb);
            ma.iter().zip(&mb).map(|(i, j)| f(va[*i], vb[*j])).collect()
        };
        Ok((out, value))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, value) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, value, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, value) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, value, rg, Op::Sub(a, b)))
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, value) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, value, rg, Op::Mul(a, b)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", &[sa, sb]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = matmul_raw(&self.nodes[a.0].value, &self.nodes[b.0].value, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], value, rg, Op::MatMul(a, b)))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let value = self.nodes[x.0].value.iter().map(|v| f(*v)).collect();
        let rg = self.rg(x);
        self.push(shape, value, rg, op)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.iter().sum();
        let rg = self.rg(x);
        self.push(vec![], vec![s], rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].value.len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over one axis, keeping it with size 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        if axis >= shape.len() {
            return Err(shape_err("sum_axis", &[&shape]));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let v = &self.nodes[x.0].value;
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += v[base + i];
                }
            }
        }
        let mut oshape = shape;
        oshape[axis] = 1;
        let rg = self.rg(x);
        Ok(self.push(oshape, out, rg, Op::SumAxis { x, axis }))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self.nodes[x.0]
            .shape
            .get(axis)
            .ok_or_else(|| shape_err("mean_axis", &[&self.nodes[x.0].shape]))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / len.max(1) as f64))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.nodes[first.0].shape.clone();
        if axis >= base.len() {
            return Err(shape_err("concat", &[&base]));
        }
        let mut total = 0;
        for v in inputs {
            let s = &self.nodes[v.0].shape;
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !ok {
                let shapes: Vec<&[usize]> = inputs
                    .iter()
                    .map(|v| self.nodes[v.0].shape.as_slice())
                    .collect();
                return Err(shape_err("concat", &shapes));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let len = self.nodes[v.0].shape[axis];
                let src = &self.nodes[v.0].value[o * len * inner..(o + 1) * len * inner];
                value.extend_from_slice(src);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|v| self.rg(*v));
        Ok(self.push(
            shape,
            value,
            rg,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(shape_err("slice", &[&shape, &[axis, start, end]]));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let width = end - start;
        let v = &self.nodes[x.0].value;
        let mut value = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let from = (o * len + start) * inner;
            value.extend_from_slice(&v[from..from + width * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = width;
        let rg = self.rg(x);
        Ok(self.push(oshape, value, rg, Op::Slice { x, axis, start }))
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let (rows, cols) = rows_cols(&shape);
        let v = &self.nodes[x.0].value;
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * cols..(r + 1) * cols];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..cols {
                let e = (row[c] - mx).exp();
                out[r * cols + c] = e;
                z += e;
            }
            out[r * cols..(r + 1) * cols]
                .iter_mut()
                .for_each(|e| *e /= z);
        }
        let rg = self.rg(x);
        self.push(shape, out, rg, Op::SoftmaxRows(x))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let (rows, cols) = rows_cols(&shape);
        let v = &self.nodes[x.0].value;
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * cols..(r + 1) * cols];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|e| (e - mx).exp()).sum::<f64>().ln();
            for c in 0..cols {
                out[r * cols + c] = row[c] - lse;
            }
        }
        let rg = self.rg(x);
        self.push(shape, out, rg, Op::LogSoftmaxRows(x))
    }

    /// Divide each row (last axis) by its Euclidean norm. Zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let (rows, cols) = rows_cols(&shape);
        let v = &self.nodes[x.0].value;
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * cols..(r + 1) * cols];
            let n = row.iter().map(|e| e * e).sum::<f64>().sqrt();
            if n > 0.0 {
                for c in 0..cols {
                    out[r * cols + c] = row[c] / n;
                }
            }
        }
        let rg = self.rg(x);
        self.push(shape, out, rg, Op::L2NormalizeRows(x))
    }

    /// Standardize each row (last axis) to zero mean, unit variance.
    pub fn layer_norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let shape = self.nodes[x.0].shape.clone();
        let (rows, cols) = rows_cols(&shape);
        let v = &self.nodes[x.0].value;
        let mut out = vec![0.0; v.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &v[r * cols..(r + 1) * cols];
            let mu = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            for c in 0..cols {
                out[r * cols + c] = (row[c] - mu) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(x);
        self.push(shape, out, rg, Op::LayerNormRows { x, inv_std })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 2 {
            return Err(shape_err("transpose", &[&shape]));
        }
        let (m, n) = (shape[0], shape[1]);
        let v = &self.nodes[x.0].value;
        let mut out = vec![0.0; v.len()];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![n, m], out, rg, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.nodes[x.0].value.len() {
            return Err(shape_err("reshape", &[&self.nodes[x.0].shape, &shape]));
        }
        let value = self.nodes[x.0].value.clone();
        let rg = self.rg(x);
        Ok(self.push(shape, value, rg, Op::Reshape(x)))
    }

    /// Rows `ids` of a 2-D `table`, stacked.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.nodes[table.0].shape.clone();
        if shape.len() != 2 || ids.iter().any(|&i| i >= shape[0]) {
            return Err(shape_err("gather_rows", &[&shape, ids]));
        }
        let w = shape[1];
        let v = &self.nodes[table.0].value;
        let mut value = Vec::with_capacity(ids.len() * w);
        for &i in ids {
            value.extend_from_slice(&v[i * w..(i + 1) * w]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            vec![ids.len(), w],
            value,
            rg,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Stride-1 "same" convolution: `x` is `[B, Ci, H, W]`, `w` is
    /// `[Co, Ci, k, k]` with odd `k`, `b` is `[Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (
            &self.nodes[x.0].shape,
            &self.nodes[w.0].shape,
            &self.nodes[b.0].shape,
        );
        if sx.len() != 4
            || sw.len() != 4
            || sw[1] != sx[1]
            || sw[2] != sw[3]
            || sw[2] % 2 == 0
            || sb.as_slice() != [sw[0]]
        {
            return Err(shape_err("conv2d", &[sx, sw, sb]));
        }
        let (bn, ci, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, k) = (sw[0], sw[2]);
        let pad = (k / 2) as isize;
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![0.0; bn * co * h * wd];
        for n in 0..bn {
            for o in 0..co {
                let oplane = &mut out[(n * co + o) * h * wd..(n * co + o + 1) * h * wd];
                oplane.iter_mut().for_each(|e| *e = bv[o]);
                for c in 0..ci {
                    let iplane = &xv[(n * ci + c) * h * wd..(n * ci + c + 1) * h * wd];
                    for ky in 0..k {
                        for kx in 0..k {
                            let wt = wv[((o * ci + c) * k + ky) * k + kx];
                            let dy = ky as isize - pad;
                            let dx = kx as isize - pad;
                            let y0 = (-dy).max(0) as usize;
                            let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
                            let x0 = (-dx).max(0) as usize;
                            let x1 = (wd as isize - dx).min(wd as isize).max(0) as usize;
                            for yy in y0..y1 {
                                let iy = (yy as isize + dy) as usize;
                                let orow = &mut oplane[yy * wd..(yy + 1) * wd];
                                let irow = &iplane[iy * wd..(iy + 1) * wd];
                                for xx in x0..x1 {
                                    orow[xx] += wt * irow[(xx as isize + dx) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(vec![bn, co, h, wd], out, rg, Op::Conv2d { x, w, b }))
    }

    /// Non-overlapping average pooling over the last two axes of a 4-D
    /// tensor. Trailing rows/columns that do not fill a window are dropped.
    pub fn avg_pool2d(&mut self, x: Var, ph: usize, pw: usize) -> Result<Var> {
        let s = self.nodes[x.0].shape.clone();
        if s.len() != 4 || ph == 0 || pw == 0 || s[2] < ph || s[3] < pw {
            return Err(shape_err("avg_pool2d", &[&s, &[ph, pw]]));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / ph, w / pw);
        let v = &self.nodes[x.0].value;
        let norm = 1.0 / (ph * pw) as f64;
        let mut out = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            for y in 0..oh * ph {
                for xx in 0..ow * pw {
                    out[(p * oh + y / ph) * ow + xx / pw] += v[(p * h + y) * w + xx] * norm;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            vec![s[0], s[1], oh, ow],
            out,
            rg,
            Op::AvgPool2d { x, ph, pw },
        ))
    }

    /// Record a node whose value was computed outside the tape and which
    /// depends on the scalar `inputs` through `partials[i][j] = d out[j] / d
    /// inputs[i]`. Partials may be empty when no input requires grad.
    pub fn scalar_jacobian(
        &mut self,
        shape: Vec<usize>,
        value: Vec<f64>,
        inputs: Vec<Var>,
        partials: Vec<Vec<f64>>,
    ) -> Result<Var> {
        if numel(&shape) != value.len() {
            return Err(shape_err("scalar_jacobian", &[&shape, &[value.len()]]));
        }
        for v in &inputs {
            if self.nodes[v.0].value.len() != 1 {
                return Err(shape_err("scalar_jacobian", &[&self.nodes[v.0].shape]));
            }
        }
        let rg = inputs.iter().any(|v| self.rg(*v));
        if rg && (partials.len() != inputs.len() || partials.iter().any(|p| p.len() != value.len()))
        {
            return Err(Error::Contract(
                "scalar_jacobian: one partial array per input, each output-sized".into(),
            ));
        }
        Ok(self.push(shape, value, rg, Op::ScalarJacobian { inputs, partials }))
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added to
    /// whatever the store already holds.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Leaf { param: Some(id) }, Some(g)) = (&node.op, &grads[i]) {
                store.get_mut(*id).accumulate_grad(g);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn acc_broadcast(&self, grads: &mut [Option<Vec<f64>>], v: Var, out: &[usize], g: &[f64]) {
        let shape = &self.nodes[v.0].shape;
        if shape.as_slice() == out {
            self.acc(grads, v, |s| s.iter_mut().zip(g).for_each(|(a, b)| *a += b));
        } else {
            let map = broadcast_map(out, shape);
            self.acc(grads, v, |s| {
                for (j, gi) in map.iter().zip(g) {
                    s[*j] += gi;
                }
            });
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                self.acc_broadcast(grads, *a, &node.shape, g);
                self.acc_broadcast(grads, *b, &node.shape, g);
            }
            Op::Sub(a, b) => {
                self.acc_broadcast(grads, *a, &node.shape, g);
                let neg: Vec<f64> = g.iter().map(|e| -e).collect();
                self.acc_broadcast(grads, *b, &node.shape, &neg);
            }
            Op::Mul(a, b) => {
                for (me, other) in [(*a, *b), (*b, *a)] {
                    if !self.rg(me) {
                        continue;
                    }
                    let ov = &self.nodes[other.0].value;
                    let os = &self.nodes[other.0].shape;
                    let local: Vec<f64> = if os == &node.shape {
                        g.iter().zip(ov).map(|(x, y)| x * y).collect()
                    } else {
                        let map = broadcast_map(&node.shape, os);
                        g.iter().zip(&map).map(|(x, j)| x * ov[*j]).collect()
                    };
                    self.acc_broadcast(grads, me, &node.shape, &local);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.rg(*a) {
                    let bv = &self.nodes[b.0].value;
                    self.acc(grads, *a, |s| {
                        for r in 0..m {
                            for c in 0..n {
                                let gv = g[r * n + c];
                                if gv == 0.0 {
                                    continue;
                                }
                                for t in 0..k {
                                    s[r * k + t] += gv * bv[t * n + c];
                                }
                            }
                        }
                    });
                }
                if self.rg(*b) {
                    let av = &self.nodes[a.0].value;
                    self.acc(grads, *b, |s| {
                        for r in 0..m {
                            for t in 0..k {
                                let x = av[r * k + t];
                                if x == 0.0 {
                                    continue;
                                }
                                let srow = &mut s[t * n..(t + 1) * n];
                                let grow = &g[r * n..(r + 1) * n];
                                for c in 0..n {
                                    srow[c] += x * grow[c];
                                }
                            }
                        }
                    });
                }
            }
            Op::Exp(x) => self.acc(grads, *x, |s| {
                s.iter_mut()
                    .zip(g)
                    .zip(y)
                    .for_each(|((a, gv), yv)| *a += gv * yv)
            }),
            Op::Log(x) => {
                let xv = &self.nodes[x.0].value;
                self.acc(grads, *x, |s| {
                    s.iter_mut()
                        .zip(g)
                        .zip(xv)
                        .for_each(|((a, gv), xv)| *a += gv / xv)
                })
            }
            Op::Relu(x) => {
                let xv = &self.nodes[x.0].value;
                self.acc(grads, *x, |s| {
                    for ((a, gv), xv) in s.iter_mut().zip(g).zip(xv) {
                        if *xv > 0.0 {
                            *a += gv;
                        }
                    }
                })
            }
            Op::Sigmoid(x) => self.acc(grads, *x, |s| {
                for ((a, gv), yv) in s.iter_mut().zip(g).zip(y) {
                    *a += gv * yv * (1.0 - yv);
                }
            }),
            Op::Softplus(x) => {
                let xv = &self.nodes[x.0].value;
                self.acc(grads, *x, |s| {
                    for ((a, gv), xv) in s.iter_mut().zip(g).zip(xv) {
                        *a += gv * sigmoid(*xv);
                    }
                })
            }
            Op::Scale(x, c) => self.acc(grads, *x, |s| {
                s.iter_mut().zip(g).for_each(|(a, gv)| *a += gv * c)
            }),
            Op::AddScalar(x) | Op::Reshape(x) => self.acc(grads, *x, |s| {
                s.iter_mut().zip(g).for_each(|(a, gv)| *a += gv)
            }),
            Op::Sum(x) => self.acc(grads, *x, |s| s.iter_mut().for_each(|a| *a += g[0])),
            Op::SumAxis { x, axis } => {
                let shape = &self.nodes[x.0].shape;
                let (outer, len, inner) = split_axis(shape, *axis);
                self.acc(grads, *x, |s| {
                    for o in 0..outer {
                        for k in 0..len {
                            for t in 0..inner {
                                s[(o * len + k) * inner + t] += g[o * inner + t];
                            }
                        }
                    }
                })
            }
            Op::Concat { inputs, axis } => {
                let outer = numel(&node.shape[..*axis]);
                let inner = numel(&node.shape[axis + 1..]);
                let total = node.shape[*axis];
                let mut offset = 0;
                for v in inputs {
                    let len = self.nodes[v.0].shape[*axis];
                    self.acc(grads, *v, |s| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            for t in 0..len * inner {
                                s[dst + t] += g[src + t];
                            }
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let shape = &self.nodes[x.0].shape;
                let (outer, len, inner) = split_axis(shape, *axis);
                let width = node.shape[*axis];
                self.acc(grads, *x, |s| {
                    for o in 0..outer {
                        let dst = (o * len + start) * inner;
                        let src = o * width * inner;
                        for t in 0..width * inner {
                            s[dst + t] += g[src + t];
                        }
                    }
                })
            }
            Op::SoftmaxRows(x) => {
                let (rows, cols) = rows_cols(&node.shape);
                self.acc(grads, *x, |s| {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            s[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                })
            }
            Op::LogSoftmaxRows(x) => {
                let (rows, cols) = rows_cols(&node.shape);
                self.acc(grads, *x, |s| {
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let gs: f64 = gr.iter().sum();
                        for c in 0..cols {
                            s[r * cols + c] += gr[c] - y[r * cols + c].exp() * gs;
                        }
                    }
                })
            }
            Op::L2NormalizeRows(x) => {
                let (rows, cols) = rows_cols(&node.shape);
                let xv = &self.nodes[x.0].value;
                self.acc(grads, *x, |s| {
                    for r in 0..rows {
                        let xr = &xv[r * cols..(r + 1) * cols];
                        let n = xr.iter().map(|e| e * e).sum::<f64>().sqrt();
                        if n == 0.0 {
                            continue;
                        }
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            s[r * cols + c] += (gr[c] - yr[c] * dot) / n;
                        }
                    }
                })
            }
            Op::LayerNormRows { x, inv_std } => {
                let (rows, cols) = rows_cols(&node.shape);
                self.acc(grads, *x, |s| {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let gm = gr.iter().sum::<f64>() / cols as f64;
                        let gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for c in 0..cols {
                            s[r * cols + c] += inv_std[r] * (gr[c] - gm - yr[c] * gy);
                        }
                    }
                })
            }
            Op::Transpose(x) => {
                let (m, n) = (node.shape[1], node.shape[0]);
                self.acc(grads, *x, |s| {
                    for i in 0..m {
                        for j in 0..n {
                            s[i * n + j] += g[j * m + i];
                        }
                    }
                })
            }
            Op::GatherRows { table, ids } => {
                let w = node.shape[1];
                self.acc(grads, *table, |s| {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..w {
                            s[id * w + c] += g[r * w + c];
                        }
                    }
                })
            }
            Op::Conv2d { x, w, b } => self.conv2d_backward(node, g, *x, *w, *b, grads),
            Op::AvgPool2d { x, ph, pw } => {
                let s_in = &self.nodes[x.0].shape;
                let (planes, h, wd) = (s_in[0] * s_in[1], s_in[2], s_in[3]);
                let (oh, ow) = (node.shape[2], node.shape[3]);
                let norm = 1.0 / (ph * pw) as f64;
                self.acc(grads, *x, |s| {
                    for p in 0..planes {
                        for yy in 0..oh * ph {
                            for xx in 0..ow * pw {
                                s[(p * h + yy) * wd + xx] +=
                                    g[(p * oh + yy / ph) * ow + xx / pw] * norm;
                            }
                        }
                    }
                })
            }
            Op::ScalarJacobian { inputs, partials } => {
                for (v, p) in inputs.iter().zip(partials) {
                    let d: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
                    self.acc(grads, *v, |s| s[0] += d);
                }
            }
        }
    }

    fn conv2d_backward(
        &self,
        node: &Node,
        g: &[f64],
        x: Var,
        w: Var,
        b: Var,
        grads: &mut [Option<Vec<f64>>],
    ) {
        let sx = &self.nodes[x.0].shape;
        let sw = &self.nodes[w.0].shape;
        let (bn, ci, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (co, k) = (sw[0], sw[2]);
        let pad = (k / 2) as isize;
        let xv = &self.nodes[x.0].value;
        let wv = &self.nodes[w.0].value;
        debug_assert_eq!(node.shape, vec![bn, co, h, wd]);
        let plane = h * wd;
        if self.rg(b) {
            self.acc(grads, b, |s| {
                for n in 0..bn {
                    for o in 0..co {
                        s[o] += g[(n * co + o) * plane..(n * co + o + 1) * plane]
                            .iter()
                            .sum::<f64>();
                    }
                }
            });
        }
        let (need_x, need_w) = (self.rg(x), self.rg(w));
        if !need_x && !need_w {
            return;
        }
        let mut gx = if need_x {
            vec![0.0; xv.len()]
        } else {
            Vec::new()
        };
        let mut gw = if need_w {
            vec![0.0; wv.len()]
        } else {
            Vec::new()
        };
        for n in 0..bn {
            for o in 0..co {
                let gplane = &g[(n * co + o) * plane..(n * co + o + 1) * plane];
                for c in 0..ci {
                    let xoff = (n * ci + c) * plane;
                    for ky in 0..k {
                        for kx in 0..k {
                            let widx = ((o * ci + c) * k + ky) * k + kx;
                            let dy = ky as isize - pad;
                            let dx = kx as isize - pad;
                            let y0 = (-dy).max(0) as usize;
                            let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
                            let x0 = (-dx).max(0) as usize;
                            let x1 = (wd as isize - dx).min(wd as isize).max(0) as usize;
                            let wt = wv[widx];
                            let mut acc_w = 0.0;
                            for yy in y0..y1 {
                                let iy = (yy as isize + dy) as usize;
                                for xx in x0..x1 {
                                    let ix = (xx as isize + dx) as usize;
                                    let gv = gplane[yy * wd + xx];
                                    if need_w {
                                        acc_w += gv * xv[xoff + iy * wd + ix];
                                    }
                                    if need_x {
                                        gx[xoff + iy * wd + ix] += gv * wt;
                                    }
                                }
                            }
                            if need_w {
                                gw[widx] += acc_w;
                            }
                        }
                    }
                }
            }
        }
        if need_x {
            self.acc(grads, x, |s| {
                s.iter_mut().zip(&gx).for_each(|(a, v)| *a += v)
            });
        }
        if need_w {
            self.acc(grads, w, |s| {
                s.iter_mut().zip(&gw).for_each(|(a, v)| *a += v)
            });
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for t in 0..k {
            let x = a[r * k + t];
            if x == 0.0 {
                continue;
            }
            let brow = &b[t * n..(t + 1) * n];
            for c in 0..n {
                orow[c] += x * brow[c];
            }
        }
    }
    out
}
