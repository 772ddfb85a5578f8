use std::any::Any;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::custom::CustomOp;
use super::tensor::{gemm, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    ClampMin(Var, f64),
    Sum(Var),
    Mean(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    Reshape(Var),
    Dropout(Var, Vec<f64>),
    Gather(Var, Vec<usize>),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Rc<dyn CustomOp>,
        saved: Box<dyn Any>,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Dynamic tape. Operations are recorded as they execute, so node order is a
/// valid topological order and backward is a single reverse sweep.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    training: bool,
    rng: ChaCha8Rng,
}

impl Graph {
    /// `training` enables dropout; `seed` drives the dropout masks.
    pub fn new(training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::with_capacity(256),
            grads: Vec::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn inference() -> Self {
        Self::new(false, 0)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last `backward` call w.r.t. `v`, if it received any.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return shape_err("matmul", format!("({m},{k}) x ({k2},{n})"));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, rg, Op::MatMul(a, b)))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul_nt")?;
        let (n, k2) = self.value(b).dims2("matmul_nt")?;
        if k != k2 {
            return shape_err("matmul_nt", format!("({m},{k}) x ({n},{k2})^T"));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, rg, Op::MatMulNT(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return shape_err(op, format!("{sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, rg, node))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`c` bias to every row of an `[r, c]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2("add_row")?;
        if self.value(bias).numel() != c {
            return shape_err(
                "add_row",
                format!("bias {:?} for rows of width {c}", self.value(bias).shape()),
            );
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(Tensor::matrix(r, c, out)?, rg, Op::AddRow(a, bias)))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, node: Op) -> Var {
        let src = self.value(a);
        let t = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&x| f(x)).collect())
            .expect("same shape");
        let rg = self.rg(a);
        self.push(t, rg, node)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a))
    }

    /// `max(a, floor)`; gradient is blocked where the floor is active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.map(a, |x| x.max(floor), Op::ClampMin(a, floor))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return shape_err("mean", "empty tensor");
        }
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s / n as f64), rg, Op::Mean(a)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat_rows", "no inputs");
        }
        let (_, c) = self.value(parts[0]).dims2("concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c2) = self.value(p).dims2("concat_rows")?;
            if c2 != c {
                return shape_err("concat_rows", format!("width {c2} vs {c}"));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, c, data)?, rg, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat_cols", "no inputs");
        }
        let (r, _) = self.value(parts[0]).dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r2, c) = self.value(p).dims2("concat_cols")?;
            if r2 != r {
                return shape_err("concat_cols", format!("height {r2} vs {r}"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(r, total, data)?, rg, Op::ConcatCols(parts.to_vec())))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2("slice_rows")?;
        if start > end || end > r {
            return shape_err("slice_rows", format!("rows {start}..{end} of {r}"));
        }
        let data = self.value(a).data()[start * c..end * c].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(end - start, c, data)?, rg, Op::SliceRows(a, start)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, rg, Op::Reshape(a)))
    }

    /// Inverted dropout. Identity (no node recorded) outside training.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Invalid(format!("dropout probability {p} not in [0, 1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(a).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let src = self.value(a);
        let data = src.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(t, rg, Op::Dropout(a, mask)))
    }

    /// Rows of `table` selected by `ids`, giving `[ids.len(), width]`.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, c) = self.value(table).dims2("embedding_lookup")?;
        let mut data = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            if i >= rows {
                return shape_err("embedding_lookup", format!("id {i} out of {rows} rows"));
            }
            data.extend_from_slice(self.value(table).row_slice(i));
        }
        let rg = self.rg(table);
        Ok(self.push(Tensor::matrix(ids.len(), c, data)?, rg, Op::Gather(table, ids.to_vec())))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2("softmax_rows")?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(r, c, out)?, rg, Op::SoftmaxRows(a)))
    }

    /// Row-wise layer normalization with affine `gain` and `bias` (length = width).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.value(x).dims2("layer_norm")?;
        if self.value(gain).numel() != c || self.value(bias).numel() != c {
            return shape_err("layer_norm", format!("affine params for width {c}"));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mu) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            Tensor::matrix(r, c, out)?,
            rg,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Runs a registered custom op; its backward participates like a built-in.
    pub fn custom(&mut self, op: &Rc<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let (out, saved) = {
            let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
            op.forward(&vals)?
        };
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            out,
            rg,
            Op::Custom {
                inputs: inputs.to_vec(),
                op: Rc::clone(op),
                saved,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// across fan-out and are kept for every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            backprop_node(&self.nodes, node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.numel()]))
}

fn acc_scaled(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], f: impl Fn(usize, f64) -> f64) {
    if let Some(dst) = slot(nodes, grads, v) {
        for (j, (d, &gj)) in dst.iter_mut().zip(g).enumerate() {
            *d += f(j, gj);
        }
    }
}

fn backprop_node(
    nodes: &[Node],
    node: &Node,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) -> Result<()> {
    let val = |v: Var| &nodes[v.0].value;
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
            let n = val(*b).shape()[1];
            let (ad, bd) = (val(*a).data(), val(*b).data());
            if let Some(ga) = slot(nodes, grads, *a) {
                gemm(m, n, k, g, false, bd, true, 1.0, ga);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                gemm(k, m, n, ad, true, g, false, 1.0, gb);
            }
        }
        Op::MatMulNT(a, b) => {
            let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
            let n = val(*b).shape()[0];
            let (ad, bd) = (val(*a).data(), val(*b).data());
            if let Some(ga) = slot(nodes, grads, *a) {
                gemm(m, n, k, g, false, bd, false, 1.0, ga);
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                gemm(n, m, k, g, true, ad, false, 1.0, gb);
            }
        }
        Op::Add(a, b) => {
            acc_scaled(nodes, grads, *a, g, |_, x| x);
            acc_scaled(nodes, grads, *b, g, |_, x| x);
        }
        Op::Sub(a, b) => {
            acc_scaled(nodes, grads, *a, g, |_, x| x);
            acc_scaled(nodes, grads, *b, g, |_, x| -x);
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (val(*a).data(), val(*b).data());
            acc_scaled(nodes, grads, *a, g, |j, x| x * bd[j]);
            acc_scaled(nodes, grads, *b, g, |j, x| x * ad[j]);
        }
        Op::AddRow(a, bias) => {
            acc_scaled(nodes, grads, *a, g, |_, x| x);
            if let Some(gb) = slot(nodes, grads, *bias) {
                let c = gb.len();
                for row in g.chunks(c) {
                    gb.iter_mut().zip(row).for_each(|(d, x)| *d += x);
                }
            }
        }
        Op::Scale(a, c) => acc_scaled(nodes, grads, *a, g, |_, x| x * c),
        Op::Tanh(a) => acc_scaled(nodes, grads, *a, g, |j, x| x * (1.0 - y[j] * y[j])),
        Op::Relu(a) => {
            let ad = val(*a).data();
            acc_scaled(nodes, grads, *a, g, |j, x| if ad[j] > 0.0 { x } else { 0.0 })
        }
        Op::Exp(a) => acc_scaled(nodes, grads, *a, g, |j, x| x * y[j]),
        Op::Log(a) => {
            let ad = val(*a).data();
            acc_scaled(nodes, grads, *a, g, |j, x| x / ad[j])
        }
        Op::ClampMin(a, floor) => {
            let ad = val(*a).data();
            acc_scaled(nodes, grads, *a, g, |j, x| if ad[j] > *floor { x } else { 0.0 })
        }
        Op::Sum(a) => {
            let g0 = g[0];
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().for_each(|d| *d += g0);
            }
        }
        Op::Mean(a) => {
            let n = val(*a).numel() as f64;
            let g0 = g[0] / n;
            if let Some(ga) = slot(nodes, grads, *a) {
                ga.iter_mut().for_each(|d| *d += g0);
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for p in parts {
                let n = val(*p).numel();
                acc_scaled(nodes, grads, *p, &g[off..off + n], |_, x| x);
                off += n;
            }
        }
        Op::ConcatCols(parts) => {
            let total = node.value.shape()[1];
            let mut col = 0;
            for p in parts {
                let (r, c) = (val(*p).shape()[0], val(*p).shape()[1]);
                if let Some(gp) = slot(nodes, grads, *p) {
                    for i in 0..r {
                        let src = &g[i * total + col..i * total + col + c];
                        gp[i * c..(i + 1) * c]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, x)| *d += x);
                    }
                }
                col += c;
            }
        }
        Op::SliceRows(a, start) => {
            let c = val(*a).shape()[1];
            if let Some(ga) = slot(nodes, grads, *a) {
                ga[start * c..start * c + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, x)| *d += x);
            }
        }
        Op::Reshape(a) => acc_scaled(nodes, grads, *a, g, |_, x| x),
        Op::Dropout(a, mask) => acc_scaled(nodes, grads, *a, g, |j, x| x * mask[j]),
        Op::Gather(table, ids) => {
            let c = val(*table).shape()[1];
            if let Some(gt) = slot(nodes, grads, *table) {
                for (r, &id) in ids.iter().enumerate() {
                    gt[id * c..(id + 1) * c]
                        .iter_mut()
                        .zip(&g[r * c..(r + 1) * c])
                        .for_each(|(d, x)| *d += x);
                }
            }
        }
        Op::SoftmaxRows(a) => {
            let c = node.value.shape()[1];
            if let Some(ga) = slot(nodes, grads, *a) {
                for ((gr, yr), dr) in g.chunks(c).zip(y.chunks(c)).zip(ga.chunks_mut(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let c = node.value.shape()[1];
            let gd = val(*gain).data();
            if let Some(gx) = slot(nodes, grads, *x) {
                let cf = c as f64;
                for (i, is) in inv_std.iter().enumerate() {
                    let gr = &g[i * c..(i + 1) * c];
                    let hr = &xhat[i * c..(i + 1) * c];
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..c {
                        let gh = gr[j] * gd[j];
                        s1 += gh;
                        s2 += gh * hr[j];
                    }
                    for j in 0..c {
                        let gh = gr[j] * gd[j];
                        gx[i * c + j] += is / cf * (cf * gh - s1 - hr[j] * s2);
                    }
                }
            }
            if let Some(gg) = slot(nodes, grads, *gain) {
                for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        gg[j] += gr[j] * hr[j];
                    }
                }
            }
            if let Some(gb) = slot(nodes, grads, *bias) {
                for gr in g.chunks(c) {
                    gb.iter_mut().zip(gr).for_each(|(d, x)| *d += x);
                }
            }
        }
        Op::Custom { inputs, op, saved } => {
            let vals: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
            let upstream = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
            let gs = op.backward(&vals, &node.value, saved.as_ref(), &upstream)?;
            if gs.len() != inputs.len() {
                return Err(Error::Invalid(format!(
                    "custom op `{}` returned {} gradients for {} inputs",
                    op.name(),
                    gs.len(),
                    inputs.len()
                )));
            }
            for (i, (v, gi)) in inputs.iter().zip(&gs).enumerate() {
                if gi.shape() != val(*v).shape() {
                    return Err(Error::CustomGradShape {
                        op: op.name().to_string(),
                        index: i,
                        got: gi.shape().to_vec(),
                        expected: val(*v).shape().to_vec(),
                    });
                }
                acc_scaled(nodes, grads, *v, gi.data(), |_, x| x);
            }
        }
    }
    Ok(())
}
