use super::kernels::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, sigmoid};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleRows(Var, Vec<f64>),
    ColAffine(Var, Vec<f64>),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    MseRows(Var, Var),
    SelectRows(Var, Vec<usize>),
    MergeRows { base: Var, rows: Vec<usize>, sub: Var },
    MaskBlend(Vec<bool>, Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of primitive operations.
///
/// Node indices are assigned in execution order, so the record is already
/// topologically sorted and reverse replay visits each node once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `param`'s accumulator (zeros when `v`
    /// was not reached).
    pub fn accumulate_into(&self, v: Var, param: &mut Tensor) -> Result<()> {
        match self.get(v) {
            Some(g) => param.accumulate_grad(g),
            None => param.accumulate_grad(&vec![0.0; param.numel()]),
        }
    }
}

fn lead(shape: &[usize]) -> usize {
    shape.first().copied().unwrap_or(1)
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        value.set_requires_grad(requires_grad);
        value.zero_grad();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf. It requires grad iff the tensor does.
    pub fn watch(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t.clone(), Op::Leaf, rg)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(ta.data(), tb.data(), &mut out, k, n);
        let value = Tensor::new(&[m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    /// Elementwise sum. `b` may also be a row vector broadcast over the
    /// leading batch extent of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let rg = self.rg(a) || self.rg(b);
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let v = self.zip_same("add", a, b, |x, y| x + y)?;
            return Ok(self.push(v, Op::Add(a, b), rg));
        }
        if ta.rank() >= 1 && tb.shape() == &ta.shape()[1..] {
            let w = tb.numel();
            let mut data = ta.data().to_vec();
            for row in data.chunks_exact_mut(w) {
                row.iter_mut().zip(tb.data()).for_each(|(x, y)| *x += y);
            }
            let v = Tensor::new(ta.shape(), data)?;
            return Ok(self.push(v, Op::AddBias(a, b), rg));
        }
        Err(mismatch("add", ta, tb))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let v = Tensor::new(t.shape(), t.data().iter().map(|x| x * c).collect()).unwrap();
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let v = Tensor::new(t.shape(), t.data().iter().map(|x| x + c).collect()).unwrap();
        let rg = self.rg(a);
        self.push(v, Op::AddScalar(a), rg)
    }

    /// Multiplies row `i` of `a` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: &[f64]) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 || lead(t.shape()) != factors.len() {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![factors.len()],
            });
        }
        let w = t.numel() / factors.len();
        let mut data = t.data().to_vec();
        for (row, &c) in data.chunks_exact_mut(w).zip(factors) {
            row.iter_mut().for_each(|x| *x *= c);
        }
        let v = Tensor::new(t.shape(), data)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::ScaleRows(a, factors.to_vec()), rg))
    }

    /// `y[i][j] = a[i][j] * scale[j] + shift[j]` with constant per-column
    /// coefficients.
    pub fn col_affine(&mut self, a: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || t.shape()[1] != scale.len() || scale.len() != shift.len() {
            return Err(Error::ShapeMismatch {
                op: "col_affine",
                lhs: t.shape().to_vec(),
                rhs: vec![scale.len(), shift.len()],
            });
        }
        let mut data = t.data().to_vec();
        for row in data.chunks_exact_mut(scale.len()) {
            for ((x, s), b) in row.iter_mut().zip(scale).zip(shift) {
                *x = *x * s + b;
            }
        }
        let v = Tensor::new(t.shape(), data)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::ColAffine(a, scale.to_vec()), rg))
    }

    /// Concatenation of rank-2 tensors along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let rows = lead(self.value(*first).shape());
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.shape()[0] != rows {
                return Err(mismatch("concat", self.value(*first), t));
            }
            widths.push(t.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Tensor::new(&[rows, total], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(v, Op::Concat(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 || len == 0 || start + len > t.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let rows = t.shape()[0];
        let data: Vec<f64> = t.rows().flat_map(|r| r[start..start + len].iter().copied()).collect();
        let v = Tensor::new(&[rows, len], data)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::SliceCols(a, start), rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let v = Tensor::new(t.shape(), t.data().iter().map(|&x| f(x)).collect()).unwrap();
        let rg = self.rg(a);
        self.push(v, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mse", ta, tb));
        }
        let s: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let v = Tensor::scalar(s / ta.numel() as f64);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mse(a, b), rg))
    }

    /// Per-row mean squared error of two `[rows, width]` tensors, shape `[rows]`.
    pub fn mse_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() || ta.rank() != 2 {
            return Err(mismatch("mse_rows", ta, tb));
        }
        let w = ta.shape()[1] as f64;
        let data: Vec<f64> = ta
            .rows()
            .zip(tb.rows())
            .map(|(ra, rb)| {
                ra.iter()
                    .zip(rb)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    / w
            })
            .collect();
        let v = Tensor::new(&[ta.shape()[0]], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MseRows(a, b), rg))
    }

    /// Gathers rows by index along the leading extent.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let n = lead(t.shape());
        if t.rank() == 0 || rows.is_empty() || rows.iter().any(|&r| r >= n) {
            return Err(Error::ShapeMismatch {
                op: "select_rows",
                lhs: t.shape().to_vec(),
                rhs: rows.to_vec(),
            });
        }
        let w = t.numel() / n;
        let mut data = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows.len();
        let v = Tensor::new(&shape, data)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::SelectRows(a, rows.to_vec()), rg))
    }

    /// Rows of `a` where `mask` is true.
    pub fn select_by_mask(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 || lead(t.shape()) != mask.len() {
            return Err(Error::ShapeMismatch {
                op: "select_by_mask",
                lhs: t.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let rows: Vec<usize> = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        self.select_rows(a, &rows)
    }

    /// Row `i` is `a[i]` where `mask[i]`, else `b[i]`.
    pub fn mask_blend(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mask_blend", ta, tb));
        }
        if ta.rank() == 0 || lead(ta.shape()) != mask.len() {
            return Err(Error::ShapeMismatch {
                op: "mask_blend",
                lhs: ta.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let w = ta.numel() / mask.len();
        let mut data = Vec::with_capacity(ta.numel());
        for (i, &m) in mask.iter().enumerate() {
            let src = if m { ta } else { tb };
            data.extend_from_slice(&src.data()[i * w..(i + 1) * w]);
        }
        let v = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::MaskBlend(mask.to_vec(), a, b), rg))
    }

    /// Compact form of [`Tape::mask_blend`]: `base` with rows `rows[j]`
    /// replaced by row `j` of `sub`.
    pub fn merge_rows(&mut self, base: Var, rows: &[usize], sub: Var) -> Result<Var> {
        let (tb, ts) = (self.value(base), self.value(sub));
        let n = lead(tb.shape());
        if tb.rank() == 0
            || ts.rank() != tb.rank()
            || tb.shape()[1..] != ts.shape()[1..]
            || lead(ts.shape()) != rows.len()
            || rows.iter().any(|&r| r >= n)
        {
            return Err(mismatch("merge_rows", tb, ts));
        }
        let w = tb.numel() / n;
        let mut data = tb.data().to_vec();
        for (j, &r) in rows.iter().enumerate() {
            data[r * w..(r + 1) * w].copy_from_slice(&ts.data()[j * w..(j + 1) * w]);
        }
        let v = Tensor::new(tb.shape(), data)?;
        let rg = self.rg(base) || self.rg(sub);
        Ok(self.push(
            v,
            Op::MergeRows {
                base,
                rows: rows.to_vec(),
                sub,
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        let out = &nodes[id].value;
        match &nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (k, n) = (ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |s| matmul_a_bt_acc(g, tb.data(), s, k, n));
                acc(*b, &mut |s| matmul_at_b_acc(ta.data(), g, s, k, n));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::AddBias(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| {
                    let w = s.len();
                    for row in g.chunks_exact(w) {
                        add_into(s, row);
                    }
                });
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for ((x, gy), bv) in s.iter_mut().zip(g).zip(tb.data()) {
                        *x += gy * bv;
                    }
                });
                acc(*b, &mut |s| {
                    for ((x, gy), av) in s.iter_mut().zip(g).zip(ta.data()) {
                        *x += gy * av;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::AddScalar(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::ScaleRows(a, factors) => acc(*a, &mut |s| {
                let w = s.len() / factors.len();
                for ((srow, grow), &c) in s.chunks_exact_mut(w).zip(g.chunks_exact(w)).zip(factors) {
                    srow.iter_mut().zip(grow).for_each(|(x, y)| *x += c * y);
                }
            }),
            Op::ColAffine(a, scale) => acc(*a, &mut |s| {
                for (srow, grow) in s.chunks_exact_mut(scale.len()).zip(g.chunks_exact(scale.len())) {
                    for ((x, y), c) in srow.iter_mut().zip(grow).zip(scale) {
                        *x += c * y;
                    }
                }
            }),
            Op::Concat(parts) => {
                let total = out.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).shape()[1];
                    acc(p, &mut |s| {
                        for (srow, grow) in s.chunks_exact_mut(w).zip(g.chunks_exact(total)) {
                            add_into(srow, &grow[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let len = out.shape()[1];
                let w = val(*a).shape()[1];
                acc(*a, &mut |s| {
                    for (srow, grow) in s.chunks_exact_mut(w).zip(g.chunks_exact(len)) {
                        add_into(&mut srow[*start..*start + len], grow);
                    }
                });
            }
            Op::Sigmoid(a) => acc(*a, &mut |s| {
                for ((x, gy), y) in s.iter_mut().zip(g).zip(out.data()) {
                    *x += gy * y * (1.0 - y);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |s| {
                for ((x, gy), y) in s.iter_mut().zip(g).zip(out.data()) {
                    *x += gy * (1.0 - y * y);
                }
            }),
            Op::Relu(a) => {
                let ta = val(*a);
                acc(*a, &mut |s| {
                    for ((x, gy), xin) in s.iter_mut().zip(g).zip(ta.data()) {
                        if *xin > 0.0 {
                            *x += gy;
                        }
                    }
                });
            }
            Op::LeakyRelu(a, slope) => {
                let ta = val(*a);
                acc(*a, &mut |s| {
                    for ((x, gy), xin) in s.iter_mut().zip(g).zip(ta.data()) {
                        *x += if *xin > 0.0 { *gy } else { slope * gy };
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => acc(*a, &mut |s| {
                let c = g[0] / s.len() as f64;
                s.iter_mut().for_each(|x| *x += c);
            }),
            Op::Mse(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let c = 2.0 * g[0] / ta.numel() as f64;
                acc(*a, &mut |s| {
                    for ((x, av), bv) in s.iter_mut().zip(ta.data()).zip(tb.data()) {
                        *x += c * (av - bv);
                    }
                });
                acc(*b, &mut |s| {
                    for ((x, av), bv) in s.iter_mut().zip(ta.data()).zip(tb.data()) {
                        *x -= c * (av - bv);
                    }
                });
            }
            Op::MseRows(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let w = ta.shape()[1];
                let sign_pass = |s: &mut [f64], sign: f64| {
                    for (i, srow) in s.chunks_exact_mut(w).enumerate() {
                        let c = sign * 2.0 * g[i] / w as f64;
                        for ((x, av), bv) in srow.iter_mut().zip(ta.row(i)).zip(tb.row(i)) {
                            *x += c * (av - bv);
                        }
                    }
                };
                acc(*a, &mut |s| sign_pass(s, 1.0));
                acc(*b, &mut |s| sign_pass(s, -1.0));
            }
            Op::SelectRows(a, rows) => {
                let w = out.numel() / rows.len();
                acc(*a, &mut |s| {
                    for (j, &r) in rows.iter().enumerate() {
                        add_into(&mut s[r * w..(r + 1) * w], &g[j * w..(j + 1) * w]);
                    }
                });
            }
            Op::MergeRows { base, rows, sub } => {
                let n = lead(out.shape());
                let w = out.numel() / n;
                let mut replaced = vec![false; n];
                rows.iter().for_each(|&r| replaced[r] = true);
                acc(*base, &mut |s| {
                    for (i, srow) in s.chunks_exact_mut(w).enumerate() {
                        if !replaced[i] {
                            add_into(srow, &g[i * w..(i + 1) * w]);
                        }
                    }
                });
                acc(*sub, &mut |s| {
                    for (j, &r) in rows.iter().enumerate() {
                        add_into(&mut s[j * w..(j + 1) * w], &g[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::MaskBlend(mask, a, b) => {
                let w = out.numel() / mask.len();
                for (src, want) in [(*a, true), (*b, false)] {
                    acc(src, &mut |s| {
                        for (i, &m) in mask.iter().enumerate() {
                            if m == want {
                                add_into(&mut s[i * w..(i + 1) * w], &g[i * w..(i + 1) * w]);
                            }
                        }
                    });
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(x, y)| *x += y);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn p(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::parameter(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn leaky_relu_sigmoid_mse_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1], &[-2.0]));
        let y = tape.leaky_relu(x, 0.01);
        assert_eq!(tape.value(y).data(), &[-0.02]);

        let z = tape.constant(t(&[1], &[0.0]));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).item(), 0.5);

        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[1.0, 4.0]));
        let m = tape.mse(a, b).unwrap();
        assert_eq!(tape.value(m).item(), 2.0);
    }

    #[test]
    fn square_has_power_rule_gradient() {
        let mut tape = Tape::new();
        let x = tape.watch(&p(&[1], &[3.0]));
        let y = tape.mul(x, x).unwrap();
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn identity_matmul_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.watch(&p(&[2, 3], &[0.3, -1.0, 2.0, 5.0, 0.1, -0.7]));
        let eye = tape.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let y = tape.matmul(x, eye).unwrap();
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]).unwrap());
        let b = tape.constant(Tensor::zeros(&[4, 2]).unwrap());
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.watch(&p(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(a), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn second_backward_on_same_tape_fails() {
        let mut tape = Tape::new();
        let a = tape.watch(&p(&[1], &[1.0]));
        let l = tape.sum(a);
        tape.backward(l).unwrap();
        assert!(tape.is_consumed());
        assert!(matches!(tape.backward(l), Err(Error::TapeConsumed)));
    }

    #[test]
    fn accumulation_is_additive() {
        let mut param = p(&[2], &[1.0, -3.0]);
        for _ in 0..2 {
            let mut tape = Tape::new();
            let x = tape.watch(&param);
            let y = tape.mul(x, x).unwrap();
            let l = tape.sum(y);
            let g = tape.backward(l).unwrap();
            g.accumulate_into(x, &mut param).unwrap();
        }
        assert_eq!(param.grad().unwrap(), &[4.0, -12.0]);
    }

    #[test]
    fn mask_blend_selects_rows_and_routes_gradients() {
        let mut tape = Tape::new();
        let a = tape.watch(&p(&[2, 1], &[1.0, 1.0]));
        let b = tape.watch(&p(&[2, 1], &[9.0, 9.0]));
        let m = tape.mask_blend(&[true, false], a, b).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0, 9.0]);
        let l = tape.sum(m);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap(), &[1.0, 0.0]);
        assert_eq!(g.get(b).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn mask_blend_all_true_is_a() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let b = tape.constant(Tensor::zeros(&[3, 2]).unwrap());
        let m = tape.mask_blend(&[true; 3], a, b).unwrap();
        assert_eq!(tape.value(m), tape.value(a));
    }

    #[test]
    fn mask_blend_batch_mismatch_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[3, 2]).unwrap());
        assert!(tape.mask_blend(&[true, false], a, a).is_err());
    }

    #[test]
    fn merge_rows_equals_mask_blend() {
        let mut tape = Tape::new();
        let base = tape.constant(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let full = tape.constant(t(&[3, 2], &[10., 20., 30., 40., 50., 60.]));
        let sub = tape.select_rows(full, &[0, 2]).unwrap();
        let merged = tape.merge_rows(base, &[0, 2], sub).unwrap();
        let blended = tape.mask_blend(&[true, false, true], full, base).unwrap();
        assert_eq!(tape.value(merged), tape.value(blended));
    }

    #[test]
    fn bias_broadcasts_over_leading_extent() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let b = tape.watch(&p(&[2], &[10., 20.]));
        let y = tape.add(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[11., 22., 13., 24.]);
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(b).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn rank_four_is_rejected() {
        assert!(Tensor::zeros(&[1, 1, 1, 1]).is_err());
        assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
    }
}
