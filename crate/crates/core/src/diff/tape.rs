use std::sync::Arc;

use super::{DiffError, Tensor};

/// Handle to a node recorded on a [`Tape`].
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
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sqrt(Var),
    Recip(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    LayerNorm { input: Var, rstd: Vec<f64> },
    Concat(Vec<Var>),
    SliceCols { input: Var, start: usize },
    Gather(Var, Arc<[usize]>),
    ScatterAdd(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Select(Arc<[bool]>, Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the record is topologically
/// sorted by construction and [`Tape::backward`] is a single reverse sweep.
/// All reductions run left to right over row-major storage; the same inputs
/// always produce bit-identical values and gradients.
///
/// `backward` may run once per tape. A second call is rejected with
/// [`DiffError::AlreadyBackpropagated`] unless [`Tape::zero_grad`] is called
/// in between; gradients never silently accumulate across calls.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backpropagated: bool,
}

fn mismatch(op: &'static str, left: &Tensor, right: &Tensor) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last `backward` root with respect to `v`, if any
    /// adjoint reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Like [`Tape::grad`] but returns a zero buffer for nodes the root does
    /// not depend on.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        self.grad(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.value(v).len()])
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backpropagated = false;
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; n * m];
        let (da, db) = (ta.data(), tb.data());
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let x = da[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &db[p * m..(p + 1) * m];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += x * bv;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), rg))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(vec![ta.rows(), ta.cols()], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_same(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// `a[i, j] + b[0, j]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.broadcast_row(a, b, "add_row", |x, y| x + y, Op::AddRow(a, b))
    }

    /// `a[i, j] * b[0, j]`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.broadcast_row(a, b, "mul_row", |x, y| x * y, Op::MulRow(a, b))
    }

    fn broadcast_row(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, m) = (ta.rows(), ta.cols());
        if tb.rows() != 1 || tb.cols() != m {
            return Err(mismatch(name, ta, tb));
        }
        let row = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(k, x)| f(*x, row[k % m]))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, m], data)?, op, rg))
    }

    /// `a[i, j] * b[i, 0]`.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, m) = (ta.rows(), ta.cols());
        if tb.rows() != n || tb.cols() != 1 {
            return Err(mismatch("mul_col", ta, tb));
        }
        let col = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(k, x)| x * col[k / m.max(1)])
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, m], data)?, Op::MulCol(a, b), rg))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = self.value(a);
        let value = Tensor::new(
            vec![ta.rows(), ta.cols()],
            ta.data().iter().map(|x| f(*x)).collect(),
        )
        .expect("same length");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::Offset(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 / x, Op::Recip(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        // Recorded as a product so the adjoint is exact.
        self.mul(a, a).expect("same shape")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    /// Row-wise layer normalization without affine parameters; the variance
    /// is the biased (1/d) estimator.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let ta = self.value(a);
        let (n, d) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; n * d];
        let mut rstd = vec![0.0; n];
        for i in 0..n {
            let row = ta.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for (o, x) in out[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o = (x - mean) * r;
            }
        }
        let rg = self.rg(a);
        let value = Tensor::new(vec![n, d], out).expect("same length");
        self.push(value, Op::LayerNorm { input: a, rstd }, rg)
    }

    /// Column-wise concatenation; every input must have the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = *parts.first().ok_or(DiffError::Empty("concat_cols"))?;
        let n = self.value(first).rows();
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != n {
                return Err(mismatch("concat_cols", self.value(first), t));
            }
            total += t.cols();
        }
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(vec![n, total], out)?,
            Op::Concat(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        let ta = self.value(a);
        let (n, m) = (ta.rows(), ta.cols());
        if start > end || end > m {
            return Err(DiffError::ShapeMismatch {
                op: "slice_cols",
                left: ta.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let mut out = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            out.extend_from_slice(&ta.row(i)[start..end]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![n, end - start], out)?,
            Op::SliceCols { input: a, start },
            rg,
        ))
    }

    /// `out[r] = a[index[r]]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, DiffError> {
        let ta = self.value(a);
        let (n, m) = (ta.rows(), ta.cols());
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(DiffError::InvalidIndex {
                op: "gather_rows",
                index: bad,
                bound: n,
            });
        }
        let mut out = Vec::with_capacity(index.len() * m);
        for &i in index.iter() {
            out.extend_from_slice(ta.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![index.len(), m], out)?,
            Op::Gather(a, index),
            rg,
        ))
    }

    fn check_segments(
        &self,
        op: &'static str,
        a: Var,
        segments: &[usize],
        groups: usize,
    ) -> Result<(), DiffError> {
        let rows = self.value(a).rows();
        if segments.len() != rows {
            return Err(DiffError::InvalidSegments {
                op,
                reason: format!("{} segment ids for {} rows", segments.len(), rows),
            });
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= groups) {
            return Err(DiffError::InvalidSegments {
                op,
                reason: format!("segment id {bad} out of range for {groups} groups"),
            });
        }
        Ok(())
    }

    /// `out[segments[r]] += a[r]`, producing `groups` rows.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        segments: Arc<[usize]>,
        groups: usize,
    ) -> Result<Var, DiffError> {
        self.check_segments("scatter_add_rows", a, &segments, groups)?;
        let ta = self.value(a);
        let m = ta.cols();
        let mut out = vec![0.0; groups * m];
        for (r, &s) in segments.iter().enumerate() {
            add_into(&mut out[s * m..(s + 1) * m], ta.row(r));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![groups, m], out)?,
            Op::ScatterAdd(a, segments),
            rg,
        ))
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    pub fn segment_softmax(
        &mut self,
        a: Var,
        segments: Arc<[usize]>,
        groups: usize,
    ) -> Result<Var, DiffError> {
        self.check_segments("segment_softmax", a, &segments, groups)?;
        let ta = self.value(a);
        let m = ta.cols();
        let mut max = vec![f64::NEG_INFINITY; groups * m];
        for (r, &s) in segments.iter().enumerate() {
            for (mx, x) in max[s * m..(s + 1) * m].iter_mut().zip(ta.row(r)) {
                if *x > *mx {
                    *mx = *x;
                }
            }
        }
        let mut out = vec![0.0; segments.len() * m];
        let mut denom = vec![0.0; groups * m];
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..m {
                let e = (ta.get(r, c) - max[s * m + c]).exp();
                out[r * m + c] = e;
                denom[s * m + c] += e;
            }
        }
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..m {
                out[r * m + c] /= denom[s * m + c];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![segments.len(), m], out)?,
            Op::SegmentSoftmax(a, segments),
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Sum over columns, giving an `[n, 1]` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.rows();
        let out = (0..n).map(|i| t.row(i).iter().sum()).collect();
        let rg = self.rg(a);
        let value = Tensor::new(vec![n, 1], out).expect("n values");
        self.push(value, Op::RowSum(a), rg)
    }

    /// Element-wise `mask ? a : b`; the mask is a constant.
    pub fn select(&mut self, mask: Arc<[bool]>, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() || mask.len() != ta.len() {
            return Err(mismatch("select", ta, tb));
        }
        let data = mask
            .iter()
            .zip(ta.data().iter().zip(tb.data()))
            .map(|(&m, (x, y))| if m { *x } else { *y })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Select(mask, a, b), rg))
    }

    /// Propagates adjoints from the scalar `root` to every node it depends
    /// on.
    pub fn backward(&mut self, root: Var) -> Result<(), DiffError> {
        if self.backpropagated {
            return Err(DiffError::AlreadyBackpropagated);
        }
        let shape = self.value(root).shape().to_vec();
        if self.value(root).len() != 1 {
            return Err(DiffError::NonScalarRoot(shape));
        }
        self.backpropagated = true;
        if !self.rg(root) {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [f64], &Tensor)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let mut buf = self.grads[v.0].take().unwrap_or_else(|| vec![0.0; len]);
        f(&mut buf, &self.nodes[v.0].value);
        self.grads[v.0] = Some(buf);
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        // Temporarily move the op out so node values stay borrowable.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        let out = std::mem::replace(&mut self.nodes[idx].value, Tensor::zeros(0, 0));
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (n, k) = (self.value(a).rows(), self.value(a).cols());
                let m = self.value(b).cols();
                let bv = self.value(b).data().to_vec();
                let av = self.value(a).data().to_vec();
                self.acc(a, |da, _| {
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let brow = &bv[p * m..(p + 1) * m];
                            da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                self.acc(b, |db, _| {
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *d += x * gv;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.acc(*a, |d, _| add_into(d, g));
                self.acc(*b, |d, _| add_into(d, g));
            }
            Op::Sub(a, b) => {
                self.acc(*a, |d, _| add_into(d, g));
                self.acc(*b, |d, _| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.value(a).data().to_vec();
                let bv = self.value(b).data().to_vec();
                self.acc(a, |d, _| {
                    for k in 0..d.len() {
                        d[k] += g[k] * bv[k];
                    }
                });
                self.acc(b, |d, _| {
                    for k in 0..d.len() {
                        d[k] += g[k] * av[k];
                    }
                });
            }
            Op::Div(a, b) => {
                let (a, b) = (*a, *b);
                let bv = self.value(b).data().to_vec();
                self.acc(a, |d, _| {
                    for k in 0..d.len() {
                        d[k] += g[k] / bv[k];
                    }
                });
                let ov = out.data();
                self.acc(b, |d, _| {
                    for k in 0..d.len() {
                        d[k] -= g[k] * ov[k] / bv[k];
                    }
                });
            }
            Op::AddRow(a, b) => {
                let m = out.cols();
                self.acc(*a, |d, _| add_into(d, g));
                self.acc(*b, |d, _| {
                    for (k, gv) in g.iter().enumerate() {
                        d[k % m] += gv;
                    }
                });
            }
            Op::MulRow(a, b) => {
                let (a, b) = (*a, *b);
                let m = out.cols();
                let av = self.value(a).data().to_vec();
                let bv = self.value(b).data().to_vec();
                self.acc(a, |d, _| {
                    for k in 0..d.len() {
                        d[k] += g[k] * bv[k % m];
                    }
                });
                self.acc(b, |d, _| {
                    for (k, gv) in g.iter().enumerate() {
                        d[k % m] += gv * av[k];
                    }
                });
            }
            Op::MulCol(a, b) => {
                let (a, b) = (*a, *b);
                let m = out.cols().max(1);
                let av = self.value(a).data().to_vec();
                let bv = self.value(b).data().to_vec();
                self.acc(a, |d, _| {
                    for k in 0..d.len() {
                        d[k] += g[k] * bv[k / m];
                    }
                });
                self.acc(b, |d, _| {
                    for (k, gv) in g.iter().enumerate() {
                        d[k / m] += gv * av[k];
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.acc(*a, |d, _| d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y));
            }
            Op::Offset(a) => self.acc(*a, |d, _| add_into(d, g)),
            Op::Sqrt(a) => {
                let ov = out.data();
                self.acc(*a, |d, _| {
                    for k in 0..d.len() {
                        d[k] += g[k] / (2.0 * ov[k]);
                    }
                });
            }
            Op::Recip(a) => {
                let ov = out.data();
                self.acc(*a, |d, _| {
                    for k in 0..d.len() {
                        d[k] -= g[k] * ov[k] * ov[k];
                    }
                });
            }
            Op::Relu(a) => self.acc(*a, |d, x| {
                for k in 0..d.len() {
                    if x.data()[k] > 0.0 {
                        d[k] += g[k];
                    }
                }
            }),
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                self.acc(*a, |d, x| {
                    for k in 0..d.len() {
                        d[k] += if x.data()[k] > 0.0 { g[k] } else { slope * g[k] };
                    }
                });
            }
            Op::LayerNorm { input, rstd } => {
                let (n, dim) = (out.rows(), out.cols());
                let y = out.data();
                self.acc(*input, |d, _| {
                    for i in 0..n {
                        let gr = &g[i * dim..(i + 1) * dim];
                        let yr = &y[i * dim..(i + 1) * dim];
                        let mean_g = gr.iter().sum::<f64>() / dim as f64;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / dim as f64;
                        for c in 0..dim {
                            d[i * dim + c] += rstd[i] * (gr[c] - mean_g - yr[c] * mean_gy);
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.acc(p, |d, t| {
                        for i in 0..t.rows() {
                            add_into(&mut d[i * w..(i + 1) * w], &g[i * total + offset..i * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols { input, start } => {
                let start = *start;
                let w = out.cols();
                self.acc(*input, |d, t| {
                    let m = t.cols();
                    for i in 0..t.rows() {
                        add_into(&mut d[i * m + start..i * m + start + w], &g[i * w..(i + 1) * w]);
                    }
                });
            }
            Op::Gather(a, index) => {
                let m = out.cols();
                self.acc(*a, |d, _| {
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut d[i * m..(i + 1) * m], &g[r * m..(r + 1) * m]);
                    }
                });
            }
            Op::ScatterAdd(a, segments) => {
                let m = out.cols();
                self.acc(*a, |d, _| {
                    for (r, &s) in segments.iter().enumerate() {
                        add_into(&mut d[r * m..(r + 1) * m], &g[s * m..(s + 1) * m]);
                    }
                });
            }
            Op::SegmentSoftmax(a, segments) => {
                let m = out.cols();
                let groups = segments.iter().copied().max().map_or(0, |x| x + 1);
                let y = out.data();
                let mut dot = vec![0.0; groups * m];
                for (r, &s) in segments.iter().enumerate() {
                    for c in 0..m {
                        dot[s * m + c] += y[r * m + c] * g[r * m + c];
                    }
                }
                self.acc(*a, |d, _| {
                    for (r, &s) in segments.iter().enumerate() {
                        for c in 0..m {
                            d[r * m + c] += y[r * m + c] * (g[r * m + c] - dot[s * m + c]);
                        }
                    }
                });
            }
            Op::Sum(a) => self.acc(*a, |d, _| d.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => self.acc(*a, |d, _| {
                let s = g[0] / d.len() as f64;
                d.iter_mut().for_each(|x| *x += s);
            }),
            Op::RowSum(a) => self.acc(*a, |d, t| {
                let m = t.cols();
                for (k, x) in d.iter_mut().enumerate() {
                    *x += g[k / m];
                }
            }),
            Op::Select(mask, a, b) => {
                self.acc(*a, |d, _| {
                    for k in 0..d.len() {
                        if mask[k] {
                            d[k] += g[k];
                        }
                    }
                });
                self.acc(*b, |d, _| {
                    for k in 0..d.len() {
                        if !mask[k] {
                            d[k] += g[k];
                        }
                    }
                });
            }
        }
        self.nodes[idx].op = op;
        self.nodes[idx].value = out;
    }
}
