//! The recording tape: eager forward evaluation plus a reverse pass.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::{NnError, Scalar};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<S> {
    /// Constant or input leaf; gradients accumulate but propagate nowhere.
    Leaf,
    /// Leased parameter leaf; gradients are read back by the optimizer.
    Param,
    Add(VarId, VarId),
    /// `(T, d) + (d)`, the bias pattern.
    AddRow(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, S),
    Matmul(VarId, VarId),
    Transpose(VarId),
    Concat(Vec<VarId>, usize),
    Slice {
        src: VarId,
        axis: usize,
        start: usize,
    },
    MeanAxis0(VarId),
    SumAll(VarId),
    Reshape(VarId),
    Relu(VarId),
    Sigmoid(VarId),
    SoftmaxAxis1(VarId),
    Log(VarId),
    Abs(VarId),
    Max(VarId, VarId),
    Clamp(VarId, S, S),
    /// `sum_k w_k * x_k` over same-shape operands.
    WeightedSum(Vec<(VarId, S)>),
}

struct Node<S> {
    shape: Vec<usize>,
    values: Vec<S>,
    grad: Vec<S>,
    op: Op<S>,
}

/// Append-only computation record. Nodes are topologically ordered by
/// construction, so the reverse pass is a single backwards sweep.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    param_leaves: HashMap<ParamId, VarId>,
}

fn elem_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: VarId) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn values(&self, v: VarId) -> &[S] {
        &self.nodes[v.0].values
    }

    pub fn grad(&self, v: VarId) -> &[S] {
        &self.nodes[v.0].grad
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: VarId) -> S {
        debug_assert_eq!(elem_count(&self.nodes[v.0].shape), 1);
        self.nodes[v.0].values[0]
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<S>, op: Op<S>) -> VarId {
        debug_assert_eq!(elem_count(&shape), values.len());
        let n = values.len();
        self.nodes.push(Node {
            shape,
            values,
            grad: vec![S::zero(); n],
            op,
        });
        VarId(self.nodes.len() - 1)
    }

    /// Records a constant (non-parameter) leaf.
    pub fn constant(&mut self, shape: &[usize], values: Vec<S>) -> VarId {
        assert_eq!(
            elem_count(shape),
            values.len(),
            "constant value count must match shape"
        );
        self.push(shape.to_vec(), values, Op::Leaf)
    }

    pub fn scalar_const(&mut self, v: S) -> VarId {
        self.push(vec![1], vec![v], Op::Leaf)
    }

    /// Leases a parameter onto the tape. Repeated calls for the same
    /// parameter return the same leaf, so fan-out gradients accumulate.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> VarId {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let entry = store.entry(id);
        let v = self.push(
            entry.shape.clone(),
            entry.values.clone(),
            Op::Param,
        );
        self.param_leaves.insert(id, v);
        v
    }

    /// Parameter leaves leased onto this tape, with their gradients.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[S])> {
        self.param_leaves
            .iter()
            .map(move |(&id, &v)| (id, self.nodes[v.0].grad.as_slice()))
    }

    fn binary_same_shape(
        &self,
        op: &'static str,
        a: VarId,
        b: VarId,
    ) -> Result<(), NnError> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(NnError::ShapeMismatch {
                op,
                left: self.nodes[a.0].shape.clone(),
                right: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        self.binary_same_shape("add", a, b)?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Add(a, b)))
    }

    /// Adds a length-`d` row vector to every row of a `(T, d)` matrix.
    pub fn add_row(&mut self, a: VarId, row: VarId) -> Result<VarId, NnError> {
        let (ash, rsh) = (&self.nodes[a.0].shape, &self.nodes[row.0].shape);
        if ash.len() != 2 || rsh.len() != 1 || ash[1] != rsh[0] {
            return Err(NnError::ShapeMismatch {
                op: "add_row",
                left: ash.clone(),
                right: rsh.clone(),
            });
        }
        let d = ash[1];
        let values = self.nodes[a.0]
            .values
            .iter()
            .enumerate()
            .map(|(k, &x)| x + self.nodes[row.0].values[k % d])
            .collect();
        Ok(self.push(ash.clone(), values, Op::AddRow(a, row)))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        self.binary_same_shape("sub", a, b)?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x - y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        self.binary_same_shape("mul", a, b)?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: VarId, c: S) -> VarId {
        let values = self.nodes[a.0].values.iter().map(|&x| x * c).collect();
        self.push(self.nodes[a.0].shape.clone(), values, Op::Scale(a, c))
    }

    /// Matrix product of `(n, k)` and `(k, m)`.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        let (ash, bsh) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                left: ash.clone(),
                right: bsh.clone(),
            });
        }
        let (n, k, m) = (ash[0], ash[1], bsh[1]);
        let values = matmul_raw(&self.nodes[a.0].values, &self.nodes[b.0].values, n, k, m);
        Ok(self.push(vec![n, m], values, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: VarId) -> Result<VarId, NnError> {
        let ash = &self.nodes[a.0].shape;
        if ash.len() != 2 {
            return Err(NnError::BadShape {
                op: "transpose",
                expected: "a rank-2 tensor",
                got: ash.clone(),
            });
        }
        let (n, m) = (ash[0], ash[1]);
        let src = &self.nodes[a.0].values;
        let mut values = vec![S::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                values[j * n + i] = src[i * m + j];
            }
        }
        Ok(self.push(vec![m, n], values, Op::Transpose(a)))
    }

    /// Concatenates along `axis` (0 or 1). Rank-1 inputs concatenate along
    /// axis 0 into a longer vector.
    pub fn concat(&mut self, parts: &[VarId], axis: usize) -> Result<VarId, NnError> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let rank = self.nodes[parts[0].0].shape.len();
        for &p in parts {
            let sh = &self.nodes[p.0].shape;
            if sh.len() != rank {
                return Err(NnError::ShapeMismatch {
                    op: "concat",
                    left: self.nodes[parts[0].0].shape.clone(),
                    right: sh.clone(),
                });
            }
            for d in 0..rank {
                if d != axis && sh[d] != self.nodes[parts[0].0].shape[d] {
                    return Err(NnError::ShapeMismatch {
                        op: "concat",
                        left: self.nodes[parts[0].0].shape.clone(),
                        right: sh.clone(),
                    });
                }
            }
        }
        if rank == 1 {
            let total: usize = parts.iter().map(|&p| self.nodes[p.0].shape[0]).sum();
            let mut values = Vec::with_capacity(total);
            for &p in parts {
                values.extend_from_slice(&self.nodes[p.0].values);
            }
            return Ok(self.push(vec![total], values, Op::Concat(parts.to_vec(), 0)));
        }
        if rank != 2 || axis > 1 {
            return Err(NnError::BadShape {
                op: "concat",
                expected: "rank-1 or rank-2 tensors with axis 0 or 1",
                got: self.nodes[parts[0].0].shape.clone(),
            });
        }
        if axis == 0 {
            let cols = self.nodes[parts[0].0].shape[1];
            let rows: usize = parts.iter().map(|&p| self.nodes[p.0].shape[0]).sum();
            let mut values = Vec::with_capacity(rows * cols);
            for &p in parts {
                values.extend_from_slice(&self.nodes[p.0].values);
            }
            Ok(self.push(vec![rows, cols], values, Op::Concat(parts.to_vec(), 0)))
        } else {
            let rows = self.nodes[parts[0].0].shape[0];
            let cols: usize = parts.iter().map(|&p| self.nodes[p.0].shape[1]).sum();
            let mut values = vec![S::zero(); rows * cols];
            let mut col0 = 0;
            for &p in parts {
                let pc = self.nodes[p.0].shape[1];
                for r in 0..rows {
                    for c in 0..pc {
                        values[r * cols + col0 + c] = self.nodes[p.0].values[r * pc + c];
                    }
                }
                col0 += pc;
            }
            Ok(self.push(vec![rows, cols], values, Op::Concat(parts.to_vec(), 1)))
        }
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(
        &mut self,
        src: VarId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<VarId, NnError> {
        let sh = self.nodes[src.0].shape.clone();
        if axis >= sh.len() || start + len > sh[axis] {
            return Err(NnError::BadShape {
                op: "slice",
                expected: "axis and range within bounds",
                got: sh,
            });
        }
        let mut out_shape = sh.clone();
        out_shape[axis] = len;
        let values = if sh.len() == 1 {
            self.nodes[src.0].values[start..start + len].to_vec()
        } else if axis == 0 {
            let cols = sh[1];
            self.nodes[src.0].values[start * cols..(start + len) * cols].to_vec()
        } else {
            let (rows, cols) = (sh[0], sh[1]);
            let mut v = Vec::with_capacity(rows * len);
            for r in 0..rows {
                v.extend_from_slice(&self.nodes[src.0].values[r * cols + start..r * cols + start + len]);
            }
            v
        };
        Ok(self.push(out_shape, values, Op::Slice { src, axis, start }))
    }

    /// Column means of a `(T, d)` matrix, yielding `(d)`.
    pub fn mean_axis0(&mut self, a: VarId) -> Result<VarId, NnError> {
        let sh = &self.nodes[a.0].shape;
        if sh.len() != 2 || sh[0] == 0 {
            return Err(NnError::BadShape {
                op: "mean_axis0",
                expected: "a non-empty rank-2 tensor",
                got: sh.clone(),
            });
        }
        let (t, d) = (sh[0], sh[1]);
        let inv = S::from_f64(1.0 / t as f64);
        let mut values = vec![S::zero(); d];
        for r in 0..t {
            for c in 0..d {
                values[c] += self.nodes[a.0].values[r * d + c];
            }
        }
        for v in &mut values {
            *v *= inv;
        }
        Ok(self.push(vec![d], values, Op::MeanAxis0(a)))
    }

    /// Reinterprets the value buffer under a new shape of equal size.
    pub fn reshape(&mut self, a: VarId, shape: &[usize]) -> Result<VarId, NnError> {
        if elem_count(shape) != self.nodes[a.0].values.len() {
            return Err(NnError::BadShape {
                op: "reshape",
                expected: "a shape with the same element count",
                got: shape.to_vec(),
            });
        }
        let values = self.nodes[a.0].values.clone();
        Ok(self.push(shape.to_vec(), values, Op::Reshape(a)))
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let s = self.nodes[a.0]
            .values
            .iter()
            .fold(S::zero(), |acc, &x| acc + x);
        self.push(vec![1], vec![s], Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: VarId) -> VarId {
        let n = self.nodes[a.0].values.len().max(1);
        let s = self.sum_all(a);
        self.scale(s, S::from_f64(1.0 / n as f64))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let values = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| if x > S::zero() { x } else { S::zero() })
            .collect();
        self.push(self.nodes[a.0].shape.clone(), values, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let values = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| S::one() / (S::one() + (-x).exp()))
            .collect();
        self.push(self.nodes[a.0].shape.clone(), values, Op::Sigmoid(a))
    }

    /// Row-wise softmax of a `(n, m)` matrix.
    pub fn softmax_axis1(&mut self, a: VarId) -> Result<VarId, NnError> {
        let sh = &self.nodes[a.0].shape;
        if sh.len() != 2 {
            return Err(NnError::BadShape {
                op: "softmax_axis1",
                expected: "a rank-2 tensor",
                got: sh.clone(),
            });
        }
        let (n, m) = (sh[0], sh[1]);
        let mut values = vec![S::zero(); n * m];
        for r in 0..n {
            let row = &self.nodes[a.0].values[r * m..(r + 1) * m];
            let mx = row.iter().fold(S::neg_infinity(), |acc, &x| acc.max(x));
            let mut sum = S::zero();
            for c in 0..m {
                let e = (row[c] - mx).exp();
                values[r * m + c] = e;
                sum += e;
            }
            for c in 0..m {
                values[r * m + c] /= sum;
            }
        }
        Ok(self.push(vec![n, m], values, Op::SoftmaxAxis1(a)))
    }

    pub fn log(&mut self, a: VarId) -> VarId {
        let values = self.nodes[a.0].values.iter().map(|&x| x.ln()).collect();
        self.push(self.nodes[a.0].shape.clone(), values, Op::Log(a))
    }

    pub fn abs(&mut self, a: VarId) -> VarId {
        let values = self.nodes[a.0].values.iter().map(|&x| x.abs()).collect();
        self.push(self.nodes[a.0].shape.clone(), values, Op::Abs(a))
    }

    /// Elementwise maximum; gradient flows to the larger operand.
    pub fn max(&mut self, a: VarId, b: VarId) -> Result<VarId, NnError> {
        self.binary_same_shape("max", a, b)?;
        let values = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x.max(y))
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), values, Op::Max(a, b)))
    }

    /// Clamps to `[lo, hi]`; gradient passes through strictly inside the
    /// interval and is zero where the clamp binds.
    pub fn clamp(&mut self, a: VarId, lo: S, hi: S) -> VarId {
        let values = self.nodes[a.0]
            .values
            .iter()
            .map(|&x| x.max(lo).min(hi))
            .collect();
        self.push(self.nodes[a.0].shape.clone(), values, Op::Clamp(a, lo, hi))
    }

    /// `sum_k w_k * x_k` over same-shape tensors.
    pub fn weighted_sum(&mut self, terms: &[(VarId, S)]) -> Result<VarId, NnError> {
        assert!(!terms.is_empty(), "weighted_sum of zero terms");
        let shape = self.nodes[terms[0].0 .0].shape.clone();
        for &(v, _) in terms {
            if self.nodes[v.0].shape != shape {
                return Err(NnError::ShapeMismatch {
                    op: "weighted_sum",
                    left: shape,
                    right: self.nodes[v.0].shape.clone(),
                });
            }
        }
        let n = elem_count(&shape);
        let mut values = vec![S::zero(); n];
        for &(v, w) in terms {
            for (out, &x) in values.iter_mut().zip(&self.nodes[v.0].values) {
                *out += w * x;
            }
        }
        Ok(self.push(shape, values, Op::WeightedSum(terms.to_vec())))
    }

    /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate:
    /// calling backward twice without a fresh tape doubles them.
    /// Interior-node gradients are recomputed on every call.
    pub fn backward(&mut self, loss: VarId) -> Result<(), NnError> {
        if elem_count(&self.nodes[loss.0].shape) != 1 {
            return Err(NnError::NotScalar(self.nodes[loss.0].shape.clone()));
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf | Op::Param) {
                node.grad.fill(S::zero());
            }
        }
        self.nodes[loss.0].grad[0] += S::one();
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.iter().all(|&g| g == S::zero()) {
                continue;
            }
            // take the node's op and grad to satisfy the borrow checker
            let op = self.nodes[i].op.clone();
            let grad = std::mem::take(&mut self.nodes[i].grad);
            self.propagate(i, &op, &grad);
            self.nodes[i].grad = grad;
        }
        Ok(())
    }

    fn propagate(&mut self, node: usize, op: &Op<S>, g: &[S]) {
        match op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                for (k, &gk) in g.iter().enumerate() {
                    self.nodes[a.0].grad[k] += gk;
                    self.nodes[b.0].grad[k] += gk;
                }
            }
            Op::AddRow(a, row) => {
                let d = self.nodes[row.0].grad.len();
                for (k, &gk) in g.iter().enumerate() {
                    self.nodes[a.0].grad[k] += gk;
                    self.nodes[row.0].grad[k % d] += gk;
                }
            }
            Op::Sub(a, b) => {
                for (k, &gk) in g.iter().enumerate() {
                    self.nodes[a.0].grad[k] += gk;
                    self.nodes[b.0].grad[k] -= gk;
                }
            }
            Op::Mul(a, b) => {
                for (k, &gk) in g.iter().enumerate() {
                    let av = self.nodes[a.0].values[k];
                    let bv = self.nodes[b.0].values[k];
                    self.nodes[a.0].grad[k] += gk * bv;
                    self.nodes[b.0].grad[k] += gk * av;
                }
            }
            Op::Scale(a, c) => {
                for (k, &gk) in g.iter().enumerate() {
                    self.nodes[a.0].grad[k] += gk * *c;
                }
            }
            Op::Matmul(a, b) => {
                let (n, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let m = self.nodes[b.0].shape[1];
                // dA = G * B^T, dB = A^T * G
                let bt = transpose_raw(&self.nodes[b.0].values, k, m);
                let da = matmul_raw(g, &bt, n, m, k);
                for (x, &d) in self.nodes[a.0].grad.iter_mut().zip(&da) {
                    *x += d;
                }
                let at = transpose_raw(&self.nodes[a.0].values, n, k);
                let db = matmul_raw(&at, g, k, n, m);
                for (x, &d) in self.nodes[b.0].grad.iter_mut().zip(&db) {
                    *x += d;
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (self.nodes[node].shape[0], self.nodes[node].shape[1]);
                for i in 0..m {
                    for j in 0..n {
                        self.nodes[a.0].grad[j * m + i] += g[i * n + j];
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let rank = self.nodes[node].shape.len();
                if rank == 1 || *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p.0].grad.len();
                        for k in 0..n {
                            self.nodes[p.0].grad[k] += g[off + k];
                        }
                        off += n;
                    }
                } else {
                    let rows = self.nodes[node].shape[0];
                    let cols = self.nodes[node].shape[1];
                    let mut col0 = 0;
                    for &p in parts {
                        let pc = self.nodes[p.0].shape[1];
                        for r in 0..rows {
                            for c in 0..pc {
                                self.nodes[p.0].grad[r * pc + c] += g[r * cols + col0 + c];
                            }
                        }
                        col0 += pc;
                    }
                }
            }
            Op::Slice { src, axis, start } => {
                let out_shape = self.nodes[node].shape.clone();
                let src_shape = self.nodes[src.0].shape.clone();
                if src_shape.len() == 1 {
                    for (k, &gk) in g.iter().enumerate() {
                        self.nodes[src.0].grad[start + k] += gk;
                    }
                } else if *axis == 0 {
                    let cols = src_shape[1];
                    for (k, &gk) in g.iter().enumerate() {
                        self.nodes[src.0].grad[start * cols + k] += gk;
                    }
                } else {
                    let (rows, len) = (out_shape[0], out_shape[1]);
                    let cols = src_shape[1];
                    for r in 0..rows {
                        for c in 0..len {
                            self.nodes[src.0].grad[r * cols + start + c] += g[r * len + c];
                        }
                    }
                }
            }
            Op::MeanAxis0(a) => {
                let (t, d) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let inv = S::from_f64(1.0 / t as f64);
                for r in 0..t {
                    for c in 0..d {
                        self.nodes[a.0].grad[r * d + c] += g[c] * inv;
                    }
                }
            }
            Op::SumAll(a) => {
                let gk = g[0];
                for x in self.nodes[a.0].grad.iter_mut() {
                    *x += gk;
                }
            }
            Op::Reshape(a) => {
                for (k, &gk) in g.iter().enumerate() {
                    self.nodes[a.0].grad[k] += gk;
                }
            }
            Op::Relu(a) => {
                for (k, &gk) in g.iter().enumerate() {
                    if self.nodes[a.0].values[k] > S::zero() {
                        self.nodes[a.0].grad[k] += gk;
                    }
                }
            }
            Op::Sigmoid(a) => {
                for (k, &gk) in g.iter().enumerate() {
                    let y = self.nodes[node].values[k];
                    self.nodes[a.0].grad[k] += gk * y * (S::one() - y);
                }
            }
            Op::SoftmaxAxis1(a) => {
                let (n, m) = (self.nodes[node].shape[0], self.nodes[node].shape[1]);
                let y_all = self.nodes[node].values.clone();
                for r in 0..n {
                    let y = &y_all[r * m..(r + 1) * m];
                    let gr = &g[r * m..(r + 1) * m];
                    let dot = y
                        .iter()
                        .zip(gr)
                        .fold(S::zero(), |acc, (&yv, &gv)| acc + yv * gv);
                    for c in 0..m {
                        self.nodes[a.0].grad[r * m + c] += y[c] * (gr[c] - dot);
                    }
                }
            }
            Op::Log(a) => {
                for (k, &gk) in g.iter().enumerate() {
                    let x = self.nodes[a.0].values[k];
                    self.nodes[a.0].grad[k] += gk / x;
                }
            }
            Op::Abs(a) => {
                for (k, &gk) in g.iter().enumerate() {
                    let x = self.nodes[a.0].values[k];
                    if x > S::zero() {
                        self.nodes[a.0].grad[k] += gk;
                    } else if x < S::zero() {
                        self.nodes[a.0].grad[k] -= gk;
                    }
                }
            }
            Op::Max(a, b) => {
                for (k, &gk) in g.iter().enumerate() {
                    if self.nodes[a.0].values[k] >= self.nodes[b.0].values[k] {
                        self.nodes[a.0].grad[k] += gk;
                    } else {
                        self.nodes[b.0].grad[k] += gk;
                    }
                }
            }
            Op::Clamp(a, lo, hi) => {
                for (k, &gk) in g.iter().enumerate() {
                    let x = self.nodes[a.0].values[k];
                    if x > *lo && x < *hi {
                        self.nodes[a.0].grad[k] += gk;
                    }
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    for (k, &gk) in g.iter().enumerate() {
                        self.nodes[v.0].grad[k] += gk * w;
                    }
                }
            }
        }
    }
}

fn matmul_raw<S: Scalar>(a: &[S], b: &[S], n: usize, k: usize, m: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * m];
    // i-k-j order keeps the inner loop contiguous in b and out
    for i in 0..n {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == S::zero() {
                continue;
            }
            let brow = &b[kk * m..(kk + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn transpose_raw<S: Scalar>(a: &[S], n: usize, m: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}
