//! Operation recording and reverse-mode differentiation.
//!
//! A [`Graph`] owns every intermediate tensor of one forward pass. Nodes
//! are appended in execution order, which is already a topological order,
//! so the backward pass is a single reverse sweep. Gradients accumulate
//! across repeated `backward` calls until [`Graph::zero_grad`].

use rand::Rng;

use super::{Element, Tensor, TensorError};

/// Handle to a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum OpRecord<E: Element> {
    Leaf,
    Matmul { a: Var, b: Var },
    Transpose { x: Var },
    SoftmaxRows { x: Var },
    Relu { x: Var },
    Add { a: Var, b: Var },
    AddBias { x: Var, bias: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Scale { x: Var, c: E },
    MaxAxis { x: Var, axis: usize, argmax: Vec<usize> },
    /// `mask` holds the per-element keep multiplier; `None` is the
    /// inference-mode identity.
    Dropout { x: Var, mask: Option<Vec<E>> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<E> },
    Sum { x: Var },
    Reshape { x: Var },
}

struct Node<E: Element> {
    value: Tensor<E>,
    op: OpRecord<E>,
    needs_grad: bool,
    grad: Option<Vec<E>>,
}

/// Records one forward pass and replays it in reverse for gradients.
///
/// A graph is confined to one thread while active; independent graphs
/// may run on independent threads.
pub struct Graph<E: Element> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a tensor as a leaf node. Cheap: the buffer is shared, not copied.
    pub fn leaf(&mut self, value: &Tensor<E>, requires_grad: bool) -> Var {
        self.push(value.clone(), OpRecord::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    /// Gradient buffer of a node, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Moves the gradient buffer out of the graph without copying.
    pub fn take_grad(&mut self, v: Var) -> Option<Vec<E>> {
        self.nodes[v.0].grad.take()
    }

    /// Clears all gradient buffers.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<E>, op: OpRecord<E>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[E] {
        self.nodes[v.0].value.data()
    }

    // ── Operations ──────────────────────────────────────────────────

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::DimensionMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out).expect("matmul output shape"),
            OpRecord::Matmul { a, b },
            needs,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(TensorError::DimensionMismatch {
                op: "transpose",
                lhs: s,
                rhs: vec![],
            });
        }
        let (m, n) = (s[0], s[1]);
        let out = transpose_raw(self.data(x), m, n);
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![n, m], out).expect("transpose output shape"),
            OpRecord::Transpose { x },
            needs,
        ))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(TensorError::DimensionMismatch {
                op: "softmax_rows",
                lhs: s,
                rhs: vec![],
            });
        }
        let data = self.data(x);
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "softmax_rows" });
        }
        let out = softmax_rows_raw(data, s[0], s[1]);
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(s, out).expect("softmax output shape"),
            OpRecord::SoftmaxRows { x },
            needs,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<E> = self
            .data(x)
            .iter()
            .map(|&v| if v > E::zero() { v } else { E::zero() })
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::new(shape, out).expect("relu output shape"),
            OpRecord::Relu { x },
            needs,
        )
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::DimensionMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<E> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(shape, out).expect("add output shape"),
            OpRecord::Add { a, b },
            needs,
        ))
    }

    /// Adds a length-`n` bias vector to every row of an `m×n` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        let n = match sx.as_slice() {
            [_, n] => *n,
            _ => {
                return Err(TensorError::DimensionMismatch {
                    op: "add_bias",
                    lhs: sx,
                    rhs: sb,
                })
            }
        };
        let bias_len: usize = sb.iter().product();
        if bias_len != n || sb.len() > 2 {
            return Err(TensorError::DimensionMismatch {
                op: "add_bias",
                lhs: sx,
                rhs: sb,
            });
        }
        let bdata = self.data(bias).to_vec();
        let out: Vec<E> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bdata[i % n])
            .collect();
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(
            Tensor::new(sx, out).expect("add_bias output shape"),
            OpRecord::AddBias { x, bias },
            needs,
        ))
    }

    /// Concatenates tensors along `axis`. All other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat" });
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(TensorError::InvalidAxis {
                op: "concat",
                axis,
                shape: first,
            });
        }
        let mut axis_total = 0usize;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::DimensionMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![E::zero(); out_shape.iter().product()];
        let mut offset = 0usize;
        for &p in parts {
            let extent = self.shape(p)[axis];
            let data = self.data(p);
            for o in 0..outer {
                let src = o * extent * inner;
                let dst = o * axis_total * inner + offset * inner;
                out[dst..dst + extent * inner].copy_from_slice(&data[src..src + extent * inner]);
            }
            offset += extent;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::new(out_shape, out).expect("concat output shape"),
            OpRecord::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        ))
    }

    pub fn scale(&mut self, x: Var, c: E) -> Var {
        let out: Vec<E> = self.data(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        self.push(
            Tensor::new(shape, out).expect("scale output shape"),
            OpRecord::Scale { x, c },
            needs,
        )
    }

    /// Max-reduction along `axis`; gradient flows to the first argmax on ties.
    pub fn max_over_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(TensorError::InvalidAxis {
                op: "max_over_axis",
                axis,
                shape: s,
            });
        }
        if s[axis] == 0 {
            return Err(TensorError::EmptyAxis {
                op: "max_over_axis",
                axis,
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let extent = s[axis];
        let data = self.data(x);
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = data[o * extent * inner + i];
                let mut best_k = 0usize;
                for k in 1..extent {
                    let v = data[o * extent * inner + k * inner + i];
                    if v > best {
                        best = v;
                        best_k = k;
                    }
                }
                out.push(best);
                argmax.push(best_k);
            }
        }
        let mut out_shape = s.clone();
        out_shape.remove(axis);
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(out_shape, out).expect("max output shape"),
            OpRecord::MaxAxis { x, axis, argmax },
            needs,
        ))
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by
    /// `1/(1-p)`. Identity when `training` is false (consumes no randomness).
    pub fn dropout<R: Rng>(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidProbability { p });
        }
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x);
        if !training || p == 0.0 {
            let value = self.nodes[x.0].value.clone();
            return Ok(self.push(value, OpRecord::Dropout { x, mask: None }, needs));
        }
        let keep_scale = E::from_f64(1.0 / (1.0 - p));
        let mask: Vec<E> = (0..self.data(x).len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    E::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let out: Vec<E> = self
            .data(x)
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        Ok(self.push(
            Tensor::new(shape, out).expect("dropout output shape"),
            OpRecord::Dropout { x, mask: Some(mask) },
            needs,
        ))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, computed via
    /// log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(TensorError::DimensionMismatch {
                op: "cross_entropy",
                lhs: s,
                rhs: vec![labels.len()],
            });
        }
        let (b, c) = (s[0], s[1]);
        for &label in labels {
            if label >= c {
                return Err(TensorError::LabelOutOfRange { label, classes: c });
            }
        }
        let data = self.data(logits);
        let mut probs = vec![E::zero(); b * c];
        let mut total = 0.0f64;
        for row in 0..b {
            let r = &data[row * c..(row + 1) * c];
            let max = r.iter().cloned().fold(E::neg_infinity(), E::max);
            let mut denom = E::zero();
            for &v in r {
                denom = denom + (v - max).exp();
            }
            let log_denom = denom.ln();
            for (j, &v) in r.iter().enumerate() {
                probs[row * c + j] = ((v - max) - log_denom).exp();
            }
            let log_sum_exp = max + log_denom;
            total += (log_sum_exp - r[labels[row]]).to_f64();
        }
        let loss = E::from_f64(total / b as f64);
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            OpRecord::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self
            .data(x)
            .iter()
            .fold(E::zero(), |acc, &v| acc + v);
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), OpRecord::Sum { x }, needs)
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.data(x).len() {
            return Err(TensorError::NumelMismatch {
                op: "reshape",
                expected: self.data(x).len(),
                got: numel,
            });
        }
        let data = self.data(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(
            Tensor::new(shape, data).expect("reshape output shape"),
            OpRecord::Reshape { x },
            needs,
        ))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Accumulates gradients of `loss` into every node that needs them.
    /// Repeated calls without [`Graph::zero_grad`] keep accumulating.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: self.shape(loss).to_vec(),
            });
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        // Seed within a fresh sweep buffer; node.grad keeps cross-call accumulation.
        let mut sweep: Vec<Option<Vec<E>>> = (0..=loss.0).map(|_| None).collect();
        sweep[loss.0] = Some(vec![E::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(upstream) = sweep[idx].take() else {
                continue;
            };
            self.propagate(idx, &upstream, &mut sweep);
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(g) => {
                    for (gi, ui) in g.iter_mut().zip(&upstream) {
                        *gi = *gi + *ui;
                    }
                }
                None => node.grad = Some(upstream),
            }
        }
        Ok(())
    }

    fn accumulate(&self, sweep: &mut [Option<Vec<E>>], v: Var, delta: Vec<E>) {
        if !self.needs(v) {
            return;
        }
        match &mut sweep[v.0] {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(&delta) {
                    *gi = *gi + *di;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, idx: usize, up: &[E], sweep: &mut [Option<Vec<E>>]) {
        match &self.nodes[idx].op {
            OpRecord::Leaf => {}
            OpRecord::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let sa = self.shape(a);
                let sb = self.shape(b);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(a) {
                    let bt = transpose_raw(self.data(b), k, n);
                    let da = matmul_raw(up, &bt, m, n, k);
                    self.accumulate(sweep, a, da);
                }
                if self.needs(b) {
                    let at = transpose_raw(self.data(a), m, k);
                    let db = matmul_raw(&at, up, k, m, n);
                    self.accumulate(sweep, b, db);
                }
            }
            OpRecord::Transpose { x } => {
                let x = *x;
                let s = self.shape(x);
                let dx = transpose_raw(up, s[1], s[0]);
                self.accumulate(sweep, x, dx);
            }
            OpRecord::SoftmaxRows { x } => {
                let x = *x;
                let s = self.shape(x);
                let (m, n) = (s[0], s[1]);
                let y = self.nodes[idx].value.data();
                let mut dx = vec![E::zero(); m * n];
                for row in 0..m {
                    let yr = &y[row * n..(row + 1) * n];
                    let ur = &up[row * n..(row + 1) * n];
                    let dot = yr
                        .iter()
                        .zip(ur)
                        .fold(E::zero(), |acc, (&yv, &uv)| acc + yv * uv);
                    for j in 0..n {
                        dx[row * n + j] = yr[j] * (ur[j] - dot);
                    }
                }
                self.accumulate(sweep, x, dx);
            }
            OpRecord::Relu { x } => {
                let x = *x;
                let dx: Vec<E> = self
                    .data(x)
                    .iter()
                    .zip(up)
                    .map(|(&v, &u)| if v > E::zero() { u } else { E::zero() })
                    .collect();
                self.accumulate(sweep, x, dx);
            }
            OpRecord::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(sweep, a, up.to_vec());
                self.accumulate(sweep, b, up.to_vec());
            }
            OpRecord::AddBias { x, bias } => {
                let (x, bias) = (*x, *bias);
                self.accumulate(sweep, x, up.to_vec());
                if self.needs(bias) {
                    let n: usize = self.shape(bias).iter().product();
                    let mut db = vec![E::zero(); n];
                    for (i, &u) in up.iter().enumerate() {
                        db[i % n] = db[i % n] + u;
                    }
                    self.accumulate(sweep, bias, db);
                }
            }
            OpRecord::Concat { parts, axis } => {
                let axis = *axis;
                let out_shape = self.nodes[idx].value.shape();
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let axis_total = out_shape[axis];
                let mut offset = 0usize;
                for &p in parts.clone().iter() {
                    let extent = self.shape(p)[axis];
                    if self.needs(p) {
                        let mut dp = vec![E::zero(); extent * inner * outer];
                        for o in 0..outer {
                            let src = o * axis_total * inner + offset * inner;
                            let dst = o * extent * inner;
                            dp[dst..dst + extent * inner]
                                .copy_from_slice(&up[src..src + extent * inner]);
                        }
                        self.accumulate(sweep, p, dp);
                    }
                    offset += extent;
                }
            }
            OpRecord::Scale { x, c } => {
                let (x, c) = (*x, *c);
                let dx: Vec<E> = up.iter().map(|&u| u * c).collect();
                self.accumulate(sweep, x, dx);
            }
            OpRecord::MaxAxis { x, axis, argmax } => {
                let x = *x;
                let s = self.shape(x);
                let axis = *axis;
                let outer: usize = s[..axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let extent = s[axis];
                let mut dx = vec![E::zero(); self.data(x).len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let k = argmax[o * inner + i];
                        dx[o * extent * inner + k * inner + i] = up[o * inner + i];
                    }
                }
                self.accumulate(sweep, x, dx);
            }
            OpRecord::Dropout { x, mask } => {
                let x = *x;
                let dx: Vec<E> = match mask {
                    None => up.to_vec(),
                    Some(mask) => up.iter().zip(mask).map(|(&u, &m)| u * m).collect(),
                };
                self.accumulate(sweep, x, dx);
            }
            OpRecord::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let logits = *logits;
                let s = self.shape(logits);
                let (b, c) = (s[0], s[1]);
                let scale = up[0] * E::from_f64(1.0 / b as f64);
                let mut dl = vec![E::zero(); b * c];
                for row in 0..b {
                    for j in 0..c {
                        let onehot = if labels[row] == j { E::one() } else { E::zero() };
                        dl[row * c + j] = (probs[row * c + j] - onehot) * scale;
                    }
                }
                self.accumulate(sweep, logits, dl);
            }
            OpRecord::Sum { x } => {
                let x = *x;
                let dx = vec![up[0]; self.data(x).len()];
                self.accumulate(sweep, x, dx);
            }
            OpRecord::Reshape { x } => {
                let x = *x;
                self.accumulate(sweep, x, up.to_vec());
            }
        }
    }
}

// ── Raw kernels ─────────────────────────────────────────────────────

pub(crate) fn matmul_raw<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut c = vec![E::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] = crow[j] + av * brow[j];
            }
        }
    }
    c
}

pub(crate) fn transpose_raw<E: Element>(x: &[E], m: usize, n: usize) -> Vec<E> {
    let mut t = vec![E::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = x[i * n + j];
        }
    }
    t
}

fn softmax_rows_raw<E: Element>(x: &[E], m: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::zero(); m * n];
    for row in 0..m {
        let r = &x[row * n..(row + 1) * n];
        let max = r.iter().cloned().fold(E::neg_infinity(), E::max);
        let mut denom = E::zero();
        for (j, &v) in r.iter().enumerate() {
            let e = (v - max).exp();
            out[row * n + j] = e;
            denom = denom + e;
        }
        for j in 0..n {
            out[row * n + j] = out[row * n + j] / denom;
        }
    }
    out
}
