//! Minimal reverse-mode automatic differentiation over 2-D tensors, an Adam
//! optimizer, and a finite-difference gradient checker.
//!
//! Everything runs on a `Tape`: each operation records its forward value and
//! parents; `backward` walks the tape once in reverse creation order. Any op
//! producing a non-finite value raises immediately. 64-bit is the default
//! precision; the whole stack is generic over [`Scalar`] so training can run
//! in f32 behind a flag.

use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: expected {expected}, got {got}")]
    BadShape {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("backward requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
}

/// Floating-point element type of tensors; implemented for f32 and f64.
pub trait Scalar:
    Float
    + num_traits::NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, F),
    AddBroadcastRow(NodeId, NodeId),
    MulBroadcastRow(NodeId, NodeId),
    Relu(NodeId),
    MaxOverPoints(NodeId, Vec<u32>),
    ConcatCols(NodeId, NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        label: usize,
        probs: Vec<F>,
    },
    SumSquares(NodeId),
    Reshape(NodeId),
}

#[derive(Debug, Clone)]
struct Node<F> {
    rows: usize,
    cols: usize,
    values: Vec<F>,
    grad: Vec<F>,
    op: Op<F>,
}

/// Gradient tape: creation order is topological order; `backward` visits
/// every node exactly once in reverse.
#[derive(Debug, Default)]
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

fn ensure_finite<F: Scalar>(op: &'static str, values: &[F]) -> Result<(), NeuralError> {
    if values.iter().any(|v| !v.is_finite()) {
        Err(NeuralError::NonFinite { op })
    } else {
        Ok(())
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[F] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    /// Gradient of the last `backward` target w.r.t. this node.
    pub fn grad(&self, id: NodeId) -> &[F] {
        &self.nodes[id.0].grad
    }

    fn push(
        &mut self,
        op_name: &'static str,
        rows: usize,
        cols: usize,
        values: Vec<F>,
        op: Op<F>,
    ) -> Result<NodeId, NeuralError> {
        debug_assert_eq!(values.len(), rows * cols);
        ensure_finite(op_name, &values)?;
        self.nodes.push(Node {
            rows,
            cols,
            values,
            grad: Vec::new(),
            op,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Insert an input tensor (parameter, constant, or data).
    pub fn leaf(&mut self, rows: usize, cols: usize, values: Vec<F>) -> Result<NodeId, NeuralError> {
        if values.len() != rows * cols {
            return Err(NeuralError::BadShape {
                op: "leaf",
                expected: format!("{} values", rows * cols),
                got: format!("{}", values.len()),
            });
        }
        self.push("leaf", rows, cols, values, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NeuralError> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ca != rb {
            return Err(NeuralError::ShapeMismatch {
                op: "matmul",
                left: (ra, ca),
                right: (rb, cb),
            });
        }
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut out = vec![F::zero(); ra * cb];
        for i in 0..ra {
            for k in 0..ca {
                let aik = av[i * ca + k];
                if aik == F::zero() {
                    continue;
                }
                let brow = &bv[k * cb..(k + 1) * cb];
                let orow = &mut out[i * cb..(i + 1) * cb];
                for j in 0..cb {
                    orow[j] += aik * brow[j];
                }
            }
        }
        self.push("matmul", ra, cb, out, Op::Matmul(a, b))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, NeuralError> {
        let (r, c) = self.shape(x);
        let xv = &self.nodes[x.0].values;
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        self.push("transpose", c, r, out, Op::Transpose(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NeuralError> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if (ra, ca) != (rb, cb) {
            return Err(NeuralError::ShapeMismatch {
                op: "add",
                left: (ra, ca),
                right: (rb, cb),
            });
        }
        let out: Vec<F> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x + y)
            .collect();
        self.push("add", ra, ca, out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NeuralError> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if (ra, ca) != (rb, cb) {
            return Err(NeuralError::ShapeMismatch {
                op: "sub",
                left: (ra, ca),
                right: (rb, cb),
            });
        }
        let out: Vec<F> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x - y)
            .collect();
        self.push("sub", ra, ca, out, Op::Sub(a, b))
    }

    pub fn scale(&mut self, x: NodeId, factor: F) -> Result<NodeId, NeuralError> {
        let (r, c) = self.shape(x);
        let out: Vec<F> = self.nodes[x.0].values.iter().map(|&v| v * factor).collect();
        self.push("scale", r, c, out, Op::Scale(x, factor))
    }

    /// x (n x c) + bias (1 x c), broadcast over rows.
    pub fn add_broadcast_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, NeuralError> {
        let (r, c) = self.shape(x);
        let (rb, cb) = self.shape(bias);
        if rb != 1 || cb != c {
            return Err(NeuralError::ShapeMismatch {
                op: "add_broadcast_row",
                left: (r, c),
                right: (rb, cb),
            });
        }
        let xv = &self.nodes[x.0].values;
        let bv = &self.nodes[bias.0].values;
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = xv[i * c + j] + bv[j];
            }
        }
        self.push("add_broadcast_row", r, c, out, Op::AddBroadcastRow(x, bias))
    }

    /// x (n x c) * gamma (1 x c), element-wise per row.
    pub fn mul_broadcast_row(&mut self, x: NodeId, gamma: NodeId) -> Result<NodeId, NeuralError> {
        let (r, c) = self.shape(x);
        let (rg, cg) = self.shape(gamma);
        if rg != 1 || cg != c {
            return Err(NeuralError::ShapeMismatch {
                op: "mul_broadcast_row",
                left: (r, c),
                right: (rg, cg),
            });
        }
        let xv = &self.nodes[x.0].values;
        let gv = &self.nodes[gamma.0].values;
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = xv[i * c + j] * gv[j];
            }
        }
        self.push("mul_broadcast_row", r, c, out, Op::MulBroadcastRow(x, gamma))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, NeuralError> {
        let (r, c) = self.shape(x);
        let out: Vec<F> = self.nodes[x.0]
            .values
            .iter()
            .map(|&v| if v > F::zero() { v } else { F::zero() })
            .collect();
        self.push("relu", r, c, out, Op::Relu(x))
    }

    /// Column-wise maximum over the point (row) axis: (n x d) -> (1 x d).
    /// The gradient routes to the argmax row only; ties take the lowest row.
    pub fn max_over_points(&mut self, x: NodeId) -> Result<NodeId, NeuralError> {
        let (r, c) = self.shape(x);
        if r == 0 {
            return Err(NeuralError::BadShape {
                op: "max_over_points",
                expected: "at least one row".into(),
                got: "0 rows".into(),
            });
        }
        let xv = &self.nodes[x.0].values;
        let mut out = vec![F::zero(); c];
        let mut argmax = vec![0u32; c];
        for j in 0..c {
            let mut best = xv[j];
            let mut best_row = 0u32;
            for i in 1..r {
                let v = xv[i * c + j];
                if v > best {
                    best = v;
                    best_row = i as u32;
                }
            }
            out[j] = best;
            argmax[j] = best_row;
        }
        self.push("max_over_points", 1, c, out, Op::MaxOverPoints(x, argmax))
    }

    /// Concatenate along the feature axis: (r x c1), (r x c2) -> (r x c1+c2).
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NeuralError> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(NeuralError::ShapeMismatch {
                op: "concat_cols",
                left: (ra, ca),
                right: (rb, cb),
            });
        }
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let cols = ca + cb;
        let mut out = vec![F::zero(); ra * cols];
        for i in 0..ra {
            out[i * cols..i * cols + ca].copy_from_slice(&av[i * ca..(i + 1) * ca]);
            out[i * cols + ca..(i + 1) * cols].copy_from_slice(&bv[i * cb..(i + 1) * cb]);
        }
        self.push("concat_cols", ra, cols, out, Op::ConcatCols(a, b))
    }

    /// Numerically stable softmax cross-entropy of a single-row logit vector
    /// against an integer label; returns a 1x1 loss node.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        label: usize,
    ) -> Result<NodeId, NeuralError> {
        let (r, c) = self.shape(logits);
        if r != 1 {
            return Err(NeuralError::BadShape {
                op: "softmax_cross_entropy",
                expected: "a 1-row logit vector".into(),
                got: format!("{r}x{c}"),
            });
        }
        if label >= c {
            return Err(NeuralError::InvalidLabel { label, classes: c });
        }
        let lv = &self.nodes[logits.0].values;
        let max = lv.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut probs = vec![F::zero(); c];
        let mut denom = F::zero();
        for j in 0..c {
            let e = (lv[j] - max).exp();
            probs[j] = e;
            denom += e;
        }
        for p in &mut probs {
            *p /= denom;
        }
        let loss = denom.ln() + max - lv[label];
        self.push(
            "softmax_cross_entropy",
            1,
            1,
            vec![loss],
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
        )
    }

    /// Sum of squared entries as a 1x1 node.
    pub fn sum_squares(&mut self, x: NodeId) -> Result<NodeId, NeuralError> {
        let s: F = self.nodes[x.0].values.iter().map(|&v| v * v).sum();
        self.push("sum_squares", 1, 1, vec![s], Op::SumSquares(x))
    }

    /// Reinterpret the row-major values under a new shape of equal size.
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId, NeuralError> {
        let (rx, cx) = self.shape(x);
        if rx * cx != rows * cols {
            return Err(NeuralError::BadShape {
                op: "reshape",
                expected: format!("{} values", rows * cols),
                got: format!("{rx}x{cx}"),
            });
        }
        let values = self.nodes[x.0].values.clone();
        self.push("reshape", rows, cols, values, Op::Reshape(x))
    }

    /// Reverse sweep from a scalar loss; every node's gradient is filled
    /// (untouched parameters get zeros).
    pub fn backward(&mut self, loss: NodeId) -> Result<(), NeuralError> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(NeuralError::NonScalarLoss { rows: r, cols: c });
        }
        for node in &mut self.nodes {
            node.grad = vec![F::zero(); node.values.len()];
        }
        self.nodes[loss.0].grad[0] = F::one();

        for i in (0..self.nodes.len()).rev() {
            // Contributions are buffered so a parent used twice accumulates
            // correctly.
            let mut contributions: Vec<(usize, Vec<F>)> = Vec::new();
            {
                let node = &self.nodes[i];
                if node.grad.iter().all(|&g| g == F::zero()) {
                    continue;
                }
                match &node.op {
                    Op::Leaf => {}
                    Op::Matmul(a, b) => {
                        let (ra, ca) = (self.nodes[a.0].rows, self.nodes[a.0].cols);
                        let cb = self.nodes[b.0].cols;
                        let av = &self.nodes[a.0].values;
                        let bv = &self.nodes[b.0].values;
                        let g = &node.grad;
                        // dA = dC B^T
                        let mut da = vec![F::zero(); ra * ca];
                        for ii in 0..ra {
                            for j in 0..cb {
                                let gij = g[ii * cb + j];
                                if gij == F::zero() {
                                    continue;
                                }
                                for k in 0..ca {
                                    da[ii * ca + k] += gij * bv[k * cb + j];
                                }
                            }
                        }
                        // dB = A^T dC
                        let mut db = vec![F::zero(); ca * cb];
                        for k in 0..ca {
                            for ii in 0..ra {
                                let aik = av[ii * ca + k];
                                if aik == F::zero() {
                                    continue;
                                }
                                for j in 0..cb {
                                    db[k * cb + j] += aik * g[ii * cb + j];
                                }
                            }
                        }
                        contributions.push((a.0, da));
                        contributions.push((b.0, db));
                    }
                    Op::Transpose(x) => {
                        let (rx, cx) = (self.nodes[x.0].rows, self.nodes[x.0].cols);
                        let g = &node.grad; // shape cx x rx
                        let mut dx = vec![F::zero(); rx * cx];
                        for ii in 0..rx {
                            for j in 0..cx {
                                dx[ii * cx + j] = g[j * rx + ii];
                            }
                        }
                        contributions.push((x.0, dx));
                    }
                    Op::Add(a, b) => {
                        contributions.push((a.0, node.grad.clone()));
                        contributions.push((b.0, node.grad.clone()));
                    }
                    Op::Sub(a, b) => {
                        contributions.push((a.0, node.grad.clone()));
                        contributions.push((b.0, node.grad.iter().map(|&g| -g).collect()));
                    }
                    Op::Scale(x, f) => {
                        contributions.push((x.0, node.grad.iter().map(|&g| g * *f).collect()));
                    }
                    Op::AddBroadcastRow(x, bias) => {
                        let c = node.cols;
                        let r = node.rows;
                        contributions.push((x.0, node.grad.clone()));
                        let mut db = vec![F::zero(); c];
                        for ii in 0..r {
                            for j in 0..c {
                                db[j] += node.grad[ii * c + j];
                            }
                        }
                        contributions.push((bias.0, db));
                    }
                    Op::MulBroadcastRow(x, gamma) => {
                        let c = node.cols;
                        let r = node.rows;
                        let xv = &self.nodes[x.0].values;
                        let gv = &self.nodes[gamma.0].values;
                        let mut dx = vec![F::zero(); r * c];
                        let mut dg = vec![F::zero(); c];
                        for ii in 0..r {
                            for j in 0..c {
                                let g = node.grad[ii * c + j];
                                dx[ii * c + j] = g * gv[j];
                                dg[j] += g * xv[ii * c + j];
                            }
                        }
                        contributions.push((x.0, dx));
                        contributions.push((gamma.0, dg));
                    }
                    Op::Relu(x) => {
                        let xv = &self.nodes[x.0].values;
                        let dx: Vec<F> = xv
                            .iter()
                            .zip(&node.grad)
                            .map(|(&v, &g)| if v > F::zero() { g } else { F::zero() })
                            .collect();
                        contributions.push((x.0, dx));
                    }
                    Op::MaxOverPoints(x, argmax) => {
                        let (rx, cx) = (self.nodes[x.0].rows, self.nodes[x.0].cols);
                        let mut dx = vec![F::zero(); rx * cx];
                        for j in 0..cx {
                            dx[argmax[j] as usize * cx + j] = node.grad[j];
                        }
                        contributions.push((x.0, dx));
                    }
                    Op::ConcatCols(a, b) => {
                        let ca = self.nodes[a.0].cols;
                        let cb = self.nodes[b.0].cols;
                        let r = node.rows;
                        let cols = ca + cb;
                        let mut da = vec![F::zero(); r * ca];
                        let mut db = vec![F::zero(); r * cb];
                        for ii in 0..r {
                            da[ii * ca..(ii + 1) * ca]
                                .copy_from_slice(&node.grad[ii * cols..ii * cols + ca]);
                            db[ii * cb..(ii + 1) * cb]
                                .copy_from_slice(&node.grad[ii * cols + ca..(ii + 1) * cols]);
                        }
                        contributions.push((a.0, da));
                        contributions.push((b.0, db));
                    }
                    Op::SoftmaxCrossEntropy {
                        logits,
                        label,
                        probs,
                    } => {
                        let g = node.grad[0];
                        let mut dl: Vec<F> = probs.iter().map(|&p| g * p).collect();
                        dl[*label] -= g;
                        contributions.push((logits.0, dl));
                    }
                    Op::SumSquares(x) => {
                        let g = node.grad[0];
                        let two = F::from_f64(2.0);
                        let dx: Vec<F> = self.nodes[x.0]
                            .values
                            .iter()
                            .map(|&v| two * v * g)
                            .collect();
                        contributions.push((x.0, dx));
                    }
                    Op::Reshape(x) => {
                        contributions.push((x.0, node.grad.clone()));
                    }
                }
            }
            for (target, contrib) in contributions {
                debug_assert!(target < i, "tape order violated");
                for (slot, add) in self.nodes[target].grad.iter_mut().zip(contrib) {
                    *slot += add;
                }
            }
        }
        Ok(())
    }
}

/// Adam optimizer state for a fixed list of parameter arrays.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(param_sizes: &[usize], learning_rate: f64) -> Self {
        Self {
            first: param_sizes.iter().map(|&s| vec![F::zero(); s]).collect(),
            second: param_sizes.iter().map(|&s| vec![F::zero(); s]).collect(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update with bias correction. `params` and `grads` must align
/// with the sizes the state was created with.
pub fn adam_step<F: Scalar>(params: &mut [Vec<F>], grads: &[Vec<F>], state: &mut AdamState<F>) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.first.len());
    state.step += 1;
    let t = state.step as i32;
    let b1 = F::from_f64(state.beta1);
    let b2 = F::from_f64(state.beta2);
    let lr = F::from_f64(state.learning_rate);
    let eps = F::from_f64(state.epsilon);
    let one = F::one();
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    for (p_idx, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(param.len(), grad.len(), "parameter {p_idx} shape mismatch");
        let m = &mut state.first[p_idx];
        let v = &mut state.second[p_idx];
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Maximum over coordinates of `|analytic - central difference| /
/// max(1, |analytic|)` for a scalar function returning `(value, gradient)`.
pub fn grad_check<Func>(f: Func, point: &[f64], h: f64) -> f64
where
    Func: Fn(&[f64]) -> (f64, Vec<f64>),
{
    assert!(h > 0.0);
    let (_, analytic) = f(point);
    assert_eq!(analytic.len(), point.len());
    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let (fp, _) = f(&probe);
        probe[i] = point[i] - h;
        let (fm, _) = f(&probe);
        probe[i] = point[i];
        let fd = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
