use thiserror::Error;

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{self, dot, log_sigmoid, matvec, matvec_t, norm, sigmoid, Shape, Tensor};

/// Norms below this make [`Tape::cosine`] return exactly zero.
pub const COSINE_EPS: f64 = 1e-12;

/// Lower clamp applied to probability arguments of the pairwise log loss.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Shape),
    #[error("backward already ran on this tape; call reset() first")]
    AlreadyBackpropagated,
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Shape,
        actual: Shape,
    },
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatVec(Var, Var),
    MatTVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    OneMinus(Var),
    Concat(Var, Var),
    Stack(Vec<Var>),
    Sum(Var),
    Dot(Var, Var),
    Cosine(Var, Var),
    Softmax(Var),
    WeightedSum(Var, Vec<Var>),
    PairLoss { hi: Var, lo: Var, target: f64, delta: f64 },
}

#[derive(Debug)]
struct Node {
    op: Op,
    /// `None` for parameters, whose values live in the store.
    value: Option<Tensor>,
}

/// Reverse-mode computation tape over a borrowed parameter store.
///
/// Nodes are appended in evaluation order, so a reverse sweep visits every
/// node after all of its consumers.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    backpropagated: bool,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            backpropagated: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    /// Drops every node so the tape can be reused for a fresh computation.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.param_vars.iter_mut().for_each(|v| *v = None);
        self.backpropagated = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0] {
            Node {
                op: Op::Param(id), ..
            } => self.params.get(*id).data(),
            Node {
                value: Some(t), ..
            } => t.data(),
            Node { value: None, .. } => unreachable!("non-parameter node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> Shape {
        match &self.nodes[v.0] {
            Node {
                op: Op::Param(id), ..
            } => self.params.get(*id).shape(),
            Node {
                value: Some(t), ..
            } => t.shape(),
            Node { value: None, .. } => unreachable!("non-parameter node without value"),
        }
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let x = self.value(v);
        assert_eq!(x.len(), 1, "node is not scalar");
        x[0]
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    fn vec_len(&self, v: Var, op: &'static str) -> usize {
        self.shape(v)
            .vector_len()
            .unwrap_or_else(|| panic!("{op}: expected a vector operand, got {:?}", self.shape(v)))
    }

    fn same_len(&self, a: Var, b: Var, op: &'static str) -> usize {
        let (n, m) = (self.vec_len(a, op), self.vec_len(b, op));
        assert_eq!(n, m, "{op}: operand lengths differ ({n} vs {m})");
        n
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    pub fn input_vector(&mut self, data: &[f64]) -> Var {
        self.input(Tensor::vector(data.to_vec()))
    }

    pub fn input_scalar(&mut self, x: f64) -> Var {
        self.input(Tensor::scalar(x))
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.input(Tensor::zeros(Shape::Vector(n)))
    }

    /// Trainable parameter leaf. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Matrix-vector product `W x`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let Shape::Matrix(r, c) = self.shape(w) else {
            panic!("matvec: left operand must be a matrix");
        };
        assert_eq!(self.vec_len(x, "matvec"), c, "matvec: inner dimension");
        let mut y = vec![0.0; r];
        matvec(self.value(w), r, c, self.value(x), &mut y);
        self.push(Op::MatVec(w, x), Tensor::vector(y))
    }

    /// Transposed product `W^T x`, i.e. the row-vector product `x^T W`.
    pub fn matvec_t(&mut self, w: Var, x: Var) -> Var {
        let Shape::Matrix(r, c) = self.shape(w) else {
            panic!("matvec_t: left operand must be a matrix");
        };
        assert_eq!(self.vec_len(x, "matvec_t"), r, "matvec_t: inner dimension");
        let mut y = vec![0.0; c];
        matvec_t(self.value(w), r, c, self.value(x), &mut y);
        self.push(Op::MatTVec(w, x), Tensor::vector(y))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: fn(f64, f64) -> f64) -> Var {
        let n = self.same_len(a, b, name);
        let y: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = if self.shape(a).is_scalar() && n == 1 {
            Shape::Scalar
        } else {
            Shape::Vector(n)
        };
        self.push(op, Tensor::new(shape, y))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let shape = self.shape(a);
        let y = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(op, Tensor::new(shape, y))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, Op::OneMinus(a), |x| 1.0 - x)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        self.vec_len(a, "concat");
        self.vec_len(b, "concat");
        let mut y = self.value(a).to_vec();
        y.extend_from_slice(self.value(b));
        self.push(Op::Concat(a, b), Tensor::vector(y))
    }

    /// Packs scalars (or vectors) end to end into one vector.
    pub fn stack(&mut self, parts: &[Var]) -> Var {
        let mut y = Vec::new();
        for &p in parts {
            self.vec_len(p, "stack");
            y.extend_from_slice(self.value(p));
        }
        self.push(Op::Stack(parts.to_vec()), Tensor::vector(y))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Adds any number of scalars; an empty list yields zero.
    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        match terms {
            [] => self.input_scalar(0.0),
            [one] => *one,
            _ => {
                let s = self.stack(terms);
                self.sum(s)
            }
        }
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b, "dot");
        let d = dot(self.value(a), self.value(b));
        self.push(Op::Dot(a, b), Tensor::scalar(d))
    }

    /// Cosine similarity, defined as zero when either norm is below [`COSINE_EPS`].
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b, "cosine");
        let c = cosine(self.value(a), self.value(b));
        self.push(Op::Cosine(a, b), Tensor::scalar(c))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let n = self.vec_len(a, "softmax");
        assert!(n >= 1, "softmax of an empty vector");
        let y = softmax(self.value(a));
        self.push(Op::Softmax(a), Tensor::vector(y))
    }

    /// `sum_i weights[i] * items[i]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        assert_eq!(self.vec_len(weights, "weighted_sum"), items.len());
        assert!(!items.is_empty(), "weighted_sum over no items");
        let d = self.vec_len(items[0], "weighted_sum");
        let mut y = vec![0.0; d];
        for (k, &item) in items.iter().enumerate() {
            assert_eq!(self.vec_len(item, "weighted_sum"), d);
            let w = self.value(weights)[k];
            for (yj, xj) in y.iter_mut().zip(self.value(item)) {
                *yj += w * xj;
            }
        }
        self.push(Op::WeightedSum(weights, items.to_vec()), Tensor::vector(y))
    }

    /// Metric-weighted pairwise cross entropy between the logistic preference
    /// `p = sigmoid(hi - lo)` and the target probability `target`.
    pub fn pair_loss(&mut self, hi: Var, lo: Var, target: f64, delta: f64) -> Var {
        let (a, b) = (self.scalar(hi), self.scalar(lo));
        let l = pair_loss_value(a - b, target, delta);
        self.push(
            Op::PairLoss {
                hi,
                lo,
                target,
                delta,
            },
            Tensor::scalar(l),
        )
    }

    /// Reverse sweep from a scalar root. Fails if called twice without [`Tape::reset`].
    pub fn backward(&mut self, root: Var) -> Result<Gradients, AutodiffError> {
        if self.backpropagated {
            return Err(AutodiffError::AlreadyBackpropagated);
        }
        let shape = self.shape(root);
        if shape.len() != 1 || matches!(shape, Shape::Matrix(..)) {
            return Err(AutodiffError::NonScalarRoot(shape));
        }
        self.backpropagated = true;

        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); root.0 + 1];
        grads[root.0] = vec![1.0];
        let mut out = Gradients::new(self.params.len());

        for i in (0..=root.0).rev() {
            let g = std::mem::take(&mut grads[i]);
            if g.is_empty() {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, self.params.get(*id).shape(), &g),
                Op::MatVec(w, x) => {
                    let Shape::Matrix(r, c) = self.shape(*w) else { unreachable!() };
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    let gw = acc_buf(&mut grads, *w, r * c);
                    for (i, &gi) in g.iter().enumerate() {
                        if gi != 0.0 {
                            for (gwij, xj) in gw[i * c..(i + 1) * c].iter_mut().zip(xv) {
                                *gwij += gi * xj;
                            }
                        }
                    }
                    let gx = acc_buf(&mut grads, *x, c);
                    for (i, &gi) in g.iter().enumerate() {
                        if gi != 0.0 {
                            for (gxj, wij) in gx.iter_mut().zip(&wv[i * c..(i + 1) * c]) {
                                *gxj += gi * wij;
                            }
                        }
                    }
                }
                Op::MatTVec(w, x) => {
                    let Shape::Matrix(r, c) = self.shape(*w) else { unreachable!() };
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    let gw = acc_buf(&mut grads, *w, r * c);
                    for (i, &xi) in xv.iter().enumerate() {
                        if xi != 0.0 {
                            for (gwij, gj) in gw[i * c..(i + 1) * c].iter_mut().zip(&g) {
                                *gwij += xi * gj;
                            }
                        }
                    }
                    let gx = acc_buf(&mut grads, *x, r);
                    for (i, gxi) in gx.iter_mut().enumerate() {
                        *gxi += dot(&wv[i * c..(i + 1) * c], &g);
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc_buf(&mut grads, *a, g.len()), &g, 1.0);
                    add_into(acc_buf(&mut grads, *b, g.len()), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(acc_buf(&mut grads, *a, g.len()), &g, 1.0);
                    add_into(acc_buf(&mut grads, *b, g.len()), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc_buf(&mut grads, *a, g.len());
                    for ((gai, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                        *gai += gi * bi;
                    }
                    let gb = acc_buf(&mut grads, *b, g.len());
                    for ((gbi, gi), ai) in gb.iter_mut().zip(&g).zip(av) {
                        *gbi += gi * ai;
                    }
                }
                Op::Scale(a, k) => add_into(acc_buf(&mut grads, *a, g.len()), &g, *k),
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap().data();
                    let ga = acc_buf(&mut grads, *a, g.len());
                    for ((gai, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *gai += gi * yi * (1.0 - yi);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap().data();
                    let ga = acc_buf(&mut grads, *a, g.len());
                    for ((gai, gi), yi) in ga.iter_mut().zip(&g).zip(y) {
                        *gai += gi * (1.0 - yi * yi);
                    }
                }
                Op::OneMinus(a) => add_into(acc_buf(&mut grads, *a, g.len()), &g, -1.0),
                Op::Concat(a, b) => {
                    let n = self.value(*a).len();
                    add_into(acc_buf(&mut grads, *a, n), &g[..n], 1.0);
                    let m = g.len() - n;
                    add_into(acc_buf(&mut grads, *b, m), &g[n..], 1.0);
                }
                Op::Stack(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        add_into(acc_buf(&mut grads, p, n), &g[off..off + n], 1.0);
                        off += n;
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    acc_buf(&mut grads, *a, n).iter_mut().for_each(|x| *x += g[0]);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    add_into(acc_buf(&mut grads, *a, av.len()), bv, g[0]);
                    add_into(acc_buf(&mut grads, *b, bv.len()), av, g[0]);
                }
                Op::Cosine(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (na, nb) = (norm(av), norm(bv));
                    if na < COSINE_EPS || nb < COSINE_EPS {
                        continue;
                    }
                    let c = node.value.as_ref().unwrap().data()[0];
                    let inv = 1.0 / (na * nb);
                    let ga = acc_buf(&mut grads, *a, av.len());
                    for ((gai, ai), bi) in ga.iter_mut().zip(av).zip(bv) {
                        *gai += g[0] * (bi * inv - c * ai / (na * na));
                    }
                    let gb = acc_buf(&mut grads, *b, bv.len());
                    for ((gbi, ai), bi) in gb.iter_mut().zip(av).zip(bv) {
                        *gbi += g[0] * (ai * inv - c * bi / (nb * nb));
                    }
                }
                Op::Softmax(a) => {
                    let s = node.value.as_ref().unwrap().data();
                    let gs = dot(&g, s);
                    let ga = acc_buf(&mut grads, *a, s.len());
                    for ((gai, gi), si) in ga.iter_mut().zip(&g).zip(s) {
                        *gai += si * (gi - gs);
                    }
                }
                Op::WeightedSum(w, items) => {
                    let wv = self.value(*w);
                    let mut gw = vec![0.0; items.len()];
                    for (k, &item) in items.iter().enumerate() {
                        let xv = self.value(item);
                        gw[k] = dot(&g, xv);
                        add_into(acc_buf(&mut grads, item, g.len()), &g, wv[k]);
                    }
                    add_into(acc_buf(&mut grads, *w, items.len()), &gw, 1.0);
                }
                Op::PairLoss {
                    hi,
                    lo,
                    target,
                    delta,
                } => {
                    let s = self.scalar(*hi) - self.scalar(*lo);
                    let d = pair_loss_grad(s, *target, *delta) * g[0];
                    acc_buf(&mut grads, *hi, 1)[0] += d;
                    acc_buf(&mut grads, *lo, 1)[0] -= d;
                }
            }
        }
        Ok(out)
    }
}

fn acc_buf(grads: &mut [Vec<f64>], v: Var, n: usize) -> &mut Vec<f64> {
    let slot = &mut grads[v.0];
    if slot.is_empty() {
        *slot = vec![0.0; n];
    }
    slot
}

fn add_into(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

/// Cosine similarity with the zero-norm convention used throughout the model.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < COSINE_EPS || nb < COSINE_EPS {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Max-shifted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn clamped_log_sigmoid(s: f64) -> (f64, bool) {
    let l = log_sigmoid(s);
    let floor = LOG_CLAMP.ln();
    if l < floor {
        (floor, true)
    } else {
        (l, false)
    }
}

pub(crate) fn pair_loss_value(s: f64, target: f64, delta: f64) -> f64 {
    let (lp, _) = clamped_log_sigmoid(s);
    let (lq, _) = clamped_log_sigmoid(-s);
    let mut l = 0.0;
    if target != 0.0 {
        l -= target * lp;
    }
    if target != 1.0 {
        l -= (1.0 - target) * lq;
    }
    l * delta.abs()
}

fn pair_loss_grad(s: f64, target: f64, delta: f64) -> f64 {
    let p = tensor::sigmoid(s);
    let (_, cp) = clamped_log_sigmoid(s);
    let (_, cq) = clamped_log_sigmoid(-s);
    // d/ds[-ln sigmoid(s)] = -(1 - p);  d/ds[-ln sigmoid(-s)] = p
    let mut d = 0.0;
    if target != 0.0 && !cp {
        d -= target * (1.0 - p);
    }
    if target != 1.0 && !cq {
        d += (1.0 - target) * p;
    }
    d * delta.abs()
}
