//! Reverse-mode differentiation over a recorded tape.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]. Calling
//! [`Tape::backward`] on a scalar node replays the tape in reverse and
//! accumulates adjoints. Shape errors inside tape operations are programming
//! errors and panic; user-facing validation happens before values reach the
//! tape.

use std::cell::RefCell;
use std::ops;
use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tensor::{broadcast_map, broadcast_shapes, gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{contract, Result};

/// Correlations with a standard deviation below this are defined as 0.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Softplus(usize),
    Abs(usize),
    Sqrt(usize),
    Square(usize),
    LeakyRelu(usize, f64),
    Clamp(usize, f64, f64),
    /// `[.., m, k] x [k, n]` with the leading axes flattened into rows.
    MatMul(usize, usize),
    /// `[b, m, k] x [b, k, n]`.
    BatchMatMul(usize, usize),
    TransposeLast2(usize),
    Reshape(usize),
    SumAll(usize),
    SumAxis(usize, usize),
    SoftmaxLast(usize),
    Concat(Vec<usize>, usize),
    Narrow { src: usize, axis: usize, start: usize },
    /// Causal unfold `[n, l, c] -> [n, l, k*c]` with zero left padding.
    Unfold(usize, usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    param: Option<(u64, ParamId)>,
}

/// Recorded computation graph, confined to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`, zeros when `v` does not reach the loss.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, param: None });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A leaf that receives gradients but is not tied to a parameter.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// A leaf treated as a constant by the caller (gradients are still
    /// computed but never read).
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    /// Bind a stored parameter as a leaf; [`Tape::backward_into`] writes its
    /// gradient back into the store.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let v = self.push(store.get(id).value.clone(), Op::Leaf);
        self.nodes.borrow_mut()[v.id].param = Some((store.tag(), id));
        v
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let lv = &nodes[loss.id].value;
        if lv.len() != 1 {
            return Err(contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(lv.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward pass that accumulates parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var<'_>, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        let nodes = self.nodes.borrow();
        for (id, g) in grads.grads.iter().enumerate() {
            if let (Some((tag, pid)), Some(g)) = (nodes[id].param, g) {
                if tag != store.tag() {
                    continue;
                }
                let dst = &mut store.get_mut(pid).grad;
                for (d, s) in dst.data_mut().iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
        }
        drop(nodes);
        Ok(grads)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Sum a broadcast gradient back onto the source shape.
fn reduce_to(src_shape: &[usize], out_shape: &[usize], per_out: impl Fn(usize) -> f64) -> Tensor {
    let map = broadcast_map(src_shape, out_shape);
    let mut data = vec![0.0; src_shape.iter().product()];
    for (o, &s) in map.iter().enumerate() {
        data[s] += per_out(o);
    }
    Tensor::from_parts(src_shape.to_vec(), data)
}

fn unary_grad(x: &Tensor, g: &Tensor, f: impl Fn(f64, usize) -> f64) -> Tensor {
    let data = g.data().iter().enumerate().map(|(i, &gi)| gi * f(x.data()[i], i)).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

fn backprop_node(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(nodes[id].op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let ga = reduce_to(val(*a).shape(), out.shape(), |o| g.data()[o]);
            let gb = reduce_to(val(*b).shape(), out.shape(), |o| sign * g.data()[o]);
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ma = broadcast_map(va.shape(), out.shape());
            let mb = broadcast_map(vb.shape(), out.shape());
            let ga = reduce_to(va.shape(), out.shape(), |o| g.data()[o] * vb.data()[mb[o]]);
            let gb = reduce_to(vb.shape(), out.shape(), |o| g.data()[o] * va.data()[ma[o]]);
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let ma = broadcast_map(va.shape(), out.shape());
            let mb = broadcast_map(vb.shape(), out.shape());
            let ga = reduce_to(va.shape(), out.shape(), |o| g.data()[o] / vb.data()[mb[o]]);
            let gb = reduce_to(vb.shape(), out.shape(), |o| {
                let d = vb.data()[mb[o]];
                -g.data()[o] * va.data()[ma[o]] / (d * d)
            });
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Op::Neg(a) => accumulate(grads, *a, g.map(|x| -x)),
        Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| x * c)),
        Op::Offset(a) => accumulate(grads, *a, g.clone()),
        Op::Exp(a) => accumulate(grads, *a, unary_grad(val(*a), g, |_, i| out.data()[i])),
        Op::Log(a) => accumulate(grads, *a, unary_grad(val(*a), g, |x, _| 1.0 / x)),
        Op::Sigmoid(a) => accumulate(
            grads,
            *a,
            unary_grad(val(*a), g, |_, i| {
                let s = out.data()[i];
                s * (1.0 - s)
            }),
        ),
        Op::Softplus(a) => accumulate(grads, *a, unary_grad(val(*a), g, |x, _| sigmoid_scalar(x))),
        Op::Abs(a) => accumulate(
            grads,
            *a,
            unary_grad(val(*a), g, |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
        ),
        Op::Sqrt(a) => accumulate(grads, *a, unary_grad(val(*a), g, |_, i| 0.5 / out.data()[i])),
        Op::Square(a) => accumulate(grads, *a, unary_grad(val(*a), g, |x, _| 2.0 * x)),
        Op::LeakyRelu(a, slope) => {
            accumulate(grads, *a, unary_grad(val(*a), g, |x, _| if x > 0.0 { 1.0 } else { *slope }))
        }
        Op::Clamp(a, lo, hi) => accumulate(
            grads,
            *a,
            unary_grad(val(*a), g, |x, _| if x >= *lo && x <= *hi { 1.0 } else { 0.0 }),
        ),
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let k = vb.shape()[0];
            let n = vb.shape()[1];
            let m = va.len() / k;
            let mut ga = vec![0.0; va.len()];
            gemm_nt_acc(g.data(), vb.data(), &mut ga, m, n, k);
            let mut gb = vec![0.0; vb.len()];
            gemm_tn_acc(va.data(), g.data(), &mut gb, m, k, n);
            accumulate(grads, *a, Tensor::from_parts(va.shape().to_vec(), ga));
            accumulate(grads, *b, Tensor::from_parts(vb.shape().to_vec(), gb));
        }
        Op::BatchMatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (bs, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
            let n = vb.shape()[2];
            let mut ga = vec![0.0; va.len()];
            let mut gb = vec![0.0; vb.len()];
            for i in 0..bs {
                let gs = &g.data()[i * m * n..(i + 1) * m * n];
                let a_s = &va.data()[i * m * k..(i + 1) * m * k];
                let b_s = &vb.data()[i * k * n..(i + 1) * k * n];
                gemm_nt_acc(gs, b_s, &mut ga[i * m * k..(i + 1) * m * k], m, n, k);
                gemm_tn_acc(a_s, gs, &mut gb[i * k * n..(i + 1) * k * n], m, k, n);
            }
            accumulate(grads, *a, Tensor::from_parts(va.shape().to_vec(), ga));
            accumulate(grads, *b, Tensor::from_parts(vb.shape().to_vec(), gb));
        }
        Op::TransposeLast2(a) => accumulate(grads, *a, transpose_last2(g)),
        Op::Reshape(a) => {
            accumulate(grads, *a, Tensor::from_parts(val(*a).shape().to_vec(), g.data().to_vec()))
        }
        Op::SumAll(a) => {
            let s = g.item();
            accumulate(grads, *a, Tensor::full(val(*a).shape(), s));
        }
        Op::SumAxis(a, axis) => {
            let src = val(*a);
            let (outer, len, inner) = axis_split(src.shape(), *axis);
            let mut data = vec![0.0; src.len()];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        data[(o * len + l) * inner + i] = g.data()[o * inner + i];
                    }
                }
            }
            accumulate(grads, *a, Tensor::from_parts(src.shape().to_vec(), data));
        }
        Op::SoftmaxLast(a) => {
            let n = *out.shape().last().unwrap();
            let mut data = vec![0.0; out.len()];
            for r in 0..out.len() / n {
                let s = &out.data()[r * n..(r + 1) * n];
                let gr = &g.data()[r * n..(r + 1) * n];
                let dot: f64 = s.iter().zip(gr).map(|(x, y)| x * y).sum();
                for j in 0..n {
                    data[r * n + j] = s[j] * (gr[j] - dot);
                }
            }
            accumulate(grads, *a, Tensor::from_parts(out.shape().to_vec(), data));
        }
        Op::Concat(parts, axis) => {
            let mut offset = 0;
            for &p in parts {
                let len = val(p).shape()[*axis];
                accumulate(grads, p, narrow_tensor(g, *axis, offset, len));
                offset += len;
            }
        }
        Op::Narrow { src, axis, start } => {
            let s = val(*src);
            let (outer, len, inner) = axis_split(s.shape(), *axis);
            let take = out.shape()[*axis];
            let mut data = vec![0.0; s.len()];
            for o in 0..outer {
                for l in 0..take {
                    for i in 0..inner {
                        data[(o * len + start + l) * inner + i] = g.data()[(o * take + l) * inner + i];
                    }
                }
            }
            accumulate(grads, *src, Tensor::from_parts(s.shape().to_vec(), data));
        }
        Op::Unfold(a, k) => {
            let s = val(*a);
            let (n, l, c) = (s.shape()[0], s.shape()[1], s.shape()[2]);
            let mut data = vec![0.0; s.len()];
            for b in 0..n {
                for t in 0..l {
                    for j in 0..*k {
                        let src_t = t as isize - (*k as isize - 1) + j as isize;
                        if src_t < 0 {
                            continue;
                        }
                        for ch in 0..c {
                            data[(b * l + src_t as usize) * c + ch] +=
                                g.data()[(b * l + t) * (k * c) + j * c + ch];
                        }
                    }
                }
            }
            accumulate(grads, *a, Tensor::from_parts(s.shape().to_vec(), data));
        }
    }
}

/// `(outer, axis_len, inner)` sizes around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn transpose_last2(t: &Tensor) -> Tensor {
    let r = t.rank();
    let (m, n) = (t.shape()[r - 2], t.shape()[r - 1]);
    let batch = t.len() / (m * n);
    let mut data = vec![0.0; t.len()];
    for b in 0..batch {
        for i in 0..m {
            for j in 0..n {
                data[b * m * n + j * m + i] = t.data()[b * m * n + i * n + j];
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape.swap(r - 2, r - 1);
    Tensor::from_parts(shape, data)
}

fn narrow_tensor(t: &Tensor, axis: usize, start: usize, take: usize) -> Tensor {
    let (outer, len, inner) = axis_split(t.shape(), axis);
    assert!(start + take <= len, "narrow {start}+{take} beyond axis length {len}");
    let mut data = Vec::with_capacity(outer * take * inner);
    for o in 0..outer {
        let base = (o * len + start) * inner;
        data.extend_from_slice(&t.data()[base..base + take * inner]);
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = take;
    Tensor::from_parts(shape, data)
}

/// Logistic function kept strictly inside (0, 1) for every finite input.
pub fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub fn softplus_scalar(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// Elementwise logistic function.
pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Row-wise softmax over the last axis, shifted by the row maximum.
pub fn softmax_rows(scores: &Tensor) -> Tensor {
    let n = *scores.shape().last().expect("softmax of a scalar");
    let mut data = scores.data().to_vec();
    for row in data.chunks_mut(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            z += *x;
        }
        row.iter_mut().for_each(|x| *x /= z);
    }
    Tensor::from_parts(scores.shape().to_vec(), data)
}

/// Pearson correlation of two equally long sequences.
///
/// Returns 0.0 when either input has a population standard deviation below
/// [`DEGENERATE_STD`].
pub fn pearson_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(contract(format!("correlation length mismatch {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(contract("correlation needs at least 2 elements"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if (saa / n).sqrt() < DEGENERATE_STD || (sbb / n).sqrt() < DEGENERATE_STD {
        return Ok(0.0);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let v = self.value().map(f);
        self.tape.push(v, op)
    }

    fn binary(self, other: Var<'t>, f: impl Fn(f64, f64) -> f64, op: Op) -> Var<'t> {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        let (a, b) = (self.value(), other.value());
        let out = if a.shape() == b.shape() {
            a.zip_map(&b, f).expect("same shape")
        } else {
            let shape = broadcast_shapes(a.shape(), b.shape()).unwrap_or_else(|e| panic!("{e}"));
            let ma = broadcast_map(a.shape(), &shape);
            let mb = broadcast_map(b.shape(), &shape);
            let data = ma.iter().zip(&mb).map(|(&i, &j)| f(a.data()[i], b.data()[j])).collect();
            Tensor::from_parts(shape, data)
        };
        self.tape.push(out, op)
    }

    pub fn add(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, |a, b| a + b, Op::Add(self.id, o.id))
    }

    pub fn sub(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, |a, b| a - b, Op::Sub(self.id, o.id))
    }

    pub fn mul(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, |a, b| a * b, Op::Mul(self.id, o.id))
    }

    pub fn div(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, |a, b| a / b, Op::Div(self.id, o.id))
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(|x| -x, Op::Neg(self.id))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(|x| x * c, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(|x| x + c, Op::Offset(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(f64::exp, Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(f64::ln, Op::Log(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid_scalar, Op::Sigmoid(self.id))
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(softplus_scalar, Op::Softplus(self.id))
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(f64::abs, Op::Abs(self.id))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(f64::sqrt, Op::Sqrt(self.id))
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|x| x * x, Op::Square(self.id))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(move |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(self.id, slope))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(move |x| x.clamp(lo, hi), Op::Clamp(self.id, lo, hi))
    }

    /// `[.., m, k] x [k, n] -> [.., m, n]`.
    pub fn matmul(self, w: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), w.value());
        assert_eq!(b.rank(), 2, "matmul rhs must be rank 2, got {:?}", b.shape());
        let k = b.shape()[0];
        let n = b.shape()[1];
        assert_eq!(*a.shape().last().unwrap(), k, "matmul {:?} x {:?}", a.shape(), b.shape());
        let m = a.len() / k;
        let mut out = vec![0.0; m * n];
        gemm_acc(a.data(), b.data(), &mut out, m, k, n);
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        self.tape.push(Tensor::from_parts(shape, out), Op::MatMul(self.id, w.id))
    }

    /// `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn bmm(self, o: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), o.value());
        assert!(a.rank() == 3 && b.rank() == 3, "bmm needs rank-3 operands");
        let (bs, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        assert!(b.shape()[0] == bs && b.shape()[1] == k, "bmm {:?} x {:?}", a.shape(), b.shape());
        let n = b.shape()[2];
        let mut out = vec![0.0; bs * m * n];
        for i in 0..bs {
            gemm_acc(
                &a.data()[i * m * k..(i + 1) * m * k],
                &b.data()[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        self.tape.push(Tensor::from_parts(vec![bs, m, n], out), Op::BatchMatMul(self.id, o.id))
    }

    pub fn transpose_last2(self) -> Var<'t> {
        let v = transpose_last2(&self.value());
        self.tape.push(v, Op::TransposeLast2(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = self.value().reshape(shape).unwrap_or_else(|e| panic!("{e}"));
        self.tape.push(v, Op::Reshape(self.id))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().sum();
        self.tape.push(Tensor::scalar(s), Op::SumAll(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Var<'t> {
        let v = self.value();
        let (outer, len, inner) = axis_split(v.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += v.data()[(o * len + l) * inner + i];
                }
            }
        }
        let mut shape = v.shape().to_vec();
        shape.remove(axis);
        self.tape.push(Tensor::from_parts(shape, data), Op::SumAxis(self.id, axis))
    }

    pub fn mean_axis(self, axis: usize) -> Var<'t> {
        let len = self.value().shape()[axis] as f64;
        self.sum_axis(axis).scale(1.0 / len)
    }

    pub fn softmax_last(self) -> Var<'t> {
        let v = softmax_rows(&self.value());
        self.tape.push(v, Op::SoftmaxLast(self.id))
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Var<'t> {
        let tape = parts[0].tape;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            assert_eq!(s.len(), base.len(), "concat rank mismatch");
            for (ax, (&x, &y)) in s.iter().zip(&base).enumerate() {
                assert!(ax == axis || x == y, "concat shape {s:?} vs {base:?}");
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis];
                data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        tape.push(Tensor::from_parts(shape, data), Op::Concat(parts.iter().map(|p| p.id).collect(), axis))
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'t> {
        let v = narrow_tensor(&self.value(), axis, start, len);
        self.tape.push(v, Op::Narrow { src: self.id, axis, start })
    }

    /// Causal unfold of `[n, l, c]` into `[n, l, k*c]`; position `t` sees
    /// steps `t-k+1..=t`, zero-padded on the left.
    pub fn unfold_causal(self, k: usize) -> Var<'t> {
        let s = self.value();
        assert_eq!(s.rank(), 3, "unfold needs [n, l, c]");
        let (n, l, c) = (s.shape()[0], s.shape()[1], s.shape()[2]);
        let mut data = vec![0.0; n * l * k * c];
        for b in 0..n {
            for t in 0..l {
                for j in 0..k {
                    let src_t = t as isize - (k as isize - 1) + j as isize;
                    if src_t < 0 {
                        continue;
                    }
                    let src = (b * l + src_t as usize) * c;
                    let dst = (b * l + t) * (k * c) + j * c;
                    data[dst..dst + c].copy_from_slice(&s.data()[src..src + c]);
                }
            }
        }
        self.tape.push(Tensor::from_parts(vec![n, l, k * c], data), Op::Unfold(self.id, k))
    }

    /// Pearson correlation of two equally sized vars (flattened).
    ///
    /// Degenerate inputs (standard deviation below [`DEGENERATE_STD`]) give a
    /// constant 0 with no gradient.
    pub fn pearson(self, other: Var<'t>) -> Var<'t> {
        let n = self.value().len();
        assert_eq!(n, other.value().len(), "correlation length mismatch");
        let a = self.reshape(&[n]);
        let b = other.reshape(&[n]);
        let da = a.sub(a.mean());
        let db = b.sub(b.mean());
        let saa = da.square().sum();
        let sbb = db.square().sum();
        let nf = n as f64;
        if (saa.item() / nf).sqrt() < DEGENERATE_STD || (sbb.item() / nf).sqrt() < DEGENERATE_STD {
            return self.tape.scalar(0.0);
        }
        da.mul(db).sum().div(saa.mul(sbb).sqrt())
    }
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Var<'t>) -> Var<'t> {
        Var::add(self, o)
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Var<'t>) -> Var<'t> {
        Var::sub(self, o)
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Var<'t>) -> Var<'t> {
        Var::mul(self, o)
    }
}

impl<'t> ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Var<'t>) -> Var<'t> {
        Var::div(self, o)
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        Var::neg(self)
    }
}
