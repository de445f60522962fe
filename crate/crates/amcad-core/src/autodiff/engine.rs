//! A numeric engine abstraction with two implementations: `EvalEngine`
//! computes plain `f64` values, `TapeEngine` records the same computation
//! onto a [`Tape`](super::Tape) for reverse-mode gradients. The model
//! forward pass is written once, generic over this trait, so the trained
//! path and the inference path cannot drift apart.

use std::collections::HashMap;

use super::{NodeId, Op, Tape};
use crate::linalg;

pub trait Engine {
    /// Parameter key type gradients are keyed by.
    type Key;
    type Val: Clone;

    fn constant(&mut self, data: Vec<f64>) -> Self::Val;
    /// A parameter leaf. Non-trainable parameters record as plain inputs so
    /// no gradient accumulates for them.
    fn param(&mut self, key: Self::Key, data: &[f64], trainable: bool) -> Self::Val;
    /// Current numeric value; used for data-dependent branches (norm guards,
    /// curvature sign) at record time.
    fn val<'a>(&'a self, v: &'a Self::Val) -> &'a [f64];

    fn add(&mut self, a: &Self::Val, b: &Self::Val) -> Self::Val;
    fn sub(&mut self, a: &Self::Val, b: &Self::Val) -> Self::Val;
    fn neg(&mut self, a: &Self::Val) -> Self::Val;
    fn mul(&mut self, a: &Self::Val, b: &Self::Val) -> Self::Val;
    /// vector × scalar broadcast
    fn scale(&mut self, v: &Self::Val, s: &Self::Val) -> Self::Val;
    fn div(&mut self, a: &Self::Val, b: &Self::Val) -> Self::Val;
    fn dot(&mut self, a: &Self::Val, b: &Self::Val) -> Self::Val;
    fn sum(&mut self, a: &Self::Val) -> Self::Val;
    fn matvec(&mut self, w: &Self::Val, rows: usize, cols: usize, x: &Self::Val) -> Self::Val;
    fn concat(&mut self, parts: &[Self::Val]) -> Self::Val;
    fn mean(&mut self, parts: &[Self::Val]) -> Self::Val;
    fn relu(&mut self, a: &Self::Val) -> Self::Val;
    fn sigmoid(&mut self, a: &Self::Val) -> Self::Val;
    fn tanh(&mut self, a: &Self::Val) -> Self::Val;
    fn atanh(&mut self, a: &Self::Val) -> Self::Val;
    fn tan(&mut self, a: &Self::Val) -> Self::Val;
    fn atan(&mut self, a: &Self::Val) -> Self::Val;
    fn sqrt(&mut self, a: &Self::Val) -> Self::Val;
    fn softmax(&mut self, a: &Self::Val) -> Self::Val;

    fn scalar(&mut self, c: f64) -> Self::Val {
        self.constant(vec![c])
    }

    fn zeros(&mut self, d: usize) -> Self::Val {
        self.constant(vec![0.0; d])
    }

    fn scalar_value(&self, v: &Self::Val) -> f64 {
        self.val(v)[0]
    }
}

// Shared forward kernels keep both engines numerically identical.
fn k_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    linalg::add(a, b)
}
fn k_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    linalg::sub(a, b)
}
fn k_neg(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| -x).collect()
}
fn k_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}
fn k_scale(v: &[f64], s: f64) -> Vec<f64> {
    linalg::scale(v, s)
}
fn k_div(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x / y).collect()
}
fn k_dot(a: &[f64], b: &[f64]) -> Vec<f64> {
    vec![linalg::dot(a, b)]
}
fn k_sum(a: &[f64]) -> Vec<f64> {
    vec![a.iter().sum()]
}
fn k_matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    linalg::matvec(w, rows, cols, x)
}
fn k_concat(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend_from_slice(p);
    }
    out
}
fn k_mean(parts: &[&[f64]]) -> Vec<f64> {
    let len = parts[0].len();
    let mut out = vec![0.0; len];
    for p in parts {
        for (o, v) in out.iter_mut().zip(*p) {
            *o += v;
        }
    }
    let inv = 1.0 / parts.len() as f64;
    for o in out.iter_mut() {
        *o *= inv;
    }
    out
}
fn k_map(a: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    a.iter().map(|&x| f(x)).collect()
}

/// Plain `f64` evaluation. The key type is phantom: it only fixes which
/// parameter keys the shared forward code addresses.
#[derive(Debug)]
pub struct EvalEngine<K> {
    _key: std::marker::PhantomData<K>,
}

impl<K> EvalEngine<K> {
    pub fn new() -> Self {
        EvalEngine { _key: std::marker::PhantomData }
    }
}

impl<K> Default for EvalEngine<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> Engine for EvalEngine<K> {
    type Key = K;
    type Val = Vec<f64>;

    fn constant(&mut self, data: Vec<f64>) -> Vec<f64> {
        data
    }
    fn param(&mut self, _key: K, data: &[f64], _trainable: bool) -> Vec<f64> {
        data.to_vec()
    }
    fn val<'a>(&'a self, v: &'a Vec<f64>) -> &'a [f64] {
        v
    }
    fn add(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        k_add(a, b)
    }
    fn sub(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        k_sub(a, b)
    }
    fn neg(&mut self, a: &Vec<f64>) -> Vec<f64> {
        k_neg(a)
    }
    fn mul(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        k_mul(a, b)
    }
    fn scale(&mut self, v: &Vec<f64>, s: &Vec<f64>) -> Vec<f64> {
        k_scale(v, s[0])
    }
    fn div(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        k_div(a, b)
    }
    fn dot(&mut self, a: &Vec<f64>, b: &Vec<f64>) -> Vec<f64> {
        k_dot(a, b)
    }
    fn sum(&mut self, a: &Vec<f64>) -> Vec<f64> {
        k_sum(a)
    }
    fn matvec(&mut self, w: &Vec<f64>, rows: usize, cols: usize, x: &Vec<f64>) -> Vec<f64> {
        k_matvec(w, rows, cols, x)
    }
    fn concat(&mut self, parts: &[Vec<f64>]) -> Vec<f64> {
        let refs: Vec<&[f64]> = parts.iter().map(|p| p.as_slice()).collect();
        k_concat(&refs)
    }
    fn mean(&mut self, parts: &[Vec<f64>]) -> Vec<f64> {
        let refs: Vec<&[f64]> = parts.iter().map(|p| p.as_slice()).collect();
        k_mean(&refs)
    }
    fn relu(&mut self, a: &Vec<f64>) -> Vec<f64> {
        k_map(a, |x| x.max(0.0))
    }
    fn sigmoid(&mut self, a: &Vec<f64>) -> Vec<f64> {
        k_map(a, linalg::sigmoid)
    }
    fn tanh(&mut self, a: &Vec<f64>) -> Vec<f64> {
        k_map(a, f64::tanh)
    }
    fn atanh(&mut self, a: &Vec<f64>) -> Vec<f64> {
        k_map(a, f64::atanh)
    }
    fn tan(&mut self, a: &Vec<f64>) -> Vec<f64> {
        k_map(a, f64::tan)
    }
    fn atan(&mut self, a: &Vec<f64>) -> Vec<f64> {
        k_map(a, f64::atan)
    }
    fn sqrt(&mut self, a: &Vec<f64>) -> Vec<f64> {
        k_map(a, f64::sqrt)
    }
    fn softmax(&mut self, a: &Vec<f64>) -> Vec<f64> {
        linalg::softmax(a)
    }
}

/// Records every operation onto a tape for a later backward sweep.
/// Parameter leaves are cached so repeated reads of the same tensor share
/// one node and gradients accumulate naturally.
pub struct TapeEngine<K: Clone + Ord + std::hash::Hash> {
    pub tape: Tape<K>,
    leaf_cache: HashMap<K, NodeId>,
}

impl<K: Clone + Ord + std::hash::Hash> TapeEngine<K> {
    pub fn new() -> Self {
        TapeEngine { tape: Tape::new(), leaf_cache: HashMap::new() }
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: impl Fn(NodeId) -> Op<K>) -> NodeId {
        let value = k_map(self.tape.value(a), f);
        self.tape.push(op(a), value)
    }
}

impl<K: Clone + Ord + std::hash::Hash> Default for TapeEngine<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K: Clone + Ord + std::hash::Hash> Engine for TapeEngine<K> {
    type Key = K;
    type Val = NodeId;

    fn constant(&mut self, data: Vec<f64>) -> NodeId {
        self.tape.input(data)
    }
    fn param(&mut self, key: K, data: &[f64], trainable: bool) -> NodeId {
        if !trainable {
            return self.tape.input(data.to_vec());
        }
        if let Some(&id) = self.leaf_cache.get(&key) {
            return id;
        }
        let id = self.tape.param(key.clone(), data.to_vec());
        self.leaf_cache.insert(key, id);
        id
    }
    fn val<'a>(&'a self, v: &'a NodeId) -> &'a [f64] {
        self.tape.value(*v)
    }
    fn add(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let value = k_add(self.tape.value(*a), self.tape.value(*b));
        self.tape.push(Op::Add(*a, *b), value)
    }
    fn sub(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let value = k_sub(self.tape.value(*a), self.tape.value(*b));
        self.tape.push(Op::Sub(*a, *b), value)
    }
    fn neg(&mut self, a: &NodeId) -> NodeId {
        let value = k_neg(self.tape.value(*a));
        self.tape.push(Op::Neg(*a), value)
    }
    fn mul(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let value = k_mul(self.tape.value(*a), self.tape.value(*b));
        self.tape.push(Op::Mul(*a, *b), value)
    }
    fn scale(&mut self, v: &NodeId, s: &NodeId) -> NodeId {
        let value = k_scale(self.tape.value(*v), self.tape.value(*s)[0]);
        self.tape.push(Op::Scale(*v, *s), value)
    }
    fn div(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let value = k_div(self.tape.value(*a), self.tape.value(*b));
        self.tape.push(Op::Div(*a, *b), value)
    }
    fn dot(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let value = k_dot(self.tape.value(*a), self.tape.value(*b));
        self.tape.push(Op::Dot(*a, *b), value)
    }
    fn sum(&mut self, a: &NodeId) -> NodeId {
        let value = k_sum(self.tape.value(*a));
        self.tape.push(Op::Sum(*a), value)
    }
    fn matvec(&mut self, w: &NodeId, rows: usize, cols: usize, x: &NodeId) -> NodeId {
        let value = k_matvec(self.tape.value(*w), rows, cols, self.tape.value(*x));
        self.tape.push(Op::MatVec { w: *w, x: *x }, value)
    }
    fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let refs: Vec<&[f64]> = parts.iter().map(|p| self.tape.value(*p)).collect();
        let value = k_concat(&refs);
        self.tape.push(Op::Concat(parts.to_vec()), value)
    }
    fn mean(&mut self, parts: &[NodeId]) -> NodeId {
        let refs: Vec<&[f64]> = parts.iter().map(|p| self.tape.value(*p)).collect();
        let value = k_mean(&refs);
        self.tape.push(Op::Mean(parts.to_vec()), value)
    }
    fn relu(&mut self, a: &NodeId) -> NodeId {
        self.unary(*a, |x| x.max(0.0), Op::Relu)
    }
    fn sigmoid(&mut self, a: &NodeId) -> NodeId {
        self.unary(*a, linalg::sigmoid, Op::Sigmoid)
    }
    fn tanh(&mut self, a: &NodeId) -> NodeId {
        self.unary(*a, f64::tanh, Op::Tanh)
    }
    fn atanh(&mut self, a: &NodeId) -> NodeId {
        self.unary(*a, f64::atanh, Op::Atanh)
    }
    fn tan(&mut self, a: &NodeId) -> NodeId {
        self.unary(*a, f64::tan, Op::Tan)
    }
    fn atan(&mut self, a: &NodeId) -> NodeId {
        self.unary(*a, f64::atan, Op::Atan)
    }
    fn sqrt(&mut self, a: &NodeId) -> NodeId {
        self.unary(*a, f64::sqrt, Op::Sqrt)
    }
    fn softmax(&mut self, a: &NodeId) -> NodeId {
        let value = linalg::softmax(self.tape.value(*a));
        self.tape.push(Op::Softmax(*a), value)
    }
}
