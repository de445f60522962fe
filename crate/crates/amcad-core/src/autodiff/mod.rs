//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Values are small `f64` vectors stored in one arena; scalars are length-1
//! vectors. The tape is generic over the parameter key type `K` so the
//! gradient store can be keyed by model tensor names. Construction order is
//! topological by design (an op's inputs always precede it), which lets the
//! backward pass run as a single reverse sweep with `split_at_mut`.

pub mod curved;
pub mod engine;

use std::collections::BTreeMap;

pub use engine::{Engine, EvalEngine, TapeEngine};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(u32);

#[derive(Debug, Clone)]
enum Op<K> {
    Input,
    Param(K),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Neg(NodeId),
    Mul(NodeId, NodeId),
    /// vector × scalar broadcast
    Scale(NodeId, NodeId),
    Div(NodeId, NodeId),
    Dot(NodeId, NodeId),
    Sum(NodeId),
    MatVec { w: NodeId, x: NodeId },
    Concat(Vec<NodeId>),
    Mean(Vec<NodeId>),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Atanh(NodeId),
    Tan(NodeId),
    Atan(NodeId),
    Sqrt(NodeId),
    Softmax(NodeId),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    off: u32,
    len: u32,
}

/// Accumulated gradients keyed by parameter. BTreeMap so iteration order is
/// deterministic for clipping and optimizer updates.
#[derive(Debug, Clone, Default)]
pub struct GradStore<K: Ord> {
    grads: BTreeMap<K, Vec<f64>>,
}

impl<K: Ord + Clone> GradStore<K> {
    pub fn new() -> Self {
        GradStore { grads: BTreeMap::new() }
    }

    pub fn accumulate(&mut self, key: K, g: &[f64]) {
        match self.grads.get_mut(&key) {
            Some(acc) => {
                debug_assert_eq!(acc.len(), g.len());
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => {
                self.grads.insert(key, g.to_vec());
            }
        }
    }

    pub fn merge(&mut self, other: GradStore<K>) {
        for (k, g) in other.grads {
            self.accumulate(k, &g);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn get(&self, key: &K) -> Option<&[f64]> {
        self.grads.get(key).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &[f64])> {
        self.grads.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

pub struct Tape<K> {
    vals: Vec<f64>,
    nodes: Vec<Node>,
    ops: Vec<Op<K>>,
}

impl<K: Clone + Ord> Tape<K> {
    pub fn new() -> Self {
        Tape { vals: Vec::new(), nodes: Vec::new(), ops: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let n = self.nodes[id.0 as usize];
        &self.vals[n.off as usize..(n.off + n.len) as usize]
    }

    fn push(&mut self, op: Op<K>, value: Vec<f64>) -> NodeId {
        let off = self.vals.len() as u32;
        let len = value.len() as u32;
        self.vals.extend(value);
        self.nodes.push(Node { off, len });
        self.ops.push(op);
        NodeId((self.nodes.len() - 1) as u32)
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Input, value)
    }

    pub fn param(&mut self, key: K, value: Vec<f64>) -> NodeId {
        self.push(Op::Param(key), value)
    }

    /// Reverse sweep from a scalar output; returns accumulated gradients for
    /// every `Param` leaf reachable from it.
    pub fn backward(&self, output: NodeId) -> GradStore<K> {
        let out = self.nodes[output.0 as usize];
        assert_eq!(out.len, 1, "backward seeds a scalar output");
        let mut adj = vec![0.0; self.vals.len()];
        adj[out.off as usize] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let node = self.nodes[i];
            let off = node.off as usize;
            let len = node.len as usize;
            // Inputs always live strictly before this node in the arena.
            let (lo, hi) = adj.split_at_mut(off);
            let g = &hi[..len];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let val = &self.vals[off..off + len];
            let spans = |id: NodeId| {
                let n = self.nodes[id.0 as usize];
                (n.off as usize, n.len as usize)
            };
            match &self.ops[i] {
                Op::Input | Op::Param(_) => {}
                Op::Add(a, b) => {
                    let (ao, _) = spans(*a);
                    let (bo, _) = spans(*b);
                    for j in 0..len {
                        lo[ao + j] += g[j];
                        lo[bo + j] += g[j];
                    }
                }
                Op::Sub(a, b) => {
                    let (ao, _) = spans(*a);
                    let (bo, _) = spans(*b);
                    for j in 0..len {
                        lo[ao + j] += g[j];
                        lo[bo + j] -= g[j];
                    }
                }
                Op::Neg(a) => {
                    let (ao, _) = spans(*a);
                    for j in 0..len {
                        lo[ao + j] -= g[j];
                    }
                }
                Op::Mul(a, b) => {
                    let (ao, _) = spans(*a);
                    let (bo, _) = spans(*b);
                    for j in 0..len {
                        lo[ao + j] += g[j] * self.vals[bo + j];
                        lo[bo + j] += g[j] * self.vals[ao + j];
                    }
                }
                Op::Scale(v, s) => {
                    let (vo, vl) = spans(*v);
                    let (so, _) = spans(*s);
                    let sval = self.vals[so];
                    let mut acc = 0.0;
                    for j in 0..vl {
                        lo[vo + j] += g[j] * sval;
                        acc += g[j] * self.vals[vo + j];
                    }
                    lo[so] += acc;
                }
                Op::Div(a, b) => {
                    let (ao, _) = spans(*a);
                    let (bo, _) = spans(*b);
                    for j in 0..len {
                        let bv = self.vals[bo + j];
                        lo[ao + j] += g[j] / bv;
                        lo[bo + j] -= g[j] * self.vals[ao + j] / (bv * bv);
                    }
                }
                Op::Dot(a, b) => {
                    let (ao, al) = spans(*a);
                    let (bo, _) = spans(*b);
                    for j in 0..al {
                        lo[ao + j] += g[0] * self.vals[bo + j];
                        lo[bo + j] += g[0] * self.vals[ao + j];
                    }
                }
                Op::Sum(a) => {
                    let (ao, al) = spans(*a);
                    for j in 0..al {
                        lo[ao + j] += g[0];
                    }
                }
                Op::MatVec { w, x } => {
                    let (wo, _) = spans(*w);
                    let (xo, xl) = spans(*x);
                    let (rows, cols) = (len, xl);
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            lo[wo + r * cols + c] += gr * self.vals[xo + c];
                            lo[xo + c] += gr * self.vals[wo + r * cols + c];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let (po, pl) = spans(*p);
                        for j in 0..pl {
                            lo[po + j] += g[at + j];
                        }
                        at += pl;
                    }
                }
                Op::Mean(parts) => {
                    let inv = 1.0 / parts.len() as f64;
                    for p in parts {
                        let (po, pl) = spans(*p);
                        for j in 0..pl.min(len) {
                            lo[po + j] += g[j] * inv;
                        }
                    }
                }
                Op::Relu(a) => {
                    let (ao, _) = spans(*a);
                    for j in 0..len {
                        if self.vals[ao + j] > 0.0 {
                            lo[ao + j] += g[j];
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let (ao, _) = spans(*a);
                    for j in 0..len {
                        let y = val[j];
                        lo[ao + j] += g[j] * y * (1.0 - y);
                    }
                }
                Op::Tanh(a) => {
                    let (ao, _) = spans(*a);
                    for j in 0..len {
                        let y = val[j];
                        lo[ao + j] += g[j] * (1.0 - y * y);
                    }
                }
                Op::Atanh(a) => {
                    let (ao, _) = spans(*a);
                    for j in 0..len {
                        let x = self.vals[ao + j];
                        lo[ao + j] += g[j] / (1.0 - x * x);
                    }
                }
                Op::Tan(a) => {
                    let (ao, _) = spans(*a);
                    for j in 0..len {
                        let y = val[j];
                        lo[ao + j] += g[j] * (1.0 + y * y);
                    }
                }
                Op::Atan(a) => {
                    let (ao, _) = spans(*a);
                    for j in 0..len {
                        let x = self.vals[ao + j];
                        lo[ao + j] += g[j] / (1.0 + x * x);
                    }
                }
                Op::Sqrt(a) => {
                    let (ao, _) = spans(*a);
                    for j in 0..len {
                        lo[ao + j] += g[j] / (2.0 * val[j]);
                    }
                }
                Op::Softmax(a) => {
                    let (ao, _) = spans(*a);
                    let gy: f64 = (0..len).map(|j| g[j] * val[j]).sum();
                    for j in 0..len {
                        lo[ao + j] += val[j] * (g[j] - gy);
                    }
                }
            }
        }

        let mut store = GradStore::new();
        for (i, op) in self.ops.iter().enumerate() {
            if let Op::Param(k) = op {
                let n = self.nodes[i];
                let g = &adj[n.off as usize..(n.off + n.len) as usize];
                store.accumulate(k.clone(), g);
            }
        }
        store
    }
}

impl<K: Clone + Ord> Default for Tape<K> {
    fn default() -> Self {
        Self::new()
    }
}
