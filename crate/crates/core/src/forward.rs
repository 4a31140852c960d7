//! Batch forward evaluation.
//!
//! Input nodes pass their raw value through, output nodes apply the standard
//! logistic, and a modulatory node multiplies its linear term 0 with
//! `sigma1(z1) = 4 / (1 + exp(-K z1)) - 1`, which lies in `(-1, 3)` and is
//! exactly 1 at `z1 = 0`.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::network::{Network, NodeId, NodeKind, Term};

#[inline]
pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
pub fn sigma1(steepness: f64, z: f64) -> f64 {
    4.0 / (1.0 + (-steepness * z).exp()) - 1.0
}

/// Derivative of `sigma1` with respect to `z`, written in terms of its value.
#[inline]
pub fn sigma1_prime(steepness: f64, value: f64) -> f64 {
    steepness * (value + 1.0) * (3.0 - value) / 4.0
}

/// Per-sample node quantities for one batch, stored node-major so that a
/// node's values over the batch form one contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    samples: usize,
    width: usize,
    state: Vec<f64>,
    z0: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
}

impl Activations {
    fn zeros(samples: usize, width: usize) -> Self {
        let len = samples * width;
        Activations {
            samples,
            width,
            state: vec![0.0; len],
            z0: vec![0.0; len],
            z1: vec![0.0; len],
            a1: vec![1.0; len],
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Number of node slots covered. Nodes created after the pass are absent.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn covers(&self, id: NodeId) -> bool {
        id.index() < self.width
    }

    #[inline]
    fn range(&self, id: NodeId) -> std::ops::Range<usize> {
        let s = id.index() * self.samples;
        s..s + self.samples
    }

    /// Node state `a` for every sample.
    pub fn state(&self, id: NodeId) -> &[f64] {
        &self.state[self.range(id)]
    }

    /// Term activation `z` (pre-transfer) for every sample.
    pub fn activation(&self, id: NodeId, term: Term) -> &[f64] {
        match term {
            Term::Zero => &self.z0[self.range(id)],
            Term::One => &self.z1[self.range(id)],
        }
    }

    /// Term state: `z0` for term 0 (linear), `sigma1(z1)` for term 1.
    pub fn term_state(&self, id: NodeId, term: Term) -> &[f64] {
        match term {
            Term::Zero => &self.z0[self.range(id)],
            Term::One => &self.a1[self.range(id)],
        }
    }

    /// Output states as a `samples x outputs` matrix.
    pub fn outputs(&self, net: &Network) -> Array2<f64> {
        self.select(net.outputs())
    }

    pub fn select(&self, ids: &[NodeId]) -> Array2<f64> {
        Array2::from_shape_fn((self.samples, ids.len()), |(m, j)| self.state(ids[j])[m])
    }
}

fn accumulate(net: &Network, state: &[f64], samples: usize, id: NodeId, term: Term, bias: f64, acc: &mut [f64]) {
    acc.fill(bias);
    for &e in net.in_edges(id, term) {
        let edge = net.edge(e).expect("indexed edge is live");
        let src = &state[edge.src.index() * samples..(edge.src.index() + 1) * samples];
        let w = edge.weight;
        for (a, s) in acc.iter_mut().zip(src) {
            *a += w * s;
        }
    }
}

/// Evaluates every node for every row of `batch` (rows are samples, columns
/// follow `net.inputs()`).
pub fn forward_pass(net: &Network, batch: ArrayView2<f64>) -> Result<Activations> {
    if batch.ncols() != net.inputs().len() {
        return Err(Error::DimensionMismatch {
            expected: net.inputs().len(),
            got: batch.ncols(),
        });
    }
    let n = batch.nrows();
    let mut act = Activations::zeros(n, net.node_capacity());
    for (col, &id) in net.inputs().iter().enumerate() {
        let r = act.range(id);
        for (dst, v) in act.state[r].iter_mut().zip(batch.column(col)) {
            *dst = *v;
        }
    }

    let mut acc0 = vec![0.0; n];
    let mut acc1 = vec![0.0; n];
    for &id in net.topo_order() {
        let node = net.node(id)?;
        let r = act.range(id);
        match node.kind {
            NodeKind::Input => {
                act.z0[r.clone()].copy_from_slice(&act.state[r.clone()]);
            }
            NodeKind::Output => {
                accumulate(net, &act.state, n, id, Term::Zero, node.bias0, &mut acc0);
                for (m, z) in acc0.iter().enumerate() {
                    act.z0[r.start + m] = *z;
                    act.state[r.start + m] = logistic(*z);
                }
            }
            NodeKind::Modulatory => {
                accumulate(net, &act.state, n, id, Term::Zero, node.bias0, &mut acc0);
                accumulate(net, &act.state, n, id, Term::One, node.bias1, &mut acc1);
                for m in 0..n {
                    let s1 = sigma1(node.steepness, acc1[m]);
                    act.z0[r.start + m] = acc0[m];
                    act.z1[r.start + m] = acc1[m];
                    act.a1[r.start + m] = s1;
                    act.state[r.start + m] = acc0[m] * s1;
                }
            }
        }
        if act.state[r].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteNode(id));
        }
    }
    Ok(act)
}
