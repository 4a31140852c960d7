//! Per-sample reverse-mode gradients on the current DAG, batch aggregation
//! and plain gradient-descent updates.
//!
//! Per-sample cost is `C^m = 1/2 * sum_y (a_y - target_y)^2`. The batch
//! gradient of a parameter is the mean of its per-sample gradients.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::forward::{forward_pass, sigma1_prime, Activations};
use crate::network::{EdgeId, Network, NodeId, NodeKind, Term};

/// Activations plus per-sample deltas and edge gradients for one batch.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    act: Activations,
    delta: [Vec<f64>; 2],
    edge_ids: Vec<EdgeId>,
    edge_pos: Vec<usize>,
    edge_grad: Vec<f64>,
    cost: Vec<f64>,
    errors: Vec<f64>,
    n_outputs: usize,
}

impl BatchTrace {
    pub fn activations(&self) -> &Activations {
        &self.act
    }

    pub fn samples(&self) -> usize {
        self.act.samples()
    }

    pub fn covers_node(&self, id: NodeId) -> bool {
        self.act.covers(id)
    }

    /// `dC^m/dz` of one term of `id`, for every sample.
    pub fn delta(&self, id: NodeId, term: Term) -> &[f64] {
        let n = self.samples();
        &self.delta[term.index()][id.index() * n..(id.index() + 1) * n]
    }

    /// Edges that existed when the trace was taken, in id order.
    pub fn edge_ids(&self) -> &[EdgeId] {
        &self.edge_ids
    }

    /// `dC^m/dw` for every sample, or `None` if the edge is newer than the trace.
    pub fn edge_grad(&self, id: EdgeId) -> Option<&[f64]> {
        let pos = *self.edge_pos.get(id.index())?;
        if pos == usize::MAX {
            return None;
        }
        let n = self.samples();
        Some(&self.edge_grad[pos * n..(pos + 1) * n])
    }

    pub(crate) fn edge_grad_mut(&mut self, id: EdgeId) -> Option<&mut [f64]> {
        let pos = *self.edge_pos.get(id.index())?;
        if pos == usize::MAX {
            return None;
        }
        let n = self.samples();
        Some(&mut self.edge_grad[pos * n..(pos + 1) * n])
    }

    /// Per-sample cost `1/2 * sum_y (a_y - target_y)^2`.
    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    /// Signed output errors `a - target`, sample-major (`samples x outputs`).
    pub fn output_errors(&self) -> &[f64] {
        &self.errors
    }

    /// Mean over samples and outputs of the squared output error.
    pub fn mean_squared_error(&self) -> f64 {
        if self.errors.is_empty() {
            return 0.0;
        }
        self.errors.iter().map(|e| e * e).sum::<f64>() / self.errors.len() as f64
    }

    /// Mean absolute error of each output over the batch.
    pub fn mean_abs_error_per_output(&self) -> Vec<f64> {
        let n = self.samples().max(1);
        let mut out = vec![0.0; self.n_outputs];
        for row in self.errors.chunks(self.n_outputs.max(1)) {
            for (o, e) in out.iter_mut().zip(row) {
                *o += e.abs();
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        out
    }
}

/// Runs reverse-mode differentiation over `act`, which must come from
/// [`forward_pass`] on the same network. Output errors with magnitude below
/// `mismatch_floor` contribute no gradient (pass 0 to disable).
pub fn backward_pass(
    net: &Network,
    act: Activations,
    targets: ArrayView2<f64>,
    mismatch_floor: f64,
) -> Result<BatchTrace> {
    let n = act.samples();
    let expected = (n, net.outputs().len());
    if targets.dim() != expected {
        return Err(Error::TargetShape {
            expected,
            got: targets.dim(),
        });
    }
    let width = act.width();
    if width < net.node_capacity() {
        return Err(Error::Document("activations are older than the network".into()));
    }
    let mut d_state = vec![0.0; n * width];
    let mut delta = [vec![0.0; n * width], vec![0.0; n * width]];
    let mut cost = vec![0.0; n];
    let mut errors = vec![0.0; n * net.outputs().len()];
    let n_out = net.outputs().len();

    for (j, &y) in net.outputs().iter().enumerate() {
        let a = act.state(y);
        for m in 0..n {
            let err = a[m] - targets[[m, j]];
            errors[m * n_out + j] = err;
            cost[m] += 0.5 * err * err;
            if err.abs() >= mismatch_floor {
                d_state[y.index() * n + m] += err;
            }
        }
    }

    for &id in net.topo_order().iter().rev() {
        let node = net.node(id)?;
        let r = id.index() * n..(id.index() + 1) * n;
        let da = &d_state[r.clone()];
        match node.kind {
            NodeKind::Input => delta[0][r.clone()].copy_from_slice(da),
            NodeKind::Output => {
                let a = act.state(id);
                for m in 0..n {
                    delta[0][r.start + m] = da[m] * a[m] * (1.0 - a[m]);
                }
            }
            NodeKind::Modulatory => {
                let z0 = act.activation(id, Term::Zero);
                let a1 = act.term_state(id, Term::One);
                for m in 0..n {
                    delta[0][r.start + m] = da[m] * a1[m];
                    delta[1][r.start + m] = da[m] * z0[m] * sigma1_prime(node.steepness, a1[m]);
                }
            }
        }
        for &term in node.terms() {
            for &e in net.in_edges(id, term) {
                let edge = net.edge(e)?;
                let w = edge.weight;
                let s = edge.src.index() * n;
                for m in 0..n {
                    d_state[s + m] += w * delta[term.index()][r.start + m];
                }
            }
        }
        if node
            .terms()
            .iter()
            .any(|t| delta[t.index()][r.clone()].iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFiniteNode(id));
        }
    }

    let edge_ids: Vec<EdgeId> = net.edges().map(|e| e.id).collect();
    let mut edge_pos = vec![usize::MAX; net.edge_capacity()];
    let mut edge_grad = vec![0.0; edge_ids.len() * n];
    for (pos, &e) in edge_ids.iter().enumerate() {
        edge_pos[e.index()] = pos;
        let edge = net.edge(e)?;
        let a = act.state(edge.src);
        let d = &delta[edge.term.index()][edge.dst.index() * n..(edge.dst.index() + 1) * n];
        let g = &mut edge_grad[pos * n..(pos + 1) * n];
        for m in 0..n {
            g[m] = a[m] * d[m];
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEdge(e));
        }
    }

    Ok(BatchTrace {
        act,
        delta,
        edge_ids,
        edge_pos,
        edge_grad,
        cost,
        errors,
        n_outputs: n_out,
    })
}

/// Forward then backward on one batch.
pub fn trace_batch(
    net: &Network,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    mismatch_floor: f64,
) -> Result<BatchTrace> {
    let act = forward_pass(net, inputs)?;
    backward_pass(net, act, targets, mismatch_floor)
}

/// Batch mean of per-sample values, split by sign. Both directional parts are
/// divided by the full batch size, so `net == positive + negative`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Directional {
    pub net: f64,
    pub positive: f64,
    pub negative: f64,
}

impl Directional {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Directional::default();
        }
        let (mut pos, mut neg) = (0.0, 0.0);
        for &v in values {
            if v > 0.0 {
                pos += v;
            } else {
                neg += v;
            }
        }
        let n = values.len() as f64;
        Directional {
            net: (pos + neg) / n,
            positive: pos / n,
            negative: neg / n,
        }
    }
}

/// Batch-aggregated gradients for every edge and node term in a trace.
#[derive(Debug, Clone)]
pub struct NetGradients {
    edges: Vec<(EdgeId, Directional)>,
    edge_pos: Vec<usize>,
    nodes: Vec<[Directional; 2]>,
}

impl NetGradients {
    pub fn from_trace(net: &Network, trace: &BatchTrace) -> Self {
        let edges: Vec<(EdgeId, Directional)> = trace
            .edge_ids()
            .iter()
            .map(|&e| (e, Directional::of(trace.edge_grad(e).expect("traced edge"))))
            .collect();
        let mut edge_pos = vec![usize::MAX; trace.edge_pos.len()];
        for (i, (e, _)) in edges.iter().enumerate() {
            edge_pos[e.index()] = i;
        }
        let mut nodes = vec![[Directional::default(); 2]; trace.act.width()];
        for node in net.nodes() {
            if !trace.covers_node(node.id) {
                continue;
            }
            for &t in node.terms() {
                nodes[node.id.index()][t.index()] = Directional::of(trace.delta(node.id, t));
            }
        }
        NetGradients { edges, edge_pos, nodes }
    }

    pub fn edge(&self, id: EdgeId) -> Option<Directional> {
        let pos = *self.edge_pos.get(id.index())?;
        (pos != usize::MAX).then(|| self.edges[pos].1)
    }

    pub fn node(&self, id: NodeId, term: Term) -> Option<Directional> {
        self.nodes.get(id.index()).map(|t| t[term.index()])
    }

    pub fn edges(&self) -> &[(EdgeId, Directional)] {
        &self.edges
    }
}

/// `w <- w - gamma * dC/dw` for every traced edge; output biases and
/// modulatory term-1 biases follow their net deltas. Term-0 biases of
/// modulatory nodes and steepness are left alone.
pub fn apply_updates(net: &mut Network, grads: &NetGradients, gamma: f64) -> Result<()> {
    for &(e, g) in grads.edges() {
        if let Ok(edge) = net.edge_mut(e) {
            let w = edge.weight - gamma * g.net;
            if !w.is_finite() {
                return Err(Error::NonFiniteEdge(e));
            }
            edge.weight = w;
        }
    }
    for node in net.nodes_mut() {
        let term = match node.kind {
            NodeKind::Input => continue,
            NodeKind::Output => Term::Zero,
            NodeKind::Modulatory => Term::One,
        };
        let Some(g) = grads.node(node.id, term) else { continue };
        let bias = match term {
            Term::Zero => &mut node.bias0,
            Term::One => &mut node.bias1,
        };
        *bias -= gamma * g.net;
        if !bias.is_finite() {
            return Err(Error::NonFiniteNode(node.id));
        }
    }
    Ok(())
}

/// An adaptable parameter of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Weight(EdgeId),
    Bias(NodeId, Term),
}

/// Every adaptable parameter: all edge weights, output biases and modulatory
/// term-1 biases.
pub fn adaptable_params(net: &Network) -> Vec<Param> {
    let mut params: Vec<Param> = net.edges().map(|e| Param::Weight(e.id)).collect();
    for node in net.nodes() {
        match node.kind {
            NodeKind::Output => params.push(Param::Bias(node.id, Term::Zero)),
            NodeKind::Modulatory => params.push(Param::Bias(node.id, Term::One)),
            NodeKind::Input => {}
        }
    }
    params
}

fn param_mut(net: &mut Network, p: Param) -> Result<&mut f64> {
    Ok(match p {
        Param::Weight(e) => &mut net.edge_mut(e)?.weight,
        Param::Bias(n, Term::Zero) => &mut net.node_mut(n)?.bias0,
        Param::Bias(n, Term::One) => &mut net.node_mut(n)?.bias1,
    })
}

/// Analytic batch gradient of a parameter from aggregated trace values.
pub fn analytic_gradient(grads: &NetGradients, p: Param) -> Option<f64> {
    match p {
        Param::Weight(e) => grads.edge(e).map(|d| d.net),
        Param::Bias(n, t) => grads.node(n, t).map(|d| d.net),
    }
}

fn batch_cost(net: &Network, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
    let act = forward_pass(net, inputs)?;
    let out = act.outputs(net);
    let total: f64 = out
        .iter()
        .zip(targets.iter())
        .map(|(a, t)| 0.5 * (a - t) * (a - t))
        .sum();
    Ok(total / inputs.nrows() as f64)
}

/// Central differences `(C(p+h) - C(p-h)) / 2h` of the batch-mean cost for
/// every adaptable parameter. Uses only forward evaluation, never the
/// backward pass, and has no acceptable-mismatch cut-off.
pub fn finite_difference_oracle(
    net: &Network,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    h: f64,
) -> Result<Vec<(Param, f64)>> {
    if h <= 0.0 {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let mut out = Vec::new();
    for p in adaptable_params(net) {
        let mut plus = net.clone();
        *param_mut(&mut plus, p)? += h;
        let mut minus = net.clone();
        *param_mut(&mut minus, p)? -= h;
        let g = (batch_cost(&plus, inputs, targets)? - batch_cost(&minus, inputs, targets)?) / (2.0 * h);
        out.push((p, g));
    }
    Ok(out)
}
