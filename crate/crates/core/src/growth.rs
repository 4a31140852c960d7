//! Directed structural adaptation.
//!
//! Each adaptation step runs gradient descent on the existing parameters and
//! then, where the batch-mean gradient of a whole pathway has vanished while
//! individual samples still pull in opposite directions, performs at most one
//! neutral generative process for that pathway:
//!
//! * **edge generation** adds a zero-weight in-edge to a node term, sourced
//!   from the node whose per-sample states best align with the term's deltas;
//! * **edge-node conversion (ENC)** replaces an exhausted edge `i -> j` with a
//!   modulatory node `k`, edges `i -> k` (weight 1) and `k -> j` (the original
//!   weight), and `K = 1/w`. Immediately afterwards the term-1 deltas of `k`
//!   equal the per-sample gradients of the old edge, so conflicting samples can
//!   be separated by modulating `k`.
//!
//! Zero-weight edges past their protection window and dangling hidden nodes
//! are removed by [`destructive_step`].

use ndarray::{s, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::forward_pass;
use crate::grad::{apply_updates, backward_pass, trace_batch, BatchTrace, Directional, NetGradients};
use crate::network::{EdgeId, Network, NodeId, NodeKind, Term};

/// Source scores at or below this are treated as "no useful source".
const SCORE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrowthConfig {
    /// Per-sample deltas and gradients below this magnitude count as zero
    /// for exhaustion checks and total adaptive potential.
    pub delta_min: f64,
    /// Directional-ratio exhaustion test.
    pub r1: f64,
    /// Net gradient relative to weight magnitude below which an edge is exhausted.
    pub r2: f64,
    pub gamma: f64,
    pub refraction_steps: u32,
    pub edge_protection_steps: u64,
    pub node_removal_prob: f64,
    pub k_decay: f64,
    pub zero_weight_noise: f64,
    pub mismatch_floor: f64,
    pub rng_seed: u64,
    /// Probe rows used to audit neutrality of every generative process (0 = off).
    pub audit_samples: usize,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            delta_min: 0.01,
            r1: 5.0,
            r2: 0.1,
            gamma: 2.0,
            refraction_steps: 5,
            edge_protection_steps: 5,
            node_removal_prob: 0.3,
            k_decay: 0.1,
            zero_weight_noise: 0.05,
            mismatch_floor: 0.01,
            rng_seed: 0,
            audit_samples: 16,
        }
    }
}

impl GrowthConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("delta_min", self.delta_min),
            ("r1", self.r1),
            ("r2", self.r2),
            ("gamma", self.gamma),
            ("k_decay", self.k_decay),
            ("zero_weight_noise", self.zero_weight_noise),
            ("mismatch_floor", self.mismatch_floor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, p) in [("node_removal_prob", self.node_removal_prob), ("k_decay", self.k_decay)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// Immediate and total adaptive potential of one edge or node term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ApEntry {
    /// Batch-mean gradient (the immediate AP), unclamped.
    pub net: f64,
    /// `sum_m |g_m|` with `|g_m| < delta_min` counted as zero.
    pub total: f64,
    pub exhausted: bool,
}

impl ApEntry {
    pub fn can_grow(&self) -> bool {
        self.exhausted && self.total > 0.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct ApReport {
    edges: Vec<Option<ApEntry>>,
    nodes: Vec<[Option<ApEntry>; 2]>,
}

impl ApReport {
    /// `None` for edges created after the trace.
    pub fn edge(&self, id: EdgeId) -> Option<ApEntry> {
        self.edges.get(id.index()).copied().flatten()
    }

    pub fn node_term(&self, id: NodeId, term: Term) -> Option<ApEntry> {
        self.nodes.get(id.index()).and_then(|t| t[term.index()])
    }

    /// Total AP over the node's terms. Inputs have no adaptable activation
    /// and always report 0.
    pub fn node_total(&self, net: &Network, id: NodeId) -> f64 {
        match net.node(id) {
            Ok(node) if node.kind != NodeKind::Input => node
                .terms()
                .iter()
                .filter_map(|&t| self.node_term(id, t))
                .map(|e| e.total)
                .sum(),
            _ => 0.0,
        }
    }
}

fn clamp_small(values: &[f64], delta_min: f64) -> Vec<f64> {
    values
        .iter()
        .map(|&v| if v.abs() < delta_min { 0.0 } else { v })
        .collect()
}

/// Directional-ratio test on clamped per-sample values: exhausted when the
/// net mean is small against the batch-mean pull in either direction, or
/// when nothing is left after clamping.
fn ratio_exhausted(values: &[f64], r1: f64) -> bool {
    let d = Directional::of(values);
    let strongest = d.positive.abs().max(d.negative.abs());
    strongest == 0.0 || r1 * d.net.abs() < strongest
}

pub fn compute_ap(net: &Network, trace: &BatchTrace, cfg: &GrowthConfig) -> ApReport {
    let mut report = ApReport {
        edges: vec![None; net.edge_capacity()],
        nodes: vec![[None, None]; net.node_capacity()],
    };
    for &e in trace.edge_ids() {
        let Ok(edge) = net.edge(e) else { continue };
        let raw = trace.edge_grad(e).expect("traced edge");
        let clamped = clamp_small(raw, cfg.delta_min);
        let net_grad = Directional::of(raw).net;
        report.edges[e.index()] = Some(ApEntry {
            net: net_grad,
            total: clamped.iter().map(|v| v.abs()).sum(),
            exhausted: ratio_exhausted(&clamped, cfg.r1) || net_grad.abs() < cfg.r2 * edge.weight.abs(),
        });
    }
    for node in net.nodes() {
        if node.kind == NodeKind::Input || !trace.covers_node(node.id) {
            continue;
        }
        for &t in node.terms() {
            let raw = trace.delta(node.id, t);
            let clamped = clamp_small(raw, cfg.delta_min);
            let edges_done = net
                .in_edges(node.id, t)
                .iter()
                .all(|&e| report.edge(e).is_some_and(|a| a.exhausted));
            report.nodes[node.id.index()][t.index()] = Some(ApEntry {
                net: Directional::of(raw).net,
                total: clamped.iter().map(|v| v.abs()).sum(),
                exhausted: edges_done && ratio_exhausted(&clamped, cfg.r1),
            });
        }
    }
    report
}

/// Extra restriction on which nodes may feed a given destination, on top of
/// acyclicity. Used to keep predictor networks from copying their targets.
pub trait SourceConstraint {
    /// Mask over node slots; `true` means the node may feed `dst`.
    fn allowed_sources(&self, net: &Network, dst: NodeId) -> Vec<bool>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    EdgeGen,
    Enc,
    EdgeRemoval,
    NodeRemoval,
    L1Prune,
}

/// Neutrality evidence for one generative process, measured on probe rows
/// immediately before and after the mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeutralityAudit {
    /// Outputs of the first probe row before the mutation.
    pub probe_outputs_pre: Vec<f64>,
    pub probe_outputs_post: Vec<f64>,
    /// Largest state change of any pre-existing node on any probe row.
    pub max_state_deviation: f64,
    /// ENC only: largest `|delta_{k,1} - dC/dw_ij|` over probe rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_transfer_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeEvent {
    pub kind: EventKind,
    pub step: u64,
    pub nodes: Vec<NodeId>,
    pub edges: Vec<EdgeId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<NeutralityAudit>,
}

impl GenerativeEvent {
    pub(crate) fn new(kind: EventKind, step: u64, nodes: Vec<NodeId>, edges: Vec<EdgeId>) -> Self {
        GenerativeEvent {
            kind,
            step,
            nodes,
            edges,
            audit: None,
        }
    }
}

/// Rows used to audit generative processes.
#[derive(Debug, Clone, Copy)]
pub struct Probe<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub targets: ArrayView2<'a, f64>,
    pub mismatch_floor: f64,
}

fn max_state_deviation(
    net_before_width: usize,
    before: &crate::forward::Activations,
    after: &crate::forward::Activations,
    net: &Network,
) -> f64 {
    let mut worst = 0.0f64;
    for node in net.nodes() {
        if node.id.index() >= net_before_width {
            continue;
        }
        for (p, q) in before.state(node.id).iter().zip(after.state(node.id)) {
            worst = worst.max((p - q).abs());
        }
    }
    worst
}

fn first_row_outputs(act: &crate::forward::Activations, net: &Network) -> Vec<f64> {
    if act.samples() == 0 {
        return Vec::new();
    }
    net.outputs().iter().map(|&y| act.state(y)[0]).collect()
}

/// Candidate sources for a new edge into `(target, term)`: nodes that keep the
/// graph acyclic, are not already sources of that term, are not in
/// refraction, existed when `trace` was taken, and pass `constraint`.
pub fn edge_candidates(
    net: &Network,
    trace: &BatchTrace,
    target: NodeId,
    term: Term,
    constraint: Option<&dyn SourceConstraint>,
) -> Result<Vec<NodeId>> {
    net.node(target)?;
    let downstream = net.descendants(target);
    let allowed = constraint.map(|c| c.allowed_sources(net, target));
    Ok(net
        .nodes()
        .filter(|n| {
            !downstream[n.id.index()]
                && n.refraction == 0
                && trace.covers_node(n.id)
                && net.find_edge(n.id, target, term).is_none()
                && allowed.as_ref().is_none_or(|m| m[n.id.index()])
        })
        .map(|n| n.id)
        .collect())
}

/// `|sum_m a_i^m * delta^m|` with the target deltas clamped at `delta_min`.
fn source_score(trace: &BatchTrace, source: NodeId, clamped: &[f64]) -> f64 {
    trace
        .activations()
        .state(source)
        .iter()
        .zip(clamped)
        .map(|(a, d)| a * d)
        .sum::<f64>()
        .abs()
}

/// Best-aligned source for a new edge into `(target, term)`, with ties going
/// to the lowest id. `None` when there is no candidate or every score is zero.
pub fn select_edge_source(
    net: &Network,
    trace: &BatchTrace,
    target: NodeId,
    term: Term,
    cfg: &GrowthConfig,
    constraint: Option<&dyn SourceConstraint>,
) -> Result<Option<NodeId>> {
    let candidates = edge_candidates(net, trace, target, term, constraint)?;
    Ok(best_source(trace, target, term, &candidates, cfg).map(|(id, _)| id))
}

fn best_source(
    trace: &BatchTrace,
    target: NodeId,
    term: Term,
    candidates: &[NodeId],
    cfg: &GrowthConfig,
) -> Option<(NodeId, f64)> {
    let clamped = clamp_small(trace.delta(target, term), cfg.delta_min);
    let mut best: Option<(NodeId, f64)> = None;
    for &c in candidates {
        let score = source_score(trace, c, &clamped);
        if score > SCORE_EPS && best.is_none_or(|(_, s)| score > s) {
            best = Some((c, score));
        }
    }
    best
}

fn audit_after(
    net: &Network,
    probe: &Probe<'_>,
    before: &crate::forward::Activations,
    width_before: usize,
) -> Result<NeutralityAudit> {
    let after = forward_pass(net, probe.inputs)?;
    Ok(NeutralityAudit {
        probe_outputs_pre: first_row_outputs(before, net),
        probe_outputs_post: first_row_outputs(&after, net),
        max_state_deviation: max_state_deviation(width_before, before, &after, net),
        delta_transfer_deviation: None,
    })
}

/// Adds a zero-weight edge `source -> (target, term)` and puts the edge and
/// both endpoints into refraction.
pub fn generate_edge(
    net: &mut Network,
    target: NodeId,
    term: Term,
    source: NodeId,
    cfg: &GrowthConfig,
    probe: Option<&Probe<'_>>,
) -> Result<GenerativeEvent> {
    let before = probe.map(|p| forward_pass(net, p.inputs)).transpose()?;
    let width = net.node_capacity();
    let e = net.insert_edge(source, target, term, 0.0)?;
    net.edge_mut(e)?.refraction = cfg.refraction_steps;
    net.node_mut(target)?.refraction = cfg.refraction_steps;
    net.node_mut(source)?.refraction = cfg.refraction_steps;
    let mut event = GenerativeEvent::new(EventKind::EdgeGen, net.step(), vec![source, target], vec![e]);
    if let (Some(p), Some(before)) = (probe, before) {
        event.audit = Some(audit_after(net, p, &before, width)?);
    }
    Ok(event)
}

/// Replaces edge `i -> (j, t)` with `i -> (k, 0)` (weight 1) and
/// `k -> (j, t)` (original weight), where `k` is a new modulatory node with
/// `b1 = 0` and `K = 1/w`. Both new edges enter refraction; `k` itself does
/// not, so it can pick up a term-1 source while its edges are protected.
pub fn edge_node_conversion(
    net: &mut Network,
    edge: EdgeId,
    cfg: &GrowthConfig,
    probe: Option<&Probe<'_>>,
) -> Result<GenerativeEvent> {
    let old = net.edge(edge)?.clone();
    if old.refraction > 0 {
        return Err(Error::InRefraction(edge));
    }
    if old.is_zero_weight() {
        return Err(Error::ZeroWeight(edge));
    }
    let before = probe
        .map(|p| trace_batch(net, p.inputs, p.targets, p.mismatch_floor))
        .transpose()?;
    let width = net.node_capacity();

    let k = net.insert_node(NodeKind::Modulatory);
    {
        let node = net.node_mut(k)?;
        node.bias0 = 0.0;
        node.bias1 = 0.0;
        node.steepness = 1.0 / old.weight;
    }
    net.remove_edge(edge)?;
    let into = net.insert_edge(old.src, k, Term::Zero, 1.0)?;
    let out = net.insert_edge(k, old.dst, old.term, old.weight)?;
    net.edge_mut(into)?.refraction = cfg.refraction_steps;
    net.edge_mut(out)?.refraction = cfg.refraction_steps;

    let mut event = GenerativeEvent::new(
        EventKind::Enc,
        net.step(),
        vec![old.src, k, old.dst],
        vec![edge, into, out],
    );
    if let (Some(p), Some(before)) = (probe, before) {
        let after = trace_batch(net, p.inputs, p.targets, p.mismatch_floor)?;
        let old_grad = before.edge_grad(edge).expect("edge traced before conversion");
        let transfer = after
            .delta(k, Term::One)
            .iter()
            .zip(old_grad)
            .map(|(d, g)| (d - g).abs())
            .fold(0.0, f64::max);
        event.audit = Some(NeutralityAudit {
            probe_outputs_pre: first_row_outputs(before.activations(), net),
            probe_outputs_post: first_row_outputs(after.activations(), net),
            max_state_deviation: max_state_deviation(width, before.activations(), after.activations(), net),
            delta_transfer_deviation: Some(transfer),
        });
    }
    Ok(event)
}

/// Adds Gaussian noise with standard deviation `zero_weight_noise * |g_m|` to
/// every per-sample gradient of zero-weight edges.
pub fn perturb_zero_weight_gradients<R: Rng + ?Sized>(
    net: &Network,
    trace: &mut BatchTrace,
    cfg: &GrowthConfig,
    rng: &mut R,
) {
    let ids: Vec<EdgeId> = trace.edge_ids().to_vec();
    for e in ids {
        if !net.edge(e).is_ok_and(|edge| edge.is_zero_weight()) {
            continue;
        }
        let grads = trace.edge_grad_mut(e).expect("traced edge");
        for g in grads.iter_mut() {
            if *g != 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                *g += z * cfg.zero_weight_noise * g.abs();
            }
        }
    }
}

/// Moves every steepness a fraction `k_decay` of the way towards magnitude 1,
/// keeping its sign: `K <- (1 - r) K + r sign(K)`.
pub fn decay_steepness(net: &mut Network, cfg: &GrowthConfig) {
    for node in net.nodes_mut() {
        if node.kind == NodeKind::Modulatory {
            node.steepness = (1.0 - cfg.k_decay) * node.steepness + cfg.k_decay * node.steepness.signum();
        }
    }
}

/// Removes zero-weight edges older than the protection window, then removes
/// each hidden node without out-edges with probability `node_removal_prob`.
/// Nodes orphaned by this sweep are only considered on the next step.
pub fn destructive_step<R: Rng + ?Sized>(
    net: &mut Network,
    cfg: &GrowthConfig,
    rng: &mut R,
) -> Result<Vec<GenerativeEvent>> {
    let step = net.step();
    let mut events = Vec::new();
    let stale: Vec<EdgeId> = net
        .edges()
        .filter(|e| e.is_zero_weight() && step.saturating_sub(e.created_at) > cfg.edge_protection_steps)
        .map(|e| e.id)
        .collect();
    let dangling_before: Vec<NodeId> = net
        .nodes()
        .filter(|n| n.kind == NodeKind::Modulatory && net.out_edges(n.id).is_empty())
        .map(|n| n.id)
        .collect();
    for e in stale {
        let edge = net.remove_edge(e)?;
        events.push(GenerativeEvent::new(
            EventKind::EdgeRemoval,
            step,
            vec![edge.src, edge.dst],
            vec![e],
        ));
    }
    for id in dangling_before {
        if rng.random::<f64>() < cfg.node_removal_prob {
            let inbound: Vec<EdgeId> = net.all_in_edges(id).collect();
            net.remove_node(id)?;
            events.push(GenerativeEvent::new(EventKind::NodeRemoval, step, vec![id], inbound));
        }
    }
    Ok(events)
}

fn tick_refraction(net: &mut Network) {
    for node in net.nodes_mut() {
        node.refraction = node.refraction.saturating_sub(1);
    }
    for edge in net.edges_mut() {
        edge.refraction = edge.refraction.saturating_sub(1);
    }
}

/// Whether every node term and edge on any path into `target` (including the
/// target itself) has its immediate AP exhausted. Components created after
/// the report count as not exhausted.
pub fn pathway_exhausted(net: &Network, ap: &ApReport, target: NodeId) -> bool {
    let upstream = net.ancestors(target);
    for node in net.nodes() {
        if !upstream[node.id.index()] || node.kind == NodeKind::Input {
            continue;
        }
        for &t in node.terms() {
            if !ap.node_term(node.id, t).is_some_and(|a| a.exhausted) {
                return false;
            }
            for &e in net.in_edges(node.id, t) {
                if !ap.edge(e).is_some_and(|a| a.exhausted) {
                    return false;
                }
            }
        }
    }
    true
}

fn enc_ready(net: &Network, ap: &ApReport, e: EdgeId) -> bool {
    let Ok(edge) = net.edge(e) else { return false };
    edge.refraction == 0 && !edge.is_zero_weight() && ap.edge(e).is_some_and(|a| a.can_grow())
}

/// Everything one generation step needs besides the network itself.
pub struct GrowthContext<'a, R: Rng + ?Sized> {
    pub trace: &'a BatchTrace,
    pub ap: &'a ApReport,
    pub cfg: &'a GrowthConfig,
    pub constraint: Option<&'a dyn SourceConstraint>,
    pub probe: Option<Probe<'a>>,
    pub rng: &'a mut R,
}

/// Edge generation at `node` if any of its terms qualifies. Among qualifying
/// terms the one with the best-aligned source wins; if no source aligns at
/// all, the term with the larger total AP gets a uniformly random source.
fn generate_at<R: Rng + ?Sized>(
    net: &mut Network,
    node: NodeId,
    ctx: &mut GrowthContext<'_, R>,
) -> Result<Option<GenerativeEvent>> {
    let n = net.node(node)?;
    if n.refraction > 0 || n.kind == NodeKind::Input {
        return Ok(None);
    }
    let mut terms: Vec<(Term, f64)> = n
        .terms()
        .iter()
        .filter_map(|&t| {
            ctx.ap
                .node_term(node, t)
                .filter(ApEntry::can_grow)
                .map(|a| (t, a.total))
        })
        .collect();
    if terms.is_empty() {
        return Ok(None);
    }
    // Prefer larger total AP, then term 1.
    terms.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));

    let mut best: Option<(Term, NodeId, f64)> = None;
    let mut fallback: Option<(Term, Vec<NodeId>)> = None;
    for &(t, _) in &terms {
        let candidates = edge_candidates(net, ctx.trace, node, t, ctx.constraint)?;
        if candidates.is_empty() {
            continue;
        }
        if let Some((src, score)) = best_source(ctx.trace, node, t, &candidates, ctx.cfg) {
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((t, src, score));
            }
        }
        if fallback.is_none() {
            fallback = Some((t, candidates));
        }
    }
    let (term, source) = match (best, fallback) {
        (Some((t, src, _)), _) => (t, src),
        (None, Some((t, candidates))) => (t, candidates[ctx.rng.random_range(0..candidates.len())]),
        (None, None) => return Ok(None),
    };
    generate_edge(net, node, term, source, ctx.cfg, ctx.probe.as_ref()).map(Some)
}

/// One priority-ordered generative process for the pathway of `target`.
///
/// Walks from the target towards its sources, always following the in-edge
/// with the largest total AP whose source still carries adaptive potential.
/// The first exhausted edge whose source has none is converted; if the walk
/// ends at a node with no such edge, that node gets a new in-edge. Visited
/// nodes are never re-entered, so the walk terminates.
pub fn gp_for<R: Rng + ?Sized>(
    net: &mut Network,
    target: NodeId,
    ctx: &mut GrowthContext<'_, R>,
) -> Result<Option<GenerativeEvent>> {
    let mut visited = vec![false; net.node_capacity()];
    let mut current = target;
    visited[current.index()] = true;
    loop {
        let mut edges: Vec<(EdgeId, f64)> = net
            .all_in_edges(current)
            .filter_map(|e| ctx.ap.edge(e).map(|a| (e, a.total)))
            .collect();
        edges.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut next = None;
        for (e, total) in edges {
            if total <= 0.0 {
                break;
            }
            let src = net.edge(e)?.src;
            if !visited[src.index()] && ctx.ap.node_total(net, src) > 0.0 {
                next = Some(src);
                break;
            }
            if enc_ready(net, ctx.ap, e) {
                return edge_node_conversion(net, e, ctx.cfg, ctx.probe.as_ref()).map(Some);
            }
        }
        match next {
            Some(src) => {
                visited[src.index()] = true;
                current = src;
            }
            None => return generate_at(net, current, ctx),
        }
    }
}

/// Runs at most one generative process per target (output) node whose whole
/// input pathway is exhausted, visiting targets by decreasing total AP.
pub fn priority_ordering_step<R: Rng + ?Sized>(
    net: &mut Network,
    ctx: &mut GrowthContext<'_, R>,
) -> Result<Vec<GenerativeEvent>> {
    let mut targets: Vec<(NodeId, f64)> = net
        .outputs()
        .iter()
        .filter(|&&t| pathway_exhausted(net, ctx.ap, t))
        .map(|&t| (t, ctx.ap.node_total(net, t)))
        .collect();
    targets.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut events = Vec::new();
    for (t, _) in targets {
        if !pathway_exhausted(net, ctx.ap, t) {
            continue;
        }
        if let Some(ev) = gp_for(net, t, ctx)? {
            events.push(ev);
        }
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    /// Mean over samples and outputs of the squared output error.
    pub mse: f64,
    /// Mean absolute error of each output over the batch.
    pub output_abs_error: Vec<f64>,
    pub hidden_nodes: usize,
    pub edges: usize,
    pub events: Vec<GenerativeEvent>,
}

impl StepReport {
    pub fn mean_abs_error(&self) -> f64 {
        if self.output_abs_error.is_empty() {
            return 0.0;
        }
        self.output_abs_error.iter().sum::<f64>() / self.output_abs_error.len() as f64
    }
}

/// forward -> backward -> zero-weight perturbation -> AP -> parameter update
/// -> priority-ordered growth -> destructive processes -> K decay ->
/// refraction countdown.
pub fn adaptation_step<R: Rng + ?Sized>(
    net: &mut Network,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    cfg: &GrowthConfig,
    constraint: Option<&dyn SourceConstraint>,
    rng: &mut R,
) -> Result<StepReport> {
    let act = forward_pass(net, inputs)?;
    let mut trace = backward_pass(net, act, targets, cfg.mismatch_floor)?;
    let mse = trace.mean_squared_error();
    let output_abs_error = trace.mean_abs_error_per_output();

    perturb_zero_weight_gradients(net, &mut trace, cfg, rng);
    let ap = compute_ap(net, &trace, cfg);
    let grads = NetGradients::from_trace(net, &trace);
    apply_updates(net, &grads, cfg.gamma)?;

    let rows = cfg.audit_samples.min(inputs.nrows());
    let probe = (rows > 0).then(|| Probe {
        inputs: inputs.slice(s![..rows, ..]),
        targets: targets.slice(s![..rows, ..]),
        mismatch_floor: cfg.mismatch_floor,
    });
    let mut ctx = GrowthContext {
        trace: &trace,
        ap: &ap,
        cfg,
        constraint,
        probe,
        rng,
    };
    let mut events = priority_ordering_step(net, &mut ctx)?;
    events.extend(destructive_step(net, cfg, ctx.rng)?);
    decay_steepness(net, cfg);
    tick_refraction(net);

    let report = StepReport {
        step: net.step(),
        mse,
        output_abs_error,
        hidden_nodes: net.hidden_count(),
        edges: net.edge_count(),
        events,
    };
    net.advance_step();
    Ok(report)
}
