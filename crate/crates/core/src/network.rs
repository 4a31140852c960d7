//! Mutable directed acyclic networks of input, output and modulatory nodes.
//!
//! Nodes and edges are addressed by stable ids that are never reused while the
//! network lives. Edges target a specific *term* of their destination: output
//! nodes only have term 0, modulatory nodes have term 0 (linear) and term 1
//! (passed through the shifted logistic `sigma1`).
//!
//! A topological order is maintained incrementally with the Pearce–Kelly
//! scheme: inserting an edge that agrees with the current order costs nothing,
//! otherwise only the affected region between the two endpoints is re-ranked.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights with magnitude below this are treated as exactly zero.
pub const ZERO_WEIGHT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub u64);

impl EdgeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Input,
    Output,
    Modulatory,
}

/// Activation term of a node targeted by an edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Term {
    Zero,
    One,
}

impl Term {
    pub const BOTH: [Term; 2] = [Term::Zero, Term::One];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Term::Zero => 0,
            Term::One => 1,
        }
    }
}

impl From<Term> for u8 {
    fn from(t: Term) -> u8 {
        t.index() as u8
    }
}

impl TryFrom<u8> for Term {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Term::Zero),
            1 => Ok(Term::One),
            other => Err(format!("invalid term {other}")),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Term-0 bias. Adapted for output nodes, frozen at 0 for modulatory nodes,
    /// unused for inputs.
    pub bias0: f64,
    /// Term-1 bias (modulatory nodes only).
    pub bias1: f64,
    /// Steepness `K` of `sigma1` (modulatory nodes only).
    pub steepness: f64,
    pub created_at: u64,
    pub refraction: u32,
}

impl Node {
    fn new(id: NodeId, kind: NodeKind, step: u64) -> Self {
        Node {
            id,
            kind,
            bias0: 0.0,
            bias1: 0.0,
            steepness: 1.0,
            created_at: step,
            refraction: 0,
        }
    }

    pub fn is_hidden(&self) -> bool {
        self.kind == NodeKind::Modulatory
    }

    pub fn terms(&self) -> &'static [Term] {
        match self.kind {
            NodeKind::Input => &[],
            NodeKind::Output => &[Term::Zero],
            NodeKind::Modulatory => &Term::BOTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: EdgeId,
    pub src: NodeId,
    pub dst: NodeId,
    pub term: Term,
    pub weight: f64,
    pub created_at: u64,
    pub refraction: u32,
}

impl Edge {
    pub fn is_zero_weight(&self) -> bool {
        self.weight.abs() < ZERO_WEIGHT_EPS
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<Option<Node>>,
    edges: Vec<Option<Edge>>,
    in_edges: Vec<[Vec<EdgeId>; 2]>,
    out_edges: Vec<Vec<EdgeId>>,
    lookup: HashMap<(NodeId, NodeId, Term), EdgeId>,
    inputs: Vec<NodeId>,
    outputs: Vec<NodeId>,
    rank: Vec<u64>,
    topo: Vec<NodeId>,
    next_rank: u64,
    node_count: usize,
    edge_count: usize,
    step: u64,
}

impl Network {
    /// A network with only input and output nodes and no edges.
    pub fn new(n_inputs: usize, n_outputs: usize) -> Self {
        let mut net = Network::empty();
        for _ in 0..n_inputs {
            net.insert_node(NodeKind::Input);
        }
        for _ in 0..n_outputs {
            net.insert_node(NodeKind::Output);
        }
        net
    }

    fn empty() -> Self {
        Network {
            nodes: Vec::new(),
            edges: Vec::new(),
            in_edges: Vec::new(),
            out_edges: Vec::new(),
            lookup: HashMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            rank: Vec::new(),
            topo: Vec::new(),
            next_rank: 0,
            node_count: 0,
            edge_count: 0,
            step: 0,
        }
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    /// Nodes in topological order (every edge goes from earlier to later).
    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo
    }

    /// Number of node slots ever allocated; dense per-node buffers use this width.
    pub fn node_capacity(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_capacity(&self) -> usize {
        self.edges.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn hidden_count(&self) -> usize {
        self.node_count - self.inputs.len() - self.outputs.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn advance_step(&mut self) {
        self.step += 1;
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.nodes.get(id.index()).is_some_and(Option::is_some)
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.index())
            .and_then(Option::as_ref)
            .ok_or(Error::UnknownNode(id))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Result<&mut Node> {
        self.nodes
            .get_mut(id.index())
            .and_then(Option::as_mut)
            .ok_or(Error::UnknownNode(id))
    }

    pub fn edge(&self, id: EdgeId) -> Result<&Edge> {
        self.edges
            .get(id.index())
            .and_then(Option::as_ref)
            .ok_or(Error::UnknownEdge(id))
    }

    pub fn edge_mut(&mut self, id: EdgeId) -> Result<&mut Edge> {
        self.edges
            .get_mut(id.index())
            .and_then(Option::as_mut)
            .ok_or(Error::UnknownEdge(id))
    }

    /// Live nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().flatten()
    }

    /// Live edges in id order.
    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().flatten()
    }

    pub(crate) fn nodes_mut(&mut self) -> impl Iterator<Item = &mut Node> {
        self.nodes.iter_mut().flatten()
    }

    pub(crate) fn edges_mut(&mut self) -> impl Iterator<Item = &mut Edge> {
        self.edges.iter_mut().flatten()
    }

    /// In-edges of one term of `id`, sorted by edge id.
    pub fn in_edges(&self, id: NodeId, term: Term) -> &[EdgeId] {
        self.in_edges
            .get(id.index())
            .map(|t| t[term.index()].as_slice())
            .unwrap_or(&[])
    }

    /// In-edges of both terms of `id`.
    pub fn all_in_edges(&self, id: NodeId) -> impl Iterator<Item = EdgeId> + '_ {
        Term::BOTH
            .into_iter()
            .flat_map(move |t| self.in_edges(id, t).iter().copied())
    }

    pub fn out_edges(&self, id: NodeId) -> &[EdgeId] {
        self.out_edges.get(id.index()).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn find_edge(&self, src: NodeId, dst: NodeId, term: Term) -> Option<EdgeId> {
        self.lookup.get(&(src, dst, term)).copied()
    }

    /// True iff adding `src -> dst` would close a directed cycle, i.e. `dst`
    /// already reaches `src` (including `src == dst`).
    pub fn would_create_cycle(&self, src: NodeId, dst: NodeId) -> Result<bool> {
        self.node(src)?;
        self.node(dst)?;
        if src == dst {
            return Ok(true);
        }
        let ub = self.rank[src.index()];
        if self.rank[dst.index()] > ub {
            return Ok(false);
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![dst];
        seen[dst.index()] = true;
        while let Some(n) = stack.pop() {
            for &e in self.out_edges(n) {
                let t = self.edges[e.index()].as_ref().expect("live edge").dst;
                if t == src {
                    return Ok(true);
                }
                // Nothing ranked after `src` can lead back to it.
                if !seen[t.index()] && self.rank[t.index()] < ub {
                    seen[t.index()] = true;
                    stack.push(t);
                }
            }
        }
        Ok(false)
    }

    /// Mask over node slots of everything reachable from `id`, including `id`.
    pub fn descendants(&self, id: NodeId) -> Vec<bool> {
        self.reach(id, true)
    }

    /// Mask over node slots of everything that reaches `id`, including `id`.
    pub fn ancestors(&self, id: NodeId) -> Vec<bool> {
        self.reach(id, false)
    }

    fn reach(&self, id: NodeId, forward: bool) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        if !self.contains_node(id) {
            return seen;
        }
        seen[id.index()] = true;
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            let next: Vec<NodeId> = if forward {
                self.out_edges(n)
                    .iter()
                    .map(|e| self.edges[e.index()].as_ref().expect("live edge").dst)
                    .collect()
            } else {
                self.all_in_edges(n)
                    .map(|e| self.edges[e.index()].as_ref().expect("live edge").src)
                    .collect()
            };
            for t in next {
                if !seen[t.index()] {
                    seen[t.index()] = true;
                    stack.push(t);
                }
            }
        }
        seen
    }

    pub fn insert_node(&mut self, kind: NodeKind) -> NodeId {
        let id = NodeId(self.nodes.len() as u64);
        self.nodes.push(Some(Node::new(id, kind, self.step)));
        self.in_edges.push([Vec::new(), Vec::new()]);
        self.out_edges.push(Vec::new());
        self.rank.push(self.next_rank);
        self.next_rank += 1;
        self.topo.push(id);
        self.node_count += 1;
        match kind {
            NodeKind::Input => self.inputs.push(id),
            NodeKind::Output => self.outputs.push(id),
            NodeKind::Modulatory => {}
        }
        id
    }

    pub fn insert_edge(&mut self, src: NodeId, dst: NodeId, term: Term, weight: f64) -> Result<EdgeId> {
        self.node(src)?;
        let dst_kind = self.node(dst)?.kind;
        let reason = match (dst_kind, term) {
            (NodeKind::Input, _) => Some("inputs take no in-edges"),
            (NodeKind::Output, Term::One) => Some("outputs only have term 0"),
            _ => None,
        };
        if let Some(reason) = reason {
            return Err(Error::InvalidEdge { src, dst, reason });
        }
        if !weight.is_finite() {
            return Err(Error::InvalidEdge {
                src,
                dst,
                reason: "weight must be finite",
            });
        }
        if self.lookup.contains_key(&(src, dst, term)) {
            return Err(Error::DuplicateEdge { src, dst, term });
        }
        if self.would_create_cycle(src, dst)? {
            return Err(Error::Cycle { src, dst });
        }
        if self.rank[src.index()] > self.rank[dst.index()] {
            self.reorder(src, dst);
        }

        let id = EdgeId(self.edges.len() as u64);
        self.edges.push(Some(Edge {
            id,
            src,
            dst,
            term,
            weight,
            created_at: self.step,
            refraction: 0,
        }));
        self.in_edges[dst.index()][term.index()].push(id);
        self.out_edges[src.index()].push(id);
        self.lookup.insert((src, dst, term), id);
        self.edge_count += 1;
        Ok(id)
    }

    pub fn remove_edge(&mut self, id: EdgeId) -> Result<Edge> {
        let edge = self
            .edges
            .get_mut(id.index())
            .and_then(Option::take)
            .ok_or(Error::UnknownEdge(id))?;
        self.in_edges[edge.dst.index()][edge.term.index()].retain(|&e| e != id);
        self.out_edges[edge.src.index()].retain(|&e| e != id);
        self.lookup.remove(&(edge.src, edge.dst, edge.term));
        self.edge_count -= 1;
        Ok(edge)
    }

    /// Removes a hidden node together with its in-edges. The node must have no
    /// out-edges left.
    pub fn remove_node(&mut self, id: NodeId) -> Result<Node> {
        let node = self.node(id)?;
        if node.kind != NodeKind::Modulatory {
            return Err(Error::ProtectedNode(id));
        }
        if !self.out_edges(id).is_empty() {
            return Err(Error::NodeHasOutEdges(id));
        }
        let incoming: Vec<EdgeId> = self.all_in_edges(id).collect();
        for e in incoming {
            self.remove_edge(e)?;
        }
        let node = self.nodes[id.index()].take().expect("checked above");
        self.topo.retain(|&n| n != id);
        self.node_count -= 1;
        Ok(node)
    }

    /// Pearce–Kelly re-ranking after inserting `src -> dst` with
    /// `rank[dst] < rank[src]`. The caller has already ruled out a cycle.
    fn reorder(&mut self, src: NodeId, dst: NodeId) {
        let lb = self.rank[dst.index()];
        let ub = self.rank[src.index()];
        let mut seen = vec![false; self.nodes.len()];

        let mut forward = Vec::new();
        let mut stack = vec![dst];
        seen[dst.index()] = true;
        while let Some(n) = stack.pop() {
            forward.push(n);
            for &e in &self.out_edges[n.index()] {
                let t = self.edges[e.index()].as_ref().expect("live edge").dst;
                if !seen[t.index()] && self.rank[t.index()] <= ub {
                    seen[t.index()] = true;
                    stack.push(t);
                }
            }
        }

        let mut backward = Vec::new();
        stack.push(src);
        seen[src.index()] = true;
        while let Some(n) = stack.pop() {
            backward.push(n);
            for e in self.all_in_edges(n) {
                let s = self.edges[e.index()].as_ref().expect("live edge").src;
                if !seen[s.index()] && self.rank[s.index()] >= lb {
                    seen[s.index()] = true;
                    stack.push(s);
                }
            }
        }

        let rank = &self.rank;
        forward.sort_by_key(|n| rank[n.index()]);
        backward.sort_by_key(|n| rank[n.index()]);
        let mut pool: Vec<u64> = backward.iter().chain(forward.iter()).map(|n| rank[n.index()]).collect();
        pool.sort_unstable();
        for (n, r) in backward.iter().chain(forward.iter()).zip(pool) {
            self.rank[n.index()] = r;
        }
        let rank = &self.rank;
        self.topo.sort_by_key(|n| rank[n.index()]);
    }

    /// Graphviz rendering. Term-1 edges are dashed.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph network {\n  rankdir=LR;\n");
        for node in self.nodes() {
            let (label, shape) = match node.kind {
                NodeKind::Input => (format!("in {}", node.id), "box"),
                NodeKind::Output => (format!("out {}\\nb={:.4}", node.id, node.bias0), "doublecircle"),
                NodeKind::Modulatory => (
                    format!("mod {}\\nb1={:.4} K={:.4}", node.id, node.bias1, node.steepness),
                    "ellipse",
                ),
            };
            let _ = writeln!(out, "  {} [label=\"{}\", shape={}];", node.id, label, shape);
        }
        for edge in self.edges() {
            let style = match edge.term {
                Term::Zero => "solid",
                Term::One => "dashed",
            };
            let _ = writeln!(
                out,
                "  {} -> {} [label=\"{:.4}\", style={}];",
                edge.src, edge.dst, edge.weight, style
            );
        }
        out.push_str("}\n");
        out
    }

    pub fn to_document(&self) -> NetworkDoc {
        NetworkDoc {
            format: NETWORK_FORMAT.to_string(),
            version: NETWORK_VERSION,
            step: self.step,
            next_node_id: self.nodes.len() as u64,
            next_edge_id: self.edges.len() as u64,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            nodes: self.nodes().cloned().collect(),
            edges: self.edges().cloned().collect(),
        }
    }

    pub fn from_document(doc: &NetworkDoc) -> Result<Self> {
        if doc.format != NETWORK_FORMAT || doc.version != NETWORK_VERSION {
            return Err(Error::Document(format!(
                "expected {NETWORK_FORMAT} v{NETWORK_VERSION}, found {} v{}",
                doc.format, doc.version
            )));
        }
        let mut net = Network::empty();
        let slots = doc.next_node_id as usize;
        net.nodes = vec![None; slots];
        net.in_edges = vec![[Vec::new(), Vec::new()]; slots];
        net.out_edges = vec![Vec::new(); slots];
        net.rank = vec![u64::MAX; slots];
        for node in &doc.nodes {
            let slot = net
                .nodes
                .get_mut(node.id.index())
                .ok_or_else(|| Error::Document(format!("node id {} out of range", node.id)))?;
            if slot.is_some() {
                return Err(Error::Document(format!("duplicate node {}", node.id)));
            }
            *slot = Some(node.clone());
            net.node_count += 1;
        }
        let kind_list = |ids: &[NodeId], kind: NodeKind| -> Result<()> {
            for &id in ids {
                if net.node(id)?.kind != kind {
                    return Err(Error::Document(format!("{id} listed as {kind:?}")));
                }
            }
            Ok(())
        };
        kind_list(&doc.inputs, NodeKind::Input)?;
        kind_list(&doc.outputs, NodeKind::Output)?;
        net.inputs = doc.inputs.clone();
        net.outputs = doc.outputs.clone();

        let mut edges: Vec<&Edge> = doc.edges.iter().collect();
        edges.sort_by_key(|e| e.id);
        net.edges = vec![None; doc.next_edge_id as usize];
        for edge in edges {
            net.node(edge.src)?;
            net.node(edge.dst)?;
            if edge.id.index() >= net.edges.len() || net.lookup.contains_key(&(edge.src, edge.dst, edge.term)) {
                return Err(Error::Document(format!("bad or duplicate edge {}", edge.id)));
            }
            net.edges[edge.id.index()] = Some(edge.clone());
            net.in_edges[edge.dst.index()][edge.term.index()].push(edge.id);
            net.out_edges[edge.src.index()].push(edge.id);
            net.lookup.insert((edge.src, edge.dst, edge.term), edge.id);
            net.edge_count += 1;
        }
        net.step = doc.step;
        net.rebuild_order()?;
        net.check_invariants()?;
        Ok(net)
    }

    /// Full Kahn's-algorithm ranking; ties broken by id.
    fn rebuild_order(&mut self) -> Result<()> {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;

        let mut indegree = vec![0usize; self.nodes.len()];
        for e in self.edges() {
            indegree[e.dst.index()] += 1;
        }
        let mut ready: BinaryHeap<Reverse<NodeId>> = self
            .nodes()
            .filter(|n| indegree[n.id.index()] == 0)
            .map(|n| Reverse(n.id))
            .collect();
        self.topo.clear();
        while let Some(Reverse(n)) = ready.pop() {
            self.rank[n.index()] = self.topo.len() as u64;
            self.topo.push(n);
            for &e in &self.out_edges[n.index()] {
                let t = self.edges[e.index()].as_ref().expect("live edge").dst;
                indegree[t.index()] -= 1;
                if indegree[t.index()] == 0 {
                    ready.push(Reverse(t));
                }
            }
        }
        if self.topo.len() != self.node_count {
            return Err(Error::Document("edge set contains a cycle".into()));
        }
        self.next_rank = self.topo.len() as u64;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_str(text)?;
        Network::from_document(&doc)
    }

    /// Debug-time consistency check of the cached order and indices.
    pub fn check_invariants(&self) -> Result<()> {
        // K may be negative (ENC copies the sign of 1/w) but never 0.
        if let Some(n) = self
            .nodes()
            .find(|n| n.kind == NodeKind::Modulatory && !(n.steepness.is_finite() && n.steepness != 0.0))
        {
            return Err(Error::Document(format!("node {} has steepness {}", n.id, n.steepness)));
        }
        for e in self.edges() {
            if self.rank[e.src.index()] >= self.rank[e.dst.index()] {
                return Err(Error::Cycle { src: e.src, dst: e.dst });
            }
        }
        let ordered = self
            .topo
            .windows(2)
            .all(|w| self.rank[w[0].index()] < self.rank[w[1].index()]);
        if !ordered || self.topo.len() != self.node_count {
            return Err(Error::Document("topological cache out of date".into()));
        }
        Ok(())
    }
}

pub const NETWORK_FORMAT: &str = "dirad-network";
pub const NETWORK_VERSION: u32 = 1;

/// Versioned checkpoint document. Serialized with shortest round-trip float
/// formatting, so every finite value survives a save/load cycle exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDoc {
    pub format: String,
    pub version: u32,
    pub step: u64,
    pub next_node_id: u64,
    pub next_edge_id: u64,
    pub inputs: Vec<NodeId>,
    pub outputs: Vec<NodeId>,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}
