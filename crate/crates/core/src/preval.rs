//! Prediction validation for continual learning.
//!
//! A [`Model`] pairs a task network (L0) with a predictor network (L1) that
//! learns to predict the states of L0's input and hidden nodes from other L0
//! states. Once both have stabilized, the targets L1 predicts well become
//! *confidently predicted* (CP) and their error statistics are recorded.
//! Samples from the task the model was trained on keep those errors in range;
//! samples from a new task do not, which is how new tasks are detected and
//! routed to fresh models without touching old ones.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{forward_pass, logistic};
use crate::growth::{adaptation_step, EventKind, GenerativeEvent, GrowthConfig, SourceConstraint, StepReport};
use crate::network::{Network, NodeId, NodeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrevalConfig {
    pub t_cp: f64,
    pub t_conf: f64,
    pub t_sv: f64,
    pub eps_is: f64,
    pub patience: usize,
    /// Safeguards: a phase that has not stabilized after this many steps is
    /// stabilized anyway.
    pub max_l0_steps: usize,
    pub max_l1_steps: usize,
}

impl Default for PrevalConfig {
    fn default() -> Self {
        PrevalConfig {
            t_cp: 0.05,
            t_conf: 1.5,
            t_sv: 0.01,
            eps_is: 0.2,
            patience: 50,
            max_l0_steps: 2000,
            max_l1_steps: 2000,
        }
    }
}

impl PrevalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_cp", self.t_cp),
            ("t_conf", self.t_conf),
            ("t_sv", self.t_sv),
            ("eps_is", self.eps_is),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.patience == 0 || self.max_l0_steps == 0 || self.max_l1_steps == 0 {
            return Err(Error::Config("patience and step limits must be positive".into()));
        }
        Ok(())
    }
}

/// True iff the running minimum of `history` has not dropped by more than
/// 1e-12 during the last `patience` entries.
pub fn stabilize_check(history: &[f64], patience: usize) -> bool {
    if history.len() <= patience {
        return false;
    }
    let split = history.len() - patience;
    let before = history[..split].iter().copied().fold(f64::INFINITY, f64::min);
    let recent = history[split..].iter().copied().fold(f64::INFINITY, f64::min);
    recent >= before - 1e-12
}

/// Per-target statistics recorded when a model stabilizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub is_cp: Vec<bool>,
}

impl CpStats {
    pub fn cp_count(&self) -> usize {
        self.is_cp.iter().filter(|&&c| c).count()
    }

    pub fn is_degenerate(&self) -> bool {
        self.cp_count() == 0
    }
}

/// `|predicted - actual|`, element-wise.
pub fn prediction_errors(predicted: ArrayView2<f64>, actual: ArrayView2<f64>) -> Array2<f64> {
    (&predicted - &actual).mapv(f64::abs)
}

/// Mean and population standard deviation of each column of `errors`
/// (samples x targets); a target is CP iff its mean is below `t_cp`.
pub fn cp_stats(errors: ArrayView2<f64>, t_cp: f64) -> CpStats {
    let n = errors.nrows().max(1) as f64;
    let mut stats = CpStats {
        mean: Vec::with_capacity(errors.ncols()),
        std: Vec::with_capacity(errors.ncols()),
        is_cp: Vec::with_capacity(errors.ncols()),
    };
    for col in errors.columns() {
        let mean = col.sum() / n;
        let var = col.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
        stats.mean.push(mean);
        stats.std.push(var.sqrt());
        stats.is_cp.push(mean < t_cp);
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleCheck {
    pub validated: bool,
    pub conflict_ratio: f64,
}

/// A CP target is conflicted when its error exceeds `mean + t_conf * std`.
/// A model without CP targets validates nothing.
pub fn check_sample(stats: &CpStats, errors: &[f64], t_conf: f64, t_sv: f64) -> SampleCheck {
    let mut cp = 0usize;
    let mut conflicted = 0usize;
    for (j, &e) in errors.iter().enumerate() {
        if stats.is_cp[j] {
            cp += 1;
            if e > stats.mean[j] + t_conf * stats.std[j] {
                conflicted += 1;
            }
        }
    }
    if cp == 0 {
        return SampleCheck {
            validated: false,
            conflict_ratio: 1.0,
        };
    }
    let conflict_ratio = conflicted as f64 / cp as f64;
    SampleCheck {
        validated: conflict_ratio < t_sv,
        conflict_ratio,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchCheck {
    pub validated: bool,
    pub invalid_ratio: f64,
}

pub fn check_batch(samples: &[SampleCheck], r_is: f64, eps_is: f64, degenerate: bool) -> BatchCheck {
    let invalid = samples.iter().filter(|s| !s.validated).count();
    let invalid_ratio = if samples.is_empty() {
        0.0
    } else {
        invalid as f64 / samples.len() as f64
    };
    BatchCheck {
        validated: !degenerate && invalid_ratio <= (1.0 + eps_is) * r_is,
        invalid_ratio,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "model")]
pub enum BatchRoute {
    Adapting(usize),
    Existing(usize),
    New,
}

/// Batch routing given the adapting model (if any) and the batch check of
/// every stabilized model (`None` for models that were not checked).
pub fn decide_batch_route(adapting: Option<usize>, checks: &[Option<BatchCheck>]) -> BatchRoute {
    if let Some(i) = adapting {
        return BatchRoute::Adapting(i);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in checks.iter().enumerate() {
        if let Some(c) = c {
            if c.validated && best.is_none_or(|(_, r)| c.invalid_ratio < r) {
                best = Some((i, c.invalid_ratio));
            }
        }
    }
    best.map_or(BatchRoute::New, |(i, _)| BatchRoute::Existing(i))
}

/// Validated model with the least conflict ratio, else the least conflict
/// ratio overall. Ties go to the lowest index.
pub fn decide_sample_route(checks: &[SampleCheck]) -> Result<usize> {
    let least = |only_validated: bool| {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in checks.iter().enumerate() {
            if (!only_validated || c.validated) && best.is_none_or(|(_, r)| c.conflict_ratio < r) {
                best = Some((i, c.conflict_ratio));
            }
        }
        best.map(|(i, _)| i)
    };
    least(true).or_else(|| least(false)).ok_or(Error::EmptySystem)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AdaptingL0,
    AdaptingL1,
    Stabilized,
}

/// How L1 nodes relate to L0: L1 input `i` carries the state of L0 node
/// `sources[i]`, L1 output `j` predicts the state of L0 node `targets[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Map {
    pub sources: Vec<NodeId>,
    pub targets: Vec<NodeId>,
}

/// Keeps L1 from predicting an L0 node from anything that node depends on
/// (including itself): an L1 edge `s -> d` is admissible only if no L0 node
/// feeding `s` through L1 has an L0 path to an L0 target predicted
/// downstream of `d`.
#[derive(Debug, Clone)]
pub struct L1Admissibility {
    /// L0-slot masks of the ancestors (and self) of each target.
    target_ancestors: Vec<Vec<bool>>,
    /// L1 input position by L1 slot.
    input_pos: Vec<Option<usize>>,
    /// L1 output position by L1 slot.
    output_pos: Vec<Option<usize>>,
    sources: Vec<NodeId>,
}

impl L1Admissibility {
    pub fn new(l0: &Network, l1: &Network, map: &L1Map) -> Self {
        let mut input_pos = vec![None; l1.node_capacity()];
        for (i, id) in l1.inputs().iter().enumerate() {
            input_pos[id.index()] = Some(i);
        }
        let mut output_pos = vec![None; l1.node_capacity()];
        for (j, id) in l1.outputs().iter().enumerate() {
            output_pos[id.index()] = Some(j);
        }
        L1Admissibility {
            target_ancestors: map.targets.iter().map(|&t| l0.ancestors(t)).collect(),
            input_pos,
            output_pos,
            sources: map.sources.clone(),
        }
    }

    fn output_position(&self, id: NodeId) -> Option<usize> {
        self.output_pos.get(id.index()).copied().flatten()
    }

    /// Mask over L1 slots of L1 nodes that carry information from an L0 node
    /// in `forbidden` (an L0-slot mask).
    fn tainted(&self, l1: &Network, forbidden: &[bool]) -> Vec<bool> {
        let mut tainted = vec![false; l1.node_capacity()];
        for &id in l1.topo_order() {
            tainted[id.index()] = match self.input_pos.get(id.index()).copied().flatten() {
                Some(i) => forbidden[self.sources[i].index()],
                None => l1.all_in_edges(id).any(|e| {
                    let src = l1.edge(e).expect("live edge").src;
                    tainted[src.index()]
                }),
            };
        }
        tainted
    }

    fn forbidden_for(&self, l1: &Network, dst: NodeId) -> Vec<bool> {
        let width = self.target_ancestors.first().map_or(0, Vec::len);
        let mut forbidden = vec![false; width];
        let downstream = l1.descendants(dst);
        for (slot, &d) in downstream.iter().enumerate() {
            if !d {
                continue;
            }
            if let Some(j) = self.output_position(NodeId(slot as u64)) {
                for (f, &a) in forbidden.iter_mut().zip(&self.target_ancestors[j]) {
                    *f |= a;
                }
            }
        }
        forbidden
    }

    /// Whether an edge `candidate -> target` may be added to L1, including
    /// the cycle check.
    pub fn admissible(&self, l1: &Network, candidate: NodeId, target: NodeId) -> Result<bool> {
        l1.node(candidate)?;
        l1.node(target)?;
        if l1.would_create_cycle(candidate, target)? {
            return Ok(false);
        }
        Ok(self.allowed_sources(l1, target)[candidate.index()])
    }
}

impl SourceConstraint for L1Admissibility {
    fn allowed_sources(&self, net: &Network, dst: NodeId) -> Vec<bool> {
        let forbidden = self.forbidden_for(net, dst);
        self.tainted(net, &forbidden).into_iter().map(|t| !t).collect()
    }
}

/// Result of one adaptation step of a model.
#[derive(Debug, Clone)]
pub struct ModelStep {
    pub phase: Phase,
    pub report: StepReport,
    /// Set when this step finished the phase.
    pub entered: Option<Phase>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub l0: Network,
    pub l1: Network,
    pub map: Option<L1Map>,
    pub cp: Option<CpStats>,
    pub r_is: Option<f64>,
    pub phase: Phase,
    /// Phases that hit their step limit instead of stabilizing.
    pub forced: Vec<Phase>,
    history: Vec<f64>,
    admissibility: Option<L1Admissibility>,
}

impl Model {
    pub fn new(n_inputs: usize, n_outputs: usize) -> Self {
        Model {
            l0: Network::new(n_inputs, n_outputs),
            l1: Network::new(0, 0),
            map: None,
            cp: None,
            r_is: None,
            phase: Phase::AdaptingL0,
            forced: Vec::new(),
            history: Vec::new(),
            admissibility: None,
        }
    }

    pub fn is_stabilized(&self) -> bool {
        self.phase == Phase::Stabilized
    }

    pub fn admissibility(&self) -> Option<&L1Admissibility> {
        self.admissibility.as_ref()
    }

    /// Builds the (edgeless) predictor over the frozen L0: every L0 node is
    /// an L1 input, every non-output L0 node an L1 target.
    pub fn build_l1(&mut self) {
        let sources: Vec<NodeId> = self.l0.nodes().map(|n| n.id).collect();
        let targets: Vec<NodeId> = self
            .l0
            .nodes()
            .filter(|n| n.kind != NodeKind::Output)
            .map(|n| n.id)
            .collect();
        self.l1 = Network::new(sources.len(), targets.len());
        let map = L1Map { sources, targets };
        self.admissibility = Some(L1Admissibility::new(&self.l0, &self.l1, &map));
        self.map = Some(map);
    }

    /// L1 inputs and targets for a batch: L0 node states, with modulatory
    /// states (which are unbounded) squashed through the logistic so that
    /// L1 sees every node on the same (0, 1) scale as pixels and outputs.
    pub fn l1_io(&self, inputs: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let map = self.map.as_ref().ok_or(Error::NotStabilized)?;
        let act = forward_pass(&self.l0, inputs)?;
        let view = |ids: &[NodeId]| -> Result<Array2<f64>> {
            let mut m = act.select(ids);
            for (j, &id) in ids.iter().enumerate() {
                if self.l0.node(id)?.kind == NodeKind::Modulatory {
                    m.column_mut(j).mapv_inplace(logistic);
                }
            }
            Ok(m)
        };
        Ok((view(&map.sources)?, view(&map.targets)?))
    }

    /// Per-sample, per-target prediction errors of L1.
    pub fn prediction_errors(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (x, actual) = self.l1_io(inputs)?;
        let predicted = forward_pass(&self.l1, x.view())?.outputs(&self.l1);
        Ok(prediction_errors(predicted.view(), actual.view()))
    }

    pub fn l0_outputs(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(forward_pass(&self.l0, inputs)?.outputs(&self.l0))
    }

    pub fn validate_samples(&self, inputs: ArrayView2<f64>, cfg: &PrevalConfig) -> Result<Vec<SampleCheck>> {
        let cp = self.cp.as_ref().ok_or(Error::NotStabilized)?;
        let errors = self.prediction_errors(inputs)?;
        Ok(errors
            .rows()
            .into_iter()
            .map(|row| check_sample(cp, row.as_slice().expect("row-major"), cfg.t_conf, cfg.t_sv))
            .collect())
    }

    pub fn validate_batch(&self, inputs: ArrayView2<f64>, cfg: &PrevalConfig) -> Result<BatchCheck> {
        let r_is = self.r_is.ok_or(Error::NotStabilized)?;
        let samples = self.validate_samples(inputs, cfg)?;
        let degenerate = self.cp.as_ref().is_some_and(CpStats::is_degenerate);
        Ok(check_batch(&samples, r_is, cfg.eps_is, degenerate))
    }

    /// Records CP statistics on `inputs`, prunes L1 down to the pathways of
    /// CP targets and sets the invalid-sample ratio of the batch.
    /// Computes CP statistics on `inputs`, prunes L1 and freezes the model.
    pub fn finalize(&mut self, inputs: ArrayView2<f64>, cfg: &PrevalConfig) -> Result<GenerativeEvent> {
        let errors = self.prediction_errors(inputs)?;
        let stats = cp_stats(errors.view(), cfg.t_cp);
        if stats.is_degenerate() {
            log::warn!("model stabilized without confidently predicted nodes");
        }
        let pruned = prune_l1(&mut self.l1, &stats)?;
        self.cp = Some(stats);
        self.phase = Phase::Stabilized;
        self.history.clear();
        let samples = self.validate_samples(inputs, cfg)?;
        self.r_is = Some(samples.iter().filter(|s| !s.validated).count() as f64 / samples.len().max(1) as f64);
        Ok(pruned)
    }

    /// One adaptation step in the current phase, moving on to the next phase
    /// once the error history has stabilized.
    pub fn adapt<R: Rng + ?Sized>(
        &mut self,
        inputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        growth: &GrowthConfig,
        cfg: &PrevalConfig,
        rng: &mut R,
    ) -> Result<ModelStep> {
        let phase = self.phase;
        let (mut report, limit) = match phase {
            Phase::AdaptingL0 => (
                adaptation_step(&mut self.l0, inputs, targets, growth, None, rng)?,
                cfg.max_l0_steps,
            ),
            Phase::AdaptingL1 => {
                let (x, y) = self.l1_io(inputs)?;
                let constraint = self.admissibility.as_ref().map(|a| a as &dyn SourceConstraint);
                (
                    adaptation_step(&mut self.l1, x.view(), y.view(), growth, constraint, rng)?,
                    cfg.max_l1_steps,
                )
            }
            Phase::Stabilized => return Err(Error::Config("model is already stabilized".into())),
        };
        self.history.push(report.mse);
        let stable = stabilize_check(&self.history, cfg.patience);
        let mut entered = None;
        if stable || self.history.len() >= limit {
            if !stable {
                log::warn!("{phase:?} hit the {limit}-step limit without stabilizing");
                self.forced.push(phase);
            }
            self.history.clear();
            match phase {
                Phase::AdaptingL0 => {
                    self.build_l1();
                    self.phase = Phase::AdaptingL1;
                }
                _ => {
                    let pruned = self.finalize(inputs, cfg)?;
                    report.events.push(pruned);
                }
            }
            entered = Some(self.phase);
        }
        Ok(ModelStep { phase, report, entered })
    }
}

/// Removes every L1 edge and hidden node that does not lie on a path into a
/// CP target, returning what was removed as one event.
pub fn prune_l1(l1: &mut Network, stats: &CpStats) -> Result<GenerativeEvent> {
    let mut useful = vec![false; l1.node_capacity()];
    for (j, &y) in l1.outputs().to_vec().iter().enumerate() {
        if stats.is_cp[j] {
            for (u, a) in useful.iter_mut().zip(l1.ancestors(y)) {
                *u |= a;
            }
        }
    }
    let edges: Vec<_> = l1.edges().filter(|e| !useful[e.dst.index()]).map(|e| e.id).collect();
    for &e in &edges {
        l1.remove_edge(e)?;
    }
    let nodes: Vec<NodeId> = l1
        .nodes()
        .filter(|n| n.kind == NodeKind::Modulatory && !useful[n.id.index()])
        .map(|n| n.id)
        .collect();
    for &n in &nodes {
        l1.remove_node(n)?;
    }
    Ok(GenerativeEvent::new(EventKind::L1Prune, l1.step(), nodes, edges))
}

/// Routing decision for one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchDecision {
    pub route: BatchRoute,
    pub model: usize,
    pub checks: Vec<Option<BatchCheck>>,
}

#[derive(Debug, Clone)]
pub struct PrevalSystem {
    pub models: Vec<Model>,
    pub cfg: PrevalConfig,
    n_inputs: usize,
    n_outputs: usize,
}

impl PrevalSystem {
    pub fn new(n_inputs: usize, n_outputs: usize, cfg: PrevalConfig) -> Self {
        PrevalSystem {
            models: Vec::new(),
            cfg,
            n_inputs,
            n_outputs,
        }
    }

    pub fn adapting(&self) -> Option<usize> {
        self.models.iter().position(|m| !m.is_stabilized())
    }

    /// Picks the model for a training batch, creating a fresh one when no
    /// stabilized model validates it.
    pub fn route_batch(&mut self, inputs: ArrayView2<f64>) -> Result<BatchDecision> {
        let adapting = self.adapting();
        let checks = if adapting.is_some() {
            vec![None; self.models.len()]
        } else {
            self.models
                .iter()
                .map(|m| m.validate_batch(inputs, &self.cfg).map(Some))
                .collect::<Result<Vec<_>>>()?
        };
        let route = decide_batch_route(adapting, &checks);
        let model = match route {
            BatchRoute::Adapting(i) | BatchRoute::Existing(i) => i,
            BatchRoute::New => {
                self.models.push(Model::new(self.n_inputs, self.n_outputs));
                self.models.len() - 1
            }
        };
        Ok(BatchDecision { route, model, checks })
    }

    /// Per-sample model choice at deployment.
    pub fn route_samples(&self, inputs: ArrayView2<f64>) -> Result<Vec<usize>> {
        if self.models.is_empty() {
            return Err(Error::EmptySystem);
        }
        let per_model = self
            .models
            .iter()
            .map(|m| m.validate_samples(inputs, &self.cfg))
            .collect::<Result<Vec<_>>>()?;
        (0..inputs.nrows())
            .map(|s| {
                let checks: Vec<SampleCheck> = per_model.iter().map(|c| c[s]).collect();
                decide_sample_route(&checks)
            })
            .collect()
    }

    pub fn save(&self, dir: &Path, growth: &GrowthConfig) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (i, m) in self.models.iter().enumerate() {
            let l0_file = format!("model_{i}_l0.json");
            let l1_file = format!("model_{i}_l1.json");
            std::fs::write(dir.join(&l0_file), m.l0.to_json()?)?;
            std::fs::write(dir.join(&l1_file), m.l1.to_json()?)?;
            entries.push(ManifestModel {
                l0: l0_file,
                l1: l1_file,
                phase: m.phase,
                map: m.map.clone(),
                cp: m.cp.clone(),
                r_is: m.r_is,
                forced: m.forced.clone(),
            });
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            n_inputs: self.n_inputs,
            n_outputs: self.n_outputs,
            preval: self.cfg.clone(),
            growth: growth.clone(),
            models: entries,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, GrowthConfig)> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
            return Err(Error::Document(format!(
                "expected {MANIFEST_FORMAT} v{MANIFEST_VERSION}, found {} v{}",
                manifest.format, manifest.version
            )));
        }
        let mut models = Vec::new();
        for e in manifest.models {
            let l0 = Network::from_json(&std::fs::read_to_string(dir.join(&e.l0))?)?;
            let l1 = Network::from_json(&std::fs::read_to_string(dir.join(&e.l1))?)?;
            let admissibility = e.map.as_ref().map(|map| L1Admissibility::new(&l0, &l1, map));
            models.push(Model {
                l0,
                l1,
                map: e.map,
                cp: e.cp,
                r_is: e.r_is,
                phase: e.phase,
                forced: e.forced,
                history: Vec::new(),
                admissibility,
            });
        }
        let system = PrevalSystem {
            models,
            cfg: manifest.preval,
            n_inputs: manifest.n_inputs,
            n_outputs: manifest.n_outputs,
        };
        Ok((system, manifest.growth))
    }
}

pub const MANIFEST_FORMAT: &str = "dirad-registry";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestModel {
    l0: String,
    l1: String,
    phase: Phase,
    map: Option<L1Map>,
    cp: Option<CpStats>,
    r_is: Option<f64>,
    #[serde(default)]
    forced: Vec<Phase>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    n_inputs: usize,
    n_outputs: usize,
    preval: PrevalConfig,
    growth: GrowthConfig,
    models: Vec<ManifestModel>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Term;
    use ndarray::array;

    #[test]
    fn stabilization_examples() {
        let decreasing: Vec<f64> = (0..100).map(|i| 1.0 / (i + 1) as f64).collect();
        assert!(!stabilize_check(&decreasing, 50));
        assert!(stabilize_check(&[0.3; 51], 50));
        assert!(!stabilize_check(&[0.3; 50], 50));
        let mut h = vec![0.3; 51];
        h[49] = 0.2;
        assert!(!stabilize_check(&h, 50));
    }

    #[test]
    fn cp_threshold_is_strict() {
        let errors = array![[0.04, 0.05, 0.2], [0.04, 0.05, 0.0]];
        let s = cp_stats(errors.view(), 0.05);
        assert_eq!(s.is_cp, vec![true, false, false]);
        assert!((s.std[2] - 0.1).abs() < 1e-15);
        assert_eq!(s.std[0], 0.0);
    }

    fn stats(n: usize) -> CpStats {
        CpStats {
            mean: vec![0.02; n],
            std: vec![0.0; n],
            is_cp: vec![true; n],
        }
    }

    #[test]
    fn sample_validation_examples() {
        let s = stats(100);
        let at_mean = vec![0.02; 100];
        assert_eq!(
            check_sample(&s, &at_mean, 1.5, 0.01),
            SampleCheck {
                validated: true,
                conflict_ratio: 0.0
            }
        );
        let mut two = at_mean.clone();
        two[3] = 0.5;
        two[70] = 0.5;
        let c = check_sample(&s, &two, 1.5, 0.01);
        assert_eq!(c.conflict_ratio, 0.02);
        assert!(!c.validated);
        let mut tiny = at_mean.clone();
        tiny[0] = 0.02 + 1e-9;
        assert_eq!(check_sample(&s, &tiny, 1.5, 0.01).conflict_ratio, 0.01);
        let none = CpStats {
            is_cp: vec![false; 100],
            ..stats(100)
        };
        assert_eq!(
            check_sample(&none, &at_mean, 1.5, 0.01),
            SampleCheck {
                validated: false,
                conflict_ratio: 1.0
            }
        );
    }

    fn samples(invalid: usize, total: usize) -> Vec<SampleCheck> {
        (0..total)
            .map(|i| SampleCheck {
                validated: i >= invalid,
                conflict_ratio: 0.0,
            })
            .collect()
    }

    #[test]
    fn batch_validation_examples() {
        assert!(check_batch(&samples(6, 100), 0.05, 0.2, false).validated);
        assert!(!check_batch(&samples(7, 100), 0.05, 0.2, false).validated);
        assert!(!check_batch(&samples(1, 100), 0.0, 0.2, false).validated);
        assert!(check_batch(&samples(0, 100), 0.0, 0.2, false).validated);
    }

    #[test]
    fn routing_examples() {
        let ok = |r| {
            Some(BatchCheck {
                validated: true,
                invalid_ratio: r,
            })
        };
        assert_eq!(decide_batch_route(Some(1), &[ok(0.0), None]), BatchRoute::Adapting(1));
        assert_eq!(decide_batch_route(None, &[ok(0.01), ok(0.03)]), BatchRoute::Existing(0));
        assert_eq!(decide_batch_route(None, &[ok(0.03), ok(0.01)]), BatchRoute::Existing(1));
        assert_eq!(decide_batch_route(None, &[]), BatchRoute::New);
        let s = |v, r| SampleCheck {
            validated: v,
            conflict_ratio: r,
        };
        assert_eq!(decide_sample_route(&[s(false, 0.4)]).unwrap(), 0);
        assert_eq!(decide_sample_route(&[s(true, 0.0), s(true, 0.4)]).unwrap(), 0);
        assert_eq!(decide_sample_route(&[s(false, 0.0), s(true, 0.005)]).unwrap(), 1);
        assert!(decide_sample_route(&[]).is_err());
    }

    fn chain_model() -> Model {
        // x0 -> h -> y, x1 unconnected.
        let mut m = Model::new(2, 1);
        let (x0, y) = (m.l0.inputs()[0], m.l0.outputs()[0]);
        let h = m.l0.insert_node(NodeKind::Modulatory);
        m.l0.insert_edge(x0, h, Term::Zero, 1.0).unwrap();
        m.l0.insert_edge(h, y, Term::Zero, 1.0).unwrap();
        m.build_l1();
        m
    }

    fn l1_of(m: &Model, l0: NodeId) -> (Option<NodeId>, Option<NodeId>) {
        let map = m.map.as_ref().unwrap();
        let src = map.sources.iter().position(|&s| s == l0).map(|i| m.l1.inputs()[i]);
        let dst = map.targets.iter().position(|&s| s == l0).map(|j| m.l1.outputs()[j]);
        (src, dst)
    }

    #[test]
    fn l1_layout() {
        let m = chain_model();
        assert_eq!(m.l1.inputs().len(), 4);
        assert_eq!(m.l1.outputs().len(), 3);
        assert!(!m.map.as_ref().unwrap().targets.contains(&m.l0.outputs()[0]));
    }

    #[test]
    fn admissibility_examples() {
        let m = chain_model();
        let adm = m.admissibility().unwrap();
        let (x0, x1, y) = (m.l0.inputs()[0], m.l0.inputs()[1], m.l0.outputs()[0]);
        let h = NodeId(3);
        let (y_src, _) = l1_of(&m, y);
        let (x0_src, x0_dst) = l1_of(&m, x0);
        let (x1_src, _) = l1_of(&m, x1);
        let (_, h_dst) = l1_of(&m, h);
        // Output predicts an input.
        assert!(adm.admissible(&m.l1, y_src.unwrap(), x0_dst.unwrap()).unwrap());
        // Self-prediction.
        assert!(!adm.admissible(&m.l1, x0_src.unwrap(), x0_dst.unwrap()).unwrap());
        // Input predicting a node downstream of it.
        assert!(!adm.admissible(&m.l1, x0_src.unwrap(), h_dst.unwrap()).unwrap());
        assert!(adm.admissible(&m.l1, x1_src.unwrap(), h_dst.unwrap()).unwrap());
    }

    #[test]
    fn admissibility_follows_l1_paths() {
        let mut m = chain_model();
        let (x0, y) = (m.l0.inputs()[0], m.l0.outputs()[0]);
        let (x0_src, _) = l1_of(&m, x0);
        let (y_src, _) = l1_of(&m, y);
        let (_, h_dst) = l1_of(&m, NodeId(3));
        let (_, x0_dst) = l1_of(&m, x0);
        // A hidden L1 node fed by x0 inherits x0's restrictions.
        let k = m.l1.insert_node(NodeKind::Modulatory);
        m.l1.insert_edge(x0_src.unwrap(), k, Term::Zero, 1.0).unwrap();
        let adm = m.admissibility().unwrap().clone();
        assert!(!adm.admissible(&m.l1, k, h_dst.unwrap()).unwrap());
        // k2 serves the x0 prediction, so x0 may not feed it.
        let k2 = m.l1.insert_node(NodeKind::Modulatory);
        m.l1.insert_edge(y_src.unwrap(), k2, Term::Zero, 1.0).unwrap();
        m.l1.insert_edge(k2, x0_dst.unwrap(), Term::Zero, 1.0).unwrap();
        assert!(!adm.admissible(&m.l1, x0_src.unwrap(), k2).unwrap());
        assert!(adm.admissible(&m.l1, y_src.unwrap(), h_dst.unwrap()).unwrap());
    }

    #[test]
    fn pruning_keeps_only_cp_pathways() {
        let mut l1 = Network::new(2, 2);
        let (a, b) = (l1.inputs()[0], l1.inputs()[1]);
        let (p, q) = (l1.outputs()[0], l1.outputs()[1]);
        let shared = l1.insert_node(NodeKind::Modulatory);
        let only_q = l1.insert_node(NodeKind::Modulatory);
        l1.insert_edge(a, shared, Term::Zero, 1.0).unwrap();
        l1.insert_edge(shared, p, Term::Zero, 1.0).unwrap();
        l1.insert_edge(shared, q, Term::Zero, 1.0).unwrap();
        l1.insert_edge(b, only_q, Term::Zero, 1.0).unwrap();
        l1.insert_edge(only_q, q, Term::Zero, 1.0).unwrap();
        let stats = CpStats {
            mean: vec![0.0, 0.5],
            std: vec![0.0, 0.0],
            is_cp: vec![true, false],
        };
        let before = forward_pass(&l1, array![[0.3, 0.6]].view()).unwrap().state(p).to_vec();
        let ev = prune_l1(&mut l1, &stats).unwrap();
        assert_eq!(ev.kind, EventKind::L1Prune);
        assert_eq!(ev.nodes, vec![only_q]);
        assert_eq!(ev.edges.len(), 3);
        assert!(l1.contains_node(shared));
        assert!(!l1.contains_node(only_q));
        assert_eq!(l1.edge_count(), 2);
        let after = forward_pass(&l1, array![[0.3, 0.6]].view()).unwrap().state(p).to_vec();
        assert_eq!(before, after);
    }
}
