//! Experiment drivers (XOR, single-task and continual MNIST) plus the
//! metrics and files they leave behind.
//!
//! A run directory holds `result.json`, `metrics.csv` (one row per
//! adaptation step), `events.jsonl` (one structural event per line),
//! `config.txt` and `net_<model>_<layer>.dot` for every network.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{make_xor_task, sample_batch, Batch, Dataset, RunPlan};
use crate::error::{Error, Result};
use crate::forward::forward_pass;
use crate::growth::{adaptation_step, EventKind, GenerativeEvent, StepReport};
use crate::network::Network;
use crate::preval::{BatchRoute, Model, Phase, PrevalSystem};

/// Largest probe deviation a generative event may cause.
pub const NEUTRALITY_TOLERANCE: f64 = 1e-9;

const TRAIN_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;

/// Per-run generator. Training and evaluation draw from separate streams so
/// that changing the test protocol never perturbs adaptation.
pub fn run_rng(cfg: &RunConfig, seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.growth.rng_seed.wrapping_add(seed));
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub seed: u64,
    pub task: usize,
    pub model: usize,
    pub phase: Phase,
    pub step: u64,
    pub mse: f64,
    pub mean_abs_error: f64,
    pub hidden_nodes: usize,
    pub edges: usize,
    pub events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seed: u64,
    pub model: usize,
    pub phase: Phase,
    #[serde(flatten)]
    pub event: GenerativeEvent,
}

#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub rows: Vec<StepRow>,
    pub events: Vec<EventRecord>,
}

impl RunLog {
    pub fn record(&mut self, seed: u64, task: usize, model: usize, phase: Phase, report: &StepReport) {
        self.rows.push(StepRow {
            seed,
            task,
            model,
            phase,
            step: report.step,
            mse: report.mse,
            mean_abs_error: report.mean_abs_error(),
            hidden_nodes: report.hidden_nodes,
            edges: report.edges,
            events: report.events.len(),
        });
        self.events.extend(report.events.iter().map(|e| EventRecord {
            seed,
            model,
            phase,
            event: e.clone(),
        }));
    }

    pub fn append(&mut self, other: RunLog) {
        self.rows.extend(other.rows);
        self.events.extend(other.events);
    }

    pub fn write_metrics(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_events(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn read_events(path: &Path) -> Result<Vec<EventRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Document(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

/// What an event log says about neutrality.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub counts: BTreeMap<String, usize>,
    /// EdgeGen and ENC events carrying an audit.
    pub audited: usize,
    pub unaudited: usize,
    pub max_output_deviation: f64,
    pub max_state_deviation: f64,
    pub enc_audited: usize,
    pub max_delta_transfer_deviation: f64,
    /// Audited events above [`NEUTRALITY_TOLERANCE`] on any measure.
    pub violations: usize,
}

pub fn kind_name(kind: EventKind) -> String {
    match serde_json::to_value(kind) {
        Ok(serde_json::Value::String(s)) => s,
        _ => format!("{kind:?}"),
    }
}

pub fn summarize_events<'a>(events: impl IntoIterator<Item = &'a GenerativeEvent>) -> AuditSummary {
    let mut s = AuditSummary::default();
    for e in events {
        *s.counts.entry(kind_name(e.kind)).or_default() += 1;
        if !matches!(e.kind, EventKind::EdgeGen | EventKind::Enc) {
            continue;
        }
        let Some(a) = &e.audit else {
            s.unaudited += 1;
            continue;
        };
        s.audited += 1;
        let out_dev = a
            .probe_outputs_pre
            .iter()
            .zip(&a.probe_outputs_post)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        s.max_output_deviation = s.max_output_deviation.max(out_dev);
        s.max_state_deviation = s.max_state_deviation.max(a.max_state_deviation);
        let mut bad = out_dev > NEUTRALITY_TOLERANCE
            || a.max_state_deviation > NEUTRALITY_TOLERANCE
            || a.probe_outputs_pre.len() != a.probe_outputs_post.len();
        if e.kind == EventKind::Enc {
            s.enc_audited += 1;
            match a.delta_transfer_deviation {
                Some(d) => {
                    s.max_delta_transfer_deviation = s.max_delta_transfer_deviation.max(d);
                    bad |= d > NEUTRALITY_TOLERANCE;
                }
                None => bad = true,
            }
        }
        s.violations += bad as usize;
    }
    s
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax output equals the label.
pub fn classification_accuracy(outputs: ArrayView2<f64>, labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = outputs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(r, &l)| argmax(*r) == l as usize)
        .count();
    hits as f64 / labels.len() as f64
}

/// Writes the standard run files into `dir`.
pub fn write_run_dir<T: Serialize>(
    dir: &Path,
    result: &T,
    log: &RunLog,
    nets: &[(String, &Network)],
    cfg: &RunConfig,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("result.json"), serde_json::to_string_pretty(result)?)?;
    std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    log.write_metrics(&dir.join("metrics.csv"))?;
    log.write_events(&dir.join("events.jsonl"))?;
    for (name, net) in nets {
        std::fs::write(dir.join(format!("net_{name}.dot")), net.to_dot())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XorResult {
    pub seed: u64,
    pub converged: bool,
    /// Adaptation steps taken.
    pub steps: usize,
    pub hidden_nodes: usize,
    pub edges: usize,
    pub outputs: Vec<f64>,
    pub max_error: f64,
}

fn xor_error(net: &Network, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(Vec<f64>, f64)> {
    let out = forward_pass(net, x)?.outputs(net);
    let max = (&out - &y).iter().fold(0.0_f64, |m, e| m.max(e.abs()));
    Ok((out.iter().copied().collect(), max))
}

/// Grows a fresh 2-1 network on the four XOR samples until every output is
/// within tolerance or the step budget runs out.
pub fn run_xor(seed: u64, cfg: &RunConfig) -> Result<(XorResult, Network, RunLog)> {
    let (x, y) = make_xor_task();
    let mut net = Network::new(2, 1);
    let mut rng = run_rng(cfg, seed, TRAIN_STREAM);
    let mut log = RunLog::default();
    let mut steps = 0;
    let (mut outputs, mut max_error) = xor_error(&net, x.view(), y.view())?;
    while max_error >= cfg.harness.xor_tolerance && steps < cfg.harness.xor_max_steps {
        let report = adaptation_step(&mut net, x.view(), y.view(), &cfg.growth, None, &mut rng)?;
        log.record(seed, 0, 0, Phase::AdaptingL0, &report);
        steps += 1;
        (outputs, max_error) = xor_error(&net, x.view(), y.view())?;
    }
    let result = XorResult {
        seed,
        converged: max_error < cfg.harness.xor_tolerance,
        steps,
        hidden_nodes: net.hidden_count(),
        edges: net.edge_count(),
        outputs,
        max_error,
    };
    Ok((result, net, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleTaskResult {
    pub seed: u64,
    pub classes: [u8; 2],
    pub l0_steps: usize,
    pub l1_steps: usize,
    pub test_accuracy: f64,
    pub l0_hidden: usize,
    pub l0_edges: usize,
    /// Mean squared output error on the last L0 batch.
    pub l0_final_error: f64,
    /// After pruning.
    pub l1_hidden: usize,
    pub l1_edges: usize,
    /// Mean squared prediction error per target on the last L1 batch.
    pub l1_final_error: f64,
    pub l1_targets: usize,
    pub cp_nodes: usize,
    pub r_is: f64,
    pub forced: Vec<Phase>,
}

struct TrainStats {
    l0_steps: usize,
    l1_steps: usize,
    l0_error: f64,
    l1_error: f64,
}

impl TrainStats {
    fn new() -> Self {
        TrainStats {
            l0_steps: 0,
            l1_steps: 0,
            l0_error: f64::NAN,
            l1_error: f64::NAN,
        }
    }

    fn note(&mut self, phase: Phase, report: &StepReport) {
        match phase {
            Phase::AdaptingL0 => {
                self.l0_steps += 1;
                self.l0_error = report.mse;
            }
            _ => {
                self.l1_steps += 1;
                self.l1_error = report.mse;
            }
        }
    }
}

/// Trains one model on one task, L0 then L1, until it freezes.
pub fn run_single_task(
    train: &Dataset,
    test: &Dataset,
    classes: [u8; 2],
    seed: u64,
    cfg: &RunConfig,
) -> Result<(SingleTaskResult, Model, RunLog)> {
    let mut rng = run_rng(cfg, seed, TRAIN_STREAM);
    let mut eval_rng = run_rng(cfg, seed, EVAL_STREAM);
    let mut model = Model::new(train.width(), crate::data::N_CLASSES);
    let mut log = RunLog::default();
    let mut stats = TrainStats::new();
    while !model.is_stabilized() {
        let batch = sample_batch(train, &classes, cfg.harness.batch_size, &mut rng)?;
        let step = model.adapt(
            batch.inputs.view(),
            batch.targets.view(),
            &cfg.growth,
            &cfg.preval,
            &mut rng,
        )?;
        log.record(seed, 0, 0, step.phase, &step.report);
        stats.note(step.phase, &step.report);
    }
    let tb = sample_batch(test, &classes, cfg.harness.test_batch_size, &mut eval_rng)?;
    let outputs = model.l0_outputs(tb.inputs.view())?;
    let cp = model.cp.as_ref().ok_or(Error::NotStabilized)?;
    let result = SingleTaskResult {
        seed,
        classes,
        l0_steps: stats.l0_steps,
        l1_steps: stats.l1_steps,
        test_accuracy: classification_accuracy(outputs.view(), &tb.labels),
        l0_hidden: model.l0.hidden_count(),
        l0_edges: model.l0.edge_count(),
        l0_final_error: stats.l0_error,
        l1_hidden: model.l1.hidden_count(),
        l1_edges: model.l1.edge_count(),
        l1_final_error: stats.l1_error,
        l1_targets: cp.is_cp.len(),
        cp_nodes: cp.cp_count(),
        r_is: model.r_is.unwrap_or(f64::NAN),
        forced: model.forced.clone(),
    };
    Ok((result, model, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: u8,
    /// True-positive rate within this class.
    pub accuracy: f64,
}

/// Scores after one task, on a balanced batch over every class seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub task: usize,
    pub classes: [u8; 2],
    /// Whether the task's first batch failed to validate on every frozen
    /// model, so a new model was trained for it.
    pub detected: bool,
    pub model: Option<usize>,
    pub steps: usize,
    pub per_class: Vec<ClassAccuracy>,
    /// Mean of `per_class`.
    pub net_accuracy: f64,
    /// Test samples routed to each model.
    pub routed: Vec<usize>,
}

impl TaskEval {
    /// An evaluation from per-class scores alone, as published tables give.
    pub fn from_scores(task: usize, classes: [u8; 2], scores: &[(u8, f64)]) -> Self {
        let per_class: Vec<ClassAccuracy> = scores
            .iter()
            .map(|&(class, accuracy)| ClassAccuracy { class, accuracy })
            .collect();
        TaskEval {
            task,
            classes,
            detected: true,
            model: None,
            steps: 0,
            net_accuracy: mean(per_class.iter().map(|c| c.accuracy)).unwrap_or(0.0),
            per_class,
            routed: Vec::new(),
        }
    }

    /// Mean accuracy over `classes`, if all of them were scored.
    pub fn accuracy_on(&self, classes: &[u8]) -> Option<f64> {
        let vals: Option<Vec<f64>> = classes
            .iter()
            .map(|c| self.per_class.iter().find(|p| p.class == *c).map(|p| p.accuracy))
            .collect();
        mean(vals?.into_iter())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub t_cp: f64,
    pub tasks: Vec<[u8; 2]>,
    pub evals: Vec<TaskEval>,
    /// Some task was never detected as new.
    pub nd: bool,
    pub models: usize,
    /// Every frozen model gave bit-identical probe outputs at the end.
    pub frozen_probe_identical: bool,
    /// (model, phase) pairs that hit their step limit.
    pub forced: Vec<(usize, Phase)>,
}

impl RunResult {
    pub fn from_evals(seed: u64, t_cp: f64, evals: Vec<TaskEval>) -> Self {
        RunResult {
            seed,
            t_cp,
            tasks: evals.iter().map(|e| e.classes).collect(),
            nd: evals.iter().any(|e| !e.detected),
            models: evals.iter().filter(|e| e.detected).count(),
            evals,
            frozen_probe_identical: true,
            forced: Vec::new(),
        }
    }

    /// Accuracy on task `task`'s classes, measured after task `after`.
    pub fn task_accuracy(&self, task: usize, after: usize) -> Option<f64> {
        self.evals.get(after)?.accuracy_on(&self.tasks[task])
    }
}

/// L0 and L1 outputs of a model on the probe, flattened.
fn fingerprint(model: &Model, probe: ArrayView2<f64>) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = model.l0_outputs(probe)?.iter().copied().collect();
    let (x, _) = model.l1_io(probe)?;
    out.extend(forward_pass(&model.l1, x.view())?.outputs(&model.l1).iter());
    Ok(out)
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits())
}

/// Scores every sample with the model PREVAL routes it to.
fn evaluate(system: &PrevalSystem, batch: &Batch, seen: &[u8]) -> Result<(Vec<ClassAccuracy>, Vec<usize>)> {
    let routes = system.route_samples(batch.inputs.view())?;
    let outputs: Vec<Array2<f64>> = system
        .models
        .iter()
        .map(|m| m.l0_outputs(batch.inputs.view()))
        .collect::<Result<_>>()?;
    let mut hits = BTreeMap::<u8, (usize, usize)>::new();
    let mut routed = vec![0; system.models.len()];
    for (i, (&label, &m)) in batch.labels.iter().zip(&routes).enumerate() {
        routed[m] += 1;
        let e = hits.entry(label).or_default();
        e.1 += 1;
        e.0 += (argmax(outputs[m].row(i)) == label as usize) as usize;
    }
    let per_class = seen
        .iter()
        .map(|&c| {
            let (h, n) = hits.get(&c).copied().unwrap_or((0, 0));
            ClassAccuracy {
                class: c,
                accuracy: if n == 0 { 0.0 } else { h as f64 / n as f64 },
            }
        })
        .collect();
    Ok((per_class, routed))
}

/// Class-incremental run without task labels: each task's batches go
/// through PREVAL routing, a new model grows when none validates them, and
/// after each task the whole system is scored on every class seen so far.
pub fn run_continual(
    train: &Dataset,
    test: &Dataset,
    plan: &RunPlan,
    cfg: &RunConfig,
) -> Result<(RunResult, PrevalSystem, RunLog)> {
    let seed = plan.seed;
    let mut rng = run_rng(cfg, seed, TRAIN_STREAM);
    let mut eval_rng = run_rng(cfg, seed, EVAL_STREAM);
    let probe_rows = index::sample(&mut eval_rng, test.len(), cfg.harness.probe_size.min(test.len())).into_vec();
    let probe = test.gather(&probe_rows).inputs;

    let mut system = PrevalSystem::new(train.width(), crate::data::N_CLASSES, cfg.preval.clone());
    let mut log = RunLog::default();
    let mut snapshots: Vec<Vec<f64>> = Vec::new();
    let mut evals = Vec::new();

    for (task, &classes) in plan.tasks.iter().enumerate() {
        let mut steps = 0;
        let mut trained = None;
        loop {
            let batch = sample_batch(train, &classes, cfg.harness.batch_size, &mut rng)?;
            let decision = system.route_batch(batch.inputs.view())?;
            let i = match decision.route {
                BatchRoute::Existing(_) => break,
                BatchRoute::Adapting(_) | BatchRoute::New => decision.model,
            };
            trained = Some(i);
            let model = &mut system.models[i];
            let step = model.adapt(
                batch.inputs.view(),
                batch.targets.view(),
                &cfg.growth,
                &cfg.preval,
                &mut rng,
            )?;
            log.record(seed, task, i, step.phase, &step.report);
            steps += 1;
            if step.entered == Some(Phase::Stabilized) {
                snapshots.push(fingerprint(model, probe.view())?);
                break;
            }
        }
        let seen = plan.seen_classes(task);
        let tb = sample_batch(test, &seen, cfg.harness.test_batch_size, &mut eval_rng)?;
        let (per_class, routed) = evaluate(&system, &tb, &seen)?;
        evals.push(TaskEval {
            task,
            classes,
            detected: trained.is_some(),
            model: trained,
            steps,
            net_accuracy: mean(per_class.iter().map(|c| c.accuracy)).unwrap_or(0.0),
            per_class,
            routed,
        });
    }

    let mut frozen = snapshots.len() == system.models.len();
    for (m, snap) in system.models.iter().zip(&snapshots) {
        frozen &= same_bits(snap, &fingerprint(m, probe.view())?);
    }
    let forced = system
        .models
        .iter()
        .enumerate()
        .flat_map(|(i, m)| m.forced.iter().map(move |p| (i, *p)))
        .collect();
    let result = RunResult {
        seed,
        t_cp: cfg.preval.t_cp,
        tasks: plan.tasks.clone(),
        nd: evals.iter().any(|e| !e.detected),
        models: system.models.len(),
        evals,
        frozen_probe_identical: frozen,
        forced,
    };
    Ok((result, system, log))
}

/// DOT names for every network in a system: `<model>_l0`, `<model>_l1`.
pub fn system_networks(system: &PrevalSystem) -> Vec<(String, &Network)> {
    system
        .models
        .iter()
        .enumerate()
        .flat_map(|(i, m)| [(format!("{i}_l0"), &m.l0), (format!("{i}_l1"), &m.l1)])
        .collect()
}

/// One row of the net-accuracy table: mean accuracy after each task over
/// all runs and over runs where every task was detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub t_cp: f64,
    pub runs: usize,
    pub nd: usize,
    pub mean: Vec<f64>,
    pub mean_detected: Vec<Option<f64>>,
}

pub fn accuracy_table(results: &[RunResult]) -> AccuracyRow {
    let tasks = results.iter().map(|r| r.evals.len()).min().unwrap_or(0);
    let col = |x: usize, detected_only: bool| {
        mean(
            results
                .iter()
                .filter(|r| !detected_only || !r.nd)
                .map(|r| r.evals[x].net_accuracy),
        )
    };
    AccuracyRow {
        t_cp: results.first().map_or(f64::NAN, |r| r.t_cp),
        runs: results.len(),
        nd: results.iter().filter(|r| r.nd).count(),
        mean: (0..tasks).map(|x| col(x, false).unwrap_or(f64::NAN)).collect(),
        mean_detected: (0..tasks).map(|x| col(x, true)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllRatio {
    /// Zero-based index of the task just introduced.
    pub after: usize,
    pub mean: Option<f64>,
    pub mean_detected: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRatio {
    pub task: usize,
    pub after: usize,
    pub mean: Option<f64>,
    /// Runs that contributed (those with a zero "before" value are dropped).
    pub runs: usize,
}

/// Retention: how much accuracy survives each new task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub t_cp: f64,
    pub all: Vec<AllRatio>,
    pub tasks: Vec<TaskRatio>,
}

/// `ALL+Y` is net accuracy after task `Y` over net accuracy after `Y-1`;
/// `TX+Y` is accuracy on task `X`'s classes after `Y` over the same just
/// before `Y`. Ratios with a zero denominator are left out.
pub fn compute_retention(results: &[RunResult]) -> Retention {
    let tasks = results.iter().map(|r| r.evals.len()).min().unwrap_or(0);
    let ratio = |num: Option<f64>, den: Option<f64>| match (num, den) {
        (Some(n), Some(d)) if d != 0.0 => Some(n / d),
        _ => None,
    };
    let all = (1..tasks)
        .map(|y| {
            let per_run = |r: &RunResult| ratio(Some(r.evals[y].net_accuracy), Some(r.evals[y - 1].net_accuracy));
            AllRatio {
                after: y,
                mean: mean(results.iter().filter_map(per_run)),
                mean_detected: mean(results.iter().filter(|r| !r.nd).filter_map(per_run)),
            }
        })
        .collect();
    let mut cells = Vec::new();
    for x in 0..tasks {
        for y in x + 1..tasks {
            let vals: Vec<f64> = results
                .iter()
                .filter_map(|r| ratio(r.task_accuracy(x, y), r.task_accuracy(x, y - 1)))
                .collect();
            cells.push(TaskRatio {
                task: x,
                after: y,
                runs: vals.len(),
                mean: mean(vals.into_iter()),
            });
        }
    }
    Retention {
        t_cp: results.first().map_or(f64::NAN, |r| r.t_cp),
        all,
        tasks: cells,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.4}"))
}

/// Net-accuracy table, one row per T_CP: `t_cp,T1..,T1_detected..,nd`.
pub fn write_accuracy_csv(path: &Path, rows: &[AccuracyRow]) -> Result<()> {
    let tasks = rows.iter().map(|r| r.mean.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t_cp".to_string()];
    header.extend((1..=tasks).map(|x| format!("T{x}")));
    header.extend((1..=tasks).map(|x| format!("T{x}_detected")));
    header.push("nd".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![format!("{}", r.t_cp)];
        rec.extend((0..tasks).map(|x| cell(r.mean.get(x).copied())));
        rec.extend((0..tasks).map(|x| cell(r.mean_detected.get(x).copied().flatten())));
        rec.push(format!("{}/{}", r.nd, r.runs));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Retention table, one row per T_CP: `ALL+Y`, `ALL+Y_detected`, `TX+Y`.
pub fn write_retention_csv(path: &Path, rows: &[Retention]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let Some(first) = rows.first() else {
        w.flush()?;
        return Ok(());
    };
    let mut header = vec!["t_cp".to_string()];
    for a in &first.all {
        header.push(format!("ALL+{}", a.after + 1));
        header.push(format!("ALL+{}_detected", a.after + 1));
    }
    header.extend(first.tasks.iter().map(|t| format!("T{}+{}", t.task + 1, t.after + 1)));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![format!("{}", r.t_cp)];
        for a in &r.all {
            rec.push(cell(a.mean));
            rec.push(cell(a.mean_detected));
        }
        rec.extend(r.tasks.iter().map(|t| cell(t.mean)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
