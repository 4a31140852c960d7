#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use dirad::data::{load_mnist, Dataset, Resolution};
use dirad::preval::{BatchCheck, BatchRoute, CpStats, SampleCheck};
use dirad::{Network, NodeId, NodeKind, Term};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random DAG with at most `max_nodes` nodes and at least one node of each
/// kind. Weights are uniform in [-2, 2].
pub fn random_network(seed: u64, max_nodes: usize) -> Network {
    assert!(max_nodes >= 3);
    let mut r = rng(seed);
    let n_in = r.random_range(1..=2.min(max_nodes - 2));
    let n_out = r.random_range(1..=2.min(max_nodes - n_in - 1));
    let n_hidden = r.random_range(1..=max_nodes - n_in - n_out);
    let mut net = Network::new(n_in, n_out);
    for &y in net.outputs().to_vec().iter() {
        net.node_mut(y).unwrap().bias0 = r.random_range(-1.0..1.0);
    }
    let mut hidden = Vec::new();
    for _ in 0..n_hidden {
        let k = net.insert_node(NodeKind::Modulatory);
        let node = net.node_mut(k).unwrap();
        node.bias1 = r.random_range(-1.0..1.0);
        let mag = r.random_range(0.3..2.0);
        node.steepness = if r.random_bool(0.2) { -mag } else { mag };
        hidden.push(k);
    }
    let sources: Vec<NodeId> = net.inputs().iter().chain(&hidden).copied().collect();
    let sinks: Vec<NodeId> = hidden.iter().chain(net.outputs()).copied().collect();
    for &s in &sources {
        for &d in &sinks {
            if s == d || !r.random_bool(0.5) {
                continue;
            }
            let term = if net.node(d).unwrap().kind == NodeKind::Modulatory && r.random_bool(0.4) {
                Term::One
            } else {
                Term::Zero
            };
            let _ = net.insert_edge(s, d, term, r.random_range(-2.0..2.0));
        }
    }
    net
}

pub fn random_matrix(seed: u64, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_fn((rows, cols), |_| r.random_range(lo..hi))
}

/// Independent cycle check by repeated removal of source-free nodes.
pub fn is_acyclic(net: &Network) -> bool {
    let ids: Vec<NodeId> = net.nodes().map(|n| n.id).collect();
    let mut indeg = std::collections::HashMap::new();
    for &id in &ids {
        indeg.insert(id, 0usize);
    }
    for e in net.edges() {
        *indeg.get_mut(&e.dst).unwrap() += 1;
    }
    let mut ready: Vec<NodeId> = ids.iter().copied().filter(|i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(n) = ready.pop() {
        seen += 1;
        for &e in net.out_edges(n) {
            let d = net.edge(e).unwrap().dst;
            let c = indeg.get_mut(&d).unwrap();
            *c -= 1;
            if *c == 0 {
                ready.push(d);
            }
        }
    }
    seen == ids.len()
}

pub fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

pub fn mnist() -> &'static (Dataset, Dataset) {
    static DATA: OnceLock<(Dataset, Dataset)> = OnceLock::new();
    DATA.get_or_init(|| load_mnist(&mnist_dir(), Resolution::Half).expect("data/mnist is part of the repository"))
}

/// Routing written directly from the rule text, sharing no code with the
/// library.
pub mod oracle {
    use super::*;

    pub struct Scenario {
        pub stats: Vec<CpStats>,
        pub r_is: Vec<f64>,
        /// errors[model][sample][target]
        pub errors: Vec<Vec<Vec<f64>>>,
        pub t_conf: f64,
        pub t_sv: f64,
        pub eps_is: f64,
    }

    pub fn sample(s: &Scenario, model: usize, sample: usize) -> SampleCheck {
        let st = &s.stats[model];
        let e = &s.errors[model][sample];
        let cp: Vec<usize> = (0..e.len()).filter(|&j| st.is_cp[j]).collect();
        if cp.is_empty() {
            return SampleCheck {
                validated: false,
                conflict_ratio: 1.0,
            };
        }
        let bad = cp.iter().filter(|&&j| e[j] > st.mean[j] + s.t_conf * st.std[j]).count();
        let ratio = bad as f64 / cp.len() as f64;
        SampleCheck {
            validated: ratio < s.t_sv,
            conflict_ratio: ratio,
        }
    }

    pub fn batch(s: &Scenario, model: usize) -> BatchCheck {
        let n = s.errors[model].len();
        let invalid = (0..n).filter(|&m| !sample(s, model, m).validated).count();
        let ratio = invalid as f64 / n as f64;
        let degenerate = !s.stats[model].is_cp.iter().any(|&c| c);
        BatchCheck {
            validated: !degenerate && ratio <= (1.0 + s.eps_is) * s.r_is[model],
            invalid_ratio: ratio,
        }
    }

    pub fn route_batch(s: &Scenario, adapting: Option<usize>) -> BatchRoute {
        if let Some(i) = adapting {
            return BatchRoute::Adapting(i);
        }
        let mut pick: Option<usize> = None;
        for i in 0..s.stats.len() {
            let c = batch(s, i);
            if !c.validated {
                continue;
            }
            pick = match pick {
                Some(p) if batch(s, p).invalid_ratio <= c.invalid_ratio => Some(p),
                _ => Some(i),
            };
        }
        match pick {
            Some(i) => BatchRoute::Existing(i),
            None => BatchRoute::New,
        }
    }

    pub fn route_sample(s: &Scenario, m: usize) -> usize {
        let checks: Vec<SampleCheck> = (0..s.stats.len()).map(|i| sample(s, i, m)).collect();
        let valid: Vec<usize> = (0..checks.len()).filter(|&i| checks[i].validated).collect();
        let pool: Vec<usize> = if valid.is_empty() {
            (0..checks.len()).collect()
        } else {
            valid
        };
        let best = pool
            .iter()
            .map(|&i| checks[i].conflict_ratio)
            .fold(f64::INFINITY, f64::min);
        *pool.iter().find(|&&i| checks[i].conflict_ratio == best).unwrap()
    }

    /// Random models and errors, biased toward ties and boundary values.
    pub fn random(seed: u64) -> Scenario {
        let mut r = rng(seed);
        let models = r.random_range(1..=4);
        let targets = r.random_range(1..=12);
        let samples = r.random_range(1..=20);
        let grid = [0.0, 0.01, 0.02, 0.05, 0.1];
        let pick = |r: &mut ChaCha8Rng| {
            if r.random_bool(0.5) {
                grid[r.random_range(0..grid.len())]
            } else {
                r.random_range(0.0..0.3)
            }
        };
        let stats: Vec<CpStats> = (0..models)
            .map(|_| CpStats {
                mean: (0..targets).map(|_| pick(&mut r)).collect(),
                std: (0..targets).map(|_| pick(&mut r)).collect(),
                is_cp: (0..targets).map(|_| r.random_bool(0.7)).collect(),
            })
            .collect();
        let errors = (0..models)
            .map(|_| {
                (0..samples)
                    .map(|_| (0..targets).map(|_| pick(&mut r)).collect())
                    .collect()
            })
            .collect();
        let r_is = (0..models)
            .map(|_| [0.0, 0.1, 0.25, 0.5, 1.0][r.random_range(0..5)])
            .collect();
        Scenario {
            stats,
            r_is,
            errors,
            t_conf: 1.5,
            t_sv: [0.01, 0.1, 0.34][r.random_range(0..3)],
            eps_is: 0.2,
        }
    }
}
