//! wasm-bindgen bindings for the static page in `www/`.

use dirad::config::RunConfig;
use dirad::data::make_xor_task;
use dirad::forward::sigma1;
use dirad::harness::run_rng;
use dirad::{adaptation_step, forward_pass, Network};
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Row-major `n x n` grid over `[lo, hi]^2` as (x0, x1) rows, top row first.
fn grid(n: usize, lo: f64, hi: f64) -> Array2<f64> {
    let at = |i: usize| lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64;
    Array2::from_shape_fn((n * n, 2), |(i, j)| if j == 0 { at(i % n) } else { at(n - 1 - i / n) })
}

/// One XOR growth run, advanced from the page.
#[wasm_bindgen]
pub struct XorSession {
    net: Network,
    rng: ChaCha8Rng,
    cfg: RunConfig,
    steps: usize,
    events: usize,
    last_mse: f64,
}

#[wasm_bindgen]
impl XorSession {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> XorSession {
        let cfg = RunConfig::default();
        XorSession {
            net: Network::new(2, 1),
            rng: run_rng(&cfg, seed as u64, 0),
            cfg,
            steps: 0,
            events: 0,
            last_mse: 0.25,
        }
    }

    /// Runs up to `n` adaptation steps, stopping early once every sample is
    /// within tolerance. Returns the status JSON.
    pub fn step(&mut self, n: u32) -> Result<String, JsError> {
        let (x, y) = make_xor_task();
        for _ in 0..n {
            if self.max_error()? < self.cfg.harness.xor_tolerance {
                break;
            }
            let report = adaptation_step(&mut self.net, x.view(), y.view(), &self.cfg.growth, None, &mut self.rng)?;
            self.steps += 1;
            self.events += report.events.len();
            self.last_mse = report.mse;
        }
        self.status()
    }

    /// `{steps, mse, max_error, hidden, edges, events, outputs}`
    pub fn status(&self) -> Result<String, JsError> {
        let (x, _) = make_xor_task();
        let out = forward_pass(&self.net, x.view())?.outputs(&self.net);
        let doc = serde_json::json!({
            "steps": self.steps,
            "mse": self.last_mse,
            "max_error": self.max_error()?,
            "hidden": self.net.hidden_count(),
            "edges": self.net.edge_count(),
            "events": self.events,
            "converged": self.max_error()? < self.cfg.harness.xor_tolerance,
            "outputs": out.iter().collect::<Vec<_>>(),
        });
        Ok(doc.to_string())
    }

    pub fn dot(&self) -> String {
        self.net.to_dot()
    }

    pub fn json(&self) -> Result<String, JsError> {
        Ok(self.net.to_json()?)
    }

    /// Output over an `n x n` grid on `[-1.5, 1.5]^2`, top row first.
    pub fn surface(&self, n: u32) -> Result<Vec<f64>, JsError> {
        let n = n.max(2) as usize;
        let pts = grid(n, -1.5, 1.5);
        Ok(forward_pass(&self.net, pts.view())?
            .outputs(&self.net)
            .iter()
            .copied()
            .collect())
    }

    fn max_error(&self) -> Result<f64, JsError> {
        let (x, y) = make_xor_task();
        let out = forward_pass(&self.net, x.view())?.outputs(&self.net);
        Ok((&out - &y).iter().fold(0.0_f64, |m, e| m.max(e.abs())))
    }
}

/// `n` samples of the modulation transfer for steepness `k` over `[lo, hi]`.
#[wasm_bindgen]
pub fn sigma1_curve(k: f64, lo: f64, hi: f64, n: u32) -> Vec<f64> {
    let n = n.max(2) as usize;
    (0..n)
        .map(|i| sigma1(k, lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}
