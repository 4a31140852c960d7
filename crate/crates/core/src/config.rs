//! Flat `key = value` run configuration.
//!
//! Every field of [`GrowthConfig`], [`PrevalConfig`] and [`HarnessConfig`] is
//! addressed by its bare name; the three structs share no field names. Blank
//! lines and lines starting with `#` are ignored. Values are parsed as JSON
//! scalars, so `0.05`, `2000` and `true` all work.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::growth::GrowthConfig;
use crate::preval::PrevalConfig;

/// Experiment-level knobs that are not part of the growth or PREVAL rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub batch_size: usize,
    /// Cumulative test batch drawn after each task.
    pub test_batch_size: usize,
    /// Rows used to check that frozen models never change.
    pub probe_size: usize,
    pub xor_max_steps: usize,
    /// Every XOR sample must be within this of its target.
    pub xor_tolerance: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            batch_size: 100,
            test_batch_size: 300,
            probe_size: 100,
            xor_max_steps: 2000,
            xor_tolerance: 0.01,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub growth: GrowthConfig,
    pub preval: PrevalConfig,
    pub harness: HarnessConfig,
}

/// Writes `value` into `target.key` through its serde form. Returns whether
/// the struct has such a field.
fn assign<T: Serialize + DeserializeOwned>(target: &mut T, key: &str, value: &Value) -> Result<bool> {
    let mut doc = serde_json::to_value(&*target)?;
    let Some(map) = doc.as_object_mut() else {
        return Ok(false);
    };
    if !map.contains_key(key) {
        return Ok(false);
    }
    map.insert(key.to_string(), value.clone());
    *target = serde_json::from_value(doc).map_err(|e| Error::Config(format!("{key}: {e}")))?;
    Ok(true)
}

fn fields<T: Serialize>(section: &T) -> Vec<(String, Value)> {
    match serde_json::to_value(section) {
        Ok(Value::Object(map)) => map.into_iter().collect(),
        _ => Vec::new(),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one field by name. Used both by the file parser and for
    /// command-line overrides.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let value = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        if assign(&mut self.growth, key, &value)?
            || assign(&mut self.preval, key, &value)?
            || assign(&mut self.harness, key, &value)?
        {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown key `{key}`")))
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.growth.validate()?;
        self.preval.validate()?;
        let h = &self.harness;
        if h.batch_size == 0 || h.test_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if h.xor_tolerance.is_nan() || h.xor_tolerance <= 0.0 {
            return Err(Error::Config("xor_tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Renders every key, in a form [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (title, entries) in [
            ("growth", fields(&self.growth)),
            ("preval", fields(&self.preval)),
            ("harness", fields(&self.harness)),
        ] {
            out.push_str(&format!("# {title}\n"));
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }
}
