use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One evaluation run: named metrics plus what produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub model: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub metrics: BTreeMap<String, f64>,
    pub runtime_secs: f64,
}

impl ResultRecord {
    pub fn new(experiment: impl Into<String>, model: impl Into<String>, seed: u64, config: serde_json::Value) -> Self {
        ResultRecord {
            experiment: experiment.into(),
            model: model.into(),
            seed,
            config,
            metrics: BTreeMap::new(),
            runtime_secs: 0.0,
        }
    }

    /// Stores a metric; non-finite values are dropped.
    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        if value.is_finite() {
            self.metrics.insert(name.into(), value);
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// Flat table: fixed columns then the union of metric names, sorted.
pub fn records_to_csv(records: &[ResultRecord]) -> String {
    let names: BTreeSet<&str> = records.iter().flat_map(|r| r.metrics.keys().map(String::as_str)).collect();
    let mut out = String::from("experiment,model,seed,runtime_secs");
    for n in &names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{},{}", csv_field(&r.experiment), csv_field(&r.model), r.seed, r.runtime_secs);
        for n in &names {
            out.push(',');
            if let Some(v) = r.metrics.get(*n) {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `results.json` and `results.csv` into `dir`.
pub fn write_results(dir: impl AsRef<Path>, records: &[ResultRecord]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.json"), serde_json::to_vec_pretty(records)?)?;
    std::fs::write(dir.join("results.csv"), records_to_csv(records))?;
    Ok(())
}
