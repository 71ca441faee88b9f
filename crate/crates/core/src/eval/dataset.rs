//! Attributed graph datasets and their on-disk directory format:
//! `meta.json`, `features.bin` (f64 LE, row-major), `labels.bin` (u32 LE)
//! and `edges.txt`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{GpnError, Result};
use crate::graph::{read_edge_list, write_edge_list, SparseGraph};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: SparseGraph,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        graph: SparseGraph,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            graph,
            features,
            labels,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            name: self.name.clone(),
            num_nodes: self.num_nodes(),
            num_features: self.num_features(),
            num_classes: self.num_classes,
        }
    }

    /// Node indices per class.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (v, &y) in self.labels.iter().enumerate() {
            out[y].push(v);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.graph.num_nodes() != n {
            return Err(GpnError::load(
                "edges",
                format!("graph has {} nodes, labels {n}", self.graph.num_nodes()),
            ));
        }
        if !self.features.is_matrix() || self.features.rows() != n {
            return Err(GpnError::load(
                "features",
                format!("shape {:?} does not match {n} nodes", self.features.shape()),
            ));
        }
        if !self.features.all_finite() {
            return Err(GpnError::load("features", "non-finite value"));
        }
        if self.num_classes == 0 {
            return Err(GpnError::load("num_classes", "must be positive"));
        }
        let mut seen = vec![false; self.num_classes];
        for (v, &y) in self.labels.iter().enumerate() {
            if y >= self.num_classes {
                return Err(GpnError::load(
                    "labels",
                    format!("node {v} has label {y}, only {} classes", self.num_classes),
                ));
            }
            seen[y] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(GpnError::load("labels", format!("class {c} has no nodes")));
        }
        Ok(())
    }

    /// Same dataset with replaced features.
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        Dataset::new(self.name.clone(), self.graph.clone(), features, self.labels.clone(), self.num_classes)
    }

    pub fn with_graph(&self, graph: SparseGraph) -> Result<Self> {
        Dataset::new(self.name.clone(), graph, self.features.clone(), self.labels.clone(), self.num_classes)
    }
}

fn read_file(dir: &Path, file: &str, field: &str) -> Result<Vec<u8>> {
    fs::read(dir.join(file)).map_err(|e| GpnError::load(field, format!("{file}: {e}")))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta_bytes = read_file(dir, "meta.json", "meta")?;
    let meta: DatasetMeta =
        serde_json::from_slice(&meta_bytes).map_err(|e| GpnError::load("meta", e.to_string()))?;
    let (n, d) = (meta.num_nodes, meta.num_features);

    let raw = read_file(dir, "features.bin", "features")?;
    let want = n
        .checked_mul(d)
        .and_then(|k| k.checked_mul(8))
        .ok_or_else(|| GpnError::load("features", "size overflow"))?;
    if raw.len() != want {
        return Err(GpnError::load(
            "features",
            format!("{} bytes, expected 8 * {n} * {d} = {want}", raw.len()),
        ));
    }
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let features = Tensor::new(vec![n, d], values).map_err(|e| GpnError::load("features", e.to_string()))?;

    let raw = read_file(dir, "labels.bin", "labels")?;
    if raw.len() != 4 * n {
        return Err(GpnError::load(
            "labels",
            format!("{} bytes, expected 4 * {n}", raw.len()),
        ));
    }
    let labels: Vec<usize> = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
        .collect();

    let graph = read_edge_list(&dir.join("edges.txt"), n)?;
    Dataset::new(meta.name, graph, features, labels, meta.num_classes)
}

pub fn save_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join("meta.json"), serde_json::to_vec_pretty(&ds.meta())?)?;
    let mut buf = Vec::with_capacity(ds.features.len() * 8);
    for v in ds.features.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join("features.bin"), buf)?;
    let mut buf = Vec::with_capacity(ds.labels.len() * 4);
    for &y in &ds.labels {
        let y = u32::try_from(y).map_err(|_| GpnError::Input(format!("label {y} does not fit in u32")))?;
        buf.extend_from_slice(&y.to_le_bytes());
    }
    fs::write(dir.join("labels.bin"), buf)?;
    write_edge_list(&dir.join("edges.txt"), &ds.graph)
}
