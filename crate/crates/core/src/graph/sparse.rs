use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{GpnError, Result};

/// Undirected, unweighted graph in compressed-row form.
///
/// Every edge is stored in both directions, neighbor lists are sorted and
/// free of duplicates, and self-loops are never stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseGraph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl SparseGraph {
    /// Symmetrizes, deduplicates and strips self-loops from `edges`.
    pub fn from_edge_list(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GpnError::Input(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            if u != v {
                set.insert((u, v));
                set.insert((v, u));
            }
        }
        Ok(Self::from_sorted_directed(num_nodes, set.into_iter()))
    }

    /// Builds from directed pairs already sorted by `(row, col)`, deduplicated,
    /// and closed under reversal.
    fn from_sorted_directed(num_nodes: usize, pairs: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut row_offsets = vec![0; num_nodes + 1];
        let mut col_indices = Vec::new();
        for (u, v) in pairs {
            row_offsets[u + 1] += 1;
            col_indices.push(v);
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        SparseGraph {
            num_nodes,
            row_offsets,
            col_indices,
        }
    }

    /// Builds from undirected pairs `(u, v)` with `u < v`.
    pub(crate) fn from_undirected_set(num_nodes: usize, edges: &BTreeSet<(usize, usize)>) -> Self {
        let directed: BTreeSet<(usize, usize)> =
            edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
        Self::from_sorted_directed(num_nodes, directed.into_iter())
    }

    pub fn empty(num_nodes: usize) -> Self {
        SparseGraph {
            num_nodes,
            row_offsets: vec![0; num_nodes + 1],
            col_indices: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.col_indices.len() / 2
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[v]..self.row_offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.row_offsets[v + 1] - self.row_offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes && v < self.num_nodes && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in row order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes)
            .flat_map(|u| self.neighbors(u).iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
            .collect()
    }

    pub(crate) fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges().into_iter().collect()
    }

    /// Checks the structural invariants; used by tests and after loading.
    pub fn validate(&self) -> Result<()> {
        if self.row_offsets.len() != self.num_nodes + 1
            || self.row_offsets[self.num_nodes] != self.col_indices.len()
        {
            return Err(GpnError::Input("row offsets inconsistent".into()));
        }
        for u in 0..self.num_nodes {
            let nbrs = self.neighbors(u);
            if nbrs.windows(2).any(|w| w[0] >= w[1]) {
                return Err(GpnError::Input(format!("row {u} not strictly sorted")));
            }
            for &v in nbrs {
                if v == u {
                    return Err(GpnError::Input(format!("self-loop at {u}")));
                }
                if !self.has_edge(v, u) {
                    return Err(GpnError::Input(format!("edge ({u}, {v}) has no reverse")));
                }
            }
        }
        Ok(())
    }

    /// Fraction of edges joining nodes with the same label; 1 for edgeless graphs.
    pub fn homophily(&self, labels: &[usize]) -> f64 {
        let edges = self.edges();
        if edges.is_empty() {
            return 1.0;
        }
        let intra = edges.iter().filter(|(u, v)| labels[*u] == labels[*v]).count();
        intra as f64 / edges.len() as f64
    }
}

/// Parses a whitespace-separated `u v` edge list. Blank lines and everything
/// after `#` are ignored.
pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<usize> {
            tok.and_then(|t| t.parse().ok()).ok_or_else(|| {
                GpnError::load("edges", format!("line {}: expected `u v`, got `{raw}`", lineno + 1))
            })
        };
        let u = parse(it.next())?;
        let v = parse(it.next())?;
        if it.next().is_some() {
            return Err(GpnError::load(
                "edges",
                format!("line {}: trailing tokens in `{raw}`", lineno + 1),
            ));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn read_edge_list(path: &Path, num_nodes: usize) -> Result<SparseGraph> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GpnError::load("edges", format!("{}: {e}", path.display())))?;
    let edges = parse_edge_list(&text)?;
    SparseGraph::from_edge_list(num_nodes, &edges)
        .map_err(|e| GpnError::load("edges", e.to_string()))
}

pub fn write_edge_list(path: &Path, graph: &SparseGraph) -> Result<()> {
    let mut out = String::from("# u v (0-based, undirected)\n");
    for (u, v) in graph.edges() {
        out.push_str(&format!("{u} {v}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_and_isolated_node() {
        let g = SparseGraph::from_edge_list(3, &[(0, 1)]).unwrap();
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0));
        assert_eq!(g.degree(2), 0);
        assert_eq!(g.num_edges(), 1);
        g.validate().unwrap();
    }

    #[test]
    fn duplicates_and_self_loops() {
        let g = SparseGraph::from_edge_list(2, &[(0, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(g.num_edges(), 1);
        let g = SparseGraph::from_edge_list(2, &[(0, 0)]).unwrap();
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn out_of_range_is_input_error() {
        assert!(matches!(
            SparseGraph::from_edge_list(2, &[(0, 2)]),
            Err(GpnError::Input(_))
        ));
    }

    #[test]
    fn parses_comments_and_blanks() {
        let edges = parse_edge_list("# header\n0 1\n\n2 1 # trailing\n").unwrap();
        assert_eq!(edges, vec![(0, 1), (2, 1)]);
        assert!(parse_edge_list("0\n").is_err());
        assert!(parse_edge_list("0 x\n").is_err());
    }

    #[test]
    fn homophily_counts_intra_edges() {
        let g = SparseGraph::from_edge_list(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        assert!((g.homophily(&[0, 0, 1, 1]) - 2.0 / 3.0).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn construction_invariants(n in 1usize..20, raw in proptest::collection::vec((0usize..20, 0usize..20), 0..60)) {
            let edges: Vec<_> = raw.into_iter().map(|(u, v)| (u % n, v % n)).collect();
            let g = SparseGraph::from_edge_list(n, &edges).unwrap();
            g.validate().unwrap();
            for &(u, v) in &edges {
                proptest::prop_assert_eq!(g.has_edge(u, v), u != v);
            }
        }
    }
}
