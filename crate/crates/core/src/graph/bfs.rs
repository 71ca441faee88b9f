use std::collections::VecDeque;

use rayon::prelude::*;

use super::SparseGraph;
use crate::error::{GpnError, Result};

/// Hop distance marking an unreachable node.
pub const UNREACHABLE: u32 = u32::MAX;

/// Unweighted shortest-path hop counts from each source to every node.
///
/// Row `i` of the result holds the distances from `sources[i]`.
pub fn bfs_distances(graph: &SparseGraph, sources: &[usize]) -> Result<Vec<Vec<u32>>> {
    if sources.is_empty() {
        return Err(GpnError::Input("bfs needs at least one source".into()));
    }
    if let Some(bad) = sources.iter().find(|&&s| s >= graph.num_nodes()) {
        return Err(GpnError::Input(format!("source {bad} out of range")));
    }
    Ok(sources.par_iter().map(|&s| single_source(graph, s)).collect())
}

fn single_source(graph: &SparseGraph, source: usize) -> Vec<u32> {
    let mut dist = vec![UNREACHABLE; graph.num_nodes()];
    let mut queue = VecDeque::new();
    dist[source] = 0;
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let next = dist[u] + 1;
        for &v in graph.neighbors(u) {
            if dist[v] == UNREACHABLE {
                dist[v] = next;
                queue.push_back(v);
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn path_graph() {
        let g = SparseGraph::from_edge_list(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(bfs_distances(&g, &[0]).unwrap(), vec![vec![0, 1, 2]]);
        assert_eq!(bfs_distances(&g, &[1]).unwrap()[0][1], 0);
    }

    #[test]
    fn unreachable_and_errors() {
        let g = SparseGraph::from_edge_list(3, &[(0, 1)]).unwrap();
        assert_eq!(bfs_distances(&g, &[0]).unwrap()[0][2], UNREACHABLE);
        assert!(bfs_distances(&g, &[]).is_err());
        assert!(bfs_distances(&g, &[3]).is_err());
    }

    #[test]
    fn matches_floyd_warshall() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let n = 30;
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random::<f64>() < 0.07 {
                        edges.push((u, v));
                    }
                }
            }
            let g = SparseGraph::from_edge_list(n, &edges).unwrap();
            let inf = u64::MAX / 4;
            let mut d = vec![vec![inf; n]; n];
            for i in 0..n {
                d[i][i] = 0;
            }
            for &(u, v) in &edges {
                d[u][v] = 1;
                d[v][u] = 1;
            }
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
                    }
                }
            }
            let all: Vec<usize> = (0..n).collect();
            let got = bfs_distances(&g, &all).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let want = if d[i][j] >= inf { UNREACHABLE } else { d[i][j] as u32 };
                    assert_eq!(got[i][j], want);
                }
            }
        }
    }
}
