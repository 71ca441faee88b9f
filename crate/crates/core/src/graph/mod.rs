//! Sparse undirected graphs, PPR propagation, BFS and edge perturbations.

mod bfs;
mod perturb;
mod propagate;
mod sparse;

pub use bfs::{bfs_distances, UNREACHABLE};
pub use perturb::{perturb_edges_dice, perturb_edges_random};
pub use propagate::{propagate, Normalization, PropagationOperator, DEFAULT_ITERATIONS, DEFAULT_TELEPORT};
pub use sparse::{parse_edge_list, read_edge_list, write_edge_list, SparseGraph};
