//! Personalized-PageRank propagation by truncated power iteration.

use std::sync::Arc;

use crate::diff::{LinearMap, Tape, Tensor, Var};
use crate::error::{GpnError, Result};

use super::SparseGraph;

/// How `A + I` is normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `D^-1/2 (A + I) D^-1/2`.
    Symmetric,
    /// `D^-1 (A + I)`: every row sums to one.
    RowStochastic,
    /// `(A + I) D^-1`: every column sums to one, so total mass is conserved.
    ColumnStochastic,
}

impl Normalization {
    fn transposed(self) -> Self {
        match self {
            Normalization::Symmetric => Normalization::Symmetric,
            Normalization::RowStochastic => Normalization::ColumnStochastic,
            Normalization::ColumnStochastic => Normalization::RowStochastic,
        }
    }

    fn value(self, deg_u: usize, deg_v: usize) -> f64 {
        let (du, dv) = ((deg_u + 1) as f64, (deg_v + 1) as f64);
        match self {
            Normalization::Symmetric => 1.0 / (du * dv).sqrt(),
            Normalization::RowStochastic => 1.0 / du,
            Normalization::ColumnStochastic => 1.0 / dv,
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = GpnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(Normalization::Symmetric),
            "row-stochastic" | "row" => Ok(Normalization::RowStochastic),
            "column-stochastic" | "column" => Ok(Normalization::ColumnStochastic),
            other => Err(GpnError::Parameter(format!("unknown normalization `{other}`"))),
        }
    }
}

/// `Z <- (1 - τ) Â Z + τ X`, repeated `iterations` times from `Z = X`.
///
/// The matrix `Â` shares the sparsity pattern of `A + I`. Because that
/// pattern is symmetric, the adjoint uses the same pattern with the
/// transposed normalization.
#[derive(Clone, Debug)]
pub struct PropagationOperator {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    values_t: Vec<f64>,
    teleport: f64,
    iterations: usize,
    mode: Normalization,
}

pub const DEFAULT_TELEPORT: f64 = 0.1;
pub const DEFAULT_ITERATIONS: usize = 10;

impl PropagationOperator {
    pub fn new(graph: &SparseGraph, teleport: f64, iterations: usize, mode: Normalization) -> Result<Self> {
        if !(teleport > 0.0 && teleport < 1.0) {
            return Err(GpnError::Parameter(format!("teleport {teleport} not in (0, 1)")));
        }
        let n = graph.num_nodes();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(graph.col_indices().len() + n);
        let mut values = Vec::with_capacity(col_indices.capacity());
        let mut values_t = Vec::with_capacity(col_indices.capacity());
        row_offsets.push(0);
        for u in 0..n {
            let du = graph.degree(u);
            let nbrs = graph.neighbors(u);
            let split = nbrs.partition_point(|&v| v < u);
            let cols = nbrs[..split].iter().copied().chain(std::iter::once(u)).chain(nbrs[split..].iter().copied());
            for v in cols {
                let dv = graph.degree(v);
                col_indices.push(v);
                values.push(mode.value(du, dv));
                values_t.push(mode.transposed().value(du, dv));
            }
            row_offsets.push(col_indices.len());
        }
        Ok(PropagationOperator {
            num_nodes: n,
            row_offsets,
            col_indices,
            values,
            values_t,
            teleport,
            iterations,
            mode,
        })
    }

    /// Operator with the default teleport (0.1) and iteration count (10).
    pub fn with_defaults(graph: &SparseGraph, mode: Normalization) -> Result<Self> {
        Self::new(graph, DEFAULT_TELEPORT, DEFAULT_ITERATIONS, mode)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn teleport(&self) -> f64 {
        self.teleport
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn mode(&self) -> Normalization {
        self.mode
    }

    /// Normalized entry `Â[u, v]` (0 outside the pattern).
    pub fn entry(&self, u: usize, v: usize) -> f64 {
        let cols = &self.col_indices[self.row_offsets[u]..self.row_offsets[u + 1]];
        cols.binary_search(&v)
            .map(|k| self.values[self.row_offsets[u] + k])
            .unwrap_or(0.0)
    }

    fn spmm(&self, values: &[f64], z: &[f64], d: usize, out: &mut [f64]) {
        for u in 0..self.num_nodes {
            let o = &mut out[u * d..(u + 1) * d];
            o.iter_mut().for_each(|x| *x = 0.0);
            for k in self.row_offsets[u]..self.row_offsets[u + 1] {
                let w = values[k];
                let zr = &z[self.col_indices[k] * d..(self.col_indices[k] + 1) * d];
                for (a, b) in o.iter_mut().zip(zr) {
                    *a += w * b;
                }
            }
        }
    }

    fn iterate(&self, values: &[f64], x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.num_nodes {
            return Err(GpnError::shape(format!(
                "propagation over {} nodes got {} rows",
                self.num_nodes,
                x.rows()
            )));
        }
        let d = x.cols();
        let xd = x.data();
        let mut z = xd.to_vec();
        let mut next = vec![0.0; z.len()];
        let keep = 1.0 - self.teleport;
        for _ in 0..self.iterations {
            self.spmm(values, &z, d, &mut next);
            for (nz, &xv) in next.iter_mut().zip(xd) {
                *nz = keep * *nz + self.teleport * xv;
            }
            std::mem::swap(&mut z, &mut next);
        }
        Tensor::new(x.shape().to_vec(), z)
    }

    /// Runs the power iteration on `x` (`n x d` or length `n`).
    pub fn propagate(&self, x: &Tensor) -> Result<Tensor> {
        self.iterate(&self.values, x)
    }

    /// Adjoint of [`propagate`](Self::propagate).
    pub fn propagate_transpose(&self, g: &Tensor) -> Result<Tensor> {
        self.iterate(&self.values_t, g)
    }

    /// Dense `n x n` matrix `Π` with `propagate(X) = Π X`.
    pub fn dense_ppr(&self) -> Result<Tensor> {
        let n = self.num_nodes;
        let mut eye = Tensor::zeros(&[n, n]);
        for i in 0..n {
            eye.set(i, i, 1.0);
        }
        self.propagate(&eye)
    }
}

impl LinearMap for PropagationOperator {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.propagate(x)
    }

    fn apply_transpose(&self, g: &Tensor) -> Result<Tensor> {
        self.propagate_transpose(g)
    }
}

/// Records `propagate(x)` on the tape.
pub fn propagate(tape: &mut Tape, op: &Arc<PropagationOperator>, x: Var) -> Result<Var> {
    tape.linear_map(x, op.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::gradcheck::max_gradient_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> SparseGraph {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        SparseGraph::from_edge_list(n, &edges).unwrap()
    }

    // Dense Â built straight from degrees.
    fn dense_norm(g: &SparseGraph, mode: Normalization) -> Vec<Vec<f64>> {
        let n = g.num_nodes();
        let mut a = vec![vec![0.0; n]; n];
        for u in 0..n {
            for v in 0..n {
                if u == v || g.has_edge(u, v) {
                    let (du, dv) = ((g.degree(u) + 1) as f64, (g.degree(v) + 1) as f64);
                    a[u][v] = match mode {
                        Normalization::Symmetric => 1.0 / (du * dv).sqrt(),
                        Normalization::RowStochastic => 1.0 / du,
                        Normalization::ColumnStochastic => 1.0 / dv,
                    };
                }
            }
        }
        a
    }

    fn dense_power_iteration(a: &[Vec<f64>], x: &[Vec<f64>], tau: f64, k: usize) -> Vec<Vec<f64>> {
        let n = a.len();
        let d = x[0].len();
        let mut z = x.to_vec();
        for _ in 0..k {
            let mut next = vec![vec![0.0; d]; n];
            for i in 0..n {
                for j in 0..n {
                    for c in 0..d {
                        next[i][c] += a[i][j] * z[j][c];
                    }
                }
                for c in 0..d {
                    next[i][c] = (1.0 - tau) * next[i][c] + tau * x[i][c];
                }
            }
            z = next;
        }
        z
    }

    #[test]
    fn edgeless_graph_is_fixed_point() {
        let g = SparseGraph::empty(4);
        let op = PropagationOperator::with_defaults(&g, Normalization::Symmetric).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        assert_eq!(op.propagate(&x).unwrap(), x);
    }

    #[test]
    fn symmetric_values_and_row_sums() {
        let g = SparseGraph::from_edge_list(3, &[(0, 1), (1, 2)]).unwrap();
        let op = PropagationOperator::new(&g, 0.1, 10, Normalization::Symmetric).unwrap();
        assert!((op.entry(0, 1) - 1.0 / (2.0f64 * 3.0).sqrt()).abs() < 1e-15);
        let op = PropagationOperator::new(&g, 0.1, 10, Normalization::RowStochastic).unwrap();
        for u in 0..3 {
            let s: f64 = (0..3).map(|v| op.entry(u, v)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_dense_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for trial in 0..12 {
            let n = rng.random_range(1..60);
            let g = random_graph(n, 0.1, &mut rng);
            let mode = [Normalization::Symmetric, Normalization::RowStochastic, Normalization::ColumnStochastic][trial % 3];
            let k = rng.random_range(0..15);
            let tau = rng.random_range(0.05..0.9);
            let op = PropagationOperator::new(&g, tau, k, mode).unwrap();
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let got = op.propagate(&Tensor::from_rows(&rows).unwrap()).unwrap();
            let want = dense_power_iteration(&dense_norm(&g, mode), &rows, tau, k);
            for i in 0..n {
                for c in 0..3 {
                    assert!((got.get(i, c) - want[i][c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let op = PropagationOperator::with_defaults(&SparseGraph::empty(3), Normalization::Symmetric).unwrap();
        assert!(matches!(op.propagate(&Tensor::zeros(&[2, 2])), Err(GpnError::Shape(_))));
        assert!(PropagationOperator::new(&SparseGraph::empty(3), 1.0, 10, Normalization::Symmetric).is_err());
    }

    #[test]
    fn gradients_flow_through_all_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_graph(8, 0.3, &mut rng);
        for mode in [Normalization::Symmetric, Normalization::RowStochastic] {
            let op = Arc::new(PropagationOperator::new(&g, 0.2, 7, mode).unwrap());
            let x = Tensor::new(vec![8, 2], (0..16).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let w = Tensor::new(vec![8, 2], (0..16).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let err = max_gradient_error(
                |t, v| {
                    let z = propagate(t, &op, v[0])?;
                    let z = t.mul(z, v[1])?;
                    let z = t.square(z)?;
                    Ok(t.sum(z))
                },
                &[x, w],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "{mode:?}: {err}");
        }
    }

    proptest::proptest! {
        #[test]
        fn linearity(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..30);
            let g = random_graph(n, 0.2, &mut rng);
            let op = PropagationOperator::with_defaults(&g, Normalization::Symmetric).unwrap();
            let x = Tensor::new(vec![n, 2], (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let y = Tensor::new(vec![n, 2], (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let combo = Tensor::new(vec![n, 2], x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
            let lhs = op.propagate(&combo).unwrap();
            let (px, py) = (op.propagate(&x).unwrap(), op.propagate(&y).unwrap());
            for i in 0..2 * n {
                proptest::prop_assert!((lhs.data()[i] - (a * px.data()[i] + b * py.data()[i])).abs() < 1e-12);
            }
        }
    }
}
