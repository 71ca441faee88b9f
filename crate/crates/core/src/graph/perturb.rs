//! Structural edge perturbations: uniform rewiring and DICE.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;

use super::SparseGraph;
use crate::error::{GpnError, Result};

type EdgeSet = BTreeSet<(usize, usize)>;

fn ordered(u: usize, v: usize) -> (usize, usize) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if (0.0..=1.0).contains(&fraction) {
        Ok(())
    } else {
        Err(GpnError::Parameter(format!("fraction {fraction} not in [0, 1]")))
    }
}

/// Samples `count` distinct pairs that are not in `forbidden`, are not
/// self-loops and satisfy `accept`. Uniform over all eligible pairs.
/// Returns fewer than `count` pairs only when fewer are eligible.
fn sample_new_pairs<R: Rng + ?Sized>(
    n: usize,
    count: usize,
    forbidden: &EdgeSet,
    accept: impl Fn(usize, usize) -> bool,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    if count == 0 || n < 2 {
        return Vec::new();
    }
    let mut chosen = EdgeSet::new();
    let mut out = Vec::with_capacity(count);
    let max_attempts = 50 * count + 1000;
    for _ in 0..max_attempts {
        if out.len() == count {
            return out;
        }
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        if u == v || !accept(u, v) {
            continue;
        }
        let e = ordered(u, v);
        if forbidden.contains(&e) || !chosen.insert(e) {
            continue;
        }
        out.push(e);
    }
    // Rejection stalled: enumerate what remains and draw from it.
    let mut remaining = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if accept(u, v) && !forbidden.contains(&(u, v)) && !chosen.contains(&(u, v)) {
                remaining.push((u, v));
            }
        }
    }
    let need = (count - out.len()).min(remaining.len());
    for i in sample(rng, remaining.len(), need).into_iter() {
        out.push(remaining[i]);
    }
    out
}

fn remove_sampled<R: Rng + ?Sized>(
    pool: &[(usize, usize)],
    count: usize,
    edges: &mut EdgeSet,
    rng: &mut R,
) -> usize {
    let take = count.min(pool.len());
    for i in sample(rng, pool.len(), take).into_iter() {
        edges.remove(&pool[i]);
    }
    take
}

/// Removes `floor(fraction * |E|)` uniformly chosen edges and inserts the
/// same number of uniformly chosen pairs that were not edges of the input.
pub fn perturb_edges_random<R: Rng + ?Sized>(
    graph: &SparseGraph,
    fraction: f64,
    rng: &mut R,
) -> Result<SparseGraph> {
    check_fraction(fraction)?;
    let original = graph.edge_set();
    let budget = (fraction * original.len() as f64).floor() as usize;
    if budget == 0 {
        return Ok(graph.clone());
    }
    let n = graph.num_nodes();
    let available = n * (n - 1) / 2 - original.len();
    if available < budget {
        return Err(GpnError::Perturbation(format!(
            "only {available} non-edges available for {budget} replacements"
        )));
    }
    let pool: Vec<_> = original.iter().copied().collect();
    let mut edges = original.clone();
    remove_sampled(&pool, budget, &mut edges, rng);
    let added = sample_new_pairs(n, budget, &original, |_, _| true, rng);
    edges.extend(added);
    Ok(SparseGraph::from_undirected_set(n, &edges))
}

/// DICE ("delete internally, connect externally").
///
/// The budget `floor(fraction * |E|)` is split evenly: `ceil(budget / 2)`
/// intra-class edges are deleted and as many inter-class non-edges inserted,
/// which keeps the edge count fixed. When a side runs out of eligible pairs
/// the shortfall is filled with uniformly random deletions or insertions.
pub fn perturb_edges_dice<R: Rng + ?Sized>(
    graph: &SparseGraph,
    fraction: f64,
    labels: &[usize],
    rng: &mut R,
) -> Result<SparseGraph> {
    check_fraction(fraction)?;
    let n = graph.num_nodes();
    if labels.len() != n {
        return Err(GpnError::Input(format!("{} labels for {n} nodes", labels.len())));
    }
    let original = graph.edge_set();
    let budget = (fraction * original.len() as f64).floor() as usize;
    if budget == 0 {
        return Ok(graph.clone());
    }
    let per_side = budget.div_ceil(2);

    let mut edges = original.clone();
    let intra: Vec<_> = original.iter().copied().filter(|&(u, v)| labels[u] == labels[v]).collect();
    let deleted = remove_sampled(&intra, per_side, &mut edges, rng);
    if deleted < per_side {
        let rest: Vec<_> = edges.iter().copied().collect();
        remove_sampled(&rest, per_side - deleted, &mut edges, rng);
    }

    let mut added = sample_new_pairs(n, per_side, &original, |u, v| labels[u] != labels[v], rng);
    if added.len() < per_side {
        let mut forbidden = original.clone();
        forbidden.extend(added.iter().copied());
        let extra = sample_new_pairs(n, per_side - added.len(), &forbidden, |_, _| true, rng);
        added.extend(extra);
    }
    edges.extend(added);
    Ok(SparseGraph::from_undirected_set(n, &edges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_labeled_graph(rng: &mut ChaCha8Rng, n: usize, p: f64, classes: usize) -> (SparseGraph, Vec<usize>) {
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                let q = if labels[u] == labels[v] { p * 3.0 } else { p };
                if rng.random::<f64>() < q {
                    edges.push((u, v));
                }
            }
        }
        (SparseGraph::from_edge_list(n, &edges).unwrap(), labels)
    }

    #[test]
    fn zero_fraction_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (g, labels) = random_labeled_graph(&mut rng, 20, 0.1, 2);
        assert_eq!(perturb_edges_random(&g, 0.0, &mut rng).unwrap(), g);
        assert_eq!(perturb_edges_dice(&g, 0.0, &labels, &mut rng).unwrap(), g);
    }

    #[test]
    fn full_rewire_of_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = SparseGraph::from_edge_list(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let p = perturb_edges_random(&g, 1.0, &mut rng).unwrap();
        p.validate().unwrap();
        assert_eq!(p.num_edges(), 3);
        for (u, v) in p.edges() {
            assert!(!g.has_edge(u, v));
        }
    }

    #[test]
    fn too_dense_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = SparseGraph::from_edge_list(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        assert!(matches!(perturb_edges_random(&g, 0.5, &mut rng), Err(GpnError::Perturbation(_))));
        assert!(perturb_edges_random(&g, 1.5, &mut rng).is_err());
    }

    #[test]
    fn dice_deletes_intra_and_inserts_inter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Two 5-cliques joined by one bridge.
        let mut edges = Vec::new();
        for base in [0, 5] {
            for u in base..base + 5 {
                for v in u + 1..base + 5 {
                    edges.push((u, v));
                }
            }
        }
        edges.push((4, 5));
        let labels: Vec<usize> = (0..10).map(|v| v / 5).collect();
        let g = SparseGraph::from_edge_list(10, &edges).unwrap();
        let p = perturb_edges_dice(&g, 0.2, &labels, &mut rng).unwrap();
        p.validate().unwrap();
        assert_eq!(p.num_edges(), g.num_edges());
        for (u, v) in g.edges() {
            if !p.has_edge(u, v) {
                assert_eq!(labels[u], labels[v], "deleted an inter-class edge");
            }
        }
        for (u, v) in p.edges() {
            if !g.has_edge(u, v) {
                assert_ne!(labels[u], labels[v], "inserted an intra-class edge");
            }
        }
    }

    #[test]
    fn dice_label_length_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = SparseGraph::from_edge_list(3, &[(0, 1)]).unwrap();
        assert!(perturb_edges_dice(&g, 0.5, &[0, 1], &mut rng).is_err());
    }

    #[test]
    fn dice_homophily_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let (g, labels) = random_labeled_graph(&mut rng, 40, 0.05, 3);
            let fraction = rng.random_range(0.0..1.0);
            let before = g.homophily(&labels);
            let p = perturb_edges_dice(&g, fraction, &labels, &mut rng).unwrap();
            // Brute-force recount, independent of SparseGraph::homophily.
            let mut intra = 0usize;
            let mut total = 0usize;
            for u in 0..40 {
                for v in u + 1..40 {
                    if p.has_edge(u, v) {
                        total += 1;
                        intra += usize::from(labels[u] == labels[v]);
                    }
                }
            }
            let after = if total == 0 { 1.0 } else { intra as f64 / total as f64 };
            assert!(after <= before + 1e-12, "{before} -> {after}");
            assert_eq!(total, g.num_edges());
        }
    }

    proptest::proptest! {
        #[test]
        fn outputs_are_valid_graphs(seed in 0u64..500, fraction in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (g, labels) = random_labeled_graph(&mut rng, 25, 0.06, 3);
            let r = perturb_edges_random(&g, fraction, &mut rng).unwrap();
            r.validate().unwrap();
            proptest::prop_assert_eq!(r.num_edges(), g.num_edges());
            let d = perturb_edges_dice(&g, fraction, &labels, &mut rng).unwrap();
            d.validate().unwrap();
            proptest::prop_assert_eq!(d.num_edges(), g.num_edges());
        }
    }
}
