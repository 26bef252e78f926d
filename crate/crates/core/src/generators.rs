//! Synthetic graphs and edge-noise injection.

use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::graph::{AttributeMatrix, Edge, Graph};
use crate::rng::StableRng;

/// A stochastic block model sample with its planted labels.
#[derive(Debug, Clone)]
pub struct Sbm {
    pub graph: Graph,
    /// Block of each vertex; blocks are contiguous id ranges.
    pub labels: Vec<usize>,
    pub connected: bool,
}

impl Sbm {
    pub fn is_edgeless(&self) -> bool {
        self.graph.edge_count() == 0
    }
}

/// Samples every intra-block pair with probability `p_in` and every
/// inter-block pair with `p_out`. Unit weights.
pub fn generate_sbm(n: usize, blocks: usize, p_in: f64, p_out: f64, seed: u64) -> Result<Sbm> {
    if blocks == 0 || !n.is_multiple_of(blocks) {
        return Err(Error::Config(format!(
            "n = {n} must be a positive multiple of blocks = {blocks}"
        )));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) || p_out > p_in {
        return Err(Error::Config(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in = {p_in}, p_out = {p_out}"
        )));
    }
    let size = n / blocks;
    let labels: Vec<usize> = (0..n).map(|v| v / size).collect();
    let mut rng = StableRng::new(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.bernoulli(p) {
                edges.push(Edge::new(u, v, 1.0));
            }
        }
    }
    let graph = Graph::from_edges(n, edges)?;
    let connected = graph.components().0 == 1;
    if !connected {
        log::warn!("SBM sample (n = {n}, seed = {seed}) is disconnected");
    }
    Ok(Sbm {
        graph,
        labels,
        connected,
    })
}

/// Noisy block features: with `b` blocks (the largest label plus one),
/// coordinate `j` has mean 1 in block `j % b` and 0 elsewhere, plus Gaussian
/// noise of standard deviation `noise`. Every block owns `dim / b` or more
/// coordinates, so the signal grows with `dim`.
pub fn block_features(labels: &[usize], dim: usize, noise: f64, seed: u64) -> Result<AttributeMatrix> {
    let blocks = labels.iter().max().map_or(1, |&l| l + 1);
    if dim < blocks {
        return Err(Error::Config(format!(
            "feature dimension {dim} is below the block count {blocks}"
        )));
    }
    let mut rng = StableRng::new(seed);
    let mut data = Vec::with_capacity(labels.len() * dim);
    for &l in labels {
        for j in 0..dim {
            let base = if j % blocks == l { 1.0 } else { 0.0 };
            data.push(base + noise * rng.normal());
        }
    }
    AttributeMatrix::new(labels.len(), dim, data)
}

/// Adds `floor(rate * |E|)` uniformly random new unit-weight pairs. Existing
/// edges and attributes are kept.
pub fn perturb(g: &Graph, rate: f64, seed: u64) -> Result<Graph> {
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(Error::Config(format!("perturbation rate must be >= 0, got {rate}")));
    }
    let n = g.vertex_count();
    let additions = (rate * g.edge_count() as f64).floor() as usize;
    let available = n * n.saturating_sub(1) / 2 - g.edge_count();
    if additions > available {
        return Err(Error::Config(format!(
            "cannot add {additions} edges: only {available} vertex pairs are free"
        )));
    }
    if additions == 0 {
        return Ok(g.clone());
    }
    let mut rng = StableRng::new(seed);
    let mut added: Vec<(usize, usize)> = Vec::with_capacity(additions);
    if additions * 2 > available {
        // Dense request: partial shuffle over the explicit non-edge list.
        let mut free: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !g.has_edge(u, v))
            .collect();
        for i in 0..additions {
            let j = i + rng.below((free.len() - i) as u64) as usize;
            free.swap(i, j);
        }
        added.extend_from_slice(&free[..additions]);
    } else {
        let mut chosen = FxHashSet::default();
        while added.len() < additions {
            let u = rng.below(n as u64) as usize;
            let v = rng.below(n as u64) as usize;
            if u == v {
                continue;
            }
            let pair = (u.min(v), u.max(v));
            if g.has_edge(pair.0, pair.1) || !chosen.insert(pair) {
                continue;
            }
            added.push(pair);
        }
    }
    let edges = g
        .edges()
        .iter()
        .copied()
        .chain(added.into_iter().map(|(u, v)| Edge::new(u, v, 1.0)));
    let out = Graph::from_edges(n, edges)?;
    match g.attributes() {
        Some(x) => out.with_attributes(x.clone()),
        None => Ok(out),
    }
}

/// Sparse random graph: each vertex proposes `avg_degree / 2` uniform
/// partners (duplicates dropped), so every vertex has degree >= 1.
pub fn random_sparse_graph(n: usize, avg_degree: usize, seed: u64) -> Graph {
    let per_vertex = (avg_degree / 2).max(1);
    let mut rng = StableRng::new(seed);
    let mut pairs = FxHashSet::default();
    let mut edges = Vec::with_capacity(n * per_vertex);
    for u in 0..n {
        for _ in 0..per_vertex {
            let v = rng.below(n as u64) as usize;
            if v != u && pairs.insert((u.min(v), u.max(v))) {
                edges.push(Edge::new(u, v, 1.0));
            }
        }
    }
    Graph::from_edges(n, edges).expect("generated edges are valid")
}

/// Connected random graph: a random recursive spanning tree plus every other
/// pair independently with probability `p`. Unit weights.
pub fn random_connected_graph(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = StableRng::new(seed);
    let mut pairs = FxHashSet::default();
    for v in 1..n {
        let u = rng.below(v as u64) as usize;
        pairs.insert((u, v));
    }
    for u in 0..n {
        for v in u + 1..n {
            if rng.bernoulli(p) {
                pairs.insert((u, v));
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
    pairs.sort_unstable();
    Graph::from_pairs(n, &pairs).expect("generated edges are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn noiseless_block_features_are_interleaved_indicators() {
        let x = block_features(&[0, 1, 2], 5, 0.0, 1).unwrap();
        assert_eq!(x.row(0), &[1.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(x.row(1), &[0.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(x.row(2), &[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(block_features(&[0, 1, 2], 2, 0.0, 1).is_err());
    }

    #[test]
    fn zero_rate_is_identity() {
        let g = fixtures::barbell6();
        assert_eq!(perturb(&g, 0.0, 1).unwrap(), g);
    }

    #[test]
    fn complete_triangle_floor_rounds_to_zero() {
        let g = fixtures::triangle();
        assert_eq!(perturb(&g, 0.2, 1).unwrap(), g);
    }

    #[test]
    fn barbell_full_rate_adds_seven() {
        let g = fixtures::barbell6();
        for seed in 0..20 {
            let p = perturb(&g, 1.0, seed).unwrap();
            assert_eq!(p.edge_count(), 14);
            for e in g.edges() {
                assert_eq!(p.weight(e.u, e.v), Some(e.w));
            }
            let new: Vec<_> = p.edges().iter().filter(|e| !g.has_edge(e.u, e.v)).collect();
            assert_eq!(new.len(), 7);
            assert_eq!(perturb(&g, 1.0, seed).unwrap(), p);
        }
    }

    #[test]
    fn too_many_additions_rejected() {
        let g = fixtures::triangle();
        assert!(perturb(&g, 1.0, 0).is_err());
        assert!(perturb(&g, -0.5, 0).is_err());
    }

    #[test]
    fn sbm_extremes() {
        let s = generate_sbm(10, 2, 0.0, 0.0, 3).unwrap();
        assert!(s.is_edgeless());
        assert!(!s.connected);
        let s = generate_sbm(10, 2, 1.0, 0.0, 3).unwrap();
        assert_eq!(s.graph.edge_count(), 2 * 10);
        assert_eq!(s.graph.components().0, 2);
        assert!(s.graph.edges().iter().all(|e| s.labels[e.u] == s.labels[e.v]));
    }

    #[test]
    fn sbm_parameter_checks() {
        assert!(generate_sbm(10, 3, 0.5, 0.1, 0).is_err());
        assert!(generate_sbm(10, 2, 0.1, 0.5, 0).is_err());
        assert!(generate_sbm(10, 2, 1.5, 0.5, 0).is_err());
    }

    #[test]
    fn sbm_intra_count_within_three_sigma() {
        // intra pairs: 2 * C(30, 2) = 870, p = 0.3 -> mean 261, sd ~13.5
        let pairs = 2.0 * 435.0;
        let mean = 0.3 * pairs;
        let sd = (pairs * 0.3 * 0.7f64).sqrt();
        for seed in 0..10 {
            let s = generate_sbm(60, 2, 0.3, 0.02, seed).unwrap();
            let intra = s
                .graph
                .edges()
                .iter()
                .filter(|e| s.labels[e.u] == s.labels[e.v])
                .count() as f64;
            assert!((intra - mean).abs() <= 3.0 * sd, "seed {seed}: {intra}");
            assert_eq!(generate_sbm(60, 2, 0.3, 0.02, seed).unwrap().graph, s.graph);
        }
    }

    #[test]
    fn random_graphs_have_no_isolated_vertices() {
        assert!(random_sparse_graph(1000, 10, 1).isolated_vertices().is_empty());
        let g = random_connected_graph(8, 0.2, 5);
        assert_eq!(g.components().0, 1);
    }
}
