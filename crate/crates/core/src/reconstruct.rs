//! Tree-guided edge sampling and graph reconstruction.
//!
//! Every non-root node gets a probability proportional to
//! `exp(deduction entropy)` among its siblings. Inside each community with
//! at least two children, pairs of distinct children are drawn by those
//! probabilities and each chosen child is descended to a leaf the same way;
//! the two leaves become a new edge.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{Edge, Graph};
use crate::rng::StableRng;
use crate::similarity::SimilarityMatrix;
use crate::tree::{EncodingTree, NodeId};

/// Softmax with a max shift; natural base.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let top = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|&x| (x - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// An encoding tree with per-node deduction entropies and sibling-normalized
/// selection probabilities.
#[derive(Debug, Clone)]
pub struct ProbabilityAnnotatedTree {
    tree: EncodingTree,
    deduction: Vec<f64>,
    probability: Vec<f64>,
    /// Running sum of sibling probabilities up to and including each node,
    /// in child order, for binary-search draws.
    cumulative: Vec<f64>,
}

fn cumulative_sums(tree: &EncodingTree, probability: &[f64]) -> Vec<f64> {
    let mut cum = vec![0.0; probability.len()];
    for id in tree.node_ids() {
        let mut acc = 0.0;
        for &c in tree.children(id) {
            acc += probability[c];
            cum[c] = acc;
        }
    }
    cum
}

impl ProbabilityAnnotatedTree {
    /// Uses explicit probabilities (indexed by node id) instead of the
    /// entropy softmax. Children of every internal node must sum to 1.
    pub fn with_probabilities(tree: EncodingTree, probability: Vec<f64>) -> Result<Self> {
        if probability.len() != tree.capacity() {
            return Err(Error::Validation(format!(
                "need {} probabilities, got {}",
                tree.capacity(),
                probability.len()
            )));
        }
        for id in tree.node_ids() {
            let ch = tree.children(id);
            if ch.is_empty() {
                continue;
            }
            if ch.iter().any(|&c| !(probability[c] > 0.0 && probability[c] <= 1.0)) {
                return Err(Error::Validation(format!("children of node {id} need probabilities in (0, 1]")));
            }
            let sum: f64 = ch.iter().map(|&c| probability[c]).sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!("children of node {id} sum to {sum}")));
            }
        }
        Ok(Self {
            deduction: vec![f64::NAN; tree.capacity()],
            cumulative: cumulative_sums(&tree, &probability),
            tree,
            probability,
        })
    }

    pub fn tree(&self) -> &EncodingTree {
        &self.tree
    }

    /// Probability of `id` among its siblings; 1 for the root.
    pub fn probability(&self, id: NodeId) -> f64 {
        self.probability[id]
    }

    /// Deduction entropy of a non-root node (NaN when the tree was built
    /// from explicit probabilities).
    pub fn deduction(&self, id: NodeId) -> f64 {
        self.deduction[id]
    }

    /// Index of a child of `node` drawn by probability, never `skip`. With
    /// `skip` the remaining probabilities are renormalized.
    fn pick(&self, node: NodeId, skip: Option<usize>, rng: &mut StableRng) -> usize {
        let ch = self.tree.children(node);
        let last = ch.len() - 1;
        let total = self.cumulative[ch[last]];
        let mut u = rng.next_f64();
        let idx = match skip {
            None => ch.partition_point(|&c| self.cumulative[c] <= u * total),
            Some(k) => {
                let before = if k == 0 { 0.0 } else { self.cumulative[ch[k - 1]] };
                let p = self.cumulative[ch[k]] - before;
                u *= total - p;
                // Map the reduced interval onto the full one around the gap.
                if u >= before {
                    u += p;
                }
                let i = ch.partition_point(|&c| self.cumulative[c] <= u).min(last);
                if i == k {
                    // Only reachable through rounding at the gap's edge.
                    if k == last { k - 1 } else { k + 1 }
                } else {
                    i
                }
            }
        };
        idx.min(last)
    }

    fn descend(&self, mut id: NodeId, rng: &mut StableRng) -> usize {
        loop {
            let ch = self.tree.children(id);
            if ch.is_empty() {
                return self.tree.vertex(id).expect("leaf carries a vertex");
            }
            id = ch[self.pick(id, None, rng)];
        }
    }

    /// One sample at `node`: two distinct children, each descended to a leaf.
    /// The second child is drawn from the probabilities with the first one
    /// removed and renormalized.
    pub fn draw_pair(&self, node: NodeId, rng: &mut StableRng) -> (usize, usize) {
        let ch = self.tree.children(node);
        assert!(ch.len() >= 2, "node {node} has fewer than two children");
        let a = self.pick(node, None, rng);
        let b = self.pick(node, Some(a), rng);
        let u = self.descend(ch[a], rng);
        let v = self.descend(ch[b], rng);
        (u.min(v), u.max(v))
    }
}

/// Deduction entropies and softmax probabilities for every node of `t`.
pub fn annotate_probabilities(g: &Graph, t: &EncodingTree) -> Result<ProbabilityAnnotatedTree> {
    if g.vertex_count() != t.vertex_count() {
        return Err(Error::Validation(format!(
            "tree has {} leaves but the graph has {} vertices",
            t.vertex_count(),
            g.vertex_count()
        )));
    }
    let mut deduction = vec![f64::NAN; t.capacity()];
    let mut probability = vec![0.0; t.capacity()];
    deduction[t.root()] = 0.0;
    probability[t.root()] = 1.0;
    let mut stack = vec![t.root()];
    while let Some(id) = stack.pop() {
        let ch = t.children(id);
        if ch.is_empty() {
            continue;
        }
        let ded: Vec<f64> = ch.iter().map(|&c| deduction[id] + t.term(c)).collect();
        for ((&c, &d), p) in ch.iter().zip(&ded).zip(softmax(&ded)) {
            deduction[c] = d;
            probability[c] = p;
        }
        stack.extend_from_slice(ch);
    }
    deduction[t.root()] = f64::NAN;
    Ok(ProbabilityAnnotatedTree {
        cumulative: cumulative_sums(t, &probability),
        tree: t.clone(),
        deduction,
        probability,
    })
}

/// Sampling rate per community: `ceil(theta * children)` draws, with
/// optional overrides keyed by community depth (root = 0).
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSchedule {
    pub theta: f64,
    pub by_depth: BTreeMap<usize, f64>,
}

impl ThetaSchedule {
    pub fn uniform(theta: f64) -> Self {
        Self {
            theta,
            by_depth: BTreeMap::new(),
        }
    }

    pub fn at_depth(&self, depth: usize) -> f64 {
        self.by_depth.get(&depth).copied().unwrap_or(self.theta)
    }

    fn validate(&self) -> Result<()> {
        let ok = |t: f64| t.is_finite() && t > 0.0;
        if !ok(self.theta) || !self.by_depth.values().all(|&t| ok(t)) {
            return Err(Error::Config(format!("theta must be > 0, got {:?}", self)));
        }
        Ok(())
    }
}

/// Provenance of a sampled pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleInfo {
    /// Community at which the pair was drawn.
    pub origin: NodeId,
    /// Number of draws that produced the pair.
    pub count: usize,
}

/// Deduplicated sampled pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledEdgeSet {
    pub seed: u64,
    pub n_vertices: usize,
    pub pairs: BTreeMap<(usize, usize), SampleInfo>,
}

impl SampledEdgeSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Edge list with unit weights and a trailing provenance comment field.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# seed\t{}\n# vertices\t{}\n", self.seed, self.n_vertices);
        for (&(u, v), info) in &self.pairs {
            let _ = writeln!(
                out,
                "{u}\t{v}\t1.000000000\t#provenance={};count={}",
                info.origin, info.count
            );
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    /// The sampled pairs as a unit-weight graph, which is what
    /// [`reconstruct`] returns without `retain`. Needs no similarity matrix.
    pub fn to_graph(&self) -> Result<Graph> {
        if self.pairs.is_empty() {
            return Err(Error::Degenerate("reconstructed graph has no edges".into()));
        }
        Graph::from_edges(
            self.n_vertices,
            self.pairs.keys().map(|&(u, v)| Edge::new(u, v, 1.0)),
        )
    }
}

pub fn sample_edges(pt: &ProbabilityAnnotatedTree, theta: f64, seed: u64) -> Result<SampledEdgeSet> {
    sample_edges_with(pt, &ThetaSchedule::uniform(theta), seed)
}

/// Samples every community with two or more children. Each community uses
/// its own random stream derived from `(seed, node id)`.
pub fn sample_edges_with(
    pt: &ProbabilityAnnotatedTree,
    schedule: &ThetaSchedule,
    seed: u64,
) -> Result<SampledEdgeSet> {
    schedule.validate()?;
    let t = &pt.tree;
    let mut work: Vec<(NodeId, usize)> = Vec::new();
    let mut stack = vec![(t.root(), 0usize)];
    while let Some((id, depth)) = stack.pop() {
        let ch = t.children(id);
        if ch.len() >= 2 {
            let draws = (schedule.at_depth(depth) * ch.len() as f64).ceil() as usize;
            work.push((id, draws));
        }
        stack.extend(ch.iter().map(|&c| (c, depth + 1)));
    }
    work.sort_unstable();

    let drawn: Vec<(NodeId, Vec<(usize, usize)>)> = work
        .par_iter()
        .map(|&(id, draws)| {
            let mut rng = StableRng::substream(seed, id as u64);
            (id, (0..draws).map(|_| pt.draw_pair(id, &mut rng)).collect())
        })
        .collect();

    let mut pairs: BTreeMap<(usize, usize), SampleInfo> = BTreeMap::new();
    for (origin, list) in drawn {
        for p in list {
            pairs
                .entry(p)
                .or_insert(SampleInfo { origin, count: 0 })
                .count += 1;
        }
    }
    Ok(SampledEdgeSet {
        seed,
        n_vertices: t.vertex_count(),
        pairs,
    })
}

/// Builds the next graph from sampled pairs.
///
/// Without `retain` the result is exactly the sampled pairs (weight 1).
/// With `retain` the input edges are added back (keeping their weights) and
/// the least similar edges are dropped: `floor(drop_frac * edges)` of them,
/// or, when `drop_frac` is `None`, as many as needed to get back to the
/// input edge count. Ties in similarity go to the smaller pair.
pub fn reconstruct(
    g_input: &Graph,
    sampled: &SampledEdgeSet,
    s: &SimilarityMatrix,
    retain: bool,
    drop_frac: Option<f64>,
) -> Result<Graph> {
    let n = g_input.vertex_count();
    if sampled.n_vertices != n || s.size() != n {
        return Err(Error::Validation(format!(
            "size mismatch: graph {n}, samples {}, similarity {}",
            sampled.n_vertices,
            s.size()
        )));
    }
    if let Some(f) = drop_frac {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Config(format!("drop fraction must lie in [0, 1], got {f}")));
        }
        if !retain {
            log::warn!("drop fraction {f} ignored without retain");
        }
    }
    let mut weights: BTreeMap<(usize, usize), f64> =
        sampled.pairs.keys().map(|&p| (p, 1.0)).collect();
    if retain {
        for e in g_input.edges() {
            weights.insert(e.pair(), e.w);
        }
        let m = weights.len();
        let drop = match drop_frac {
            Some(f) => (f * m as f64).floor() as usize,
            None => m.saturating_sub(g_input.edge_count()),
        };
        if drop > 0 {
            let mut order: Vec<(usize, usize)> = weights.keys().copied().collect();
            order.sort_by(|a, b| s.get(a.0, a.1).total_cmp(&s.get(b.0, b.1)).then(a.cmp(b)));
            let gone: BTreeSet<(usize, usize)> = order.into_iter().take(drop).collect();
            weights.retain(|p, _| !gone.contains(p));
        }
    }
    if weights.is_empty() {
        return Err(Error::Degenerate("reconstructed graph has no edges".into()));
    }
    let g = Graph::from_edges(n, weights.into_iter().map(|((u, v), w)| Edge::new(u, v, w)))?;
    match g_input.attributes() {
        Some(x) => g.with_attributes(x.clone()),
        None => Ok(g),
    }
}
