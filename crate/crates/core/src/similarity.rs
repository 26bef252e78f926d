//! Attribute similarity, k-NN overlays and the entropy-driven choice of k.

use rayon::prelude::*;
use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::graph::{AttributeMatrix, Edge, Graph};

/// Lower clamp for fused edge weights.
pub const MIN_FUSED_WEIGHT: f64 = 1e-6;

/// Default upper bound on `n` for the dense similarity matrix
/// (`8 * n^2` bytes, about 20 GB at the bound).
pub const DEFAULT_MAX_DENSE_NODES: usize = 50_000;

/// Bytes needed by a dense `n x n` similarity matrix.
pub fn dense_matrix_bytes(n: usize) -> u64 {
    8 * (n as u64) * (n as u64)
}

/// Dense symmetric similarity matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    /// Builds from a full row-major matrix. Checks symmetry, range and the
    /// unit diagonal.
    pub fn from_dense(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Validation(format!(
                "similarity matrix needs {} entries, got {}",
                n * n,
                data.len()
            )));
        }
        for i in 0..n {
            if data[i * n + i] != 1.0 {
                return Err(Error::Validation(format!("S[{i}][{i}] must be 1")));
            }
            for j in i + 1..n {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if a != b || !a.is_finite() || a.abs() > 1.0 + 1e-12 {
                    return Err(Error::Validation(format!(
                        "S[{i}][{j}] = {a}, S[{j}][{i}] = {b}: need a symmetric value in [-1, 1]"
                    )));
                }
            }
        }
        Ok(Self { n, data })
    }

    /// Matrix with every off-diagonal entry equal to `c`.
    pub fn constant(n: usize, c: f64) -> Result<Self> {
        let mut data = vec![c; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_dense(n, data)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// `sum_{i<j} S_ij`, accumulated row by row in index order.
    pub fn pair_sum(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            total += self.row(i)[i + 1..].iter().sum::<f64>();
        }
        total
    }
}

/// Pearson correlation between every pair of attribute rows.
///
/// Rows with zero variance correlate 0 with everything else.
pub fn pcc_similarity(x: &AttributeMatrix) -> Result<SimilarityMatrix> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 || d < 1 {
        return Err(Error::Validation(format!(
            "similarity needs at least 2 rows and 1 column, got {n} x {d}"
        )));
    }
    let mut z = vec![0.0; n * d];
    let mut flat = 0usize;
    for i in 0..n {
        let row = x.row(i);
        let (lo, hi) = row
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if lo == hi {
            flat += 1;
            continue;
        }
        let mean = row.iter().sum::<f64>() / d as f64;
        let out = &mut z[i * d..(i + 1) * d];
        for (o, &v) in out.iter_mut().zip(row) {
            *o = v - mean;
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        for o in out.iter_mut() {
            *o /= norm;
        }
    }
    if flat > 0 {
        log::warn!("{flat} attribute row(s) have zero variance; their similarities are set to 0");
    }

    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
        let zi = &z[i * d..(i + 1) * d];
        for (j, o) in out.iter_mut().enumerate() {
            *o = if i == j {
                1.0
            } else {
                let zj = &z[j * d..(j + 1) * d];
                zi.iter().zip(zj).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0)
            };
        }
    });
    Ok(SimilarityMatrix { n, data })
}

/// The `k` most similar vertices of `i`, best first, ties to the smaller id.
fn ranked_neighbors(s: &SimilarityMatrix, i: usize, k: usize) -> Vec<usize> {
    let row = s.row(i);
    let mut cand: Vec<usize> = (0..s.n).filter(|&j| j != i).collect();
    let by_rank = |a: &usize, b: &usize| row[*b].total_cmp(&row[*a]).then(a.cmp(b));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, by_rank);
        cand.truncate(k);
    }
    cand.sort_unstable_by(by_rank);
    cand
}

fn check_k(s: &SimilarityMatrix, k: usize) -> Result<()> {
    if k < 1 || k + 1 > s.n {
        return Err(Error::Config(format!(
            "k = {k} out of range 1..={}",
            s.n.saturating_sub(1)
        )));
    }
    Ok(())
}

/// Union k-NN overlay: a pair is present if either endpoint ranks the other
/// among its `k` most similar vertices. Sorted pairs with `u < v`.
pub fn knn_edges(s: &SimilarityMatrix, k: usize) -> Result<Vec<(usize, usize)>> {
    check_k(s, k)?;
    let lists: Vec<Vec<usize>> = (0..s.n)
        .into_par_iter()
        .map(|i| ranked_neighbors(s, i, k))
        .collect();
    let mut pairs: Vec<(usize, usize)> = lists
        .iter()
        .enumerate()
        .flat_map(|(i, l)| l.iter().map(move |&j| (i.min(j), i.max(j))))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    Ok(pairs)
}

/// `(1 / 2n) * (1 / fused_edges) * pair_sum`.
pub fn modification_factor(n: usize, fused_edges: usize, pair_sum: f64) -> f64 {
    pair_sum / (2.0 * n as f64 * fused_edges as f64)
}

fn fused_weight(s: f64, m: f64) -> f64 {
    (s + m).max(MIN_FUSED_WEIGHT)
}

/// Unions `overlay` into `g` and reweights every edge to
/// `max(S_ij + M, MIN_FUSED_WEIGHT)`. Attributes are carried over.
pub fn fuse_and_reweight(g: &Graph, overlay: &[(usize, usize)], s: &SimilarityMatrix) -> Result<Graph> {
    Ok(fuse_with_factor(g, overlay, s, s.pair_sum())?.0)
}

fn fuse_with_factor(
    g: &Graph,
    overlay: &[(usize, usize)],
    s: &SimilarityMatrix,
    pair_sum: f64,
) -> Result<(Graph, f64)> {
    let n = g.vertex_count();
    if s.size() != n {
        return Err(Error::Validation(format!(
            "similarity matrix is {0} x {0} but the graph has {n} vertices",
            s.size()
        )));
    }
    let mut pairs: Vec<(usize, usize)> = g.edges().iter().map(Edge::pair).collect();
    for &(a, b) in overlay {
        if a == b || a >= n || b >= n {
            return Err(Error::Validation(format!("overlay pair ({a}, {b}) is not a vertex pair")));
        }
        pairs.push((a.min(b), a.max(b)));
    }
    pairs.sort_unstable();
    pairs.dedup();
    if pairs.is_empty() {
        return Err(Error::Degenerate("fused graph has no edges".into()));
    }
    let m = modification_factor(n, pairs.len(), pair_sum);
    let edges = pairs
        .iter()
        .map(|&(u, v)| Edge::new(u, v, fused_weight(s.get(u, v), m)));
    let fused = Graph::from_edges(n, edges)?;
    let fused = match g.attributes() {
        Some(x) => fused.with_attributes(x.clone())?,
        None => fused,
    };
    Ok((fused, m))
}

/// Outcome of the k search.
#[derive(Debug, Clone)]
pub struct FusionResult {
    /// Fused, reweighted graph at the selected k.
    pub fused: Graph,
    pub k_selected: usize,
    /// One-dimensional entropy of the fused graph for every probed k.
    pub h1_trace: Vec<(usize, f64)>,
    /// Modification factor used for the selected graph.
    pub modification: f64,
}

/// Parameters of the k search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KSelect {
    pub k_max: usize,
    pub plateau_tol: f64,
    pub window: usize,
}

impl KSelect {
    /// Defaults: `k_max = min(n - 1, 100)`, tolerance `1e-3`, window 2.
    pub fn for_size(n: usize) -> Self {
        Self {
            k_max: n.saturating_sub(1).min(100),
            plateau_tol: 1e-3,
            window: 2,
        }
    }
}

/// First index `c` such that the relative gains from `c` onwards stay below
/// `tol` for `window` consecutive steps, if the trace is long enough.
pub fn plateau_start(values: &[f64], tol: f64, window: usize) -> Option<usize> {
    let gain = |i: usize| (values[i + 1] - values[i]) / values[i];
    (0..values.len().saturating_sub(window)).find(|&c| (c..c + window).all(|i| gain(i) < tol))
}

/// Probes `k = 2, 3, ...` and returns the fused graph at the start of the
/// first entropy plateau, or at the entropy maximum when none is found.
pub fn select_k(
    g: &Graph,
    s: &SimilarityMatrix,
    k_max: usize,
    plateau_tol: f64,
    window: usize,
) -> Result<FusionResult> {
    let n = g.vertex_count();
    if s.size() != n {
        return Err(Error::Validation(format!(
            "similarity matrix is {0} x {0} but the graph has {n} vertices",
            s.size()
        )));
    }
    if k_max < 2 || k_max + 1 > n {
        return Err(Error::Config(format!(
            "k_max = {k_max} must lie in 2..={}",
            n.saturating_sub(1)
        )));
    }
    if !(plateau_tol > 0.0 && plateau_tol.is_finite()) {
        return Err(Error::Config(format!("plateau_tol must be > 0, got {plateau_tol}")));
    }
    if window < 1 {
        return Err(Error::Config("plateau window must be >= 1".into()));
    }

    let pair_sum = s.pair_sum();
    let lists: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| ranked_neighbors(s, i, k_max))
        .collect();

    let mut present: FxHashSet<(usize, usize)> = g.edges().iter().map(Edge::pair).collect();
    let mut fused: Vec<(usize, usize, f64)> =
        g.edges().iter().map(|e| (e.u, e.v, s.get(e.u, e.v))).collect();
    let add_rank = |r: usize, present: &mut FxHashSet<_>, fused: &mut Vec<_>| {
        for (i, l) in lists.iter().enumerate() {
            let j = l[r];
            let p = (i.min(j), i.max(j));
            if present.insert(p) {
                fused.push((p.0, p.1, s.get(p.0, p.1)));
            }
        }
    };
    add_rank(0, &mut present, &mut fused);

    let mut trace: Vec<(usize, f64)> = Vec::new();
    let mut degrees = vec![0.0; n];
    let mut chosen = None;
    for k in 2..=k_max {
        add_rank(k - 1, &mut present, &mut fused);
        let m = modification_factor(n, fused.len(), pair_sum);
        degrees.iter_mut().for_each(|d| *d = 0.0);
        for &(u, v, sij) in &fused {
            let w = fused_weight(sij, m);
            degrees[u] += w;
            degrees[v] += w;
        }
        let vol: f64 = degrees.iter().sum();
        let h1: f64 = degrees
            .iter()
            .map(|&d| {
                let p = d / vol;
                -p * p.log2()
            })
            .sum();
        trace.push((k, h1));
        let values: Vec<f64> = trace.iter().map(|t| t.1).collect();
        if let Some(c) = plateau_start(&values, plateau_tol, window) {
            chosen = Some(trace[c].0);
            break;
        }
    }
    let k_selected = chosen.unwrap_or_else(|| {
        let mut best = trace[0];
        for &t in &trace[1..] {
            if t.1 > best.1 {
                best = t;
            }
        }
        best.0
    });
    log::debug!("k selection: probed {} values, chose {k_selected}", trace.len());

    let overlay = knn_edges(s, k_selected)?;
    let (fused, modification) = fuse_with_factor(g, &overlay, s, pair_sum)?;
    Ok(FusionResult {
        fused,
        k_selected,
        h1_trace: trace,
        modification,
    })
}
