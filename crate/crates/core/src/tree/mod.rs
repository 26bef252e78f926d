//! Encoding trees and their structural entropy.
//!
//! An encoding tree is a rooted tree whose leaves are the graph's vertices and
//! whose internal nodes are nested communities. Every node caches the volume
//! of its vertex set (sum of weighted degrees) and its cut (total weight of
//! edges leaving the set). The entropy of a non-root node `a` with parent `p`
//! is `-(cut_a / vol) * log2(volume_a / volume_p)`; the tree entropy is the
//! sum over all non-root nodes.
//!
//! Node ids are arena indices. Leaves always have the ids of their vertices
//! (`0..n`), and the root of a freshly built tree is `n`. Operators may leave
//! dead slots behind; [`EncodingTree::compact`] renumbers densely.

mod build;
mod io;
mod ops;
mod refine;

pub use build::{build_optimal_tree, build_optimal_tree_with, BuildOptions, DEFAULT_REFINE_SWEEPS};
pub use io::{load_tree_tsv, parse_tree_tsv, TreeJson};

use crate::error::{Error, Result};
use crate::graph::Graph;

pub type NodeId = usize;

/// Absolute tolerance for entropy comparisons and "strictly positive" deltas.
pub const ENTROPY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TreeNode {
    pub(crate) parent: Option<NodeId>,
    pub(crate) children: Vec<NodeId>,
    pub(crate) volume: f64,
    pub(crate) cut: f64,
    pub(crate) vertex: Option<usize>,
    pub(crate) alive: bool,
}

impl TreeNode {
    fn internal(parent: Option<NodeId>) -> Self {
        Self {
            parent,
            children: Vec::new(),
            volume: 0.0,
            cut: 0.0,
            vertex: None,
            alive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingTree {
    pub(crate) nodes: Vec<TreeNode>,
    pub(crate) root: NodeId,
    pub(crate) n_vertices: usize,
    pub(crate) total_volume: f64,
}

/// Entropy summary of a tree against its graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    /// One-dimensional entropy of the graph, bits.
    pub h1: f64,
    /// Tree entropy, bits.
    pub h_tree: f64,
    /// Entropy term of every non-root node, sorted by id.
    pub per_node: Vec<(NodeId, f64)>,
    /// `h_tree / h1`.
    pub normalized: f64,
}

/// One-dimensional structural entropy: Shannon entropy (bits) of the
/// stationary degree distribution `d_v / vol`.
pub fn one_dim_entropy(g: &Graph) -> Result<f64> {
    let vol = g.volume()?;
    if let Some(&v) = g.isolated_vertices().first() {
        return Err(Error::Degenerate(format!("vertex {v} has zero degree")));
    }
    Ok(g.degrees()
        .iter()
        .map(|&d| {
            let p = d / vol;
            -p * p.log2()
        })
        .sum())
}

/// Height-1 tree: the root with one leaf per vertex.
pub fn single_level_tree(g: &Graph) -> EncodingTree {
    EncodingTree::single_level(g)
}

/// Validates `t` against `g` and evaluates its entropy from the node caches.
pub fn tree_entropy(g: &Graph, t: &EncodingTree) -> Result<EntropyReport> {
    t.validate_structure()?;
    if t.n_vertices != g.vertex_count() {
        return Err(Error::InvalidTree(format!(
            "tree has {} leaves, graph has {} vertices",
            t.n_vertices,
            g.vertex_count()
        )));
    }
    let h1 = one_dim_entropy(g)?;
    let per_node: Vec<(NodeId, f64)> = t
        .node_ids()
        .filter(|&id| id != t.root)
        .map(|id| (id, t.term(id)))
        .collect();
    let h_tree = per_node.iter().map(|&(_, h)| h).sum();
    Ok(EntropyReport {
        h1,
        h_tree,
        per_node,
        normalized: h_tree / h1,
    })
}

pub(crate) fn node_term(total: f64, cut: f64, volume: f64, parent_volume: f64) -> f64 {
    if cut == 0.0 {
        return 0.0;
    }
    -(cut / total) * (volume / parent_volume).log2()
}

impl EncodingTree {
    pub fn single_level(g: &Graph) -> Self {
        let n = g.vertex_count();
        let mut nodes: Vec<TreeNode> = (0..n)
            .map(|v| TreeNode {
                parent: Some(n),
                children: Vec::new(),
                volume: g.degree(v),
                cut: g.degree(v),
                vertex: Some(v),
                alive: true,
            })
            .collect();
        let mut root = TreeNode::internal(None);
        root.children = (0..n).collect();
        root.volume = g.raw_volume();
        nodes.push(root);
        Self {
            nodes,
            root: n,
            n_vertices: n,
            total_volume: g.raw_volume(),
        }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn vertex_count(&self) -> usize {
        self.n_vertices
    }

    /// Volume of the whole graph.
    pub fn total_volume(&self) -> f64 {
        self.total_volume
    }

    /// Size of the id space, including dead slots.
    pub fn capacity(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_alive(&self, id: NodeId) -> bool {
        self.nodes.get(id).is_some_and(|n| n.alive)
    }

    /// Ids of live nodes in increasing order.
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].alive)
    }

    pub fn node_count(&self) -> usize {
        self.node_ids().count()
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    pub fn volume(&self, id: NodeId) -> f64 {
        self.nodes[id].volume
    }

    pub fn cut(&self, id: NodeId) -> f64 {
        self.nodes[id].cut
    }

    pub fn vertex(&self, id: NodeId) -> Option<usize> {
        self.nodes[id].vertex
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].vertex.is_some()
    }

    pub fn depth(&self, mut id: NodeId) -> usize {
        let mut d = 0;
        while let Some(p) = self.nodes[id].parent {
            id = p;
            d += 1;
        }
        d
    }

    /// Longest root-to-leaf path, in edges.
    pub fn height(&self) -> usize {
        (0..self.n_vertices).map(|v| self.depth(v)).max().unwrap_or(0)
    }

    /// Vertices under `id`, sorted.
    pub fn leaf_vertices(&self, id: NodeId) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            match self.nodes[x].vertex {
                Some(v) => out.push(v),
                None => stack.extend(self.nodes[x].children.iter().copied()),
            }
        }
        out.sort_unstable();
        out
    }

    /// True when `id` lies in the subtree rooted at `ancestor` (inclusive).
    pub fn is_descendant(&self, mut id: NodeId, ancestor: NodeId) -> bool {
        loop {
            if id == ancestor {
                return true;
            }
            match self.nodes[id].parent {
                Some(p) => id = p,
                None => return false,
            }
        }
    }

    /// Entropy term of a node; zero for the root.
    pub fn term(&self, id: NodeId) -> f64 {
        match self.nodes[id].parent {
            None => 0.0,
            Some(p) => node_term(
                self.total_volume,
                self.nodes[id].cut,
                self.nodes[id].volume,
                self.nodes[p].volume,
            ),
        }
    }

    /// Tree entropy from the caches.
    pub fn entropy(&self) -> f64 {
        self.node_ids().map(|id| self.term(id)).sum()
    }

    /// Sum of the terms of `id` and its strict ancestors below the root:
    /// the information needed to reach `id` from the root.
    pub fn deduction_entropy(&self, id: NodeId) -> Result<f64> {
        if id == self.root {
            return Err(Error::Precondition("deduction entropy of the root".into()));
        }
        if !self.is_alive(id) {
            return Err(Error::Precondition(format!("node {id} is not in the tree")));
        }
        let mut sum = 0.0;
        let mut x = id;
        while x != self.root {
            sum += self.term(x);
            x = self.nodes[x].parent.expect("non-root node has a parent");
        }
        Ok(sum)
    }

    /// Top-level communities: vertex sets of the root's children.
    pub fn top_level_partition(&self) -> Vec<Vec<usize>> {
        let mut parts: Vec<Vec<usize>> = self
            .children(self.root)
            .iter()
            .map(|&c| self.leaf_vertices(c))
            .collect();
        parts.sort();
        parts
    }

    /// Checks parent/child links, leaf bijection, and that every internal
    /// node's children partition its vertex set.
    pub fn validate_structure(&self) -> Result<()> {
        let n = self.n_vertices;
        let bad = |msg: String| Err(Error::InvalidTree(msg));
        if !self.is_alive(self.root) || self.nodes[self.root].parent.is_some() {
            return bad("root missing or has a parent".into());
        }
        if self.nodes.len() < n {
            return bad("fewer node slots than vertices".into());
        }
        for v in 0..n {
            let leaf = &self.nodes[v];
            if !leaf.alive || leaf.vertex != Some(v) || !leaf.children.is_empty() {
                return bad(format!("node {v} is not the leaf of vertex {v}"));
            }
        }
        let mut visited = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        while let Some(x) = stack.pop() {
            if visited[x] {
                return bad(format!("node {x} reached twice"));
            }
            visited[x] = true;
            let node = &self.nodes[x];
            if node.vertex.is_some() {
                if x >= n {
                    return bad(format!("node {x} carries a vertex but is not a leaf slot"));
                }
                continue;
            }
            if node.children.is_empty() && n > 0 {
                return bad(format!("internal node {x} has no children"));
            }
            for &c in &node.children {
                if c >= self.nodes.len() || !self.nodes[c].alive {
                    return bad(format!("node {x} lists missing child {c}"));
                }
                if self.nodes[c].parent != Some(x) {
                    return bad(format!("child {c} does not point back to {x}"));
                }
                stack.push(c);
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.alive && !visited[i] {
                return bad(format!("node {i} is unreachable from the root"));
            }
        }
        Ok(())
    }

    /// From-scratch `(volume, cut)` for every slot; dead slots get `NaN`.
    ///
    /// Independent of the incremental caches: volumes are summed bottom-up
    /// from degrees, and each edge adds its weight to every node strictly
    /// below the lowest common ancestor of its endpoints.
    pub fn recompute_caches(&self, g: &Graph) -> Vec<(f64, f64)> {
        let mut out = vec![(f64::NAN, f64::NAN); self.nodes.len()];
        let depth: Vec<usize> = (0..self.nodes.len())
            .map(|i| if self.nodes[i].alive { self.depth(i) } else { 0 })
            .collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.alive {
                out[i] = (0.0, 0.0);
            }
        }
        for v in 0..self.n_vertices {
            let mut x = Some(v);
            while let Some(id) = x {
                out[id].0 += g.degree(v);
                x = self.nodes[id].parent;
            }
        }
        for e in g.edges() {
            let (mut a, mut b) = (e.u, e.v);
            while depth[a] > depth[b] {
                out[a].1 += e.w;
                a = self.nodes[a].parent.unwrap();
            }
            while depth[b] > depth[a] {
                out[b].1 += e.w;
                b = self.nodes[b].parent.unwrap();
            }
            while a != b {
                out[a].1 += e.w;
                out[b].1 += e.w;
                a = self.nodes[a].parent.unwrap();
                b = self.nodes[b].parent.unwrap();
            }
        }
        out
    }

    /// Replaces all caches with from-scratch values.
    pub(crate) fn refresh_caches(&mut self, g: &Graph) {
        let fresh = self.recompute_caches(g);
        for (node, (v, c)) in self.nodes.iter_mut().zip(fresh) {
            if node.alive {
                node.volume = v;
                node.cut = c;
            }
        }
        self.total_volume = g.raw_volume();
    }

    /// Fails if any cached `(volume, cut)` differs from recomputation by more
    /// than `tol`.
    pub fn check_caches(&self, g: &Graph, tol: f64) -> Result<()> {
        for (id, &(v, c)) in self.recompute_caches(g).iter().enumerate() {
            if !self.nodes[id].alive {
                continue;
            }
            let node = &self.nodes[id];
            if (node.volume - v).abs() > tol || (node.cut - c).abs() > tol {
                return Err(Error::InvalidTree(format!(
                    "node {id}: cached (V, g) = ({}, {}), recomputed ({v}, {c})",
                    node.volume, node.cut
                )));
            }
        }
        Ok(())
    }

    /// Dense renumbering: leaves keep their vertex ids, the root becomes `n`,
    /// and internal nodes follow in breadth-first order with children sorted
    /// by smallest contained vertex.
    pub fn compact(&self) -> EncodingTree {
        let n = self.n_vertices;
        let min_vertex = self.min_vertices();
        let mut order = vec![self.root];
        let mut i = 0;
        while i < order.len() {
            let x = order[i];
            i += 1;
            let mut kids: Vec<NodeId> = self.nodes[x]
                .children
                .iter()
                .copied()
                .filter(|&c| !self.is_leaf(c))
                .collect();
            kids.sort_by_key(|&c| min_vertex[c]);
            order.extend(kids);
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        for (v, slot) in remap.iter_mut().enumerate().take(n) {
            *slot = v;
        }
        for (k, &x) in order.iter().enumerate() {
            remap[x] = n + k;
        }
        let mut nodes = vec![TreeNode::internal(None); n + order.len()];
        for old in self.node_ids() {
            let src = &self.nodes[old];
            let mut children: Vec<NodeId> = src.children.clone();
            children.sort_by_key(|&c| min_vertex[c]);
            nodes[remap[old]] = TreeNode {
                parent: src.parent.map(|p| remap[p]),
                children: children.into_iter().map(|c| remap[c]).collect(),
                volume: src.volume,
                cut: src.cut,
                vertex: src.vertex,
                alive: true,
            };
        }
        EncodingTree {
            nodes,
            root: n,
            n_vertices: n,
            total_volume: self.total_volume,
        }
    }

    fn min_vertices(&self) -> Vec<usize> {
        let mut min_v = vec![usize::MAX; self.nodes.len()];
        for v in 0..self.n_vertices {
            let mut x = Some(v);
            while let Some(id) = x {
                if min_v[id] <= v {
                    break;
                }
                min_v[id] = v;
                x = self.nodes[id].parent;
            }
        }
        min_v
    }

    // Low-level mutation helpers. They keep links consistent but leave the
    // caches to the caller.

    pub(crate) fn push_internal(&mut self, parent: NodeId) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::internal(Some(parent)));
        self.nodes[parent].children.push(id);
        id
    }

    pub(crate) fn detach(&mut self, child: NodeId) {
        if let Some(p) = self.nodes[child].parent.take() {
            let kids = &mut self.nodes[p].children;
            if let Some(pos) = kids.iter().position(|&c| c == child) {
                kids.remove(pos);
            }
        }
    }

    pub(crate) fn attach(&mut self, child: NodeId, parent: NodeId) {
        self.nodes[child].parent = Some(parent);
        self.nodes[parent].children.push(child);
    }

    pub(crate) fn kill(&mut self, id: NodeId) {
        self.detach(id);
        let node = &mut self.nodes[id];
        node.alive = false;
        node.children.clear();
    }
}
