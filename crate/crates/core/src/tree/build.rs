//! Greedy construction of a low-entropy encoding tree of bounded height.
//!
//! Phase 1 merges siblings under the root bottom-up, always taking the
//! combine with the largest entropy decrease, until no combine helps or the
//! root is binary. Only edge-connected siblings are candidates; a pair's
//! delta depends only on its own cut and volumes, so a lazily invalidated
//! heap over the quotient graph suffices.
//!
//! Phase 2 flattens the tree until the height bound holds. Each step
//! dissolves the internal node whose removal costs the least entropy:
//! all of its children are lifted into its parent at once and the node
//! disappears. The cost only involves the node's own cut, the sum of its
//! children's cuts and two volumes, so it is kept in a versioned heap and
//! refreshed for the parent and children of every dissolved node.
//!
//! A final pass moves single vertices to a neighbor's community while that
//! lowers the entropy, which repairs misplacements left by the greedy order.

use std::cmp::Ordering;

use dary_heap::{PeekMut, QuaternaryHeap};
use rustc_hash::FxHashMap;

use super::ops::combine_delta;
use super::refine::refine_leaves;
use super::{
    one_dim_entropy, tree_entropy, EncodingTree, EntropyReport, NodeId, TreeNode, ENTROPY_TOL,
};
use crate::error::{Error, Result};
use crate::graph::Graph;

pub const DEFAULT_REFINE_SWEEPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    /// Maximum tree height, at least 2.
    pub height: usize,
    /// Keep combining under the root until it has two children, even when
    /// the remaining combines do not lower the entropy.
    pub force_binary: bool,
    /// Maximum number of single-vertex move sweeps after flattening; 0
    /// skips the pass.
    pub refine_sweeps: usize,
}

impl BuildOptions {
    pub fn new(height: usize) -> Self {
        Self {
            height,
            force_binary: false,
            refine_sweeps: DEFAULT_REFINE_SWEEPS,
        }
    }
}

pub fn build_optimal_tree(g: &Graph, height: usize) -> Result<(EncodingTree, EntropyReport)> {
    build_optimal_tree_with(g, &BuildOptions::new(height))
}

pub fn build_optimal_tree_with(
    g: &Graph,
    opts: &BuildOptions,
) -> Result<(EncodingTree, EntropyReport)> {
    if opts.height < 2 {
        return Err(Error::Config(format!(
            "tree height must be at least 2, got {}",
            opts.height
        )));
    }
    one_dim_entropy(g)?;
    let mut t = EncodingTree::single_level(g);
    for parent in split_components(g, &mut t) {
        merge_phase(g, &mut t, parent, opts.force_binary);
    }
    Flattener::new(&mut t).run(opts.height);
    splice_single_children(&mut t);
    if opts.refine_sweeps > 0 {
        let moves = refine_leaves(g, &mut t, opts.refine_sweeps);
        log::debug!("refinement moved {moves} vertices");
        splice_single_children(&mut t);
    }
    let mut t = t.compact();
    let mut report = tree_entropy(g, &t)?;
    if report.h_tree > report.h1 + ENTROPY_TOL {
        log::debug!("flattened tree is worse than the flat partition; using the flat one");
        t = EncodingTree::single_level(g);
        report = tree_entropy(g, &t)?;
    }
    Ok((t, report))
}

/// Gives each connected component its own node under the root. Returns the
/// nodes whose children still need merging.
fn split_components(g: &Graph, t: &mut EncodingTree) -> Vec<NodeId> {
    let (count, comp) = g.components();
    let root = t.root();
    if count == 1 {
        return vec![root];
    }
    let nodes: Vec<NodeId> = (0..count).map(|_| t.push_internal(root)).collect();
    for v in 0..g.vertex_count() {
        let c = nodes[comp[v]];
        t.detach(v);
        t.attach(v, c);
        t.nodes[c].volume += g.degree(v);
    }
    nodes
        .into_iter()
        .filter(|&c| t.children(c).len() > 2)
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct MergeCand {
    delta: f64,
    lo: u32,
    hi: u32,
    cut: f64,
}

impl PartialEq for MergeCand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for MergeCand {}

impl PartialOrd for MergeCand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MergeCand {
    // Max-heap order: larger delta first, then the smaller id pair.
    fn cmp(&self, other: &Self) -> Ordering {
        self.delta
            .total_cmp(&other.delta)
            .then_with(|| other.lo.cmp(&self.lo))
            .then_with(|| other.hi.cmp(&self.hi))
    }
}

/// Upper bound on the best pair a community owns, valid while `version`
/// matches the community's current version.
#[derive(Debug, Clone, Copy)]
struct SlotBound {
    delta: f64,
    slot: u32,
    version: u32,
}

impl PartialEq for SlotBound {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SlotBound {}

impl PartialOrd for SlotBound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SlotBound {
    fn cmp(&self, other: &Self) -> Ordering {
        self.delta
            .total_cmp(&other.delta)
            .then_with(|| other.slot.cmp(&self.slot))
    }
}

fn find(uf: &mut [usize], mut x: usize) -> usize {
    while uf[x] != x {
        uf[x] = uf[uf[x]];
        x = uf[x];
    }
    x
}

fn merge_phase(g: &Graph, t: &mut EncodingTree, parent: NodeId, force_binary: bool) {
    let total = t.total_volume();
    let parent_volume = t.volume(parent);
    // Communities are indexed by slot; a merged community keeps the slot of
    // the side with more neighbors, so only the smaller side's adjacency is
    // rewritten. The parent's child list is rebuilt at the end.
    let members = std::mem::take(&mut t.nodes[parent].children);
    assert!(members.len() <= u32::MAX as usize, "too many siblings for slot ids");
    let mut slot_of: FxHashMap<NodeId, usize> = FxHashMap::default();
    for (i, &v) in members.iter().enumerate() {
        slot_of.insert(v, i);
    }
    let slots = members.len();
    let mut node = members.clone();
    let mut uf: Vec<usize> = (0..slots).collect();
    let mut adj: Vec<FxHashMap<usize, f64>> = members
        .iter()
        .map(|&v| g.neighbors(v).iter().map(|&(u, w)| (slot_of[&u], w)).collect())
        .collect();
    let mut vol: Vec<f64> = members.iter().map(|&v| t.volume(v)).collect();
    let delta_of = |vol: &[f64], a: usize, b: usize, w: f64| {
        combine_delta(total, parent_volume, vol[a], vol[b], w)
    };
    // A pair is queued with the endpoint that has more neighbors, so when a
    // hub grows, the entries it invalidates sit in its own small heap.
    let owner = |adj: &[FxHashMap<usize, f64>], a: usize, b: usize| {
        if (adj[a].len(), b) > (adj[b].len(), a) {
            a
        } else {
            b
        }
    };

    let mut queued: Vec<Vec<MergeCand>> = vec![Vec::new(); slots];
    for a in 0..slots {
        for (&b, &w) in &adj[a] {
            if a < b {
                queued[owner(&adj, a, b)].push(MergeCand {
                    delta: delta_of(&vol, a, b, w),
                    lo: a as u32,
                    hi: b as u32,
                    cut: w,
                });
            }
        }
    }
    let mut local: Vec<QuaternaryHeap<MergeCand>> =
        queued.into_iter().map(QuaternaryHeap::from).collect();
    let mut version = vec![0u32; slots];
    let mut bounds: QuaternaryHeap<SlotBound> = local
        .iter()
        .enumerate()
        .filter_map(|(s, h)| {
            h.peek().map(|top| SlotBound {
                delta: top.delta,
                slot: s as u32,
                version: 0,
            })
        })
        .collect();

    // A queued delta never underestimates its pair: volumes only grow, and
    // every pair whose cut grows gets a fresh entry. Each community's bound
    // covers its whole heap, so an exact best pair that still beats every
    // other bound is the true maximum.
    let first_new = t.nodes.len();
    let mut live = slots;
    while live > 2 {
        let Some(bound) = bounds.pop() else { break };
        let s = bound.slot as usize;
        if uf[s] != s || bound.version != version[s] {
            continue;
        }
        let best = loop {
            let Some(mut top) = local[s].peek_mut() else {
                break None;
            };
            let (a, b) = (find(&mut uf, top.lo as usize), find(&mut uf, top.hi as usize));
            if a == b {
                PeekMut::pop(top);
                continue;
            }
            let w = top.cut;
            let delta = delta_of(&vol, a, b, w);
            if delta < top.delta {
                *top = MergeCand {
                    delta,
                    lo: a.min(b) as u32,
                    hi: a.max(b) as u32,
                    cut: w,
                };
                continue;
            }
            break Some((a, b, delta, w));
        };
        let Some((a, b, delta, w)) = best else { continue };
        let exact = SlotBound {
            delta,
            slot: s as u32,
            version: version[s],
        };
        if bounds.peek().is_some_and(|next| *next > exact) {
            bounds.push(exact);
            continue;
        }
        local[s].pop();
        // An entry queued before its pair's cut grew recomputes below the
        // fresher entry, so an accepted entry always carries the live cut.
        debug_assert_eq!(w, adj[a][&b]);
        if delta <= ENTROPY_TOL && !force_binary {
            break;
        }

        let merged = t.nodes.len();
        let mut m = TreeNode::internal(Some(parent));
        m.children = vec![node[a], node[b]];
        m.volume = vol[a] + vol[b];
        m.cut = t.cut(node[a]) + t.cut(node[b]) - 2.0 * w;
        t.nodes.push(m);
        t.nodes[node[a]].parent = Some(merged);
        t.nodes[node[b]].parent = Some(merged);

        let (keep, gone) = if adj[a].len() >= adj[b].len() { (a, b) } else { (b, a) };
        uf[gone] = keep;
        node[keep] = merged;
        vol[keep] = t.volume(merged);
        let mut moved = std::mem::take(&mut local[gone]);
        if moved.len() > local[keep].len() {
            std::mem::swap(&mut moved, &mut local[keep]);
        }
        local[keep].append(&mut moved);
        let row = std::mem::take(&mut adj[gone]);
        adj[keep].remove(&gone);
        for (x, wx) in row {
            if x == keep {
                continue;
            }
            adj[x].remove(&gone);
            *adj[x].entry(keep).or_insert(0.0) += wx;
            let sum = adj[keep].entry(x).or_insert(0.0);
            let grew = *sum > 0.0;
            *sum += wx;
            let sum = *sum;
            if !grew {
                // The queued (x, gone) entry still bounds this pair.
                continue;
            }
            let o = owner(&adj, keep, x);
            local[o].push(MergeCand {
                delta: delta_of(&vol, keep, x, sum),
                lo: keep.min(x) as u32,
                hi: keep.max(x) as u32,
                cut: sum,
            });
            if o == x {
                version[x] += 1;
                bounds.push(SlotBound {
                    delta: local[x].peek().expect("just pushed").delta,
                    slot: x as u32,
                    version: version[x],
                });
            }
        }
        version[keep] += 1;
        if let Some(top) = local[keep].peek() {
            bounds.push(SlotBound {
                delta: top.delta,
                slot: keep as u32,
                version: version[keep],
            });
        }
        live -= 1;
    }
    let kids: Vec<NodeId> = members
        .into_iter()
        .chain(first_new..t.nodes.len())
        .filter(|&x| t.parent(x) == Some(parent))
        .collect();
    t.nodes[parent].children = kids;

    // Remaining siblings share no edges; pair them off by id.
    while force_binary && t.children(parent).len() > 2 {
        let mut kids = t.children(parent).to_vec();
        kids.sort_unstable();
        t.combine_unchecked(parent, kids[0], kids[1], 0.0);
    }
}

#[derive(Debug, Clone, Copy)]
struct DissolveCand {
    delta: f64,
    node: NodeId,
    version: u64,
}

impl PartialEq for DissolveCand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for DissolveCand {}

impl PartialOrd for DissolveCand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DissolveCand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.delta
            .total_cmp(&other.delta)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Entropy decrease from lifting every child of `b` into `b`'s parent,
/// which deletes `b`. Never positive.
pub(crate) fn dissolve_delta(total: f64, cut_b: f64, children_cut_b: f64, vol_b: f64, vol_c: f64) -> f64 {
    let spread = children_cut_b - cut_b;
    if spread == 0.0 {
        return 0.0;
    }
    spread / total * (vol_b / vol_c).log2()
}

/// Range add and global maximum over a fixed array.
struct MaxTree {
    size: usize,
    max: Vec<i64>,
    add: Vec<i64>,
}

impl MaxTree {
    fn new(values: &[i64]) -> Self {
        let size = values.len().max(1);
        let mut s = Self {
            size,
            max: vec![i64::MIN / 2; 4 * size],
            add: vec![0; 4 * size],
        };
        s.build(1, 0, size - 1, values);
        s
    }

    fn build(&mut self, at: usize, lo: usize, hi: usize, values: &[i64]) {
        if lo == hi {
            self.max[at] = values.get(lo).copied().unwrap_or(i64::MIN / 2);
            return;
        }
        let mid = (lo + hi) / 2;
        self.build(2 * at, lo, mid, values);
        self.build(2 * at + 1, mid + 1, hi, values);
        self.max[at] = self.max[2 * at].max(self.max[2 * at + 1]);
    }

    fn range_add(&mut self, l: usize, r: usize, v: i64) {
        self.update(1, 0, self.size - 1, l, r, v);
    }

    fn update(&mut self, at: usize, lo: usize, hi: usize, l: usize, r: usize, v: i64) {
        if r < lo || hi < l {
            return;
        }
        if l <= lo && hi <= r {
            self.max[at] += v;
            self.add[at] += v;
            return;
        }
        let mid = (lo + hi) / 2;
        self.update(2 * at, lo, mid, l, r, v);
        self.update(2 * at + 1, mid + 1, hi, l, r, v);
        self.max[at] = self.max[2 * at].max(self.max[2 * at + 1]) + self.add[at];
    }

    fn top(&self) -> i64 {
        self.max[1]
    }
}

struct Flattener<'a> {
    t: &'a mut EncodingTree,
    /// Sum of the cuts of a node's children.
    child_cut: Vec<f64>,
    version: Vec<u64>,
    heap: QuaternaryHeap<DissolveCand>,
    /// Preorder interval of every subtree. Dissolving a node keeps the
    /// preorder of the rest intact, so leaf depths live in a range tree.
    span: Vec<(usize, usize)>,
    depths: MaxTree,
}

impl<'a> Flattener<'a> {
    fn new(t: &'a mut EncodingTree) -> Self {
        let size = t.capacity();
        let mut span = vec![(0, 0); size];
        let mut leaf_depth = Vec::with_capacity(size);
        let mut order = Vec::with_capacity(size);
        let mut stack = vec![(t.root(), 0i64, false)];
        while let Some((x, d, done)) = stack.pop() {
            if done {
                span[x].1 = leaf_depth.len() - 1;
                continue;
            }
            span[x].0 = leaf_depth.len();
            leaf_depth.push(if t.is_leaf(x) { d } else { i64::MIN / 2 });
            order.push(x);
            stack.push((x, d, true));
            for &c in t.children(x).iter().rev() {
                stack.push((c, d + 1, false));
            }
        }
        let mut child_cut = vec![0.0; size];
        for &x in &order {
            if let Some(p) = t.parent(x) {
                child_cut[p] += t.cut(x);
            }
        }
        let mut s = Self {
            t,
            child_cut,
            version: vec![0; size],
            heap: QuaternaryHeap::new(),
            span,
            depths: MaxTree::new(&leaf_depth),
        };
        for x in order {
            s.rescan(x);
        }
        s
    }

    fn rescan(&mut self, b: NodeId) {
        let t = &*self.t;
        if !t.is_alive(b) || t.is_leaf(b) {
            return;
        }
        let Some(c) = t.parent(b) else { return };
        self.version[b] += 1;
        self.heap.push(DissolveCand {
            delta: dissolve_delta(t.total_volume(), t.cut(b), self.child_cut[b], t.volume(b), t.volume(c)),
            node: b,
            version: self.version[b],
        });
    }

    fn run(mut self, max_height: usize) {
        while self.depths.top() > max_height as i64 {
            let Some(top) = self.heap.pop() else { break };
            if !self.t.is_alive(top.node) || self.version[top.node] != top.version {
                continue;
            }
            self.apply(top.node);
        }
        let t = &mut *self.t;
        for x in 0..t.nodes.len() {
            if !t.nodes[x].alive {
                continue;
            }
            let mut kids = std::mem::take(&mut t.nodes[x].children);
            kids.retain(|&k| t.nodes[k].alive && t.nodes[k].parent == Some(x));
            t.nodes[x].children = kids;
        }
    }

    fn apply(&mut self, b: NodeId) {
        let c = self.t.parent(b).expect("dissolved node has a parent");
        let (lo, hi) = self.span[b];
        self.depths.range_add(lo, hi, -1);
        self.child_cut[c] += self.child_cut[b] - self.t.cut(b);
        // `b` stays in `c`'s child list as a dead entry until the end.
        let kids = std::mem::take(&mut self.t.nodes[b].children);
        let node = &mut self.t.nodes[b];
        node.alive = false;
        node.parent = None;
        for &k in &kids {
            if self.t.is_alive(k) {
                self.t.attach(k, c);
                self.rescan(k);
            }
        }
        self.rescan(c);
    }
}

/// Removes internal nodes with exactly one child. Such a node carries the
/// entropy term its child would carry one level up, so the splice leaves the
/// tree entropy unchanged.
fn splice_single_children(t: &mut EncodingTree) {
    let root = t.root();
    for b in 0..t.capacity() {
        if b == root || !t.is_alive(b) || t.is_leaf(b) || t.children(b).len() != 1 {
            continue;
        }
        let a = t.children(b)[0];
        let c = t.parent(b).expect("non-root");
        t.detach(a);
        t.kill(b);
        t.attach(a, c);
    }
}
