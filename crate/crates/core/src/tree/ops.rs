//! Combine and lift operators.
//!
//! Both return `H_before - H_after`, computed locally from the nodes whose
//! terms change. The closed forms below are shared with the greedy builder.

use super::{EncodingTree, NodeId};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Entropy decrease from inserting a node over siblings `a` and `b`.
///
/// Only the terms of `a`, `b` and the new node change; they collapse to
/// `2 * cut(a, b) / vol * log2(V_parent / (V_a + V_b))`.
pub(crate) fn combine_delta(total: f64, parent_volume: f64, va: f64, vb: f64, cut: f64) -> f64 {
    if cut == 0.0 {
        return 0.0;
    }
    2.0 * cut / total * (parent_volume / (va + vb)).log2()
}

/// Quantities a lift of `a` out of `b` into `c = parent(b)` depends on.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LiftInputs {
    pub total: f64,
    pub cut_a: f64,
    pub vol_a: f64,
    pub cut_b: f64,
    pub vol_b: f64,
    /// Sum of the cuts of all children of `b`, `a` included.
    pub children_cut_b: f64,
    pub children_b: usize,
    pub vol_c: f64,
    /// Weight between `T_a` and the rest of `T_b`.
    pub inner_a: f64,
}

/// Entropy decrease from lifting `a` one level up.
///
/// Changes: `a`'s term (parent volume `V_b -> V_c`), `b`'s term (it loses
/// `T_a`, or disappears), and the terms of `b`'s remaining children (their
/// parent volume shrinks).
pub(crate) fn lift_delta(x: &LiftInputs) -> f64 {
    let ratio_bc = (x.vol_b / x.vol_c).log2();
    let mut d = (x.cut_a - x.cut_b) * ratio_bc;
    if x.children_b > 1 {
        let vol_rest = x.vol_b - x.vol_a;
        let cut_rest = x.cut_b - x.cut_a + 2.0 * x.inner_a;
        let others = x.children_cut_b - x.cut_a;
        if cut_rest != 0.0 {
            d += cut_rest * (vol_rest / x.vol_c).log2();
        }
        if others != 0.0 {
            d += others * (x.vol_b / vol_rest).log2();
        }
    }
    d / x.total
}

impl EncodingTree {
    /// Total edge weight between the vertex sets of two disjoint subtrees.
    pub fn cut_between(&self, g: &Graph, a: NodeId, b: NodeId) -> f64 {
        let (small, large) = if self.nodes[a].volume <= self.nodes[b].volume {
            (a, b)
        } else {
            (b, a)
        };
        let mut cut = 0.0;
        for v in self.leaf_vertices(small) {
            for &(u, w) in g.neighbors(v) {
                if self.is_descendant(u, large) {
                    cut += w;
                }
            }
        }
        cut
    }

    /// Inserts a new node over siblings `a` and `b`. Returns the entropy
    /// decrease.
    pub fn combine(&mut self, g: &Graph, a: NodeId, b: NodeId) -> Result<f64> {
        self.check_node(a)?;
        self.check_node(b)?;
        if a == b {
            return Err(Error::Precondition(format!("cannot combine node {a} with itself")));
        }
        let parent = match (self.nodes[a].parent, self.nodes[b].parent) {
            (Some(p), Some(q)) if p == q => p,
            _ => {
                return Err(Error::Precondition(format!(
                    "nodes {a} and {b} are not siblings"
                )))
            }
        };
        let cut = self.cut_between(g, a, b);
        let (va, vb) = (self.nodes[a].volume, self.nodes[b].volume);
        let delta = combine_delta(self.total_volume, self.nodes[parent].volume, va, vb, cut);
        self.combine_unchecked(parent, a, b, cut);
        Ok(delta)
    }

    /// Link surgery and cache update for a combine whose cut is known.
    pub(crate) fn combine_unchecked(
        &mut self,
        parent: NodeId,
        a: NodeId,
        b: NodeId,
        cut: f64,
    ) -> NodeId {
        let d = self.push_internal(parent);
        self.detach(a);
        self.detach(b);
        self.attach(a, d);
        self.attach(b, d);
        self.nodes[d].volume = self.nodes[a].volume + self.nodes[b].volume;
        self.nodes[d].cut = self.nodes[a].cut + self.nodes[b].cut - 2.0 * cut;
        d
    }

    /// Moves `a` from its parent `b` to `b`'s parent, deleting `b` if it is
    /// left empty. Returns the entropy decrease.
    pub fn lift(&mut self, g: &Graph, a: NodeId) -> Result<f64> {
        self.check_node(a)?;
        let b = self.nodes[a]
            .parent
            .ok_or_else(|| Error::Precondition("cannot lift the root".into()))?;
        let c = self.nodes[b].parent.ok_or_else(|| {
            Error::Precondition(format!("node {a} is a child of the root"))
        })?;
        let mut inner = 0.0;
        for v in self.leaf_vertices(a) {
            for &(u, w) in g.neighbors(v) {
                if !self.is_descendant(u, a) && self.is_descendant(u, b) {
                    inner += w;
                }
            }
        }
        let inputs = LiftInputs {
            total: self.total_volume,
            cut_a: self.nodes[a].cut,
            vol_a: self.nodes[a].volume,
            cut_b: self.nodes[b].cut,
            vol_b: self.nodes[b].volume,
            children_cut_b: self.nodes[b]
                .children
                .iter()
                .map(|&k| self.nodes[k].cut)
                .sum(),
            children_b: self.nodes[b].children.len(),
            vol_c: self.nodes[c].volume,
            inner_a: inner,
        };
        let delta = lift_delta(&inputs);
        self.lift_unchecked(a, b, c, inner);
        Ok(delta)
    }

    /// Link surgery and cache update for a lift whose inner cut is known.
    /// Returns whether `b` survived.
    pub(crate) fn lift_unchecked(&mut self, a: NodeId, b: NodeId, c: NodeId, inner: f64) -> bool {
        self.detach(a);
        let survived = !self.nodes[b].children.is_empty();
        if survived {
            let (va, ga) = (self.nodes[a].volume, self.nodes[a].cut);
            let nb = &mut self.nodes[b];
            nb.volume -= va;
            nb.cut = nb.cut - ga + 2.0 * inner;
        } else {
            self.kill(b);
        }
        self.attach(a, c);
        survived
    }

    fn check_node(&self, id: NodeId) -> Result<()> {
        if self.is_alive(id) {
            Ok(())
        } else {
            Err(Error::Precondition(format!("node {id} is not in the tree")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::two_level;
    use super::super::*;
    use crate::fixtures;
    use crate::rng::StableRng;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9
    }

    /// Direct evaluation from recomputed caches, independent of the
    /// incremental delta formulas.
    fn scratch_entropy(g: &Graph, t: &EncodingTree) -> f64 {
        let caches = t.recompute_caches(g);
        let vol = g.raw_volume();
        t.node_ids()
            .filter(|&id| id != t.root())
            .map(|id| {
                let (v, c) = caches[id];
                let pv = caches[t.parent(id).unwrap()].0;
                if c == 0.0 {
                    0.0
                } else {
                    -(c / vol) * (v / pv).log2()
                }
            })
            .sum()
    }

    #[test]
    fn combine_triangle_pair() {
        let g = fixtures::triangle();
        let mut t = single_level_tree(&g);
        let delta = t.combine(&g, 0, 1).unwrap();
        assert!((delta - 0.194988).abs() < 1e-6, "{delta}");
        let h = tree_entropy(&g, &t).unwrap().h_tree;
        assert!((h - 1.389975).abs() < 1e-6, "{h}");
        let d = t.parent(0).unwrap();
        assert_eq!(t.volume(d), 4.0);
        assert_eq!(t.cut(d), 2.0);
        t.check_caches(&g, 1e-12).unwrap();
    }

    #[test]
    fn combine_k2_is_neutral() {
        let g = fixtures::k2();
        let mut t = single_level_tree(&g);
        let delta = t.combine(&g, 0, 1).unwrap();
        assert!(close(delta, 0.0));
        assert!(close(t.entropy(), 1.0));
    }

    #[test]
    fn combine_disconnected_components_is_neutral() {
        let g = Graph::from_pairs(4, &[(0, 1), (2, 3)]).unwrap();
        let mut t = single_level_tree(&g);
        t.combine(&g, 0, 1).unwrap();
        t.combine(&g, 2, 3).unwrap();
        let before = scratch_entropy(&g, &t);
        let (a, b) = (t.parent(0).unwrap(), t.parent(2).unwrap());
        let delta = t.combine(&g, a, b).unwrap();
        assert!(close(delta, 0.0));
        assert!(close(before - scratch_entropy(&g, &t), 0.0));
    }

    #[test]
    fn combine_requires_siblings() {
        let g = fixtures::barbell6();
        let mut t = two_level(&g, &[&[0, 1, 2], &[3, 4, 5]]);
        assert!(matches!(t.combine(&g, 0, 3), Err(Error::Precondition(_))));
        assert!(matches!(t.combine(&g, 0, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn lift_only_child_deletes_intermediate() {
        // ((0,1),2) on the path 0-1-2, then lift 2's sibling pair apart.
        let g = fixtures::path3();
        let mut t = single_level_tree(&g);
        t.combine(&g, 0, 1).unwrap();
        let mid = t.parent(0).unwrap();
        let before = scratch_entropy(&g, &t);
        let d1 = t.lift(&g, 0).unwrap();
        assert!(close(before - scratch_entropy(&g, &t), d1));
        // mid now holds only vertex 1: its term equals what leaf 1 would
        // carry directly under the root, and leaf 1's own term is zero.
        assert_eq!(t.children(mid), &[1]);
        assert!(close(t.term(1), 0.0));
        let mid_term = t.term(mid);
        let before = scratch_entropy(&g, &t);
        let d2 = t.lift(&g, 1).unwrap();
        assert!(!t.is_alive(mid));
        assert!(close(before - scratch_entropy(&g, &t), d2));
        // -(old mid term) + (leaf 1 term change: 0 -> its root-level term)
        assert!(close(d2, mid_term - t.term(1)));
        assert!(close(t.entropy(), 1.5));
        t.check_caches(&g, 1e-12).unwrap();
    }

    #[test]
    fn lift_then_recombine_restores_entropy() {
        let g = fixtures::barbell6();
        let mut t = single_level_tree(&g);
        t.combine(&g, 0, 1).unwrap();
        let a = t.parent(0).unwrap();
        t.combine(&g, a, 2).unwrap();
        let delta = t.parent(2).unwrap();
        let original = t.entropy();
        t.lift(&g, 2).unwrap();
        // delta now has the single child a and carries a's old term
        assert_eq!(t.children(delta), &[a]);
        t.combine(&g, delta, 2).unwrap();
        assert!(close(t.entropy(), original));
        t.check_caches(&g, 1e-12).unwrap();
    }

    #[test]
    fn lift_child_of_root_rejected() {
        let g = fixtures::triangle();
        let mut t = single_level_tree(&g);
        assert!(matches!(t.lift(&g, 0), Err(Error::Precondition(_))));
        let root = t.root();
        assert!(matches!(t.lift(&g, root), Err(Error::Precondition(_))));
    }

    #[test]
    fn lifts_on_three_level_barbell_keep_bijection() {
        let g = fixtures::barbell6();
        let mut t = two_level(&g, &[&[0, 1, 2], &[3, 4, 5]]);
        let left = t.parent(0).unwrap();
        let right = t.parent(3).unwrap();
        t.combine(&g, 0, 1).unwrap();
        t.combine(&g, 3, 4).unwrap();
        assert_eq!(t.height(), 3);
        for leaf in [0, 4, 2] {
            let before = scratch_entropy(&g, &t);
            let d = t.lift(&g, leaf).unwrap();
            t.validate_structure().unwrap();
            t.check_caches(&g, 1e-12).unwrap();
            assert!(close(before - scratch_entropy(&g, &t), d));
        }
        let _ = (left, right);
    }

    #[test]
    fn random_operator_sequences_match_scratch() {
        let mut rng = StableRng::new(11);
        for round in 0..30 {
            let g = crate::generators::random_connected_graph(8, 0.4, round);
            let mut t = single_level_tree(&g);
            for _ in 0..40 {
                let ids: Vec<NodeId> = t.node_ids().collect();
                let x = ids[rng.below(ids.len() as u64) as usize];
                let before = scratch_entropy(&g, &t);
                let delta = if rng.bernoulli(0.5) {
                    let Some(p) = t.parent(x) else { continue };
                    let sibs: Vec<NodeId> =
                        t.children(p).iter().copied().filter(|&s| s != x).collect();
                    if sibs.is_empty() {
                        continue;
                    }
                    let y = sibs[rng.below(sibs.len() as u64) as usize];
                    t.combine(&g, x, y).unwrap()
                } else {
                    match t.parent(x).and_then(|p| t.parent(p)) {
                        Some(_) => t.lift(&g, x).unwrap(),
                        None => continue,
                    }
                };
                assert!(close(before - scratch_entropy(&g, &t), delta));
                t.check_caches(&g, 1e-9).unwrap();
                t.validate_structure().unwrap();
            }
        }
    }
}
