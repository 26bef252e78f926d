//! Tree export formats.
//!
//! TSV: one `node_id<TAB>parent_id<TAB>vertex_or_dash` line per node, root's
//! parent written as `-1`. JSON: nested objects carrying each node's volume,
//! cut and entropy term.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{EncodingTree, NodeId, TreeNode};
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Serialize)]
pub struct TreeJson {
    pub id: NodeId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertex: Option<usize>,
    pub volume: f64,
    pub cut: f64,
    pub entropy: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeJson>,
}

impl EncodingTree {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# node_id\tparent_id\tvertex\n");
        for id in self.node_ids() {
            let parent = self.parent(id).map_or(-1, |p| p as i64);
            match self.vertex(id) {
                Some(v) => {
                    let _ = writeln!(out, "{id}\t{parent}\t{v}");
                }
                None => {
                    let _ = writeln!(out, "{id}\t{parent}\t-");
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> TreeJson {
        fn node(t: &EncodingTree, id: NodeId) -> TreeJson {
            TreeJson {
                id,
                vertex: t.vertex(id),
                volume: t.volume(id),
                cut: t.cut(id),
                entropy: t.term(id),
                children: t.children(id).iter().map(|&c| node(t, c)).collect(),
            }
        }
        node(self, self.root())
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json())
            .map_err(|e| Error::Validation(format!("tree serialization: {e}")))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn load_tree_tsv(path: &Path, g: &Graph) -> Result<EncodingTree> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tree_tsv(&text, path, g)
}

/// Parses a tree TSV and recomputes its caches from `g`. File node ids may
/// be arbitrary; leaves are renumbered to their vertex ids.
pub fn parse_tree_tsv(text: &str, path: &Path, g: &Graph) -> Result<EncodingTree> {
    let mut rows: Vec<(i64, i64, Option<usize>, usize)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').map(str::trim).collect();
        if f.len() != 3 {
            return Err(Error::parse(path, lineno, "expected 'node<TAB>parent<TAB>vertex|-'"));
        }
        let id: i64 = f[0]
            .parse()
            .ok()
            .filter(|&x: &i64| x >= 0)
            .ok_or_else(|| Error::parse(path, lineno, format!("bad node id '{}'", f[0])))?;
        let parent: i64 = f[1]
            .parse()
            .ok()
            .filter(|&x: &i64| x >= -1)
            .ok_or_else(|| Error::parse(path, lineno, format!("bad parent id '{}'", f[1])))?;
        let vertex = match f[2] {
            "-" => None,
            s => Some(
                s.parse::<usize>()
                    .map_err(|_| Error::parse(path, lineno, format!("bad vertex '{s}'")))?,
            ),
        };
        rows.push((id, parent, vertex, lineno));
    }

    let n = g.vertex_count();
    let mut remap: HashMap<i64, NodeId> = HashMap::new();
    let mut next = n;
    for &(id, _, vertex, lineno) in &rows {
        let slot = match vertex {
            Some(v) if v >= n => {
                return Err(Error::parse(path, lineno, format!("vertex {v} out of range")))
            }
            Some(v) => v,
            None => {
                next += 1;
                next - 1
            }
        };
        if remap.insert(id, slot).is_some() {
            return Err(Error::parse(path, lineno, format!("duplicate node id {id}")));
        }
    }
    let mut nodes: Vec<TreeNode> = (0..next)
        .map(|_| TreeNode {
            parent: None,
            children: Vec::new(),
            volume: 0.0,
            cut: 0.0,
            vertex: None,
            alive: false,
        })
        .collect();
    let mut root = None;
    for &(id, parent, vertex, lineno) in &rows {
        let slot = remap[&id];
        if nodes[slot].alive {
            return Err(Error::InvalidTree(format!(
                "{}:{lineno}: vertex listed twice",
                path.display()
            )));
        }
        nodes[slot].alive = true;
        nodes[slot].vertex = vertex;
        if parent < 0 {
            if root.replace(slot).is_some() {
                return Err(Error::InvalidTree(format!("{}: more than one root", path.display())));
            }
        } else {
            let p = *remap.get(&parent).ok_or_else(|| {
                Error::parse(path, lineno, format!("unknown parent {parent}"))
            })?;
            nodes[slot].parent = Some(p);
        }
    }
    for &(id, _, _, _) in &rows {
        let slot = remap[&id];
        if let Some(p) = nodes[slot].parent {
            nodes[p].children.push(slot);
        }
    }
    let root = root.ok_or_else(|| Error::InvalidTree(format!("{}: no root", path.display())))?;
    let mut t = EncodingTree {
        nodes,
        root,
        n_vertices: n,
        total_volume: g.raw_volume(),
    };
    t.validate_structure()?;
    t.refresh_caches(g);
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::tree::build_optimal_tree;

    #[test]
    fn tsv_round_trip() {
        let g = fixtures::barbell6();
        let (t, _) = build_optimal_tree(&g, 2).unwrap();
        let text = t.to_tsv();
        assert!(text.contains("6\t-1\t-"));
        let back = parse_tree_tsv(&text, Path::new("t.tsv"), &g).unwrap();
        assert_eq!(back.top_level_partition(), t.top_level_partition());
        assert!((back.entropy() - t.entropy()).abs() < 1e-12);
    }

    #[test]
    fn json_carries_terms() {
        let g = fixtures::barbell6();
        let (t, _) = build_optimal_tree(&g, 2).unwrap();
        let json = serde_json::to_value(t.to_json()).unwrap();
        assert_eq!(json["volume"], 14.0);
        assert_eq!(json["children"].as_array().unwrap().len(), 2);
        assert_eq!(json["children"][0]["cut"], 1.0);
    }

    #[test]
    fn rejects_missing_leaf_and_bad_parent() {
        let g = fixtures::triangle();
        let p = Path::new("t.tsv");
        assert!(parse_tree_tsv("3\t-1\t-\n0\t3\t0\n1\t3\t1\n", p, &g).is_err());
        assert!(parse_tree_tsv("3\t-1\t-\n0\t3\t0\n1\t3\t1\n2\t9\t2\n", p, &g).is_err());
        assert!(parse_tree_tsv("3\t-1\t-\n0\t3\t0\n1\t3\t1\n2\t3\n", p, &g).is_err());
        assert!(parse_tree_tsv("10\t-1\t-\n5\t10\t0\n6\t10\t1\n7\t10\t2\n", p, &g).is_ok());
    }
}
