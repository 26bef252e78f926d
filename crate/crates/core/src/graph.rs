//! Weighted undirected simple graphs, attribute matrices, and their TSV forms.
//!
//! Edge lists are `u<TAB>v[<TAB>w]` per line with `#` comments. A field that
//! starts with `#` ends the data part of a line, so annotated outputs (such as
//! sampled edge sets with provenance) load as plain edge lists. Writers emit a
//! `# vertices<TAB>n` header which the loader honours, so trailing isolated
//! vertices survive a round trip.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// An undirected weighted edge, stored with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub w: f64,
}

impl Edge {
    pub fn new(a: usize, b: usize, w: f64) -> Self {
        let (u, v) = if a <= b { (a, b) } else { (b, a) };
        Self { u, v, w }
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.u, self.v)
    }
}

/// Dense row-major `n x d` matrix of finite reals; row `i` belongs to vertex `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl AttributeMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Validation(format!(
                "attribute buffer has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        if cols == 0 && rows > 0 {
            return Err(Error::Validation("attribute rows need at least one column".into()));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite attribute at row {}, column {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Validation(format!(
                "ragged attribute rows: row {i} has {} columns, expected {cols}",
                rows[i].len()
            )));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Weighted undirected simple graph on vertices `0..n`.
///
/// Immutable once built. Degrees and volume are cached at construction.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    neighbors: Vec<(usize, f64)>,
    degrees: Vec<f64>,
    volume: f64,
    attributes: Option<AttributeMatrix>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.edges == other.edges && self.attributes == other.attributes
    }
}

impl Graph {
    /// Builds a graph, rejecting self-loops, non-positive or non-finite
    /// weights, out-of-range ids and repeated pairs.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut edges: Vec<Edge> = edges
            .into_iter()
            .map(|e| Edge::new(e.u, e.v, e.w))
            .collect();
        for e in &edges {
            if e.u == e.v {
                return Err(Error::Validation(format!("self-loop on vertex {}", e.u)));
            }
            if e.v >= n {
                return Err(Error::Validation(format!(
                    "edge ({}, {}) references vertex {} but n = {n}",
                    e.u, e.v, e.v
                )));
            }
            if !(e.w.is_finite() && e.w > 0.0) {
                return Err(Error::Validation(format!(
                    "edge ({}, {}) has non-positive weight {}",
                    e.u, e.v, e.w
                )));
            }
        }
        edges.sort_by_key(Edge::pair);
        if let Some(w) = edges.windows(2).find(|w| w[0].pair() == w[1].pair()) {
            return Err(Error::Validation(format!(
                "duplicate edge ({}, {})",
                w[0].u, w[0].v
            )));
        }
        Ok(Self::build(n, edges))
    }

    /// Unit-weight convenience constructor.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::from_edges(n, pairs.iter().map(|&(u, v)| Edge::new(u, v, 1.0)))
    }

    fn build(n: usize, edges: Vec<Edge>) -> Self {
        let mut counts = vec![0usize; n + 1];
        let mut degrees = vec![0.0; n];
        for e in &edges {
            counts[e.u + 1] += 1;
            counts[e.v + 1] += 1;
            degrees[e.u] += e.w;
            degrees[e.v] += e.w;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut neighbors = vec![(0usize, 0.0f64); 2 * edges.len()];
        for e in &edges {
            neighbors[cursor[e.u]] = (e.v, e.w);
            cursor[e.u] += 1;
            neighbors[cursor[e.v]] = (e.u, e.w);
            cursor[e.v] += 1;
        }
        // Edges are sorted by (u, v), so every neighbor slice is sorted by id.
        let volume = 2.0 * edges.iter().map(|e| e.w).sum::<f64>();
        Self {
            n,
            edges,
            offsets,
            neighbors,
            degrees,
            volume,
            attributes: None,
        }
    }

    pub fn with_attributes(mut self, attributes: AttributeMatrix) -> Result<Self> {
        if attributes.rows() != self.n {
            return Err(Error::Validation(format!(
                "attribute matrix has {} rows but graph has {} vertices",
                attributes.rows(),
                self.n
            )));
        }
        self.attributes = Some(attributes);
        Ok(self)
    }

    pub fn without_attributes(mut self) -> Self {
        self.attributes = None;
        self
    }

    pub fn attributes(&self) -> Option<&AttributeMatrix> {
        self.attributes.as_ref()
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges sorted by `(u, v)`.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbors of `v` sorted by id, with edge weights.
    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> f64 {
        self.degrees[v]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// `2 * sum(w)`; an edgeless graph has no defined volume.
    pub fn volume(&self) -> Result<f64> {
        if self.edges.is_empty() {
            return Err(Error::Degenerate("graph has no edges".into()));
        }
        Ok(self.volume)
    }

    /// Cached volume without the empty-graph check.
    pub(crate) fn raw_volume(&self) -> f64 {
        self.volume
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        let nbrs = self.neighbors(u);
        nbrs.binary_search_by(|&(x, _)| x.cmp(&v))
            .ok()
            .map(|i| nbrs[i].1)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.weight(u, v).is_some()
    }

    /// Connected component id per vertex, numbered by smallest member.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let mut comp = vec![usize::MAX; self.n];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..self.n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = count;
            stack.push(s);
            while let Some(x) = stack.pop() {
                for &(y, _) in self.neighbors(x) {
                    if comp[y] == usize::MAX {
                        comp[y] = count;
                        stack.push(y);
                    }
                }
            }
            count += 1;
        }
        (count, comp)
    }

    pub fn isolated_vertices(&self) -> Vec<usize> {
        (0..self.n).filter(|&v| self.degrees[v] <= 0.0).collect()
    }

    /// Edge-list TSV text (9 decimal places), re-loadable with [`load_edge_list`].
    pub fn to_edge_list(&self) -> String {
        let mut out = String::with_capacity(self.edges.len() * 24 + 32);
        let _ = writeln!(out, "# vertices\t{}", self.n);
        for e in &self.edges {
            let _ = writeln!(out, "{}\t{}\t{:.9}", e.u, e.v, e.w);
        }
        out
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_edge_list()).map_err(|e| Error::io(path, e))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Splits a data line into fields, dropping a trailing `#` comment field.
fn data_fields(line: &str) -> Vec<&str> {
    line.split('\t')
        .take_while(|f| !f.trim_start().starts_with('#'))
        .map(str::trim)
        .collect()
}

fn vertex_hint(line: &str) -> Option<usize> {
    let rest = line.strip_prefix('#')?.trim_start();
    let rest = rest.strip_prefix("vertices")?;
    rest.trim().parse().ok()
}

pub fn load_edge_list(path: &Path) -> Result<Graph> {
    parse_edge_list(&read(path)?, path)
}

pub fn parse_edge_list(text: &str, path: &Path) -> Result<Graph> {
    let mut edges = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    let mut n_hint = None;
    let mut max_id = None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if line.trim_start().starts_with('#') {
            if let Some(n) = vertex_hint(line.trim_start()) {
                n_hint = Some(n);
            }
            continue;
        }
        let fields = data_fields(line);
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 'u<TAB>v[<TAB>w]', got {} fields", fields.len()),
            ));
        }
        let id = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(path, lineno, format!("bad vertex id '{s}'")))
        };
        let u = id(fields[0])?;
        let v = id(fields[1])?;
        let w = match fields.get(2) {
            Some(s) => s
                .parse::<f64>()
                .map_err(|_| Error::parse(path, lineno, format!("bad weight '{s}'")))?,
            None => 1.0,
        };
        if u == v {
            return Err(Error::Validation(format!(
                "{}:{lineno}: self-loop on vertex {u}",
                path.display()
            )));
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::Validation(format!(
                "{}:{lineno}: non-positive weight {w}",
                path.display()
            )));
        }
        let key = (u.min(v), u.max(v));
        if let Some(first) = seen.insert(key, lineno) {
            return Err(Error::Validation(format!(
                "{}:{lineno}: duplicate edge ({}, {}), first seen on line {first}",
                path.display(),
                key.0,
                key.1
            )));
        }
        max_id = Some(max_id.map_or(key.1, |m: usize| m.max(key.1)));
        edges.push(Edge::new(u, v, w));
    }
    let needed = max_id.map_or(0, |m| m + 1);
    let n = match n_hint {
        Some(h) if h < needed => {
            return Err(Error::Validation(format!(
                "{}: header declares {h} vertices but ids reach {}",
                path.display(),
                needed - 1
            )))
        }
        Some(h) => h,
        None => needed,
    };
    Graph::from_edges(n, edges)
}

/// Loads an edge list whose endpoints are arbitrary string labels. Labels get
/// ids in order of first appearance; the returned vector maps id to label.
pub fn load_labeled_edge_list(path: &Path) -> Result<(Graph, Vec<String>)> {
    let text = read(path)?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut edges = Vec::new();
    let mut seen = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields = data_fields(line);
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::parse(path, lineno, "expected 'u<TAB>v[<TAB>w]'"));
        }
        let mut id_of = |s: &str| {
            *ids.entry(s.to_string()).or_insert_with(|| {
                labels.push(s.to_string());
                labels.len() - 1
            })
        };
        let u = id_of(fields[0]);
        let v = id_of(fields[1]);
        let w = match fields.get(2) {
            Some(s) => s
                .parse::<f64>()
                .map_err(|_| Error::parse(path, lineno, format!("bad weight '{s}'")))?,
            None => 1.0,
        };
        let key = (u.min(v), u.max(v));
        if seen.insert(key, lineno).is_some() {
            return Err(Error::Validation(format!(
                "{}:{lineno}: duplicate edge ({}, {})",
                path.display(),
                fields[0],
                fields[1]
            )));
        }
        edges.push(Edge::new(u, v, w));
    }
    let g = Graph::from_edges(labels.len(), edges).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    Ok((g, labels))
}

/// Writes `id<TAB>label` lines for a relabeling produced by
/// [`load_labeled_edge_list`].
pub fn write_label_mapping(path: &Path, labels: &[String]) -> Result<()> {
    let mut out = String::new();
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(out, "{i}\t{l}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_attributes(path: &Path) -> Result<AttributeMatrix> {
    parse_attributes(&read(path)?, path)
}

pub fn parse_attributes(text: &str, path: &Path) -> Result<AttributeMatrix> {
    let mut rows: Vec<Option<Vec<f64>>> = Vec::new();
    let mut width = None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields = data_fields(line);
        if fields.len() < 2 {
            return Err(Error::parse(path, lineno, "expected 'id<TAB>f1[<TAB>...]'"));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad vertex id '{}'", fields[0])))?;
        let values = fields[1..]
            .iter()
            .map(|s| {
                let x: f64 = s
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("bad value '{s}'")))?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::parse(path, lineno, format!("non-finite value '{s}'")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("ragged row: {} features, expected {w}", values.len()),
                ))
            }
            _ => {}
        }
        if rows.len() <= id {
            rows.resize(id + 1, None);
        }
        if rows[id].is_some() {
            return Err(Error::parse(path, lineno, format!("duplicate id {id}")));
        }
        rows[id] = Some(values);
    }
    if let Some(missing) = rows.iter().position(Option::is_none) {
        return Err(Error::Validation(format!(
            "{}: no attribute row for vertex {missing}",
            path.display()
        )));
    }
    let rows: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
    AttributeMatrix::from_rows(&rows)
}

/// Attribute TSV text with 9 decimal places.
pub fn attributes_to_tsv(x: &AttributeMatrix) -> String {
    let mut out = String::new();
    for i in 0..x.rows() {
        let _ = write!(out, "{i}");
        for v in x.row(i) {
            let _ = write!(out, "\t{v:.9}");
        }
        out.push('\n');
    }
    out
}

pub fn write_attributes(path: &Path, x: &AttributeMatrix) -> Result<()> {
    fs::write(path, attributes_to_tsv(x)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn parse(text: &str) -> Result<Graph> {
        parse_edge_list(text, Path::new("test.tsv"))
    }

    #[test]
    fn default_weight_single_edge() {
        let g = parse("0\t1").unwrap();
        assert_eq!(g.vertex_count(), 2);
        assert_eq!(g.edges(), &[Edge::new(0, 1, 1.0)]);
    }

    #[test]
    fn weighted_volume() {
        let g = parse("0\t1\t2.5\n1\t2\t0.5").unwrap();
        assert_eq!(g.vertex_count(), 3);
        assert_eq!(g.volume().unwrap(), 6.0);
    }

    #[test]
    fn self_loop_rejected() {
        assert!(matches!(parse("0\t0\t1.0"), Err(Error::Validation(_))));
    }

    #[test]
    fn reversed_pair_is_duplicate() {
        let err = parse("0\t1\n1\t0").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn nonpositive_weight_rejected() {
        assert!(matches!(parse("0\t1\t0"), Err(Error::Validation(_))));
        assert!(matches!(parse("0\t1\t-2"), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("# header\n0\t1\n0\tx\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(parse("0\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn comments_and_annotation_fields_ignored() {
        let g = parse("# c\n0\t1\t1.0\t#provenance=4\n\n1\t2\n").unwrap();
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn vertex_header_keeps_isolated_tail() {
        let g = Graph::from_pairs(5, &[(0, 1)]).unwrap();
        let back = parse(&g.to_edge_list()).unwrap();
        assert_eq!(back.vertex_count(), 5);
        assert_eq!(back, g);
    }

    #[test]
    fn fixture_volumes() {
        assert_eq!(fixtures::k2().volume().unwrap(), 2.0);
        assert_eq!(fixtures::triangle().volume().unwrap(), 6.0);
        assert_eq!(fixtures::barbell6().volume().unwrap(), 14.0);
        let d: Vec<f64> = fixtures::barbell6().degrees().to_vec();
        assert_eq!(d, vec![2.0, 2.0, 3.0, 3.0, 2.0, 2.0]);
    }

    #[test]
    fn empty_graph_has_no_volume() {
        let g = Graph::from_edges(3, []).unwrap();
        assert!(matches!(g.volume(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn attributes_any_order() {
        let p = Path::new("x.tsv");
        let a = parse_attributes("0\t1.0\t0.0\n1\t0.0\t1.0", p).unwrap();
        let b = parse_attributes("1\t0.0\t1.0\n0\t1.0\t0.0", p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.row(0), &[1.0, 0.0]);
        assert_eq!(a.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn attribute_errors() {
        let p = Path::new("x.tsv");
        assert!(parse_attributes("0\t1\t2\n1\t1\t2\t3", p).is_err());
        assert!(parse_attributes("0\t1\n0\t2", p).is_err());
        assert!(parse_attributes("1\t1", p).is_err());
        assert!(parse_attributes("0\tNaN", p).is_err());
        assert!(parse_attributes("0\tinf", p).is_err());
    }

    #[test]
    fn neighbor_lookup() {
        let g = fixtures::barbell6();
        assert_eq!(g.weight(2, 3), Some(1.0));
        assert_eq!(g.weight(3, 2), Some(1.0));
        assert!(!g.has_edge(0, 5));
        let (count, comp) = g.components();
        assert_eq!(count, 1);
        assert!(comp.iter().all(|&c| c == 0));
    }

    #[test]
    fn labeled_ids_relabel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.tsv");
        fs::write(&p, "alice\tbob\nbob\tcarol\t2\n").unwrap();
        let (g, labels) = load_labeled_edge_list(&p).unwrap();
        assert_eq!(labels, vec!["alice", "bob", "carol"]);
        assert_eq!(g.weight(1, 2), Some(2.0));
        let m = dir.path().join("map.tsv");
        write_label_mapping(&m, &labels).unwrap();
        assert_eq!(fs::read_to_string(m).unwrap(), "0\talice\n1\tbob\n2\tcarol\n");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_graph() -> impl Strategy<Value = Graph> {
            (2usize..12).prop_flat_map(|n| {
                proptest::collection::btree_map((0..n, 0..n), 1u32..20, 0..30).prop_map(
                    move |m| {
                        let mut seen = std::collections::BTreeSet::new();
                        let edges: Vec<Edge> = m
                            .into_iter()
                            .filter(|&((a, b), _)| a != b && seen.insert((a.min(b), a.max(b))))
                            .map(|((a, b), w)| Edge::new(a, b, w as f64 / 4.0))
                            .collect();
                        Graph::from_edges(n, edges).unwrap()
                    },
                )
            })
        }

        proptest! {
            #[test]
            fn edge_list_round_trip(g in arb_graph()) {
                let back = parse(&g.to_edge_list()).unwrap();
                prop_assert_eq!(back, g);
            }

            #[test]
            fn volume_permutation_invariant(g in arb_graph(), rot in 0usize..50) {
                let mut edges = g.edges().to_vec();
                if !edges.is_empty() {
                    let r = rot % edges.len();
                    edges.rotate_left(r);
                    edges.reverse();
                }
                let h = Graph::from_edges(g.vertex_count(), edges).unwrap();
                prop_assert_eq!(h.raw_volume(), g.raw_volume());
                let unit = Graph::from_pairs(
                    g.vertex_count(),
                    &g.edges().iter().map(Edge::pair).collect::<Vec<_>>(),
                ).unwrap();
                prop_assert_eq!(unit.raw_volume(), 2.0 * g.edge_count() as f64);
            }
        }
    }
}
