//! Undirected, unweighted entity graph.
//!
//! Node ids are dense and 0-based. Edges are stored once as `(u, v)` with
//! `u < v`; adjacency is kept in CSR form with ascending neighbor ids. Self
//! loops are never stored: the attention layer adds them implicitly.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Largest accepted node id in edge-list files.
pub const MAX_NODE_ID: u64 = u32::MAX as u64 - 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    labels: Vec<Option<String>>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    slot_edge: Vec<usize>,
}

/// Bookkeeping from [`Graph::from_edges`] / [`load_edge_list`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BuildStats {
    pub self_loops_dropped: usize,
    pub duplicates_merged: usize,
}

impl Graph {
    /// Builds a graph from possibly duplicated, possibly self-looped pairs.
    /// The first label seen for an edge wins.
    pub fn from_labeled_edges<I>(node_count: usize, pairs: I) -> Result<(Graph, BuildStats)>
    where
        I: IntoIterator<Item = (usize, usize, Option<String>)>,
    {
        let mut stats = BuildStats::default();
        let mut keyed: Vec<(usize, usize, usize, Option<String>)> = Vec::new();
        for (seq, (u, v, label)) in pairs.into_iter().enumerate() {
            if u >= node_count || v >= node_count {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u}, {v}) out of range for {node_count} nodes"
                )));
            }
            if u == v {
                stats.self_loops_dropped += 1;
                continue;
            }
            let (a, b) = if u < v { (u, v) } else { (v, u) };
            keyed.push((a, b, seq, label));
        }
        keyed.sort_unstable_by_key(|&(a, b, seq, _)| (a, b, seq));
        let before = keyed.len();
        keyed.dedup_by(|later, first| later.0 == first.0 && later.1 == first.1);
        stats.duplicates_merged = before - keyed.len();

        let mut edges = Vec::with_capacity(keyed.len());
        let mut labels = Vec::with_capacity(keyed.len());
        for (a, b, _, l) in keyed {
            edges.push((a, b));
            labels.push(l);
        }
        Ok((Self::assemble(node_count, edges, labels), stats))
    }

    pub fn from_edges(node_count: usize, pairs: &[(usize, usize)]) -> Result<Graph> {
        Ok(Self::from_labeled_edges(node_count, pairs.iter().map(|&(u, v)| (u, v, None)))?.0)
    }

    /// `edges` must be sorted, deduplicated, and satisfy `u < v`.
    fn assemble(node_count: usize, edges: Vec<(usize, usize)>, labels: Vec<Option<String>>) -> Graph {
        let mut degree = vec![0usize; node_count];
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = Vec::with_capacity(node_count + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets[..node_count].to_vec();
        let mut neighbors = vec![0usize; offsets[node_count]];
        let mut slot_edge = vec![0usize; offsets[node_count]];
        // Edges sorted by (u, v): the upper neighbors of u arrive ascending,
        // and lower neighbors of v arrive ascending by u. Lower ids are filled
        // first because every (w, v) with w < v precedes any (v, x).
        for (e, &(u, v)) in edges.iter().enumerate() {
            neighbors[cursor[v]] = u;
            slot_edge[cursor[v]] = e;
            cursor[v] += 1;
            neighbors[cursor[u]] = v;
            slot_edge[cursor[u]] = e;
            cursor[u] += 1;
        }
        Graph {
            node_count,
            edges,
            labels,
            offsets,
            neighbors,
            slot_edge,
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Undirected edges as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn label(&self, edge: usize) -> Option<&str> {
        self.labels[edge].as_deref()
    }

    pub fn has_labels(&self) -> bool {
        self.labels.iter().any(Option::is_some)
    }

    /// Ascending neighbor ids of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    /// Edge ids parallel to [`Graph::neighbors`].
    pub fn neighbor_edges(&self, v: usize) -> &[usize] {
        &self.slot_edge[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// CSR row offsets, length `node_count + 1`.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn edge_id(&self, u: usize, v: usize) -> Option<usize> {
        if u >= self.node_count || v >= self.node_count {
            return None;
        }
        let (a, b) = if self.degree(u) <= self.degree(v) { (u, v) } else { (v, u) };
        self.neighbors(a)
            .binary_search(&b)
            .ok()
            .map(|k| self.neighbor_edges(a)[k])
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_id(u, v).is_some()
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(self.edges.len() * 12);
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            match &self.labels[e] {
                Some(l) => writeln!(out, "{u}\t{v}\t{l}"),
                None => writeln!(out, "{u}\t{v}"),
            }
            .expect("write to Vec");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Induced subgraph on `keep` (old ids, any order). New ids follow the
    /// ascending order of the kept old ids.
    pub fn induced(&self, keep: &[usize]) -> Subgraph {
        let mut old_to_new = vec![None; self.node_count];
        let mut new_to_old = keep.to_vec();
        new_to_old.sort_unstable();
        new_to_old.dedup();
        for (new, &old) in new_to_old.iter().enumerate() {
            old_to_new[old] = Some(new);
        }
        let mut edges = Vec::new();
        let mut labels = Vec::new();
        for (e, &(u, v)) in self.edges.iter().enumerate() {
            if let (Some(a), Some(b)) = (old_to_new[u], old_to_new[v]) {
                edges.push((a, b));
                labels.push(self.labels[e].clone());
            }
        }
        // ascending new ids preserve the (u, v) sort order
        let graph = Graph::assemble(new_to_old.len(), edges, labels);
        Subgraph {
            graph,
            old_to_new,
            new_to_old,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Subgraph {
    pub graph: Graph,
    pub old_to_new: Vec<Option<usize>>,
    pub new_to_old: Vec<usize>,
}

/// Parses tab-separated `u<TAB>v[<TAB>label]` lines.
pub fn parse_edge_list(
    text: &str,
    source: &Path,
    expected_nodes: Option<usize>,
) -> Result<(Graph, BuildStats)> {
    let mut pairs = Vec::new();
    let mut max_id: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: source.to_path_buf(),
            line: line_no,
            msg,
        };
        let mut fields = line.splitn(3, '\t');
        let mut id = |name: &str| -> Result<usize> {
            let tok = fields
                .next()
                .ok_or_else(|| parse_err(format!("missing {name} column")))?
                .trim();
            let value: u64 = tok.parse().map_err(|e: std::num::ParseIntError| {
                if matches!(e.kind(), std::num::IntErrorKind::PosOverflow) {
                    parse_err(format!("node id overflow: {tok}"))
                } else {
                    parse_err(format!("malformed node id {tok:?}"))
                }
            })?;
            if value > MAX_NODE_ID {
                return Err(parse_err(format!("node id overflow: {value} > {MAX_NODE_ID}")));
            }
            Ok(value as usize)
        };
        let u = id("head")?;
        let v = id("tail")?;
        let label = fields.next().map(|s| s.to_string()).filter(|s| !s.is_empty());
        max_id = Some(max_id.map_or(u.max(v), |m| m.max(u).max(v)));
        pairs.push((u, v, label));
    }
    let node_count = max_id.map_or(0, |m| m + 1).max(expected_nodes.unwrap_or(0));
    let (graph, stats) = Graph::from_labeled_edges(node_count, pairs)?;
    if graph.edge_count() == 0 {
        return Err(Error::EmptyGraph);
    }
    Ok((graph, stats))
}

pub fn load_edge_list(path: &Path, expected_nodes: Option<usize>) -> Result<(Graph, BuildStats)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, path, expected_nodes)
}

/// Relation topology by endpoint leaf/center status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeTopologyClass {
    #[serde(rename = "1-1")]
    OneOne,
    #[serde(rename = "N-1")]
    NOne,
    #[serde(rename = "N-M")]
    NM,
}

impl EdgeTopologyClass {
    pub const ALL: [EdgeTopologyClass; 3] = [Self::OneOne, Self::NOne, Self::NM];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::OneOne => "1-1",
            Self::NOne => "N-1",
            Self::NM => "N-M",
        }
    }
}

/// Leaf nodes have degree `<= leaf_max_degree`; centers `>= center_min_degree`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyThresholds {
    pub leaf_max_degree: usize,
    pub center_min_degree: usize,
}

impl Default for TopologyThresholds {
    fn default() -> Self {
        Self {
            leaf_max_degree: 1,
            center_min_degree: 2,
        }
    }
}

impl TopologyThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.leaf_max_degree >= self.center_min_degree {
            return Err(Error::InvalidArgument(format!(
                "leaf_max_degree ({}) must be below center_min_degree ({})",
                self.leaf_max_degree, self.center_min_degree
            )));
        }
        Ok(())
    }

    fn class_of_degrees(&self, du: usize, dv: usize) -> EdgeTopologyClass {
        if du <= self.leaf_max_degree && dv <= self.leaf_max_degree {
            EdgeTopologyClass::OneOne
        } else if du >= self.center_min_degree && dv >= self.center_min_degree {
            EdgeTopologyClass::NM
        } else {
            EdgeTopologyClass::NOne
        }
    }
}

pub fn classify_edge_topology(
    g: &Graph,
    (u, v): (usize, usize),
    th: TopologyThresholds,
) -> Result<EdgeTopologyClass> {
    th.validate()?;
    if !g.has_edge(u, v) {
        return Err(Error::EdgeNotFound(u, v));
    }
    Ok(th.class_of_degrees(g.degree(u), g.degree(v)))
}

/// Topology class of every edge, indexed by edge id.
pub fn classify_all_edges(g: &Graph, th: TopologyThresholds) -> Result<Vec<EdgeTopologyClass>> {
    th.validate()?;
    Ok(g.edges()
        .iter()
        .map(|&(u, v)| th.class_of_degrees(g.degree(u), g.degree(v)))
        .collect())
}

/// Seeded breadth-first sample of `target_nodes` nodes, returned as an
/// induced subgraph. Roots are taken from a seeded permutation of all nodes;
/// neighbors are expanded in ascending id order.
pub fn sample_subgraph(g: &Graph, target_nodes: usize, seed: u64) -> Result<Subgraph> {
    if target_nodes == 0 || target_nodes > g.node_count() {
        return Err(Error::InvalidArgument(format!(
            "target_nodes must be in 1..={}, got {target_nodes}",
            g.node_count()
        )));
    }
    let mut r = rng::seeded(seed, rng::stream::SUBGRAPH);
    let roots = rng::permutation(g.node_count(), &mut r);
    let mut seen = vec![false; g.node_count()];
    let mut picked = Vec::with_capacity(target_nodes);
    let mut queue = VecDeque::new();
    'roots: for root in roots {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        queue.clear();
        queue.push_back(root);
        while let Some(v) = queue.pop_front() {
            picked.push(v);
            if picked.len() == target_nodes {
                break 'roots;
            }
            for &w in g.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }
    Ok(g.induced(&picked))
}

/// Node ids of the largest connected component, ascending. Ties go to the
/// component containing the smallest id.
pub fn largest_component(g: &Graph) -> Vec<usize> {
    let n = g.node_count();
    let mut comp = vec![usize::MAX; n];
    let mut best = (0, 0);
    let mut stack = Vec::new();
    for root in 0..n {
        if comp[root] != usize::MAX {
            continue;
        }
        let mut size = 0;
        comp[root] = root;
        stack.push(root);
        while let Some(v) = stack.pop() {
            size += 1;
            for &w in g.neighbors(v) {
                if comp[w] == usize::MAX {
                    comp[w] = root;
                    stack.push(w);
                }
            }
        }
        if size > best.1 {
            best = (root, size);
        }
    }
    (0..n).filter(|&v| comp[v] == best.0).collect()
}

pub fn degree_histogram(g: &Graph) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for v in 0..g.node_count() {
        *h.entry(g.degree(v)).or_insert(0) += 1;
    }
    h
}

pub fn annotation_histogram(g: &Graph) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for l in g.labels.iter().flatten() {
        *h.entry(l.clone()).or_insert(0) += 1;
    }
    h
}

/// Uniform random graph with `m` distinct edges (test and smoke-test helper).
pub fn random_graph(n: usize, m: usize, seed: u64) -> Result<Graph> {
    let max_edges = n.saturating_mul(n.saturating_sub(1)) / 2;
    if m > max_edges {
        return Err(Error::InvalidArgument(format!("{m} edges do not fit in {n} nodes")));
    }
    let mut r = rng::seeded(seed, rng::stream::SYNTH);
    let mut pairs = Vec::with_capacity(m + m / 8);
    let mut g = Graph::from_edges(n, &[])?;
    while g.edge_count() < m {
        let need = m - g.edge_count();
        pairs.extend(g.edges().iter().copied());
        for _ in 0..need + need / 8 + 1 {
            pairs.push((r.random_range(0..n), r.random_range(0..n)));
        }
        g = Graph::from_edges(n, &pairs)?;
        pairs.clear();
    }
    if g.edge_count() > m {
        let edges = g.edges()[..].to_vec();
        let mut idx = rng::permutation(edges.len(), &mut r);
        idx.truncate(m);
        let keep: Vec<_> = idx.into_iter().map(|i| edges[i]).collect();
        g = Graph::from_edges(n, &keep)?;
    }
    Ok(g)
}

/// Random connected graph: a random recursive spanning tree plus `extra`
/// uniformly drawn additional pairs (duplicates merge).
pub fn random_connected_graph(n: usize, extra: usize, seed: u64) -> Result<Graph> {
    let mut r = rng::seeded(seed, rng::stream::SYNTH);
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|v| (r.random_range(0..v), v)).collect();
    if n >= 2 {
        for _ in 0..extra {
            let (a, b) = (r.random_range(0..n), r.random_range(0..n));
            if a != b {
                pairs.push((a, b));
            }
        }
    }
    Graph::from_edges(n, &pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(Graph, BuildStats)> {
        parse_edge_list(text, Path::new("test.tsv"), None)
    }

    #[test]
    fn largest_component_of_two_pieces() {
        let g = Graph::from_edges(6, &[(0, 1), (2, 3), (3, 4)]).unwrap();
        assert_eq!(largest_component(&g), vec![2, 3, 4]);
        assert_eq!(largest_component(&Graph::from_edges(2, &[]).unwrap()), vec![0]);
    }

    #[test]
    fn loads_simple_path() {
        let (g, stats) = parse("0\t1\n1\t2\n").unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!((0..3).map(|v| g.degree(v)).collect::<Vec<_>>(), vec![1, 2, 1]);
        assert_eq!(stats, BuildStats::default());
    }

    #[test]
    fn drops_self_loops_and_merges_duplicates() {
        let (g, stats) = parse("0\t0\n0\t1\n0\t1\n").unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(stats.self_loops_dropped, 1);
        assert_eq!(stats.duplicates_merged, 1);
    }

    #[test]
    fn reversed_duplicate_is_merged() {
        let (g, stats) = parse("# header\n\n2\t1\tp\n1\t2\tq\n").unwrap();
        assert_eq!(g.edges(), &[(1, 2)]);
        assert_eq!(g.label(0), Some("p"));
        assert_eq!(stats.duplicates_merged, 1);
    }

    #[test]
    fn expected_nodes_extends_count() {
        let (g, _) = parse_edge_list("0\t1\n", Path::new("x"), Some(10)).unwrap();
        assert_eq!(g.node_count(), 10);
        assert_eq!(g.degree(9), 0);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        match parse("0\t1\n# c\n1 2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse("0\t99999999999999999999999\n") {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("overflow"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        match parse("0\t4294967295\n") {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("overflow"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("0\t-1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse("\n# only comments\n"), Err(Error::EmptyGraph)));
        assert!(matches!(parse("3\t3\n"), Err(Error::EmptyGraph)));
    }

    #[test]
    fn topology_classes() {
        let th = TopologyThresholds::default();
        let pair = Graph::from_edges(2, &[(0, 1)]).unwrap();
        assert_eq!(classify_edge_topology(&pair, (0, 1), th).unwrap(), EdgeTopologyClass::OneOne);
        let path = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(classify_edge_topology(&path, (0, 1), th).unwrap(), EdgeTopologyClass::NOne);
        let tri = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        for &(u, v) in tri.edges() {
            assert_eq!(classify_edge_topology(&tri, (v, u), th).unwrap(), EdgeTopologyClass::NM);
        }
        assert!(matches!(
            classify_edge_topology(&path, (0, 2), th),
            Err(Error::EdgeNotFound(0, 2))
        ));
        let bad = TopologyThresholds {
            leaf_max_degree: 2,
            center_min_degree: 2,
        };
        assert!(classify_edge_topology(&path, (0, 1), bad).is_err());
    }

    #[test]
    fn histograms() {
        let path = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(degree_histogram(&path), BTreeMap::from([(1, 2), (2, 1)]));
        assert!(annotation_histogram(&path).is_empty());
        let (g, _) = parse("0\t1\ta\n1\t2\ta\n2\t3\tb\n").unwrap();
        assert_eq!(
            annotation_histogram(&g),
            BTreeMap::from([("a".to_string(), 2), ("b".to_string(), 1)])
        );
    }

    #[test]
    fn full_sample_is_identity() {
        let g = random_graph(30, 60, 3).unwrap();
        let s = sample_subgraph(&g, 30, 11).unwrap();
        assert_eq!(s.graph, g);
        assert_eq!(s.new_to_old, (0..30).collect::<Vec<_>>());
        assert!(s.old_to_new.iter().enumerate().all(|(i, m)| *m == Some(i)));
    }

    #[test]
    fn sample_is_deterministic() {
        let edges: Vec<_> = (0..5).map(|i| (i, i + 1)).collect();
        let path = Graph::from_edges(6, &edges).unwrap();
        let a = sample_subgraph(&path, 3, 42).unwrap();
        for _ in 0..5 {
            assert_eq!(sample_subgraph(&path, 3, 42).unwrap().new_to_old, a.new_to_old);
        }
        assert_eq!(a.graph.node_count(), 3);
        // BFS from a single root on a path yields a connected piece
        assert_eq!(a.graph.edge_count(), 2);
        assert!(sample_subgraph(&path, 0, 1).is_err());
        assert!(sample_subgraph(&path, 7, 1).is_err());
    }

    #[test]
    fn random_graph_has_requested_size() {
        let g = random_graph(100, 400, 9).unwrap();
        assert_eq!(g.edge_count(), 400);
        assert!(random_graph(4, 7, 0).is_err());
    }
}
