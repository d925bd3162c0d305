//! Turns attention coefficients into integration labels, CR/CF entity
//! classes, topology breakdowns and the JSON/CSV report.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, EdgeTopologyClass, Graph, TopologyThresholds};
use crate::model::{self, AttentionRecord};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const HISTOGRAM_BINS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpretThresholds {
    /// An edge is integrated when its mean attention exceeds this.
    pub edge_integrated: f64,
    /// Self-attention above this marks catastrophic remembering.
    pub self_cr: f64,
    /// Self-attention below this marks catastrophic forgetting.
    pub self_cf: f64,
}

impl Default for InterpretThresholds {
    fn default() -> Self {
        Self {
            edge_integrated: 0.1,
            self_cr: 0.9,
            self_cf: 0.1,
        }
    }
}

impl InterpretThresholds {
    pub fn validate(&self) -> Result<()> {
        let InterpretThresholds {
            edge_integrated: e,
            self_cr: cr,
            self_cf: cf,
        } = *self;
        if !(0.0 < e && e < 1.0) {
            return Err(Error::InvalidArgument(format!("edge threshold {e} not in (0, 1)")));
        }
        if !(0.0 < cf && cf < cr && cr < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < cf ({cf}) < cr ({cr}) < 1"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeClass {
    #[serde(rename = "CR")]
    Remembering,
    #[serde(rename = "CF")]
    Forgetting,
    Neither,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub u: usize,
    pub v: usize,
    pub attn_uv: f64,
    pub attn_vu: f64,
    pub attn_mean: f64,
    pub integrated: bool,
    pub topology: EdgeTopologyClass,
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub self_attn: f64,
    pub class: NodeClass,
}

/// Equal-width bins over [0, 1]; the last bin includes 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn unit(values: impl IntoIterator<Item = f64>, bins: usize) -> Histogram {
        let bin_edges = (0..=bins).map(|b| b as f64 / bins as f64).collect();
        let mut counts = vec![0; bins];
        for v in values {
            let b = ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Histogram { bin_edges, counts }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologySummary {
    pub edges: usize,
    pub integrated: usize,
    pub integrated_pct: f64,
    /// Distinct endpoints of edges in this class.
    pub nodes: usize,
    pub cr_pct: f64,
    pub cf_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub edges: usize,
    pub integrated: usize,
    pub integrated_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summaries {
    /// Percentages count undirected edges.
    pub denominator: String,
    pub edge_count: usize,
    pub node_count: usize,
    pub integrated_edges: usize,
    pub integrated_pct: f64,
    pub cr_nodes: usize,
    pub cf_nodes: usize,
    pub cr_pct: f64,
    pub cf_pct: f64,
    pub by_topology: BTreeMap<String, TopologySummary>,
    pub by_label: BTreeMap<String, LabelSummary>,
    pub edge_attention_histogram: Histogram,
    pub self_attention_histogram: Histogram,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    /// SHA-256 of the run configuration, hex.
    pub config_hash: Option<String>,
    /// SHA-256 of the checkpoint file, hex.
    pub checkpoint_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpretReport {
    pub schema_version: u32,
    pub thresholds: InterpretThresholds,
    pub provenance: Provenance,
    pub summaries: Summaries,
    pub edges: Vec<EdgeRecord>,
    pub nodes: Vec<NodeRecord>,
}

fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

pub fn node_class(self_attn: f64, th: &InterpretThresholds) -> NodeClass {
    if self_attn > th.self_cr {
        NodeClass::Remembering
    } else if self_attn < th.self_cf {
        NodeClass::Forgetting
    } else {
        NodeClass::Neither
    }
}

/// Summary statistics computed from per-edge and per-node records alone.
pub fn summarize(edges: &[EdgeRecord], nodes: &[NodeRecord]) -> Summaries {
    let class_of: BTreeMap<usize, NodeClass> = nodes.iter().map(|n| (n.id, n.class)).collect();
    let mut by_topology = BTreeMap::new();
    for t in EdgeTopologyClass::ALL {
        let in_class: Vec<&EdgeRecord> = edges.iter().filter(|e| e.topology == t).collect();
        let integrated = in_class.iter().filter(|e| e.integrated).count();
        let endpoints: BTreeSet<usize> = in_class.iter().flat_map(|e| [e.u, e.v]).collect();
        let count = |c: NodeClass| endpoints.iter().filter(|i| class_of.get(i) == Some(&c)).count();
        by_topology.insert(
            t.as_str().to_string(),
            TopologySummary {
                edges: in_class.len(),
                integrated,
                integrated_pct: pct(integrated, in_class.len()),
                nodes: endpoints.len(),
                cr_pct: pct(count(NodeClass::Remembering), endpoints.len()),
                cf_pct: pct(count(NodeClass::Forgetting), endpoints.len()),
            },
        );
    }
    let mut by_label: BTreeMap<String, LabelSummary> = BTreeMap::new();
    for e in edges {
        if let Some(l) = &e.label {
            let s = by_label.entry(l.clone()).or_insert(LabelSummary {
                edges: 0,
                integrated: 0,
                integrated_pct: 0.0,
            });
            s.edges += 1;
            s.integrated += e.integrated as usize;
        }
    }
    for s in by_label.values_mut() {
        s.integrated_pct = pct(s.integrated, s.edges);
    }
    let integrated = edges.iter().filter(|e| e.integrated).count();
    let cr = nodes.iter().filter(|n| n.class == NodeClass::Remembering).count();
    let cf = nodes.iter().filter(|n| n.class == NodeClass::Forgetting).count();
    Summaries {
        denominator: "undirected edges".to_string(),
        edge_count: edges.len(),
        node_count: nodes.len(),
        integrated_edges: integrated,
        integrated_pct: pct(integrated, edges.len()),
        cr_nodes: cr,
        cf_nodes: cf,
        cr_pct: pct(cr, nodes.len()),
        cf_pct: pct(cf, nodes.len()),
        by_topology,
        by_label,
        edge_attention_histogram: Histogram::unit(edges.iter().map(|e| e.attn_mean), HISTOGRAM_BINS),
        self_attention_histogram: Histogram::unit(nodes.iter().map(|n| n.self_attn), HISTOGRAM_BINS),
    }
}

pub fn classify(attn: &AttentionRecord, g: &Graph, th: &InterpretThresholds) -> Result<InterpretReport> {
    classify_with_topology(attn, g, th, TopologyThresholds::default())
}

pub fn classify_with_topology(
    attn: &AttentionRecord,
    g: &Graph,
    th: &InterpretThresholds,
    topo: TopologyThresholds,
) -> Result<InterpretReport> {
    th.validate()?;
    let (edge_attn, self_attn) = model::head_average_attention(attn, g)?;
    let topology = graph::classify_all_edges(g, topo)?;
    let edges = edge_attn
        .iter()
        .zip(&topology)
        .enumerate()
        .map(|(id, (ea, &t))| EdgeRecord {
            u: ea.u,
            v: ea.v,
            attn_uv: ea.attn_uv,
            attn_vu: ea.attn_vu,
            attn_mean: ea.mean,
            integrated: ea.mean > th.edge_integrated,
            topology: t,
            label: g.label(id).map(str::to_string),
        })
        .collect::<Vec<_>>();
    let nodes = self_attn
        .iter()
        .enumerate()
        .map(|(id, &a)| NodeRecord {
            id,
            self_attn: a,
            class: node_class(a, th),
        })
        .collect::<Vec<_>>();
    Ok(InterpretReport {
        schema_version: REPORT_SCHEMA_VERSION,
        thresholds: *th,
        provenance: Provenance::default(),
        summaries: summarize(&edges, &nodes),
        edges,
        nodes,
    })
}

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    term(p) + term(1.0 - p)
}

/// Per-item entropy (bits) of a boolean label across runs; `runs[k][i]` is
/// run `k`'s label for item `i`.
pub fn entropy_of_runs(runs: &[Vec<bool>]) -> Result<Vec<f64>> {
    if runs.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 runs, got {}", runs.len())));
    }
    let n = runs[0].len();
    if let Some(bad) = runs.iter().find(|r| r.len() != n) {
        return Err(Error::Shape {
            context: "items per run",
            expected: n,
            found: bad.len(),
        });
    }
    let k = runs.len() as f64;
    Ok((0..n)
        .map(|i| binary_entropy(runs.iter().filter(|r| r[i]).count() as f64 / k))
        .collect())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            context: "pearson inputs",
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("pearson input has zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation between mean edge attention and a per-edge weight keyed by
/// `(u, v)` with `u < v`.
pub fn attention_vs_weight_correlation(
    report: &InterpretReport,
    edge_weights: &BTreeMap<(usize, usize), f64>,
) -> Result<f64> {
    let mut attn = Vec::with_capacity(report.edges.len());
    let mut weights = Vec::with_capacity(report.edges.len());
    for e in &report.edges {
        let w = edge_weights
            .get(&(e.u, e.v))
            .ok_or_else(|| Error::InvalidArgument(format!("missing weight for edge ({}, {})", e.u, e.v)))?;
        attn.push(e.attn_mean);
        weights.push(*w);
    }
    pearson(&attn, &weights)
}

/// Edge weights parsed from the edge-list annotation column.
pub fn edge_weights_from_labels(g: &Graph) -> Result<BTreeMap<(usize, usize), f64>> {
    g.edges()
        .iter()
        .enumerate()
        .map(|(id, &(u, v))| {
            let label = g
                .label(id)
                .ok_or_else(|| Error::InvalidArgument(format!("edge ({u}, {v}) has no annotation")))?;
            let w: f64 = label
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("edge ({u}, {v}) annotation {label:?} is not a number")))?;
            Ok(((u, v), w))
        })
        .collect()
}

pub fn write_report(report: &InterpretReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn report_from_json(text: &str) -> Result<InterpretReport> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Format("report has no schema_version".into()))?;
    if found != REPORT_SCHEMA_VERSION as u64 {
        return Err(Error::SchemaMismatch {
            expected: REPORT_SCHEMA_VERSION,
            found: found as u32,
        });
    }
    Ok(serde_json::from_value(value)?)
}

pub fn read_report(path: &Path) -> Result<InterpretReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    report_from_json(&text)
}

pub fn write_edges_csv(edges: &[EdgeRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for e in edges {
        w.serialize(e).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_edges_csv(path: &Path) -> Result<Vec<EdgeRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Slots;

    /// Attention record with explicit head-1 rows for a small graph.
    fn record(g: &Graph, rows: &[&[f64]]) -> AttentionRecord {
        let slots = Slots::new(g);
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        assert_eq!(flat.len(), slots.range(g.node_count() - 1).end);
        AttentionRecord::from_heads(slots, vec![flat])
    }

    #[test]
    fn threshold_examples() {
        // path 0-1-2: slots are [0,1], [0,1,2], [1,2]
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let attn = record(&g, &[&[0.95, 0.05], &[0.05, 0.5, 0.45], &[0.97, 0.03]]);
        let rep = classify(&attn, &g, &InterpretThresholds::default()).unwrap();
        assert_eq!(rep.edges[0].attn_mean, 0.05);
        assert!(!rep.edges[0].integrated);
        assert!(rep.edges[1].integrated);
        assert_eq!(rep.nodes[0].class, NodeClass::Remembering);
        assert_eq!(rep.nodes[1].class, NodeClass::Neither);
        assert_eq!(rep.nodes[2].class, NodeClass::Forgetting);
        assert_eq!(rep.summaries.integrated_pct, 50.0);
        assert_eq!(rep.summaries.by_topology["N-1"].edges, 2);
    }

    #[test]
    fn thresholds_validate() {
        assert!(InterpretThresholds::default().validate().is_ok());
        let bad = InterpretThresholds {
            self_cf: 0.95,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = InterpretThresholds {
            edge_integrated: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(binary_entropy(0.5), 1.0);
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        let oracle = -(0.9f64 * 0.9f64.log2() + 0.1 * 0.1f64.log2());
        assert!((binary_entropy(0.9) - oracle).abs() < 1e-15);
        assert!((binary_entropy(0.9) - 0.4690).abs() < 5e-5);

        let runs = vec![vec![true, true, false], vec![false, true, false]];
        assert_eq!(entropy_of_runs(&runs).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(entropy_of_runs(&runs[..1]).is_err());
        assert!(entropy_of_runs(&[vec![true], vec![true, false]]).is_err());
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let lin: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &lin).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        // centered x = (-1.5,-.5,.5,1.5), y = (-.5,-1.5,1.5,.5): 3 / 5
        assert!((pearson(&x, &[2.0, 1.0, 4.0, 3.0]).unwrap() - 0.6).abs() < 1e-15);
        assert!(pearson(&x, &[1.0; 4]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn weights_equal_to_attention_correlate_perfectly() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let attn = record(&g, &[&[0.7, 0.3], &[0.2, 0.5, 0.3], &[0.1, 0.9]]);
        let rep = classify(&attn, &g, &InterpretThresholds::default()).unwrap();
        let w: BTreeMap<_, _> = rep.edges.iter().map(|e| ((e.u, e.v), e.attn_mean)).collect();
        assert!((attention_vs_weight_correlation(&rep, &w).unwrap() - 1.0).abs() < 1e-12);
        let mut partial = w.clone();
        partial.remove(&(0, 1));
        assert!(attention_vs_weight_correlation(&rep, &partial).is_err());
    }

    #[test]
    fn report_round_trip_and_schema_check() {
        let g = Graph::from_labeled_edges(
            3,
            [(0, 1, Some("a,b".to_string())), (1, 2, Some("3".to_string()))],
        )
        .unwrap()
        .0;
        let attn = record(&g, &[&[0.123456789012345, 0.876543210987655], &[0.2, 0.5, 0.3], &[0.1, 0.9]]);
        let rep = classify(&attn, &g, &InterpretThresholds::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_report(&rep, &p).unwrap();
        assert_eq!(read_report(&p).unwrap(), rep);

        let csv_path = dir.path().join("e.csv");
        write_edges_csv(&rep.edges, &csv_path).unwrap();
        assert_eq!(read_edges_csv(&csv_path).unwrap(), rep.edges);

        let mut v: serde_json::Value = serde_json::to_value(&rep).unwrap();
        v["schema_version"] = 99.into();
        assert!(matches!(
            report_from_json(&v.to_string()),
            Err(Error::SchemaMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn empty_report_is_valid() {
        let rep_edges: Vec<EdgeRecord> = vec![];
        let s = summarize(&rep_edges, &[]);
        assert_eq!(s.integrated_pct, 0.0);
        assert_eq!(s.edge_attention_histogram.counts.iter().sum::<usize>(), 0);
    }

    #[test]
    fn histogram_includes_unit_endpoint() {
        let h = Histogram::unit([0.0, 0.05, 0.1, 0.999, 1.0], 10);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[9], 2);
    }
}
