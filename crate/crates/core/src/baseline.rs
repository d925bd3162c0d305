//! Linear link-prediction probe and the seed-variance experiment that
//! compares its integration labels with the simulator's.

use std::collections::HashSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::interpret::{self, InterpretThresholds};
use crate::linalg::{dot, Matrix};
use crate::model;
use crate::rng::{self, stream};
use crate::train::{self, TrainConfig};

/// Positive (edge) and negative (non-edge) node pairs with concatenated
/// features `[x_u; x_v]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub pairs: Vec<(usize, usize)>,
    pub features: Matrix,
    pub labels: Vec<bool>,
    /// 0 or 1 per row. Negatives share the fold of the positive that drew
    /// them.
    pub folds: Vec<u8>,
    /// Rows `0..positives` are the graph edges in edge-id order.
    pub positives: usize,
}

pub fn build_pairs(g: &Graph, x: &EmbeddingMatrix, neg_per_pos: usize, seed: u64) -> Result<PairDataset> {
    if neg_per_pos == 0 {
        return Err(Error::InvalidArgument("neg_per_pos must be at least 1".into()));
    }
    if x.rows() != g.node_count() {
        return Err(Error::Shape {
            context: "probe embedding rows",
            expected: g.node_count(),
            found: x.rows(),
        });
    }
    let n = g.node_count();
    let m = g.edge_count();
    let non_edges = (n * n.saturating_sub(1) / 2).saturating_sub(m);
    let wanted = m * neg_per_pos;
    if wanted > non_edges {
        return Err(Error::InvalidArgument(format!(
            "graph too dense: {wanted} negatives requested, {non_edges} non-edges exist"
        )));
    }

    let mut fr = rng::seeded(seed, stream::FOLDS);
    let order = rng::permutation(m, &mut fr);
    let mut edge_fold = vec![0u8; m];
    for (rank, &e) in order.iter().enumerate() {
        edge_fold[e] = (rank % 2) as u8;
    }

    let mut pairs: Vec<(usize, usize)> = g.edges().to_vec();
    let mut folds = edge_fold.clone();
    let mut taken: HashSet<(usize, usize)> = HashSet::with_capacity(wanted);
    let mut nr = rng::seeded(seed, stream::NEGATIVES);
    let budget = 100 * wanted + 10_000;
    let mut attempts = 0;
    for e in 0..m {
        for _ in 0..neg_per_pos {
            loop {
                attempts += 1;
                if attempts > budget {
                    return Err(Error::InvalidArgument(
                        "graph too dense to sample the requested negatives".into(),
                    ));
                }
                let (a, b) = (nr.random_range(0..n), nr.random_range(0..n));
                let key = (a.min(b), a.max(b));
                if a != b && !g.has_edge(a, b) && taken.insert(key) {
                    pairs.push(key);
                    folds.push(edge_fold[e]);
                    break;
                }
            }
        }
    }
    let d = x.dim();
    let mut features = Matrix::zeros(pairs.len(), 2 * d);
    for (r, &(u, v)) in pairs.iter().enumerate() {
        let row = features.row_mut(r);
        row[..d].copy_from_slice(x.row(u));
        row[d..].copy_from_slice(x.row(v));
    }
    let mut labels = vec![true; m];
    labels.resize(pairs.len(), false);
    Ok(PairDataset {
        pairs,
        features,
        labels,
        folds,
        positives: m,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LogisticModel {
    pub fn zeros(dim: usize) -> Self {
        Self { w: vec![0.0; dim], b: 0.0 }
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        sigmoid(dot(&self.w, features) + self.b)
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy over `rows` and its gradient.
pub fn logistic_loss_and_grad(model: &LogisticModel, ds: &PairDataset, rows: &[usize]) -> (f64, LogisticModel) {
    let mut g = LogisticModel::zeros(model.w.len());
    let mut loss = 0.0;
    let k = rows.len().max(1) as f64;
    for &r in rows {
        let f = ds.features.row(r);
        let t = dot(&model.w, f) + model.b;
        let y = if ds.labels[r] { 1.0 } else { 0.0 };
        // log(1 + e^t) - y t, stable in both tails
        loss += t.max(0.0) + (-t.abs()).exp().ln_1p() - y * t;
        let err = sigmoid(t) - y;
        for (gw, &fv) in g.w.iter_mut().zip(f) {
            *gw += err * fv / k;
        }
        g.b += err / k;
    }
    (loss / k, g)
}

pub fn fold_rows(ds: &PairDataset, fold: u8) -> Vec<usize> {
    (0..ds.labels.len()).filter(|&r| ds.folds[r] == fold).collect()
}

/// Full-batch gradient descent from zero weights on the rows of `fold`.
pub fn train_logistic(ds: &PairDataset, fold: u8, lr: f64, epochs: usize) -> Result<LogisticModel> {
    if fold > 1 {
        return Err(Error::InvalidArgument(format!("fold must be 0 or 1, got {fold}")));
    }
    let rows = fold_rows(ds, fold);
    let mut model = LogisticModel::zeros(ds.features.cols());
    for _ in 0..epochs {
        let (_, g) = logistic_loss_and_grad(&model, ds, &rows);
        for (w, gw) in model.w.iter_mut().zip(&g.w) {
            *w -= lr * gw;
        }
        model.b -= lr * g.b;
    }
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub neg_per_pos: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Probability at or above which an edge counts as learned.
    pub threshold: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            neg_per_pos: 1,
            lr: 0.1,
            epochs: 200,
            threshold: 0.5,
        }
    }
}

/// Out-of-fold edge probability for every graph edge: each fold's model
/// scores the edges of the other fold.
pub fn probe_edge_predictions(g: &Graph, x: &EmbeddingMatrix, cfg: &ProbeConfig, seed: u64) -> Result<Vec<f64>> {
    let ds = build_pairs(g, x, cfg.neg_per_pos, seed)?;
    let models = [
        train_logistic(&ds, 0, cfg.lr, cfg.epochs)?,
        train_logistic(&ds, 1, cfg.lr, cfg.epochs)?,
    ];
    Ok((0..ds.positives)
        .map(|r| models[1 - ds.folds[r] as usize].predict(ds.features.row(r)))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeLabel {
    Integrated,
    NonIntegrated,
    Other,
}

/// Integrated when the base probe misses the edge and the enhanced probe
/// finds it; non-integrated when both miss it.
pub fn ki_label_by_probe(base: &[f64], enhanced: &[f64], threshold: f64) -> Result<Vec<ProbeLabel>> {
    if base.len() != enhanced.len() {
        return Err(Error::Shape {
            context: "probe predictions per edge",
            expected: base.len(),
            found: enhanced.len(),
        });
    }
    Ok(base
        .iter()
        .zip(enhanced)
        .map(|(&b, &e)| match (b >= threshold, e >= threshold) {
            (false, true) => ProbeLabel::Integrated,
            (false, false) => ProbeLabel::NonIntegrated,
            _ => ProbeLabel::Other,
        })
        .collect())
}

/// Per-edge integration flags from one probe run.
pub fn probe_integration_run(
    g: &Graph,
    x_base: &EmbeddingMatrix,
    x_enh: &EmbeddingMatrix,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<Vec<bool>> {
    let base = probe_edge_predictions(g, x_base, cfg, seed)?;
    let enh = probe_edge_predictions(g, x_enh, cfg, seed)?;
    Ok(ki_label_by_probe(&base, &enh, cfg.threshold)?
        .into_iter()
        .map(|l| l == ProbeLabel::Integrated)
        .collect())
}

/// Per-edge integration flags from one simulator run (train, then
/// eval-mode attention on the full graph).
pub fn gcs_integration_run(
    g: &Graph,
    x_base: &EmbeddingMatrix,
    x_enh: &EmbeddingMatrix,
    cfg: &TrainConfig,
    th: &InterpretThresholds,
) -> Result<Vec<bool>> {
    let out = train::train(g, x_base, x_enh, cfg)?;
    let fwd = model::forward(&out.gcs, g, x_base, false, cfg.seed)?;
    let rep = interpret::classify(&fwd.attention, g, th)?;
    Ok(rep.edges.iter().map(|e| e.integrated).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceResult {
    pub runs: usize,
    /// Bits per edge.
    pub probe_entropy: Vec<f64>,
    pub gcs_entropy: Vec<f64>,
    pub control_entropy: Vec<f64>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// Repeats both pipelines once per seed and reports the per-edge entropy of
/// their integration labels, plus a fair-coin control.
pub fn variance_experiment(
    g: &Graph,
    x_base: &EmbeddingMatrix,
    x_enh: &EmbeddingMatrix,
    seeds: &[u64],
    probe: &ProbeConfig,
    gcs: &TrainConfig,
    th: &InterpretThresholds,
) -> Result<VarianceResult> {
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 runs, got {}", seeds.len())));
    }
    let mut probe_runs = Vec::with_capacity(seeds.len());
    let mut gcs_runs = Vec::with_capacity(seeds.len());
    let mut control_runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        probe_runs.push(probe_integration_run(g, x_base, x_enh, probe, seed)?);
        let cfg = TrainConfig { seed, ..gcs.clone() };
        gcs_runs.push(gcs_integration_run(g, x_base, x_enh, &cfg, th)?);
        let mut r = rng::seeded(seed, stream::CONTROL);
        control_runs.push((0..g.edge_count()).map(|_| r.random_bool(0.5)).collect());
    }
    Ok(VarianceResult {
        runs: seeds.len(),
        probe_entropy: interpret::entropy_of_runs(&probe_runs)?,
        gcs_entropy: interpret::entropy_of_runs(&gcs_runs)?,
        control_entropy: interpret::entropy_of_runs(&control_runs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph;

    fn features(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut r = rng::seeded(seed, 40);
        EmbeddingMatrix::from_rows(n, d, (0..n * d).map(|_| rng::normal(&mut r)).collect()).unwrap()
    }

    #[test]
    fn complete_graph_has_no_negatives() {
        let pairs: Vec<_> = (0..5).flat_map(|u| (u + 1..5).map(move |v| (u, v))).collect();
        let g = Graph::from_edges(5, &pairs).unwrap();
        assert!(build_pairs(&g, &features(5, 2, 0), 1, 0).is_err());
    }

    #[test]
    fn negatives_are_verified_non_edges() {
        let g = graph::random_graph(60, 100, 1).unwrap();
        let ds = build_pairs(&g, &features(60, 3, 1), 1, 7).unwrap();
        assert_eq!(ds.pairs.len(), 200);
        for &(u, v) in &ds.pairs[100..] {
            assert!(u < v && !g.has_edge(u, v));
        }
        let f0 = (0..100).filter(|&e| ds.folds[e] == 0).count();
        assert_eq!(f0, 50);
        assert_eq!(ds.features.row(0)[..3], *features(60, 3, 1).row(g.edges()[0].0));

        let other = build_pairs(&g, &features(60, 3, 1), 1, 8).unwrap();
        assert_eq!(other.pairs[..100], ds.pairs[..100]);
        assert_ne!(other.pairs[100..], ds.pairs[100..]);
    }

    #[test]
    fn zero_epochs_predicts_one_half() {
        let g = graph::random_graph(20, 30, 2).unwrap();
        let ds = build_pairs(&g, &features(20, 2, 2), 1, 0).unwrap();
        let m = train_logistic(&ds, 0, 0.1, 0).unwrap();
        assert_eq!(m, LogisticModel::zeros(4));
        assert_eq!(m.predict(ds.features.row(3)), 0.5);
        assert!(train_logistic(&ds, 2, 0.1, 0).is_err());
    }

    fn separable() -> PairDataset {
        // label = first feature positive, margin 0.5
        let mut r = rng::seeded(3, 41);
        let n = 80;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            rows.extend([s * (0.5 + r.random::<f64>()), rng::normal(&mut r)]);
            labels.push(s > 0.0);
        }
        PairDataset {
            pairs: vec![(0, 1); n],
            features: Matrix::from_vec(n, 2, rows),
            labels,
            folds: vec![0; n],
            positives: n / 2,
        }
    }

    #[test]
    fn separable_data_is_fit() {
        let ds = separable();
        let m = train_logistic(&ds, 0, 1.0, 200).unwrap();
        let correct = (0..ds.labels.len())
            .filter(|&r| (m.predict(ds.features.row(r)) >= 0.5) == ds.labels[r])
            .count();
        assert_eq!(correct, ds.labels.len());
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let ds = separable();
        let rows: Vec<usize> = (0..ds.labels.len()).collect();
        let m = LogisticModel {
            w: vec![0.3, -0.7],
            b: 0.1,
        };
        let (_, g) = logistic_loss_and_grad(&m, &ds, &rows);
        let h = 1e-6;
        for k in 0..3 {
            let bump = |delta: f64| {
                let mut p = m.clone();
                if k < 2 {
                    p.w[k] += delta;
                } else {
                    p.b += delta;
                }
                logistic_loss_and_grad(&p, &ds, &rows).0
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let a = if k < 2 { g.w[k] } else { g.b };
            assert!((a - fd).abs() / a.abs().max(fd.abs()) < 1e-6, "{k}: {a} vs {fd}");
        }
    }

    #[test]
    fn loss_decreases_with_small_steps() {
        let g = graph::random_graph(40, 80, 4).unwrap();
        let ds = build_pairs(&g, &features(40, 3, 4), 1, 4).unwrap();
        let rows = fold_rows(&ds, 1);
        let mut prev = f64::INFINITY;
        for epochs in [0, 5, 10, 20, 40] {
            let m = train_logistic(&ds, 1, 1e-3, epochs).unwrap();
            let loss = logistic_loss_and_grad(&m, &ds, &rows).0;
            assert!(loss <= prev);
            prev = loss;
        }
    }

    #[test]
    fn probe_label_rule() {
        let labels = ki_label_by_probe(&[0.3, 0.3, 0.8, 0.8], &[0.8, 0.3, 0.8, 0.2], 0.5).unwrap();
        assert_eq!(
            labels,
            vec![
                ProbeLabel::Integrated,
                ProbeLabel::NonIntegrated,
                ProbeLabel::Other,
                ProbeLabel::Other
            ]
        );
        assert!(ki_label_by_probe(&[0.1], &[], 0.5).is_err());
    }

    #[test]
    fn identical_seeds_give_zero_entropy() {
        let g = graph::random_graph(25, 40, 5).unwrap();
        let (xb, xe) = (features(25, 3, 5), features(25, 3, 6));
        let gcs = TrainConfig {
            epochs: 3,
            heads: 2,
            attn_dim: 4,
            ..TrainConfig::default()
        };
        let res = variance_experiment(
            &g,
            &xb,
            &xe,
            &[9, 9, 9],
            &ProbeConfig::default(),
            &gcs,
            &InterpretThresholds::default(),
        )
        .unwrap();
        assert!(res.probe_entropy.iter().all(|&e| e == 0.0));
        assert!(res.gcs_entropy.iter().all(|&e| e == 0.0));
        assert!(res.control_entropy.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
