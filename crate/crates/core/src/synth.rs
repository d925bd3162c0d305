//! Synthetic instances with known answers: planted integration graphs,
//! correlated Gaussian pairs, and ranking metrics.
//!
//! A planted instance starts from i.i.d. standard normal base rows `x_i`
//! and builds the enhanced rows as
//!
//! ```text
//! planted-edge endpoint i:  β x_i + (1-β) mean_{j ∈ P(i)} M x_j + σ ε_i
//! remembering node:         x_i + σ ε_i
//! forgetting node:          ε_i                 (fresh, unrelated to x_i)
//! any other node:           x_i + σ ε_i
//! ```
//!
//! where `P(i)` are the planted neighbors of `i` and `M` is a random
//! orthogonal matrix.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{save_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::graph::{self, Graph};
use crate::linalg::Matrix;
use crate::rng::{self, stream};

pub const TRUTH_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub n_nodes: usize,
    pub avg_degree: f64,
    pub planted_fraction: f64,
    pub cr_fraction: f64,
    pub cf_fraction: f64,
    pub dim: usize,
    pub beta: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_nodes: 500,
            avg_degree: 8.0,
            planted_fraction: 0.3,
            cr_fraction: 0.05,
            cf_fraction: 0.05,
            dim: 16,
            beta: 0.5,
            sigma: 0.05,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("planted_fraction", self.planted_fraction)?;
        unit("cr_fraction", self.cr_fraction)?;
        unit("cf_fraction", self.cf_fraction)?;
        unit("beta", self.beta)?;
        if self.cr_fraction + self.cf_fraction > 1.0 {
            return Err(Error::InvalidArgument("cr_fraction + cf_fraction exceeds 1".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.avg_degree >= 1.0 && self.avg_degree.is_finite()) {
            return Err(Error::InvalidArgument(format!("avg_degree must be >= 1, got {}", self.avg_degree)));
        }
        if self.n_nodes < 2 || self.dim == 0 {
            return Err(Error::InvalidArgument("need at least 2 nodes and dim >= 1".into()));
        }
        if self.avg_degree > (self.n_nodes - 1) as f64 {
            return Err(Error::InvalidArgument(format!(
                "avg_degree {} impossible with {} nodes",
                self.avg_degree, self.n_nodes
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedInstance {
    pub config: PlantedConfig,
    pub graph: Graph,
    pub x_base: EmbeddingMatrix,
    pub x_enh: EmbeddingMatrix,
    /// Aligned with `graph.edges()`.
    pub planted: Vec<bool>,
    pub cr_nodes: Vec<usize>,
    pub cf_nodes: Vec<usize>,
    pub mixing_map: Matrix,
    /// `ε` of every row (the fresh row itself for forgetting nodes).
    pub noise: Matrix,
}

impl PlantedInstance {
    pub fn planted_edges(&self) -> Vec<(usize, usize)> {
        self.graph
            .edges()
            .iter()
            .zip(&self.planted)
            .filter(|(_, &p)| p)
            .map(|(&e, _)| e)
            .collect()
    }

    pub fn truth(&self) -> PlantedTruth {
        PlantedTruth {
            schema_version: TRUTH_SCHEMA_VERSION,
            config: self.config.clone(),
            node_count: self.graph.node_count(),
            planted_edges: self.planted_edges(),
            cr_nodes: self.cr_nodes.clone(),
            cf_nodes: self.cf_nodes.clone(),
            mixing_map: self.mixing_map.clone(),
        }
    }
}

/// Ground-truth document written next to a generated instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub schema_version: u32,
    pub config: PlantedConfig,
    pub node_count: usize,
    pub planted_edges: Vec<(usize, usize)>,
    pub cr_nodes: Vec<usize>,
    pub cf_nodes: Vec<usize>,
    pub mixing_map: Matrix,
}

impl PlantedTruth {
    /// Planted flag per edge of `g`.
    pub fn edge_labels(&self, g: &Graph) -> Vec<bool> {
        let set: std::collections::HashSet<(usize, usize)> = self.planted_edges.iter().copied().collect();
        g.edges().iter().map(|e| set.contains(e)).collect()
    }
}

pub fn read_truth(path: &Path) -> Result<PlantedTruth> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let t: PlantedTruth = serde_json::from_str(&text)?;
    if t.schema_version != TRUTH_SCHEMA_VERSION {
        return Err(Error::SchemaMismatch {
            expected: TRUTH_SCHEMA_VERSION,
            found: t.schema_version,
        });
    }
    Ok(t)
}

/// Writes `graph.tsv`, `base.gcse`, `enhanced.gcse` and `truth.json`.
pub fn write_instance(inst: &PlantedInstance, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    inst.graph.write_edge_list(&dir.join("graph.tsv"))?;
    save_embeddings(&inst.x_base, &dir.join("base.gcse"))?;
    save_embeddings(&inst.x_enh, &dir.join("enhanced.gcse"))?;
    let truth = serde_json::to_string_pretty(&inst.truth())?;
    let p = dir.join("truth.json");
    fs::write(&p, truth + "\n").map_err(|e| Error::io(&p, e))
}

/// Random orthogonal matrix: Q of a Gaussian matrix's QR factorization
/// (modified Gram-Schmidt, columns normalized with positive R diagonal).
pub fn random_orthogonal(d: usize, r: &mut rng::Rng) -> Matrix {
    loop {
        let mut q = Matrix::from_fn(d, d, |_, _| rng::normal(r));
        let mut ok = true;
        for c in 0..d {
            for p in 0..c {
                let proj: f64 = (0..d).map(|k| q[(k, p)] * q[(k, c)]).sum();
                for k in 0..d {
                    q[(k, c)] -= proj * q[(k, p)];
                }
            }
            let norm = (0..d).map(|k| q[(k, c)] * q[(k, c)]).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for k in 0..d {
                q[(k, c)] /= norm;
            }
        }
        if ok {
            return q;
        }
    }
}

fn take(count: f64) -> usize {
    count.round() as usize
}

pub fn gen_planted(cfg: &PlantedConfig) -> Result<PlantedInstance> {
    cfg.validate()?;
    let (n0, d) = (cfg.n_nodes, cfg.dim);
    let m = take(cfg.avg_degree * n0 as f64 / 2.0).max(1);
    let full = graph::random_graph(n0, m, rng::derive(cfg.seed, 1))?;
    let g = full.induced(&graph::largest_component(&full)).graph;
    let n = g.node_count();

    let mut r = rng::seeded(cfg.seed, stream::SYNTH);
    let order = rng::permutation(n, &mut r);
    let n_cr = take(cfg.cr_fraction * n as f64);
    let n_cf = take(cfg.cf_fraction * n as f64);
    let mut cr_nodes = order[..n_cr].to_vec();
    let mut cf_nodes = order[n_cr..n_cr + n_cf].to_vec();
    cr_nodes.sort_unstable();
    cf_nodes.sort_unstable();
    let mut special = vec![false; n];
    for &i in cr_nodes.iter().chain(&cf_nodes) {
        special[i] = true;
    }

    let eligible: Vec<usize> = (0..g.edge_count())
        .filter(|&e| {
            let (u, v) = g.edges()[e];
            !special[u] && !special[v]
        })
        .collect();
    let n_planted = take(cfg.planted_fraction * g.edge_count() as f64);
    if n_planted > eligible.len() {
        return Err(Error::InvalidArgument(format!(
            "{n_planted} planted edges requested but only {} avoid remembering/forgetting nodes",
            eligible.len()
        )));
    }
    let pick = rng::permutation(eligible.len(), &mut r);
    let mut planted = vec![false; g.edge_count()];
    for &k in &pick[..n_planted] {
        planted[eligible[k]] = true;
    }

    let mixing_map = random_orthogonal(d, &mut r);
    let x = Matrix::from_fn(n, d, |_, _| rng::normal(&mut r));
    let noise = Matrix::from_fn(n, d, |_, _| rng::normal(&mut r));
    let mx = x.matmul_t(&mixing_map); // row i is M x_i

    let mut mix_sum = Matrix::zeros(n, d);
    let mut mix_count = vec![0usize; n];
    for (e, &(u, v)) in g.edges().iter().enumerate() {
        if planted[e] {
            for (a, b) in [(u, v), (v, u)] {
                mix_count[a] += 1;
                for c in 0..d {
                    mix_sum[(a, c)] += mx[(b, c)];
                }
            }
        }
    }
    let cf: std::collections::HashSet<usize> = cf_nodes.iter().copied().collect();
    let enh = Matrix::from_fn(n, d, |i, c| {
        if cf.contains(&i) {
            noise[(i, c)]
        } else if mix_count[i] > 0 {
            cfg.beta * x[(i, c)] + (1.0 - cfg.beta) * mix_sum[(i, c)] / mix_count[i] as f64 + cfg.sigma * noise[(i, c)]
        } else {
            x[(i, c)] + cfg.sigma * noise[(i, c)]
        }
    });

    Ok(PlantedInstance {
        config: cfg.clone(),
        graph: g,
        x_base: EmbeddingMatrix::new(x)?,
        x_enh: EmbeddingMatrix::new(enh)?,
        planted,
        cr_nodes,
        cf_nodes,
        mixing_map,
        noise,
    })
}

/// `n` samples of `(a, ρa + √(1-ρ²) b)` as two `n × 1` matrices.
pub fn gen_gaussian_pairs(n: usize, rho: f64, seed: u64) -> Result<(Matrix, Matrix)> {
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!("|rho| must be < 1, got {rho}")));
    }
    let mut r = rng::seeded(seed, stream::GAUSSIAN);
    let s = (1.0 - rho * rho).sqrt();
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, q) = (rng::normal(&mut r), rng::normal(&mut r));
        a.push(p);
        b.push(rho * p + s * q);
    }
    Ok((Matrix::from_vec(n, 1, a), Matrix::from_vec(n, 1, b)))
}

/// Mutual information of a bivariate normal with correlation `rho`, nats.
pub fn analytic_gaussian_mi(rho: f64) -> f64 {
    0.5 * (1.0 / (1.0 - rho * rho)).ln()
}

/// Rank-based area under the ROC curve; tied scores share their average rank.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            context: "auc labels",
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite {
            context: "auc score",
            node: i,
        });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("auc needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[start]] {
            end += 1;
        }
        // ranks start..end (1-based: start+1..=end) averaged
        let avg = (start + 1 + end) as f64 / 2.0;
        rank_sum += avg * idx[start..end].iter().filter(|&&i| labels[i]).count() as f64;
        start = end;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}
