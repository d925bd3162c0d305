//! Self-check suites behind `gcs verify`. Each suite returns named checks
//! with the measured value and its limit.

use rand::Rng as _;
use serde::Serialize;
use serde_json::json;

use crate::baseline::{self, ProbeConfig};
use crate::embedding::EmbeddingMatrix;
use crate::error::Result;
use crate::graph;
use crate::interpret::{self, InterpretThresholds};
use crate::linalg::Matrix;
use crate::mi::{self, MiFitConfig};
use crate::model;
use crate::rng;
use crate::spectral;
use crate::synth::{self, PlantedConfig};
use crate::train::{self, TrainConfig};

/// Epochs per run in the planted suite.
pub const PLANTED_EPOCHS: usize = 1_000;
pub const PLANTED_SEEDS: u64 = 5;
pub const VARIANCE_RUNS: usize = 30;
pub const VARIANCE_NODES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Spectral,
    Gradcheck,
    MiGaussian,
    Planted,
    Variance,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Spectral,
        Suite::Gradcheck,
        Suite::MiGaussian,
        Suite::Planted,
        Suite::Variance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Spectral => "spectral",
            Suite::Gradcheck => "gradcheck",
            Suite::MiGaussian => "mi-gaussian",
            Suite::Planted => "planted",
            Suite::Variance => "variance",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable bound, e.g. `"< 1e-8"`.
    pub limit: String,
    pub passed: bool,
}

impl Check {
    fn below(name: impl Into<String>, value: f64, limit: f64) -> Check {
        Check {
            name: name.into(),
            value,
            limit: format!("< {limit:e}"),
            passed: value < limit,
        }
    }

    fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Check {
        Check {
            name: name.into(),
            value,
            limit: format!(">= {limit}"),
            passed: value >= limit,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub details: serde_json::Value,
}

impl SuiteReport {
    fn new(suite: Suite, checks: Vec<Check>, details: serde_json::Value) -> SuiteReport {
        SuiteReport {
            schema_version: 1,
            suite,
            passed: checks.iter().all(|c| c.passed),
            checks,
            details,
        }
    }
}

pub fn run(suite: Suite, seed: u64) -> Result<SuiteReport> {
    match suite {
        Suite::Spectral => spectral_suite_report(seed),
        Suite::Gradcheck => gradcheck_suite(seed),
        Suite::MiGaussian => mi_gaussian_suite(seed),
        Suite::Planted => planted_suite(seed),
        Suite::Variance => variance_suite(seed),
    }
}

fn normal_embedding(n: usize, d: usize, r: &mut rng::Rng) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::new(Matrix::from_fn(n, d, |_, _| rng::normal(r)))
}

pub fn spectral_suite(seed: u64) -> Result<SpectralSummary> {
    let mut r = rng::seeded(seed, rng::stream::SYNTH);
    let mut worst = SpectralSummary::default();
    worst.eigen_range = [f64::INFINITY, f64::NEG_INFINITY];
    for k in 0..50 {
        let n = r.random_range(2..=200);
        let d = r.random_range(1..=16);
        let extra = r.random_range(0..=2 * n);
        let g = graph::random_connected_graph(n, extra, rng::derive(seed, k))?;
        let x = normal_embedding(n, d, &mut r)?;
        let c = spectral::spectral_check(&g, &x)?;
        worst.graphs += 1;
        worst.roundtrip_error = worst.roundtrip_error.max(c.roundtrip_error);
        worst.orthogonality_error = worst.orthogonality_error.max(c.orthogonality_error);
        worst.reconstruction_error = worst.reconstruction_error.max(c.reconstruction_error);
        worst.eigen_range[0] = worst.eigen_range[0].min(c.eigen_range[0]);
        worst.eigen_range[1] = worst.eigen_range[1].max(c.eigen_range[1]);
    }
    Ok(worst)
}

/// Worst case over the spectral suite's graphs.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SpectralSummary {
    pub graphs: usize,
    pub roundtrip_error: f64,
    pub orthogonality_error: f64,
    pub reconstruction_error: f64,
    pub eigen_range: [f64; 2],
}

impl SpectralSummary {
    pub fn checks(&self) -> Vec<Check> {
        vec![
            Check::below("roundtrip_error", self.roundtrip_error, 1e-8),
            Check::below("orthogonality_error", self.orthogonality_error, 1e-8),
            Check::at_least("min_eigenvalue", self.eigen_range[0], -1e-9),
            Check::below("max_eigenvalue", self.eigen_range[1], 2.0 + 1e-9),
        ]
    }
}

fn spectral_suite_report(seed: u64) -> Result<SuiteReport> {
    let s = spectral_suite(seed)?;
    Ok(SuiteReport::new(Suite::Spectral, s.checks(), serde_json::to_value(&s)?))
}

/// Random small configuration for gradient checks: at most 50 nodes,
/// dimension 8 and 2 heads.
pub fn gradcheck_instance(seed: u64) -> Result<(graph::Graph, EmbeddingMatrix, EmbeddingMatrix, TrainConfig)> {
    let mut r = rng::seeded(seed, rng::stream::SYNTH);
    let n = r.random_range(3..=50);
    let d = r.random_range(1..=8);
    let g = graph::random_connected_graph(n, r.random_range(0..=n), rng::derive(seed, 1))?;
    let x = normal_embedding(n, d, &mut r)?;
    let h = EmbeddingMatrix::new(Matrix::from_fn(n, d, |i, c| x.row(i)[c] + 0.5 * rng::normal(&mut r)))?;
    let cfg = TrainConfig {
        heads: r.random_range(1..=2),
        attn_dim: r.random_range(1..=8),
        temperature: r.random_range(0.1..=1.0),
        dropout: 0.2,
        seed,
        ..TrainConfig::default()
    };
    Ok((g, x, h, cfg))
}

fn gradcheck_suite(seed: u64) -> Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for k in 0..20 {
        let (g, x, h, cfg) = gradcheck_instance(rng::derive(seed, k))?;
        let err = train::grad_check(&g, &x, &h, &cfg, 100)?;
        worst = worst.max(err);
        rows.push(json!({"nodes": g.node_count(), "dim": x.dim(), "heads": cfg.heads, "max_rel_error": err}));
    }
    Ok(SuiteReport::new(
        Suite::Gradcheck,
        vec![Check::below("max_rel_error", worst, 1e-5)],
        json!({ "instances": rows, "rel_error_floor": train::REL_ERROR_FLOOR }),
    ))
}

/// Fitted bound for each correlation, as `(rho, bound, analytic)`.
pub fn mi_gaussian_table(seed: u64) -> Result<Vec<(f64, f64, f64)>> {
    [0.0, 0.5, 0.9]
        .into_iter()
        .map(|rho| {
            let (a, b) = synth::gen_gaussian_pairs(10_000, rho, seed)?;
            let est = mi::estimate_mi(&a, &b, &MiFitConfig { seed, ..MiFitConfig::default() })?;
            Ok((rho, est.bound, synth::analytic_gaussian_mi(rho)))
        })
        .collect()
}

fn mi_gaussian_suite(seed: u64) -> Result<SuiteReport> {
    let table = mi_gaussian_table(seed)?;
    let checks = table
        .iter()
        .map(|&(rho, bound, exact)| {
            if rho == 0.0 {
                Check::below("abs_bound_rho_0", bound.abs(), 0.05)
            } else {
                Check::below(format!("abs_error_rho_{rho}"), (bound - exact).abs(), 0.1)
            }
        })
        .collect();
    let rows: Vec<_> = table
        .iter()
        .map(|&(rho, bound, exact)| json!({"rho": rho, "bound_nats": bound, "analytic_nats": exact}))
        .collect();
    Ok(SuiteReport::new(Suite::MiGaussian, checks, json!({ "table": rows })))
}

/// Outcome of training on one planted benchmark instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlantedRun {
    pub seed: u64,
    pub auc: f64,
    pub cr_self_attention: f64,
    pub cf_self_attention: f64,
    pub initial_bound: f64,
    pub final_bound: f64,
    /// 50-step window means of the bound trace.
    pub smoothed: Vec<f64>,
}

pub fn planted_run(seed: u64, epochs: usize) -> Result<PlantedRun> {
    let inst = synth::gen_planted(&PlantedConfig {
        seed,
        ..PlantedConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let out = train::train(&inst.graph, &inst.x_base, &inst.x_enh, &cfg)?;
    let fwd = model::forward(&out.gcs, &inst.graph, &inst.x_base, false, seed)?;
    let rep = interpret::classify(&fwd.attention, &inst.graph, &InterpretThresholds::default())?;
    let scores: Vec<f64> = rep.edges.iter().map(|e| e.attn_mean).collect();
    let mean_self = |ids: &[usize]| ids.iter().map(|&i| rep.nodes[i].self_attn).sum::<f64>() / ids.len() as f64;
    Ok(PlantedRun {
        seed,
        auc: synth::auc(&scores, &inst.planted)?,
        cr_self_attention: mean_self(&inst.cr_nodes),
        cf_self_attention: mean_self(&inst.cf_nodes),
        initial_bound: out.mi_curve.first().map_or(f64::NAN, |p| p.1),
        final_bound: out.mi_curve.last().map_or(f64::NAN, |p| p.1),
        smoothed: train::smoothed_curve(&out.mi_curve, 50),
    })
}

fn planted_suite(seed: u64) -> Result<SuiteReport> {
    let runs = (0..PLANTED_SEEDS)
        .map(|k| planted_run(seed + k, PLANTED_EPOCHS))
        .collect::<Result<Vec<_>>>()?;
    let mean_auc = runs.iter().map(|r| r.auc).sum::<f64>() / runs.len() as f64;
    let min_gap = runs
        .iter()
        .map(|r| r.cr_self_attention - r.cf_self_attention)
        .fold(f64::INFINITY, f64::min);
    let min_gain = runs
        .iter()
        .map(|r| r.final_bound - r.initial_bound)
        .fold(f64::INFINITY, f64::min);
    let worst_drop = runs
        .iter()
        .flat_map(|r| r.smoothed.windows(2).map(|w| w[0] - w[1]))
        .fold(0.0, f64::max);
    let checks = vec![
        Check::at_least("mean_auc", mean_auc, 0.9),
        Check::at_least("min_cr_minus_cf_self_attention", min_gap, 0.3),
        Check::at_least("min_bound_gain_nats", min_gain, 0.2),
        Check::below("max_smoothed_bound_drop", worst_drop, f64::MIN_POSITIVE),
    ];
    Ok(SuiteReport::new(
        Suite::Planted,
        checks,
        json!({ "epochs": PLANTED_EPOCHS, "runs": runs }),
    ))
}

fn variance_suite(seed: u64) -> Result<SuiteReport> {
    let inst = synth::gen_planted(&PlantedConfig {
        n_nodes: VARIANCE_NODES,
        seed,
        ..PlantedConfig::default()
    })?;
    let seeds: Vec<u64> = (0..VARIANCE_RUNS as u64).map(|k| rng::derive(seed, k)).collect();
    let res = baseline::variance_experiment(
        &inst.graph,
        &inst.x_base,
        &inst.x_enh,
        &seeds,
        &ProbeConfig::default(),
        &TrainConfig::default(),
        &InterpretThresholds::default(),
    )?;
    let (probe, gcs, control) = (
        baseline::median(&res.probe_entropy),
        baseline::median(&res.gcs_entropy),
        baseline::median(&res.control_entropy),
    );
    let checks = vec![
        Check {
            name: "median_gcs_entropy_below_probe".into(),
            value: gcs - probe,
            limit: "< 0".into(),
            passed: gcs < probe,
        },
        Check {
            name: "median_control_entropy".into(),
            value: control,
            limit: "> 0.9".into(),
            passed: control > 0.9,
        },
    ];
    Ok(SuiteReport::new(
        Suite::Variance,
        checks,
        json!({
            "runs": VARIANCE_RUNS,
            "median_probe_entropy_bits": probe,
            "median_gcs_entropy_bits": gcs,
            "median_control_entropy_bits": control,
        }),
    ))
}
