//! Full-batch Adam training of the simulator and its statistic network, plus
//! the finite-difference gradient harness.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::{self, Graph};
use crate::linalg::Matrix;
use crate::mi::{self, StatNetParams};
use crate::model::{self, GcsConfig, GcsParams, Slots};
use crate::rng;

/// Adam with bias correction. Moments are kept per tensor.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(shapes: &[&[f64]], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    /// Panics if tensor counts or lengths differ from construction.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) {
        assert_eq!(params.len(), self.m.len(), "tensor count");
        assert_eq!(grads.len(), self.m.len(), "gradient count");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (t, p) in params.into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[t], &mut self.v[t], grads[t]);
            assert_eq!(p.len(), m.len(), "tensor {t} length");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub dropout: f64,
    pub temperature: f64,
    pub heads: usize,
    pub attn_dim: usize,
    /// Train on a seeded BFS subgraph of this many nodes.
    pub subsample_nodes: Option<usize>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-3,
            seed: 0,
            dropout: 0.2,
            temperature: 0.1,
            heads: 8,
            attn_dim: 64,
            subsample_nodes: None,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn gcs_config(&self, dim: usize) -> GcsConfig {
        GcsConfig {
            dim,
            heads: self.heads,
            attn_dim: self.attn_dim,
            temperature: self.temperature,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 && self.lr < 0.0 {
            return Err(Error::InvalidArgument("lr must be non-negative".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be non-negative, got {}", self.lr)));
        }
        if self.subsample_nodes == Some(0) {
            return Err(Error::InvalidArgument("subsample_nodes must be positive".into()));
        }
        self.gcs_config(1).validate()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub gcs: GcsParams,
    pub stat: StatNetParams,
    /// `(step, bound in nats)` for every optimization step.
    pub mi_curve: Vec<(usize, f64)>,
}

fn check_inputs(g: &Graph, x: &EmbeddingMatrix, h: &EmbeddingMatrix) -> Result<()> {
    for (m, context) in [(x, "base embedding rows"), (h, "enhanced embedding rows")] {
        if m.rows() != g.node_count() {
            return Err(Error::Shape {
                context,
                expected: g.node_count(),
                found: m.rows(),
            });
        }
    }
    Ok(())
}

pub fn train(g: &Graph, x: &EmbeddingMatrix, h: &EmbeddingMatrix, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_observed(g, x, h, cfg, |_, _| {})
}

/// [`train`], calling `observe(step, bound)` after every step.
pub fn train_observed(
    g: &Graph,
    x: &EmbeddingMatrix,
    h: &EmbeddingMatrix,
    cfg: &TrainConfig,
    mut observe: impl FnMut(usize, f64),
) -> Result<TrainOutput> {
    cfg.validate()?;
    check_inputs(g, x, h)?;
    let (slots, xm, hm) = match cfg.subsample_nodes {
        Some(k) if k < g.node_count() => {
            let sub = graph::sample_subgraph(g, k, cfg.seed)?;
            let xs = x.select_rows(&sub.new_to_old);
            let hs = h.select_rows(&sub.new_to_old);
            (Slots::new(&sub.graph), xs.into_matrix(), hs.into_matrix())
        }
        _ => (Slots::new(g), x.matrix().clone(), h.matrix().clone()),
    };
    if xm.rows() < 2 {
        return Err(Error::InvalidArgument("training needs at least 2 nodes".into()));
    }

    let mut gcs = model::init_params(&cfg.gcs_config(x.dim()), cfg.seed)?;
    let mut stat = StatNetParams::new(x.dim(), h.dim(), cfg.seed);
    let n_gcs = gcs.tensors().len();
    let shapes: Vec<&[f64]> = gcs.tensors().into_iter().chain(stat.tensors()).collect();
    let mut adam = Adam::new(&shapes, cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for step in 0..cfg.epochs {
        let s = rng::derive(cfg.seed, step as u64);
        let lg = mi::loss_and_grad(&gcs, &stat, &slots, &xm, &hm, s).map_err(|e| match e {
            Error::NonFinite { .. } => Error::Diverged(step),
            other => other,
        })?;
        if !lg.loss.is_finite() {
            return Err(Error::Diverged(step));
        }
        curve.push((step, -lg.loss));
        observe(step, -lg.loss);
        let grads: Vec<&[f64]> = lg.gcs.tensors().into_iter().chain(lg.stat.tensors()).collect();
        let mut params: Vec<&mut [f64]> = gcs.tensors_mut();
        params.extend(stat.tensors_mut());
        debug_assert_eq!(params.len(), n_gcs + 4);
        adam.step(params, &grads);
    }
    Ok(TrainOutput {
        gcs,
        stat,
        mi_curve: curve,
    })
}

/// Means of consecutive non-overlapping windows of `window` steps (a
/// trailing partial window is dropped).
pub fn smoothed_curve(curve: &[(usize, f64)], window: usize) -> Vec<f64> {
    curve
        .chunks_exact(window.max(1))
        .map(|c| c.iter().map(|&(_, b)| b).sum::<f64>() / c.len() as f64)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Denominator floor for relative gradient errors; below this magnitude
/// both gradients are treated as zero and only the absolute error counts.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic gradients of the training loss with central finite
/// differences on `n_params_sampled` randomly chosen parameters (drawn over
/// both parameter sets). Step is `step_scale · (1 + |θ|)`.
pub fn grad_check_params(
    gcs: &GcsParams,
    stat: &StatNetParams,
    slots: &Slots,
    x: &Matrix,
    h: &Matrix,
    seed: u64,
    n_params_sampled: usize,
    step_scale: f64,
) -> Result<GradCheckReport> {
    let lg = mi::loss_and_grad(gcs, stat, slots, x, h, seed)?;
    let analytic: Vec<f64> = lg
        .gcs
        .tensors()
        .into_iter()
        .chain(lg.stat.tensors())
        .flat_map(|t| t.iter().copied())
        .collect();
    let total = analytic.len();
    let n_gcs: usize = gcs.tensors().iter().map(|t| t.len()).sum();

    let mut r = rng::seeded(rng::derive(seed, 0x6C), rng::stream::INIT);
    let picks: Vec<usize> = if n_params_sampled >= total {
        (0..total).collect()
    } else {
        (0..n_params_sampled).map(|_| r.random_range(0..total)).collect()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    let mut gp = gcs.clone();
    let mut sp = stat.clone();
    for idx in picks {
        let set = |gp: &mut GcsParams, sp: &mut StatNetParams, value: Option<f64>| -> f64 {
            let slot = locate(if idx < n_gcs { gp.tensors_mut() } else { sp.tensors_mut() }, if idx < n_gcs { idx } else { idx - n_gcs });
            let old = *slot;
            if let Some(v) = value {
                *slot = v;
            }
            old
        };
        let base = set(&mut gp, &mut sp, None);
        let eps = step_scale * (1.0 + base.abs());
        set(&mut gp, &mut sp, Some(base + eps));
        let up = mi::loss_value(&gp, &sp, slots, x, h, seed)?;
        set(&mut gp, &mut sp, Some(base - eps));
        let dn = mi::loss_value(&gp, &sp, slots, x, h, seed)?;
        set(&mut gp, &mut sp, Some(base));
        let numeric = (up - dn) / (2.0 * eps);
        let a = analytic[idx];
        report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
        report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
        report.checked += 1;
    }
    Ok(report)
}

fn locate(tensors: Vec<&mut [f64]>, mut flat: usize) -> &mut f64 {
    for t in tensors {
        if flat < t.len() {
            return &mut t[flat];
        }
        flat -= t.len();
    }
    panic!("flat parameter index out of range");
}

/// Gradient check at a fresh initialization drawn from `cfg` (small graphs
/// only). Returns the maximum relative error.
pub fn grad_check(
    g: &Graph,
    x: &EmbeddingMatrix,
    h: &EmbeddingMatrix,
    cfg: &TrainConfig,
    n_params_sampled: usize,
) -> Result<f64> {
    grad_check_with_step(g, x, h, cfg, n_params_sampled, 1e-6).map(|r| r.max_rel_error)
}

pub fn grad_check_with_step(
    g: &Graph,
    x: &EmbeddingMatrix,
    h: &EmbeddingMatrix,
    cfg: &TrainConfig,
    n_params_sampled: usize,
    step_scale: f64,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    check_inputs(g, x, h)?;
    if g.node_count() > 50 {
        return Err(Error::TooLarge {
            n: g.node_count(),
            cap: 50,
        });
    }
    let gcs = model::init_params(&cfg.gcs_config(x.dim()), cfg.seed)?;
    let stat = StatNetParams::new(x.dim(), h.dim(), cfg.seed);
    grad_check_params(
        &gcs,
        &stat,
        &Slots::new(g),
        x.matrix(),
        h.matrix(),
        cfg.seed,
        n_params_sampled,
        step_scale,
    )
}
