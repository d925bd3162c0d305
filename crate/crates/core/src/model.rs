//! The graph convolution simulator: square input layer, one multi-head
//! graph-attention convolution, square output layer.
//!
//! ```text
//! u_i   = ELU(W_in x_i + b_in)                       (dropout on u when training)
//! l_ij  = (Wq_h u_i) · (Wk_h u_j) / t                j ∈ N(i) ∪ {i}
//! a_ij  = softmax_j(l_ij)
//! o_i   = mean_h ELU(Σ_j a_ij Wv_h u_j)              (dropout on o when training)
//! z_i   = W_out o_i + b_out
//! ```
//!
//! Every square matrix keeps the representation dimension fixed, which is
//! what lets the two outer layers be invertible. Neighbors are always visited
//! in ascending id order with the self loop in its sorted position.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::{axpy, dot, elu, elu_grad, Matrix};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcsConfig {
    pub dim: usize,
    pub heads: usize,
    pub attn_dim: usize,
    pub temperature: f64,
    pub dropout: f64,
}

impl GcsConfig {
    /// Defaults: 8 heads, attention dim 64, temperature 0.1, dropout 0.2.
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            heads: 8,
            attn_dim: 64,
            temperature: 0.1,
            dropout: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.dim == 0 || self.heads == 0 || self.attn_dim == 0 {
            return bad(format!(
                "dim, heads and attn_dim must be positive (got {}, {}, {})",
                self.dim, self.heads, self.attn_dim
            ));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// attn_dim × dim
    pub wq: Matrix,
    /// attn_dim × dim
    pub wk: Matrix,
    /// dim × dim
    pub wv: Matrix,
}

/// Learnable weights plus the two fixed hyperparameters that shape the
/// forward pass. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcsParams {
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    pub heads: Vec<HeadParams>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
    pub temperature: f64,
    pub dropout: f64,
}

impl GcsParams {
    pub fn dim(&self) -> usize {
        self.w_in.rows()
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn attn_dim(&self) -> usize {
        self.heads.first().map_or(0, |h| h.wq.rows())
    }

    pub fn config(&self) -> GcsConfig {
        GcsConfig {
            dim: self.dim(),
            heads: self.head_count(),
            attn_dim: self.attn_dim(),
            temperature: self.temperature,
            dropout: self.dropout,
        }
    }

    /// All-zero container with the same shapes.
    pub fn zeros_like(&self) -> GcsParams {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        GcsParams {
            w_in: z(&self.w_in),
            b_in: vec![0.0; self.b_in.len()],
            heads: self
                .heads
                .iter()
                .map(|h| HeadParams {
                    wq: z(&h.wq),
                    wk: z(&h.wk),
                    wv: z(&h.wv),
                })
                .collect(),
            w_out: z(&self.w_out),
            b_out: vec![0.0; self.b_out.len()],
            temperature: self.temperature,
            dropout: self.dropout,
        }
    }

    /// Learnable tensors in a fixed order: w_in, b_in, (wq, wk, wv) per head,
    /// w_out, b_out.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![self.w_in.as_slice(), &self.b_in];
        for h in &self.heads {
            v.extend([h.wq.as_slice(), h.wk.as_slice(), h.wv.as_slice()]);
        }
        v.extend([self.w_out.as_slice(), &self.b_out[..]]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![self.w_in.as_mut_slice(), &mut self.b_in];
        for h in &mut self.heads {
            v.push(h.wq.as_mut_slice());
            v.push(h.wk.as_mut_slice());
            v.push(h.wv.as_mut_slice());
        }
        v.push(self.w_out.as_mut_slice());
        v.push(&mut self.b_out);
        v
    }

    /// Square matrices that must stay nonsingular.
    pub fn square_matrices(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.w_in];
        v.extend(self.heads.iter().map(|h| &h.wv));
        v.push(&self.w_out);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
            && self.temperature.is_finite()
    }

    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t {
                h = (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3);
            }
        }
        h ^ self.temperature.to_bits().rotate_left(17) ^ self.dropout.to_bits().rotate_left(29)
    }
}

/// Square matrices start at identity plus `U(-s, s)` noise with
/// `s = 1/√dim`; query/key projections are `U(-s', s')` with `s' = 1/√attn_dim`;
/// biases start at zero.
pub fn init_params(cfg: &GcsConfig, seed: u64) -> Result<GcsParams> {
    init_params_scaled(cfg, seed, 1.0)
}

/// [`init_params`] with the noise on square matrices multiplied by
/// `noise_scale` (0 gives exact identities).
pub fn init_params_scaled(cfg: &GcsConfig, seed: u64, noise_scale: f64) -> Result<GcsParams> {
    cfg.validate()?;
    let mut r = rng::seeded(seed, rng::stream::INIT);
    let (d, k) = (cfg.dim, cfg.attn_dim);
    let s = noise_scale / (d as f64).sqrt();
    let sp = 1.0 / (k as f64).sqrt();
    let square = |r: &mut rng::Rng| {
        Matrix::from_fn(d, d, |i, j| {
            let noise = if s > 0.0 { r.random_range(-s..s) } else { 0.0 };
            if i == j {
                1.0 + noise
            } else {
                noise
            }
        })
    };
    let w_in = square(&mut r);
    let mut heads = Vec::with_capacity(cfg.heads);
    for _ in 0..cfg.heads {
        let wq = Matrix::from_fn(k, d, |_, _| r.random_range(-sp..sp));
        let wk = Matrix::from_fn(k, d, |_, _| r.random_range(-sp..sp));
        let wv = square(&mut r);
        heads.push(HeadParams { wq, wk, wv });
    }
    let w_out = square(&mut r);
    Ok(GcsParams {
        w_in,
        b_in: vec![0.0; d],
        heads,
        w_out,
        b_out: vec![0.0; d],
        temperature: cfg.temperature,
        dropout: cfg.dropout,
    })
}

/// Attention slots: for node `i`, `targets[offsets[i]..offsets[i+1]]` is
/// `N(i) ∪ {i}` ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct Slots {
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
    pub self_slot: Vec<usize>,
}

impl Slots {
    pub fn new(g: &Graph) -> Slots {
        let n = g.node_count();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::with_capacity(2 * g.edge_count() + n);
        let mut self_slot = Vec::with_capacity(n);
        offsets.push(0);
        for i in 0..n {
            let nb = g.neighbors(i);
            let split = nb.partition_point(|&j| j < i);
            targets.extend_from_slice(&nb[..split]);
            self_slot.push(targets.len());
            targets.push(i);
            targets.extend_from_slice(&nb[split..]);
            offsets.push(targets.len());
        }
        Slots {
            offsets,
            targets,
            self_slot,
        }
    }

    pub fn node_count(&self) -> usize {
        self.self_slot.len()
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Slot of `j` in node `i`'s list, if `j ∈ N(i) ∪ {i}`.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.range(i);
        self.targets[r.clone()].binary_search(&j).ok().map(|k| r.start + k)
    }
}

/// Softmax coefficients per head and their head average, laid out by
/// [`Slots`].
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    pub slots: Slots,
    pub per_head: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl AttentionRecord {
    /// Builds the record, averaging the heads slot by slot.
    pub fn from_heads(slots: Slots, per_head: Vec<Vec<f64>>) -> AttentionRecord {
        let inv_h = 1.0 / per_head.len().max(1) as f64;
        let mut mean = vec![0.0; slots.targets.len()];
        for coef in &per_head {
            for (m, c) in mean.iter_mut().zip(coef) {
                *m += c;
            }
        }
        for m in &mut mean {
            *m *= inv_h;
        }
        AttentionRecord {
            slots,
            per_head,
            mean,
        }
    }

    pub fn head_count(&self) -> usize {
        self.per_head.len()
    }

    pub fn self_attention(&self, i: usize) -> f64 {
        self.mean[self.slots.self_slot[i]]
    }

    /// Head-averaged `a_{i→j}`.
    pub fn coefficient(&self, i: usize, j: usize) -> Option<f64> {
        self.slots.slot(i, j).map(|s| self.mean[s])
    }

    /// Largest `|Σ_j a_ij - 1|` over nodes, heads and the head average.
    pub fn max_row_sum_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for coefs in self.per_head.iter().chain(std::iter::once(&self.mean)) {
            for i in 0..self.slots.node_count() {
                let s: f64 = coefs[self.slots.range(i)].iter().sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }
}

/// Per-edge view of head-averaged attention.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeAttention {
    pub u: usize,
    pub v: usize,
    pub attn_uv: f64,
    pub attn_vu: f64,
    pub mean: f64,
}

/// Head-averaged coefficients for every graph edge (by edge id) and every
/// self loop (by node id).
pub fn head_average_attention(attn: &AttentionRecord, g: &Graph) -> Result<(Vec<EdgeAttention>, Vec<f64>)> {
    if attn.slots.node_count() != g.node_count() {
        return Err(Error::Shape {
            context: "attention record nodes",
            expected: g.node_count(),
            found: attn.slots.node_count(),
        });
    }
    let mut edges = Vec::with_capacity(g.edge_count());
    for &(u, v) in g.edges() {
        let (Some(uv), Some(vu)) = (attn.coefficient(u, v), attn.coefficient(v, u)) else {
            return Err(Error::EdgeNotFound(u, v));
        };
        edges.push(EdgeAttention {
            u,
            v,
            attn_uv: uv,
            attn_vu: vu,
            mean: 0.5 * (uv + vu),
        });
    }
    let selfs = (0..g.node_count()).map(|i| attn.self_attention(i)).collect();
    Ok((edges, selfs))
}

/// Intermediates retained for [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    fingerprint: u64,
    x: Matrix,
    pre_in: Matrix,
    in_mask: Option<Vec<f64>>,
    /// post-dropout hidden representation
    u: Matrix,
    /// per head, pre-activation aggregate Σ_j a_ij v_j
    agg: Vec<Matrix>,
    out_mask: Option<Vec<f64>>,
    /// post-dropout head-averaged output
    o: Matrix,
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub z: Matrix,
    pub attention: AttentionRecord,
    pub cache: ForwardCache,
}

fn dropout_mask(len: usize, rate: f64, r: &mut rng::Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    (0..len)
        .map(|_| if r.random::<f64>() < keep { scale } else { 0.0 })
        .collect()
}

fn check_finite(m: &Matrix, context: &'static str) -> Result<()> {
    match m.as_slice().iter().position(|v| !v.is_finite()) {
        Some(p) => Err(Error::NonFinite {
            context,
            node: p / m.cols().max(1),
        }),
        None => Ok(()),
    }
}

pub fn forward(
    params: &GcsParams,
    g: &Graph,
    x: &EmbeddingMatrix,
    training: bool,
    seed: u64,
) -> Result<Forward> {
    forward_with_slots(params, &Slots::new(g), x.matrix(), training, seed)
}

/// [`forward`] on precomputed slots and a raw matrix.
pub fn forward_with_slots(
    params: &GcsParams,
    slots: &Slots,
    x: &Matrix,
    training: bool,
    seed: u64,
) -> Result<Forward> {
    let n = slots.node_count();
    let d = params.dim();
    if x.rows() != n {
        return Err(Error::Shape {
            context: "forward: embedding rows vs graph nodes",
            expected: n,
            found: x.rows(),
        });
    }
    if x.cols() != d {
        return Err(Error::Shape {
            context: "forward: embedding dim vs model dim",
            expected: d,
            found: x.cols(),
        });
    }
    let use_dropout = training && params.dropout > 0.0;
    let mut r = rng::seeded(seed, rng::stream::DROPOUT);

    let mut pre_in = x.matmul_t(&params.w_in);
    for i in 0..n {
        axpy(pre_in.row_mut(i), 1.0, &params.b_in);
    }
    let mut u = Matrix::from_vec(n, d, pre_in.as_slice().iter().map(|&v| elu(v)).collect());
    let in_mask = use_dropout.then(|| dropout_mask(n * d, params.dropout, &mut r));
    if let Some(mask) = &in_mask {
        for (v, m) in u.as_mut_slice().iter_mut().zip(mask) {
            *v *= m;
        }
    }
    check_finite(&u, "input layer")?;

    let h_count = params.head_count();
    let inv_t = 1.0 / params.temperature;
    let inv_h = 1.0 / h_count as f64;
    let mut per_head = Vec::with_capacity(h_count);
    let mut agg_all = Vec::with_capacity(h_count);
    let mut o = Matrix::zeros(n, d);
    let mut logits = Vec::new();
    for head in &params.heads {
        let q = u.matmul_t(&head.wq);
        let k = u.matmul_t(&head.wk);
        let v = u.matmul_t(&head.wv);
        let mut coef = vec![0.0; slots.targets.len()];
        let mut agg = Matrix::zeros(n, d);
        for i in 0..n {
            let range = slots.range(i);
            let qi = q.row(i);
            logits.clear();
            logits.extend(slots.targets[range.clone()].iter().map(|&j| dot(qi, k.row(j)) * inv_t));
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::NonFinite {
                    context: "attention logits",
                    node: i,
                });
            }
            let mut sum = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - max).exp();
                sum += *l;
            }
            let out = agg.row_mut(i);
            for (s, (&j, e)) in range.clone().zip(slots.targets[range].iter().zip(&logits)) {
                let a = e / sum;
                coef[s] = a;
                axpy(out, a, v.row(j));
            }
        }
        for (o_v, a_v) in o.as_mut_slice().iter_mut().zip(agg.as_slice()) {
            *o_v += elu(*a_v) * inv_h;
        }
        per_head.push(coef);
        agg_all.push(agg);
    }

    let out_mask = use_dropout.then(|| dropout_mask(n * d, params.dropout, &mut r));
    if let Some(mask) = &out_mask {
        for (v, m) in o.as_mut_slice().iter_mut().zip(mask) {
            *v *= m;
        }
    }
    let mut z = o.matmul_t(&params.w_out);
    for i in 0..n {
        axpy(z.row_mut(i), 1.0, &params.b_out);
    }
    check_finite(&z, "output layer")?;

    Ok(Forward {
        z,
        attention: AttentionRecord::from_heads(slots.clone(), per_head),
        cache: ForwardCache {
            fingerprint: params.fingerprint(),
            x: x.clone(),
            pre_in,
            in_mask,
            u,
            agg: agg_all,
            out_mask,
            o,
        },
    })
}

/// Reverse-mode gradients of `Σ grad_z ⊙ z` for the forward pass that
/// produced `fwd`. Returns parameter gradients and the gradient with respect
/// to the input embeddings.
pub fn backward(params: &GcsParams, fwd: &Forward, grad_z: &Matrix) -> Result<(GcsParams, Matrix)> {
    let cache = &fwd.cache;
    let slots = &fwd.attention.slots;
    if cache.fingerprint != params.fingerprint() {
        return Err(Error::InvalidArgument(
            "backward: cache was produced with different parameters".into(),
        ));
    }
    let (n, d) = (cache.u.rows(), cache.u.cols());
    if grad_z.rows() != n || grad_z.cols() != d {
        return Err(Error::Shape {
            context: "backward: grad_z shape",
            expected: n * d,
            found: grad_z.rows() * grad_z.cols(),
        });
    }
    let mut grads = params.zeros_like();

    grads.w_out = grad_z.t_matmul(&cache.o);
    grads.b_out = column_sums(grad_z);
    let mut g_o = grad_z.matmul(&params.w_out);
    if let Some(mask) = &cache.out_mask {
        for (g, m) in g_o.as_mut_slice().iter_mut().zip(mask) {
            *g *= m;
        }
    }

    let inv_t = 1.0 / params.temperature;
    let inv_h = 1.0 / params.head_count() as f64;
    let u = &cache.u;
    let mut g_u = Matrix::zeros(n, d);
    let mut g_a = Vec::new();
    for (h, head) in params.heads.iter().enumerate() {
        let coef = &fwd.attention.per_head[h];
        let agg = &cache.agg[h];
        let q = u.matmul_t(&head.wq);
        let k = u.matmul_t(&head.wk);
        let v = u.matmul_t(&head.wv);
        let g_agg = Matrix::from_fn(n, d, |i, c| g_o[(i, c)] * inv_h * elu_grad(agg[(i, c)]));

        let mut g_q = Matrix::zeros(n, q.cols());
        let mut g_k = Matrix::zeros(n, k.cols());
        let mut g_v = Matrix::zeros(n, d);
        for i in 0..n {
            let range = slots.range(i);
            let gs = g_agg.row(i);
            g_a.clear();
            let mut weighted = 0.0;
            for s in range.clone() {
                let j = slots.targets[s];
                let ga = dot(gs, v.row(j));
                weighted += coef[s] * ga;
                g_a.push(ga);
                axpy(g_v.row_mut(j), coef[s], gs);
            }
            for (s, ga) in range.zip(&g_a) {
                let j = slots.targets[s];
                let gl = coef[s] * (ga - weighted) * inv_t;
                if gl == 0.0 {
                    continue;
                }
                axpy(g_q.row_mut(i), gl, k.row(j));
                axpy(g_k.row_mut(j), gl, q.row(i));
            }
        }
        let gh = &mut grads.heads[h];
        gh.wv = g_v.t_matmul(u);
        gh.wq = g_q.t_matmul(u);
        gh.wk = g_k.t_matmul(u);
        g_u = g_u
            .add(&g_v.matmul(&head.wv))
            .add(&g_q.matmul(&head.wq))
            .add(&g_k.matmul(&head.wk));
    }

    if let Some(mask) = &cache.in_mask {
        for (g, m) in g_u.as_mut_slice().iter_mut().zip(mask) {
            *g *= m;
        }
    }
    let g_pre = Matrix::from_vec(
        n,
        d,
        g_u.as_slice()
            .iter()
            .zip(cache.pre_in.as_slice())
            .map(|(g, p)| g * elu_grad(*p))
            .collect(),
    );
    grads.w_in = g_pre.t_matmul(&cache.x);
    grads.b_in = column_sums(&g_pre);
    let g_x = g_pre.matmul(&params.w_in);
    Ok((grads, g_x))
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        axpy(&mut s, 1.0, m.row(i));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::check_bijective_weight;

    fn cfg(dim: usize, heads: usize, k: usize, t: f64) -> GcsConfig {
        GcsConfig {
            dim,
            heads,
            attn_dim: k,
            temperature: t,
            dropout: 0.0,
        }
    }

    fn random_x(n: usize, d: usize, seed: u64) -> EmbeddingMatrix {
        let mut r = rng::seeded(seed, 99);
        EmbeddingMatrix::from_rows(n, d, (0..n * d).map(|_| rng::normal(&mut r)).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_identity_without_noise() {
        let c = GcsConfig::new(6);
        assert_eq!(init_params(&c, 3).unwrap(), init_params(&c, 3).unwrap());
        assert_ne!(init_params(&c, 3).unwrap(), init_params(&c, 4).unwrap());
        let p = init_params_scaled(&GcsConfig::new(4), 1, 0.0).unwrap();
        assert_eq!(p.w_in, Matrix::identity(4));
        assert_eq!(p.w_out, Matrix::identity(4));
        assert_eq!(p.head_count(), 8);
        assert_eq!(p.attn_dim(), 64);
        assert!(init_params(&cfg(4, 0, 2, 1.0), 0).is_err());
        assert!(init_params(&cfg(4, 1, 2, 0.0), 0).is_err());
    }

    #[test]
    fn square_inits_are_nonsingular() {
        let c = cfg(16, 1, 4, 0.1);
        for seed in 0..1000 {
            let p = init_params(&c, seed).unwrap();
            for w in p.square_matrices() {
                assert!(check_bijective_weight(w, 0.0).unwrap().ok, "seed {seed}");
            }
        }
    }

    #[test]
    fn isolated_node_attends_to_itself() {
        let g = Graph::from_edges(1, &[]).unwrap();
        let p = init_params(&cfg(3, 4, 5, 0.1), 0).unwrap();
        let f = forward(&p, &g, &random_x(1, 3, 0), false, 0).unwrap();
        for h in &f.attention.per_head {
            assert_eq!(h[0], 1.0);
        }
        assert_eq!(f.attention.self_attention(0), 1.0);
    }

    #[test]
    fn zero_projections_give_uniform_attention() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let mut p = init_params(&cfg(3, 2, 4, 0.1), 0).unwrap();
        for h in &mut p.heads {
            h.wq = Matrix::zeros(4, 3);
            h.wk = Matrix::zeros(4, 3);
        }
        let f = forward(&p, &g, &random_x(2, 3, 1), false, 0).unwrap();
        for h in &f.attention.per_head {
            assert!(h.iter().all(|&a| a == 0.5));
        }
    }

    /// Scalar-by-scalar evaluation of the forward formulas on a 3-node path
    /// with identity square matrices, t = 1 and zero biases.
    #[test]
    fn path_matches_straight_line_reference() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let d = 2;
        let mut p = init_params_scaled(&cfg(d, 2, 2, 1.0), 5, 0.0).unwrap();
        p.heads[0].wq = Matrix::from(vec![vec![1.0, 0.5], vec![-0.3, 0.2]]);
        p.heads[0].wk = Matrix::from(vec![vec![0.7, -0.1], vec![0.4, 0.9]]);
        p.heads[1].wq = Matrix::from(vec![vec![-0.2, 0.3], vec![0.6, 0.1]]);
        p.heads[1].wk = Matrix::from(vec![vec![0.5, 0.5], vec![-0.8, 0.25]]);
        let xs = [[0.3, -1.2], [1.5, 0.4], [-0.7, -0.1]];
        let x = EmbeddingMatrix::from_rows(3, 2, xs.iter().flatten().copied().collect()).unwrap();
        let f = forward(&p, &g, &x, false, 0).unwrap();

        let e = |v: f64| if v > 0.0 { v } else { v.exp() - 1.0 };
        let u: Vec<[f64; 2]> = xs.iter().map(|r| [e(r[0]), e(r[1])]).collect();
        let nbrs: [&[usize]; 3] = [&[0, 1], &[0, 1, 2], &[1, 2]];
        let mut z = [[0.0; 2]; 3];
        for i in 0..3 {
            for h in 0..2 {
                let wq = &p.heads[h].wq;
                let wk = &p.heads[h].wk;
                let q = [
                    wq[(0, 0)] * u[i][0] + wq[(0, 1)] * u[i][1],
                    wq[(1, 0)] * u[i][0] + wq[(1, 1)] * u[i][1],
                ];
                let scores: Vec<f64> = nbrs[i]
                    .iter()
                    .map(|&j| {
                        let k0 = wk[(0, 0)] * u[j][0] + wk[(0, 1)] * u[j][1];
                        let k1 = wk[(1, 0)] * u[j][0] + wk[(1, 1)] * u[j][1];
                        (q[0] * k0 + q[1] * k1).exp()
                    })
                    .collect();
                let total: f64 = scores.iter().sum();
                let mut s = [0.0; 2];
                for (idx, &j) in nbrs[i].iter().enumerate() {
                    let a = scores[idx] / total;
                    assert!((f.attention.per_head[h][f.attention.slots.slot(i, j).unwrap()] - a).abs() < 1e-14);
                    s[0] += a * u[j][0];
                    s[1] += a * u[j][1];
                }
                z[i][0] += e(s[0]) / 2.0;
                z[i][1] += e(s[1]) / 2.0;
            }
        }
        for i in 0..3 {
            for c in 0..2 {
                assert!((f.z[(i, c)] - z[i][c]).abs() < 1e-14, "z[{i}][{c}]");
            }
        }
    }

    #[test]
    fn training_mode_is_seed_deterministic() {
        let g = crate::graph::random_graph(20, 40, 1).unwrap();
        let mut p = init_params(&cfg(4, 2, 3, 0.5), 2).unwrap();
        p.dropout = 0.3;
        let x = random_x(20, 4, 2);
        let a = forward(&p, &g, &x, true, 17).unwrap();
        let b = forward(&p, &g, &x, true, 17).unwrap();
        let c = forward(&p, &g, &x, true, 18).unwrap();
        assert_eq!(a.z, b.z);
        assert_ne!(a.z, c.z);
        let e1 = forward(&p, &g, &x, false, 1).unwrap();
        let e2 = forward(&p, &g, &x, false, 2).unwrap();
        assert_eq!(e1.z, e2.z);
    }

    #[test]
    fn shape_errors() {
        let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
        let p = init_params(&cfg(4, 1, 2, 1.0), 0).unwrap();
        assert!(matches!(forward(&p, &g, &random_x(2, 4, 0), false, 0), Err(Error::Shape { .. })));
        assert!(matches!(forward(&p, &g, &random_x(3, 5, 0), false, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
        let mut p = init_params(&cfg(2, 1, 2, 1.0), 0).unwrap();
        let f = forward(&p, &g, &random_x(3, 2, 0), false, 0).unwrap();
        p.b_in[0] += 1.0;
        assert!(backward(&p, &f, &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let g = crate::graph::random_graph(10, 15, 4).unwrap();
        let p = init_params(&cfg(3, 2, 4, 0.2), 9).unwrap();
        let f = forward(&p, &g, &random_x(10, 3, 3), false, 0).unwrap();
        let (grads, gx) = backward(&p, &f, &Matrix::zeros(10, 3)).unwrap();
        assert!(grads.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert_eq!(gx.max_abs(), 0.0);
    }

    #[test]
    fn singleton_graph_has_no_query_key_gradient() {
        let g = Graph::from_edges(1, &[]).unwrap();
        let p = init_params(&cfg(3, 2, 4, 0.2), 9).unwrap();
        let f = forward(&p, &g, &random_x(1, 3, 3), false, 0).unwrap();
        let gz = Matrix::from_vec(1, 3, vec![0.3, -1.0, 2.0]);
        let (grads, _) = backward(&p, &f, &gz).unwrap();
        for h in &grads.heads {
            assert_eq!(h.wq.max_abs(), 0.0);
            assert_eq!(h.wk.max_abs(), 0.0);
            assert!(h.wv.max_abs() > 0.0);
        }
    }

    #[test]
    fn head_average_of_single_head_is_identity() {
        let g = crate::graph::random_graph(12, 20, 5).unwrap();
        let p = init_params(&cfg(3, 1, 4, 0.3), 1).unwrap();
        let f = forward(&p, &g, &random_x(12, 3, 5), false, 0).unwrap();
        assert_eq!(f.attention.mean, f.attention.per_head[0]);
        let (edges, selfs) = head_average_attention(&f.attention, &g).unwrap();
        assert_eq!(edges.len(), g.edge_count());
        for (e, &(u, v)) in edges.iter().zip(g.edges()) {
            assert_eq!((e.u, e.v), (u, v));
            assert_eq!(e.mean, 0.5 * (e.attn_uv + e.attn_vu));
        }
        assert_eq!(selfs.len(), 12);
    }

    #[test]
    fn head_average_is_arithmetic_mean() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let slots = Slots::new(&g);
        let rec = AttentionRecord::from_heads(
            slots,
            vec![vec![0.8, 0.2, 0.5, 0.5], vec![0.6, 0.4, 0.5, 0.5]],
        );
        let (edges, selfs) = head_average_attention(&rec, &g).unwrap();
        assert!((edges[0].attn_uv - 0.3).abs() < 1e-15);
        assert_eq!(selfs, vec![0.7, 0.5]);
    }
}
