//! Neural lower bound on mutual information and the simulator's training
//! loss.
//!
//! A statistic network `T(z, h) = w2ᵀ ELU(W1ᵀ [z; h] + b1) + b2` scores
//! pairs. Joint pairs are index-aligned rows `(z_i, h_i)`; product-of-marginal
//! pairs are `(z_i, h_{π(i)})` for a random permutation `π`. The bound is
//!
//! ```text
//! mean_i T(z_i, h_i) - log mean_i exp T(z_i, h_π(i))      (nats)
//! ```
//!
//! and the training loss is its negation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, elu, log_sum_exp, Matrix};
use crate::model::{self, GcsParams, Slots};
use crate::rng;
use crate::train::Adam;

pub const STAT_HIDDEN: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatNetParams {
    /// (z_dim + h_dim) × hidden; the first `z_dim` rows read `z`.
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// hidden × 1
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub z_dim: usize,
}

impl StatNetParams {
    pub fn new(z_dim: usize, h_dim: usize, seed: u64) -> Self {
        Self::with_hidden(z_dim, h_dim, STAT_HIDDEN, seed)
    }

    /// Uniform `±1/√fan_in` weights, zero biases.
    pub fn with_hidden(z_dim: usize, h_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut r = rng::seeded(rng::derive(seed, 0x5747), rng::stream::INIT);
        let s1 = 1.0 / ((z_dim + h_dim) as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        let w1 = Matrix::from_fn(z_dim + h_dim, hidden, |_, _| r.random_range(-s1..s1));
        let w2 = Matrix::from_fn(hidden, 1, |_, _| r.random_range(-s2..s2));
        Self {
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: vec![0.0],
            z_dim,
        }
    }

    pub fn zeros(z_dim: usize, h_dim: usize) -> Self {
        Self {
            w1: Matrix::zeros(z_dim + h_dim, STAT_HIDDEN),
            b1: vec![0.0; STAT_HIDDEN],
            w2: Matrix::zeros(STAT_HIDDEN, 1),
            b2: vec![0.0],
            z_dim,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn h_dim(&self) -> usize {
        self.w1.rows() - self.z_dim
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Matrix::zeros(self.w2.rows(), 1),
            b2: vec![0.0],
            z_dim: self.z_dim,
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    fn split_w1(&self) -> (Matrix, Matrix) {
        let hidden = self.hidden();
        let zpart = Matrix::from_fn(self.z_dim, hidden, |r, c| self.w1[(r, c)]);
        let hpart = Matrix::from_fn(self.h_dim(), hidden, |r, c| self.w1[(self.z_dim + r, c)]);
        (zpart, hpart)
    }
}

/// Intermediates of one bound evaluation, for [`dv_backward`].
#[derive(Clone, Debug)]
pub struct DvCache {
    perm: Vec<usize>,
    pre_joint: Matrix,
    act_joint: Matrix,
    pre_marg: Matrix,
    act_marg: Matrix,
    marg_weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DvBound {
    /// Lower-bound value in nats.
    pub value: f64,
    pub joint_mean: f64,
    pub cache: DvCache,
}

fn validate_perm(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Shape {
            context: "marginal permutation length",
            expected: n,
            found: perm.len(),
        });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidArgument("marginal pairing is not a permutation".into()));
        }
    }
    Ok(())
}

pub fn dv_lower_bound(stat: &StatNetParams, z: &Matrix, h: &Matrix, perm: &[usize]) -> Result<DvBound> {
    let n = z.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("bound needs at least 2 samples, got {n}")));
    }
    if h.rows() != n {
        return Err(Error::Shape {
            context: "bound: rows of h vs z",
            expected: n,
            found: h.rows(),
        });
    }
    if z.cols() != stat.z_dim || h.cols() != stat.h_dim() {
        return Err(Error::Shape {
            context: "bound: statistic network input width",
            expected: stat.w1.rows(),
            found: z.cols() + h.cols(),
        });
    }
    validate_perm(perm, n)?;
    let hidden = stat.hidden();
    let (wz, wh) = stat.split_w1();
    let pz = z.matmul(&wz);
    let ph = h.matmul(&wh);
    let w2 = stat.w2.as_slice();

    let mut pre_joint = Matrix::zeros(n, hidden);
    let mut pre_marg = Matrix::zeros(n, hidden);
    for i in 0..n {
        let (pzi, phi, php) = (pz.row(i), ph.row(i), ph.row(perm[i]));
        let rj = pre_joint.row_mut(i);
        for c in 0..hidden {
            rj[c] = pzi[c] + phi[c] + stat.b1[c];
        }
        let rm = pre_marg.row_mut(i);
        for c in 0..hidden {
            rm[c] = pzi[c] + php[c] + stat.b1[c];
        }
    }
    let act = |m: &Matrix| Matrix::from_vec(n, hidden, m.as_slice().iter().map(|&v| elu(v)).collect());
    let act_joint = act(&pre_joint);
    let act_marg = act(&pre_marg);
    let t_joint: Vec<f64> = (0..n).map(|i| dot(act_joint.row(i), w2) + stat.b2[0]).collect();
    let t_marg: Vec<f64> = (0..n).map(|i| dot(act_marg.row(i), w2) + stat.b2[0]).collect();
    if let Some(i) = t_joint.iter().chain(&t_marg).position(|t| !t.is_finite()) {
        return Err(Error::NonFinite {
            context: "statistic network output",
            node: i % n,
        });
    }

    let joint_mean = t_joint.iter().sum::<f64>() / n as f64;
    let lse = log_sum_exp(&t_marg);
    let value = joint_mean - (lse - (n as f64).ln());
    let marg_weights = t_marg.iter().map(|t| (t - lse).exp()).collect();
    Ok(DvBound {
        value,
        joint_mean,
        cache: DvCache {
            perm: perm.to_vec(),
            pre_joint,
            act_joint,
            pre_marg,
            act_marg,
            marg_weights,
        },
    })
}

/// Gradients of the loss `-bound` with respect to the statistic network and
/// to `z`.
pub fn dv_backward(stat: &StatNetParams, z: &Matrix, h: &Matrix, bound: &DvBound) -> (StatNetParams, Matrix) {
    let c = &bound.cache;
    let n = z.rows();
    let hidden = stat.hidden();
    let w2 = stat.w2.as_slice();
    let mut g = stat.zeros_like();

    // ∂loss/∂T: -1/n on joint rows, +softmax weight on marginal rows
    let gt_joint = -1.0 / n as f64;
    let mut g_pre_joint = Matrix::zeros(n, hidden);
    let mut g_pre_marg = Matrix::zeros(n, hidden);
    let mut g_w2 = vec![0.0; hidden];
    let mut g_b2 = 0.0;
    for i in 0..n {
        let gt_marg = c.marg_weights[i];
        g_b2 += gt_joint + gt_marg;
        axpy(&mut g_w2, gt_joint, c.act_joint.row(i));
        axpy(&mut g_w2, gt_marg, c.act_marg.row(i));
        let (pj, aj) = (c.pre_joint.row(i), c.act_joint.row(i));
        let (pm, am) = (c.pre_marg.row(i), c.act_marg.row(i));
        let gj = g_pre_joint.row_mut(i);
        for k in 0..hidden {
            let d = if pj[k] > 0.0 { 1.0 } else { aj[k] + 1.0 };
            gj[k] = gt_joint * w2[k] * d;
        }
        let gm = g_pre_marg.row_mut(i);
        for k in 0..hidden {
            let d = if pm[k] > 0.0 { 1.0 } else { am[k] + 1.0 };
            gm[k] = gt_marg * w2[k] * d;
        }
    }
    g.w2 = Matrix::from_vec(hidden, 1, g_w2);
    g.b2 = vec![g_b2];

    let g_pre_z = g_pre_joint.add(&g_pre_marg);
    let mut g_b1 = vec![0.0; hidden];
    for i in 0..n {
        axpy(&mut g_b1, 1.0, g_pre_z.row(i));
    }
    g.b1 = g_b1;
    let g_wz = z.t_matmul(&g_pre_z);
    let h_perm = Matrix::from_fn(n, h.cols(), |i, col| h[(c.perm[i], col)]);
    let g_wh = h.t_matmul(&g_pre_joint).add(&h_perm.t_matmul(&g_pre_marg));
    let zd = stat.z_dim;
    g.w1 = Matrix::from_fn(stat.w1.rows(), hidden, |r, col| {
        if r < zd {
            g_wz[(r, col)]
        } else {
            g_wh[(r - zd, col)]
        }
    });
    let (wz, _) = stat.split_w1();
    let g_z = g_pre_z.matmul_t(&wz);
    (g, g_z)
}

/// Loss value and gradients for both parameter sets.
#[derive(Clone, Debug)]
pub struct LossAndGrad {
    pub loss: f64,
    pub gcs: GcsParams,
    pub stat: StatNetParams,
}

/// One evaluation of the training objective: training-mode forward with
/// dropout seeded by `seed`, a fresh marginal permutation from the same
/// seed, and the negated bound as loss.
pub fn loss_and_grad(
    gcs: &GcsParams,
    stat: &StatNetParams,
    slots: &Slots,
    x: &Matrix,
    h: &Matrix,
    seed: u64,
) -> Result<LossAndGrad> {
    let fwd = model::forward_with_slots(gcs, slots, x, true, seed)?;
    let perm = rng::permutation(x.rows(), &mut rng::seeded(seed, rng::stream::PERMUTATION));
    let bound = dv_lower_bound(stat, &fwd.z, h, &perm)?;
    let (g_stat, g_z) = dv_backward(stat, &fwd.z, h, &bound);
    let (g_gcs, _) = model::backward(gcs, &fwd, &g_z)?;
    Ok(LossAndGrad {
        loss: -bound.value,
        gcs: g_gcs,
        stat: g_stat,
    })
}

/// Loss only (used by finite-difference checks).
pub fn loss_value(
    gcs: &GcsParams,
    stat: &StatNetParams,
    slots: &Slots,
    x: &Matrix,
    h: &Matrix,
    seed: u64,
) -> Result<f64> {
    let fwd = model::forward_with_slots(gcs, slots, x, true, seed)?;
    let perm = rng::permutation(x.rows(), &mut rng::seeded(seed, rng::stream::PERMUTATION));
    Ok(-dv_lower_bound(stat, &fwd.z, h, &perm)?.value)
}

/// Settings for fitting a statistic network on fixed samples.
#[derive(Clone, Copy, Debug)]
pub struct MiFitConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Fresh permutations averaged for the final estimate.
    pub eval_permutations: usize,
}

impl Default for MiFitConfig {
    fn default() -> Self {
        Self {
            steps: 1_000,
            lr: 1e-2,
            seed: 0,
            eval_permutations: 16,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MiEstimate {
    /// Final bound in nats, averaged over fresh permutations.
    pub bound: f64,
    pub curve: Vec<f64>,
    pub stat: StatNetParams,
}

/// Maximizes the bound over a statistic network for fixed samples `z`, `h`
/// with full-batch Adam.
pub fn estimate_mi(z: &Matrix, h: &Matrix, cfg: &MiFitConfig) -> Result<MiEstimate> {
    let mut stat = StatNetParams::new(z.cols(), h.cols(), cfg.seed);
    let mut adam = Adam::new(&stat.tensors(), cfg.lr);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let s = rng::derive(cfg.seed, step as u64);
        let perm = rng::permutation(z.rows(), &mut rng::seeded(s, rng::stream::PERMUTATION));
        let bound = dv_lower_bound(&stat, z, h, &perm)?;
        if !bound.value.is_finite() {
            return Err(Error::Diverged(step));
        }
        curve.push(bound.value);
        let (g, _) = dv_backward(&stat, z, h, &bound);
        adam.step(stat.tensors_mut(), &g.tensors());
    }
    let bound = evaluate_bound(&stat, z, h, cfg.seed, cfg.eval_permutations)?;
    Ok(MiEstimate { bound, curve, stat })
}

/// Mean bound over `reps` fresh permutations (independent of training draws).
pub fn evaluate_bound(stat: &StatNetParams, z: &Matrix, h: &Matrix, seed: u64, reps: usize) -> Result<f64> {
    let mut total = 0.0;
    let reps = reps.max(1);
    for k in 0..reps {
        let s = rng::derive(seed ^ 0xE7A1_0000_0000_0000, k as u64);
        let perm = rng::permutation(z.rows(), &mut rng::seeded(s, rng::stream::PERMUTATION));
        total += dv_lower_bound(stat, z, h, &perm)?.value;
    }
    Ok(total / reps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n: usize, d: usize, seed: u64) -> Matrix {
        let mut r = rng::seeded(seed, 77);
        Matrix::from_fn(n, d, |_, _| rng::normal(&mut r))
    }

    fn identity_perm(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn zero_network_gives_zero_bound() {
        let (z, h) = (samples(30, 3, 1), samples(30, 2, 2));
        let stat = StatNetParams::zeros(3, 2);
        let perm = rng::permutation(30, &mut rng::seeded(0, 0));
        let b = dv_lower_bound(&stat, &z, &h, &perm).unwrap();
        assert_eq!(b.value, 0.0);
    }

    #[test]
    fn constant_statistic_gives_zero_bound() {
        let (z, h) = (samples(25, 2, 3), samples(25, 2, 4));
        let mut stat = StatNetParams::zeros(2, 2);
        stat.b2[0] = 3.7;
        let perm = rng::permutation(25, &mut rng::seeded(1, 0));
        let b = dv_lower_bound(&stat, &z, &h, &perm).unwrap();
        assert!(b.value.abs() < 1e-14, "{}", b.value);
    }

    #[test]
    fn bound_is_shift_invariant() {
        let (z, h) = (samples(40, 3, 5), samples(40, 3, 6));
        let mut stat = StatNetParams::new(3, 3, 8);
        let perm = rng::permutation(40, &mut rng::seeded(2, 0));
        let a = dv_lower_bound(&stat, &z, &h, &perm).unwrap().value;
        stat.b2[0] += 11.5;
        let b = dv_lower_bound(&stat, &z, &h, &perm).unwrap().value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_survives_large_outputs() {
        let (z, h) = (samples(10, 1, 9), samples(10, 1, 10));
        for c in [700.0, -700.0] {
            let mut stat = StatNetParams::zeros(1, 1);
            stat.b2[0] = c;
            stat.w2[(0, 0)] = 1.0;
            stat.w1[(0, 0)] = 0.01;
            let perm = rng::permutation(10, &mut rng::seeded(3, 0));
            let b = dv_lower_bound(&stat, &z, &h, &perm).unwrap();
            assert!(b.value.is_finite());
        }
    }

    #[test]
    fn identical_pairing_is_zero() {
        // joint pairing equal to the marginal pairing: both terms coincide
        let (z, h) = (samples(20, 2, 11), samples(20, 2, 12));
        let stat = StatNetParams::new(2, 2, 1);
        let b = dv_lower_bound(&stat, &z, &h, &identity_perm(20)).unwrap();
        // mean(T) - log mean exp(T) <= 0 by Jensen
        assert!(b.value <= 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let stat = StatNetParams::zeros(1, 1);
        let one = samples(1, 1, 0);
        assert!(dv_lower_bound(&stat, &one, &one, &[0]).is_err());
        let (z, h) = (samples(3, 1, 0), samples(3, 1, 1));
        assert!(dv_lower_bound(&stat, &z, &h, &[0, 0, 1]).is_err());
        assert!(dv_lower_bound(&stat, &z, &h, &[0, 1]).is_err());
        assert!(dv_lower_bound(&stat, &z, &samples(4, 1, 0), &[0, 1, 2]).is_err());
        assert!(dv_lower_bound(&stat, &z, &samples(3, 2, 0), &[0, 1, 2]).is_err());
    }

    #[test]
    fn stat_gradient_matches_finite_differences() {
        let (z, h) = (samples(15, 2, 21), samples(15, 3, 22));
        let stat = StatNetParams::with_hidden(2, 3, 6, 4);
        let perm = rng::permutation(15, &mut rng::seeded(5, 0));
        let b = dv_lower_bound(&stat, &z, &h, &perm).unwrap();
        let (g, gz) = dv_backward(&stat, &z, &h, &b);
        let loss = |s: &StatNetParams, z: &Matrix| -dv_lower_bound(s, z, &h, &perm).unwrap().value;
        for (t, gt) in g.tensors().iter().enumerate() {
            for k in 0..gt.len() {
                let mut p = stat.clone();
                let base = p.tensors()[t][k];
                let eps = 1e-6 * (1.0 + base.abs());
                p.tensors_mut()[t][k] = base + eps;
                let up = loss(&p, &z);
                p.tensors_mut()[t][k] = base - eps;
                let dn = loss(&p, &z);
                let fd = (up - dn) / (2.0 * eps);
                assert!((fd - gt[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "t{t}[{k}]: {fd} vs {}", gt[k]);
            }
        }
        for k in 0..z.as_slice().len() {
            let mut zp = z.clone();
            let base = zp.as_slice()[k];
            let eps = 1e-6 * (1.0 + base.abs());
            zp.as_mut_slice()[k] = base + eps;
            let up = loss(&stat, &zp);
            zp.as_mut_slice()[k] = base - eps;
            let dn = loss(&stat, &zp);
            let fd = (up - dn) / (2.0 * eps);
            assert!((fd - gz.as_slice()[k]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }
}
