//! Dense spectral machinery: normalized Laplacian, a cyclic Jacobi
//! eigensolver, the graph Fourier transform and its inverse, and the
//! nonsingularity check for square MLP weights.
//!
//! Everything here is dense and meant for verification-sized graphs. The
//! attention model itself never eigendecomposes anything.

use serde::Serialize;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::Matrix;

pub const DENSE_NODE_CAP: usize = 2_000;
pub const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;

/// `L = I - D^{-1/2} A D^{-1/2}`. Isolated nodes get a 1 on the diagonal and
/// zeros elsewhere in their row and column.
pub fn normalized_laplacian(g: &Graph) -> Result<Matrix> {
    normalized_laplacian_capped(g, DENSE_NODE_CAP)
}

pub fn normalized_laplacian_capped(g: &Graph, cap: usize) -> Result<Matrix> {
    let n = g.node_count();
    if n > cap {
        return Err(Error::TooLarge { n, cap });
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|v| match g.degree(v) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect();
    let mut l = Matrix::identity(n);
    for &(u, v) in g.edges() {
        let w = -inv_sqrt[u] * inv_sqrt[v];
        l[(u, v)] = w;
        l[(v, u)] = w;
    }
    Ok(l)
}

/// Eigenpairs of a symmetric matrix: eigenvalues ascending, eigenvector `i`
/// in column `i` of `vectors`.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SpectralDecomposition {
    pub fn source_node_count(&self) -> usize {
        self.vectors.rows()
    }

    /// `U · diag(values) · Uᵀ`
    pub fn reconstruct(&self) -> Matrix {
        let n = self.values.len();
        let scaled = Matrix::from_fn(n, n, |r, c| self.vectors[(r, c)] * self.values[c]);
        scaled.matmul_t(&self.vectors)
    }

    /// `max |UᵀU - I|`
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.values.len();
        self.vectors.t_matmul(&self.vectors).max_abs_diff(&Matrix::identity(n))
    }
}

/// Cyclic Jacobi eigensolver.
///
/// Sweeps visit `(p, q)` pairs in row-major order, so the result is a pure
/// function of the input. Each eigenvector is signed so that its
/// largest-magnitude entry (first one, on near-ties) is positive.
pub fn sym_eig(m: &Matrix) -> Result<SpectralDecomposition> {
    sym_eig_with(m, MAX_SWEEPS)
}

pub fn sym_eig_with(m: &Matrix, max_sweeps: usize) -> Result<SpectralDecomposition> {
    if !m.is_square() {
        return Err(Error::Shape {
            context: "sym_eig (square input)",
            expected: m.rows(),
            found: m.cols(),
        });
    }
    let asym = m.max_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let n = m.rows();
    // symmetrize exactly so rotations see a truly symmetric matrix
    let mut a = Matrix::from_fn(n, n, |r, c| 0.5 * (m[(r, c)] + m[(c, r)]));
    let mut v = Matrix::identity(n);
    let scale = a.frobenius();

    let mut converged = n < 2 || scale == 0.0;
    for _ in 0..max_sweeps {
        if converged {
            break;
        }
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[(p, p)], a[(q, q)]);
                // negligible relative to both diagonal entries: zero it
                if apq.abs() < 1e-18 * (app.abs() + aqq.abs()) {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off > 1e-15 * scale {
            return Err(Error::NoConvergence(max_sweeps));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    for c in 0..n {
        let max = (0..n).fold(0.0f64, |m, r| m.max(vectors[(r, c)].abs()));
        let lead = (0..n)
            .find(|&r| vectors[(r, c)].abs() >= max - 1e-12)
            .unwrap_or(0);
        if vectors[(lead, c)] < 0.0 {
            for r in 0..n {
                vectors[(r, c)] = -vectors[(r, c)];
            }
        }
    }
    Ok(SpectralDecomposition { values, vectors })
}

fn check_rows(dec: &SpectralDecomposition, x: &Matrix) -> Result<()> {
    if x.rows() != dec.source_node_count() {
        return Err(Error::Shape {
            context: "graph Fourier transform rows",
            expected: dec.source_node_count(),
            found: x.rows(),
        });
    }
    Ok(())
}

/// Graph Fourier transform `Uᵀ X`.
pub fn gft(dec: &SpectralDecomposition, x: &Matrix) -> Result<Matrix> {
    check_rows(dec, x)?;
    Ok(dec.vectors.t_matmul(x))
}

/// Inverse graph Fourier transform `U Y`.
pub fn rgft(dec: &SpectralDecomposition, y: &Matrix) -> Result<Matrix> {
    check_rows(dec, y)?;
    Ok(dec.vectors.matmul(y))
}

/// Singular values by one-sided (Hestenes) Jacobi, descending.
pub fn singular_values(w: &Matrix) -> Result<Vec<f64>> {
    let (m, n) = (w.rows(), w.cols());
    let mut a = w.clone();
    // columns below this squared norm are numerically zero
    let tiny = (f64::EPSILON * w.frobenius()).powi(2);
    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..m {
                    let (x, y) = (a[(k, p)], a[(k, q)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || alpha <= tiny || beta <= tiny || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..m {
                    let (x, y) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * x - s * y;
                    a[(k, q)] = s * x + c * y;
                }
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::NoConvergence(MAX_SWEEPS));
    }
    let mut sv: Vec<f64> = (0..n)
        .map(|c| (0..m).map(|r| a[(r, c)] * a[(r, c)]).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BijectivityCheck {
    pub ok: bool,
    /// Smallest singular value of `W`: a conservative stand-in for the
    /// smallest absolute eigenvalue, not the spectral minimum itself.
    pub min_abs_eigenvalue: f64,
}

/// Whether `W - εI` is safely nonsingular for the given perturbation:
/// requires `0 <= ε < σ_min(W)`, `σ_min(W - εI) > 1e-12 · ‖W‖₂` and a
/// nonzero scaled LU pivot of `W - εI`.
pub fn check_bijective_weight(w: &Matrix, epsilon: f64) -> Result<BijectivityCheck> {
    if !w.is_square() {
        return Err(Error::Shape {
            context: "bijective weight (square)",
            expected: w.rows(),
            found: w.cols(),
        });
    }
    let sv = singular_values(w)?;
    let sigma_min = sv.last().copied().unwrap_or(0.0);
    let norm = sv.first().copied().unwrap_or(0.0);
    let mut ok = epsilon >= 0.0 && epsilon < sigma_min;
    if ok {
        let n = w.rows();
        let shifted = w.sub(&Matrix::identity(n).scale(epsilon));
        let shifted_min = singular_values(&shifted)?.last().copied().unwrap_or(0.0);
        ok = shifted_min > 1e-12 * norm && shifted.lu_min_pivot() > 1e-12;
    }
    Ok(BijectivityCheck {
        ok,
        min_abs_eigenvalue: sigma_min,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralCheck {
    pub n: usize,
    pub eigen_range: [f64; 2],
    pub roundtrip_error: f64,
    pub orthogonality_error: f64,
    pub reconstruction_error: f64,
}

/// Eigendecomposes the normalized Laplacian of `g` and measures the
/// identities the transform relies on, using `x` as the test signal.
pub fn spectral_check(g: &Graph, x: &EmbeddingMatrix) -> Result<SpectralCheck> {
    let l = normalized_laplacian(g)?;
    let dec = sym_eig(&l)?;
    let back = rgft(&dec, &gft(&dec, x.matrix())?)?;
    Ok(SpectralCheck {
        n: g.node_count(),
        eigen_range: [
            dec.values.first().copied().unwrap_or(0.0),
            dec.values.last().copied().unwrap_or(0.0),
        ],
        roundtrip_error: back.max_abs_diff(x.matrix()),
        orthogonality_error: dec.orthogonality_error(),
        reconstruction_error: dec.reconstruct().max_abs_diff(&l),
    })
}
