//! Normalized Laplacian eigendecomposition, the graph Fourier transform and
//! the nonsingularity margin of a square weight.
//!
//! cargo run --release --example spectral_identities

use gcs_probe::embedding::EmbeddingMatrix;
use gcs_probe::graph;
use gcs_probe::linalg::Matrix;
use gcs_probe::model::{self, GcsConfig};
use gcs_probe::rng;
use gcs_probe::spectral;

fn main() -> gcs_probe::Result<()> {
    let g = graph::random_connected_graph(120, 200, 3)?;
    let mut r = rng::seeded(3, 0);
    let x = Matrix::from_fn(120, 8, |_, _| rng::normal(&mut r));

    let lap = spectral::normalized_laplacian(&g)?;
    let dec = spectral::sym_eig(&lap)?;
    let y = spectral::gft(&dec, &x)?;
    let back = spectral::rgft(&dec, &y)?;
    println!("eigenvalues in [{:.3e}, {:.6}]", dec.values[0], dec.values[dec.values.len() - 1]);
    println!("|RGFT(GFT(X)) - X|_max = {:.2e}", back.max_abs_diff(&x));
    println!("|U^T U - I|_max = {:.2e}", dec.orthogonality_error());

    // low-frequency energy share of a smooth signal vs noise
    let smooth = Matrix::from_fn(120, 1, |i, _| dec.vectors[(i, 1)]);
    let energy = |m: &Matrix| {
        let s = spectral::gft(&dec, m).unwrap();
        let total: f64 = s.as_slice().iter().map(|v| v * v).sum();
        s.as_slice()[..12].iter().map(|v| v * v).sum::<f64>() / total
    };
    let noise = Matrix::from_fn(120, 1, |i, _| x[(i, 0)]);
    println!("low-band energy: smooth {:.3}, noise {:.3}", energy(&smooth), energy(&noise));

    let summary = spectral::spectral_check(&g, &EmbeddingMatrix::new(x)?)?;
    println!("spectral_check: {summary:?}");

    let params = model::init_params(&GcsConfig::new(16), 11)?;
    for eps in [0.0, 0.1] {
        let c = spectral::check_bijective_weight(&params.w_in, eps)?;
        println!("w_in bijective at eps={eps}: {} (sigma_min {:.4})", c.ok, c.min_abs_eigenvalue);
    }
    Ok(())
}
