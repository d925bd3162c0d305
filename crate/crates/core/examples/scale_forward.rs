//! One eval-mode forward pass over a random graph with 100k nodes and 1M
//! edges, reporting wall time and peak resident memory.
//!
//! cargo run --release --example scale_forward [nodes] [edges]

use std::time::Instant;

use gcs_probe::embedding::EmbeddingMatrix;
use gcs_probe::graph;
use gcs_probe::linalg::Matrix;
use gcs_probe::model::{self, GcsConfig};
use gcs_probe::rng;

fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn main() -> gcs_probe::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let n = args.next().unwrap_or(100_000);
    let m = args.next().unwrap_or(1_000_000);
    let dim = 16;

    let start = Instant::now();
    let g = graph::random_graph(n, m, 7)?;
    let mut r = rng::seeded(7, rng::stream::INIT);
    let x = EmbeddingMatrix::new(Matrix::from_fn(n, dim, |_, _| rng::normal(&mut r)))?;
    let built = start.elapsed();

    let params = model::init_params(&GcsConfig::new(dim), 7)?;
    let t = Instant::now();
    let fwd = model::forward(&params, &g, &x, false, 0)?;
    let forward = t.elapsed();

    println!("nodes {n}, edges {}", g.edge_count());
    println!("graph + features: {:.2}s", built.as_secs_f64());
    println!("forward (8 heads, eval): {:.2}s", forward.as_secs_f64());
    println!("max attention row-sum error: {:.2e}", fwd.attention.max_row_sum_error());
    if let Some(kib) = peak_rss_kib() {
        println!("peak resident memory: {:.0} MiB", kib as f64 / 1024.0);
    }
    Ok(())
}
