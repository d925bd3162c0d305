//! Compares hand-written gradients of the training loss with central
//! finite differences on a few small random configurations.
//!
//! cargo run --release --example gradient_check

use gcs_probe::train;
use gcs_probe::verify;

fn main() -> gcs_probe::Result<()> {
    for seed in 0..5 {
        let (g, x, h, cfg) = verify::gradcheck_instance(seed)?;
        let at = |step| train::grad_check_with_step(&g, &x, &h, &cfg, 150, step);
        let (a, b) = (at(1e-6)?, at(2e-6)?);
        println!(
            "n={:>2} dim={} heads={} t={:.2}: max rel err {:.2e} (step 1e-6), {:.2e} (step 2e-6), {} params",
            g.node_count(),
            x.dim(),
            cfg.heads,
            cfg.temperature,
            a.max_rel_error,
            b.max_rel_error,
            a.checked
        );
    }
    Ok(())
}
