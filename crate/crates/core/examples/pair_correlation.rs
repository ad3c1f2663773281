//! Pair correlation, window factorial moments and the sub-Poissonian gate
//! on Poisson snapshots.
//!
//! cargo run --release --example pair_correlation

use spatial_bd::estimators::{estimate_pair_correlation, factorial_moments, uniform_edges, window_samples};
use spatial_bd::pointset::{sample_poisson, Torus};
use spatial_bd::rng::stream;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kappa = 2.0;
    let torus = Torus::new(1, 100.0)?;
    let snaps: Vec<_> = (0..200).map(|i| sample_poisson(kappa, torus, 1.0, &mut stream(8, "example", i))).collect();

    let est = estimate_pair_correlation(&snaps, &uniform_edges(0.5, 3.0), 0.0)?;
    println!("k1 = {:.4} ± {:.4}", est.k1.mean, est.k1.stderr);
    for b in &est.bins {
        println!("k2 on [{:.1}, {:.1}): {:.3} ± {:.3} (Poisson: {})", b.r_lo, b.r_hi, b.k2, b.stderr, kappa * kappa);
    }

    let counts = window_samples(&snaps, 1.0)?;
    let report = factorial_moments(&counts, 4, 1.0)?;
    for (n, (m, se)) in report.moments.iter().zip(&report.stderr).enumerate() {
        println!("M{} = {m:.3} ± {se:.3} (Poisson: {})", n + 1, kappa.powi(n as i32 + 1));
    }
    println!("sub-Poissonian: {}", report.sub_poissonian);
    Ok(())
}
