//! Exact simulation in the balanced regime m = 0, a⁻ = 0.5·a⁺, where the
//! Poisson state of density 2 is stationary.
//!
//! cargo run --release --example stationary_simulation

use spatial_bd::dynamics::{replicate, simulate, uniform_grid, Model, SimulateOptions};
use spatial_bd::kernels::{KernelPair, KernelSpec};
use spatial_bd::pointset::{sample_poisson, Torus};
use spatial_bd::stats::MeanSe;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = KernelSpec::gaussian(1, 1.0, 1.0)?;
    let model = Model::new(KernelPair::new(g.clone(), g.scaled(0.5)?)?, 0.0)?;
    let torus = Torus::new(1, 100.0)?;
    let times = uniform_grid(50.0, 10);
    let mut opts = SimulateOptions::new(50.0, times.clone());
    opts.recompute_period = 10_000;
    let runs = replicate(20, 42, "stationary", |_, rng| {
        let init = sample_poisson(2.0, torus, g.cutoff(), rng);
        simulate(init, &model, &opts, rng)
    });
    let runs: Vec<_> = runs.into_iter().collect::<Result<_, _>>()?;
    let events: u64 = runs.iter().map(|r| r.events).sum();
    let audits: u64 = runs.iter().map(|r| r.audits).sum();
    let drift = runs.iter().map(|r| r.max_audit_drift).fold(0.0, f64::max);
    println!("{events} events, worst rate-cache drift {drift:.1e} over {audits} audits");
    for (k, t) in times.iter().enumerate() {
        let d: Vec<f64> = runs.iter().map(|r| r.observations[k].density).collect();
        let s = MeanSe::of(&d);
        println!("t = {t:>4.0}: density {:.4} ± {:.4}", s.mean, s.stderr);
    }
    Ok(())
}
