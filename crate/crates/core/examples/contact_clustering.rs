//! Contact model (no competition) against the self-regulated model with
//! a⁻ = a⁺: clustering index and sub-Poissonian gate over time.
//!
//! cargo run --release --example contact_clustering

use spatial_bd::dynamics::{replicate, simulate, uniform_grid, Model, SimulateOptions};
use spatial_bd::estimators::MomentAccumulator;
use spatial_bd::kernels::{KernelPair, KernelSpec};
use spatial_bd::pointset::{sample_poisson, Torus};

fn run(label: &str, competition: KernelSpec) -> Result<(), Box<dyn std::error::Error>> {
    let dispersal = KernelSpec::gaussian(1, 1.0, 1.0)?;
    let model = Model::new(KernelPair::new(dispersal.clone(), competition)?, 0.5)?;
    let torus = Torus::new(1, 100.0)?;
    let times = uniform_grid(10.0, 10);
    let opts = SimulateOptions::new(10.0, times.clone()).with_snapshots(true);
    let runs = replicate(20, 2024, label, |_, rng| {
        let init = sample_poisson(1.0, torus, dispersal.cutoff(), rng);
        simulate(init, &model, &opts, rng)
    });
    println!("{label}");
    println!("{:>5} {:>9} {:>16} {:>6}", "t", "density", "M2/M1^2", "gate");
    for (k, &t) in times.iter().enumerate() {
        let mut acc = MomentAccumulator::new(4)?;
        let mut density = 0.0;
        for traj in &runs {
            let obs = &traj.as_ref().map_err(|e| e.to_string())?.observations[k];
            acc.extend(obs.snapshot.as_ref().expect("snapshots kept").tile_counts(1.0)?)?;
            density += obs.density / runs.len() as f64;
        }
        let ci = acc.clustering_index()?;
        let gate = acc.report(1.0)?;
        println!(
            "{t:>5.1} {density:>9.3} {:>9.4} ± {:<5.4} {:>6}",
            ci.mean,
            ci.stderr,
            if gate.sub_poissonian { "sub" } else { "NOT" }
        );
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run("contact model (a- = 0)", KernelSpec::zero(1))?;
    run("self-regulated (a- = a+)", KernelSpec::gaussian(1, 1.0, 1.0)?)?;
    Ok(())
}
