//! Kirkwood-closed hierarchy against replicated simulation under mild
//! competition (m = 0.5, ⟨a⁺⟩ = 1, a⁻ = 0.3·a⁺).
//!
//! cargo run --release --example hierarchy_vs_simulation

use spatial_bd::dynamics::{replicate, simulate, uniform_grid, Model, SimulateOptions};
use spatial_bd::hierarchy::{ClosureRule, Grid, HierarchySolver, HierarchyState, IntegrateOptions};
use spatial_bd::kernels::{KernelPair, KernelSpec};
use spatial_bd::pointset::{sample_poisson, Torus};
use spatial_bd::stats::MeanSe;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = KernelSpec::gaussian(1, 1.0, 1.0)?;
    let model = Model::new(KernelPair::new(g.clone(), g.scaled(0.3)?)?, 0.5)?;
    let side = 100.0;

    let solver = HierarchySolver::new(model.clone(), Grid::new(1024, side)?)?;
    let bound = solver.stability_dt(solver.density_scale(1.0));
    let t_end = 20.0;
    let steps = (t_end / bound).ceil();
    let run = solver.integrate(
        &HierarchyState::poisson(solver.grid(), 1.0),
        ClosureRule::kirkwood(),
        &IntegrateOptions::new(t_end / steps, t_end),
    )?;

    let times = uniform_grid(t_end, 20);
    let torus = Torus::new(1, side)?;
    let opts = SimulateOptions::new(t_end, times.clone());
    let trajectories = replicate(30, 5, "benchmark", |_, rng| {
        let init = sample_poisson(1.0, torus, g.cutoff(), rng);
        simulate(init, &model, &opts, rng)
    });
    let trajectories: Vec<_> = trajectories.into_iter().collect::<Result<_, _>>()?;

    println!("{:>5} {:>10} {:>16} {:>8}", "t", "k1", "MC density", "rel");
    for (k, &t) in times.iter().enumerate() {
        let d: Vec<f64> = trajectories.iter().map(|tr| tr.observations[k].density).collect();
        let mc = MeanSe::of(&d);
        let k1 = run.k1_at(t);
        println!("{t:>5.1} {k1:>10.5} {:>9.5} ± {:<5.4} {:>8.4}", mc.mean, mc.stderr, (k1 - mc.mean).abs() / mc.mean);
    }
    Ok(())
}
