//! Kernel families: masses, cutoffs, sampling and short/long dispersal.
//!
//! cargo run --example kernels

use spatial_bd::kernels::{classify_dispersal, KernelPair, KernelSpec};
use spatial_bd::rng::stream;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kernels = [
        KernelSpec::gaussian(1, 1.0, 1.0)?,
        KernelSpec::top_hat(1, 0.5, 1.0)?,
        KernelSpec::exponential(2, 1.0, 0.5)?,
    ];
    println!("{:<12} {:>3} {:>10} {:>10} {:>10} {:>10}", "family", "d", "mass", "sup", "cutoff", "trunc");
    for k in &kernels {
        println!(
            "{:<12} {:>3} {:>10.6} {:>10.6} {:>10.4} {:>10.2e}",
            k.family().name(),
            k.dim(),
            k.mass(),
            k.sup_norm(),
            k.cutoff(),
            k.truncation_error()
        );
    }

    let mut rng = stream(1, "example", 0);
    let draws: Vec<f64> = (0..5).map(|_| kernels[0].sample_displacement(&mut rng).map(|v| v[0])).collect::<Result<_, _>>()?;
    println!("gaussian displacements: {draws:.3?}");

    for (sp, sm) in [(1.0, 2.0), (2.0, 1.0)] {
        let pair = KernelPair::new(KernelSpec::gaussian(1, 1.0, sp)?, KernelSpec::gaussian(1, 1.0, sm)?)?;
        println!("sigma+ = {sp}, sigma- = {sm}: {:?}", classify_dispersal(&pair));
    }
    Ok(())
}
