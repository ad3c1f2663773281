//! Domination constants (b, θ) with b·|η| + Q⁻(η) ≥ θ·Q⁺(η), validated on
//! sampled configurations and attacked by local search.
//!
//! cargo run --release --example domination_certificate

use spatial_bd::kernels::{KernelPair, KernelSpec};
use spatial_bd::theory::{adversarial_refine, find_domination_constants, margin, sample_configurations, CertificateOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (sp, sm) in [(1.0, 2.0), (2.0, 1.0)] {
        let pair = KernelPair::new(KernelSpec::gaussian(1, 1.0, sp)?, KernelSpec::gaussian(1, 1.0, sm)?)?;
        let opts = CertificateOptions::new(100_000, 1);
        let outcome = find_domination_constants(&pair, &opts)?;
        let c = outcome.certificate();
        let configs = sample_configurations(&pair, 20_000, 2, 6, 2);
        let mut worst: Vec<_> = configs.iter().map(|x| (margin(&pair, c.b, c.theta, x), x)).collect();
        worst.sort_by(|a, b| b.0.total_cmp(&a.0));
        let seeds: Vec<Vec<f64>> = worst.iter().take(50).map(|(_, x)| (*x).clone()).collect();
        let (adv, _) = adversarial_refine(&pair, c.b, c.theta, &seeds, 200, 3);
        println!(
            "sigma+ = {sp}, sigma- = {sm}: {:?} b = {:.4e}, theta = {:.6}, violations {}, adversarial margin {adv:.3e}",
            c.method, c.b, c.theta, c.violations
        );
    }
    Ok(())
}
