//! Operator-norm bound between weighted spaces and long-time envelopes of
//! the correlation functions.
//!
//! cargo run --example norm_bound

use spatial_bd::kernels::{KernelPair, KernelSpec};
use spatial_bd::theory::{correlation_envelope, operator_norm_bound, EnvelopeCase, NormBoundInput};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let hat = KernelSpec::top_hat(1, 1.0, 0.5)?;
    let pair = KernelPair::new(hat.clone(), hat)?;
    for theta_prime in [0.25, 0.5, 1.0, 2.0] {
        let b = operator_norm_bound(&NormBoundInput::from_pair(&pair, 1.0, 0.0, theta_prime))?;
        println!("theta = 0, theta' = {theta_prime}: bound {b:.6}");
    }

    let ext = EnvelopeCase::Extinction { c_eps: 1.0, eps: 0.4, mortality: 1.5, mass_plus: 1.0 };
    let dead = EnvelopeCase::NoDispersal { k0: 4.0, death_rate: 0.4 };
    for t in [0.0, 2.5, 5.0, 10.0] {
        println!(
            "t = {t:>4}: extinction k2 <= {:.4e}, no dispersal k2 <= {:.4e}",
            correlation_envelope(&ext, 2, t)?,
            correlation_envelope(&dead, 2, t)?
        );
    }
    Ok(())
}
