mod common;

use common::{chi_square_p, equal_mass_edges, histogram, mean_var};
use proptest::prelude::*;
use spatial_bd::kernels::{classify_dispersal, Dispersal, KernelPair, KernelSpec};
use spatial_bd::rng::stream;
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::PI;

const DRAWS: usize = 100_000;
const BINS: usize = 50;

fn draws_1d(k: &KernelSpec, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, "kernel-test", 0);
    (0..DRAWS).map(|_| k.sample_displacement(&mut rng).unwrap()[0]).collect()
}

fn goodness_of_fit(values: &[f64], cdf: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let edges = equal_mass_edges(cdf, lo, hi, BINS);
    chi_square_p(&histogram(values, &edges), &vec![1.0 / BINS as f64; BINS])
}

#[test]
fn gaussian_samples_follow_the_normal_law() {
    let k = KernelSpec::gaussian(1, 1.0, 2.0).unwrap();
    let xs = draws_1d(&k, 1);
    let normal = Normal::new(0.0, 2.0).unwrap();
    let r = k.cutoff();
    assert!(goodness_of_fit(&xs, |x| normal.cdf(x), -r, r) > 1e-3);
    let (_, var) = mean_var(&xs);
    // Var of the sample variance of a normal is 2σ⁴/(n−1).
    let se = (2.0 * 16.0 / (DRAWS as f64 - 1.0)).sqrt();
    assert!((var - 4.0).abs() < 3.0 * se, "variance {var}");
}

#[test]
fn top_hat_samples_are_uniform() {
    let k = KernelSpec::top_hat(1, 1.0, 1.0).unwrap();
    let xs = draws_1d(&k, 2);
    assert!(goodness_of_fit(&xs, |x| (x + 1.0) / 2.0, -1.0, 1.0) > 1e-3);
    let (mean, var) = mean_var(&xs);
    assert!(mean.abs() < 3.0 * (1.0 / 3.0 / DRAWS as f64).sqrt());
    assert!((var - 1.0 / 3.0).abs() < 0.01);
}

#[test]
fn exponential_samples_follow_the_laplace_law() {
    let lambda = 0.7;
    let k = KernelSpec::exponential(1, 1.0, lambda).unwrap();
    let xs = draws_1d(&k, 3);
    let cdf = |x: f64| if x < 0.0 { 0.5 * (x / lambda).exp() } else { 1.0 - 0.5 * (-x / lambda).exp() };
    let r = k.cutoff();
    assert!(goodness_of_fit(&xs, cdf, -r, r) > 1e-3);
}

#[test]
fn planar_samples_have_the_right_radius_and_angle_laws() {
    let gauss = KernelSpec::gaussian(2, 1.0, 1.5).unwrap();
    let expo = KernelSpec::exponential(2, 1.0, 0.8).unwrap();
    for (k, seed) in [(&gauss, 4u64), (&expo, 5)] {
        let mut rng = stream(seed, "kernel-test", 1);
        let pts: Vec<Vec<f64>> = (0..DRAWS).map(|_| k.sample_displacement(&mut rng).unwrap()).collect();
        let radii: Vec<f64> = pts.iter().map(|p| p[0].hypot(p[1])).collect();
        let angles: Vec<f64> = pts.iter().map(|p| p[1].atan2(p[0])).collect();
        let radial_cdf: Box<dyn Fn(f64) -> f64> = if std::ptr::eq(k, &gauss) {
            Box::new(|r: f64| 1.0 - (-r * r / (2.0 * 1.5 * 1.5)).exp())
        } else {
            Box::new(|r: f64| 1.0 - (-r / 0.8).exp() * (1.0 + r / 0.8))
        };
        assert!(goodness_of_fit(&radii, radial_cdf, 0.0, k.cutoff()) > 1e-3);
        assert!(goodness_of_fit(&angles, |a| (a + PI) / (2.0 * PI), -PI, PI) > 1e-3);
        assert!(radii.iter().all(|&r| r <= k.cutoff()));
    }
}

#[test]
fn sampling_is_replayable() {
    let k = KernelSpec::exponential(3, 1.0, 1.0).unwrap();
    let a: Vec<Vec<f64>> = {
        let mut rng = stream(99, "kernel-test", 7);
        (0..100).map(|_| k.sample_displacement(&mut rng).unwrap()).collect()
    };
    let mut rng = stream(99, "kernel-test", 7);
    let b: Vec<Vec<f64>> = (0..100).map(|_| k.sample_displacement(&mut rng).unwrap()).collect();
    assert_eq!(a, b);
}

/// Midpoint rule over `[−R, R]ᵈ`.
fn quadrature(k: &KernelSpec, cells: usize) -> f64 {
    let d = k.dim();
    let r = k.cutoff();
    let h = 2.0 * r / cells as f64;
    let total = cells.pow(d as u32);
    let mut sum = 0.0;
    let mut x = vec![0.0; d];
    for idx in 0..total {
        let mut rem = idx;
        for xi in x.iter_mut() {
            *xi = -r + (rem % cells) as f64 * h + 0.5 * h;
            rem /= cells;
        }
        sum += k.evaluate(&x).unwrap();
    }
    sum * h.powi(d as i32)
}

#[test]
fn quadrature_reproduces_masses() {
    let cases = [
        (KernelSpec::gaussian(1, 2.0, 0.8).unwrap(), 20_000, 1e-6),
        (KernelSpec::exponential(1, 1.5, 0.5).unwrap(), 20_000, 1e-6),
        (KernelSpec::gaussian(2, 1.0, 1.0).unwrap(), 800, 1e-5),
        (KernelSpec::exponential(2, 1.0, 0.6).unwrap(), 1_200, 1e-3),
        (KernelSpec::top_hat(2, 0.5, 1.0).unwrap(), 2_000, 5e-3),
    ];
    for (k, cells, tol) in cases {
        let q = quadrature(&k, cells);
        let rel = (q - k.mass()).abs() / k.mass();
        assert!(rel <= k.tail_tol() + tol, "{:?}: quadrature {q} vs mass {}", k.family(), k.mass());
    }
}

#[test]
fn closed_form_masses() {
    let g3 = KernelSpec::gaussian(3, 2.5, 0.3).unwrap();
    assert!((g3.mass() - 2.5).abs() < 2.5e-10);
    let t3 = KernelSpec::top_hat(3, 2.0, 1.5).unwrap();
    assert!((t3.mass() - 2.0 * 4.0 / 3.0 * PI * 1.5f64.powi(3)).abs() < 1e-10 * t3.mass());
    let e2 = KernelSpec::exponential(2, 1.0, 1.0).unwrap();
    assert!((e2.sup_norm() - 1.0 / (2.0 * PI)).abs() < 1e-14);
}

#[test]
fn gaussian_cutoff_matches_the_two_sided_tail() {
    let k = KernelSpec::gaussian(1, 1.0, 1.0).unwrap();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let tail = |r: f64| 2.0 * (1.0 - normal.cdf(r));
    let r = k.cutoff();
    assert!((r - 4.8916).abs() < 1e-3, "R_c = {r}");
    assert!(tail(r) <= 1e-6 * (1.0 + 1e-9));
    assert!(tail(r - 1e-3) > 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernels_are_even(x in -6.0f64..6.0, y in -6.0f64..6.0, w in 0.2f64..3.0) {
        for k in [
            KernelSpec::gaussian(2, 1.0, w).unwrap(),
            KernelSpec::exponential(2, 1.0, w).unwrap(),
            KernelSpec::top_hat(2, 1.0, w).unwrap(),
        ] {
            prop_assert_eq!(k.evaluate(&[x, y]).unwrap(), k.evaluate(&[-x, -y]).unwrap());
        }
    }

    #[test]
    fn classification_is_scale_consistent(lambda in 0.05f64..20.0, w_minus in 0.5f64..3.0) {
        let plus = KernelSpec::gaussian(1, 1.0, 1.0).unwrap();
        let minus = KernelSpec::gaussian(1, 1.0, w_minus).unwrap();
        let base = classify_dispersal(&KernelPair::new(plus.clone(), minus.clone()).unwrap());
        let scaled = classify_dispersal(&KernelPair::new(plus, minus.scaled(lambda).unwrap()).unwrap());
        match (base, scaled) {
            (Dispersal::Short { theta: a }, Dispersal::Short { theta: b }) => {
                prop_assert!((b - lambda * a).abs() <= 1e-9 * b.abs().max(1.0));
            }
            (Dispersal::Long, Dispersal::Long) => {}
            other => prop_assert!(false, "classification flipped: {:?}", other),
        }
    }
}

#[test]
fn classification_examples() {
    let g = |w| KernelSpec::gaussian(1, 1.0, w).unwrap();
    assert_eq!(classify_dispersal(&KernelPair::new(g(2.0), g(1.0)).unwrap()), Dispersal::Long);
    let th = classify_dispersal(&KernelPair::new(g(1.0), g(2.0)).unwrap()).theta().unwrap();
    assert!((th - 0.5).abs() < 1e-12);
    let hat = KernelSpec::top_hat(1, 1.0, 1.0).unwrap();
    assert!(classify_dispersal(&KernelPair::new(hat, g(1.0)).unwrap()).is_short());
    let plus = KernelSpec::gaussian(1, 1.0, 1.0).unwrap();
    let minus = KernelSpec::exponential(1, 1.0, 1.0).unwrap();
    // log(a⁻/a⁺) = const − ρ/λ + ρ²/(2σ²) is minimised at ρ* = σ²/λ = 1.
    let expected = minus.raw_value_at_radius(1.0) / plus.raw_value_at_radius(1.0);
    let got = classify_dispersal(&KernelPair::new(plus, minus).unwrap()).theta().unwrap();
    assert!((got - expected).abs() < 1e-9 * expected);
}
