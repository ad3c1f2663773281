use rand::Rng;
use rand_distr::{Distribution, Normal as NormalDist, Poisson as PoissonDist};
use spatial_bd::dynamics::{replicate, simulate, uniform_grid, Model, SimulateOptions};
use spatial_bd::estimators::{
    clustering_index, decay_rate_ensemble, estimate_density, estimate_pair_correlation, factorial_moments, uniform_edges,
    window_samples, MomentAccumulator, PairAccumulator,
};
use spatial_bd::kernels::{KernelPair, KernelSpec};
use spatial_bd::pointset::{sample_poisson, PointConfig, Torus};
use spatial_bd::rng::stream;

fn poisson_snapshots(kappa: f64, torus: Torus, count: u64, seed: u64) -> Vec<PointConfig> {
    (0..count).map(|i| sample_poisson(kappa, torus, 1.0, &mut stream(seed, "poisson", i))).collect()
}

#[test]
fn pair_estimator_is_unbiased_for_poisson() {
    let kappa = 1.5;
    let torus = Torus::new(1, 40.0).unwrap();
    let snaps = poisson_snapshots(kappa, torus, 1000, 1);
    let est = estimate_pair_correlation(&snaps, &uniform_edges(0.5, 5.0), 0.0).unwrap();
    assert_eq!(est.replicas, 1000);
    for b in &est.bins {
        let z = (b.k2 - kappa * kappa).abs() / b.stderr;
        assert!(z < 3.5, "bin [{}, {}): k2 = {} ± {}", b.r_lo, b.r_hi, b.k2, b.stderr);
    }
    // pooled over bins the bias is well inside the noise as well
    let mean: f64 = est.bins.iter().map(|b| b.k2).sum::<f64>() / est.bins.len() as f64;
    assert!((mean - kappa * kappa).abs() < 0.02 * kappa * kappa);
}

#[test]
fn planar_pair_estimator_is_unbiased_for_poisson() {
    let torus = Torus::new(2, 12.0).unwrap();
    let snaps = poisson_snapshots(1.0, torus, 400, 2);
    let est = estimate_pair_correlation(&snaps, &uniform_edges(0.5, 3.0), 0.0).unwrap();
    for b in &est.bins {
        assert!((b.k2 - 1.0).abs() / b.stderr < 3.5, "{b:?}");
    }
}

#[test]
fn density_matches_kappa() {
    let torus = Torus::new(1, 50.0).unwrap();
    let snaps = poisson_snapshots(3.0, torus, 1000, 3);
    let d = estimate_density(&snaps).unwrap();
    assert!(d.z_score(3.0) < 3.0, "{} ± {}", d.mean, d.stderr);
    // the theoretical standard error is √(κ/(L·R))
    let expected_se = (3.0 / 50.0 / 1000.0f64).sqrt();
    assert!((d.stderr / expected_se - 1.0).abs() < 0.1);
}

#[test]
fn merges_are_associative_and_exact() {
    let torus = Torus::new(1, 30.0).unwrap();
    let snaps = poisson_snapshots(2.0, torus, 30, 4);
    let edges = uniform_edges(0.25, 4.0);
    let part = |range: std::ops::Range<usize>| {
        let mut acc = PairAccumulator::new(edges.clone(), 1, 30.0).unwrap();
        for s in &snaps[range] {
            acc.add(s).unwrap();
        }
        acc
    };
    let (a, b, c) = (part(0..7), part(7..19), part(19..30));
    let mut left = a.clone();
    left.merge(&b).unwrap();
    left.merge(&c).unwrap();
    let mut bc = b.clone();
    bc.merge(&c).unwrap();
    let mut right = a.clone();
    right.merge(&bc).unwrap();
    assert_eq!(left, right);
    assert_eq!(left, part(0..30));
    assert_eq!(left.finish(1.0).unwrap(), part(0..30).finish(1.0).unwrap());

    let counts = window_samples(&snaps, 1.0).unwrap();
    let mom = |xs: &[u64]| {
        let mut m = MomentAccumulator::new(4).unwrap();
        m.extend(xs.iter().copied()).unwrap();
        m
    };
    let (x, y, z) = (mom(&counts[..200]), mom(&counts[200..500]), mom(&counts[500..]));
    let mut l = x.clone();
    l.merge(&y).unwrap();
    l.merge(&z).unwrap();
    let mut yz = y.clone();
    yz.merge(&z).unwrap();
    let mut r = x.clone();
    r.merge(&yz).unwrap();
    assert_eq!(l, r);
    assert_eq!(l, mom(&counts));
}

#[test]
fn mismatched_accumulators_do_not_merge() {
    let mut a = PairAccumulator::new(uniform_edges(0.5, 2.0), 1, 10.0).unwrap();
    let b = PairAccumulator::new(uniform_edges(0.25, 2.0), 1, 10.0).unwrap();
    assert!(a.merge(&b).is_err());
    assert!(PairAccumulator::new(uniform_edges(0.5, 6.0), 1, 10.0).is_err());
}

#[test]
fn poisson_moments_are_powers_of_the_mean() {
    let torus = Torus::new(1, 100.0).unwrap();
    let snaps = poisson_snapshots(2.0, torus, 200, 5);
    let counts = window_samples(&snaps, 1.0).unwrap();
    let rep = factorial_moments(&counts, 4, 1.0).unwrap();
    for n in 1..=4 {
        let exact = 2.0f64.powi(n as i32);
        assert!((rep.moments[n - 1] - exact).abs() < 3.0 * rep.stderr[n - 1], "M{n} = {}", rep.moments[n - 1]);
    }
    assert!(rep.sub_poissonian, "{:?}", rep.excess);
    assert!((rep.envelope_kappa - 2.0).abs() < 0.05);
    assert!((rep.envelope_c - 1.0).abs() < 0.05);
}

#[test]
fn clustered_patterns_fail_the_gate() {
    // parents at density 0.2 with Poisson(10) Gaussian-scattered daughters
    let side = 200.0;
    let torus = Torus::new(1, side).unwrap();
    let mut counts = Vec::new();
    for i in 0..100 {
        let mut rng = stream(6, "cluster", i);
        let parents = PoissonDist::new(0.2 * side).unwrap().sample(&mut rng) as usize;
        let spread = NormalDist::new(0.0, 0.3).unwrap();
        let mut pts = Vec::new();
        for _ in 0..parents {
            let p: f64 = rng.gen_range(0.0..side);
            let kids = PoissonDist::new(10.0).unwrap().sample(&mut rng) as usize;
            for _ in 0..kids {
                pts.push([p + spread.sample(&mut rng)]);
            }
        }
        let cfg = PointConfig::from_points(torus, 1.0, &pts).unwrap();
        counts.extend(cfg.tile_counts(1.0).unwrap());
    }
    let rep = factorial_moments(&counts, 4, 1.0).unwrap();
    assert!(!rep.sub_poissonian);
    let ci = clustering_index(&counts).unwrap();
    assert!(ci.mean > 2.0);
}

#[test]
fn poisson_clustering_index_is_one() {
    let torus = Torus::new(2, 20.0).unwrap();
    let snaps = poisson_snapshots(1.5, torus, 200, 7);
    let counts = window_samples(&snaps, 1.0).unwrap();
    let ci = clustering_index(&counts).unwrap();
    assert!(ci.z_score(1.0) < 3.0, "{} ± {}", ci.mean, ci.stderr);
}

#[test]
fn too_few_windows_are_rejected() {
    assert!(factorial_moments(&[1, 2, 3], 3, 1.0).is_err());
}

#[test]
fn pure_death_decays_at_the_mortality_rate() {
    let m = 0.2;
    let torus = Torus::new(1, 50.0).unwrap();
    let model = Model::new(KernelPair::new(KernelSpec::zero(1), KernelSpec::zero(1)).unwrap(), m).unwrap();
    let times = uniform_grid(5.0, 10);
    let opts = SimulateOptions::new(5.0, times.clone());
    let series: Vec<Vec<f64>> = replicate(200, 8, "decay", |_, rng| {
        let init = sample_poisson(2.0, torus, 1.0, rng);
        simulate(init, &model, &opts, rng).unwrap().observations.iter().map(|o| o.density).collect()
    });
    let fit = decay_rate_ensemble(&times, &series, (0.0, 5.0)).unwrap();
    assert!((fit.rate - m).abs() < 3.0 * fit.stderr, "rate {} ± {}", fit.rate, fit.stderr);
    assert!(fit.stderr < 0.02);
}
