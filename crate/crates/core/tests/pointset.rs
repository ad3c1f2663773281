mod common;

use common::chi_square_p;
use proptest::prelude::*;
use spatial_bd::pointset::{read_snapshot, sample_poisson, write_snapshot, PointConfig, Torus, Window};
use spatial_bd::rng::stream;
use spatial_bd::stats::MeanSe;
use statrs::distribution::{Discrete, DiscreteCDF, Poisson};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cell_list_matches_brute_force(
        dim in 1usize..=3,
        side in 6.0f64..40.0,
        range_frac in 0.02f64..0.5,
        n in 0usize..200,
        seed in any::<u64>(),
    ) {
        let torus = Torus::new(dim, side).unwrap();
        let range = range_frac * side;
        let mut rng = stream(seed, "prop", 0);
        use rand::Rng;
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(0.0..side)).collect()).collect();
        let mut cfg = PointConfig::from_points(torus, range, &pts).unwrap();
        // exercise removal bookkeeping as well
        for k in 0..n / 5 {
            let id = cfg.id_at(k % cfg.len());
            cfg.remove(id);
        }
        for q in 0..20 {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-side..2.0 * side)).collect();
            let radius = rng.gen_range(0.0..=0.5) * side;
            let exclude = (q % 2 == 0 && !cfg.is_empty()).then(|| cfg.id_at(0));
            let mut fast = cfg.neighbors_within(&x, radius, exclude).unwrap();
            let mut slow = cfg.neighbors_within_brute(&x, radius, exclude);
            fast.sort();
            slow.sort();
            prop_assert_eq!(fast, slow);
        }
    }
}

#[test]
fn poisson_counts_follow_the_poisson_law() {
    let torus = Torus::new(1, 50.0).unwrap();
    let kappa = 0.4;
    let counts: Vec<u64> = (0..4000)
        .map(|i| sample_poisson(kappa, torus, 1.0, &mut stream(11, "pp", i)).len() as u64)
        .collect();
    let law = Poisson::new(kappa * 50.0).unwrap();
    // cells: ≤ 12, 13, …, 27, ≥ 28
    let mut probs = vec![law.cdf(12)];
    probs.extend((13..28).map(|k| law.pmf(k)));
    probs.push(1.0 - law.cdf(27));
    let mut observed = vec![0u64; probs.len()];
    for c in counts {
        let cell = (c.clamp(12, 28) - 12) as usize;
        observed[cell] += 1;
    }
    assert!(chi_square_p(&observed, &probs) > 1e-3);
}

#[test]
fn unit_window_mean_is_kappa() {
    let torus = Torus::new(2, 10.0).unwrap();
    let window = Window::cube(vec![3.0, 4.5], 1.0);
    let counts: Vec<f64> = (0..2000)
        .map(|i| {
            let cfg = sample_poisson(1.0, torus, 1.0, &mut stream(12, "pp", i));
            cfg.window_count(&window).unwrap() as f64
        })
        .collect();
    let m = MeanSe::of(&counts);
    assert!(m.z_score(1.0) < 3.0, "mean {} ± {}", m.mean, m.stderr);
}

#[test]
fn tiles_partition_the_box() {
    let torus = Torus::new(3, 6.0).unwrap();
    let cfg = sample_poisson(2.0, torus, 1.5, &mut stream(3, "pp", 0));
    let tiles = cfg.tile_counts(2.0).unwrap();
    assert_eq!(tiles.len(), 27);
    assert_eq!(tiles.iter().sum::<u64>() as usize, cfg.len());
}

#[test]
fn snapshot_round_trip_is_bit_exact() {
    let torus = Torus::new(2, 7.5).unwrap();
    let cfg = sample_poisson(3.0, torus, 1.0, &mut stream(5, "pp", 0));
    let mut buf = Vec::new();
    write_snapshot(&mut buf, &cfg, 1.25, 5).unwrap();
    let (header, rows) = read_snapshot(buf.as_slice()).unwrap();
    assert_eq!((header.dim, header.side, header.count, header.time, header.seed), (2, 7.5, cfg.len(), 1.25, 5));
    for (row, p) in rows.iter().zip(cfg.positions()) {
        assert_eq!(row.as_slice(), p);
    }
}
