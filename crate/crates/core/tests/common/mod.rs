#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper-tail p-value of Pearson's statistic for `observed` counts against
/// cell probabilities `probs` (which must sum to 1).
pub fn chi_square_p(observed: &[u64], probs: &[f64]) -> f64 {
    assert_eq!(observed.len(), probs.len());
    let n: u64 = observed.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (observed.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

/// Inverse of an increasing CDF on `[lo, hi]` by bisection.
pub fn quantile(cdf: impl Fn(f64) -> f64, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `bins + 1` edges splitting the law with CDF `cdf`, conditioned on
/// `[lo, hi]`, into equally likely cells.
pub fn equal_mass_edges(cdf: impl Fn(f64) -> f64, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let (f_lo, f_hi) = (cdf(lo), cdf(hi));
    let mut edges = vec![lo];
    for i in 1..bins {
        let p = f_lo + (f_hi - f_lo) * i as f64 / bins as f64;
        edges.push(quantile(&cdf, p, lo, hi));
    }
    edges.push(hi);
    edges
}

pub fn histogram(values: &[f64], edges: &[f64]) -> Vec<u64> {
    let mut counts = vec![0u64; edges.len() - 1];
    for &v in values {
        let k = edges.partition_point(|&e| e <= v).saturating_sub(1).min(counts.len() - 1);
        counts[k] += 1;
    }
    counts
}

pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}
