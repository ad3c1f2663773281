//! Explicit bounds: the operator-norm estimate of the correlation
//! generator between weighted spaces, certificates for the domination
//! inequality
//!
//! ```text
//! b·|η| + Q⁻(η) ≥ θ·Q⁺(η),   Q^±(η) = Σ_{x∈η} Σ_{y∈η∖x} a^±(x − y),
//! ```
//!
//! and the long-time envelopes of the correlation functions.
//!
//! A domination certificate is empirical: "no violation found" over a
//! sampled budget of finite configurations of bounded size, plus an
//! optional local-search refinement. It is not a proof over all finite
//! configurations.

use crate::format::fmt17;
use crate::kernels::{classify_dispersal, Dispersal, KernelPair, KernelSummary};
use crate::rng::{stream, SimRng};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::E;
use std::io::Write;
use thiserror::Error;

pub const MIN_CERTIFICATE_BUDGET: usize = 10_000;
/// Relative shading applied to analytic θ so the certificate survives
/// floating-point evaluation at the touching point.
const ANALYTIC_SHADING: f64 = 1e-12;
const SAMPLE_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("weights must satisfy ϑ' > ϑ (got ϑ = {theta}, ϑ' = {theta_prime})")]
    WeightOrder { theta: f64, theta_prime: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("certificate budget {0} is below the minimum {MIN_CERTIFICATE_BUDGET}")]
    BudgetTooSmall(usize),
    #[error("envelope constants violate the case constraints: {0}")]
    EnvelopeConstraint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Inputs of the operator-norm bound between the spaces with weights
/// `e^{-ϑ|η|}` and `e^{-ϑ'|η|}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormBoundInput {
    pub theta: f64,
    pub theta_prime: f64,
    pub mass_plus: f64,
    pub sup_plus: f64,
    pub mass_minus: f64,
    pub sup_minus: f64,
    pub mortality: f64,
}

impl NormBoundInput {
    pub fn from_pair(pair: &KernelPair, mortality: f64, theta: f64, theta_prime: f64) -> Self {
        NormBoundInput {
            theta,
            theta_prime,
            mass_plus: pair.dispersal.mass(),
            sup_plus: pair.dispersal.sup_norm(),
            mass_minus: pair.competition.mass(),
            sup_minus: pair.competition.sup_norm(),
            mortality,
        }
    }
}

/// `4(‖a⁺‖ + ‖a⁻‖)/(e²(ϑ'−ϑ)²) + (⟨a⁺⟩ + m + ⟨a⁻⟩e^{ϑ'})/(e(ϑ'−ϑ))`.
pub fn operator_norm_bound(input: &NormBoundInput) -> Result<f64, TheoryError> {
    let gap = input.theta_prime - input.theta;
    if !(gap > 0.0) {
        return Err(TheoryError::WeightOrder { theta: input.theta, theta_prime: input.theta_prime });
    }
    let vals = [input.mass_plus, input.sup_plus, input.mass_minus, input.sup_minus, input.mortality];
    if vals.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(TheoryError::InvalidInput("kernel constants and mortality must be finite and nonnegative".into()));
    }
    let first = 4.0 * (input.sup_plus + input.sup_minus) / (E * E * gap * gap);
    let second = (input.mass_plus + input.mortality + input.mass_minus * input.theta_prime.exp()) / (E * gap);
    Ok(first + second)
}

/// `(Q⁺(η), Q⁻(η))` over ordered pairs of distinct points, with Euclidean
/// distances. `points` is flat, `dim` coordinates per point.
pub fn pair_sums(pair: &KernelPair, points: &[f64], dim: usize) -> (f64, f64) {
    let n = points.len() / dim;
    let mut qp = 0.0;
    let mut qm = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let r2: f64 = (0..dim).map(|k| (points[i * dim + k] - points[j * dim + k]).powi(2)).sum();
            qp += pair.dispersal.value_at_sq(r2);
            qm += pair.competition.value_at_sq(r2);
        }
    }
    (2.0 * qp, 2.0 * qm)
}

/// `θ·Q⁺(η) − b·|η| − Q⁻(η)`; the inequality holds on η iff this is ≤ 0.
pub fn margin(pair: &KernelPair, b: f64, theta: f64, points: &[f64]) -> f64 {
    let dim = pair.dim();
    let (qp, qm) = pair_sums(pair, points, dim);
    theta * qp - b * (points.len() / dim) as f64 - qm
}

/// Largest margin of `(b, θ)` over the supplied configurations
/// (`-∞` for an empty list).
pub fn verify_domination(pair: &KernelPair, b: f64, theta: f64, configs: &[Vec<f64>]) -> f64 {
    configs.par_iter().map(|c| margin(pair, b, theta, c)).reduce(|| f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMethod {
    /// Short dispersal: `b = 0` and θ from the pointwise ratio.
    Analytic,
    /// Grid search over `(b, θ)` validated on sampled configurations.
    Search,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DominationCertificate {
    pub b: f64,
    pub theta: f64,
    pub method: CertificateMethod,
    pub budget: usize,
    pub min_size: usize,
    pub max_size: usize,
    /// Largest margin seen on the validation sample; ≤ 0 for a valid
    /// certificate.
    pub max_margin: f64,
    pub violations: usize,
    pub seed: u64,
    pub dispersal: KernelSummary,
    pub competition: KernelSummary,
}

impl DominationCertificate {
    pub fn is_valid(&self) -> bool {
        self.violations == 0 && self.max_margin <= 0.0
    }

    pub fn write_json<W: Write>(&self, out: &mut W) -> Result<(), TheoryError> {
        serde_json::to_writer_pretty(&mut *out, self).map_err(|e| TheoryError::Io(e.into()))?;
        writeln!(out)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertificateOptions {
    pub budget: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub seed: u64,
    /// Largest `b` the search may return. Defaults to `‖a⁻‖`.
    pub b_max: Option<f64>,
}

impl CertificateOptions {
    pub fn new(budget: usize, seed: u64) -> Self {
        CertificateOptions { budget, min_size: 2, max_size: 6, seed, b_max: None }
    }
}

/// Outcome of a certificate search.
#[derive(Clone, Debug, PartialEq)]
pub enum SearchOutcome {
    Certified(DominationCertificate),
    /// No candidate on the grid validated; carries the best attempt.
    NotFound(DominationCertificate),
}

impl SearchOutcome {
    pub fn certificate(&self) -> &DominationCertificate {
        match self {
            SearchOutcome::Certified(c) | SearchOutcome::NotFound(c) => c,
        }
    }
}

fn length_scales(pair: &KernelPair) -> Vec<f64> {
    let mut v: Vec<f64> = [&pair.dispersal, &pair.competition]
        .iter()
        .filter(|k| !k.is_zero())
        .flat_map(|k| [k.family().length_scale(), k.cutoff()])
        .collect();
    if v.is_empty() {
        v.push(1.0);
    }
    v
}

fn sample_one(rng: &mut SimRng, dim: usize, size: usize, scales: &[f64], reach: f64) -> Vec<f64> {
    let mut pts = vec![0.0; size * dim];
    let ell = scales[rng.gen_range(0..scales.len())];
    match rng.gen_range(0..3) {
        0 => {
            // single tight cluster near the origin
            let s = ell * 10f64.powf(rng.gen_range(-3.0..0.5));
            for v in pts.iter_mut() {
                *v = s * rng.sample::<f64, _>(StandardNormal);
            }
        }
        1 => {
            // two clusters at a random separation
            let sep = rng.gen_range(0.0..1.2 * reach.max(ell));
            let s = ell * 10f64.powf(rng.gen_range(-3.0..-0.5));
            let split = rng.gen_range(1..size.max(2));
            for i in 0..size {
                for k in 0..dim {
                    let centre = if i < split && k == 0 { sep } else { 0.0 };
                    pts[i * dim + k] = centre + s * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        _ => {
            let r = rng.gen_range(0.1..1.2) * reach.max(ell);
            for v in pts.iter_mut() {
                *v = rng.gen_range(-r..r);
            }
        }
    }
    pts
}

/// `count` configurations with sizes in `min_size..=max_size`, mixing
/// tight clusters, split clusters and uniform scatters at the kernels'
/// length scales. Deterministic in `seed`.
pub fn sample_configurations(pair: &KernelPair, count: usize, min_size: usize, max_size: usize, seed: u64) -> Vec<Vec<f64>> {
    let dim = pair.dim();
    let scales = length_scales(pair);
    let reach = pair.max_cutoff();
    let chunks = count.div_ceil(SAMPLE_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = stream(seed, "domination", c as u64);
            let n = SAMPLE_CHUNK.min(count - c * SAMPLE_CHUNK);
            (0..n)
                .map(|_| {
                    let size = rng.gen_range(min_size..=max_size);
                    sample_one(&mut rng, dim, size, &scales, reach)
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

/// Finds `(b, θ)` for the domination inequality.
///
/// Short dispersal yields `b = 0` with θ from the pointwise ratio (shaded
/// by a relative 1e-12). Otherwise, or when that pair fails validation on
/// the truncated kernels, θ runs over a log grid and for each θ the
/// smallest grid `b` with `b ≥ 1.1·max_η (θQ⁺ − Q⁻)/|η|` is taken; the
/// largest θ whose `b` stays within `b_max` wins. Validation always uses
/// the full sampled budget.
pub fn find_domination_constants(pair: &KernelPair, opts: &CertificateOptions) -> Result<SearchOutcome, TheoryError> {
    if opts.budget < MIN_CERTIFICATE_BUDGET {
        return Err(TheoryError::BudgetTooSmall(opts.budget));
    }
    if opts.min_size < 1 || opts.max_size < opts.min_size {
        return Err(TheoryError::InvalidInput(format!("size range {}..={}", opts.min_size, opts.max_size)));
    }
    let dim = pair.dim();
    let configs = sample_configurations(pair, opts.budget, opts.min_size, opts.max_size, opts.seed);
    let sums: Vec<(f64, f64, f64)> = configs
        .par_iter()
        .map(|c| {
            let (qp, qm) = pair_sums(pair, c, dim);
            ((c.len() / dim) as f64, qp, qm)
        })
        .collect();
    let evaluate = |b: f64, theta: f64| -> (f64, usize) {
        let mut worst = f64::NEG_INFINITY;
        let mut violations = 0;
        for &(n, qp, qm) in &sums {
            let m = theta * qp - b * n - qm;
            if m > 0.0 {
                violations += 1;
            }
            worst = worst.max(m);
        }
        (worst, violations)
    };
    let build = |b: f64, theta: f64, method: CertificateMethod| {
        let (max_margin, violations) = evaluate(b, theta);
        DominationCertificate {
            b,
            theta,
            method,
            budget: opts.budget,
            min_size: opts.min_size,
            max_size: opts.max_size,
            max_margin,
            violations,
            seed: opts.seed,
            dispersal: pair.dispersal.summary(),
            competition: pair.competition.summary(),
        }
    };

    if let Dispersal::Short { theta } = classify_dispersal(pair) {
        if theta.is_finite() {
            let cert = build(0.0, theta * (1.0 - ANALYTIC_SHADING), CertificateMethod::Analytic);
            if cert.is_valid() {
                return Ok(SearchOutcome::Certified(cert));
            }
        }
    }

    let sup_plus = pair.dispersal.sup_norm();
    let sup_minus = pair.competition.sup_norm();
    let b_max = opts.b_max.unwrap_or(sup_minus);
    let theta_scale = if sup_plus > 0.0 && sup_minus > 0.0 { sup_minus / sup_plus } else { 1.0 };
    let thetas = logspace(1e-3 * theta_scale, 1e2 * theta_scale, 61);
    let b_grid: Vec<f64> = std::iter::once(0.0).chain(logspace(1e-6 * b_max.max(1e-300), b_max, 81)).collect();

    let mut best: Option<DominationCertificate> = None;
    let mut fallback: Option<DominationCertificate> = None;
    for &theta in &thetas {
        let needed = sums
            .iter()
            .map(|&(n, qp, qm)| (theta * qp - qm) / n)
            .fold(0.0f64, f64::max);
        let target = 1.1 * needed;
        match b_grid.iter().find(|&&b| b >= target) {
            Some(&b) => {
                let cert = build(b, theta, CertificateMethod::Search);
                if cert.is_valid() {
                    best = Some(cert);
                }
            }
            None => {
                if fallback.is_none() {
                    fallback = Some(build(b_max, theta, CertificateMethod::Search));
                }
            }
        }
    }
    match best {
        Some(c) => Ok(SearchOutcome::Certified(c)),
        None => Ok(SearchOutcome::NotFound(
            fallback.unwrap_or_else(|| build(b_max, thetas[0], CertificateMethod::Search)),
        )),
    }
}

/// Hill-climbs on configurations to maximise the margin of `(b, θ)`.
/// Each seed configuration is perturbed one point at a time for
/// `iterations` proposals; improvements are kept. Returns the largest
/// margin found and the configuration attaining it.
pub fn adversarial_refine(
    pair: &KernelPair,
    b: f64,
    theta: f64,
    seeds: &[Vec<f64>],
    iterations: usize,
    seed: u64,
) -> (f64, Vec<f64>) {
    let dim = pair.dim();
    let scales = length_scales(pair);
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, start)| {
            let mut rng = stream(seed, "adversarial", i as u64);
            let mut cur = start.clone();
            let mut cur_m = margin(pair, b, theta, &cur);
            let n = cur.len() / dim;
            for _ in 0..iterations {
                let p = rng.gen_range(0..n);
                let ell = scales[rng.gen_range(0..scales.len())];
                let step = ell * 10f64.powf(rng.gen_range(-4.0..0.0));
                let mut cand = cur.clone();
                for k in 0..dim {
                    cand[p * dim + k] += step * rng.sample::<f64, _>(StandardNormal);
                }
                let m = margin(pair, b, theta, &cand);
                if m > cur_m {
                    cur = cand;
                    cur_m = m;
                }
            }
            (cur_m, cur)
        })
        .reduce(
            || (f64::NEG_INFINITY, Vec::new()),
            |a, b| if b.0 > a.0 { b } else { a },
        )
}

/// `E⁻(η) = m·|η| + Q⁻(η)`.
pub fn aggregate_death_rate(pair: &KernelPair, mortality: f64, points: &[f64]) -> f64 {
    let dim = pair.dim();
    let (_, qm) = pair_sums(pair, points, dim);
    mortality * (points.len() / dim) as f64 + qm
}

/// Long-time regime with its constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnvelopeCase {
    /// `⟨a⁺⟩ > 0`, `m ≤ ⟨a⁺⟩`: bound `C_δⁿ·exp((⟨a⁺⟩ − δ)·n·t)` with
    /// `δ < m` (long dispersal) or `δ ≤ m` (short dispersal).
    Growth { c_delta: f64, delta: f64, short_dispersal: bool, mortality: f64, mass_plus: f64 },
    /// `⟨a⁺⟩ > 0`, `m > ⟨a⁺⟩`: bound `C_εⁿ·e^{−εt}` for `ε ∈ (0, m − ⟨a⁺⟩)`.
    Extinction { c_eps: f64, eps: f64, mortality: f64, mass_plus: f64 },
    /// `⟨a⁺⟩ = 0`: bound `k₀(η)·exp(−E⁻(η)·t)`.
    NoDispersal { k0: f64, death_rate: f64 },
}

impl EnvelopeCase {
    pub fn tag(&self) -> &'static str {
        match self {
            EnvelopeCase::Growth { .. } => "i",
            EnvelopeCase::Extinction { .. } => "ii",
            EnvelopeCase::NoDispersal { .. } => "iii",
        }
    }

    fn validate(&self) -> Result<(), TheoryError> {
        let fail = |s: String| Err(TheoryError::EnvelopeConstraint(s));
        match *self {
            EnvelopeCase::Growth { c_delta, delta, short_dispersal, mortality, mass_plus } => {
                if !(mass_plus > 0.0) {
                    return fail(format!("case (i) needs ⟨a⁺⟩ > 0, got {mass_plus}"));
                }
                if !(mortality >= 0.0 && mortality <= mass_plus) {
                    return fail(format!("case (i) needs 0 ≤ m ≤ ⟨a⁺⟩, got m = {mortality}"));
                }
                let ok = if short_dispersal { delta <= mortality } else { delta < mortality };
                if !ok {
                    return fail(format!("δ = {delta} too large for m = {mortality}"));
                }
                if !(c_delta > 0.0) {
                    return fail(format!("C_δ = {c_delta} must be positive"));
                }
            }
            EnvelopeCase::Extinction { c_eps, eps, mortality, mass_plus } => {
                if !(mass_plus > 0.0 && mortality > mass_plus) {
                    return fail(format!("case (ii) needs m > ⟨a⁺⟩ > 0, got m = {mortality}, ⟨a⁺⟩ = {mass_plus}"));
                }
                if !(eps > 0.0 && eps < mortality - mass_plus) {
                    return fail(format!("ε = {eps} outside (0, {})", mortality - mass_plus));
                }
                if !(c_eps > 0.0) {
                    return fail(format!("C_ε = {c_eps} must be positive"));
                }
            }
            EnvelopeCase::NoDispersal { k0, death_rate } => {
                if !(k0 >= 0.0 && death_rate >= 0.0) {
                    return fail("k₀ and E⁻ must be nonnegative".into());
                }
            }
        }
        Ok(())
    }
}

/// Upper bound for `k_t` on `n`-point configurations at time `t`.
pub fn correlation_envelope(case: &EnvelopeCase, n: usize, t: f64) -> Result<f64, TheoryError> {
    case.validate()?;
    if !(t >= 0.0) {
        return Err(TheoryError::InvalidInput(format!("t = {t}")));
    }
    let nf = n as f64;
    Ok(match *case {
        EnvelopeCase::Growth { c_delta, delta, mass_plus, .. } => {
            c_delta.powi(n as i32) * ((mass_plus - delta) * nf * t).exp()
        }
        EnvelopeCase::Extinction { c_eps, eps, .. } => c_eps.powi(n as i32) * (-eps * t).exp(),
        EnvelopeCase::NoDispersal { k0, death_rate } => k0 * (-death_rate * t).exp(),
    })
}

/// Writes `t, n, envelope` rows.
pub fn write_envelope_csv<W: Write>(out: &mut W, case: &EnvelopeCase, n: usize, times: &[f64]) -> Result<(), TheoryError> {
    writeln!(out, "t,n,envelope")?;
    for &t in times {
        writeln!(out, "{},{},{}", fmt17(t), n, fmt17(correlation_envelope(case, n, t)?))?;
    }
    Ok(())
}
