//! Correlation-function and window-moment estimators.
//!
//! Pair counts use *ordered* pairs `(x, y)`, `x ≠ y`, so every unordered
//! pair contributes twice. This is the factorial-measure convention under
//! which `k⁽²⁾ = κ²` for a Poisson state; counting unordered pairs would
//! halve every estimate.
//!
//! Accumulators keep integer sums only, so merging replica accumulators in
//! any order produces bit-identical estimates.

use crate::format::fmt17;
use crate::kernels::unit_ball_volume;
use crate::pointset::{PointConfig, PointsetError};
use crate::stats::{linear_fit, MeanSe};
use std::io::Write;
use thiserror::Error;

/// Smallest number of window samples accepted by [`factorial_moments`].
pub const MIN_MOMENT_SAMPLES: usize = 1_000;
pub const MAX_MOMENT_ORDER: usize = 6;
/// Slack, in standard errors, of the sub-Poissonian gate.
pub const GATE_SIGMAS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("no snapshots supplied")]
    NoSnapshots,
    #[error("invalid bin edges: {0}")]
    InvalidBins(String),
    #[error("bin edge {edge} is wider than half the side length {half}")]
    BinTooWide { edge: f64, half: f64 },
    #[error("need at least {needed} window samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("moment order {0} outside 2..=6")]
    InvalidOrder(usize),
    #[error("mean window count is zero")]
    ZeroMean,
    #[error("non-positive density {value} at t = {time} inside the fit window")]
    NonPositiveDensity { time: f64, value: f64 },
    #[error("fit window contains fewer than two observations")]
    EmptyFitWindow,
    #[error("accumulators are incompatible: {0}")]
    Incompatible(String),
    #[error("integer overflow in moment sums")]
    Overflow,
    #[error(transparent)]
    Pointset(#[from] PointsetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mean density `n/V` across snapshots with its standard error.
pub fn estimate_density<'a, I>(snapshots: I) -> Result<MeanSe, EstimatorError>
where
    I: IntoIterator<Item = &'a PointConfig>,
{
    let values: Vec<f64> = snapshots.into_iter().map(|c| c.density()).collect();
    if values.is_empty() {
        return Err(EstimatorError::NoSnapshots);
    }
    Ok(MeanSe::of(&values))
}

/// One bin of the pair-correlation estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairBin {
    pub r_lo: f64,
    pub r_hi: f64,
    pub k2: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationEstimate {
    pub time: f64,
    pub k1: MeanSe,
    pub bins: Vec<PairBin>,
    pub replicas: usize,
}

/// `width`-spaced edges from 0 up to `r_max`.
pub fn uniform_edges(width: f64, r_max: f64) -> Vec<f64> {
    let n = (r_max / width).round() as usize;
    (0..=n).map(|i| width * i as f64).collect()
}

/// Volume of the annulus `lo ≤ |u| < hi` in ℝᵈ.
pub fn shell_volume(dim: usize, lo: f64, hi: f64) -> f64 {
    unit_ball_volume(dim) * (hi.powi(dim as i32) - lo.powi(dim as i32))
}

/// Mergeable accumulator for pair-correlation and density estimates.
///
/// One *sample* is a group of snapshots (for instance the snapshots of one
/// replica over a time window); its counts are averaged over the group, and
/// standard errors are taken across samples.
#[derive(Clone, Debug, PartialEq)]
pub struct PairAccumulator {
    edges: Vec<f64>,
    dim: usize,
    volume: f64,
    group_size: Option<usize>,
    samples: u64,
    count_sum: Vec<u128>,
    count_sq_sum: Vec<u128>,
    points_sum: u128,
    points_sq_sum: u128,
}

impl PairAccumulator {
    pub fn new(edges: Vec<f64>, dim: usize, side: f64) -> Result<Self, EstimatorError> {
        if edges.len() < 2 {
            return Err(EstimatorError::InvalidBins("need at least two edges".into()));
        }
        if edges[0] < 0.0 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(EstimatorError::InvalidBins("edges must be nonnegative and strictly increasing".into()));
        }
        let half = side / 2.0;
        let last = *edges.last().unwrap();
        if last > half {
            return Err(EstimatorError::BinTooWide { edge: last, half });
        }
        let nb = edges.len() - 1;
        Ok(PairAccumulator {
            edges,
            dim,
            volume: side.powi(dim as i32),
            group_size: None,
            samples: 0,
            count_sum: vec![0; nb],
            count_sq_sum: vec![0; nb],
            points_sum: 0,
            points_sq_sum: 0,
        })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    fn pair_counts(&self, config: &PointConfig) -> Vec<u64> {
        let nb = self.edges.len() - 1;
        let r_max = self.edges[nb];
        let lo = self.edges[0];
        let mut counts = vec![0u64; nb];
        let owned;
        let cfg = if config.cell_side() > 2.0 * r_max && config.cells_per_axis() < (config.torus().side() / r_max) as usize {
            owned = config.reindexed(r_max);
            &owned
        } else {
            config
        };
        for i in 0..cfg.len() {
            cfg.for_each_within(cfg.position(i), r_max, |j, r2| {
                if j == i {
                    return;
                }
                let r = r2.sqrt();
                if r < lo || r >= r_max {
                    return;
                }
                // first edge strictly greater than r
                let b = self.edges.partition_point(|&e| e <= r) - 1;
                counts[b] += 1;
            });
        }
        counts
    }

    /// Adds one sample made of a group of snapshots. All groups must have
    /// the same size.
    pub fn add_group(&mut self, group: &[&PointConfig]) -> Result<(), EstimatorError> {
        if group.is_empty() {
            return Err(EstimatorError::NoSnapshots);
        }
        match self.group_size {
            None => self.group_size = Some(group.len()),
            Some(g) if g != group.len() => {
                return Err(EstimatorError::Incompatible(format!("group size {} vs {}", group.len(), g)))
            }
            _ => {}
        }
        let nb = self.edges.len() - 1;
        let mut total = vec![0u128; nb];
        let mut points: u128 = 0;
        for cfg in group {
            if cfg.dim() != self.dim || cfg.torus().volume() != self.volume {
                return Err(EstimatorError::Incompatible("snapshot torus differs from accumulator".into()));
            }
            for (t, c) in total.iter_mut().zip(self.pair_counts(cfg)) {
                *t += u128::from(c);
            }
            points += cfg.len() as u128;
        }
        for b in 0..nb {
            self.count_sum[b] += total[b];
            self.count_sq_sum[b] += total[b] * total[b];
        }
        self.points_sum += points;
        self.points_sq_sum += points * points;
        self.samples += 1;
        Ok(())
    }

    pub fn add(&mut self, snapshot: &PointConfig) -> Result<(), EstimatorError> {
        self.add_group(&[snapshot])
    }

    pub fn merge(&mut self, other: &PairAccumulator) -> Result<(), EstimatorError> {
        if self.edges != other.edges || self.dim != other.dim || self.volume != other.volume {
            return Err(EstimatorError::Incompatible("different bins or torus".into()));
        }
        match (self.group_size, other.group_size) {
            (Some(a), Some(b)) if a != b => return Err(EstimatorError::Incompatible("different group sizes".into())),
            (None, g) => self.group_size = g,
            _ => {}
        }
        for b in 0..self.count_sum.len() {
            self.count_sum[b] += other.count_sum[b];
            self.count_sq_sum[b] += other.count_sq_sum[b];
        }
        self.points_sum += other.points_sum;
        self.points_sq_sum += other.points_sq_sum;
        self.samples += other.samples;
        Ok(())
    }

    /// Mean and standard error of `x_s / scale` over samples, from integer
    /// sums of `x_s` and `x_s²`.
    fn mean_se(sum: u128, sq_sum: u128, n: u64, scale: f64) -> (f64, f64) {
        let nf = n as f64;
        let mean = sum as f64 / nf;
        let se = if n > 1 {
            // exact integer numerator n·Σx² − (Σx)²
            let num = (n as u128) * sq_sum - sum * sum;
            let var = num as f64 / (nf * (nf - 1.0));
            (var / nf).sqrt()
        } else {
            0.0
        };
        (mean / scale, se / scale)
    }

    pub fn finish(&self, time: f64) -> Result<CorrelationEstimate, EstimatorError> {
        if self.samples == 0 {
            return Err(EstimatorError::NoSnapshots);
        }
        let g = self.group_size.unwrap_or(1) as f64;
        let (k1, k1_se) = Self::mean_se(self.points_sum, self.points_sq_sum, self.samples, g * self.volume);
        let bins = (0..self.count_sum.len())
            .map(|b| {
                let (lo, hi) = (self.edges[b], self.edges[b + 1]);
                let scale = g * self.volume * shell_volume(self.dim, lo, hi);
                let (k2, stderr) = Self::mean_se(self.count_sum[b], self.count_sq_sum[b], self.samples, scale);
                PairBin { r_lo: lo, r_hi: hi, k2, stderr }
            })
            .collect();
        Ok(CorrelationEstimate {
            time,
            k1: MeanSe { mean: k1, stderr: k1_se, n: self.samples as usize },
            bins,
            replicas: self.samples as usize,
        })
    }
}

/// Pair-correlation estimate with one sample per snapshot.
pub fn estimate_pair_correlation<'a, I>(snapshots: I, edges: &[f64], time: f64) -> Result<CorrelationEstimate, EstimatorError>
where
    I: IntoIterator<Item = &'a PointConfig>,
{
    let mut acc: Option<PairAccumulator> = None;
    for cfg in snapshots {
        let a = match acc.as_mut() {
            Some(a) => a,
            None => acc.insert(PairAccumulator::new(edges.to_vec(), cfg.dim(), cfg.torus().side())?),
        };
        a.add(cfg)?;
    }
    acc.ok_or(EstimatorError::NoSnapshots)?.finish(time)
}

/// Window counts of every snapshot over disjoint cubic tiles of side `side`.
pub fn window_samples<'a, I>(snapshots: I, side: f64) -> Result<Vec<u64>, EstimatorError>
where
    I: IntoIterator<Item = &'a PointConfig>,
{
    let mut out = Vec::new();
    for cfg in snapshots {
        out.extend(cfg.tile_counts(side)?);
    }
    Ok(out)
}

/// Mergeable accumulator of falling-factorial window moments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MomentAccumulator {
    n_max: usize,
    samples: u64,
    /// Σ N^{(a)} for a = 1..=n_max.
    sums: Vec<u128>,
    /// Σ N^{(a)} N^{(b)}, row-major over a, b = 1..=n_max.
    cross: Vec<u128>,
}

fn falling(n: u64, order: usize) -> u128 {
    (0..order as u64).fold(1u128, |acc, k| if n >= k { acc * u128::from(n - k) } else { 0 })
}

impl MomentAccumulator {
    pub fn new(n_max: usize) -> Result<Self, EstimatorError> {
        if !(2..=MAX_MOMENT_ORDER).contains(&n_max) {
            return Err(EstimatorError::InvalidOrder(n_max));
        }
        Ok(MomentAccumulator { n_max, samples: 0, sums: vec![0; n_max], cross: vec![0; n_max * n_max] })
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn add(&mut self, count: u64) -> Result<(), EstimatorError> {
        let f: Vec<u128> = (1..=self.n_max).map(|a| falling(count, a)).collect();
        for a in 0..self.n_max {
            self.sums[a] = self.sums[a].checked_add(f[a]).ok_or(EstimatorError::Overflow)?;
            for b in 0..self.n_max {
                let p = f[a].checked_mul(f[b]).ok_or(EstimatorError::Overflow)?;
                let c = &mut self.cross[a * self.n_max + b];
                *c = c.checked_add(p).ok_or(EstimatorError::Overflow)?;
            }
        }
        self.samples += 1;
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = u64>>(&mut self, counts: I) -> Result<(), EstimatorError> {
        for c in counts {
            self.add(c)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<(), EstimatorError> {
        if self.n_max != other.n_max {
            return Err(EstimatorError::Incompatible("different moment orders".into()));
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a = a.checked_add(*b).ok_or(EstimatorError::Overflow)?;
        }
        for (a, b) in self.cross.iter_mut().zip(&other.cross) {
            *a = a.checked_add(*b).ok_or(EstimatorError::Overflow)?;
        }
        self.samples += other.samples;
        Ok(())
    }

    /// Sample mean of `N^{(order)}`.
    pub fn moment(&self, order: usize) -> f64 {
        self.sums[order - 1] as f64 / self.samples as f64
    }

    /// Sample covariance of `N^{(a)}` and `N^{(b)}`.
    fn cov(&self, a: usize, b: usize) -> f64 {
        let n = self.samples as f64;
        if self.samples < 2 {
            return 0.0;
        }
        let sab = self.cross[(a - 1) * self.n_max + (b - 1)] as f64;
        let ma = self.moment(a);
        let mb = self.moment(b);
        (sab - n * ma * mb) / (n - 1.0)
    }

    /// Standard error of a smooth function of the moments with gradient
    /// `grad` (pairs of order and partial derivative), by the delta method.
    fn delta_se(&self, grad: &[(usize, f64)]) -> f64 {
        let mut var = 0.0;
        for &(a, ga) in grad {
            for &(b, gb) in grad {
                var += ga * gb * self.cov(a, b);
            }
        }
        (var.max(0.0) / self.samples as f64).sqrt()
    }

    pub fn report(&self, volume: f64) -> Result<MomentReport, EstimatorError> {
        if (self.samples as usize) < MIN_MOMENT_SAMPLES {
            return Err(EstimatorError::InsufficientSamples { needed: MIN_MOMENT_SAMPLES, got: self.samples as usize });
        }
        let moments: Vec<f64> = (1..=self.n_max).map(|a| self.moment(a)).collect();
        let stderr: Vec<f64> = (1..=self.n_max).map(|a| self.delta_se(&[(a, 1.0)])).collect();
        let m1 = moments[0];
        let m2 = moments[1];
        if m1 == 0.0 {
            return Ok(MomentReport {
                volume,
                samples: self.samples as usize,
                moments,
                stderr,
                envelope_c: 1.0,
                envelope_kappa: 0.0,
                excess: Vec::new(),
                sub_poissonian: true,
            });
        }
        // Envelope density: at least the mean density and at least the
        // pair-level growth factor M₂/M₁.
        let ratio = m2 / m1;
        let pair_branch = ratio > m1;
        let kv = if pair_branch { ratio } else { m1 };
        let envelope_c = m1 / kv;
        let mut excess = Vec::new();
        for n in 3..=self.n_max {
            let nf = n as f64;
            let (bound, grad) = if pair_branch {
                let bound = m2.powi(n as i32 - 1) * m1.powi(2 - n as i32);
                let d1 = (nf - 2.0) * m2.powi(n as i32 - 1) * m1.powi(1 - n as i32);
                let d2 = -(nf - 1.0) * m2.powi(n as i32 - 2) * m1.powi(2 - n as i32);
                (bound, vec![(1, d1), (2, d2), (n, 1.0)])
            } else {
                (m1.powi(n as i32), vec![(1, -nf * m1.powi(n as i32 - 1)), (n, 1.0)])
            };
            excess.push(GateTerm { order: n, moment: moments[n - 1], envelope: bound, stderr: self.delta_se(&grad) });
        }
        let sub_poissonian = excess.iter().all(|t| t.moment - t.envelope <= GATE_SIGMAS * t.stderr);
        Ok(MomentReport {
            volume,
            samples: self.samples as usize,
            moments,
            stderr,
            envelope_c,
            envelope_kappa: kv / volume,
            excess,
            sub_poissonian,
        })
    }

    /// `M₂/M₁²` with a delta-method standard error.
    pub fn clustering_index(&self) -> Result<MeanSe, EstimatorError> {
        if self.samples == 0 {
            return Err(EstimatorError::InsufficientSamples { needed: 1, got: 0 });
        }
        let m1 = self.moment(1);
        let m2 = self.moment(2);
        if m1 == 0.0 {
            return Err(EstimatorError::ZeroMean);
        }
        let value = m2 / (m1 * m1);
        let stderr = self.delta_se(&[(1, -2.0 * m2 / (m1 * m1 * m1)), (2, 1.0 / (m1 * m1))]);
        Ok(MeanSe { mean: value, stderr, n: self.samples as usize })
    }
}

/// Comparison of one moment with the fitted envelope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateTerm {
    pub order: usize,
    pub moment: f64,
    pub envelope: f64,
    /// Standard error of `moment − envelope`.
    pub stderr: f64,
}

/// Window factorial moments `M_n = E[N(N−1)⋯(N−n+1)]` and the
/// sub-Poissonian gate.
///
/// The envelope `C·(κV)ⁿ` takes `κV = max(M₁, M₂/M₁)` and `C = M₁/(κV)`,
/// so it matches the data at orders 1 and 2 and is at least Poissonian.
/// The state passes the gate when every higher moment stays below the
/// envelope up to [`GATE_SIGMAS`] standard errors of the difference.
/// Clustered states, whose moments grow like `n!·cⁿ`, fail at order 3.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentReport {
    pub volume: f64,
    pub samples: usize,
    /// `M_1..M_{n_max}`.
    pub moments: Vec<f64>,
    pub stderr: Vec<f64>,
    pub envelope_c: f64,
    pub envelope_kappa: f64,
    pub excess: Vec<GateTerm>,
    pub sub_poissonian: bool,
}

impl MomentReport {
    pub fn envelope(&self, order: usize) -> f64 {
        self.envelope_c * (self.envelope_kappa * self.volume).powi(order as i32)
    }
}

/// Factorial moments of window counts up to `n_max` with the gate verdict.
pub fn factorial_moments(counts: &[u64], n_max: usize, volume: f64) -> Result<MomentReport, EstimatorError> {
    let mut acc = MomentAccumulator::new(n_max)?;
    acc.extend(counts.iter().copied())?;
    acc.report(volume)
}

/// `M₂/M₁²` of window counts; 1 for a Poisson state.
pub fn clustering_index(counts: &[u64]) -> Result<MeanSe, EstimatorError> {
    let mut acc = MomentAccumulator::new(2)?;
    acc.extend(counts.iter().copied())?;
    acc.clustering_index()
}

/// Exponential decay rate fitted to a density series.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    /// `ε̂ = −slope` of `log density` against time.
    pub rate: f64,
    pub stderr: f64,
    pub points: usize,
}

fn window_series(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>), EstimatorError> {
    let mut t = Vec::new();
    let mut y = Vec::new();
    for (&ti, &vi) in times.iter().zip(values) {
        if ti >= window.0 && ti <= window.1 {
            if !(vi > 0.0) {
                return Err(EstimatorError::NonPositiveDensity { time: ti, value: vi });
            }
            t.push(ti);
            y.push(vi.ln());
        }
    }
    if t.len() < 2 {
        return Err(EstimatorError::EmptyFitWindow);
    }
    Ok((t, y))
}

/// Least-squares slope of `log density` over `window = (t_start, t_end)`,
/// with the residual standard error.
pub fn decay_rate_fit(times: &[f64], densities: &[f64], window: (f64, f64)) -> Result<DecayFit, EstimatorError> {
    let (t, y) = window_series(times, densities, window)?;
    let fit = linear_fit(&t, &y).ok_or(EstimatorError::EmptyFitWindow)?;
    Ok(DecayFit { rate: -fit.slope, stderr: fit.slope_stderr, points: t.len() })
}

/// Decay rate of the replica-mean density series, with a delete-one
/// jackknife standard error over replicas.
pub fn decay_rate_ensemble(times: &[f64], replicas: &[Vec<f64>], window: (f64, f64)) -> Result<DecayFit, EstimatorError> {
    let r = replicas.len();
    if r == 0 {
        return Err(EstimatorError::NoSnapshots);
    }
    let sums: Vec<f64> = (0..times.len()).map(|k| replicas.iter().map(|s| s[k]).sum()).collect();
    let mean: Vec<f64> = sums.iter().map(|s| s / r as f64).collect();
    let full = decay_rate_fit(times, &mean, window)?;
    if r < 2 {
        return Ok(DecayFit { stderr: 0.0, ..full });
    }
    let mut leave_out = Vec::with_capacity(r);
    for s in replicas {
        let series: Vec<f64> = sums.iter().zip(s).map(|(tot, v)| (tot - v) / (r - 1) as f64).collect();
        leave_out.push(decay_rate_fit(times, &series, window)?.rate);
    }
    let m = leave_out.iter().sum::<f64>() / r as f64;
    let var = leave_out.iter().map(|v| (v - m).powi(2)).sum::<f64>() * (r - 1) as f64 / r as f64;
    Ok(DecayFit { rate: full.rate, stderr: var.sqrt(), points: full.points })
}

/// Writes `t, r_lo, r_hi, k2_hat, stderr, n_replicas` rows.
pub fn write_pair_csv<W: Write>(out: &mut W, estimates: &[CorrelationEstimate]) -> Result<(), EstimatorError> {
    writeln!(out, "t,r_lo,r_hi,k2_hat,stderr,n_replicas")?;
    for e in estimates {
        for b in &e.bins {
            writeln!(out, "{},{},{},{},{},{}", fmt17(e.time), fmt17(b.r_lo), fmt17(b.r_hi), fmt17(b.k2), fmt17(b.stderr), e.replicas)?;
        }
    }
    Ok(())
}

/// Writes `t, V, n, M_n, stderr, verdict` rows.
pub fn write_moment_csv<W: Write>(out: &mut W, reports: &[(f64, MomentReport)]) -> Result<(), EstimatorError> {
    writeln!(out, "t,V,n,M_n,stderr,verdict")?;
    for (t, r) in reports {
        let verdict = if r.sub_poissonian { "sub_poissonian" } else { "not_sub_poissonian" };
        for (k, (m, se)) in r.moments.iter().zip(&r.stderr).enumerate() {
            writeln!(out, "{},{},{},{},{},{}", fmt17(*t), fmt17(r.volume), k + 1, fmt17(*m), fmt17(*se), verdict)?;
        }
    }
    Ok(())
}
