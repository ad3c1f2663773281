//! Second-order truncation of the correlation-function hierarchy for
//! translation-invariant states in one dimension.
//!
//! The state is the density `k1` and the pair correlation `k2(u)` on a
//! periodic displacement grid. With even kernels the evolution reads
//!
//! ```text
//! dk1/dt    = (⟨a⁺⟩ − m)·k1 − ∫ a⁻(u) k2(u) du
//! dk2/dt(u) = −2(m + a⁻(u))·k2(u) + 2a⁺(u)·k1 + 2(a⁺ ⋆ k2)(u)
//!             − 2 ∫ a⁻(v) k3(u, v) dv
//! ```
//!
//! where `k3(u, v)` is supplied by a [`ClosureRule`] from `k1`, `k2(u)`,
//! `k2(v)` and `k2(u − v)`. Convolutions run through FFTs on the periodic
//! grid; all integrals are rectangle sums, which is the trapezoid rule on a
//! periodic grid. Kernel masses are taken on the grid as well, so the
//! discrete system keeps the exact stationary solutions of the continuous
//! one.
//!
//! Grid arrays are stored in FFT order: index `j < N/2` holds displacement
//! `j·h`, index `j ≥ N/2` holds `(j − N)·h`.

use crate::dynamics::Model;
use crate::format::fmt17;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

pub const DEFAULT_KIRKWOOD_FLOOR: f64 = 1e-8;
/// Largest clipped negative mass per step, relative to `‖k2‖₁`.
pub const CLIP_ABORT_FRACTION: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("the grid solver supports d = 1 only (got d = {0})")]
    UnsupportedDimension(usize),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid spacing {spacing} does not resolve kernel length {length} (need h ≤ length/10)")]
    GridTooCoarse { spacing: f64, length: f64 },
    #[error("density {k1} fell below the Kirkwood floor {floor}")]
    ClosureFloor { k1: f64, floor: f64 },
    #[error("time step {dt} exceeds the stability bound {bound}")]
    StepTooLarge { dt: f64, bound: f64 },
    #[error("blow-up at t = {time}: k1 = {k1}")]
    BlowUp { time: f64, k1: f64 },
    #[error("clipped negative mass {clipped} at t = {time} exceeds the tolerance {allowed}")]
    ClipExceeded { time: f64, clipped: f64, allowed: f64 },
    #[error("state does not match the grid")]
    StateMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Third-order closure.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClosureRule {
    /// Zero third cumulant:
    /// `k3 = k1·k2(u) + k1·k2(v) + k1·k2(u−v) − 2k1³`.
    Poisson,
    /// Kirkwood superposition `k3 = k2(u)·k2(v)·k2(u−v)/k1³`; requires
    /// `k1 ≥ floor`.
    Kirkwood { floor: f64 },
}

impl ClosureRule {
    pub fn kirkwood() -> Self {
        ClosureRule::Kirkwood { floor: DEFAULT_KIRKWOOD_FLOOR }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ClosureRule::Poisson => "poisson",
            ClosureRule::Kirkwood { .. } => "kirkwood",
        }
    }
}

/// Closed third-order correlation from `k1` and the three pair values
/// `k2(u)`, `k2(v)`, `k2(u − v)`.
pub fn close_k3(closure: ClosureRule, k1: f64, k2_u: f64, k2_v: f64, k2_uv: f64) -> Result<f64, HierarchyError> {
    match closure {
        ClosureRule::Poisson => Ok(k1 * (k2_u + k2_v + k2_uv) - 2.0 * k1 * k1 * k1),
        ClosureRule::Kirkwood { floor } => {
            if !(k1 >= floor) {
                return Err(HierarchyError::ClosureFloor { k1, floor });
            }
            Ok(k2_u * k2_v * k2_uv / (k1 * k1 * k1))
        }
    }
}

/// Periodic displacement grid over `[−L/2, L/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub side: f64,
}

impl Grid {
    pub fn new(n: usize, side: f64) -> Result<Self, HierarchyError> {
        if n < 4 || n % 2 != 0 {
            return Err(HierarchyError::InvalidGrid(format!("N = {n} must be even and at least 4")));
        }
        if !(side > 0.0 && side.is_finite()) {
            return Err(HierarchyError::InvalidGrid(format!("L = {side}")));
        }
        Ok(Grid { n, side })
    }

    pub fn spacing(&self) -> f64 {
        self.side / self.n as f64
    }

    /// Displacement represented by FFT-order index `j`.
    pub fn displacement(&self, j: usize) -> f64 {
        let h = self.spacing();
        if j < self.n / 2 {
            j as f64 * h
        } else {
            (j as f64 - self.n as f64) * h
        }
    }

    /// Index of `−u` for the point at index `j`.
    pub fn mirror(&self, j: usize) -> usize {
        (self.n - j) % self.n
    }

    /// Index of `u_i − u_j` (periodic).
    pub fn difference(&self, i: usize, j: usize) -> usize {
        (i + self.n - j) % self.n
    }
}

/// `(k1, k2)` at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyState {
    pub time: f64,
    pub k1: f64,
    /// `k2` in FFT order.
    pub k2: Vec<f64>,
}

impl HierarchyState {
    /// Uncorrelated state with density `k1`: `k2 ≡ k1²`.
    pub fn poisson(grid: &Grid, k1: f64) -> Self {
        HierarchyState { time: 0.0, k1, k2: vec![k1 * k1; grid.n] }
    }

    /// Constant pair correlation `k2 ≡ k2`.
    pub fn flat(grid: &Grid, k1: f64, k2: f64) -> Self {
        HierarchyState { time: 0.0, k1, k2: vec![k2; grid.n] }
    }

    /// Largest `|k2(u) − k2(−u)|`.
    pub fn asymmetry(&self, grid: &Grid) -> f64 {
        (0..grid.n).map(|j| (self.k2[j] - self.k2[grid.mirror(j)]).abs()).fold(0.0, f64::max)
    }
}

/// Precomputed kernel samples and FFT plans for one model on one grid.
pub struct HierarchySolver {
    model: Model,
    grid: Grid,
    a_plus: Vec<f64>,
    a_minus: Vec<f64>,
    mass_plus: f64,
    mass_minus: f64,
    plus_hat: Vec<Complex<f64>>,
    minus_hat: Vec<Complex<f64>>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for HierarchySolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HierarchySolver").field("model", &self.model).field("grid", &self.grid).finish()
    }
}

impl HierarchySolver {
    pub fn new(model: Model, grid: Grid) -> Result<Self, HierarchyError> {
        let dim = model.pair.dim();
        if dim != 1 {
            return Err(HierarchyError::UnsupportedDimension(dim));
        }
        let h = grid.spacing();
        for k in [&model.pair.dispersal, &model.pair.competition] {
            if k.is_zero() {
                continue;
            }
            let length = k.family().length_scale();
            if h > length / 10.0 * (1.0 + 1e-12) {
                return Err(HierarchyError::GridTooCoarse { spacing: h, length });
            }
        }
        if !(grid.side > 2.0 * model.pair.max_cutoff()) {
            return Err(HierarchyError::InvalidGrid(format!(
                "L = {} must exceed twice the largest cutoff {}",
                grid.side,
                model.pair.max_cutoff()
            )));
        }
        let sample = |k: &crate::kernels::KernelSpec| -> Vec<f64> {
            (0..grid.n).map(|j| k.value_at_radius(grid.displacement(j).abs())).collect()
        };
        let a_plus = sample(&model.pair.dispersal);
        let a_minus = sample(&model.pair.competition);
        let mass_plus = h * a_plus.iter().sum::<f64>();
        let mass_minus = h * a_minus.iter().sum::<f64>();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(grid.n);
        let ifft = planner.plan_fft_inverse(grid.n);
        let mut solver = HierarchySolver {
            model,
            grid,
            a_plus,
            a_minus,
            mass_plus,
            mass_minus,
            plus_hat: Vec::new(),
            minus_hat: Vec::new(),
            fft,
            ifft,
        };
        solver.plus_hat = solver.forward(&solver.a_plus);
        solver.minus_hat = solver.forward(&solver.a_minus);
        Ok(solver)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// `h·Σ a⁺` on the grid.
    pub fn grid_mass_plus(&self) -> f64 {
        self.mass_plus
    }

    pub fn grid_mass_minus(&self) -> f64 {
        self.mass_minus
    }

    pub fn dispersal_on_grid(&self) -> &[f64] {
        &self.a_plus
    }

    pub fn competition_on_grid(&self) -> &[f64] {
        &self.a_minus
    }

    fn forward(&self, f: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = f.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        buf
    }

    /// Periodic convolution `h·Σ_i f(u_i) g(u − u_i)` given `f̂` and `ĝ`.
    fn convolve_hat(&self, f_hat: &[Complex<f64>], g_hat: &[Complex<f64>]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = f_hat.iter().zip(g_hat).map(|(a, b)| a * b).collect();
        self.ifft.process(&mut buf);
        let scale = self.grid.spacing() / self.grid.n as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    fn check(&self, state: &HierarchyState) -> Result<(), HierarchyError> {
        if state.k2.len() != self.grid.n {
            return Err(HierarchyError::StateMismatch);
        }
        Ok(())
    }

    /// `∫ a⁻(u) k2(u) du` on the grid.
    fn competition_integral(&self, k2: &[f64]) -> f64 {
        self.grid.spacing() * self.a_minus.iter().zip(k2).map(|(a, k)| a * k).sum::<f64>()
    }

    pub fn rhs_k1(&self, state: &HierarchyState) -> Result<f64, HierarchyError> {
        self.check(state)?;
        Ok((self.mass_plus - self.model.mortality) * state.k1 - self.competition_integral(&state.k2))
    }

    /// `∫ a⁻(v) k3(u, v) dv` for every grid displacement `u`.
    pub fn closure_integral(&self, state: &HierarchyState, closure: ClosureRule) -> Result<Vec<f64>, HierarchyError> {
        self.check(state)?;
        let k1 = state.k1;
        let k2 = &state.k2;
        match closure {
            ClosureRule::Kirkwood { floor } => {
                if !(k1 >= floor) {
                    return Err(HierarchyError::ClosureFloor { k1, floor });
                }
                let weighted: Vec<f64> = self.a_minus.iter().zip(k2).map(|(a, k)| a * k).collect();
                let conv = self.convolve_hat(&self.forward(&weighted), &self.forward(k2));
                let inv = 1.0 / (k1 * k1 * k1);
                Ok(conv.iter().zip(k2).map(|(c, k)| k * c * inv).collect())
            }
            ClosureRule::Poisson => {
                let m = self.mass_minus;
                let integral = self.competition_integral(k2);
                let conv = self.convolve_hat(&self.minus_hat, &self.forward(k2));
                Ok(k2
                    .iter()
                    .zip(&conv)
                    .map(|(k, c)| k1 * k * m + k1 * integral + k1 * c - 2.0 * k1 * k1 * k1 * m)
                    .collect())
            }
        }
    }

    pub fn rhs_k2(&self, state: &HierarchyState, closure: ClosureRule) -> Result<Vec<f64>, HierarchyError> {
        self.check(state)?;
        let m = self.model.mortality;
        let k1 = state.k1;
        let disp = self.convolve_hat(&self.plus_hat, &self.forward(&state.k2));
        let third = self.closure_integral(state, closure)?;
        Ok((0..self.grid.n)
            .map(|j| {
                -2.0 * (m + self.a_minus[j]) * state.k2[j] + 2.0 * self.a_plus[j] * k1 + 2.0 * disp[j] - 2.0 * third[j]
            })
            .collect())
    }

    /// `0.1/(m + ⟨a⁺⟩ + ‖a⁻‖·k1_max)`.
    pub fn stability_dt(&self, k1_max: f64) -> f64 {
        let rate = self.model.mortality + self.mass_plus + self.model.pair.competition.sup_norm() * k1_max;
        if rate > 0.0 {
            0.1 / rate
        } else {
            f64::INFINITY
        }
    }

    /// Density scale used for the default stability bound: the larger of
    /// the initial density and the mean-field equilibrium.
    pub fn density_scale(&self, k1_0: f64) -> f64 {
        let growth = self.mass_plus - self.model.mortality;
        let eq = if growth > 0.0 && self.mass_minus > 0.0 { growth / self.mass_minus } else { 0.0 };
        k1_0.max(eq)
    }

    fn symmetrize(&self, k2: &mut [f64]) {
        for j in 1..self.grid.n / 2 {
            let m = self.grid.mirror(j);
            let avg = 0.5 * (k2[j] + k2[m]);
            k2[j] = avg;
            k2[m] = avg;
        }
    }

    fn derivative(&self, state: &HierarchyState, closure: ClosureRule) -> Result<(f64, Vec<f64>), HierarchyError> {
        Ok((self.rhs_k1(state)?, self.rhs_k2(state, closure)?))
    }

    /// One classical RK4 step.
    pub fn step(&self, state: &HierarchyState, closure: ClosureRule, dt: f64) -> Result<HierarchyState, HierarchyError> {
        let axpy = |s: &HierarchyState, a: f64, d: &(f64, Vec<f64>)| HierarchyState {
            time: s.time,
            k1: s.k1 + a * d.0,
            k2: s.k2.iter().zip(&d.1).map(|(k, v)| k + a * v).collect(),
        };
        let d1 = self.derivative(state, closure)?;
        let d2 = self.derivative(&axpy(state, 0.5 * dt, &d1), closure)?;
        let d3 = self.derivative(&axpy(state, 0.5 * dt, &d2), closure)?;
        let d4 = self.derivative(&axpy(state, dt, &d3), closure)?;
        let w = dt / 6.0;
        Ok(HierarchyState {
            time: state.time + dt,
            k1: state.k1 + w * (d1.0 + 2.0 * d2.0 + 2.0 * d3.0 + d4.0),
            k2: (0..self.grid.n)
                .map(|j| state.k2[j] + w * (d1.1[j] + 2.0 * d2.1[j] + 2.0 * d3.1[j] + d4.1[j]))
                .collect(),
        })
    }

    /// Integrates from `state0` to `opts.t_end`.
    pub fn integrate(&self, state0: &HierarchyState, closure: ClosureRule, opts: &IntegrateOptions) -> Result<HierarchyRun, HierarchyError> {
        self.check(state0)?;
        let bound = self.stability_dt(self.density_scale(state0.k1));
        if !(opts.dt > 0.0) || opts.dt > bound {
            return Err(HierarchyError::StepTooLarge { dt: opts.dt, bound });
        }
        let steps = (opts.t_end / opts.dt).round() as usize;
        let stride = opts.output_stride.max(1);
        let h = self.grid.spacing();
        let mut state = state0.clone();
        self.symmetrize(&mut state.k2);
        let mut states = vec![state.clone()];
        let mut clipped_total = 0.0;
        let mut max_step_clip: f64 = 0.0;
        for s in 1..=steps {
            let mut next = self.step(&state, closure, opts.dt)?;
            next.time = s as f64 * opts.dt + state0.time;
            self.symmetrize(&mut next.k2);
            let norm: f64 = h * next.k2.iter().map(|v| v.abs()).sum::<f64>();
            let mut clipped = 0.0;
            for v in next.k2.iter_mut() {
                if *v < 0.0 {
                    clipped -= *v * h;
                    *v = 0.0;
                }
            }
            if clipped > 0.0 {
                let allowed = CLIP_ABORT_FRACTION * norm;
                if clipped > allowed {
                    return Err(HierarchyError::ClipExceeded { time: next.time, clipped, allowed });
                }
                clipped_total += clipped;
                max_step_clip = max_step_clip.max(clipped);
            }
            if next.k1 < 0.0 {
                next.k1 = 0.0;
            }
            if !next.k1.is_finite() || next.k1 > opts.k1_bound {
                return Err(HierarchyError::BlowUp { time: next.time, k1: next.k1 });
            }
            state = next;
            if s % stride == 0 || s == steps {
                states.push(state.clone());
            }
        }
        Ok(HierarchyRun { states, steps, clipped_total, max_step_clip })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegrateOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Keep every `output_stride`-th state (the final state is always kept).
    pub output_stride: usize,
    /// Abort once `k1` exceeds this value.
    pub k1_bound: f64,
}

impl IntegrateOptions {
    pub fn new(dt: f64, t_end: f64) -> Self {
        IntegrateOptions { dt, t_end, output_stride: 1, k1_bound: 1e6 }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.output_stride = stride;
        self
    }
}

#[derive(Clone, Debug)]
pub struct HierarchyRun {
    pub states: Vec<HierarchyState>,
    pub steps: usize,
    /// Total negative mass removed by clipping.
    pub clipped_total: f64,
    pub max_step_clip: f64,
}

impl HierarchyRun {
    pub fn final_state(&self) -> &HierarchyState {
        self.states.last().expect("the initial state is always recorded")
    }

    /// Linear interpolation of `k1` at time `t`.
    pub fn k1_at(&self, t: f64) -> f64 {
        let s = &self.states;
        if t <= s[0].time {
            return s[0].k1;
        }
        for w in s.windows(2) {
            if t <= w[1].time {
                let f = (t - w[0].time) / (w[1].time - w[0].time);
                return w[0].k1 + f * (w[1].k1 - w[0].k1);
            }
        }
        s[s.len() - 1].k1
    }
}

/// Writes one state as
///
/// ```text
/// t,<t>
/// k1,<k1>
/// u,k2
/// <u>,<k2(u)>      (ascending u)
/// ```
pub fn write_state_csv<W: Write>(out: &mut W, grid: &Grid, state: &HierarchyState) -> Result<(), HierarchyError> {
    writeln!(out, "t,{}", fmt17(state.time))?;
    writeln!(out, "k1,{}", fmt17(state.k1))?;
    writeln!(out, "u,k2")?;
    let half = grid.n / 2;
    for j in (half..grid.n).chain(0..half) {
        writeln!(out, "{},{}", fmt17(grid.displacement(j)), fmt17(state.k2[j]))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{KernelPair, KernelSpec};

    fn solver(m: f64, plus: KernelSpec, minus: KernelSpec) -> HierarchySolver {
        let model = Model::new(KernelPair::new(plus, minus).unwrap(), m).unwrap();
        HierarchySolver::new(model, Grid::new(1024, 100.0).unwrap()).unwrap()
    }

    fn gauss(c: f64) -> KernelSpec {
        KernelSpec::gaussian(1, c, 1.0).unwrap()
    }

    #[test]
    fn closures_exact_on_poisson() {
        let k1: f64 = 1.7;
        let p = close_k3(ClosureRule::Poisson, k1, k1 * k1, k1 * k1, k1 * k1).unwrap();
        let k = close_k3(ClosureRule::kirkwood(), k1, k1 * k1, k1 * k1, k1 * k1).unwrap();
        assert!((p - k1.powi(3)).abs() < 1e-12);
        assert!((k - k1.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn kirkwood_flat_state() {
        let theta: f64 = 0.5;
        let v = close_k3(ClosureRule::kirkwood(), 1.0 / theta, theta.powi(-2), theta.powi(-2), theta.powi(-2)).unwrap();
        assert!((v - theta.powi(-3)).abs() < 1e-12);
    }

    #[test]
    fn kirkwood_floor_is_enforced() {
        assert!(matches!(
            close_k3(ClosureRule::kirkwood(), 1e-9, 1.0, 1.0, 1.0),
            Err(HierarchyError::ClosureFloor { .. })
        ));
    }

    #[test]
    fn rhs_without_competition_is_linear() {
        let s = solver(0.3, gauss(1.0), KernelSpec::zero(1));
        let st = HierarchyState::poisson(s.grid(), 2.0);
        let r = s.rhs_k1(&st).unwrap();
        assert!((r - (s.grid_mass_plus() - 0.3) * 2.0).abs() < 1e-14);
    }

    #[test]
    fn empty_state_is_stationary() {
        let s = solver(0.3, gauss(1.0), gauss(0.4));
        let st = HierarchyState::flat(s.grid(), 0.0, 0.0);
        assert_eq!(s.rhs_k1(&st).unwrap(), 0.0);
        assert!(s.rhs_k2(&st, ClosureRule::Poisson).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn coarse_grid_rejected() {
        let model = Model::new(KernelPair::new(gauss(1.0), gauss(1.0)).unwrap(), 0.0).unwrap();
        assert!(matches!(
            HierarchySolver::new(model, Grid::new(256, 100.0).unwrap()),
            Err(HierarchyError::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn two_dimensional_models_rejected() {
        let g = KernelSpec::gaussian(2, 1.0, 1.0).unwrap();
        let model = Model::new(KernelPair::new(g.clone(), g).unwrap(), 0.0).unwrap();
        assert!(matches!(
            HierarchySolver::new(model, Grid::new(1024, 100.0).unwrap()),
            Err(HierarchyError::UnsupportedDimension(2))
        ));
    }

    #[test]
    fn pure_death_decays_exponentially() {
        let s = solver(0.2, KernelSpec::zero(1), KernelSpec::zero(1));
        let run = s
            .integrate(&HierarchyState::poisson(s.grid(), 2.0), ClosureRule::Poisson, &IntegrateOptions::new(0.05, 5.0))
            .unwrap();
        assert!((run.final_state().k1 - 2.0 * (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn oversized_step_rejected() {
        let s = solver(0.2, gauss(1.0), gauss(0.5));
        assert!(matches!(
            s.integrate(&HierarchyState::poisson(s.grid(), 2.0), ClosureRule::Poisson, &IntegrateOptions::new(1.0, 5.0)),
            Err(HierarchyError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn state_csv_is_sorted_by_displacement() {
        let g = Grid::new(4, 2.0).unwrap();
        let st = HierarchyState { time: 0.0, k1: 1.0, k2: vec![1.0, 2.0, 3.0, 2.0] };
        let mut buf = Vec::new();
        write_state_csv(&mut buf, &g, &st).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let us: Vec<f64> = text.lines().skip(3).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(us, vec![-1.0, -0.5, 0.0, 0.5]);
    }
}
