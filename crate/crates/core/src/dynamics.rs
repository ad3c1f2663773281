//! Exact event-driven simulation of the birth-and-death generator.
//!
//! Direct-method Gillespie: the total birth rate is `⟨a⁺⟩·|γ|` (the birth
//! density integrated over the box), the total death rate is the sum of
//! cached per-point rates `w(x) = m + Σ_{y≠x} a⁻(x − y)`. Births pick a
//! uniform parent and a displacement drawn from `a⁺/⟨a⁺⟩`; deaths pick a
//! point with probability `w(x)/D` through a Fenwick prefix-sum tree.
//!
//! Every event touches only the rates of points within the competition
//! cutoff of the affected point. The running total `D` uses compensated
//! summation, and every `recompute_period` events all rates are rebuilt
//! from scratch; the relative drift observed at these audits is recorded.

use crate::kernels::{KernelError, KernelPair};
use crate::pointset::{PointConfig, PointId, PointsetError};
use crate::rng::{stream, SimRng};
use crate::stats::CompensatedSum;
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use thiserror::Error;

pub const DEFAULT_RECOMPUTE_PERIOD: u64 = 100_000;
pub const DEFAULT_POPULATION_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("absorbing state: total event rate is zero")]
    Absorbing,
    #[error("stale event: point {0:?} is not in the configuration")]
    StaleEvent(PointId),
    #[error("population {population} exceeded the cap {cap} at t = {time}")]
    PopulationCap {
        cap: usize,
        population: usize,
        time: f64,
        partial: Box<Trajectory>,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Pointset(#[from] PointsetError),
}

/// Kernel pair plus intrinsic mortality `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub pair: KernelPair,
    pub mortality: f64,
}

impl Model {
    pub fn new(pair: KernelPair, mortality: f64) -> Result<Self, DynamicsError> {
        if !(mortality >= 0.0 && mortality.is_finite()) {
            return Err(DynamicsError::InvalidModel(format!("mortality m = {mortality}")));
        }
        Ok(Model { pair, mortality })
    }

    /// Per-point birth rate `∫a⁺`, of the truncated kernel.
    pub fn birth_rate_per_point(&self) -> f64 {
        self.pair.dispersal.truncated_mass()
    }
}

/// Binary indexed tree over per-point rates.
#[derive(Clone, Debug, Default)]
struct Fenwick {
    tree: Vec<f64>,
    values: Vec<f64>,
}

impl Fenwick {
    fn rebuild(&mut self) {
        let n = self.values.len();
        self.tree.clear();
        self.tree.resize(n + 1, 0.0);
        for i in 1..=n {
            self.tree[i] += self.values[i - 1];
            let parent = i + (i & i.wrapping_neg());
            if parent <= n {
                let v = self.tree[i];
                self.tree[parent] += v;
            }
        }
    }

    fn push(&mut self, value: f64) {
        if self.tree.is_empty() {
            self.tree.push(0.0);
        }
        self.values.push(value);
        let k = self.values.len();
        let low = k & k.wrapping_neg();
        let mut node = value;
        let mut step = 1;
        while step < low {
            node += self.tree[k - step];
            step <<= 1;
        }
        self.tree.push(node);
    }

    fn add(&mut self, i: usize, delta: f64) {
        self.values[i] += delta;
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
    }

    fn set(&mut self, i: usize, value: f64) {
        let delta = value - self.values[i];
        if delta != 0.0 {
            self.add(i, delta);
        }
        self.values[i] = value;
    }

    /// Moves the last value into slot `i` and drops the last slot.
    fn swap_remove(&mut self, i: usize) {
        let last = self.values.len() - 1;
        if i != last {
            let v = self.values[last];
            self.set(i, v);
        }
        self.set(last, 0.0);
        self.values.pop();
        self.tree.pop();
    }

    fn total(&self) -> f64 {
        let mut k = self.values.len();
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k &= k - 1;
        }
        s
    }

    /// Smallest index whose inclusive prefix sum exceeds `target`.
    fn find(&self, target: f64) -> usize {
        let n = self.values.len();
        let mut pos = 0;
        let mut rem = target;
        let mut mask = n.next_power_of_two();
        while mask > 0 {
            let next = pos + mask;
            if next <= n && self.tree[next] <= rem {
                rem -= self.tree[next];
                pos = next;
            }
            mask >>= 1;
        }
        let mut idx = pos.min(n - 1);
        // Rounding can land on a zero-rate slot; step back to a live one.
        while self.values[idx] <= 0.0 && idx > 0 {
            idx -= 1;
        }
        idx
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventKind {
    Birth { parent: PointId, position: Vec<f64> },
    Death { id: PointId },
}

/// One transition together with its exponential waiting time.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub wait: f64,
}

/// Result of a rate-cache audit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Audit {
    /// Largest relative deviation of a cached `w(x)` from its recomputation.
    pub point_drift: f64,
    /// Relative deviation of the running total `D`.
    pub total_drift: f64,
}

impl Audit {
    pub fn max_drift(&self) -> f64 {
        self.point_drift.max(self.total_drift)
    }
}

/// Configuration plus cached rates, advanced one event at a time.
#[derive(Clone, Debug)]
pub struct SimState {
    model: Model,
    config: PointConfig,
    rates: Fenwick,
    death_total: CompensatedSum,
    time: f64,
    events: u64,
    recompute_period: u64,
    since_audit: u64,
    max_drift: f64,
    audits: u64,
}

impl SimState {
    pub fn new(model: Model, config: PointConfig) -> Result<Self, DynamicsError> {
        let torus = *config.torus();
        if torus.dim() != model.pair.dim() {
            return Err(DynamicsError::InvalidModel(format!(
                "kernels are {}-dimensional but the torus is {}-dimensional",
                model.pair.dim(),
                torus.dim()
            )));
        }
        let reach = model.pair.max_cutoff();
        if !(torus.side() > 2.0 * reach) {
            return Err(DynamicsError::InvalidModel(format!(
                "side length {} must exceed twice the largest kernel cutoff {}",
                torus.side(),
                reach
            )));
        }
        let expected = PointConfig::new(torus, reach);
        let config = if expected.cells_per_axis() == config.cells_per_axis() {
            config
        } else {
            config.reindexed(reach)
        };
        let mut state = SimState {
            model,
            config,
            rates: Fenwick::default(),
            death_total: CompensatedSum::default(),
            time: 0.0,
            events: 0,
            recompute_period: DEFAULT_RECOMPUTE_PERIOD,
            since_audit: 0,
            max_drift: 0.0,
            audits: 0,
        };
        state.reset_rates();
        Ok(state)
    }

    pub fn with_recompute_period(mut self, period: u64) -> Self {
        self.recompute_period = period.max(1);
        self
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &PointConfig {
        &self.config
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn population(&self) -> usize {
        self.config.len()
    }

    /// Largest drift seen at any audit so far.
    pub fn max_audit_drift(&self) -> f64 {
        self.max_drift
    }

    pub fn audits(&self) -> u64 {
        self.audits
    }

    /// Cached death rate of a point.
    pub fn death_rate(&self, id: PointId) -> Option<f64> {
        self.config.index_of(id).map(|i| self.rates.values[i])
    }

    /// Cached death rates in dense order.
    pub fn death_rates(&self) -> &[f64] {
        &self.rates.values
    }

    /// `(B, D)`: total birth and death rates.
    pub fn total_rates(&self) -> (f64, f64) {
        let b = self.model.birth_rate_per_point() * self.config.len() as f64;
        (b, self.death_total.value().max(0.0))
    }

    fn fresh_rate(&self, i: usize) -> f64 {
        let minus = &self.model.pair.competition;
        let mut w = CompensatedSum::new(self.model.mortality);
        if !minus.is_zero() {
            self.config.for_each_within(self.config.position(i), minus.cutoff(), |j, r2| {
                if j != i {
                    w.add(minus.value_at_sq(r2));
                }
            });
        }
        w.value()
    }

    /// Death rates recomputed from scratch, in dense order.
    pub fn recompute_rates(&self) -> Vec<f64> {
        (0..self.config.len()).map(|i| self.fresh_rate(i)).collect()
    }

    fn reset_rates(&mut self) {
        let fresh = self.recompute_rates();
        let mut total = CompensatedSum::default();
        fresh.iter().for_each(|&w| total.add(w));
        self.rates.values = fresh;
        self.rates.rebuild();
        self.death_total = total;
    }

    /// Compares the caches with a full recomputation, records the drift and
    /// replaces the caches by the recomputed values.
    pub fn audit(&mut self) -> Audit {
        let fresh = self.recompute_rates();
        let scale = self.model.mortality + self.model.pair.competition.sup_norm();
        let floor = if scale > 0.0 { scale } else { 1.0 };
        let mut point_drift: f64 = 0.0;
        let mut total = CompensatedSum::default();
        for (cached, &f) in self.rates.values.iter().zip(&fresh) {
            point_drift = point_drift.max((cached - f).abs() / f.max(floor));
            total.add(f);
        }
        let total_fresh = total.value();
        let total_drift = (self.death_total.value() - total_fresh).abs() / total_fresh.max(floor);
        let audit = Audit { point_drift, total_drift };
        self.max_drift = self.max_drift.max(audit.max_drift());
        self.audits += 1;
        self.since_audit = 0;
        self.rates.values = fresh;
        self.rates.rebuild();
        self.death_total = total;
        audit
    }

    /// Draws the next event without applying it.
    pub fn next_event(&self, rng: &mut SimRng) -> Result<Event, DynamicsError> {
        let (b, d) = self.total_rates();
        let total = b + d;
        if !(total > 0.0) {
            return Err(DynamicsError::Absorbing);
        }
        let e: f64 = rng.sample(Exp1);
        let wait = e / total;
        let u = rng.gen::<f64>() * total;
        if u < b {
            let parent_idx = rng.gen_range(0..self.config.len());
            let mut position = self.model.pair.dispersal.sample_displacement(rng)?;
            for (p, x) in position.iter_mut().zip(self.config.position(parent_idx)) {
                *p += x;
            }
            self.config.torus().wrap(&mut position);
            Ok(Event { kind: EventKind::Birth { parent: self.config.id_at(parent_idx), position }, wait })
        } else {
            let target = rng.gen::<f64>() * self.rates.total();
            let idx = self.rates.find(target);
            Ok(Event { kind: EventKind::Death { id: self.config.id_at(idx) }, wait })
        }
    }

    /// Applies an event drawn from this state and advances the clock.
    pub fn apply_event(&mut self, event: &Event) -> Result<(), DynamicsError> {
        match &event.kind {
            EventKind::Birth { parent, position } => {
                if !self.config.contains(*parent) {
                    return Err(DynamicsError::StaleEvent(*parent));
                }
                self.insert_point(position)?;
            }
            EventKind::Death { id } => {
                self.remove_point(*id)?;
            }
        }
        self.time += event.wait;
        self.events += 1;
        self.since_audit += 1;
        if self.since_audit >= self.recompute_period {
            self.audit();
        }
        Ok(())
    }

    /// Adds a point and updates the rates of its competitors.
    pub fn insert_point(&mut self, position: &[f64]) -> Result<PointId, DynamicsError> {
        let id = self.config.insert(position)?;
        let idx = self.config.len() - 1;
        let m = self.model.mortality;
        let minus = &self.model.pair.competition;
        let mut own = CompensatedSum::new(m);
        if !minus.is_zero() {
            let mut touched: Vec<(usize, f64)> = Vec::new();
            self.config.for_each_within(self.config.position(idx), minus.cutoff(), |j, r2| {
                if j != idx {
                    let a = minus.value_at_sq(r2);
                    if a > 0.0 {
                        touched.push((j, a));
                    }
                }
            });
            for (j, a) in touched {
                own.add(a);
                self.rates.add(j, a);
                self.death_total.add(a);
            }
        }
        let w = own.value();
        self.rates.push(w);
        self.death_total.add(w);
        Ok(id)
    }

    /// Removes a point and updates the rates of its competitors.
    pub fn remove_point(&mut self, id: PointId) -> Result<Vec<f64>, DynamicsError> {
        let idx = self.config.index_of(id).ok_or(DynamicsError::StaleEvent(id))?;
        let m = self.model.mortality;
        let minus = &self.model.pair.competition;
        if !minus.is_zero() {
            let mut touched: Vec<(usize, f64)> = Vec::new();
            self.config.for_each_within(self.config.position(idx), minus.cutoff(), |j, r2| {
                if j != idx {
                    let a = minus.value_at_sq(r2);
                    if a > 0.0 {
                        touched.push((j, a));
                    }
                }
            });
            for (j, a) in touched {
                let old = self.rates.values[j];
                let new = (old - a).max(m);
                self.rates.set(j, new);
                self.death_total.add(new - old);
            }
        }
        self.death_total.add(-self.rates.values[idx]);
        let removed = self.config.remove(id).expect("index checked above");
        self.rates.swap_remove(removed.index);
        if self.config.is_empty() {
            self.death_total = CompensatedSum::default();
        }
        Ok(removed.position)
    }
}

/// State observed at one point of the observation grid.
#[derive(Clone, Debug)]
pub struct Observation {
    pub time: f64,
    pub n_points: usize,
    pub density: f64,
    pub snapshot: Option<PointConfig>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub observations: Vec<Observation>,
    pub events: u64,
    /// The run reached the empty (absorbing) configuration.
    pub absorbed: bool,
    pub final_time: f64,
    pub max_audit_drift: f64,
    pub audits: u64,
}

#[derive(Clone, Debug)]
pub struct SimulateOptions {
    pub t_end: f64,
    /// Nondecreasing observation times in `[0, t_end]`.
    pub observation_times: Vec<f64>,
    pub population_cap: usize,
    pub recompute_period: u64,
    pub keep_snapshots: bool,
}

impl SimulateOptions {
    pub fn new(t_end: f64, observation_times: Vec<f64>) -> Self {
        SimulateOptions {
            t_end,
            observation_times,
            population_cap: DEFAULT_POPULATION_CAP,
            recompute_period: DEFAULT_RECOMPUTE_PERIOD,
            keep_snapshots: false,
        }
    }

    pub fn with_snapshots(mut self, keep: bool) -> Self {
        self.keep_snapshots = keep;
        self
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.population_cap = cap;
        self
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(DynamicsError::InvalidModel(format!("t_end = {}", self.t_end)));
        }
        let ordered = self.observation_times.windows(2).all(|w| w[0] <= w[1]);
        let inside = self.observation_times.iter().all(|&t| (0.0..=self.t_end).contains(&t));
        if !ordered || !inside {
            return Err(DynamicsError::InvalidModel("observation times must be sorted within [0, t_end]".into()));
        }
        Ok(())
    }
}

/// `n + 1` equally spaced times on `[0, t_end]`.
pub fn uniform_grid(t_end: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| t_end * i as f64 / n as f64).collect()
}

fn observe(state: &SimState, time: f64, keep: bool) -> Observation {
    let cfg = state.config();
    Observation {
        time,
        n_points: cfg.len(),
        density: cfg.density(),
        snapshot: keep.then(|| cfg.clone()),
    }
}

/// Runs one trajectory from `initial` until `t_end` or absorption.
pub fn simulate(initial: PointConfig, model: &Model, opts: &SimulateOptions, rng: &mut SimRng) -> Result<Trajectory, DynamicsError> {
    opts.validate()?;
    let mut state = SimState::new(model.clone(), initial)?.with_recompute_period(opts.recompute_period);
    let mut observations = Vec::with_capacity(opts.observation_times.len());
    let mut pending = opts.observation_times.iter().copied().peekable();
    let mut absorbed = false;

    loop {
        let event = match state.next_event(rng) {
            Ok(e) => Some(e),
            Err(DynamicsError::Absorbing) => None,
            Err(e) => return Err(e),
        };
        let t_next = event.as_ref().map_or(f64::INFINITY, |e| state.time() + e.wait);
        while let Some(&t_obs) = pending.peek() {
            if t_obs < t_next {
                observations.push(observe(&state, t_obs, opts.keep_snapshots));
                pending.next();
            } else {
                break;
            }
        }
        let Some(event) = event else {
            absorbed = true;
            break;
        };
        if t_next > opts.t_end {
            break;
        }
        state.apply_event(&event)?;
        if state.population() > opts.population_cap {
            let partial = Trajectory {
                observations,
                events: state.events(),
                absorbed: false,
                final_time: state.time(),
                max_audit_drift: state.max_audit_drift(),
                audits: state.audits(),
            };
            return Err(DynamicsError::PopulationCap {
                cap: opts.population_cap,
                population: state.population(),
                time: state.time(),
                partial: Box::new(partial),
            });
        }
    }
    let final_time = if absorbed { state.time() } else { opts.t_end };
    Ok(Trajectory {
        observations,
        events: state.events(),
        absorbed,
        final_time,
        max_audit_drift: state.max_audit_drift(),
        audits: state.audits(),
    })
}

/// Runs `count` independent jobs in parallel; job `i` receives the
/// substream `(master, label, i)`. Results come back in replica order, so
/// the output does not depend on scheduling.
pub fn replicate<T, F>(count: usize, master: u64, label: &str, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut SimRng) -> T + Sync + Send,
{
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(master, label, i as u64);
            job(i, &mut rng)
        })
        .collect()
}
