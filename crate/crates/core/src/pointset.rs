//! Finite point configurations on a periodic box.
//!
//! [`PointConfig`] keeps points in a dense array (for O(1) uniform
//! selection) with stable [`PointId`] handles that are never reused, and a
//! uniform cell list whose cells are at least as wide as the interaction
//! range, so that every neighbourhood query touches only the surrounding
//! ring of cells.

use crate::format::fmt17;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rustc_hash::FxHashMap;
use std::io::{BufRead, Write};
use thiserror::Error;

/// Upper bound on the number of cells; beyond it cells are widened.
const MAX_CELLS: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum PointsetError {
    #[error("invalid torus: {0}")]
    InvalidTorus(String),
    #[error("query radius {radius} exceeds half the side length {half}")]
    RadiusTooLarge { radius: f64, half: f64 },
    #[error("dimension mismatch: torus is {expected}-dimensional, got a {got}-vector")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("window does not fit inside the fundamental domain")]
    InvalidWindow,
    #[error("malformed snapshot: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The box `[0, L)ᵈ` with periodic identification, `d ∈ {1, 2, 3}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Torus {
    dim: usize,
    side: f64,
}

impl Torus {
    pub fn new(dim: usize, side: f64) -> Result<Self, PointsetError> {
        if !(1..=3).contains(&dim) {
            return Err(PointsetError::InvalidTorus(format!("dimension {dim} not in 1..=3")));
        }
        if !(side > 0.0 && side.is_finite()) {
            return Err(PointsetError::InvalidTorus(format!("side length {side}")));
        }
        Ok(Torus { dim, side })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    /// Maps every coordinate into `[0, L)`.
    #[inline]
    pub fn wrap(&self, x: &mut [f64]) {
        for v in x.iter_mut() {
            *v = self.wrap_coord(*v);
        }
    }

    #[inline]
    fn wrap_coord(&self, v: f64) -> f64 {
        let mut w = v.rem_euclid(self.side);
        // rem_euclid can round up to exactly L for tiny negative inputs
        if w >= self.side {
            w = 0.0;
        }
        w
    }

    /// Minimum-image component of `a − b` along one axis.
    #[inline]
    pub fn delta(&self, a: f64, b: f64) -> f64 {
        let d = a - b;
        d - self.side * (d / self.side).round()
    }

    /// Squared minimum-image distance.
    #[inline]
    pub fn dist2(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| {
            let d = self.delta(*x, *y);
            d * d
        }).sum()
    }

    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        self.dist2(a, b).sqrt()
    }
}

/// Stable handle of a point; never reused within a configuration's life.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PointId(pub u64);

/// A point removed from a configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Removed {
    /// Dense index the point occupied. The former last point now lives here.
    pub index: usize,
    pub position: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PointConfig {
    torus: Torus,
    coords: Vec<f64>,
    ids: Vec<PointId>,
    cell_of: Vec<usize>,
    index: FxHashMap<PointId, usize>,
    next_id: u64,
    cells_per_axis: usize,
    cell_side: f64,
    cells: Vec<Vec<usize>>,
}

impl PointConfig {
    /// An empty configuration whose cells are at least `interaction_range`
    /// wide. A range of zero gives a single cell.
    pub fn new(torus: Torus, interaction_range: f64) -> Self {
        let per_axis_cap = (MAX_CELLS as f64).powf(1.0 / torus.dim as f64).floor() as usize;
        let cells_per_axis = if interaction_range > 0.0 {
            ((torus.side / interaction_range).floor() as usize).clamp(1, per_axis_cap.max(1))
        } else {
            1
        };
        let n_cells = cells_per_axis.pow(torus.dim as u32);
        PointConfig {
            torus,
            coords: Vec::new(),
            ids: Vec::new(),
            cell_of: Vec::new(),
            index: FxHashMap::default(),
            next_id: 0,
            cells_per_axis,
            cell_side: torus.side / cells_per_axis as f64,
            cells: vec![Vec::new(); n_cells],
        }
    }

    /// Builds a configuration from positions (wrapped into the box).
    pub fn from_points<I, P>(torus: Torus, interaction_range: f64, points: I) -> Result<Self, PointsetError>
    where
        I: IntoIterator<Item = P>,
        P: AsRef<[f64]>,
    {
        let mut cfg = PointConfig::new(torus, interaction_range);
        for p in points {
            cfg.insert(p.as_ref())?;
        }
        Ok(cfg)
    }

    /// The same points re-indexed with cells at least `interaction_range`
    /// wide. Handles are reassigned in dense order.
    pub fn reindexed(&self, interaction_range: f64) -> Self {
        let mut cfg = PointConfig::new(self.torus, interaction_range);
        for i in 0..self.len() {
            cfg.insert(self.position(i)).expect("dimension already checked");
        }
        cfg
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn dim(&self) -> usize {
        self.torus.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn density(&self) -> f64 {
        self.len() as f64 / self.torus.volume()
    }

    pub fn cell_side(&self) -> f64 {
        self.cell_side
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells_per_axis
    }

    /// Position of the point at dense index `i`.
    #[inline]
    pub fn position(&self, i: usize) -> &[f64] {
        let d = self.torus.dim;
        &self.coords[i * d..(i + 1) * d]
    }

    #[inline]
    pub fn id_at(&self, i: usize) -> PointId {
        self.ids[i]
    }

    pub fn index_of(&self, id: PointId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn get(&self, id: PointId) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.position(i))
    }

    pub fn contains(&self, id: PointId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn ids(&self) -> &[PointId] {
        &self.ids
    }

    /// Flat coordinate array, `dim` values per point in dense order.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn positions(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.torus.dim)
    }

    /// Resident dense indices of every cell, for index-state comparisons.
    pub fn cell_contents(&self) -> &[Vec<usize>] {
        &self.cells
    }

    fn cell_coord(&self, v: f64) -> usize {
        ((v / self.cell_side) as usize).min(self.cells_per_axis - 1)
    }

    fn cell_id(&self, x: &[f64]) -> usize {
        x.iter().rev().fold(0, |acc, &v| acc * self.cells_per_axis + self.cell_coord(v))
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), PointsetError> {
        if x.len() != self.torus.dim {
            return Err(PointsetError::DimensionMismatch { expected: self.torus.dim, got: x.len() });
        }
        Ok(())
    }

    /// Adds a point at `pos` (wrapped into the box) and returns its handle.
    pub fn insert(&mut self, pos: &[f64]) -> Result<PointId, PointsetError> {
        self.check_dim(pos)?;
        let start = self.coords.len();
        self.coords.extend(pos.iter().map(|&v| self.torus.wrap_coord(v)));
        let cell = self.cell_id(&self.coords[start..]);
        let idx = self.ids.len();
        let id = PointId(self.next_id);
        self.next_id += 1;
        self.ids.push(id);
        self.cell_of.push(cell);
        self.cells[cell].push(idx);
        self.index.insert(id, idx);
        Ok(id)
    }

    /// Removes a point. The last point in dense order moves into the hole.
    pub fn remove(&mut self, id: PointId) -> Option<Removed> {
        let idx = self.index.remove(&id)?;
        let d = self.torus.dim;
        let last = self.ids.len() - 1;
        let position = self.coords[idx * d..(idx + 1) * d].to_vec();

        let cell = &mut self.cells[self.cell_of[idx]];
        let slot = cell.iter().position(|&i| i == idx).expect("cell membership out of sync");
        cell.swap_remove(slot);

        if idx != last {
            let moved_cell = &mut self.cells[self.cell_of[last]];
            let slot = moved_cell.iter().position(|&i| i == last).expect("cell membership out of sync");
            moved_cell[slot] = idx;
            self.index.insert(self.ids[last], idx);
            for k in 0..d {
                self.coords[idx * d + k] = self.coords[last * d + k];
            }
        }
        self.ids.swap_remove(idx);
        self.cell_of.swap_remove(idx);
        self.coords.truncate(last * d);
        Some(Removed { index: idx, position })
    }

    /// Visits every point within minimum-image distance `radius` of `x`,
    /// passing its dense index and squared distance. Callers must ensure
    /// `radius ≤ L/2`.
    pub fn for_each_within<F: FnMut(usize, f64)>(&self, x: &[f64], radius: f64, mut f: F) {
        if self.ids.is_empty() {
            return;
        }
        let d = self.torus.dim;
        let n = self.cells_per_axis;
        let r2 = radius * radius;
        let ring = (radius / self.cell_side).ceil() as usize;
        let full = 2 * ring + 1 >= n;

        // Per-axis list of cell coordinates to scan.
        let mut axes: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (k, axis) in axes.iter_mut().enumerate().take(d) {
            if full {
                axis.extend(0..n);
            } else {
                let c = self.cell_coord(self.torus.wrap_coord(x[k])) as isize;
                let n_i = n as isize;
                axis.extend((-(ring as isize)..=ring as isize).map(|o| (c + o).rem_euclid(n_i) as usize));
            }
        }
        let mut odo = [0usize; 3];
        loop {
            let mut cell = 0;
            for k in (0..d).rev() {
                cell = cell * n + axes[k][odo[k]];
            }
            for &i in &self.cells[cell] {
                let dist2 = self.torus.dist2(x, self.position(i));
                if dist2 <= r2 {
                    f(i, dist2);
                }
            }
            let mut k = 0;
            loop {
                if k == d {
                    return;
                }
                odo[k] += 1;
                if odo[k] < axes[k].len() {
                    break;
                }
                odo[k] = 0;
                k += 1;
            }
        }
    }

    /// Handles of all points within distance `radius` of `x`, excluding
    /// `exclude` (typically the handle of the point sitting at `x`).
    pub fn neighbors_within(&self, x: &[f64], radius: f64, exclude: Option<PointId>) -> Result<Vec<PointId>, PointsetError> {
        self.check_dim(x)?;
        let half = self.torus.side / 2.0;
        if radius > half {
            return Err(PointsetError::RadiusTooLarge { radius, half });
        }
        let mut out = Vec::new();
        self.for_each_within(x, radius, |i, _| {
            let id = self.ids[i];
            if Some(id) != exclude {
                out.push(id);
            }
        });
        Ok(out)
    }

    /// Brute-force counterpart of [`neighbors_within`](Self::neighbors_within).
    pub fn neighbors_within_brute(&self, x: &[f64], radius: f64, exclude: Option<PointId>) -> Vec<PointId> {
        let r2 = radius * radius;
        (0..self.len())
            .filter(|&i| Some(self.ids[i]) != exclude && self.torus.dist2(x, self.position(i)) <= r2)
            .map(|i| self.ids[i])
            .collect()
    }

    /// Exact number of points in an axis-aligned half-open window.
    pub fn window_count(&self, window: &Window) -> Result<usize, PointsetError> {
        window.validate(&self.torus)?;
        Ok(self.positions().filter(|p| window.contains(p)).count())
    }

    /// Counts in the disjoint cubic tiles of side `side` that fit into the
    /// box, in row-major tile order. Points outside the tiled region (when
    /// `side` does not divide `L`) are not counted.
    pub fn tile_counts(&self, side: f64) -> Result<Vec<u64>, PointsetError> {
        if !(side > 0.0 && side <= self.torus.side) {
            return Err(PointsetError::InvalidWindow);
        }
        let d = self.torus.dim;
        let per_axis = (self.torus.side / side * (1.0 + 1e-12)).floor() as usize;
        let mut counts = vec![0u64; per_axis.pow(d as u32)];
        'points: for p in self.positions() {
            let mut tile = 0;
            for k in (0..d).rev() {
                let c = (p[k] / side) as usize;
                if c >= per_axis {
                    continue 'points;
                }
                tile = tile * per_axis + c;
            }
            counts[tile] += 1;
        }
        Ok(counts)
    }
}

/// Axis-aligned half-open box `[lo, hi)` inside the fundamental domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Window {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Window { lo, hi }
    }

    /// Cube of side `side` with lower corner `lo`.
    pub fn cube(lo: Vec<f64>, side: f64) -> Self {
        let hi = lo.iter().map(|v| v + side).collect();
        Window { lo, hi }
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    fn validate(&self, torus: &Torus) -> Result<(), PointsetError> {
        if self.lo.len() != torus.dim || self.hi.len() != torus.dim {
            return Err(PointsetError::DimensionMismatch { expected: torus.dim, got: self.lo.len() });
        }
        let ok = self.lo.iter().zip(&self.hi).all(|(&a, &b)| a >= 0.0 && a <= b && b <= torus.side);
        if ok {
            Ok(())
        } else {
            Err(PointsetError::InvalidWindow)
        }
    }

    #[inline]
    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v < *b)
    }
}

/// Homogeneous Poisson configuration with density `kappa`: the count is
/// Poisson(κ·Lᵈ) and positions are independent and uniform.
pub fn sample_poisson<R: Rng + ?Sized>(kappa: f64, torus: Torus, interaction_range: f64, rng: &mut R) -> PointConfig {
    let mut cfg = PointConfig::new(torus, interaction_range);
    let mean = kappa * torus.volume();
    if !(mean > 0.0) {
        return cfg;
    }
    let n = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
    let mut p = [0.0; 3];
    for _ in 0..n {
        for v in p.iter_mut().take(torus.dim) {
            *v = rng.gen::<f64>() * torus.side;
        }
        cfg.insert(&p[..torus.dim]).expect("dimension matches");
    }
    cfg
}

/// Header of a snapshot file.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotHeader {
    pub dim: usize,
    pub side: f64,
    pub count: usize,
    pub time: f64,
    pub seed: u64,
}

/// Writes the plain-text snapshot format:
///
/// ```text
/// # d=<d> L=<L> count=<n> time=<t> seed=<seed>
/// <x_1> [<y_1> [<z_1>]]
/// ...
/// ```
///
/// Floats carry 17 significant digits, so reading back is bit-exact.
pub fn write_snapshot<W: Write>(out: &mut W, config: &PointConfig, time: f64, seed: u64) -> Result<(), PointsetError> {
    let t = config.torus();
    writeln!(
        out,
        "# d={} L={} count={} time={} seed={}",
        t.dim(),
        fmt17(t.side()),
        config.len(),
        fmt17(time),
        seed
    )?;
    for p in config.positions() {
        let row: Vec<String> = p.iter().map(|&v| fmt17(v)).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Reads a snapshot; returns the header and the point rows.
pub fn read_snapshot<R: BufRead>(input: R) -> Result<(SnapshotHeader, Vec<Vec<f64>>), PointsetError> {
    let mut lines = input.lines();
    let first = lines.next().ok_or_else(|| PointsetError::Parse("empty input".into()))??;
    let body = first.strip_prefix('#').ok_or_else(|| PointsetError::Parse("missing header".into()))?;
    let mut fields: FxHashMap<&str, &str> = FxHashMap::default();
    for tok in body.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| PointsetError::Parse(format!("bad header field {tok}")))?;
        fields.insert(k, v);
    }
    fn field<T: std::str::FromStr>(f: &FxHashMap<&str, &str>, key: &str) -> Result<T, PointsetError> {
        f.get(key)
            .ok_or_else(|| PointsetError::Parse(format!("missing header field {key}")))?
            .parse()
            .map_err(|_| PointsetError::Parse(format!("bad value for {key}")))
    }
    let header = SnapshotHeader {
        dim: field(&fields, "d")?,
        side: field(&fields, "L")?,
        count: field(&fields, "count")?,
        time: field(&fields, "time")?,
        seed: field(&fields, "seed")?,
    };
    let mut points = Vec::with_capacity(header.count);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| PointsetError::Parse(format!("bad coordinate {s}"))))
            .collect::<Result<_, _>>()?;
        if row.len() != header.dim {
            return Err(PointsetError::DimensionMismatch { expected: header.dim, got: row.len() });
        }
        points.push(row);
    }
    if points.len() != header.count {
        return Err(PointsetError::Parse(format!("header says {} points, found {}", header.count, points.len())));
    }
    Ok((header, points))
}
