//! Spatial birth-and-death processes with dispersal and competition.
//!
//! Points on a periodic box give birth at rate density
//! `E⁺(x, γ) = Σ_{y∈γ} a⁺(x − y)` and die at rate
//! `E⁻(x, γ) = m + Σ_{y∈γ∖x} a⁻(x − y)`. The crate provides
//!
//! * [`kernels`]: parametric dispersal/competition kernels and the
//!   short/long dispersal classification,
//! * [`pointset`]: torus configurations with a cell-list index,
//! * [`dynamics`]: an exact event-driven simulator,
//! * [`estimators`]: density, pair-correlation and window factorial-moment
//!   estimators with a sub-Poissonian gate,
//! * [`hierarchy`]: a second-order truncation of the correlation-function
//!   hierarchy with Poisson or Kirkwood closure,
//! * [`theory`]: the operator-norm bound, domination-constant certificates
//!   and long-time envelopes,
//! * [`cli`]: the config-driven experiment runner behind the `spatial-bd`
//!   binary.

pub mod cli;
pub mod dynamics;
pub mod estimators;
pub mod format;
pub mod hierarchy;
pub mod kernels;
pub mod pointset;
pub mod rng;
pub mod stats;
pub mod theory;

pub use dynamics::{Model, SimState};
pub use kernels::{classify_dispersal, Dispersal, KernelFamily, KernelPair, KernelSpec};
pub use pointset::{PointConfig, PointId, Torus};
