//! Dispersal and competition kernels.
//!
//! A kernel is an isotropic, radially non-increasing rate density on ℝᵈ
//! taken from one of a few parametric families. The amplitude parameter of
//! the Gaussian and exponential families is the total mass ⟨a⟩, so
//! `Gaussian { amplitude: c, .. }` integrates to `c`.
//!
//! Every kernel is hard-truncated at a cutoff radius `R_c` chosen so that
//! the excluded mass is at most `tail_tol · ⟨a⟩`. [`KernelSpec::evaluate`]
//! returns exactly zero beyond `R_c`; all other modules see this truncated
//! kernel, which keeps the simulator and the hierarchy solver on the same
//! effective model.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_ur};
use std::f64::consts::PI;
use thiserror::Error;

/// Default relative tail mass excluded by the cutoff radius.
pub const DEFAULT_TAIL_TOL: f64 = 1e-6;

/// Radial grid resolution used by [`classify_dispersal`], relative to the
/// largest length scale of the pair.
const CLASSIFY_RESOLUTION: f64 = 1e-3;
const CLASSIFY_MAX_POINTS: usize = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: kernel is {expected}-dimensional, got a {got}-vector")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("position has non-finite coordinates")]
    NonFinite,
    #[error("kernel has zero mass; there is no displacement density to sample")]
    NoDensity,
}

/// Parametric family of a kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelFamily {
    /// `c · (2πσ²)^{-d/2} · exp(-|x|²/(2σ²))`; mass `c`.
    Gaussian { amplitude: f64, width: f64 },
    /// `h · 1{|x| ≤ r}`; mass `h · vol(B_r)`.
    TopHat { height: f64, range: f64 },
    /// `c · exp(-|x|/λ) / (S_d λᵈ Γ(d))`; mass `c`.
    Exponential { amplitude: f64, scale: f64 },
    Zero,
}

impl KernelFamily {
    fn validate(&self) -> Result<(), KernelError> {
        let bad = |what: &str, v: f64| Err(KernelError::InvalidParameter(format!("{what} = {v}")));
        match *self {
            KernelFamily::Gaussian { amplitude, width } => {
                if !(amplitude > 0.0 && amplitude.is_finite()) {
                    return bad("gaussian amplitude", amplitude);
                }
                if !(width > 0.0 && width.is_finite()) {
                    return bad("gaussian width", width);
                }
            }
            KernelFamily::TopHat { height, range } => {
                if !(height >= 0.0 && height.is_finite()) {
                    return bad("top-hat height", height);
                }
                if !(range > 0.0 && range.is_finite()) {
                    return bad("top-hat range", range);
                }
            }
            KernelFamily::Exponential { amplitude, scale } => {
                if !(amplitude > 0.0 && amplitude.is_finite()) {
                    return bad("exponential amplitude", amplitude);
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return bad("exponential scale", scale);
                }
            }
            KernelFamily::Zero => {}
        }
        Ok(())
    }

    /// Characteristic length of the family (0 for `Zero`).
    pub fn length_scale(&self) -> f64 {
        match *self {
            KernelFamily::Gaussian { width, .. } => width,
            KernelFamily::TopHat { range, .. } => range,
            KernelFamily::Exponential { scale, .. } => scale,
            KernelFamily::Zero => 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Gaussian { .. } => "gaussian",
            KernelFamily::TopHat { .. } => "top_hat",
            KernelFamily::Exponential { .. } => "exponential",
            KernelFamily::Zero => "zero",
        }
    }
}

/// Volume of the unit ball in ℝᵈ.
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => {
            let h = dim as f64 / 2.0;
            PI.powf(h) / gamma(h + 1.0)
        }
    }
}

/// Surface area of the unit sphere in ℝᵈ.
pub fn unit_sphere_area(dim: usize) -> f64 {
    dim as f64 * unit_ball_volume(dim)
}

/// A kernel with its derived constants cached.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelSpec {
    family: KernelFamily,
    dim: usize,
    tail_tol: f64,
    mass: f64,
    sup: f64,
    cutoff: f64,
    #[serde(skip)]
    cutoff_sq: f64,
    #[serde(skip)]
    peak: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, dim: usize) -> Result<Self, KernelError> {
        Self::with_tail_tol(family, dim, DEFAULT_TAIL_TOL)
    }

    pub fn with_tail_tol(family: KernelFamily, dim: usize, tail_tol: f64) -> Result<Self, KernelError> {
        if dim == 0 {
            return Err(KernelError::InvalidParameter("dimension = 0".into()));
        }
        if !(tail_tol > 0.0 && tail_tol < 1.0) {
            return Err(KernelError::InvalidParameter(format!("tail_tol = {tail_tol}")));
        }
        family.validate()?;
        let d = dim as f64;
        let (mass, peak) = match family {
            KernelFamily::Gaussian { amplitude, width } => {
                (amplitude, amplitude * (2.0 * PI * width * width).powf(-d / 2.0))
            }
            KernelFamily::TopHat { height, range } => (height * unit_ball_volume(dim) * range.powi(dim as i32), height),
            KernelFamily::Exponential { amplitude, scale } => {
                let norm = unit_sphere_area(dim) * scale.powi(dim as i32) * gamma(d);
                (amplitude, amplitude / norm)
            }
            KernelFamily::Zero => (0.0, 0.0),
        };
        let mut spec = KernelSpec {
            family,
            dim,
            tail_tol,
            mass,
            sup: peak,
            cutoff: 0.0,
            cutoff_sq: 0.0,
            peak,
        };
        spec.cutoff = spec.cutoff_radius(tail_tol);
        spec.cutoff_sq = spec.cutoff * spec.cutoff;
        Ok(spec)
    }

    pub fn gaussian(dim: usize, amplitude: f64, width: f64) -> Result<Self, KernelError> {
        Self::new(KernelFamily::Gaussian { amplitude, width }, dim)
    }

    pub fn top_hat(dim: usize, height: f64, range: f64) -> Result<Self, KernelError> {
        Self::new(KernelFamily::TopHat { height, range }, dim)
    }

    pub fn exponential(dim: usize, amplitude: f64, scale: f64) -> Result<Self, KernelError> {
        Self::new(KernelFamily::Exponential { amplitude, scale }, dim)
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(KernelFamily::Zero, dim).expect("zero kernel is always valid")
    }

    /// The same family with its amplitude multiplied by `factor` (a pointwise
    /// scaled copy). Scaling by zero yields the `Zero` kernel.
    pub fn scaled(&self, factor: f64) -> Result<Self, KernelError> {
        if !(factor >= 0.0 && factor.is_finite()) {
            return Err(KernelError::InvalidParameter(format!("scale factor = {factor}")));
        }
        if factor == 0.0 {
            return Self::with_tail_tol(KernelFamily::Zero, self.dim, self.tail_tol);
        }
        let family = match self.family {
            KernelFamily::Gaussian { amplitude, width } => KernelFamily::Gaussian { amplitude: amplitude * factor, width },
            KernelFamily::TopHat { height, range } => KernelFamily::TopHat { height: height * factor, range },
            KernelFamily::Exponential { amplitude, scale } => {
                KernelFamily::Exponential { amplitude: amplitude * factor, scale }
            }
            KernelFamily::Zero => KernelFamily::Zero,
        };
        Self::with_tail_tol(family, self.dim, self.tail_tol)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tail_tol(&self) -> f64 {
        self.tail_tol
    }

    /// ⟨a⟩, the integral of the untruncated kernel over ℝᵈ.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// ‖a‖, attained at the origin for every implemented family.
    pub fn sup_norm(&self) -> f64 {
        self.sup
    }

    /// Cutoff radius R_c for the kernel's own `tail_tol`.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn is_zero(&self) -> bool {
        self.mass == 0.0
    }

    /// Fraction of ⟨a⟩ lying outside radius `radius`.
    pub fn tail_fraction_beyond(&self, radius: f64) -> f64 {
        let d = self.dim as f64;
        match self.family {
            KernelFamily::Gaussian { width, .. } => {
                if radius <= 0.0 {
                    1.0
                } else {
                    gamma_ur(d / 2.0, radius * radius / (2.0 * width * width))
                }
            }
            KernelFamily::Exponential { scale, .. } => {
                if radius <= 0.0 {
                    1.0
                } else {
                    gamma_ur(d, radius / scale)
                }
            }
            KernelFamily::TopHat { range, .. } => {
                if radius >= range {
                    0.0
                } else if radius <= 0.0 {
                    1.0
                } else {
                    1.0 - (radius / range).powi(self.dim as i32)
                }
            }
            KernelFamily::Zero => 0.0,
        }
    }

    /// Relative mass removed by the truncation at [`cutoff`](Self::cutoff).
    pub fn truncation_error(&self) -> f64 {
        self.tail_fraction_beyond(self.cutoff)
    }

    /// Mass of the truncated kernel, `⟨a⟩ · (1 − truncation_error)`.
    pub fn truncated_mass(&self) -> f64 {
        self.mass * (1.0 - self.truncation_error())
    }

    /// Smallest radius whose excluded mass is at most `tail_tol · ⟨a⟩`,
    /// located by bisection on the closed-form tail. Exact for top-hat
    /// kernels; zero for the `Zero` kernel.
    pub fn cutoff_radius(&self, tail_tol: f64) -> f64 {
        match self.family {
            KernelFamily::Zero => 0.0,
            KernelFamily::TopHat { range, .. } => range,
            KernelFamily::Gaussian { .. } | KernelFamily::Exponential { .. } => {
                if self.mass == 0.0 {
                    return 0.0;
                }
                let scale = self.family.length_scale();
                let mut lo = 0.0;
                let mut hi = scale;
                while self.tail_fraction_beyond(hi) > tail_tol {
                    lo = hi;
                    hi *= 2.0;
                }
                while hi - lo > 1e-13 * hi {
                    let mid = 0.5 * (lo + hi);
                    if self.tail_fraction_beyond(mid) > tail_tol {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                hi
            }
        }
    }

    /// Untruncated family value at radius `r ≥ 0`.
    pub fn raw_value_at_radius(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian { width, .. } => self.peak * (-r * r / (2.0 * width * width)).exp(),
            KernelFamily::TopHat { range, .. } => {
                if r <= range {
                    self.peak
                } else {
                    0.0
                }
            }
            KernelFamily::Exponential { scale, .. } => self.peak * (-r / scale).exp(),
            KernelFamily::Zero => 0.0,
        }
    }

    /// Truncated value at squared radius `r2`.
    #[inline]
    pub fn value_at_sq(&self, r2: f64) -> f64 {
        if r2 > self.cutoff_sq {
            return 0.0;
        }
        match self.family {
            KernelFamily::Gaussian { width, .. } => self.peak * (-r2 / (2.0 * width * width)).exp(),
            KernelFamily::TopHat { .. } => self.peak,
            KernelFamily::Exponential { scale, .. } => self.peak * (-r2.sqrt() / scale).exp(),
            KernelFamily::Zero => 0.0,
        }
    }

    /// Truncated value at radius `r`.
    #[inline]
    pub fn value_at_radius(&self, r: f64) -> f64 {
        self.value_at_sq(r * r)
    }

    /// Kernel value at displacement `x`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, KernelError> {
        if x.len() != self.dim {
            return Err(KernelError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::NonFinite);
        }
        Ok(self.value_at_sq(x.iter().map(|v| v * v).sum()))
    }

    /// Draws a displacement from the density `a/⟨a⟩` restricted to the
    /// cutoff ball, writing it into `out`.
    pub fn sample_displacement_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<(), KernelError> {
        if out.len() != self.dim {
            return Err(KernelError::DimensionMismatch { expected: self.dim, got: out.len() });
        }
        if self.mass == 0.0 {
            return Err(KernelError::NoDensity);
        }
        match self.family {
            KernelFamily::Gaussian { width, .. } => loop {
                let mut r2 = 0.0;
                for v in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = width * z;
                    r2 += *v * *v;
                }
                if r2 <= self.cutoff_sq {
                    return Ok(());
                }
            },
            KernelFamily::Exponential { scale, .. } => {
                let radial = Gamma::new(self.dim as f64, scale).expect("positive shape and scale");
                let radius = loop {
                    let r: f64 = radial.sample(rng);
                    if r <= self.cutoff {
                        break r;
                    }
                };
                random_direction(rng, out);
                out.iter_mut().for_each(|v| *v *= radius);
                Ok(())
            }
            KernelFamily::TopHat { range, .. } => loop {
                let mut r2 = 0.0;
                for v in out.iter_mut() {
                    *v = rng.gen_range(-range..=range);
                    r2 += *v * *v;
                }
                if r2 <= self.cutoff_sq {
                    return Ok(());
                }
            },
            KernelFamily::Zero => Err(KernelError::NoDensity),
        }
    }

    pub fn sample_displacement<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>, KernelError> {
        let mut out = vec![0.0; self.dim];
        self.sample_displacement_into(rng, &mut out)?;
        Ok(out)
    }

    /// Metadata record for run manifests.
    pub fn summary(&self) -> KernelSummary {
        KernelSummary {
            family: self.family,
            dim: self.dim,
            tail_tol: self.tail_tol,
            mass: self.mass,
            sup: self.sup,
            cutoff: self.cutoff,
            truncation_error: self.truncation_error(),
        }
    }
}

fn random_direction<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    if out.len() == 1 {
        out[0] = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        return;
    }
    loop {
        let mut n2 = 0.0;
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
            n2 += *v * *v;
        }
        if n2 > 1e-300 {
            let n = n2.sqrt();
            out.iter_mut().for_each(|v| *v /= n);
            return;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelSummary {
    pub family: KernelFamily,
    pub dim: usize,
    pub tail_tol: f64,
    pub mass: f64,
    pub sup: f64,
    pub cutoff: f64,
    pub truncation_error: f64,
}

/// Dispersal kernel a⁺ together with competition kernel a⁻.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelPair {
    pub dispersal: KernelSpec,
    pub competition: KernelSpec,
}

impl KernelPair {
    pub fn new(dispersal: KernelSpec, competition: KernelSpec) -> Result<Self, KernelError> {
        if dispersal.dim() != competition.dim() {
            return Err(KernelError::DimensionMismatch { expected: dispersal.dim(), got: competition.dim() });
        }
        Ok(KernelPair { dispersal, competition })
    }

    pub fn dim(&self) -> usize {
        self.dispersal.dim()
    }

    /// Largest cutoff of the two kernels.
    pub fn max_cutoff(&self) -> f64 {
        self.dispersal.cutoff().max(self.competition.cutoff())
    }
}

/// Short/long dispersal dichotomy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dispersal {
    /// `a⁻ ≥ θ a⁺` everywhere with the largest such θ. `θ = +∞` is the
    /// sentinel for a vanishing dispersal kernel, where the dichotomy does
    /// not apply.
    Short { theta: f64 },
    Long,
}

impl Dispersal {
    pub fn is_short(&self) -> bool {
        matches!(self, Dispersal::Short { .. })
    }

    pub fn theta(&self) -> Option<f64> {
        match *self {
            Dispersal::Short { theta } => Some(theta),
            Dispersal::Long => None,
        }
    }
}

/// Behaviour of `a⁻(ρ)/a⁺(ρ)` as ρ runs to the end of the support of a⁺.
#[derive(Clone, Copy, Debug, PartialEq)]
enum TailRatio {
    /// a⁺ has compact support; nothing to decide at infinity.
    Compact,
    Vanishing,
    Bounded,
    Diverging,
}

fn tail_ratio(plus: &KernelFamily, minus: &KernelFamily) -> TailRatio {
    use KernelFamily::*;
    use TailRatio::*;
    let compare = |minus_len: f64, plus_len: f64| {
        if minus_len < plus_len {
            Vanishing
        } else if minus_len == plus_len {
            Bounded
        } else {
            Diverging
        }
    };
    match (plus, minus) {
        (TopHat { .. }, _) | (Zero, _) => Compact,
        (_, Zero) | (_, TopHat { .. }) => Vanishing,
        (Gaussian { width: sp, .. }, Gaussian { width: sm, .. }) => compare(*sm, *sp),
        (Gaussian { .. }, Exponential { .. }) => Diverging,
        (Exponential { .. }, Gaussian { .. }) => Vanishing,
        (Exponential { scale: lp, .. }, Exponential { scale: lm, .. }) => compare(*lm, *lp),
    }
}

/// Classifies a pair as short or long dispersal.
///
/// The behaviour of `a⁻/a⁺` at infinity is decided from the families'
/// asymptotics; the infimum itself is taken over a radial grid of
/// resolution `1e-3 · (largest length scale)` extended to the larger
/// cutoff, plus the analytic interior minimum of Gaussian-over-exponential
/// pairs and the edge of a compactly supported a⁺.
pub fn classify_dispersal(pair: &KernelPair) -> Dispersal {
    let plus = &pair.dispersal;
    let minus = &pair.competition;
    if plus.is_zero() {
        return Dispersal::Short { theta: f64::INFINITY };
    }
    if minus.is_zero() {
        return Dispersal::Long;
    }
    if tail_ratio(&plus.family, &minus.family) == TailRatio::Vanishing {
        return Dispersal::Long;
    }

    let support_end = match plus.family {
        KernelFamily::TopHat { range, .. } => range,
        _ => f64::INFINITY,
    };
    let reach = plus.cutoff().max(minus.cutoff()).min(support_end);
    let scale = plus.family.length_scale().max(minus.family.length_scale());
    let step = CLASSIFY_RESOLUTION * scale;
    let n = ((reach / step).ceil() as usize).min(CLASSIFY_MAX_POINTS).max(1);

    let ratio = |r: f64| minus.raw_value_at_radius(r) / plus.raw_value_at_radius(r);
    let mut theta = f64::INFINITY;
    for i in 0..=n {
        let r = reach * i as f64 / n as f64;
        theta = theta.min(ratio(r));
    }
    if let (KernelFamily::Gaussian { width, .. }, KernelFamily::Exponential { scale, .. }) = (plus.family, minus.family) {
        let r_star = width * width / scale;
        theta = theta.min(ratio(r_star));
    }
    if support_end.is_finite() {
        theta = theta.min(ratio(support_end));
    }
    if theta > 0.0 && theta.is_finite() {
        Dispersal::Short { theta }
    } else {
        Dispersal::Long
    }
}
