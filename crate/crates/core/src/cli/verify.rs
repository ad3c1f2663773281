//! Reference checks run by `spatial-bd verify`:
//!
//! 1. the Poisson stationary law of the balanced regime given by the config
//!    (`m = 0`, `a⁻ = θ·a⁺`): time-averaged density and a flat pair
//!    correlation at `1/θ`;
//! 2. exponential decay at rate ≥ 0.45 for `m = 1.5`, `⟨a⁺⟩ = 1`,
//!    `a⁻ = 0.2·a⁺`;
//! 3. exact laws without dispersal: pure death `κe^{−mt}` and the same law
//!    as an upper envelope once competition is switched on.
//!
//! Checks 2 and 3 use fixed parameters and only borrow the side length
//! from the config.

use super::commands::{run_ensemble, Ensemble};
use super::config::{ExperimentConfig, KernelConfig, RunConfig};
use super::CliError;
use crate::dynamics::Model;
use crate::estimators::{decay_rate_ensemble, uniform_edges, PairAccumulator};
use crate::format::fmt17;
use crate::kernels::{KernelPair, KernelSpec};
use crate::pointset::{PointConfig, Torus};
use crate::stats::MeanSe;
use serde::Serialize;
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    AtMost,
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub criterion: &'static str,
    pub name: String,
    pub statistic: f64,
    pub relation: Relation,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(criterion: &'static str, name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Check { criterion, name: name.into(), statistic, relation: Relation::AtMost, threshold, pass: statistic <= threshold }
    }

    pub fn at_least(criterion: &'static str, name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Check { criterion, name: name.into(), statistic, relation: Relation::AtLeast, threshold, pass: statistic >= threshold }
    }
}

fn density_at(ens: &Ensemble, k: usize) -> Vec<f64> {
    ens.trajectories.iter().filter_map(|t| t.observations.get(k)).map(|o| o.density).collect()
}

fn run_section(side_time: (f64, f64), every: f64, replicas: usize, density: f64) -> RunConfig {
    RunConfig {
        initial_density: Some(density),
        snapshot: None,
        t_end: side_time.1,
        observe_every: every,
        replicas,
        population_cap: None,
        recompute_period: None,
    }
}

/// Check 1 on the config's own model and run sections.
pub fn stationary_checks(config: &ExperimentConfig, seed: u64) -> Result<Vec<Check>, CliError> {
    let factor = match config.model.competition {
        KernelConfig::ScaledDispersal { factor } if factor > 0.0 && config.model.mortality == 0.0 => factor,
        _ => {
            return Err(CliError::Config(
                "verify needs the balanced regime: model.mortality = 0 and competition = scaled_dispersal".into(),
            ))
        }
    };
    let kappa = 1.0 / factor;
    let model = config.model.model()?;
    let torus = config.model.torus()?;
    let run = config.run()?;
    let analysis = config.analysis.clone().unwrap_or_default();
    let window = analysis.pool_window.unwrap_or([0.2 * run.t_end, run.t_end]);
    let ens = run_ensemble(&model, torus, run, seed, "verify/stationary", true)?;
    ens.cap_error()?;

    let in_window: Vec<usize> = (0..ens.times.len()).filter(|&k| ens.times[k] >= window[0] && ens.times[k] <= window[1]).collect();
    if in_window.is_empty() {
        return Err(CliError::Config("analysis.pool_window contains no observation time".into()));
    }
    let averages: Vec<f64> = ens
        .trajectories
        .iter()
        .map(|t| in_window.iter().map(|&k| t.observations[k].density).sum::<f64>() / in_window.len() as f64)
        .collect();
    let density = MeanSe::of(&averages);
    let mut checks = vec![Check::at_most(
        "1",
        format!("time-averaged density relative error (mean {:.5}, target {kappa})", density.mean),
        (density.mean - kappa).abs() / kappa,
        0.05,
    )];

    let edges = uniform_edges(analysis.bin_width, analysis.r_max);
    let mut acc = PairAccumulator::new(edges, torus.dim(), torus.side())?;
    for t in &ens.trajectories {
        let group: Vec<&PointConfig> = in_window.iter().map(|&k| t.observations[k].snapshot.as_ref().expect("snapshots kept")).collect();
        acc.add_group(&group)?;
    }
    let est = acc.finish(window[1])?;
    let target = kappa * kappa;
    let worst = est
        .bins
        .iter()
        .map(|b| {
            let d = (b.k2 - target).abs();
            if d == 0.0 {
                0.0
            } else {
                d / b.stderr
            }
        })
        .fold(0.0, f64::max);
    checks.push(Check::at_most(
        "1",
        format!("max |k2 - {target}| / stderr over {} bins", est.bins.len()),
        worst,
        3.0,
    ));
    Ok(checks)
}

fn gaussian_pair(competition_factor: Option<f64>, dispersal: bool) -> Result<KernelPair, CliError> {
    let g = KernelSpec::gaussian(1, 1.0, 1.0)?;
    let plus = if dispersal { g.clone() } else { KernelSpec::zero(1) };
    let minus = match competition_factor {
        Some(f) => g.scaled(f)?,
        None => KernelSpec::zero(1),
    };
    Ok(KernelPair::new(plus, minus)?)
}

/// Check 2: decay rate of the replica-mean density.
pub fn extinction_checks(side: f64, seed: u64) -> Result<Vec<Check>, CliError> {
    let model = Model::new(gaussian_pair(Some(0.2), true)?, 1.5)?;
    let torus = Torus::new(1, side)?;
    let run = run_section((side, 10.0), 0.5, 50, 1.0);
    let ens = run_ensemble(&model, torus, &run, seed, "verify/extinction", false)?;
    ens.cap_error()?;
    let series: Vec<Vec<f64>> = ens.trajectories.iter().map(|t| t.observations.iter().map(|o| o.density).collect()).collect();
    let fit = decay_rate_ensemble(&ens.times, &series, (1.0, 8.0))?;
    Ok(vec![Check::at_least(
        "2",
        format!("fitted decay rate (stderr {:.4}) for m = 1.5, <a+> = 1", fit.stderr),
        fit.rate,
        0.45,
    )])
}

/// Check 3: pure death law and its envelope under competition.
pub fn exact_law_checks(side: f64, seed: u64) -> Result<Vec<Check>, CliError> {
    let torus = Torus::new(1, side)?;
    let m = 0.2;
    let kappa = 2.0;

    let pure = Model::new(gaussian_pair(None, false)?, m)?;
    let run = run_section((side, 5.0), 5.0, 1000, kappa);
    let ens = run_ensemble(&pure, torus, &run, seed, "verify/pure_death", false)?;
    let last = MeanSe::of(&density_at(&ens, ens.times.len() - 1));
    let expected = kappa * (-m * 5.0f64).exp();
    let mut checks = vec![Check::at_most(
        "3a",
        format!("|mean density(t=5) - 2e^-1| / stderr (mean {:.5})", last.mean),
        last.z_score(expected),
        3.0,
    )];

    let competing = Model::new(gaussian_pair(Some(1.0), false)?, m)?;
    let run = run_section((side, 10.0), 1.0, 200, kappa);
    let ens = run_ensemble(&competing, torus, &run, seed, "verify/competition_only", false)?;
    let mut worst = f64::NEG_INFINITY;
    for (k, &t) in ens.times.iter().enumerate() {
        let d = MeanSe::of(&density_at(&ens, k));
        let rel = if d.mean > 0.0 { d.stderr / d.mean } else { 0.0 };
        let envelope = kappa * (-m * t).exp() * (1.0 + 3.0 * rel);
        worst = worst.max(d.mean / envelope);
    }
    checks.push(Check::at_most("3b", "max over t of mean density / (2e^{-0.2t}(1 + 3 rel. stderr))", worst, 1.0));
    Ok(checks)
}

/// All checks, in order.
pub fn run_all(config: &ExperimentConfig, seed: u64) -> Result<Vec<Check>, CliError> {
    let side = config.model.side;
    let mut checks = stationary_checks(config, seed)?;
    checks.extend(extinction_checks(side, seed)?);
    checks.extend(exact_law_checks(side, seed)?);
    Ok(checks)
}

pub fn write_csv<W: Write>(out: &mut W, checks: &[Check]) -> std::io::Result<()> {
    writeln!(out, "criterion,check,statistic,relation,threshold,pass")?;
    for c in checks {
        let rel = match c.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        };
        writeln!(out, "{},\"{}\",{},{},{},{}", c.criterion, c.name.replace('"', "'"), fmt17(c.statistic), rel, fmt17(c.threshold), c.pass)?;
    }
    Ok(())
}

/// Human-readable PASS/FAIL table.
pub fn render_table(checks: &[Check]) -> String {
    let mut s = String::new();
    for c in checks {
        let rel = match c.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        };
        s.push_str(&format!(
            "{:<4} {:<4} {:>12.6} {} {:<8} {}\n",
            if c.pass { "PASS" } else { "FAIL" },
            c.criterion,
            c.statistic,
            rel,
            c.threshold,
            c.name
        ));
    }
    s
}
