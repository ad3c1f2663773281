use super::config::{EnvelopeConstants, ExperimentConfig, RunConfig};
use super::{verify, CliError, Command, OutputDir};
use crate::dynamics::{replicate, simulate, DynamicsError, Model, SimulateOptions, Trajectory};
use crate::estimators::{
    decay_rate_ensemble, estimate_pair_correlation, uniform_edges, window_samples, write_moment_csv, write_pair_csv,
    MomentAccumulator, PairAccumulator,
};
use crate::format::fmt17;
use crate::hierarchy::{write_state_csv, Grid, HierarchySolver, HierarchyState, IntegrateOptions};
use crate::kernels::classify_dispersal;
use crate::pointset::{read_snapshot, sample_poisson, write_snapshot, PointConfig, Torus};
use crate::stats::MeanSe;
use crate::theory::{
    adversarial_refine, aggregate_death_rate, find_domination_constants, margin, operator_norm_bound,
    sample_configurations, write_envelope_csv, CertificateOptions, DominationCertificate, EnvelopeCase, NormBoundInput,
    SearchOutcome,
};
use serde::Serialize;
use std::io::{BufReader, Write};

pub(super) fn dispatch(command: &Command, config: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    match command {
        Command::Simulate(_) => simulate_cmd(config, seed, out),
        Command::Hierarchy(_) => hierarchy_cmd(config, out),
        Command::Estimate(_) => estimate_cmd(config, seed, out),
        Command::Certify(_) => certify_cmd(config, seed, out),
        Command::Bound(_) => bound_cmd(config, out),
        Command::Verify(_) => verify_cmd(config, seed, out),
    }
}

/// Replicated trajectories of one run section.
#[derive(Debug)]
pub struct Ensemble {
    pub times: Vec<f64>,
    /// In replica order; a capped replica contributes its partial run.
    pub trajectories: Vec<Trajectory>,
    /// First replica that hit the population cap: (replica, cap, time).
    pub capped: Option<(usize, usize, f64)>,
}

impl Ensemble {
    pub fn cap_error(&self) -> Result<(), CliError> {
        match self.capped {
            Some((replica, cap, time)) => Err(CliError::PopulationCap { replica, cap, time }),
            None => Ok(()),
        }
    }
}

/// Runs `run.replicas` trajectories; replica `i` draws from the substream
/// `(seed, label, i)`.
pub fn run_ensemble(model: &Model, torus: Torus, run: &RunConfig, seed: u64, label: &str, keep_snapshots: bool) -> Result<Ensemble, CliError> {
    run.validate()?;
    let times = run.observation_times()?;
    let mut opts = SimulateOptions::new(run.t_end, times.clone()).with_snapshots(keep_snapshots);
    if let Some(cap) = run.population_cap {
        opts = opts.with_cap(cap);
    }
    if let Some(period) = run.recompute_period {
        opts.recompute_period = period;
    }
    let initial = match &run.snapshot {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let (header, points) = read_snapshot(BufReader::new(file))?;
            if header.dim != torus.dim() || header.side != torus.side() {
                return Err(CliError::Config(format!(
                    "snapshot box (d = {}, L = {}) differs from the model (d = {}, L = {})",
                    header.dim,
                    header.side,
                    torus.dim(),
                    torus.side()
                )));
            }
            Some(points)
        }
        None => None,
    };
    let range = model.pair.max_cutoff();
    let results = replicate(run.replicas, seed, label, |_, rng| {
        let init = match &initial {
            Some(points) => PointConfig::from_points(torus, range, points)?,
            None => sample_poisson(run.initial_density.unwrap_or(0.0), torus, range, rng),
        };
        simulate(init, model, &opts, rng)
    });
    let mut trajectories = Vec::with_capacity(results.len());
    let mut capped = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => trajectories.push(t),
            Err(DynamicsError::PopulationCap { cap, time, partial, .. }) => {
                capped.get_or_insert((i, cap, time));
                trajectories.push(*partial);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Ensemble { times, trajectories, capped })
}

fn write_trajectory_csv(w: &mut Vec<u8>, ens: &Ensemble) -> std::io::Result<()> {
    writeln!(w, "t,replica,n_points,density")?;
    for (r, t) in ens.trajectories.iter().enumerate() {
        for o in &t.observations {
            writeln!(w, "{},{},{},{}", fmt17(o.time), r, o.n_points, fmt17(o.density))?;
        }
    }
    Ok(())
}

fn write_density_csv(w: &mut Vec<u8>, ens: &Ensemble) -> std::io::Result<()> {
    writeln!(w, "t,mean,stderr,n_replicas")?;
    for (k, &t) in ens.times.iter().enumerate() {
        let values: Vec<f64> = ens.trajectories.iter().filter_map(|tr| tr.observations.get(k)).map(|o| o.density).collect();
        if values.is_empty() {
            continue;
        }
        let m = MeanSe::of(&values);
        writeln!(w, "{},{},{},{}", fmt17(t), fmt17(m.mean), fmt17(m.stderr), m.n)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunSummary {
    replicas: usize,
    events: Vec<u64>,
    absorbed: usize,
    max_audit_drift: f64,
    audits: u64,
    capped_replica: Option<usize>,
}

fn run_summary(ens: &Ensemble) -> RunSummary {
    RunSummary {
        replicas: ens.trajectories.len(),
        events: ens.trajectories.iter().map(|t| t.events).collect(),
        absorbed: ens.trajectories.iter().filter(|t| t.absorbed).count(),
        max_audit_drift: ens.trajectories.iter().map(|t| t.max_audit_drift).fold(0.0, f64::max),
        audits: ens.trajectories.iter().map(|t| t.audits).sum(),
        capped_replica: ens.capped.map(|c| c.0),
    }
}

fn write_snapshots(out: &mut OutputDir, ens: &Ensemble, seed: u64) -> Result<(), CliError> {
    for (r, t) in ens.trajectories.iter().enumerate() {
        for (k, o) in t.observations.iter().enumerate() {
            if let Some(cfg) = &o.snapshot {
                out.write(&format!("snapshots/r{r:04}_t{k:04}.txt"), |w| write_snapshot(w, cfg, o.time, seed))?;
            }
        }
    }
    Ok(())
}

fn simulate_cmd(config: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    let model = config.model.model()?;
    let torus = config.model.torus()?;
    let run = config.run()?;
    let ens = run_ensemble(&model, torus, run, seed, "replica", config.outputs.snapshots)?;
    out.write("trajectory.csv", |w| write_trajectory_csv(w, &ens))?;
    out.write("density.csv", |w| write_density_csv(w, &ens))?;
    if config.outputs.snapshots {
        write_snapshots(out, &ens, seed)?;
    }
    out.write_json("run.json", &run_summary(&ens))?;
    ens.cap_error()
}

#[derive(Serialize)]
struct DecaySummary {
    window: [f64; 2],
    rate: f64,
    stderr: f64,
    points: usize,
}

fn estimate_cmd(config: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    let model = config.model.model()?;
    let torus = config.model.torus()?;
    let run = config.run()?;
    let analysis = config.analysis.clone().unwrap_or_default();
    // Same substreams as `simulate`, so both see identical trajectories.
    let ens = run_ensemble(&model, torus, run, seed, "replica", true)?;
    out.write("density.csv", |w| write_density_csv(w, &ens))?;

    let edges = uniform_edges(analysis.bin_width, analysis.r_max);
    let volume = analysis.window.powi(torus.dim() as i32);
    let mut pair_estimates = Vec::new();
    let mut moment_reports = Vec::new();
    let mut clustering = Vec::new();
    for (k, &t) in ens.times.iter().enumerate() {
        let snaps: Vec<&PointConfig> =
            ens.trajectories.iter().filter_map(|tr| tr.observations.get(k)).filter_map(|o| o.snapshot.as_ref()).collect();
        if snaps.is_empty() {
            continue;
        }
        pair_estimates.push(estimate_pair_correlation(snaps.iter().copied(), &edges, t)?);
        let mut acc = MomentAccumulator::new(analysis.n_max)?;
        acc.extend(window_samples(snaps.iter().copied(), analysis.window)?)?;
        let report = acc.report(volume)?;
        let index = acc.clustering_index().ok();
        clustering.push((t, index, report.sub_poissonian, report.samples));
        moment_reports.push((t, report));
    }
    out.write("pair_correlation.csv", |w| write_pair_csv(w, &pair_estimates))?;
    out.write("moments.csv", |w| write_moment_csv(w, &moment_reports))?;
    out.write("clustering.csv", |w| -> std::io::Result<()> {
        writeln!(w, "t,clustering_index,stderr,sub_poissonian,samples")?;
        for (t, index, sub, n) in &clustering {
            let (v, se) = index.map_or((f64::NAN, f64::NAN), |m| (m.mean, m.stderr));
            writeln!(w, "{},{},{},{},{}", fmt17(*t), fmt17(v), fmt17(se), sub, n)?;
        }
        Ok(())
    })?;

    if ens.capped.is_none() {
        if let Some(window) = analysis.pool_window {
            let ks: Vec<usize> = (0..ens.times.len()).filter(|&k| ens.times[k] >= window[0] && ens.times[k] <= window[1]).collect();
            if !ks.is_empty() {
                let mut acc = PairAccumulator::new(edges.clone(), torus.dim(), torus.side())?;
                for tr in &ens.trajectories {
                    let group: Vec<&PointConfig> = ks.iter().filter_map(|&k| tr.observations[k].snapshot.as_ref()).collect();
                    acc.add_group(&group)?;
                }
                let est = acc.finish(window[1])?;
                out.write("pair_correlation_pooled.csv", |w| write_pair_csv(w, std::slice::from_ref(&est)))?;
            }
        }
        if let Some(window) = analysis.fit_window {
            let series: Vec<Vec<f64>> =
                ens.trajectories.iter().map(|t| t.observations.iter().map(|o| o.density).collect()).collect();
            let fit = decay_rate_ensemble(&ens.times, &series, (window[0], window[1]))?;
            out.write_json("decay.json", &DecaySummary { window, rate: fit.rate, stderr: fit.stderr, points: fit.points })?;
        }
    }
    out.write_json("run.json", &run_summary(&ens))?;
    ens.cap_error()
}

#[derive(Serialize)]
struct HierarchySummary {
    closure: &'static str,
    grid: usize,
    side: f64,
    dt: f64,
    steps: usize,
    initial_density: f64,
    final_k1: f64,
    clipped_total: f64,
    max_step_clip: f64,
}

fn hierarchy_cmd(config: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let h = config.hierarchy.as_ref().ok_or_else(|| CliError::Config("missing [hierarchy] section".into()))?;
    if !(h.t_end > 0.0) {
        return Err(CliError::Config(format!("hierarchy.t_end = {}", h.t_end)));
    }
    let model = config.model.model()?;
    let grid = Grid::new(h.grid, config.model.side)?;
    let solver = HierarchySolver::new(model, grid.clone())?;
    let k1_0 = h
        .initial_density
        .or_else(|| config.run.as_ref().and_then(|r| r.initial_density))
        .ok_or_else(|| CliError::Config("hierarchy.initial_density (or run.initial_density) is required".into()))?;
    let requested = h.dt.unwrap_or_else(|| solver.stability_dt(solver.density_scale(k1_0)));
    let steps = (h.t_end / requested).ceil().max(1.0) as usize;
    let dt = h.t_end / steps as f64;
    let mut opts = IntegrateOptions::new(dt, h.t_end).with_stride(h.stride);
    if let Some(bound) = h.k1_bound {
        opts.k1_bound = bound;
    }
    let closure = h.closure();
    let result = solver.integrate(&HierarchyState::poisson(&grid, k1_0), closure, &opts)?;
    out.write("hierarchy_k1.csv", |w| -> std::io::Result<()> {
        writeln!(w, "t,k1")?;
        for s in &result.states {
            writeln!(w, "{},{}", fmt17(s.time), fmt17(s.k1))?;
        }
        Ok(())
    })?;
    for (i, s) in result.states.iter().enumerate() {
        out.write(&format!("hierarchy/state_{i:05}.csv"), |w| write_state_csv(w, &grid, s))?;
    }
    out.write_json(
        "hierarchy.json",
        &HierarchySummary {
            closure: closure.name(),
            grid: grid.n,
            side: grid.side,
            dt,
            steps: result.steps,
            initial_density: k1_0,
            final_k1: result.final_state().k1,
            clipped_total: result.clipped_total,
            max_step_clip: result.max_step_clip,
        },
    )
}

#[derive(Serialize)]
struct AdversarialSummary {
    seeds: usize,
    iterations: usize,
    max_margin: Option<f64>,
    violated: bool,
}

#[derive(Serialize)]
struct CertifyReport<'a> {
    outcome: &'static str,
    certificate: &'a DominationCertificate,
    adversarial: AdversarialSummary,
}

fn certify_cmd(config: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    let pair = config.model.pair()?;
    let c = config.certify.clone().unwrap_or_default();
    let opts = CertificateOptions { budget: c.budget, min_size: c.min_size, max_size: c.max_size, seed, b_max: c.b_max };
    let outcome = find_domination_constants(&pair, &opts)?;
    let cert = outcome.certificate();

    // Local search from the worst configurations of the same sample.
    let sample = sample_configurations(&pair, c.budget, c.min_size, c.max_size, seed);
    let mut scored: Vec<(f64, usize)> = sample.iter().enumerate().map(|(i, s)| (margin(&pair, cert.b, cert.theta, s), i)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let seeds: Vec<Vec<f64>> = scored.iter().take(c.refine_seeds).map(|&(_, i)| sample[i].clone()).collect();
    let (worst, _) = adversarial_refine(&pair, cert.b, cert.theta, &seeds, c.refine_iterations, seed);
    let max_margin = worst.is_finite().then_some(worst);

    let report = CertifyReport {
        outcome: match outcome {
            SearchOutcome::Certified(_) => "certified",
            SearchOutcome::NotFound(_) => "not_found",
        },
        certificate: cert,
        adversarial: AdversarialSummary {
            seeds: seeds.len(),
            iterations: c.refine_iterations,
            max_margin,
            violated: max_margin.is_some_and(|m| m > 0.0),
        },
    };
    out.write_json("certificate.json", &report)
}

#[derive(Serialize)]
struct BoundReport {
    input: NormBoundInput,
    bound: f64,
}

fn bound_cmd(config: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let b = config.bound.as_ref().ok_or_else(|| CliError::Config("missing [bound] section".into()))?;
    let pair = config.model.pair()?;
    let m = config.model.mortality;
    let input = NormBoundInput::from_pair(&pair, m, b.theta, b.theta_prime);
    let bound = operator_norm_bound(&input)?;
    out.write_json("bound.json", &BoundReport { input, bound })?;

    if let Some(env) = &b.envelope {
        let mass_plus = pair.dispersal.mass();
        let case = match env.constants()? {
            EnvelopeConstants::Growth { c_delta, delta } => EnvelopeCase::Growth {
                c_delta,
                delta,
                short_dispersal: classify_dispersal(&pair).is_short(),
                mortality: m,
                mass_plus,
            },
            EnvelopeConstants::Extinction { c_eps, eps } => EnvelopeCase::Extinction { c_eps, eps, mortality: m, mass_plus },
            EnvelopeConstants::NoDispersal { k0 } => {
                let death_rate = match &env.positions {
                    Some(p) => {
                        if p.len() != env.order * pair.dim() {
                            return Err(CliError::Config(format!(
                                "bound.envelope.positions needs {} coordinates",
                                env.order * pair.dim()
                            )));
                        }
                        aggregate_death_rate(&pair, m, p)
                    }
                    None => m * env.order as f64,
                };
                EnvelopeCase::NoDispersal { k0, death_rate }
            }
        };
        if env.points < 1 || !(env.t_end >= 0.0) {
            return Err(CliError::Config("bound.envelope needs points ≥ 1 and t_end ≥ 0".into()));
        }
        let times: Vec<f64> = (0..=env.points).map(|i| env.t_end * i as f64 / env.points as f64).collect();
        out.write("envelope.csv", |w| write_envelope_csv(w, &case, env.order, &times))?;
    }
    Ok(())
}

fn verify_cmd(config: &ExperimentConfig, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    let checks = verify::run_all(config, seed)?;
    out.write("verify.csv", |w| verify::write_csv(w, &checks))?;
    print!("{}", verify::render_table(&checks));
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(CliError::VerifyFailed(failed));
    }
    Ok(())
}
