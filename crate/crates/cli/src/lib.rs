//! Experiment runner: configs in, CSV and JSON artifacts out.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use popgames::closedloop::{convergence_report, integrate, Trajectory};
use popgames::edm::{Family, Protocol};
use popgames::equilibria::{nash_set, perturbed_equilibrium, EquilibriumKind, EquilibriumSet};
use popgames::games::GameStructure;
use popgames::passivity::{
    certify as certify_pdm, check_delta_antipassivity, check_delta_passivity, classify_pdm, AntistorageFunction,
    Certificate, PassivityReport, PdmPassivity, StorageFunction,
};
use popgames::pdm::{PdmKind, PdmModel};
use popgames::simplex::sup_distance;
use popgames::stochastic::{choose_rate_bound, payoff_box_from, simulate_finite_population, sup_deviation};
use popgames::SimplexState;
use rayon::prelude::*;
use serde::Serialize;

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) | CliError::Io(_) => 2,
        }
    }

    fn context(self, what: &str) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{what}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{what}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{what}: {m}")),
        }
    }
}

impl From<popgames::Error> for CliError {
    fn from(e: popgames::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Radius under which two terminal states count as the same limit point.
pub const LIMIT_POINT_RADIUS: f64 = 1e-3;

/// Damping, tolerance and iteration budget for the perturbed equilibrium solve.
const PE_DAMPING: f64 = 0.5;
const PE_TOL: f64 = 1e-12;
const PE_MAX_ITER: usize = 200_000;

/// Number of worker threads and the output directory.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub out_dir: PathBuf,
    pub jobs: usize,
}

impl RunContext {
    pub fn new(out_dir: impl Into<PathBuf>, jobs: usize) -> Self {
        Self { out_dir: out_dir.into(), jobs: jobs.max(1) }
    }

    fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))
    }

    fn path(&self, cfg: &ExperimentConfig, suffix: &str) -> PathBuf {
        self.out_dir.join(format!("{}_{suffix}", cfg.name))
    }

    fn prepare(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out_dir).map_err(|e| CliError::Io(format!("{}: {e}", self.out_dir.display())))
    }
}

/// Everything a run needs, built once from the config.
pub struct Setup {
    pub pdm: PdmModel,
    pub protocol: Protocol,
    pub equilibria: EquilibriumSet,
    pub initial: Vec<SimplexState>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let pdm = cfg.pdm_model()?;
        let protocol = cfg.protocol()?;
        let equilibria = equilibrium_set(cfg, &pdm, &protocol)?;
        let initial = cfg.initial_states(pdm.game())?;
        Ok(Self { pdm, protocol, equilibria, initial })
    }
}

/// Nash set of the stationary game, or its logit equilibria for PBR protocols.
pub fn equilibrium_set(
    cfg: &ExperimentConfig,
    pdm: &PdmModel,
    protocol: &Protocol,
) -> Result<EquilibriumSet, CliError> {
    let settings = cfg.equilibrium_settings();
    let game = pdm.stationary_game();
    let set = match protocol.eta() {
        Some(eta) => perturbed_equilibrium(game, eta, PE_DAMPING, PE_TOL, PE_MAX_ITER)?,
        None => nash_set(game, settings.grid_resolution, settings.tolerance)?,
    };
    if set.is_empty() {
        let why = set.diagnostic().unwrap_or("no equilibrium found");
        return Err(CliError::Numerical(format!("equilibrium set: {why}")));
    }
    Ok(set)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub index: usize,
    pub initial_state: Vec<f64>,
    pub terminal_state: Vec<f64>,
    pub terminal_distance: f64,
    pub terminal_payoff_gap: f64,
    pub terminal_storage: f64,
    /// Time after which the distance stays below the configured threshold.
    pub time_to_threshold: Option<f64>,
    pub projection_correction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passivity: Option<PassivityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub antipassivity: Option<PassivityReport>,
    pub file: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub name: String,
    pub threshold: f64,
    pub runs: Vec<RunSummary>,
    pub certificate: Certificate,
    pub files: Vec<PathBuf>,
}

/// Antistorage function matching the PDM's certificate and its deficit.
pub fn antistorage_for(pdm: &PdmModel, grid_resolution: usize) -> Result<Option<(AntistorageFunction, f64)>, CliError> {
    let class = classify_pdm(pdm, grid_resolution)?;
    let PdmPassivity::Antipassive { deficit } = class else { return Ok(None) };
    if pdm.kind() == PdmKind::Memoryless {
        return Ok(Some((AntistorageFunction::zero_memoryless(), deficit)));
    }
    if matches!(pdm.game().structure(), GameStructure::Affine { .. }) {
        return Ok(Some((AntistorageFunction::affine_quadratic_for_pdm(pdm)?, deficit)));
    }
    Ok(AntistorageFunction::legendre_smoothing(pdm).ok().map(|af| (af, deficit)))
}

/// Surplus used in the passivity check: zero for EPT/IPC, `η m` for logit.
pub fn passivity_surplus(protocol: &Protocol, mass: f64) -> f64 {
    match protocol.family() {
        Family::Pbr => protocol.eta().unwrap_or(0.0) * mass,
        _ => 0.0,
    }
}

fn simulate(cfg: &ExperimentConfig, setup: &Setup, x0: &SimplexState) -> Result<Trajectory, CliError> {
    let q0 = cfg.initial_pdm_state(&setup.pdm, x0)?;
    let traj = integrate(&setup.pdm, &setup.protocol, x0, &q0, cfg.integrator.horizon, cfg.integrator.step)?;
    Ok(traj)
}

/// Integrates every initial condition, writing one trajectory CSV each and a JSON summary.
pub fn run(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<RunReport, CliError> {
    let setup = Setup::new(cfg)?;
    let settings = cfg.equilibrium_settings();
    let certificate = certify_pdm(&setup.pdm, &setup.protocol, settings.grid_resolution)?;
    let storage = StorageFunction::for_protocol(&setup.protocol)?;
    let checks = cfg.checks.clone().unwrap_or(config::ChecksConfig { passivity: false, antipassivity: false });
    let antistorage = if checks.antipassivity { antistorage_for(&setup.pdm, settings.grid_resolution)? } else { None };
    let surplus = passivity_surplus(&setup.protocol, setup.pdm.game().mass());
    ctx.prepare()?;

    let runs = ctx.pool()?.install(|| {
        setup
            .initial
            .par_iter()
            .enumerate()
            .map(|(index, x0)| {
                let mut traj = simulate(cfg, &setup, x0).map_err(|e| e.context(&format!("run {index}")))?;
                traj.annotate(Some(&setup.equilibria), Some(&storage))?;
                let report = convergence_report(&traj, &setup.equilibria, setup.pdm.stationary_game())?;
                let passivity =
                    if checks.passivity { Some(check_delta_passivity(&traj, &storage, surplus)?) } else { None };
                let antipassivity = match &antistorage {
                    Some((af, nu)) => Some(check_delta_antipassivity(&traj, af, *nu)?),
                    None => None,
                };
                let file = ctx.path(cfg, &format!("run{index:03}.csv"));
                fs::write(&file, trajectory_csv(&traj, &report.payoff_gap, cfg.integrator.stride))?;
                Ok(RunSummary {
                    index,
                    initial_state: x0.entries().to_vec(),
                    terminal_state: traj.final_state().into_vec(),
                    terminal_distance: report.terminal_distance,
                    terminal_payoff_gap: report.terminal_payoff_gap,
                    terminal_storage: *traj.storage_series().and_then(|s| s.last()).unwrap_or(&f64::NAN),
                    time_to_threshold: report.time_to_tolerance(settings.threshold),
                    projection_correction: traj.projection_correction(),
                    passivity,
                    antipassivity,
                    file,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;

    let mut files: Vec<PathBuf> = runs.iter().map(|r| r.file.clone()).collect();
    let summary_path = ctx.path(cfg, "summary.json");
    files.push(summary_path.clone());
    let report = RunReport { name: cfg.name.clone(), threshold: settings.threshold, runs, certificate, files };
    write_json(&summary_path, &report)?;
    Ok(report)
}

/// Trajectory CSV: `t, x1..xn, q1..qn, p1..pn, dist_to_eq, payoff_gap, storage`.
pub fn trajectory_csv(traj: &Trajectory, payoff_gap: &[f64], stride: usize) -> String {
    let n = traj.dim();
    let mut out = String::from("t");
    for prefix in ["x", "q", "p"] {
        for i in 1..=n {
            let _ = write!(out, ",{prefix}{i}");
        }
    }
    out.push_str(",dist_to_eq,payoff_gap,storage\n");
    let dist = traj.distance_series();
    let storage = traj.storage_series();
    let last = traj.len() - 1;
    for k in (0..traj.len()).filter(|&k| k % stride == 0 || k == last) {
        push_num(&mut out, traj.times()[k], true);
        for v in traj.x(k).iter().chain(traj.q(k)).chain(traj.p(k)) {
            push_num(&mut out, *v, false);
        }
        push_num(&mut out, dist.map_or(f64::NAN, |d| d[k]), false);
        push_num(&mut out, payoff_gap[k], false);
        push_num(&mut out, storage.map_or(f64::NAN, |s| s[k]), false);
        out.push('\n');
    }
    out
}

/// 17 significant digits.
fn push_num(out: &mut String, v: f64, first: bool) {
    if !first {
        out.push(',');
    }
    let _ = write!(out, "{v:.16e}");
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitPoint {
    pub point: Vec<f64>,
    pub runs: Vec<usize>,
    /// Distance to the nearest point of the equilibrium set.
    pub distance_to_eq: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub name: String,
    pub limit_points: Vec<LimitPoint>,
    pub terminal_states: Vec<Vec<f64>>,
    pub files: Vec<PathBuf>,
}

/// Groups terminal states greedily, in run order, within [`LIMIT_POINT_RADIUS`] of a group's first member.
pub fn cluster_limit_points(states: &[Vec<f64>], set: &EquilibriumSet) -> Vec<LimitPoint> {
    let mut groups: Vec<LimitPoint> = Vec::new();
    for (k, z) in states.iter().enumerate() {
        match groups.iter_mut().find(|g| sup_distance(&g.point, z) < LIMIT_POINT_RADIUS) {
            Some(g) => g.runs.push(k),
            None => groups.push(LimitPoint { point: z.clone(), runs: vec![k], distance_to_eq: set.distance(z) }),
        }
    }
    groups
}

/// Terminal states of every initial condition and their limit points.
pub fn sweep(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<SweepReport, CliError> {
    let setup = Setup::new(cfg)?;
    ctx.prepare()?;
    let finals = ctx.pool()?.install(|| {
        setup
            .initial
            .par_iter()
            .enumerate()
            .map(|(index, x0)| {
                let traj = simulate(cfg, &setup, x0).map_err(|e| e.context(&format!("run {index}")))?;
                let report = convergence_report(&traj, &setup.equilibria, setup.pdm.stationary_game())?;
                Ok((traj.final_state().into_vec(), report.terminal_distance, report.terminal_payoff_gap))
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;

    let n = setup.pdm.dim();
    let mut csv = String::from("index");
    for prefix in ["x0_", "xT_"] {
        for i in 1..=n {
            let _ = write!(csv, ",{prefix}{i}");
        }
    }
    csv.push_str(",dist_to_eq,payoff_gap\n");
    for (k, ((xt, dist, gap), x0)) in finals.iter().zip(&setup.initial).enumerate() {
        let _ = write!(csv, "{k}");
        for v in x0.entries().iter().chain(xt) {
            push_num(&mut csv, *v, false);
        }
        push_num(&mut csv, *dist, false);
        push_num(&mut csv, *gap, false);
        csv.push('\n');
    }
    let csv_path = ctx.path(cfg, "sweep.csv");
    fs::write(&csv_path, csv)?;

    let terminal_states: Vec<Vec<f64>> = finals.into_iter().map(|(x, _, _)| x).collect();
    let limit_points = cluster_limit_points(&terminal_states, &setup.equilibria);
    let json_path = ctx.path(cfg, "limits.json");
    let report =
        SweepReport { name: cfg.name.clone(), limit_points, terminal_states, files: vec![csv_path, json_path.clone()] };
    write_json(&json_path, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteRow {
    pub population: usize,
    pub seed: u64,
    pub sup_deviation: f64,
    pub terminal_distance_to_eq: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteReport {
    pub name: String,
    pub rho: f64,
    pub rows: Vec<FiniteRow>,
    pub file: PathBuf,
}

/// Overrides for the stochastic block given on the command line.
#[derive(Debug, Clone, Default)]
pub struct FiniteOverrides {
    pub populations: Option<Vec<usize>>,
    pub seeds: Option<u64>,
    pub horizon: Option<f64>,
}

/// Jump-process runs from the first initial condition for every (N, seed) pair,
/// compared against the mean closed loop over the same horizon.
pub fn finite(cfg: &ExperimentConfig, overrides: &FiniteOverrides, ctx: &RunContext) -> Result<FiniteReport, CliError> {
    let mut cfg = cfg.clone();
    let mut st =
        cfg.stochastic.clone().ok_or_else(|| CliError::Validation("finite: config has no stochastic block".into()))?;
    if let Some(p) = &overrides.populations {
        st.populations = p.clone();
    }
    if let Some(s) = overrides.seeds {
        st.seeds = s;
    }
    if overrides.horizon.is_some() {
        st.horizon = overrides.horizon;
    }
    cfg.stochastic = Some(st.clone());
    let setup = Setup::new(&cfg)?;
    let horizon = st.horizon.unwrap_or(cfg.integrator.horizon);
    let step = cfg.integrator.step.min(horizon);
    let x0 = &setup.initial[0];
    let q0 = cfg.initial_pdm_state(&setup.pdm, x0)?;
    let mean = integrate(&setup.pdm, &setup.protocol, x0, &q0, horizon, step)?;
    let rho = choose_rate_bound(&setup.protocol, &payoff_box_from(&mean), setup.pdm.game().mass())?;
    ctx.prepare()?;

    let mut jobs: Vec<(usize, u64)> = Vec::new();
    let mut populations = st.populations.clone();
    populations.sort_unstable();
    populations.dedup();
    for &n in &populations {
        for s in 0..st.seeds {
            jobs.push((n, st.base_seed + s));
        }
    }
    let rows = ctx.pool()?.install(|| {
        jobs.par_iter()
            .map(|&(population, seed)| {
                let jump = simulate_finite_population(
                    population,
                    &setup.protocol,
                    &setup.pdm,
                    x0,
                    &q0,
                    horizon,
                    step,
                    rho,
                    seed,
                )
                .map_err(|e| CliError::from(e).context(&format!("N = {population}, seed = {seed}")))?;
                Ok(FiniteRow {
                    population,
                    seed,
                    sup_deviation: sup_deviation(&jump, &mean)?,
                    terminal_distance_to_eq: setup.equilibria.distance(jump.final_state().entries()),
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;

    let mut csv = String::from("N,seed,sup_deviation,terminal_distance_to_eq\n");
    for r in &rows {
        let _ = write!(csv, "{},{}", r.population, r.seed);
        push_num(&mut csv, r.sup_deviation, false);
        push_num(&mut csv, r.terminal_distance_to_eq, false);
        csv.push('\n');
    }
    let file = ctx.path(&cfg, "finite.csv");
    fs::write(&file, csv)?;
    Ok(FiniteReport { name: cfg.name.clone(), rho, rows, file })
}

/// Convergence certificate for the config's protocol/PDM pair.
pub fn certify(cfg: &ExperimentConfig) -> Result<Certificate, CliError> {
    cfg.validate()?;
    let pdm = cfg.pdm_model()?;
    let protocol = cfg.protocol()?;
    Ok(certify_pdm(&pdm, &protocol, cfg.equilibrium_settings().grid_resolution)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriaReport {
    pub kind: EquilibriumKind,
    pub tolerance: f64,
    pub points: Vec<Vec<f64>>,
}

/// The set used as the convergence target.
pub fn equilibria(cfg: &ExperimentConfig) -> Result<EquilibriaReport, CliError> {
    cfg.validate()?;
    let pdm = cfg.pdm_model()?;
    let protocol = cfg.protocol()?;
    let set = equilibrium_set(cfg, &pdm, &protocol)?;
    Ok(EquilibriaReport {
        kind: set.kind(),
        tolerance: set.tolerance(),
        points: set.points().iter().map(|p| p.entries().to_vec()).collect(),
    })
}

/// Writes `value` as pretty JSON under the output directory.
pub fn write_artifact(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    suffix: &str,
    value: &impl Serialize,
) -> Result<PathBuf, CliError> {
    ctx.prepare()?;
    let path = ctx.path(cfg, suffix);
    write_json(&path, value)?;
    Ok(path)
}
