//! Side-by-side runs of the centralized solver, ADMM and LOOP-MAC on the
//! same windows: per-round timings, deviation curves, post-convergence
//! statistics and the CSV tables built from them.

mod tables;

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::admm::{
    metrics, run_admm, schedule_deviation, solve_centralized, AdmmConfig, AdmmError, CentralSolution, RoundTiming,
    TrajectoryLog, TrajectoryRecord,
};
use crate::gauge::{other_inputs, other_slots, GaugeError, GaugeNet, InferencePlan, Precision};
use crate::model::{ScenarioInput, VariableIndex, Vpp};
use crate::qp::QpSettings;

pub use tables::{
    mode_summary, write_curves_csv, write_post_convergence_csv, write_timing_csv, BenchSummary, ModeSummary,
    TimingRow,
};

/// Schedule deviation change below which a round counts as settled.
pub const CONVERGENCE_TOL: f64 = 1e-4;
/// Consecutive settled rounds needed to declare convergence.
pub const CONVERGENCE_WINDOW: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error(transparent)]
    Gauge(#[from] GaugeError),
    #[error("{0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("verification failed: {0}")]
    Verify(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Central,
    Admm,
    Loopmac,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Central => "central",
            Mode::Admm => "admm",
            Mode::Loopmac => "loopmac",
        }
    }
}

/// Population statistics of a series; all NaN when it is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stats {
    pub avg: f64,
    pub var: f64,
    pub max: f64,
    pub min: f64,
}

impl Stats {
    pub fn of(x: &[f64]) -> Self {
        if x.is_empty() {
            return Self {
                avg: f64::NAN,
                var: f64::NAN,
                max: f64::NAN,
                min: f64::NAN,
            };
        }
        let n = x.len() as f64;
        let avg = x.iter().sum::<f64>() / n;
        Self {
            avg,
            var: x.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>() / n,
            max: x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: x.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Round (1-based) at which the last `CONVERGENCE_WINDOW` changes of the
/// schedule deviation all stay below `CONVERGENCE_TOL`; the final round when
/// that never happens.
pub fn convergence_round(schedule: &[f64]) -> usize {
    let n = schedule.len();
    for k in CONVERGENCE_WINDOW..n {
        if (k + 1 - CONVERGENCE_WINDOW..=k).all(|j| (schedule[j] - schedule[j - 1]).abs() < CONVERGENCE_TOL) {
            return k + 1;
        }
    }
    n
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: Mode,
    pub scenario: String,
    pub seed: u64,
    pub rho: f64,
    pub iters: usize,
    pub horizon: usize,
    pub parallel_agents: bool,
    /// Arithmetic of the network layers; LOOP-MAC runs only.
    pub precision: Option<Precision>,
    /// Work done once per scenario before the first round, wall ns.
    pub setup_ns: u64,
    /// `[round][agent]` computation time: the primal solve for ADMM, the
    /// forward pass for LOOP-MAC, the whole solve for the central mode.
    pub compute_ns: Vec<Vec<u64>>,
    /// Wall time of each round including message handling.
    pub round_ns: Vec<u64>,
    /// Mean over agents of the optimality deviation on own variables.
    pub optimality: Vec<f64>,
    pub schedule: Vec<f64>,
    pub converged_at: usize,
    /// Statistics over rounds `converged_at..=iters`.
    pub post_optimality: Stats,
    pub post_schedule: Stats,
}

impl RunReport {
    fn finish(mut self) -> Self {
        self.converged_at = convergence_round(&self.schedule);
        let from = self.converged_at.max(1) - 1;
        self.post_optimality = Stats::of(&self.optimality[from..]);
        self.post_schedule = Stats::of(&self.schedule[from..]);
        self
    }

    /// Every number of the report except wall-clock measurements, in a
    /// form whose equality means bit-identical values.
    pub fn fingerprint(&self) -> String {
        let mut clean = self.clone();
        clean.setup_ns = 0;
        clean.compute_ns.clear();
        clean.round_ns.clear();
        let bits = |v: &[f64]| v.iter().map(|x| format!("{:016x}", x.to_bits())).collect::<Vec<_>>().join(",");
        let stats = |s: &Stats| bits(&[s.avg, s.var, s.max, s.min]);
        format!(
            "{}|{}|{}|{:016x}|{}|{}|{}|{:?}|{}|{}|{}|{}|{}",
            clean.mode.label(),
            clean.scenario,
            clean.seed,
            clean.rho.to_bits(),
            clean.iters,
            clean.horizon,
            clean.parallel_agents,
            clean.precision,
            bits(&clean.optimality),
            bits(&clean.schedule),
            clean.converged_at,
            stats(&clean.post_optimality),
            stats(&clean.post_schedule),
        )
    }
}

fn blank(mode: Mode, label: &str, seed: u64, rho: f64, iters: usize, scen: &ScenarioInput, parallel: bool) -> RunReport {
    let nan = Stats::of(&[]);
    RunReport {
        mode,
        scenario: label.to_string(),
        seed,
        rho,
        iters,
        horizon: scen.horizon.steps,
        parallel_agents: parallel,
        precision: None,
        setup_ns: 0,
        compute_ns: Vec::new(),
        round_ns: Vec::new(),
        optimality: Vec::new(),
        schedule: Vec::new(),
        converged_at: 0,
        post_optimality: nan,
        post_schedule: nan,
    }
}

fn outputs_of<'a>(locals: &'a [Vec<f64>], indices: &[VariableIndex]) -> Vec<&'a [f64]> {
    locals.iter().zip(indices).map(|(u, idx)| &u[idx.global_range()]).collect()
}

/// The centralized solve as a one-round run: deviation zero against itself.
pub fn central_run(vpp: &Vpp, scen: &ScenarioInput, label: &str, settings: QpSettings) -> Result<(RunReport, CentralSolution), BenchError> {
    let t0 = Instant::now();
    let central = solve_centralized(vpp, scen, settings)?;
    let ns = t0.elapsed().as_nanos() as u64;
    let indices = vpp.indices(scen.horizon.steps);
    let mut rep = blank(Mode::Central, label, 0, 0.0, 1, scen, false);
    rep.compute_ns = vec![vec![ns]];
    rep.round_ns = vec![ns];
    rep.optimality = vec![0.0];
    rep.schedule = vec![schedule_deviation(&outputs_of(&central.local, &indices), &scen.schedule)];
    Ok((rep.finish(), central))
}

fn report_from_log(mut rep: RunReport, log: &TrajectoryLog) -> Result<RunReport, BenchError> {
    let m = metrics(log)?;
    rep.compute_ns = log.timings.iter().map(|t| t.primal_ns.clone()).collect();
    rep.round_ns = log
        .timings
        .iter()
        .map(|t| {
            let busy = if rep.parallel_agents {
                t.agent_ns.iter().copied().max().unwrap_or(0)
            } else {
                t.agent_ns.iter().sum()
            };
            busy + t.coordination_ns
        })
        .collect();
    rep.optimality = m.mean_optimality;
    rep.schedule = m.schedule;
    Ok(rep.finish())
}

/// ADMM run from zero initial values, reported against the centralized
/// optimum.
pub fn admm_run(vpp: &Vpp, scen: &ScenarioInput, cfg: &AdmmConfig, label: &str, seed: u64) -> Result<(RunReport, TrajectoryLog), BenchError> {
    let t0 = Instant::now();
    let run = run_admm(vpp, scen, cfg, label)?;
    let total = t0.elapsed().as_nanos() as u64;
    let mut rep = blank(Mode::Admm, label, seed, cfg.rho, run.rounds, scen, cfg.parallel_agents);
    rep = report_from_log(rep, &run.log)?;
    rep.setup_ns = total.saturating_sub(rep.round_ns.iter().sum());
    Ok((rep, run.log))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopmacConfig {
    /// Rounds N_K.
    pub max_iter: usize,
    pub parallel_agents: bool,
    pub precision: Precision,
}

impl Default for LoopmacConfig {
    fn default() -> Self {
        Self {
            max_iter: 20,
            parallel_agents: false,
            precision: Precision::Single,
        }
    }
}

fn consensus_residual(idx: &VariableIndex, u: &[f64], locals: &[Vec<f64>], indices: &[VariableIndex]) -> f64 {
    let mut r = 0.0_f64;
    for (b, &j) in idx.neighbors().iter().enumerate() {
        let g = &locals[j][indices[j].global_range()];
        for (t, gt) in g.iter().enumerate() {
            r = r.max((u[idx.n_own() + b * idx.steps + t] - gt).abs());
        }
    }
    r
}

/// LOOP-MAC: the same synchronous rounds as ADMM, but each agent's round is
/// one forward pass of its net on the neighbors' previous outputs (zero
/// before the first round). Building the agents' polytopes and the feature
/// part of the first layer is timed as setup.
pub fn loopmac_run(
    nets: &[GaugeNet],
    vpp: &Vpp,
    scen: &ScenarioInput,
    central: &CentralSolution,
    cfg: &LoopmacConfig,
    label: &str,
    seed: u64,
) -> Result<(RunReport, TrajectoryLog), BenchError> {
    if cfg.max_iter == 0 {
        return Err(BenchError::Config("at least one round is required".into()));
    }
    if nets.len() != vpp.n_agents() {
        return Err(GaugeError::ShapeMismatch(format!("{} nets for {} agents", nets.len(), vpp.n_agents())).into());
    }
    let steps = scen.horizon.steps;
    let indices = vpp.indices(steps);
    let t_setup = Instant::now();
    let contexts = nets.iter().map(|n| n.context(vpp, scen)).collect::<Result<Vec<_>, _>>()?;
    let plans: Vec<_> = nets.iter().zip(&contexts).map(|(n, c)| InferencePlan::new(n, c, cfg.precision)).collect();
    let slots: Vec<_> = (0..nets.len()).map(|i| other_slots(&indices, i)).collect();
    let setup_ns = t_setup.elapsed().as_nanos() as u64;

    let n = nets.len();
    let mut log = TrajectoryLog::new(label, &scen.schedule, indices.iter().map(|i| i.n_own()).collect());
    log.reference = Some(central.local.clone());
    let mut locals: Vec<Vec<f64>> = indices.iter().map(|idx| vec![0.0; idx.len()]).collect();
    for k in 1..=cfg.max_iter {
        let t_round = Instant::now();
        let prev = &locals;
        let agent = |i: usize| -> Result<(Vec<f64>, u64), GaugeError> {
            let t0 = Instant::now();
            let other = other_inputs(&slots[i], prev);
            let u = plans[i].forward(&other)?;
            Ok((u, t0.elapsed().as_nanos() as u64))
        };
        let results: Vec<Result<(Vec<f64>, u64), GaugeError>> = if cfg.parallel_agents && n > 1 {
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..n).map(|i| s.spawn(move || agent(i))).collect();
                handles.into_iter().map(|h| h.join().expect("agent thread panicked")).collect()
            })
        } else {
            (0..n).map(agent).collect()
        };
        let mut next = Vec::with_capacity(n);
        let mut ns = Vec::with_capacity(n);
        for r in results {
            let (u, t) = r?;
            next.push(u);
            ns.push(t);
        }
        locals = next;
        let total = t_round.elapsed().as_nanos() as u64;
        let busy = if cfg.parallel_agents {
            ns.iter().copied().max().unwrap_or(0)
        } else {
            ns.iter().sum()
        };
        for (i, idx) in indices.iter().enumerate() {
            log.records.push(TrajectoryRecord {
                iteration: k,
                agent: i,
                residual: consensus_residual(idx, &locals[i], &locals, &indices),
                u: locals[i].clone(),
                lambda: Vec::new(),
            });
        }
        log.timings.push(RoundTiming {
            agent_ns: ns.clone(),
            primal_ns: ns,
            coordination_ns: total.saturating_sub(busy),
        });
    }
    let mut rep = blank(Mode::Loopmac, label, seed, 0.0, cfg.max_iter, scen, cfg.parallel_agents);
    rep.precision = Some(cfg.precision);
    let mut rep = report_from_log(rep, &log)?;
    rep.setup_ns = setup_ns;
    Ok((rep, log))
}

/// One window's three runs.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRuns {
    pub central: RunReport,
    pub admm: RunReport,
    pub loopmac: RunReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub admm: AdmmConfig,
    pub loopmac: LoopmacConfig,
    pub seed: u64,
}

/// Runs all three solvers on every `(label, scenario)`.
pub fn bench(
    vpp: &Vpp,
    nets: &[GaugeNet],
    windows: &[(String, ScenarioInput)],
    cfg: &BenchConfig,
) -> Result<Vec<WindowRuns>, BenchError> {
    let mut out = Vec::with_capacity(windows.len());
    for (label, scen) in windows {
        let (central, sol) = central_run(vpp, scen, label, cfg.admm.qp)?;
        let (admm, _) = admm_run(vpp, scen, &cfg.admm, label, cfg.seed)?;
        let (loopmac, _) = loopmac_run(nets, vpp, scen, &sol, &cfg.loopmac, label, cfg.seed)?;
        out.push(WindowRuns { central, admm, loopmac });
    }
    Ok(out)
}

/// Compares two bench results number by number, timings excluded.
pub fn verify_identical(a: &[WindowRuns], b: &[WindowRuns]) -> Result<usize, BenchError> {
    if a.len() != b.len() {
        return Err(BenchError::Verify(format!("{} windows vs {}", a.len(), b.len())));
    }
    let mut checked = 0;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in [(&x.central, &y.central), (&x.admm, &y.admm), (&x.loopmac, &y.loopmac)] {
            if p.fingerprint() != q.fingerprint() {
                return Err(BenchError::Verify(format!("{} run of {} differs", p.mode.label(), p.scenario)));
            }
            checked += 1;
        }
    }
    Ok(checked)
}
