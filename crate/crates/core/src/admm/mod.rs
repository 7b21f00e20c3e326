//! Synchronous consensus ADMM over the agents' local problems.
//!
//! Each round every agent publishes its previous iterate, then (all agents
//! at once) updates its multipliers and solves its augmented-Lagrangian QP
//! against the neighbors' frozen values.

mod log;
mod metrics;
mod transport;

use std::time::Instant;

use thiserror::Error;

use crate::model::{expand_to_local, CompactQP, ModelError, ScenarioInput, VariableIndex, Vpp};
use crate::qp::{QpError, QpProblem, QpSettings, QpSolver, QpStatus};

pub use log::{TrajectoryLog, TrajectoryRecord, LOG_HEADER};
pub use metrics::{metrics, optimality_deviation, schedule_deviation, MetricsReport};
pub use transport::{AgentMessage, CopyBlock, Mailbox, Transport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdmmError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("agent {agent}: message from agent {from} is tagged {got}, expected {expected}")]
    StaleMessage {
        agent: usize,
        from: usize,
        expected: usize,
        got: usize,
    },
    #[error("agent {agent}: no message from agent {from}")]
    MissingMessage { agent: usize, from: usize },
    #[error("agent {agent}: subproblem infeasible at iteration {iteration}")]
    SubproblemInfeasible { agent: usize, iteration: usize },
    #[error("agent {agent}: subproblem hit the solver iteration limit at iteration {iteration}")]
    SolverMaxIter { agent: usize, iteration: usize },
    #[error("centralized problem is infeasible")]
    CentralInfeasible,
    #[error("centralized solve hit the iteration limit ({0})")]
    CentralMaxIter(usize),
    #[error("trajectory log has no reference solution")]
    MissingReference,
    #[error("trajectory log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmConfig {
    pub rho: f64,
    /// Number of rounds N_K.
    pub max_iter: usize,
    /// Stop early once the consensus residual falls below this value.
    pub stop_tolerance: Option<f64>,
    /// Weight of the proximal term `(tau/2)|x - x_prev|^2` on each agent's
    /// globals and copies, as a multiple of `rho`. Zero gives the plain
    /// simultaneous update, which can diverge with three or more agents.
    pub proximal: f64,
    pub parallel_agents: bool,
    pub qp: QpSettings,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 0.0005,
            max_iter: 20,
            stop_tolerance: None,
            proximal: 0.5,
            parallel_agents: false,
            qp: QpSettings::default(),
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<(), AdmmError> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(AdmmError::InvalidConfig(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.proximal >= 0.0) || !self.proximal.is_finite() {
            return Err(AdmmError::InvalidConfig(format!("proximal weight must be >= 0, got {}", self.proximal)));
        }
        if self.max_iter == 0 {
            return Err(AdmmError::InvalidConfig("at least one iteration is required".into()));
        }
        Ok(())
    }
}

/// Iterate of one agent: local vector `[own, copies]` and one multiplier per
/// copy.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
    pub k: usize,
}

impl AgentState {
    pub fn zeros(idx: &VariableIndex) -> Self {
        Self {
            u: vec![0.0; idx.len()],
            lambda: vec![0.0; idx.n_copies()],
            k: 0,
        }
    }

    pub fn message(&self, idx: &VariableIndex) -> AgentMessage {
        let steps = idx.steps;
        let copy_blocks = idx
            .neighbors()
            .iter()
            .enumerate()
            .map(|(b, &owner)| {
                let start = idx.n_own() + b * steps;
                CopyBlock {
                    owner,
                    values: self.u[start..start + steps].to_vec(),
                    multipliers: self.lambda[b * steps..(b + 1) * steps].to_vec(),
                }
            })
            .collect();
        AgentMessage {
            sender: idx.agent,
            iteration: self.k,
            global_block: self.u[idx.global_range()].to_vec(),
            copy_blocks,
        }
    }
}

fn message_from<'a>(
    idx: &VariableIndex,
    inbox: &'a [AgentMessage],
    from: usize,
    expected: usize,
) -> Result<&'a AgentMessage, AdmmError> {
    let msg = inbox
        .iter()
        .find(|m| m.sender == from)
        .ok_or(AdmmError::MissingMessage { agent: idx.agent, from })?;
    if msg.iteration != expected {
        return Err(AdmmError::StaleMessage {
            agent: idx.agent,
            from,
            expected,
            got: msg.iteration,
        });
    }
    Ok(msg)
}

/// `lambda + rho * (copies - neighbor globals)` using round `k - 1` messages.
pub fn dual_update(
    idx: &VariableIndex,
    state: &AgentState,
    inbox: &[AgentMessage],
    rho: f64,
) -> Result<Vec<f64>, AdmmError> {
    let steps = idx.steps;
    let mut out = state.lambda.clone();
    for (b, &j) in idx.neighbors().iter().enumerate() {
        let msg = message_from(idx, inbox, j, state.k)?;
        if msg.global_block.len() != steps {
            return Err(AdmmError::Model(ModelError::DimensionMismatch(format!(
                "agent {j} sent {} globals for horizon {steps}",
                msg.global_block.len()
            ))));
        }
        for t in 0..steps {
            let copy = state.u[idx.n_own() + b * steps + t];
            out[b * steps + t] += rho * (copy - msg.global_block[t]);
        }
    }
    Ok(out)
}

/// Neighbors' view of this agent's globals: their copies and their
/// multipliers advanced to round `k`, one entry per neighbor that copies us.
fn neighbor_copies(
    idx: &VariableIndex,
    state: &AgentState,
    inbox: &[AgentMessage],
    rho: f64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, AdmmError> {
    let own = &state.u[idx.global_range()];
    let mut out = Vec::new();
    for msg in inbox {
        let Some(block) = msg.copies_of(idx.agent) else { continue };
        if msg.iteration != state.k {
            return Err(AdmmError::StaleMessage {
                agent: idx.agent,
                from: msg.sender,
                expected: state.k,
                got: msg.iteration,
            });
        }
        let lam: Vec<f64> = (0..idx.steps)
            .map(|t| block.multipliers[t] + rho * (block.values[t] - own[t]))
            .collect();
        out.push((block.values.clone(), lam));
    }
    Ok(out)
}

/// One agent: its local problem, a cached solver and its iterate.
pub struct AgentWorker {
    pub idx: VariableIndex,
    pub local: CompactQP,
    base: QpProblem,
    solver: QpSolver,
    pub state: AgentState,
}

impl AgentWorker {
    pub fn new(idx: VariableIndex, local: CompactQP, settings: QpSettings) -> Self {
        let base = local.to_qp();
        let state = AgentState::zeros(&idx);
        Self {
            idx,
            local,
            base,
            solver: QpSolver::new(settings),
            state,
        }
    }

    /// Builds the augmented-Lagrangian QP for round `k` from the already
    /// updated multipliers and the neighbors' frozen values.
    pub fn subproblem(
        &self,
        lambda: &[f64],
        inbox: &[AgentMessage],
        pulls: &[(Vec<f64>, Vec<f64>)],
        rho: f64,
        tau: f64,
    ) -> Result<QpProblem, AdmmError> {
        let idx = &self.idx;
        let steps = idx.steps;
        let mut p = self.base.clone();
        for (b, &j) in idx.neighbors().iter().enumerate() {
            let msg = message_from(idx, inbox, j, self.state.k)?;
            for t in 0..steps {
                let k = idx.n_own() + b * steps + t;
                p.q_diag[k] += 2.0 * rho;
                p.c[k] += lambda[b * steps + t] - 2.0 * rho * msg.global_block[t];
            }
        }
        let g0 = idx.global_range().start;
        for (copies, lam) in pulls {
            for t in 0..steps {
                p.q_diag[g0 + t] += 2.0 * rho;
                p.c[g0 + t] += -lam[t] - 2.0 * rho * copies[t];
            }
        }
        if tau > 0.0 {
            for k in idx.global_range().chain(idx.copy_range()) {
                p.q_diag[k] += tau;
                p.c[k] -= tau * self.state.u[k];
            }
        }
        Ok(p)
    }

    /// Dual update followed by the primal solve. Returns the primal solve
    /// time in nanoseconds.
    pub fn step(&mut self, inbox: &[AgentMessage], rho: f64, tau: f64) -> Result<u64, AdmmError> {
        let lambda = dual_update(&self.idx, &self.state, inbox, rho)?;
        let pulls = neighbor_copies(&self.idx, &self.state, inbox, rho)?;
        let p = self.subproblem(&lambda, inbox, &pulls, rho, tau)?;
        let iteration = self.state.k + 1;
        let t0 = Instant::now();
        let sol = self.solver.solve(&p)?;
        let ns = t0.elapsed().as_nanos() as u64;
        let agent = self.idx.agent;
        match sol.status {
            QpStatus::Optimal => {}
            QpStatus::Infeasible => return Err(AdmmError::SubproblemInfeasible { agent, iteration }),
            QpStatus::MaxIter => return Err(AdmmError::SolverMaxIter { agent, iteration }),
        }
        self.state = AgentState {
            u: sol.x,
            lambda,
            k: iteration,
        };
        Ok(ns)
    }

    /// `max |copies - neighbor globals|` against the given global blocks.
    pub fn consensus_residual(&self, globals: &[Vec<f64>]) -> f64 {
        let steps = self.idx.steps;
        let mut r = 0.0_f64;
        for (b, &j) in self.idx.neighbors().iter().enumerate() {
            for t in 0..steps {
                let copy = self.state.u[self.idx.n_own() + b * steps + t];
                r = r.max((copy - globals[j][t]).abs());
            }
        }
        r
    }

    pub fn objective(&self) -> f64 {
        self.local.objective(&self.state.u)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RoundTiming {
    /// Per-agent dual update plus primal solve, wall ns.
    pub agent_ns: Vec<u64>,
    /// Per-agent primal QP solve only, wall ns.
    pub primal_ns: Vec<u64>,
    /// Message assembly, delivery and residual bookkeeping, wall ns.
    pub coordination_ns: u64,
}

/// Coordinator for one scenario.
pub struct Admm {
    pub workers: Vec<AgentWorker>,
    pub cfg: AdmmConfig,
    topology: crate::model::Topology,
    transport: Box<dyn Transport>,
    k: usize,
}

impl Admm {
    pub fn new(vpp: &Vpp, scen: &ScenarioInput, cfg: AdmmConfig) -> Result<Self, AdmmError> {
        cfg.validate()?;
        let indices = vpp.indices(scen.horizon.steps);
        crate::model::build_selectors(&indices)?;
        let mut workers = Vec::with_capacity(indices.len());
        for (i, idx) in indices.into_iter().enumerate() {
            let local = crate::model::build_agent_local(&vpp.agents, i, scen, &idx, vpp.options)?;
            workers.push(AgentWorker::new(idx, local, cfg.qp));
        }
        Ok(Self {
            workers,
            cfg,
            topology: vpp.topology.clone(),
            transport: Box::new(Mailbox),
            k: 0,
        })
    }

    pub fn with_transport(mut self, transport: Box<dyn Transport>) -> Self {
        self.transport = transport;
        self
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    /// Overwrites every agent's iterate (all tagged with the current round).
    pub fn set_states(&mut self, states: Vec<AgentState>) {
        for (w, mut s) in self.workers.iter_mut().zip(states) {
            s.k = self.k;
            w.state = s;
        }
    }

    pub fn states(&self) -> Vec<AgentState> {
        self.workers.iter().map(|w| w.state.clone()).collect()
    }

    pub fn globals(&self) -> Vec<Vec<f64>> {
        self.workers
            .iter()
            .map(|w| w.state.u[w.idx.global_range()].to_vec())
            .collect()
    }

    pub fn consensus_residuals(&self) -> Vec<f64> {
        let g = self.globals();
        self.workers.iter().map(|w| w.consensus_residual(&g)).collect()
    }

    pub fn objective(&self) -> f64 {
        self.workers.iter().map(|w| w.objective()).sum()
    }

    /// One synchronized round: exchange, then every agent's dual and primal
    /// step against the same snapshot.
    pub fn round(&mut self) -> Result<RoundTiming, AdmmError> {
        let t_round = Instant::now();
        let outbox: Vec<AgentMessage> = self.workers.iter().map(|w| w.state.message(&w.idx)).collect();
        let inboxes = self.transport.exchange(outbox, &self.topology);
        let rho = self.cfg.rho;
        let tau = self.cfg.proximal * rho;
        let n = self.workers.len();
        let mut agent_ns = vec![0u64; n];
        let mut primal_ns = vec![0u64; n];
        let results: Vec<Result<(u64, u64), AdmmError>> = if self.cfg.parallel_agents && n > 1 {
            std::thread::scope(|s| {
                let handles: Vec<_> = self
                    .workers
                    .iter_mut()
                    .zip(&inboxes)
                    .map(|(w, inbox)| {
                        s.spawn(move || {
                            let t0 = Instant::now();
                            let p = w.step(inbox, rho, tau)?;
                            Ok((t0.elapsed().as_nanos() as u64, p))
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("agent thread panicked")).collect()
            })
        } else {
            self.workers
                .iter_mut()
                .zip(&inboxes)
                .map(|(w, inbox)| {
                    let t0 = Instant::now();
                    let p = w.step(inbox, rho, tau)?;
                    Ok((t0.elapsed().as_nanos() as u64, p))
                })
                .collect()
        };
        for (i, r) in results.into_iter().enumerate() {
            let (a, p) = r?;
            agent_ns[i] = a;
            primal_ns[i] = p;
        }
        self.k += 1;
        let total = t_round.elapsed().as_nanos() as u64;
        let busy = if self.cfg.parallel_agents {
            agent_ns.iter().copied().max().unwrap_or(0)
        } else {
            agent_ns.iter().sum()
        };
        Ok(RoundTiming {
            agent_ns,
            primal_ns,
            coordination_ns: total.saturating_sub(busy),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralSolution {
    pub u: Vec<f64>,
    pub objective: f64,
    /// Per-agent local vectors with copies set to the true neighbor outputs.
    pub local: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// The centralized oracle.
pub fn solve_centralized(
    vpp: &Vpp,
    scen: &ScenarioInput,
    settings: QpSettings,
) -> Result<CentralSolution, AdmmError> {
    let qp = vpp.centralized(scen)?;
    let sol = QpSolver::new(settings).solve(&qp.to_qp())?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(AdmmError::CentralInfeasible),
        QpStatus::MaxIter => return Err(AdmmError::CentralMaxIter(sol.iterations)),
    }
    let indices = vpp.indices(scen.horizon.steps);
    let local = expand_to_local(&sol.x, &vpp.agents, &indices);
    Ok(CentralSolution {
        objective: qp.objective(&sol.x),
        u: sol.x,
        local,
        iterations: sol.iterations,
    })
}

#[derive(Debug, Clone)]
pub struct AdmmRun {
    pub states: Vec<AgentState>,
    pub log: TrajectoryLog,
    pub central: CentralSolution,
    /// Rounds actually executed.
    pub rounds: usize,
    pub objective: f64,
}

/// Runs `cfg.max_iter` rounds (or until the consensus residual reaches the
/// stop tolerance) from zero initial values and records the trajectory
/// together with the centralized optimum.
pub fn run_admm(
    vpp: &Vpp,
    scen: &ScenarioInput,
    cfg: &AdmmConfig,
    label: &str,
) -> Result<AdmmRun, AdmmError> {
    let central = solve_centralized(vpp, scen, cfg.qp)?;
    let mut admm = Admm::new(vpp, scen, *cfg)?;
    let n_own = admm.workers.iter().map(|w| w.idx.n_own()).collect();
    let mut log = TrajectoryLog::new(label, &scen.schedule, n_own);
    log.reference = Some(central.local.clone());
    let mut rounds = 0;
    for _ in 0..cfg.max_iter {
        let timing = admm.round()?;
        rounds += 1;
        let res = admm.consensus_residuals();
        for (w, &r) in admm.workers.iter().zip(&res) {
            log.records.push(TrajectoryRecord {
                iteration: admm.iteration(),
                agent: w.idx.agent,
                residual: r,
                u: w.state.u.clone(),
                lambda: w.state.lambda.clone(),
            });
        }
        log.timings.push(timing);
        if let Some(tol) = cfg.stop_tolerance {
            if res.iter().all(|&r| r <= tol) {
                break;
            }
        }
    }
    Ok(AdmmRun {
        states: admm.states(),
        objective: admm.objective(),
        log,
        central,
        rounds,
    })
}
