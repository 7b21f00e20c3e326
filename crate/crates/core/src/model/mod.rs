//! The multi-agent VPP dispatch model: agents, devices, variable layout and
//! QP assembly (centralized and per-agent with consensus copies).

mod assemble;
mod index;
mod params;

use thiserror::Error;

pub use assemble::{
    build_agent_local, build_centralized, central_offsets, expand_to_local, remove_redundant_rows,
    split_central, CompactQP, ModelOptions, RowKind, RowTag, REDUNDANCY_TOL,
};
pub use index::{build_selectors, Partition, Quantity, SelectorMatrix, Topology, VariableIndex};
pub use params::{
    reference_agents, AgentInput, AgentSpec, FlexLoadParams, Horizon, HvacParams, PevParams,
    PvParams, ScenarioInput, StorageParams, DEFAULT_NET_POWER_BOUND,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("agent {agent}: infeasible bounds ({what})")]
    InfeasibleBounds { agent: usize, what: String },
    #[error("agent {agent}: invalid parameter ({what})")]
    InvalidParameter { agent: usize, what: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("inconsistent topology: {0}")]
    TopologyInconsistent(String),
    #[error("inconsistent equality constraints: {0}")]
    InconsistentEqualities(String),
}

/// Agents, coupling topology and modelling options of one VPP.
#[derive(Debug, Clone, PartialEq)]
pub struct Vpp {
    pub agents: Vec<AgentSpec>,
    pub topology: Topology,
    pub options: ModelOptions,
}

impl Vpp {
    pub fn new(agents: Vec<AgentSpec>) -> Self {
        let topology = Topology::full_mesh(agents.len());
        Self {
            agents,
            topology,
            options: ModelOptions::default(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn indices(&self, steps: usize) -> Vec<VariableIndex> {
        self.agents
            .iter()
            .map(|a| VariableIndex::new(a, steps, &self.topology))
            .collect()
    }

    pub fn centralized(&self, scen: &ScenarioInput) -> Result<CompactQP, ModelError> {
        build_centralized(&self.agents, scen, self.options)
    }

    pub fn local(&self, agent: usize, scen: &ScenarioInput) -> Result<CompactQP, ModelError> {
        let idx = VariableIndex::new(&self.agents[agent], scen.horizon.steps, &self.topology);
        build_agent_local(&self.agents, agent, scen, &idx, self.options)
    }
}
