//! Agent and device parameter records, the dispatch horizon, and the
//! exogenous per-window inputs.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Default bound on an agent's net output when the utility does not state one (kW).
pub const DEFAULT_NET_POWER_BOUND: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexLoadParams {
    /// Inconvenience coefficient, cost/(kW)^2.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageParams {
    pub p_max: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    /// Capacity in kWh.
    pub capacity: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    /// Unit maintenance cost per kW of charge or discharge.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvacParams {
    /// Thermal inertia factor.
    pub eps: f64,
    /// Coefficient of performance.
    pub cop: f64,
    /// Thermal conductivity, kW/degF.
    pub cond: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub p_max: f64,
    /// Discomfort cost per degF^2.
    pub alpha: f64,
}

impl HvacParams {
    /// Indoor temperature drop per kW of cooling, before the (1 - eps) factor.
    pub fn gain(&self) -> f64 {
        self.cop / self.cond
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PevParams {
    pub p_min: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvParams {
    /// Panel area, m^2.
    pub area: f64,
    pub eta: f64,
}

/// Static description of one agent and the DERs it controls. Every agent
/// carries an inflexible load; the remaining devices are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: usize,
    pub name: String,
    pub flex_load: Option<FlexLoadParams>,
    pub storage: Option<StorageParams>,
    pub hvac: Option<HvacParams>,
    pub pev: Option<PevParams>,
    pub pv: Option<PvParams>,
    pub p_out_min: f64,
    pub p_out_max: f64,
}

impl AgentSpec {
    pub fn new(id: usize, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
            flex_load: None,
            storage: None,
            hvac: None,
            pev: None,
            pv: None,
            p_out_min: -DEFAULT_NET_POWER_BOUND,
            p_out_max: DEFAULT_NET_POWER_BOUND,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| ModelError::InvalidParameter {
            agent: self.id,
            what: what.to_string(),
        };
        if self.p_out_min > self.p_out_max {
            return Err(ModelError::InfeasibleBounds {
                agent: self.id,
                what: "p_out_min > p_out_max".into(),
            });
        }
        if let Some(fl) = &self.flex_load {
            if !(fl.alpha >= 0.0) {
                return Err(bad("flex_load.alpha must be >= 0"));
            }
        }
        if let Some(s) = &self.storage {
            if !(s.eta_c > 0.0 && s.eta_c <= 1.0 && s.eta_d >= 1.0) {
                return Err(bad("storage efficiencies must satisfy 0 < eta_c <= 1 <= eta_d"));
            }
            if !(s.capacity > 0.0) {
                return Err(bad("storage.capacity must be > 0"));
            }
            if !(0.0 <= s.soc_min && s.soc_min < s.soc_max && s.soc_max <= 1.0) {
                return Err(bad("storage SoC bounds must satisfy 0 <= min < max <= 1"));
            }
            if !(s.p_max >= 0.0) {
                return Err(ModelError::InfeasibleBounds {
                    agent: self.id,
                    what: "storage.p_max < 0".into(),
                });
            }
            if !(s.alpha >= 0.0) {
                return Err(bad("storage.alpha must be >= 0"));
            }
        }
        if let Some(h) = &self.hvac {
            if !(0.0 <= h.eps && h.eps < 1.0) {
                return Err(bad("hvac.eps must lie in [0, 1)"));
            }
            if !(h.cond > 0.0 && h.cop > 0.0) {
                return Err(bad("hvac.cop and hvac.cond must be > 0"));
            }
            if !(h.t_min < h.t_max) {
                return Err(ModelError::InfeasibleBounds {
                    agent: self.id,
                    what: "hvac.t_min >= hvac.t_max".into(),
                });
            }
            if !(h.p_max >= 0.0) {
                return Err(ModelError::InfeasibleBounds {
                    agent: self.id,
                    what: "hvac.p_max < 0".into(),
                });
            }
            if !(h.alpha >= 0.0) {
                return Err(bad("hvac.alpha must be >= 0"));
            }
        }
        if let Some(p) = &self.pev {
            if p.p_min > p.p_max {
                return Err(ModelError::InfeasibleBounds {
                    agent: self.id,
                    what: "pev.p_min > pev.p_max".into(),
                });
            }
        }
        if let Some(pv) = &self.pv {
            if !(pv.area >= 0.0 && pv.eta >= 0.0) {
                return Err(bad("pv.area and pv.eta must be >= 0"));
            }
        }
        Ok(())
    }
}

/// The three-agent system of the case study, with the published device
/// constants. PEV power limits and the net-output bounds are not published;
/// they are set to 0..40 kW and +-200 kW.
pub fn reference_agents() -> Vec<AgentSpec> {
    let mut a1 = AgentSpec::new(0, "agent1");
    a1.flex_load = Some(FlexLoadParams { alpha: 0.1 });
    a1.storage = Some(StorageParams {
        p_max: 80.0,
        eta_c: 0.94,
        eta_d: 1.06,
        capacity: 300.0,
        soc_min: 0.15,
        soc_max: 0.85,
        alpha: 0.01,
    });

    let mut a2 = AgentSpec::new(1, "agent2");
    a2.pev = Some(PevParams {
        p_min: 0.0,
        p_max: 40.0,
    });

    let mut a3 = AgentSpec::new(2, "agent3");
    a3.hvac = Some(HvacParams {
        eps: 0.93,
        cop: 2.5,
        cond: 0.25,
        t_min: 75.0,
        t_max: 79.0,
        p_max: 11.5,
        alpha: 1.0,
    });
    a3.pv = Some(PvParams {
        area: 1000.0,
        eta: 0.2,
    });
    vec![a1, a2, a3]
}

/// A look-ahead window of `steps` intervals starting at day index `t_start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub t_start: usize,
    pub steps: usize,
    /// Interval length in hours.
    pub dt: f64,
}

impl Horizon {
    pub const FIVE_MINUTES: f64 = 5.0 / 60.0;

    pub fn new(t_start: usize, steps: usize) -> Self {
        Self {
            t_start,
            steps,
            dt: Self::FIVE_MINUTES,
        }
    }

    pub fn t_end(&self) -> usize {
        self.t_start + self.steps - 1
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.steps == 0 {
            return Err(ModelError::DimensionMismatch("horizon must have at least one step".into()));
        }
        if !(self.dt > 0.0) {
            return Err(ModelError::DimensionMismatch("horizon dt must be > 0".into()));
        }
        Ok(())
    }
}

/// Exogenous inputs of one agent over a window. Series that do not apply to
/// the agent's devices may be left empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AgentInput {
    pub inflexible_load: Vec<f64>,
    pub fl_min: Vec<f64>,
    pub fl_max: Vec<f64>,
    pub fl_ref: Vec<f64>,
    pub t_out: Vec<f64>,
    pub t_ref: Vec<f64>,
    pub occupied: Vec<f64>,
    /// Irradiance, kW/m^2.
    pub irradiance: Vec<f64>,
    /// PEV energy requirement rate per step, kW (energy = rate * dt).
    pub pev_energy: Vec<f64>,
    pub soc0: f64,
    pub t0: f64,
}

/// Inputs of all agents over one window plus the shared production schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInput {
    pub horizon: Horizon,
    pub schedule: Vec<f64>,
    pub agents: Vec<AgentInput>,
}

impl ScenarioInput {
    pub fn validate(&self, specs: &[AgentSpec]) -> Result<(), ModelError> {
        self.horizon.validate()?;
        let h = self.horizon.steps;
        if self.schedule.len() != h {
            return Err(ModelError::DimensionMismatch(format!(
                "schedule has {} samples, horizon {}",
                self.schedule.len(),
                h
            )));
        }
        if self.agents.len() != specs.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} agent inputs for {} agents",
                self.agents.len(),
                specs.len()
            )));
        }
        for (spec, inp) in specs.iter().zip(&self.agents) {
            inp.validate(spec, h)?;
        }
        Ok(())
    }
}

impl AgentInput {
    pub fn validate(&self, spec: &AgentSpec, h: usize) -> Result<(), ModelError> {
        let need = |name: &str, v: &[f64]| -> Result<(), ModelError> {
            if v.len() != h {
                Err(ModelError::DimensionMismatch(format!(
                    "agent {}: series {} has {} samples, horizon {}",
                    spec.id,
                    name,
                    v.len(),
                    h
                )))
            } else {
                Ok(())
            }
        };
        need("inflexible_load", &self.inflexible_load)?;
        if spec.flex_load.is_some() {
            need("fl_min", &self.fl_min)?;
            need("fl_max", &self.fl_max)?;
            need("fl_ref", &self.fl_ref)?;
            for t in 0..h {
                if self.fl_min[t] > self.fl_max[t] {
                    return Err(ModelError::InfeasibleBounds {
                        agent: spec.id,
                        what: format!("fl_min > fl_max at step {t}"),
                    });
                }
            }
        }
        if spec.hvac.is_some() {
            need("t_out", &self.t_out)?;
            need("t_ref", &self.t_ref)?;
            need("occupied", &self.occupied)?;
        }
        if spec.pv.is_some() {
            need("irradiance", &self.irradiance)?;
            if self.irradiance.iter().any(|&r| r < 0.0) {
                return Err(ModelError::InvalidParameter {
                    agent: spec.id,
                    what: "irradiance must be >= 0".into(),
                });
            }
        }
        if spec.pev.is_some() {
            need("pev_energy", &self.pev_energy)?;
        }
        Ok(())
    }
}
