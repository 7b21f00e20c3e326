//! Day-long exogenous profiles, their windowing into dispatch horizons, and
//! the scenario directory format.

mod files;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentInput, AgentSpec, Horizon, ModelError, Quantity, ScenarioInput};

pub use files::{load_scenario, save_scenario, AGENTS_FILE, PROFILES_FILE, SCHEDULE_FILE};
pub use synth::{synthesize_day, synthesize_day_for, ranges};

/// Five-minute intervals in a day.
pub const STEPS_PER_DAY: usize = 288;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("{file}: parse error: {message}")]
    Parse { file: String, message: String },
    #[error("{file}: missing or invalid field `{field}`: {message}")]
    Schema {
        file: String,
        field: String,
        message: String,
    },
    #[error("{file}: row {row}, column {column}: {message}")]
    Range {
        file: String,
        row: usize,
        column: String,
        message: String,
    },
    #[error("window [{t_start}, {t_start}+{steps}) exceeds the {len}-step day")]
    OutOfRange { t_start: usize, steps: usize, len: usize },
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Initial storage and thermal state of an agent at a window start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub soc: f64,
    pub temperature: f64,
}

/// Full-day series for every agent plus the VPP schedule. Each agent's
/// `AgentInput` holds day-length series and the state at the start of day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayProfileSet {
    pub dt: f64,
    pub schedule: Vec<f64>,
    pub agents: Vec<AgentInput>,
}

fn window(v: &[f64], a: usize, b: usize) -> Vec<f64> {
    if v.is_empty() {
        Vec::new()
    } else {
        v[a..b].to_vec()
    }
}

impl DayProfileSet {
    pub fn len(&self) -> usize {
        self.schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.is_empty()
    }

    pub fn initial_states(&self) -> Vec<InitialState> {
        self.agents
            .iter()
            .map(|a| InitialState {
                soc: a.soc0,
                temperature: a.t0,
            })
            .collect()
    }

    /// Window `[t_start, t_start + steps)` with the start-of-day states.
    pub fn slice(&self, t_start: usize, steps: usize) -> Result<ScenarioInput, ScenarioError> {
        self.slice_with_states(t_start, steps, &self.initial_states())
    }

    /// Window `[t_start, t_start + steps)` starting from the given states.
    pub fn slice_with_states(
        &self,
        t_start: usize,
        steps: usize,
        states: &[InitialState],
    ) -> Result<ScenarioInput, ScenarioError> {
        let len = self.len();
        if steps == 0 || t_start + steps > len {
            return Err(ScenarioError::OutOfRange { t_start, steps, len });
        }
        if states.len() != self.agents.len() {
            return Err(ModelError::DimensionMismatch(format!(
                "{} initial states for {} agents",
                states.len(),
                self.agents.len()
            ))
            .into());
        }
        let b = t_start + steps;
        let agents = self
            .agents
            .iter()
            .zip(states)
            .map(|(a, s)| AgentInput {
                inflexible_load: window(&a.inflexible_load, t_start, b),
                fl_min: window(&a.fl_min, t_start, b),
                fl_max: window(&a.fl_max, t_start, b),
                fl_ref: window(&a.fl_ref, t_start, b),
                t_out: window(&a.t_out, t_start, b),
                t_ref: window(&a.t_ref, t_start, b),
                occupied: window(&a.occupied, t_start, b),
                irradiance: window(&a.irradiance, t_start, b),
                pev_energy: window(&a.pev_energy, t_start, b),
                soc0: s.soc,
                t0: s.temperature,
            })
            .collect();
        Ok(ScenarioInput {
            horizon: Horizon {
                t_start,
                steps,
                dt: self.dt,
            },
            schedule: self.schedule[t_start..b].to_vec(),
            agents,
        })
    }
}

/// States after the first step of a window, read from each agent's own
/// solution block; the start state of the next (one-step-later) window in a
/// rolling simulation. Agents without storage or HVAC keep their values.
pub fn chain_states(
    agents: &[AgentSpec],
    scen: &ScenarioInput,
    own: &[Vec<f64>],
) -> Vec<InitialState> {
    let steps = scen.horizon.steps;
    agents
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let qs = Quantity::for_agent(spec);
            let pick = |q: Quantity| qs.iter().position(|&x| x == q).map(|b| own[i][b * steps]);
            InitialState {
                soc: pick(Quantity::Soc).unwrap_or(scen.agents[i].soc0),
                temperature: pick(Quantity::Temperature).unwrap_or(scen.agents[i].t0),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_centralized, reference_agents, split_central, ModelOptions};
    use crate::qp::{solve, QpSettings};

    #[test]
    fn slices_have_horizon_length() {
        let day = synthesize_day(1);
        let s = day.slice(40, 12).unwrap();
        assert_eq!(s.schedule.len(), 12);
        for a in &s.agents {
            assert_eq!(a.inflexible_load.len(), 12);
        }
        assert_eq!(s.agents[2].t_out.len(), 12);
        assert_eq!(s.agents[1].pev_energy.len(), 12);
        assert_eq!(s.horizon.t_start, 40);
    }

    #[test]
    fn window_past_end_is_out_of_range() {
        let day = synthesize_day(1);
        assert!(matches!(day.slice(287, 12), Err(ScenarioError::OutOfRange { .. })));
        assert!(day.slice(276, 12).is_ok());
    }

    #[test]
    fn rolling_chain_carries_realized_state() {
        let agents = reference_agents();
        let day = synthesize_day(5);
        let mut states = day.initial_states();
        for t in 0..4 {
            let scen = day.slice_with_states(t, 12, &states).unwrap();
            let qp = build_centralized(&agents, &scen, ModelOptions::default()).unwrap();
            let x = solve(&qp.to_qp(), QpSettings::default()).unwrap().into_optimal().unwrap().x;
            let own = split_central(&x, &agents, 12);
            let next = chain_states(&agents, &scen, &own);
            // oracle: SoC after step 0 from the recursion, T from the thermal row
            let ess = agents[0].storage.as_ref().unwrap();
            let (c, d) = (own[0][12], own[0][24]);
            let soc1 = states[0].soc + scen.horizon.dt * (ess.eta_c * c - d / ess.eta_d) / ess.capacity;
            assert!((next[0].soc - soc1).abs() < 1e-7);
            let hv = agents[2].hvac.as_ref().unwrap();
            let p = own[2][0];
            let t1 = hv.eps * states[2].temperature + (1.0 - hv.eps) * (scen.agents[2].t_out[0] - hv.gain() * p);
            assert!((next[2].temperature - t1).abs() < 1e-7);
            let following = day.slice_with_states(t + 1, 12, &next).unwrap();
            assert_eq!(following.agents[0].soc0, next[0].soc);
            states = next;
        }
    }
}
