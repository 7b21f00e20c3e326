use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gauge_map, EliminationMap, GaugeError, Mlp, ReducedLayout, ReducedPolytope, HIDDEN_UNITS};
use crate::model::{AgentInput, AgentSpec, ScenarioInput, VariableIndex, Vpp};

/// Exogenous features seen by one agent: the schedule, its inflexible load,
/// the series of the devices it owns, and its initial states.
pub fn agent_features(spec: &AgentSpec, inp: &AgentInput, schedule: &[f64]) -> Vec<f64> {
    let mut f = schedule.to_vec();
    f.extend_from_slice(&inp.inflexible_load);
    if spec.flex_load.is_some() {
        f.extend_from_slice(&inp.fl_min);
        f.extend_from_slice(&inp.fl_max);
        f.extend_from_slice(&inp.fl_ref);
    }
    if spec.storage.is_some() {
        f.push(inp.soc0);
    }
    if spec.hvac.is_some() {
        f.extend_from_slice(&inp.t_out);
        f.extend_from_slice(&inp.t_ref);
        f.extend_from_slice(&inp.occupied);
        f.push(inp.t0);
    }
    if spec.pev.is_some() {
        f.extend_from_slice(&inp.pev_energy);
    }
    if spec.pv.is_some() {
        f.extend_from_slice(&inp.irradiance);
    }
    f
}

/// Positions, in the neighbors' local vectors, of the values agent `i`
/// receives: for each neighbor `j` in ascending order, `j`'s net power and
/// then `j`'s copies of `i`'s net power, each by time.
pub fn other_slots(indices: &[VariableIndex], i: usize) -> Vec<(usize, usize)> {
    let mut slots = Vec::new();
    for &j in indices[i].neighbors() {
        for k in indices[j].global_range() {
            slots.push((j, k));
        }
        for t in 0..indices[i].steps {
            slots.push((j, indices[j].copy(i, t).expect("full mesh")));
        }
    }
    slots
}

/// Neighbor values for agent `i` read from every agent's local vector.
pub fn other_inputs(slots: &[(usize, usize)], locals: &[Vec<f64>]) -> Vec<f64> {
    slots.iter().map(|&(j, k)| locals[j][k]).collect()
}

/// Per-scenario data of one agent: raw features, the reduced polytope and
/// the elimination offset.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentContext {
    pub features: Vec<f64>,
    pub poly: ReducedPolytope,
    pub offset: DVector<f64>,
}

/// Neural approximator of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeNet {
    pub agent: usize,
    pub steps: usize,
    pub layout: ReducedLayout,
    pub mlp: Mlp,
    /// Standardization of the input vector `[features, neighbor values]`.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_features: usize,
}

impl GaugeNet {
    /// Layout from the agent's local problem on `template` (the structure
    /// does not depend on the scenario values) and seeded random weights.
    pub fn new(vpp: &Vpp, template: &ScenarioInput, agent: usize, seed: u64) -> Result<Self, GaugeError> {
        let steps = template.horizon.steps;
        let indices = vpp.indices(steps);
        let local = vpp.local(agent, template)?;
        let elim = EliminationMap::for_agent(&local.a_eq, &indices[agent])?;
        let layout = ReducedLayout::new(elim, &local.g);
        let n_features = agent_features(&vpp.agents[agent], &template.agents[agent], &template.schedule).len();
        let n_in = n_features + other_slots(&indices, agent).len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(agent as u64));
        let mlp = Mlp::new(n_in, HIDDEN_UNITS, layout.dim(), &mut rng);
        Ok(Self {
            agent,
            steps,
            layout,
            mlp,
            mean: vec![0.0; n_in],
            std: vec![1.0; n_in],
            n_features,
        })
    }

    /// One net per agent, seeded from `seed`.
    pub fn for_vpp(vpp: &Vpp, template: &ScenarioInput, seed: u64) -> Result<Vec<Self>, GaugeError> {
        (0..vpp.n_agents()).map(|i| Self::new(vpp, template, i, seed)).collect()
    }

    pub fn n_inputs(&self) -> usize {
        self.mlp.n_in()
    }

    pub fn n_other(&self) -> usize {
        self.n_inputs() - self.n_features
    }

    pub fn elimination(&self) -> &EliminationMap {
        &self.layout.elimination
    }

    /// Sets the standardization from sample inputs (one per column). A
    /// feature with no spread is centered only.
    pub fn fit_scaling(&mut self, samples: &DMatrix<f64>) {
        let n = samples.ncols().max(1) as f64;
        for r in 0..samples.nrows() {
            let row = samples.row(r);
            let mean = row.sum() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            self.mean[r] = mean;
            self.std[r] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        }
    }

    pub fn context(&self, vpp: &Vpp, scen: &ScenarioInput) -> Result<AgentContext, GaugeError> {
        if scen.horizon.steps != self.steps {
            return Err(GaugeError::ShapeMismatch(format!(
                "net built for {} steps, scenario has {}",
                self.steps, scen.horizon.steps
            )));
        }
        let local = vpp.local(self.agent, scen)?;
        let features = agent_features(&vpp.agents[self.agent], &scen.agents[self.agent], &scen.schedule);
        if features.len() != self.n_features {
            return Err(GaugeError::ShapeMismatch(format!(
                "{} features, net expects {}",
                features.len(),
                self.n_features
            )));
        }
        Ok(AgentContext {
            features,
            poly: self.layout.polytope(&local.b_eq, &local.h)?,
            offset: self.layout.elimination.offset(&local.b_eq),
        })
    }

    /// Standardized network input.
    pub fn input(&self, ctx: &AgentContext, u_other: &[f64]) -> Result<DVector<f64>, GaugeError> {
        if u_other.len() != self.n_other() {
            return Err(GaugeError::ShapeMismatch(format!(
                "{} neighbor values, net expects {}",
                u_other.len(),
                self.n_other()
            )));
        }
        Ok(DVector::from_iterator(
            self.n_inputs(),
            ctx.features
                .iter()
                .chain(u_other)
                .enumerate()
                .map(|(k, x)| (x - self.mean[k]) / self.std[k]),
        ))
    }

    /// Full local vector `[own variables, copies]` predicted for `ctx`
    /// given the neighbors' values.
    pub fn forward(&self, ctx: &AgentContext, u_other: &[f64]) -> Result<Vec<f64>, GaugeError> {
        let x = self.input(ctx, u_other)?;
        let v = self.mlp.forward(&x);
        self.complete(ctx, &v)
    }

    pub(super) fn complete(&self, ctx: &AgentContext, v: &DVector<f64>) -> Result<Vec<f64>, GaugeError> {
        if v.iter().any(|a| !a.is_finite()) {
            return Err(GaugeError::NonFiniteActivation);
        }
        let u_ind = gauge_map(&ctx.poly, v.as_slice())?;
        Ok(self.layout.elimination.complete(&u_ind, &ctx.offset))
    }
}

fn scenario_key(scen: &ScenarioInput) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    let mut put = |v: &[f64]| {
        v.len().hash(&mut h);
        for x in v {
            x.to_bits().hash(&mut h);
        }
    };
    put(&scen.schedule);
    for a in &scen.agents {
        for s in [
            &a.inflexible_load,
            &a.fl_min,
            &a.fl_max,
            &a.fl_ref,
            &a.t_out,
            &a.t_ref,
            &a.occupied,
            &a.irradiance,
            &a.pev_energy,
        ] {
            put(s);
        }
        put(&[a.soc0, a.t0]);
    }
    put(&[scen.horizon.dt]);
    h.finish()
}

/// Agent contexts keyed by a hash of the scenario values.
#[derive(Debug, Default)]
pub struct ContextCache {
    entries: HashMap<u64, Arc<Vec<AgentContext>>>,
}

impl ContextCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&mut self, nets: &[GaugeNet], vpp: &Vpp, scen: &ScenarioInput) -> Result<Arc<Vec<AgentContext>>, GaugeError> {
        let key = scenario_key(scen);
        if let Some(c) = self.entries.get(&key) {
            return Ok(c.clone());
        }
        let ctx: Vec<AgentContext> = nets.iter().map(|n| n.context(vpp, scen)).collect::<Result<_, _>>()?;
        let ctx = Arc::new(ctx);
        self.entries.insert(key, ctx.clone());
        Ok(ctx)
    }
}
