//! Flat variable layout of each agent's local vector and the element
//! selectors that wire copies to the globals they mirror.

use super::{AgentSpec, ModelError};

/// Physical quantity carried by a block of `H` consecutive variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    FlexLoad,
    EssCharge,
    EssDischarge,
    /// State of charge at the end of each step.
    Soc,
    HvacPower,
    /// Indoor temperature at the end of each step.
    Temperature,
    PevPower,
    PvPower,
    NetPower,
}

impl Quantity {
    pub fn label(self) -> &'static str {
        match self {
            Quantity::FlexLoad => "p_fl",
            Quantity::EssCharge => "p_ess_c",
            Quantity::EssDischarge => "p_ess_d",
            Quantity::Soc => "soc",
            Quantity::HvacPower => "p_hvac",
            Quantity::Temperature => "t_hvac",
            Quantity::PevPower => "p_pev",
            Quantity::PvPower => "p_pv",
            Quantity::NetPower => "p_out",
        }
    }

    /// State-like quantities that are natural dependents of an equality row.
    pub fn is_state(self) -> bool {
        matches!(
            self,
            Quantity::Soc | Quantity::Temperature | Quantity::PvPower | Quantity::NetPower
        )
    }

    /// Quantities present for an agent, in canonical order.
    pub fn for_agent(spec: &AgentSpec) -> Vec<Quantity> {
        let mut q = Vec::new();
        if spec.flex_load.is_some() {
            q.push(Quantity::FlexLoad);
        }
        if spec.storage.is_some() {
            q.extend([Quantity::EssCharge, Quantity::EssDischarge, Quantity::Soc]);
        }
        if spec.hvac.is_some() {
            q.extend([Quantity::HvacPower, Quantity::Temperature]);
        }
        if spec.pev.is_some() {
            q.push(Quantity::PevPower);
        }
        if spec.pv.is_some() {
            q.push(Quantity::PvPower);
        }
        q.push(Quantity::NetPower);
        q
    }
}

/// Role of a local variable in the consensus decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Local,
    Global,
    /// Mirror of `owner`'s net power at step `t`.
    Copy { owner: usize, t: usize },
}

/// Which agents share coupling constraints with which.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Every agent neighbors every other one (a single shared schedule row).
    pub fn full_mesh(n: usize) -> Self {
        Self {
            neighbors: (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect(),
        }
    }

    pub fn from_neighbors(mut neighbors: Vec<Vec<usize>>) -> Result<Self, ModelError> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            for &j in list.iter() {
                if j >= n || j == i {
                    return Err(ModelError::TopologyInconsistent(format!(
                        "agent {i} copies agent {j}, which is not another agent"
                    )));
                }
            }
        }
        for i in 0..n {
            for &j in &neighbors[i] {
                if !neighbors[j].contains(&i) {
                    return Err(ModelError::TopologyInconsistent(format!(
                        "agent {i} lists {j} as neighbor but not vice versa"
                    )));
                }
            }
        }
        Ok(Self { neighbors })
    }

    pub fn n_agents(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn is_full_mesh(&self) -> bool {
        let n = self.n_agents();
        self.neighbors.iter().all(|l| l.len() + 1 == n)
    }
}

/// Map from (quantity, step) and (copied agent, step) to positions in one
/// agent's local vector `[own variables..., copies...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableIndex {
    pub agent: usize,
    pub steps: usize,
    quantities: Vec<Quantity>,
    neighbors: Vec<usize>,
}

impl VariableIndex {
    pub fn new(spec: &AgentSpec, steps: usize, topology: &Topology) -> Self {
        Self {
            agent: spec.id,
            steps,
            quantities: Quantity::for_agent(spec),
            neighbors: topology.neighbors(spec.id).to_vec(),
        }
    }

    pub fn quantities(&self) -> &[Quantity] {
        &self.quantities
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    /// Number of the agent's own variables (excluding copies).
    pub fn n_own(&self) -> usize {
        self.quantities.len() * self.steps
    }

    pub fn n_copies(&self) -> usize {
        self.neighbors.len() * self.steps
    }

    pub fn len(&self) -> usize {
        self.n_own() + self.n_copies()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn var(&self, q: Quantity, t: usize) -> Option<usize> {
        debug_assert!(t < self.steps);
        self.quantities
            .iter()
            .position(|&x| x == q)
            .map(|b| b * self.steps + t)
    }

    /// Position of the copy of `owner`'s net power at step `t`.
    pub fn copy(&self, owner: usize, t: usize) -> Option<usize> {
        self.neighbors
            .iter()
            .position(|&j| j == owner)
            .map(|b| self.n_own() + b * self.steps + t)
    }

    pub fn global_range(&self) -> std::ops::Range<usize> {
        let start = self.var(Quantity::NetPower, 0).expect("net power always present");
        start..start + self.steps
    }

    pub fn copy_range(&self) -> std::ops::Range<usize> {
        self.n_own()..self.len()
    }

    pub fn partition(&self, k: usize) -> Partition {
        assert!(k < self.len());
        if k >= self.n_own() {
            let off = k - self.n_own();
            Partition::Copy {
                owner: self.neighbors[off / self.steps],
                t: off % self.steps,
            }
        } else if self.global_range().contains(&k) {
            Partition::Global
        } else {
            Partition::Local
        }
    }

    /// Quantity and step of an own variable.
    pub fn describe(&self, k: usize) -> Option<(Quantity, usize)> {
        (k < self.n_own()).then(|| (self.quantities[k / self.steps], k % self.steps))
    }
}

/// Sparse 0/1 row selector: row `r` picks entry `picks[r]` of its domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectorMatrix {
    pub cols: usize,
    pub picks: Vec<usize>,
}

impl SelectorMatrix {
    pub fn rows(&self) -> usize {
        self.picks.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "selector domain mismatch");
        self.picks.iter().map(|&c| v[c]).collect()
    }

    /// Scatter-add `w` back onto the domain (the transpose product).
    pub fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(w.len(), self.rows());
        let mut out = vec![0.0; self.cols];
        for (&c, &x) in self.picks.iter().zip(w) {
            out[c] += x;
        }
        out
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.rows(), self.cols);
        for (r, &c) in self.picks.iter().enumerate() {
            m[(r, c)] = 1.0;
        }
        m
    }
}

/// Builds `(Ic, Ig)` for every agent.
///
/// `Ic[i]` acts on the concatenation of all other agents' global blocks (in
/// ascending agent order) and yields the values agent `i`'s copies must
/// equal. `Ig[i]` acts on the concatenation of all other agents' copy blocks
/// and yields the neighbors' copies of agent `i`'s globals, ordered by
/// (neighbor, step).
pub fn build_selectors(
    indices: &[VariableIndex],
) -> Result<(Vec<SelectorMatrix>, Vec<SelectorMatrix>), ModelError> {
    let n = indices.len();
    for (i, idx) in indices.iter().enumerate() {
        if idx.agent != i {
            return Err(ModelError::TopologyInconsistent(format!(
                "index {i} belongs to agent {}",
                idx.agent
            )));
        }
        for &j in idx.neighbors() {
            if j >= n || j == i {
                return Err(ModelError::TopologyInconsistent(format!(
                    "agent {i} holds a copy of agent {j}, which has no owner"
                )));
            }
            if indices[j].steps != idx.steps {
                return Err(ModelError::DimensionMismatch(format!(
                    "agents {i} and {j} use different horizons"
                )));
            }
        }
    }

    let mut ic = Vec::with_capacity(n);
    let mut ig = Vec::with_capacity(n);
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let h = indices[i].steps;

        // Offsets of each other agent's global block in the concatenation.
        let mut g_off = vec![usize::MAX; n];
        let mut c_off = vec![usize::MAX; n];
        let (mut gacc, mut cacc) = (0, 0);
        for &j in &others {
            g_off[j] = gacc;
            gacc += indices[j].steps;
            c_off[j] = cacc;
            cacc += indices[j].n_copies();
        }

        let picks_c = indices[i]
            .neighbors()
            .iter()
            .flat_map(|&j| (0..h).map(move |t| (j, t)))
            .map(|(j, t)| g_off[j] + t)
            .collect();
        ic.push(SelectorMatrix {
            cols: gacc,
            picks: picks_c,
        });

        let mut picks_g = Vec::with_capacity(indices[i].n_copies());
        for &j in indices[i].neighbors() {
            for t in 0..h {
                let pos = indices[j].copy(i, t).ok_or_else(|| {
                    ModelError::TopologyInconsistent(format!(
                        "agent {j} holds no copy of neighbor {i}"
                    ))
                })?;
                picks_g.push(c_off[j] + pos - indices[j].n_own());
            }
        }
        ig.push(SelectorMatrix {
            cols: cacc,
            picks: picks_g,
        });
    }
    Ok((ic, ig))
}
