//! Assembly of the dispatch problem into canonical dense QP form:
//! `min 1/2 u'Qu + c'u + k  s.t.  A u = b,  G u <= h`.

use nalgebra::{DMatrix, DVector};

use super::index::{Quantity, VariableIndex};
use super::{AgentInput, AgentSpec, ModelError, ScenarioInput};

/// Pivot tolerance for dropping linearly dependent equality rows.
pub const REDUNDANCY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelOptions {
    /// Integrate PEV charging power over the step length in the energy
    /// requirement (`sum P dt >= E`). When false the raw power sum is used.
    pub pev_energy_uses_dt: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            pev_energy_uses_dt: true,
        }
    }
}

/// Which physical relation a row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    SocRecursion,
    TempRecursion,
    PvOutput,
    NetPower,
    Schedule,
    FlexLoadRange,
    EssPower,
    SocRange,
    TempRange,
    HvacPower,
    PevPower,
    PevEnergy,
    NetPowerRange,
    CopyRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowTag {
    pub kind: RowKind,
    pub agent: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactQP {
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    /// Diagonal of the Hessian.
    pub q_diag: DVector<f64>,
    pub c: DVector<f64>,
    pub constant: f64,
    pub eq_tags: Vec<RowTag>,
    pub ineq_tags: Vec<RowTag>,
}

impl CompactQP {
    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, u: &[f64]) -> f64 {
        assert_eq!(u.len(), self.n_vars());
        let mut f = self.constant;
        for (k, &x) in u.iter().enumerate() {
            f += 0.5 * self.q_diag[k] * x * x + self.c[k] * x;
        }
        f
    }

    /// Largest equality and inequality violations at `u`.
    pub fn violations(&self, u: &[f64]) -> (f64, f64) {
        let u = DVector::from_column_slice(u);
        let eq = (&self.a_eq * &u - &self.b_eq).amax();
        let ineq = (&self.g * &u - &self.h)
            .iter()
            .fold(0.0_f64, |m, &v| m.max(v));
        (eq, ineq)
    }

    pub fn to_qp(&self) -> crate::qp::QpProblem {
        crate::qp::QpProblem {
            q_diag: self.q_diag.clone(),
            c: self.c.clone(),
            a_eq: self.a_eq.clone(),
            b_eq: self.b_eq.clone(),
            g: self.g.clone(),
            h: self.h.clone(),
        }
    }
}

struct Builder {
    n: usize,
    eq: Vec<(Vec<(usize, f64)>, f64, RowTag)>,
    ineq: Vec<(Vec<(usize, f64)>, f64, RowTag)>,
    q: Vec<f64>,
    c: Vec<f64>,
    constant: f64,
}

impl Builder {
    fn new(n: usize) -> Self {
        Self {
            n,
            eq: Vec::new(),
            ineq: Vec::new(),
            q: vec![0.0; n],
            c: vec![0.0; n],
            constant: 0.0,
        }
    }

    fn eq(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64, tag: RowTag) {
        self.eq.push((coeffs, rhs, tag));
    }

    fn le(&mut self, coeffs: Vec<(usize, f64)>, rhs: f64, tag: RowTag) {
        self.ineq.push((coeffs, rhs, tag));
    }

    /// `lo <= x <= hi` as two one-sided rows.
    fn range(&mut self, k: usize, lo: f64, hi: f64, tag: RowTag) {
        self.le(vec![(k, 1.0)], hi, tag);
        self.le(vec![(k, -1.0)], -lo, tag);
    }

    /// Adds `w (x - target)^2`.
    fn square(&mut self, k: usize, w: f64, target: f64) {
        self.q[k] += 2.0 * w;
        self.c[k] -= 2.0 * w * target;
        self.constant += w * target * target;
    }

    fn finish(self) -> Result<CompactQP, ModelError> {
        let dense = |rows: &[(Vec<(usize, f64)>, f64, RowTag)]| {
            let mut m = DMatrix::zeros(rows.len(), self.n);
            let mut b = DVector::zeros(rows.len());
            for (r, (coeffs, rhs, _)) in rows.iter().enumerate() {
                for &(k, v) in coeffs {
                    m[(r, k)] += v;
                }
                b[r] = *rhs;
            }
            (m, b)
        };
        let (a_eq, b_eq) = dense(&self.eq);
        let (g, h) = dense(&self.ineq);
        let (a_eq, b_eq, kept) = remove_redundant_rows(&a_eq, &b_eq)?;
        let eq_tags = kept.iter().map(|&r| self.eq[r].2).collect();
        Ok(CompactQP {
            a_eq,
            b_eq,
            g,
            h,
            q_diag: DVector::from_vec(self.q),
            c: DVector::from_vec(self.c),
            constant: self.constant,
            eq_tags,
            ineq_tags: self.ineq.iter().map(|r| r.2).collect(),
        })
    }
}

/// Drops equality rows that are linear combinations of earlier ones.
/// Returns the reduced system and the indices of the kept rows. Fails if a
/// dependent row is inconsistent with the rest.
pub fn remove_redundant_rows(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, Vec<usize>), ModelError> {
    let (m, n) = a.shape();
    // Reduce an augmented working copy row by row against the accepted basis.
    let mut basis: Vec<(DVector<f64>, f64, usize)> = Vec::new();
    let mut kept = Vec::new();
    for r in 0..m {
        let mut row: DVector<f64> = a.row(r).transpose();
        let mut rhs = b[r];
        let scale = row.amax().max(1.0);
        for (brow, brhs, piv) in &basis {
            let f = row[*piv] / brow[*piv];
            if f != 0.0 {
                row.axpy(-f, brow, 1.0);
                rhs -= f * brhs;
            }
        }
        let (piv, pval) = row
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |acc, (k, &v)| if v.abs() > acc.1 { (k, v.abs()) } else { acc });
        if pval <= REDUNDANCY_TOL * scale || n == 0 {
            if rhs.abs() > 1e-8 * (1.0 + b[r].abs()) {
                return Err(ModelError::InconsistentEqualities(format!(
                    "equality row {r} is dependent but its right-hand side disagrees by {rhs:e}"
                )));
            }
            continue;
        }
        basis.push((row, rhs, piv));
        kept.push(r);
    }
    let a_red = DMatrix::from_fn(kept.len(), n, |i, j| a[(kept[i], j)]);
    let b_red = DVector::from_fn(kept.len(), |i, _| b[kept[i]]);
    Ok((a_red, b_red, kept))
}

/// Emits one agent's device rows, net-power definition, output bounds and
/// cost terms, with variables located by `col`.
fn emit_agent(
    b: &mut Builder,
    spec: &AgentSpec,
    inp: &AgentInput,
    steps: usize,
    dt: f64,
    opts: ModelOptions,
    col: &dyn Fn(Quantity, usize) -> usize,
) {
    let tag = |kind, t| RowTag {
        kind,
        agent: spec.id,
        t,
    };
    for t in 0..steps {
        // Net output: P_O - P_PV - P_D + P_C + P_FL + P_HVAC + P_PEV = -P_IL.
        let mut net = vec![(col(Quantity::NetPower, t), 1.0)];
        if spec.pv.is_some() {
            net.push((col(Quantity::PvPower, t), -1.0));
        }
        if spec.storage.is_some() {
            net.push((col(Quantity::EssDischarge, t), -1.0));
            net.push((col(Quantity::EssCharge, t), 1.0));
        }
        if spec.flex_load.is_some() {
            net.push((col(Quantity::FlexLoad, t), 1.0));
        }
        if spec.hvac.is_some() {
            net.push((col(Quantity::HvacPower, t), 1.0));
        }
        if spec.pev.is_some() {
            net.push((col(Quantity::PevPower, t), 1.0));
        }
        b.eq(net, -inp.inflexible_load[t], tag(RowKind::NetPower, t));
        b.range(
            col(Quantity::NetPower, t),
            spec.p_out_min,
            spec.p_out_max,
            tag(RowKind::NetPowerRange, t),
        );
    }

    if let Some(fl) = &spec.flex_load {
        for t in 0..steps {
            let k = col(Quantity::FlexLoad, t);
            b.range(k, inp.fl_min[t], inp.fl_max[t], tag(RowKind::FlexLoadRange, t));
            b.square(k, fl.alpha, inp.fl_ref[t]);
        }
    }

    if let Some(s) = &spec.storage {
        let kc = s.eta_c * dt / s.capacity;
        let kd = dt / (s.eta_d * s.capacity);
        for t in 0..steps {
            let (c, d, soc) = (
                col(Quantity::EssCharge, t),
                col(Quantity::EssDischarge, t),
                col(Quantity::Soc, t),
            );
            b.range(c, 0.0, s.p_max, tag(RowKind::EssPower, t));
            b.range(d, 0.0, s.p_max, tag(RowKind::EssPower, t));
            // soc_t - soc_{t-1} - kc C + kd D = 0 (soc_{-1} is the initial state)
            let mut row = vec![(soc, 1.0), (c, -kc), (d, kd)];
            let rhs = if t == 0 {
                inp.soc0
            } else {
                row.push((col(Quantity::Soc, t - 1), -1.0));
                0.0
            };
            b.eq(row, rhs, tag(RowKind::SocRecursion, t));
            b.range(soc, s.soc_min, s.soc_max, tag(RowKind::SocRange, t));
            b.c[c] += s.alpha;
            b.c[d] += s.alpha;
        }
    }

    if let Some(hv) = &spec.hvac {
        let gain = (1.0 - hv.eps) * hv.gain();
        for t in 0..steps {
            let (p, temp) = (col(Quantity::HvacPower, t), col(Quantity::Temperature, t));
            // T_t - eps T_{t-1} + (1-eps) gain P_t = (1-eps) T_out
            let mut row = vec![(temp, 1.0), (p, gain)];
            let mut rhs = (1.0 - hv.eps) * inp.t_out[t];
            if t == 0 {
                rhs += hv.eps * inp.t0;
            } else {
                row.push((col(Quantity::Temperature, t - 1), -hv.eps));
            }
            b.eq(row, rhs, tag(RowKind::TempRecursion, t));
            b.range(temp, hv.t_min, hv.t_max, tag(RowKind::TempRange, t));
            b.range(p, 0.0, hv.p_max, tag(RowKind::HvacPower, t));
            b.square(temp, inp.occupied[t] * hv.alpha, inp.t_ref[t]);
        }
    }

    if let Some(pev) = &spec.pev {
        let weight = if opts.pev_energy_uses_dt { dt } else { 1.0 };
        let energy: f64 = inp.pev_energy.iter().map(|e| e * dt).sum();
        for t in 0..steps {
            b.range(
                col(Quantity::PevPower, t),
                pev.p_min,
                pev.p_max,
                tag(RowKind::PevPower, t),
            );
        }
        let row = (0..steps)
            .map(|t| (col(Quantity::PevPower, t), -weight))
            .collect();
        b.le(row, -energy, tag(RowKind::PevEnergy, 0));
    }

    if let Some(pv) = &spec.pv {
        for t in 0..steps {
            b.eq(
                vec![(col(Quantity::PvPower, t), 1.0)],
                inp.irradiance[t] * pv.area * pv.eta,
                tag(RowKind::PvOutput, t),
            );
        }
    }
}

/// Offsets of each agent's own block inside the centralized vector.
pub fn central_offsets(agents: &[AgentSpec], steps: usize) -> Vec<usize> {
    let mut off = Vec::with_capacity(agents.len() + 1);
    let mut acc = 0;
    for a in agents {
        off.push(acc);
        acc += Quantity::for_agent(a).len() * steps;
    }
    off.push(acc);
    off
}

/// The whole VPP as one QP over the concatenation of agents' own variables.
pub fn build_centralized(
    agents: &[AgentSpec],
    scen: &ScenarioInput,
    opts: ModelOptions,
) -> Result<CompactQP, ModelError> {
    for a in agents {
        a.validate()?;
    }
    scen.validate(agents)?;
    let steps = scen.horizon.steps;
    let off = central_offsets(agents, steps);
    let mut b = Builder::new(off[agents.len()]);
    for (i, a) in agents.iter().enumerate() {
        let quantities = Quantity::for_agent(a);
        let base = off[i];
        let col = |q: Quantity, t: usize| {
            base + quantities.iter().position(|&x| x == q).expect("quantity present") * steps + t
        };
        emit_agent(&mut b, a, &scen.agents[i], steps, scen.horizon.dt, opts, &col);
    }
    for t in 0..steps {
        let row = agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let qs = Quantity::for_agent(a);
                (off[i] + (qs.len() - 1) * steps + t, 1.0)
            })
            .collect();
        b.eq(
            row,
            scen.schedule[t],
            RowTag {
                kind: RowKind::Schedule,
                agent: usize::MAX,
                t,
            },
        );
    }
    b.finish()
}

/// One agent's local problem over `[own variables, copies]`: all device
/// rows, the local schedule row `P_O + sum of copies = P_sch`, bounds on the
/// copies taken from the owners' utility limits, and the agent's own cost.
pub fn build_agent_local(
    agents: &[AgentSpec],
    agent: usize,
    scen: &ScenarioInput,
    idx: &VariableIndex,
    opts: ModelOptions,
) -> Result<CompactQP, ModelError> {
    let spec = &agents[agent];
    spec.validate()?;
    scen.validate(agents)?;
    let steps = scen.horizon.steps;
    if idx.agent != agent || idx.steps != steps {
        return Err(ModelError::DimensionMismatch(
            "variable index does not match agent or horizon".into(),
        ));
    }
    if idx.neighbors().len() + 1 != agents.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "agent {agent} must copy every other agent's output for the schedule row"
        )));
    }
    let mut b = Builder::new(idx.len());
    let col = |q: Quantity, t: usize| idx.var(q, t).expect("quantity present");
    emit_agent(&mut b, spec, &scen.agents[agent], steps, scen.horizon.dt, opts, &col);
    for t in 0..steps {
        let mut row = vec![(col(Quantity::NetPower, t), 1.0)];
        for &j in idx.neighbors() {
            row.push((idx.copy(j, t).expect("copy present"), 1.0));
        }
        b.eq(
            row,
            scen.schedule[t],
            RowTag {
                kind: RowKind::Schedule,
                agent,
                t,
            },
        );
    }
    for &j in idx.neighbors() {
        for t in 0..steps {
            b.range(
                idx.copy(j, t).expect("copy present"),
                agents[j].p_out_min,
                agents[j].p_out_max,
                RowTag {
                    kind: RowKind::CopyRange,
                    agent,
                    t,
                },
            );
        }
    }
    b.finish()
}

/// Splits a centralized vector into agents' own blocks.
pub fn split_central(u: &[f64], agents: &[AgentSpec], steps: usize) -> Vec<Vec<f64>> {
    let off = central_offsets(agents, steps);
    (0..agents.len()).map(|i| u[off[i]..off[i + 1]].to_vec()).collect()
}

/// Expands a centralized vector into each agent's local vector, with every
/// copy set to the true value of the output it mirrors.
pub fn expand_to_local(u: &[f64], agents: &[AgentSpec], indices: &[VariableIndex]) -> Vec<Vec<f64>> {
    let steps = indices[0].steps;
    let own = split_central(u, agents, steps);
    indices
        .iter()
        .enumerate()
        .map(|(i, idx)| {
            let mut v = own[i].clone();
            for &j in idx.neighbors() {
                let g = indices[j].global_range();
                v.extend_from_slice(&own[j][g]);
            }
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reference_agents, Horizon, Topology};

    pub(crate) fn flat_scenario(h: usize) -> ScenarioInput {
        let mk = |v: f64| vec![v; h];
        let a1 = AgentInput {
            inflexible_load: mk(15.0),
            fl_min: mk(8.0),
            fl_max: mk(22.0),
            fl_ref: mk(15.0),
            soc0: 0.2,
            ..Default::default()
        };
        let a2 = AgentInput {
            inflexible_load: mk(12.0),
            pev_energy: mk(12.0),
            ..Default::default()
        };
        let a3 = AgentInput {
            inflexible_load: mk(14.0),
            t_out: mk(86.0),
            t_ref: mk(77.0),
            occupied: mk(1.0),
            irradiance: mk(0.3),
            t0: 77.0,
            ..Default::default()
        };
        ScenarioInput {
            horizon: Horizon::new(0, h),
            schedule: mk(-20.0),
            agents: vec![a1, a2, a3],
        }
    }

    fn row_of(qp: &CompactQP, kind: RowKind, agent: usize, t: usize) -> usize {
        qp.eq_tags
            .iter()
            .position(|g| g.kind == kind && g.agent == agent && g.t == t)
            .unwrap()
    }

    #[test]
    fn soc_recursion_row() {
        let agents = reference_agents();
        let scen = flat_scenario(1);
        let topo = Topology::full_mesh(3);
        let idx = VariableIndex::new(&agents[0], 1, &topo);
        let qp = build_agent_local(&agents, 0, &scen, &idx, ModelOptions::default()).unwrap();
        let r = row_of(&qp, RowKind::SocRecursion, 0, 0);
        // soc1 = soc0 + pC * etaC * dt / cap with pC = 60, pD = 0
        let c = idx.var(Quantity::EssCharge, 0).unwrap();
        let s = idx.var(Quantity::Soc, 0).unwrap();
        let soc1 = (qp.b_eq[r] - qp.a_eq[(r, c)] * 60.0) / qp.a_eq[(r, s)];
        assert!((soc1 - (0.2 + 60.0 * 0.94 * (1.0 / 12.0) / 300.0)).abs() < 1e-12);
        assert!((soc1 - 0.21567).abs() < 1e-5);
    }

    #[test]
    fn hvac_recursion_row() {
        let agents = reference_agents();
        let scen = flat_scenario(1);
        let topo = Topology::full_mesh(3);
        let idx = VariableIndex::new(&agents[2], 1, &topo);
        let qp = build_agent_local(&agents, 2, &scen, &idx, ModelOptions::default()).unwrap();
        let r = row_of(&qp, RowKind::TempRecursion, 2, 0);
        let p = idx.var(Quantity::HvacPower, 0).unwrap();
        let tv = idx.var(Quantity::Temperature, 0).unwrap();
        let next = (qp.b_eq[r] - qp.a_eq[(r, p)] * 2.0) / qp.a_eq[(r, tv)];
        assert!((next - 76.23).abs() < 1e-9, "{next}");
    }

    #[test]
    fn pv_row_fixes_output() {
        let agents = reference_agents();
        let scen = flat_scenario(1);
        let topo = Topology::full_mesh(3);
        let idx = VariableIndex::new(&agents[2], 1, &topo);
        let qp = build_agent_local(&agents, 2, &scen, &idx, ModelOptions::default()).unwrap();
        let r = row_of(&qp, RowKind::PvOutput, 2, 0);
        assert!((qp.b_eq[r] - 60.0).abs() < 1e-12);
    }

    #[test]
    fn local_schedule_row_coefficients() {
        let agents = reference_agents();
        let scen = flat_scenario(1);
        let topo = Topology::full_mesh(3);
        let idx = VariableIndex::new(&agents[0], 1, &topo);
        let qp = build_agent_local(&agents, 0, &scen, &idx, ModelOptions::default()).unwrap();
        let r = row_of(&qp, RowKind::Schedule, 0, 0);
        let po = idx.var(Quantity::NetPower, 0).unwrap();
        let c1 = idx.copy(1, 0).unwrap();
        let c2 = idx.copy(2, 0).unwrap();
        for k in 0..idx.len() {
            let want = if k == po || k == c1 || k == c2 { 1.0 } else { 0.0 };
            assert_eq!(qp.a_eq[(r, k)], want);
        }
        assert_eq!(qp.b_eq[r], scen.schedule[0]);
    }

    #[test]
    fn net_power_evaluation() {
        // pPv=60, pEssD=0, pEssC=10, pIL=15, pFL=12, pHvac=3, pPev=5 -> 15 kW
        let mut a = AgentSpec::new(0, "all");
        let full = reference_agents();
        a.flex_load = full[0].flex_load.clone();
        a.storage = full[0].storage.clone();
        a.pev = full[1].pev.clone();
        a.hvac = full[2].hvac.clone();
        a.pv = full[2].pv.clone();
        let h = 1;
        let inp = AgentInput {
            inflexible_load: vec![15.0],
            fl_min: vec![0.0],
            fl_max: vec![30.0],
            fl_ref: vec![12.0],
            t_out: vec![86.0],
            t_ref: vec![77.0],
            occupied: vec![1.0],
            irradiance: vec![0.3],
            pev_energy: vec![0.0],
            soc0: 0.5,
            t0: 77.0,
        };
        let scen = ScenarioInput {
            horizon: Horizon::new(0, h),
            schedule: vec![15.0],
            agents: vec![inp],
        };
        let qp = build_centralized(&[a.clone()], &scen, ModelOptions::default()).unwrap();
        let qs = Quantity::for_agent(&a);
        let pos = |q| qs.iter().position(|&x| x == q).unwrap();
        let r = row_of(&qp, RowKind::NetPower, 0, 0);
        let mut u = vec![0.0; qp.n_vars()];
        u[pos(Quantity::PvPower)] = 60.0;
        u[pos(Quantity::EssCharge)] = 10.0;
        u[pos(Quantity::FlexLoad)] = 12.0;
        u[pos(Quantity::HvacPower)] = 3.0;
        u[pos(Quantity::PevPower)] = 5.0;
        let k_o = pos(Quantity::NetPower);
        // solve the row for P_O
        let rest: f64 = (0..qp.n_vars()).filter(|&k| k != k_o).map(|k| qp.a_eq[(r, k)] * u[k]).sum();
        let p_o = (qp.b_eq[r] - rest) / qp.a_eq[(r, k_o)];
        assert!((p_o - 15.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_flex_load_forces_output() {
        let mut a = AgentSpec::new(0, "fl-only");
        a.flex_load = Some(crate::model::FlexLoadParams { alpha: 0.1 });
        let inp = AgentInput {
            inflexible_load: vec![20.0],
            fl_min: vec![10.0],
            fl_max: vec![10.0],
            fl_ref: vec![10.0],
            ..Default::default()
        };
        let scen = ScenarioInput {
            horizon: Horizon::new(0, 1),
            schedule: vec![-30.0],
            agents: vec![inp],
        };
        let qp = build_centralized(&[a], &scen, ModelOptions::default()).unwrap();
        let sol = crate::qp::solve(&qp.to_qp(), Default::default()).unwrap();
        assert_eq!(sol.status, crate::qp::QpStatus::Optimal);
        assert!((sol.x[1] + 30.0).abs() < 1e-7, "{}", sol.x[1]);
    }

    #[test]
    fn inequality_rows_are_one_sided_pairs() {
        let agents = reference_agents();
        let scen = flat_scenario(3);
        let qp = build_centralized(&agents, &scen, ModelOptions::default()).unwrap();
        // every range row appears twice (upper, then negated lower)
        let mut r = 0;
        while r < qp.ineq_tags.len() {
            if qp.ineq_tags[r].kind == RowKind::PevEnergy {
                r += 1;
                continue;
            }
            let up = qp.g.row(r).clone_owned();
            let lo = qp.g.row(r + 1).clone_owned();
            assert_eq!(up, -lo);
            assert_eq!(up.iter().filter(|&&x| x != 0.0).count(), 1);
            r += 2;
        }
    }

    #[test]
    fn redundant_rows_dropped() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let (ar, _, kept) = remove_redundant_rows(&a, &b).unwrap();
        assert_eq!(kept, vec![0, 2]);
        assert_eq!(ar.nrows(), 2);
        let b_bad = DVector::from_vec(vec![1.0, 3.0, 0.0]);
        assert!(remove_redundant_rows(&a, &b_bad).is_err());
    }

    #[test]
    fn assembly_is_deterministic_and_matrices_do_not_depend_on_inputs() {
        let agents = reference_agents();
        let s1 = flat_scenario(4);
        let mut s2 = s1.clone();
        s2.agents[0].fl_ref[2] = 19.0;
        s2.agents[2].t_out[1] = 90.0;
        s2.schedule[3] = -35.0;
        let q1 = build_centralized(&agents, &s1, ModelOptions::default()).unwrap();
        let q1b = build_centralized(&agents, &s1, ModelOptions::default()).unwrap();
        let q2 = build_centralized(&agents, &s2, ModelOptions::default()).unwrap();
        assert_eq!(q1, q1b);
        assert_eq!(q1.a_eq, q2.a_eq);
        assert_eq!(q1.g, q2.g);
        assert_ne!(q1.b_eq, q2.b_eq);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let agents = reference_agents();
        let mut scen = flat_scenario(3);
        scen.agents[1].pev_energy.pop();
        assert!(matches!(
            build_centralized(&agents, &scen, ModelOptions::default()),
            Err(ModelError::DimensionMismatch(_))
        ));
    }
}
