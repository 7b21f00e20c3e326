use std::hash::{Hash, Hasher};

use nalgebra::DMatrix;

use super::{Split, TrainError, TrainingSet};
use crate::gauge::{gauge_map, gauge_map_backward, other_slots, AgentContext, GaugeNet, Mlp, MlpCache};
use crate::model::Vpp;

/// Scenario data of one window in the form the loss consumes.
#[derive(Debug, Clone)]
pub struct PreparedWindow {
    pub contexts: Vec<AgentContext>,
    /// Per-agent centralized optimum (local layout).
    pub reference: Vec<Vec<f64>>,
    /// `entries[k][agent]`: local vectors that seed an unroll, `k = 0` being
    /// the all-zero start and `k >= 1` the recorded ADMM iterates.
    pub entries: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub windows: Vec<PreparedWindow>,
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    /// Input slots of each agent, see [`other_slots`].
    pub slots: Vec<Vec<(usize, usize)>>,
}

/// Builds reduced polytopes and unroll seeds for every window of `set`.
pub fn prepare(nets: &[GaugeNet], vpp: &Vpp, set: &TrainingSet) -> Result<Prepared, TrainError> {
    let indices = vpp.indices(set.steps);
    let mut windows = Vec::with_capacity(set.windows.len());
    for w in &set.windows {
        let contexts = nets
            .iter()
            .map(|n| n.context(vpp, &w.scenario))
            .collect::<Result<Vec<_>, _>>()?;
        let mut entries = vec![indices.iter().map(|idx| vec![0.0; idx.len()]).collect::<Vec<_>>()];
        for k in 1..set.n_iter {
            let row = (0..indices.len())
                .map(|i| {
                    w.log.record(k, i).map(|r| r.u.clone()).ok_or_else(|| {
                        TrainError::Dataset(format!("{}: no record for iteration {k}, agent {i}", w.log.scenario))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            entries.push(row);
        }
        windows.push(PreparedWindow {
            contexts,
            reference: w.reference().to_vec(),
            entries,
        });
    }
    Ok(Prepared {
        windows,
        train: set.points(Split::Train),
        test: set.points(Split::Test),
        slots: (0..indices.len()).map(|i| other_slots(&indices, i)).collect(),
    })
}

/// Sets every net's input standardization from the training points' unroll
/// seeds.
pub fn fit_scaling(nets: &mut [GaugeNet], prep: &Prepared) {
    for (i, net) in nets.iter_mut().enumerate() {
        let mut cols = Vec::with_capacity(prep.train.len());
        for &(d, k) in &prep.train {
            let w = &prep.windows[d];
            let mut x = w.contexts[i].features.clone();
            x.extend(prep.slots[i].iter().map(|&(j, s)| w.entries[k][j][s]));
            cols.push(nalgebra::DVector::from_vec(x));
        }
        if !cols.is_empty() {
            net.fit_scaling(&DMatrix::from_columns(&cols));
        }
    }
}

struct AgentStep {
    cache: MlpCache,
    /// Completed local vectors, one per sample.
    u: Vec<Vec<f64>>,
}

fn unroll(nets: &[GaugeNet], prep: &Prepared, items: &[(usize, usize)], n_r: usize) -> Result<Vec<Vec<AgentStep>>, TrainError> {
    let n = nets.len();
    let mut steps: Vec<Vec<AgentStep>> = Vec::with_capacity(n_r);
    for r in 0..n_r {
        let mut row = Vec::with_capacity(n);
        for (i, net) in nets.iter().enumerate() {
            let nf = net.n_features;
            let x = DMatrix::from_fn(net.n_inputs(), items.len(), |f, b| {
                let (d, k) = items[b];
                let w = &prep.windows[d];
                let raw = if f < nf {
                    w.contexts[i].features[f]
                } else {
                    let (j, s) = prep.slots[i][f - nf];
                    if r == 0 {
                        w.entries[k][j][s]
                    } else {
                        steps[r - 1][j].u[b][s]
                    }
                };
                (raw - net.mean[f]) / net.std[f]
            });
            let cache = net.mlp.forward_batch(x);
            let mut u = Vec::with_capacity(items.len());
            for (b, &(d, _)) in items.iter().enumerate() {
                let ctx = &prep.windows[d].contexts[i];
                let v = cache.out.column(b);
                if v.iter().any(|a| !a.is_finite()) {
                    return Err(TrainError::NonFiniteLoss);
                }
                let u_ind = gauge_map(&ctx.poly, v.as_slice())?;
                u.push(net.elimination().complete(&u_ind, &ctx.offset));
            }
            row.push(AgentStep { cache, u });
        }
        steps.push(row);
    }
    Ok(steps)
}

fn squared_error(steps: &[Vec<AgentStep>], prep: &Prepared, items: &[(usize, usize)]) -> f64 {
    let mut total = 0.0;
    for row in steps {
        for (i, st) in row.iter().enumerate() {
            for (b, &(d, _)) in items.iter().enumerate() {
                let r = &prep.windows[d].reference[i];
                total += st.u[b].iter().zip(r).map(|(a, c)| (a - c) * (a - c)).sum::<f64>();
            }
        }
    }
    total
}

/// Loss and parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Mean over the batch of `sum_r sum_i |u^{i(r)} - u^{i*}|^2`.
    pub loss: f64,
    pub grads: Vec<Mlp>,
}

/// Mean recurrent loss of `items` without gradients.
pub fn recurrent_loss_value(nets: &[GaugeNet], prep: &Prepared, items: &[(usize, usize)], n_r: usize) -> Result<f64, TrainError> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let steps = unroll(nets, prep, items, n_r)?;
    let loss = squared_error(&steps, prep, items) / items.len() as f64;
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }
    Ok(loss)
}

/// Recurrent look-ahead loss: every agent's net is unrolled `n_r` steps
/// from the recorded seed, step `r` reading its neighbors' step `r - 1`
/// outputs, and the squared distance to the optimum is summed over steps
/// and agents. Gradients flow back through the completion, the gauge map,
/// the MLP and, across steps, into the neighbors that produced the inputs.
pub fn recurrent_loss(nets: &[GaugeNet], prep: &Prepared, items: &[(usize, usize)], n_r: usize) -> Result<LossOutput, TrainError> {
    let n = nets.len();
    let mut grads: Vec<Mlp> = nets
        .iter()
        .map(|net| Mlp::zeros(net.n_inputs(), net.mlp.hidden(), net.mlp.n_out()))
        .collect();
    if items.is_empty() {
        return Ok(LossOutput { loss: 0.0, grads });
    }
    let steps = unroll(nets, prep, items, n_r)?;
    let scale = 1.0 / items.len() as f64;
    let loss = squared_error(&steps, prep, items) * scale;
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }
    // gradient on each agent's step-r outputs coming from step r + 1
    let zero_like = |steps: &Vec<AgentStep>| -> Vec<Vec<Vec<f64>>> {
        steps.iter().map(|s| s.u.iter().map(|u| vec![0.0; u.len()]).collect()).collect()
    };
    let mut carried = zero_like(&steps[n_r - 1]);
    for r in (0..n_r).rev() {
        let mut upstream = zero_like(&steps[r]);
        for i in 0..n {
            let net = &nets[i];
            let st = &steps[r][i];
            let mut dv = DMatrix::zeros(net.mlp.n_out(), items.len());
            for (b, &(d, _)) in items.iter().enumerate() {
                let w = &prep.windows[d];
                let g_u: Vec<f64> = st.u[b]
                    .iter()
                    .zip(&w.reference[i])
                    .zip(&carried[i][b])
                    .map(|((u, u_ref), c)| 2.0 * scale * (u - u_ref) + c)
                    .collect();
                let g_ind = net.elimination().pullback(&g_u);
                let v = st.cache.out.column(b);
                let g_v = gauge_map_backward(&w.contexts[i].poly, v.as_slice(), &g_ind);
                dv.set_column(b, &nalgebra::DVector::from_vec(g_v));
            }
            let nf = net.n_features;
            let from = if r > 0 { nf } else { net.mlp.n_in() };
            let dx = net.mlp.backward_batch(&st.cache, &dv, &mut grads[i], from);
            if r > 0 {
                for (s, &(j, k)) in prep.slots[i].iter().enumerate() {
                    let inv = 1.0 / net.std[nf + s];
                    for b in 0..items.len() {
                        upstream[j][b][k] += dx[(s, b)] * inv;
                    }
                }
            }
        }
        carried = upstream;
    }
    Ok(LossOutput { loss, grads })
}

/// Hash of every piecewise choice the loss makes (ReLU signs, gauge
/// argmaxes). Equal patterns at two parameter values mean the loss is
/// smooth on the segment between them, up to crossings in between.
pub fn kink_pattern(nets: &[GaugeNet], prep: &Prepared, items: &[(usize, usize)], n_r: usize) -> Result<u64, TrainError> {
    let steps = unroll(nets, prep, items, n_r)?;
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for row in &steps {
        for (i, st) in row.iter().enumerate() {
            for a in st.cache.pre.iter() {
                (*a > 0.0).hash(&mut h);
            }
            for (b, &(d, _)) in items.iter().enumerate() {
                let v = st.cache.out.column(b);
                let ib = v.iamax();
                ib.hash(&mut h);
                (v[ib] > 0.0).hash(&mut h);
                crate::gauge::psi_polytope_arg(&prep.windows[d].contexts[i].poly, v.as_slice())
                    .1
                    .hash(&mut h);
            }
        }
    }
    Ok(h.finish())
}
