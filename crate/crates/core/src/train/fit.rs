use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{recurrent_loss, recurrent_loss_value, Prepared, TrainError};
use crate::gauge::{GaugeNet, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain mini-batch gradient descent.
    Sgd,
    /// Adam with the usual moment decay rates.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Unroll length N_R.
    pub recurrent_steps: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// The step size follows a cosine from `learning_rate` down to this
    /// fraction of it at the last epoch; 1 keeps it constant.
    pub final_lr_fraction: f64,
    pub batch_size: usize,
    /// A batch gradient whose norm exceeds this multiple of the running
    /// mean norm is rescaled down to it. `None` disables clipping.
    pub clip_factor: Option<f64>,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            recurrent_steps: 3,
            epochs: 500,
            learning_rate: 1e-3,
            final_lr_fraction: 0.01,
            batch_size: 64,
            clip_factor: Some(2.0),
            seed: 7,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.recurrent_steps == 0 {
            return Err(TrainError::Config("at least one recurrent step is required".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(TrainError::Config(format!(
                "final learning-rate fraction must be in (0, 1], got {}",
                self.final_lr_fraction
            )));
        }
        if let Some(c) = self.clip_factor {
            if !(c >= 1.0 && c.is_finite()) {
                return Err(TrainError::Config(format!("clip factor must be at least 1, got {c}")));
            }
        }
        Ok(())
    }

    /// Step size used during `epoch` (1-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let span = self.epochs.saturating_sub(1).max(1) as f64;
        let progress = (epoch.saturating_sub(1) as f64 / span).min(1.0);
        let f = self.final_lr_fraction + (1.0 - self.final_lr_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.learning_rate * f
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Epoch 0 holds the losses of the initial weights.
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_test: f64,
    /// Epochs after which training restarted from the best weights.
    pub recoveries: Vec<usize>,
}

/// Blow-ups survived by restarting from the best weights before training
/// gives up with `Diverged`.
pub const MAX_RECOVERIES: usize = 4;
/// Step-size factor applied at every recovery.
pub const RECOVERY_LR_FACTOR: f64 = 0.5;

pub fn write_curve_csv<W: Write>(curve: &[EpochStats], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_loss", "test_loss", "wall_time"])?;
    for s in curve {
        out.write_record([
            s.epoch.to_string(),
            s.train_loss.to_string(),
            s.test_loss.to_string(),
            s.wall_time.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Mean loss over `items`, evaluated in chunks.
pub fn evaluate(nets: &[GaugeNet], prep: &Prepared, items: &[(usize, usize)], n_r: usize) -> Result<f64, TrainError> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for chunk in items.chunks(256) {
        total += recurrent_loss_value(nets, prep, chunk, n_r)? * chunk.len() as f64;
    }
    Ok(total / items.len() as f64)
}

fn grad_norm(grads: &[Mlp]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.params())
        .map(|p| p.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn scale_grads(grads: &mut [Mlp], s: f64) {
    for g in grads {
        for p in g.params_mut() {
            p.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Running mean of batch gradient norms used as the clipping reference.
struct Clipper {
    factor: f64,
    mean: f64,
    seen: usize,
}

impl Clipper {
    const DECAY: f64 = 0.99;

    fn apply(&mut self, grads: &mut [Mlp]) {
        let norm = grad_norm(grads);
        if !(norm > 0.0) {
            return;
        }
        let mut used = norm;
        if self.seen > 0 {
            let cap = self.factor * self.mean;
            if norm > cap {
                scale_grads(grads, cap / norm);
                used = cap;
            }
        }
        // bias-corrected exponential mean of the norms actually applied
        self.seen += 1;
        let w = (1.0 - Self::DECAY) / (1.0 - Self::DECAY.powi(self.seen as i32));
        self.mean += w * (used - self.mean);
    }
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

fn step(nets: &mut [GaugeNet], grads: &[Mlp], optimizer: Optimizer, lr: f64, adam: &mut [AdamState]) {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    for ((net, g), st) in nets.iter_mut().zip(grads).zip(adam.iter_mut()) {
        st.t += 1;
        let (c1, c2) = (1.0 - B1.powi(st.t), 1.0 - B2.powi(st.t));
        for (b, (p, gb)) in net.mlp.params_mut().into_iter().zip(g.params()).enumerate() {
            match optimizer {
                Optimizer::Sgd => {
                    for (x, d) in p.iter_mut().zip(gb) {
                        *x -= lr * d;
                    }
                }
                Optimizer::Adam => {
                    let (m, v) = (&mut st.m[b], &mut st.v[b]);
                    for k in 0..p.len() {
                        m[k] = B1 * m[k] + (1.0 - B1) * gb[k];
                        v[k] = B2 * v[k] + (1.0 - B2) * gb[k] * gb[k];
                        p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + EPS);
                    }
                }
            }
        }
    }
}

/// Joint mini-batch training of all agents' nets on the recurrent loss.
/// Batches are reshuffled every epoch from the seed. On return the nets
/// hold the weights with the lowest test loss seen (the initial weights
/// count as epoch 0).
///
/// When the training loss grows tenfold over ten epochs, the nets restart
/// from the best weights with fresh optimizer state and a halved step size;
/// after `MAX_RECOVERIES` such restarts the next blow-up fails with
/// `Diverged`.
pub fn train(nets: &mut [GaugeNet], prep: &Prepared, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    train_with(nets, prep, cfg, |_| {})
}

/// [`train`] with a callback after every epoch (epoch 0 included).
pub fn train_with(
    nets: &mut [GaugeNet],
    prep: &Prepared,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if prep.train.is_empty() {
        return Err(TrainError::Config("empty training split".into()));
    }
    let start = Instant::now();
    let n_r = cfg.recurrent_steps;
    let test_of = |nets: &[GaugeNet]| -> Result<f64, TrainError> {
        if prep.test.is_empty() {
            Ok(f64::NAN)
        } else {
            evaluate(nets, prep, &prep.test, n_r)
        }
    };
    let initial = EpochStats {
        epoch: 0,
        train_loss: evaluate(nets, prep, &prep.train, n_r)?,
        test_loss: test_of(nets)?,
        wall_time: start.elapsed().as_secs_f64(),
    };
    on_epoch(&initial);
    let mut curve = vec![initial];
    let mut best = (0, initial.test_loss, nets.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = prep.train.clone();
    let fresh = |nets: &[GaugeNet]| -> Vec<AdamState> {
        nets.iter()
            .map(|n| {
                let z: Vec<Vec<f64>> = n.mlp.params().iter().map(|p| vec![0.0; p.len()]).collect();
                AdamState { m: z.clone(), v: z, t: 0 }
            })
            .collect()
    };
    let mut adam = fresh(nets);
    let mut lr_scale = 1.0;
    let mut recoveries = Vec::new();
    let mut clipper = cfg.clip_factor.map(|factor| Clipper {
        factor,
        mean: 0.0,
        seen: 0,
    });
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let lr = lr_scale * cfg.learning_rate_at(epoch);
        let mut sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut out = match recurrent_loss(nets, prep, batch, n_r) {
                Ok(out) => out,
                Err(TrainError::NonFiniteLoss) => {
                    sum = f64::INFINITY;
                    break;
                }
                Err(e) => return Err(e),
            };
            sum += out.loss * batch.len() as f64;
            if let Some(c) = clipper.as_mut() {
                c.apply(&mut out.grads);
            }
            step(nets, &out.grads, cfg.optimizer, lr, &mut adam);
        }
        if nets.iter().any(|n| !n.mlp.is_finite()) {
            sum = f64::INFINITY;
        }
        // a blow-up can leave the test loss non-finite; only the training
        // loss decides what happens next
        let stats = EpochStats {
            epoch,
            train_loss: sum / order.len() as f64,
            test_loss: test_of(nets).unwrap_or(f64::INFINITY),
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        curve.push(stats);
        let blown_up = !stats.train_loss.is_finite() || (epoch > 10 && stats.train_loss > 10.0 * curve[epoch - 10].train_loss);
        if blown_up {
            if recoveries.len() == MAX_RECOVERIES {
                return Err(TrainError::Diverged {
                    epoch,
                    loss: stats.train_loss,
                });
            }
            recoveries.push(epoch);
            nets.clone_from_slice(&best.2);
            adam = fresh(nets);
            lr_scale *= RECOVERY_LR_FACTOR;
            continue;
        }
        let score = if prep.test.is_empty() { stats.train_loss } else { stats.test_loss };
        if score.is_finite() && !(score >= best.1) {
            best = (epoch, score, nets.to_vec());
        }
    }
    let (best_epoch, best_test, weights) = best;
    nets.clone_from_slice(&weights);
    Ok(TrainReport {
        curve,
        best_epoch,
        best_test,
        recoveries,
    })
}
