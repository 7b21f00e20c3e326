use std::ops::{Add, AddAssign, Mul};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::mlp::accumulate_columns;
use super::{AgentContext, GaugeError, GaugeNet, OUTPUT_SCALE};

/// Arithmetic of the dense layers at inference time. The gauge map and the
/// completion always run in `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Double,
    #[default]
    Single,
}

trait Real: Copy + Default + Add<Output = Self> + Mul<Output = Self> + AddAssign + PartialOrd {
    const ZERO: Self;
    fn of(x: f64) -> Self;
    fn get(self) -> f64;
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    fn of(x: f64) -> Self {
        x
    }
    fn get(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    fn of(x: f64) -> Self {
        x as f32
    }
    fn get(self) -> f64 {
        self as f64
    }
}

#[derive(Debug, Clone)]
struct Dense<T> {
    /// Bias plus the feature columns applied to the scenario features.
    drive: Vec<T>,
    /// Neighbor-input columns of `W1`, column-major.
    w1: Vec<T>,
    w2: Vec<T>,
    b2: Vec<T>,
}

impl<T: Real> Dense<T> {
    fn new(net: &GaugeNet, ctx: &AgentContext) -> Self {
        let nf = net.n_features;
        let hidden = net.mlp.hidden();
        let features = ctx.features.iter().enumerate().map(|(k, x)| (k, (x - net.mean[k]) / net.std[k]));
        let mut drive = net.mlp.b1.as_slice().to_vec();
        accumulate_columns(&mut drive, net.mlp.w1.as_slice(), features);
        let cast = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
        Self {
            drive: cast(&drive),
            w1: cast(&net.mlp.w1.as_slice()[nf * hidden..]),
            w2: cast(net.mlp.w2.as_slice()),
            b2: cast(net.mlp.b2.as_slice()),
        }
    }

    fn ball_point(&self, net: &GaugeNet, u_other: &[f64]) -> DVector<f64> {
        let nf = net.n_features;
        let x = u_other
            .iter()
            .enumerate()
            .map(|(k, x)| (k, T::of((x - net.mean[nf + k]) / net.std[nf + k])));
        let mut h = self.drive.clone();
        accumulate_columns(&mut h, &self.w1, x);
        let mut z = self.b2.clone();
        let active = h.iter().enumerate().filter(|(_, &a)| a > T::ZERO).map(|(j, &a)| (j, a));
        accumulate_columns(&mut z, &self.w2, active);
        DVector::from_iterator(z.len(), z.iter().map(|a| OUTPUT_SCALE * a.get().tanh()))
    }
}

#[derive(Debug, Clone)]
enum Layers {
    Double(Dense<f64>),
    Single(Dense<f32>),
}

/// A net prepared for repeated rounds on one scenario: the scenario part
/// of the first layer is precomputed and the dense weights are stored at
/// the requested precision.
#[derive(Debug, Clone)]
pub struct InferencePlan<'a> {
    net: &'a GaugeNet,
    ctx: &'a AgentContext,
    layers: Layers,
}

impl<'a> InferencePlan<'a> {
    pub fn new(net: &'a GaugeNet, ctx: &'a AgentContext, precision: Precision) -> Self {
        let layers = match precision {
            Precision::Double => Layers::Double(Dense::new(net, ctx)),
            Precision::Single => Layers::Single(Dense::new(net, ctx)),
        };
        Self { net, ctx, layers }
    }

    pub fn precision(&self) -> Precision {
        match self.layers {
            Layers::Double(_) => Precision::Double,
            Layers::Single(_) => Precision::Single,
        }
    }

    /// [`GaugeNet::forward`] for this scenario. With `Double` it agrees up
    /// to rounding.
    pub fn forward(&self, u_other: &[f64]) -> Result<Vec<f64>, GaugeError> {
        if u_other.len() != self.net.n_other() {
            return Err(GaugeError::ShapeMismatch(format!(
                "{} neighbor values, net expects {}",
                u_other.len(),
                self.net.n_other()
            )));
        }
        let v = match &self.layers {
            Layers::Double(d) => d.ball_point(self.net, u_other),
            Layers::Single(d) => d.ball_point(self.net, u_other),
        };
        self.net.complete(self.ctx, &v)
    }
}
