use std::ops::{Add, AddAssign, Mul};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Hidden width of every approximator.
pub const HIDDEN_UNITS: usize = 500;
/// TanH outputs are scaled by this factor so they stay strictly inside the
/// unit ball.
pub const OUTPUT_SCALE: f64 = 0.999;

/// One-hidden-layer perceptron: `v = s tanh(W2 relu(W1 x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

/// Forward intermediates of a batch (one sample per column).
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub x: DMatrix<f64>,
    pub pre: DMatrix<f64>,
    pub hidden: DMatrix<f64>,
    pub out: DMatrix<f64>,
}

/// `y += sum a * W[:, j]` over the `(j, a)` pairs, for column-major `w`
/// with `y.len()` rows. Columns are folded eight per pass over `y`.
pub fn accumulate_columns<T>(y: &mut [T], w: &[T], pairs: impl IntoIterator<Item = (usize, T)>)
where
    T: Copy + Default + Add<Output = T> + Mul<Output = T> + AddAssign,
{
    const B: usize = 8;
    let n = y.len();
    let col = |j: usize| &w[j * n..(j + 1) * n];
    let mut buf = [(0, T::default()); B];
    let mut filled = 0;
    for p in pairs {
        buf[filled] = p;
        filled += 1;
        if filled == B {
            let c: [&[T]; B] = std::array::from_fn(|k| col(buf[k].0));
            let a: [T; B] = std::array::from_fn(|k| buf[k].1);
            for i in 0..n {
                let mut s = a[0] * c[0][i];
                for k in 1..B {
                    s += a[k] * c[k][i];
                }
                y[i] += s;
            }
            filled = 0;
        }
    }
    for &(j, a) in &buf[..filled] {
        for (yi, &wi) in y.iter_mut().zip(col(j)) {
            *yi += a * wi;
        }
    }
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..=bound))
}

impl Mlp {
    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(n_in: usize, hidden: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        let b_in = 1.0 / (n_in.max(1) as f64).sqrt();
        let b_h = 1.0 / (hidden.max(1) as f64).sqrt();
        Self {
            w1: uniform(rng, hidden, n_in, b_in),
            b1: uniform(rng, hidden, 1, b_in).column(0).into(),
            w2: uniform(rng, n_out, hidden, b_h),
            b2: uniform(rng, n_out, 1, b_h).column(0).into(),
        }
    }

    pub fn zeros(n_in: usize, hidden: usize, n_out: usize) -> Self {
        Self {
            w1: DMatrix::zeros(hidden, n_in),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(n_out, hidden),
            b2: DVector::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.w2.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|x| x.is_finite()))
    }

    /// Parameter blocks in storage order `W1, b1, W2, b2` (column-major).
    pub fn params(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), self.b1.as_slice(), self.w2.as_slice(), self.b2.as_slice()]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ]
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut h = self.b1.clone();
        h.gemv(1.0, &self.w1, x, 1.0);
        self.forward_hidden(h)
    }

    /// Remaining layers from the first-layer pre-activation.
    pub fn forward_hidden(&self, h: DVector<f64>) -> DVector<f64> {
        let mut z = self.b2.clone();
        // only the columns of active units contribute
        let active = h.iter().enumerate().filter(|(_, &a)| a > 0.0).map(|(j, &a)| (j, a));
        accumulate_columns(z.as_mut_slice(), self.w2.as_slice(), active);
        z.apply(|a| *a = OUTPUT_SCALE * a.tanh());
        z
    }

    pub fn forward_batch(&self, x: DMatrix<f64>) -> MlpCache {
        let mut pre = &self.w1 * &x;
        for mut c in pre.column_iter_mut() {
            c += &self.b1;
        }
        let hidden = pre.map(|a| a.max(0.0));
        let mut out = &self.w2 * &hidden;
        for mut c in out.column_iter_mut() {
            c += &self.b2;
        }
        out.apply(|a| *a = OUTPUT_SCALE * a.tanh());
        MlpCache { x, pre, hidden, out }
    }

    /// Gradients of a scalar loss given `d loss / d out` per column. Adds
    /// into `grad` and returns `d loss / d x`.
    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// on input rows `inputs_from..`, which is empty when `inputs_from` is
    /// the input width.
    pub fn backward_batch(&self, cache: &MlpCache, d_out: &DMatrix<f64>, grad: &mut Mlp, inputs_from: usize) -> DMatrix<f64> {
        // d tanh: s (1 - tanh^2) = s - out^2 / s
        let dz = d_out.zip_map(&cache.out, |g, o| g * (OUTPUT_SCALE - o * o / OUTPUT_SCALE));
        grad.w2.gemm(1.0, &dz, &cache.hidden.transpose(), 1.0);
        for c in dz.column_iter() {
            grad.b2 += c;
        }
        let mut dh = self.w2.tr_mul(&dz);
        dh.zip_apply(&cache.pre, |g, a| {
            if a <= 0.0 {
                *g = 0.0
            }
        });
        grad.w1.gemm(1.0, &dh, &cache.x.transpose(), 1.0);
        for c in dh.column_iter() {
            grad.b1 += c;
        }
        let n_in = self.w1.ncols();
        self.w1.columns(inputs_from, n_in - inputs_from).tr_mul(&dh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_fan_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::new(16, 500, 4, &mut rng);
        assert!(m.w1.iter().all(|x| x.abs() <= 0.25));
        assert!(m.w2.iter().all(|x| x.abs() <= 1.0 / 500f64.sqrt()));
        assert_eq!(m.n_params(), 16 * 500 + 500 + 4 * 500 + 4);
    }

    #[test]
    fn batch_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Mlp::new(5, 30, 3, &mut rng);
        let x = DMatrix::from_fn(5, 4, |_, _| rng.gen_range(-3.0..3.0));
        let c = m.forward_batch(x.clone());
        for j in 0..4 {
            let s = m.forward(&x.column(j).into());
            // gemm and gemv may round differently in the last place
            assert!((&s - c.out.column(j)).amax() < 1e-14);
            assert!(s.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mlp::new(4, 12, 3, &mut rng);
        let x = DMatrix::from_fn(4, 2, |_, _| rng.gen_range(-1.0..1.0));
        let w = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let loss = |m: &Mlp, x: &DMatrix<f64>| m.forward_batch(x.clone()).out.component_mul(&w).sum();
        let cache = m.forward_batch(x.clone());
        let mut grad = Mlp::zeros(4, 12, 3);
        let dx = m.backward_batch(&cache, &w, &mut grad, 0);
        let h = 1e-6;
        for (b, block) in grad.params().iter().enumerate() {
            for k in (0..block.len()).step_by(5) {
                let (mut p, mut q) = (m.clone(), m.clone());
                p.params_mut()[b][k] += h;
                q.params_mut()[b][k] -= h;
                let fd = (loss(&p, &x) - loss(&q, &x)) / (2.0 * h);
                assert!((fd - block[k]).abs() < 1e-6, "block {b} entry {k}: {fd} vs {}", block[k]);
            }
        }
        for i in 0..4 {
            let (mut xp, mut xq) = (x.clone(), x.clone());
            xp[(i, 1)] += h;
            xq[(i, 1)] -= h;
            let fd = (loss(&m, &xp) - loss(&m, &xq)) / (2.0 * h);
            assert!((fd - dx[(i, 1)]).abs() < 1e-6);
        }
    }
}
