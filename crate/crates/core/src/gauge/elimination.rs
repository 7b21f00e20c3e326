use nalgebra::{DMatrix, DVector};

use super::GaugeError;
use crate::model::{Partition, VariableIndex};

const PIVOT_TOL: f64 = 1e-10;

/// Affine parametrization of `{u : A u = b}` by its independent entries:
/// `u[dependent] = M u[independent] + T b`.
#[derive(Debug, Clone, PartialEq)]
pub struct EliminationMap {
    pub n: usize,
    pub independent: Vec<usize>,
    pub dependent: Vec<usize>,
    /// `M`, `dependent.len() x independent.len()`.
    pub m: DMatrix<f64>,
    /// `T`, `dependent.len() x rows(A)`; the offset is `m(x) = T b(x)`.
    pub t: DMatrix<f64>,
    /// 2-norm condition number of the dependent-column block of `A`.
    pub condition: f64,
}

impl EliminationMap {
    /// Gauss-Jordan elimination visiting columns in `order` (most preferred
    /// dependent first). Each visited column takes the remaining row with
    /// the largest entry as its pivot; columns with no usable pivot stay
    /// independent. Columns missing from `order` are never dependent.
    pub fn build(a: &DMatrix<f64>, order: &[usize]) -> Result<Self, GaugeError> {
        let (rows, n) = a.shape();
        let mut w = a.clone();
        let mut e = DMatrix::<f64>::identity(rows, rows);
        let mut used = vec![false; rows];
        let mut pivots: Vec<(usize, usize)> = Vec::with_capacity(rows);
        for &col in order {
            if pivots.len() == rows {
                break;
            }
            let scale = w.column(col).amax().max(1.0);
            let mut best: Option<(usize, f64)> = None;
            for r in (0..rows).filter(|&r| !used[r]) {
                let v = w[(r, col)].abs();
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((r, v));
                }
            }
            let Some((r, v)) = best else { break };
            if v <= PIVOT_TOL * scale {
                continue;
            }
            let p = w[(r, col)];
            w.row_mut(r).scale_mut(1.0 / p);
            e.row_mut(r).scale_mut(1.0 / p);
            for rr in 0..rows {
                if rr == r {
                    continue;
                }
                let f = w[(rr, col)];
                if f != 0.0 {
                    for c in 0..n {
                        w[(rr, c)] -= f * w[(r, c)];
                    }
                    for c in 0..rows {
                        e[(rr, c)] -= f * e[(r, c)];
                    }
                }
            }
            used[r] = true;
            pivots.push((r, col));
        }
        if pivots.len() < rows {
            return Err(GaugeError::SingularBasis(format!(
                "found {} pivots for {rows} equality rows",
                pivots.len()
            )));
        }
        pivots.sort_by_key(|&(_, c)| c);
        let dependent: Vec<usize> = pivots.iter().map(|&(_, c)| c).collect();
        let independent: Vec<usize> = (0..n).filter(|c| !dependent.contains(c)).collect();
        let m = DMatrix::from_fn(rows, independent.len(), |i, j| -w[(pivots[i].0, independent[j])]);
        let t = DMatrix::from_fn(rows, rows, |i, j| e[(pivots[i].0, j)]);
        let condition = if rows == 0 {
            1.0
        } else {
            let ad = DMatrix::from_fn(rows, rows, |i, j| a[(i, dependent[j])]);
            let sv = ad.singular_values();
            sv.max() / sv.min()
        };
        Ok(Self {
            n,
            independent,
            dependent,
            m,
            t,
            condition,
        })
    }

    /// Elimination over an agent's local equalities, preferring state
    /// quantities, then copies, then the remaining own variables.
    pub fn for_agent(a_eq: &DMatrix<f64>, idx: &VariableIndex) -> Result<Self, GaugeError> {
        let rank = |k: usize| match idx.partition(k) {
            Partition::Copy { .. } => 1,
            _ if idx.describe(k).is_some_and(|(q, _)| q.is_state()) => 0,
            _ => 2,
        };
        let mut order: Vec<usize> = (0..idx.len()).collect();
        order.sort_by_key(|&k| (rank(k), k));
        Self::build(a_eq, &order)
    }

    pub fn n_independent(&self) -> usize {
        self.independent.len()
    }

    /// `m(x) = T b`.
    pub fn offset(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.t * b
    }

    /// Full vector from independent values and the offset.
    pub fn complete(&self, u_ind: &[f64], offset: &DVector<f64>) -> Vec<f64> {
        let mut u = vec![0.0; self.n];
        for (k, &c) in self.independent.iter().enumerate() {
            u[c] = u_ind[k];
        }
        let mut dep = offset.clone();
        dep.gemv(1.0, &self.m, &DVector::from_column_slice(u_ind), 1.0);
        for (r, &c) in self.dependent.iter().enumerate() {
            u[c] = dep[r];
        }
        u
    }

    /// Pulls a gradient on the full vector back to the independent values:
    /// `g_I + M^T g_D`.
    pub fn pullback(&self, g: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.independent.iter().map(|&c| g[c]).collect();
        for (r, &c) in self.dependent.iter().enumerate() {
            let gd = g[c];
            if gd != 0.0 {
                for (k, o) in out.iter_mut().enumerate() {
                    *o += self.m[(r, k)] * gd;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn residual(a: &DMatrix<f64>, b: &DVector<f64>, u: &[f64]) -> f64 {
        (a * DVector::from_column_slice(u) - b).amax()
    }

    #[test]
    fn pv_row_fixes_output() {
        // P_PV - R A eta = 0 with R = 0.3, A = 1000, eta = 0.2
        let a = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let b = DVector::from_vec(vec![0.3 * 1000.0 * 0.2]);
        let e = EliminationMap::build(&a, &[1, 0]).unwrap();
        assert_eq!(e.dependent, vec![1]);
        assert!((e.offset(&b)[0] - 60.0).abs() < 1e-12);
        assert_eq!(e.m[(0, 0)], 0.0);
    }

    #[test]
    fn hvac_chain_band() {
        // vars [P0, P1, T1, T2]; T1 + 0.7 P0 = c1, T2 - 0.93 T1 + 0.7 P1 = c2
        let a = DMatrix::from_row_slice(2, 4, &[0.7, 0.0, 1.0, 0.0, 0.0, 0.7, -0.93, 1.0]);
        let e = EliminationMap::build(&a, &[2, 3, 0, 1]).unwrap();
        assert_eq!(e.dependent, vec![2, 3]);
        assert!((e.m[(0, 0)] + 0.7).abs() < 1e-15);
        assert!((e.m[(1, 1)] + 0.7).abs() < 1e-15);
        assert!((e.m[(1, 0)] + 0.93 * 0.7).abs() < 1e-15);
        assert_eq!(e.m[(0, 1)], 0.0);
    }

    #[test]
    fn random_consistent_system_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let a = DMatrix::from_fn(6, 10, |_, _| rng.gen_range(-1.0..1.0));
            let b = DVector::from_fn(6, |_, _| rng.gen_range(-5.0..5.0));
            let order: Vec<usize> = (0..10).collect();
            let e = EliminationMap::build(&a, &order).unwrap();
            assert_eq!(e.dependent.len(), 6);
            let off = e.offset(&b);
            let ui: Vec<f64> = (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let u = e.complete(&ui, &off);
            assert!(residual(&a, &b, &u) <= 1e-9);
            assert!(e.condition.is_finite() && e.condition >= 1.0);
        }
    }

    #[test]
    fn rank_deficient_is_singular() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        assert!(matches!(EliminationMap::build(&a, &[0, 1, 2]), Err(GaugeError::SingularBasis(_))));
    }

    #[test]
    fn pullback_is_chain_rule() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]);
        let e = EliminationMap::build(&a, &[0, 1, 2]).unwrap();
        let off = DVector::from_vec(vec![0.0]);
        // f(u) = w . u, so df/du_I = w_I + M^T w_D
        let w = [0.5, -1.0, 3.0];
        let f = |ui: &[f64]| e.complete(ui, &off).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let g = e.pullback(&w);
        let base = [0.2, -0.4];
        for k in 0..2 {
            let mut p = base;
            p[k] += 1.0;
            assert!((f(&p) - f(&base) - g[k]).abs() < 1e-12);
        }
    }
}
