use nalgebra::{DMatrix, DVector};

use super::{EliminationMap, GaugeError};
use super::mlp::accumulate_columns;
use crate::qp::chebyshev_center;

/// Smallest admissible slack of the interior point in any reduced row.
pub const CENTER_MARGIN: f64 = 1e-7;
const ZERO_ROW_TOL: f64 = 1e-12;

/// Scenario-independent part of an agent's reduced inequality system:
/// `G_red u_I <= h[rows] - H_b b`, obtained by substituting the
/// elimination map into `G u <= h`. Rows that vanish after substitution are
/// kept aside and only checked for consistency.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedLayout {
    pub elimination: EliminationMap,
    pub g_red: DMatrix<f64>,
    /// Rows of the original `G` that survive.
    pub rows: Vec<usize>,
    h_b: DMatrix<f64>,
    dropped: Vec<usize>,
    h_b_dropped: DMatrix<f64>,
}

impl ReducedLayout {
    pub fn new(elimination: EliminationMap, g: &DMatrix<f64>) -> Self {
        let gi = DMatrix::from_fn(g.nrows(), elimination.independent.len(), |r, k| {
            g[(r, elimination.independent[k])]
        });
        let gd = DMatrix::from_fn(g.nrows(), elimination.dependent.len(), |r, k| {
            g[(r, elimination.dependent[k])]
        });
        let full = gi + &gd * &elimination.m;
        let h_b_full = &gd * &elimination.t;
        let (rows, dropped): (Vec<usize>, Vec<usize>) = (0..g.nrows()).partition(|&r| {
            let scale = g.row(r).amax().max(1.0);
            full.row(r).amax() > ZERO_ROW_TOL * scale
        });
        let pick = |m: &DMatrix<f64>, rs: &[usize]| DMatrix::from_fn(rs.len(), m.ncols(), |i, j| m[(rs[i], j)]);
        Self {
            g_red: pick(&full, &rows),
            h_b: pick(&h_b_full, &rows),
            h_b_dropped: pick(&h_b_full, &dropped),
            rows,
            dropped,
            elimination,
        }
    }

    pub fn dim(&self) -> usize {
        self.g_red.ncols()
    }

    /// Reduced right-hand side for a scenario's `b` and `h`. Fails if a
    /// vanished row is violated by the scenario.
    pub fn h_red(&self, b: &DVector<f64>, h: &DVector<f64>) -> Result<DVector<f64>, GaugeError> {
        let hb = &self.h_b * b;
        let hd = &self.h_b_dropped * b;
        for (k, &r) in self.dropped.iter().enumerate() {
            let slack = h[r] - hd[k];
            if slack < -1e-9 * (1.0 + h[r].abs()) {
                return Err(GaugeError::Infeasible(format!(
                    "constant inequality row {r} violated by {:e}",
                    -slack
                )));
            }
        }
        Ok(DVector::from_fn(self.rows.len(), |i, _| h[self.rows[i]] - hb[i]))
    }

    /// Reduced polytope of one scenario, centered at its Chebyshev center.
    pub fn polytope(&self, b: &DVector<f64>, h: &DVector<f64>) -> Result<ReducedPolytope, GaugeError> {
        let h_red = self.h_red(b, h)?;
        let cc = chebyshev_center(&self.g_red, &h_red)?;
        ReducedPolytope::new(self.g_red.clone(), h_red, cc.center, cc.radius)
    }
}

/// `{u_I : G_red u_I <= h_red}` with an interior anchor `u0` and the slacks
/// `h_shift = h_red - G_red u0` of the shifted set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedPolytope {
    pub g_red: DMatrix<f64>,
    pub h_red: DVector<f64>,
    pub u0: DVector<f64>,
    pub h_shift: DVector<f64>,
    /// Rows of `G_red` divided by their `h_shift`.
    pub g_scaled: DMatrix<f64>,
    pub radius: f64,
}

impl ReducedPolytope {
    pub fn new(g_red: DMatrix<f64>, h_red: DVector<f64>, u0: Vec<f64>, radius: f64) -> Result<Self, GaugeError> {
        let u0 = DVector::from_vec(u0);
        let h_shift = &h_red - &g_red * &u0;
        if let Some((j, &s)) = h_shift.iter().enumerate().find(|(_, &s)| !(s >= CENTER_MARGIN)) {
            return Err(GaugeError::BadShift { row: j, slack: s });
        }
        let mut g_scaled = g_red.clone();
        for (mut row, s) in g_scaled.row_iter_mut().zip(h_shift.iter()) {
            row /= *s;
        }
        Ok(Self {
            g_red,
            h_red,
            u0,
            h_shift,
            g_scaled,
            radius,
        })
    }

    pub fn dim(&self) -> usize {
        self.u0.len()
    }

    /// Largest `G_red u - h_red` over rows.
    pub fn violation(&self, u: &[f64]) -> f64 {
        let u = DVector::from_column_slice(u);
        (&self.g_red * u - &self.h_red).max()
    }
}

/// Minkowski gauge of the unit `l_inf` ball: `|v|_inf`.
pub fn psi_ball(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Gauge of the shifted polytope at `v` together with the maximizing row
/// (lowest index on ties), or `None` when the gauge is 0.
pub fn psi_polytope_arg(poly: &ReducedPolytope, v: &[f64]) -> (f64, Option<usize>) {
    let mut ratio = vec![0.0; poly.g_scaled.nrows()];
    accumulate_columns(&mut ratio, poly.g_scaled.as_slice(), v.iter().copied().enumerate());
    let mut best = (0.0, None);
    for (j, &r) in ratio.iter().enumerate() {
        if r > best.0 {
            best = (r, Some(j));
        }
    }
    best
}

/// `max(0, max_j (G_red[j] . v) / h_shift[j])`.
pub fn psi_polytope(poly: &ReducedPolytope, v: &[f64]) -> Result<f64, GaugeError> {
    if let Some((j, &s)) = poly.h_shift.iter().enumerate().find(|(_, &s)| !(s > 0.0)) {
        return Err(GaugeError::BadShift { row: j, slack: s });
    }
    Ok(psi_polytope_arg(poly, v).0)
}

/// Maps `v` from the open unit ball into the polytope:
/// `u = (psi_ball(v) / psi_poly(v)) v + u0`.
pub fn gauge_map(poly: &ReducedPolytope, v: &[f64]) -> Result<Vec<f64>, GaugeError> {
    if v.len() != poly.dim() {
        return Err(GaugeError::ShapeMismatch(format!(
            "{} ball coordinates for a {}-dimensional polytope",
            v.len(),
            poly.dim()
        )));
    }
    let pb = psi_ball(v);
    if !(pb < 1.0) {
        return Err(GaugeError::OutOfBall(pb));
    }
    if pb == 0.0 {
        return Ok(poly.u0.iter().copied().collect());
    }
    let ps = psi_polytope(poly, v)?;
    if ps == 0.0 {
        return Err(GaugeError::Unbounded);
    }
    let ratio = pb / ps;
    Ok(v.iter().zip(poly.u0.iter()).map(|(x, c)| ratio * x + c).collect())
}

/// Reverse-mode derivative of [`gauge_map`]: gradient on `v` from the
/// gradient `g` on the output. The gauges' max terms use their argmax
/// entries (lowest index on ties).
pub fn gauge_map_backward(poly: &ReducedPolytope, v: &[f64], g: &[f64]) -> Vec<f64> {
    let mut ib = 0;
    let mut pb = 0.0;
    for (k, x) in v.iter().enumerate() {
        if x.abs() > pb {
            pb = x.abs();
            ib = k;
        }
    }
    let (ps, js) = psi_polytope_arg(poly, v);
    let Some(js) = js.filter(|_| pb > 0.0) else {
        return vec![0.0; v.len()];
    };
    let ratio = pb / ps;
    let gv: f64 = g.iter().zip(v).map(|(a, b)| a * b).sum();
    let mut out: Vec<f64> = g.iter().map(|x| ratio * x).collect();
    // d ratio = d pb / ps - pb d ps / ps^2
    out[ib] += gv * v[ib].signum() / ps;
    let w = gv * pb / (ps * ps);
    for (k, o) in out.iter_mut().enumerate() {
        *o -= w * poly.g_scaled[(js, k)];
    }
    out
}
