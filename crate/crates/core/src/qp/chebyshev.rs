use nalgebra::{DMatrix, DVector};

use super::{QpError, QpProblem, QpSettings, QpSolver, QpStatus};

/// Radius at or below which the polytope is treated as having no interior.
pub const MIN_RADIUS: f64 = 1e-9;
const REGULARIZATION: f64 = 1e-9;
const RADIUS_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevCenter {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Center and radius of the largest ball inside `{x : G x <= h}`.
///
/// Solved as `max r  s.t.  G_i x + r |G_i| <= h_i` with a tiny Hessian term so
/// the QP solver applies.
pub fn chebyshev_center(g: &DMatrix<f64>, h: &DVector<f64>) -> Result<ChebyshevCenter, QpError> {
    let n = g.ncols();
    if g.nrows() != h.len() {
        return Err(QpError::DimensionMismatch(format!(
            "{} rows with {} right-hand sides",
            g.nrows(),
            h.len()
        )));
    }
    let mut rows = Vec::new();
    for i in 0..g.nrows() {
        let norm = g.row(i).norm();
        if norm == 0.0 {
            if h[i] < 0.0 {
                return Err(QpError::Infeasible);
            }
            continue;
        }
        rows.push((i, norm));
    }
    let m = rows.len() + 2;
    let mut gg = DMatrix::zeros(m, n + 1);
    let mut hh = DVector::zeros(m);
    for (r, &(i, norm)) in rows.iter().enumerate() {
        // unit-norm rows: same polytope, better scaled for the solver
        for j in 0..n {
            gg[(r, j)] = g[(i, j)] / norm;
        }
        gg[(r, n)] = 1.0;
        hh[r] = h[i] / norm;
    }
    gg[(m - 2, n)] = -1.0;
    gg[(m - 1, n)] = 1.0;
    hh[m - 1] = RADIUS_CAP;
    let mut c = DVector::zeros(n + 1);
    c[n] = -1.0;
    let p = QpProblem {
        q_diag: DVector::from_element(n + 1, REGULARIZATION),
        c,
        a_eq: DMatrix::zeros(0, n + 1),
        b_eq: DVector::zeros(0),
        g: gg,
        h: hh,
    };
    let sol = QpSolver::new(QpSettings {
        max_iter: 50_000,
        ..Default::default()
    })
    .solve(&p)?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(QpError::Infeasible),
        QpStatus::MaxIter => return Err(QpError::MaxIter(sol.iterations)),
    }
    let radius = sol.x[n];
    if radius <= MIN_RADIUS {
        return Err(QpError::EmptyInterior(radius));
    }
    Ok(ChebyshevCenter {
        center: sol.x[..n].to_vec(),
        radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn polytope(rows: &[[f64; 2]], h: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        (DMatrix::from_row_slice(rows.len(), 2, &flat), DVector::from_column_slice(h))
    }

    #[test]
    fn unit_box() {
        let (g, h) = polytope(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], &[1.0; 4]);
        let c = chebyshev_center(&g, &h).unwrap();
        assert!((c.radius - 1.0).abs() < 1e-7);
        assert!(c.center[0].abs() < 1e-6 && c.center[1].abs() < 1e-6);
    }

    #[test]
    fn right_triangle_matches_grid_search() {
        // x >= 0, y >= 0, x + y <= 1
        let (g, h) = polytope(&[[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]], &[0.0, 0.0, 1.0]);
        let c = chebyshev_center(&g, &h).unwrap();
        // oracle: maximize the minimum distance to the three edges on a grid
        let mut best = 0.0_f64;
        let k = 400;
        for a in 0..=k {
            for b in 0..=(k - a) {
                let (x, y) = (a as f64 / k as f64, b as f64 / k as f64);
                let d = x.min(y).min((1.0 - x - y) / 2f64.sqrt());
                best = best.max(d);
            }
        }
        assert!((c.radius - best).abs() < 2e-3, "{} vs {}", c.radius, best);
        assert!((c.radius - 1.0 / (2.0 + 2f64.sqrt())).abs() < 1e-7);
    }

    #[test]
    fn flat_polytope_has_no_interior() {
        let (g, h) = polytope(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]], &[0.0, 0.0, 1.0, 1.0]);
        assert!(matches!(chebyshev_center(&g, &h), Err(QpError::EmptyInterior(_))));
    }
}
