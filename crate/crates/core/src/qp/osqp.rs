use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kkt::verify_kkt;
use super::{QpError, QpProblem, QpSettings, QpSolution, QpStatus};

const RUIZ_ITERS: usize = 10;
const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const POLISH_DELTA: f64 = 1e-9;
const POLISH_REFINE: usize = 4;
const EPS_PRIMAL_INFEASIBLE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterTrace {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho: f64,
    pub merit: f64,
}

/// Ruiz equilibration of the KKT data: `x = D xs`, `y = E ys / cost`.
#[derive(Debug, Clone)]
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    cost: f64,
}

/// Everything that depends only on the problem structure (Hessian and
/// constraint matrices), reused across solves with identical structure.
struct Workspace {
    key: u64,
    n: usize,
    m_eq: usize,
    scaling: Scaling,
    p_s: DVector<f64>,
    a_s: DMatrix<f64>,
    factors: Vec<(u64, Cholesky<f64, Dyn>)>,
    last: Option<(DVector<f64>, DVector<f64>, DVector<f64>, f64)>,
}

/// Operator-splitting QP solver with a factorization cache keyed by the
/// problem's matrix structure. One instance is single-threaded; use one per
/// agent for concurrent subproblems.
pub struct QpSolver {
    settings: QpSettings,
    ws: Option<Workspace>,
}

fn structure_key(p: &QpProblem) -> u64 {
    let mut h = DefaultHasher::new();
    (p.n(), p.a_eq.nrows(), p.g.nrows()).hash(&mut h);
    for v in p.q_diag.iter().chain(p.a_eq.iter()).chain(p.g.iter()) {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

fn clamp_norm(v: f64) -> f64 {
    if v < MIN_SCALING {
        1.0
    } else {
        v.min(MAX_SCALING)
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

impl Workspace {
    fn new(p: &QpProblem, key: u64) -> Self {
        let n = p.n();
        let m_eq = p.a_eq.nrows();
        let m = m_eq + p.g.nrows();
        let mut a = DMatrix::zeros(m, n);
        if m_eq > 0 {
            a.rows_mut(0, m_eq).copy_from(&p.a_eq);
        }
        if p.g.nrows() > 0 {
            a.rows_mut(m_eq, p.g.nrows()).copy_from(&p.g);
        }
        let mut ps = p.q_diag.clone();
        let mut d = DVector::from_element(n, 1.0);
        let mut e = DVector::from_element(m, 1.0);
        for _ in 0..RUIZ_ITERS {
            let mut dcol = DVector::zeros(n);
            for j in 0..n {
                let col_max = if m > 0 { a.column(j).amax() } else { 0.0 };
                dcol[j] = 1.0 / clamp_norm(ps[j].abs().max(col_max)).sqrt();
            }
            let mut erow = DVector::zeros(m);
            for i in 0..m {
                erow[i] = 1.0 / clamp_norm(a.row(i).amax()).sqrt();
            }
            for j in 0..n {
                ps[j] *= dcol[j] * dcol[j];
                d[j] *= dcol[j];
            }
            for j in 0..n {
                for i in 0..m {
                    a[(i, j)] *= erow[i] * dcol[j];
                }
            }
            e.component_mul_assign(&erow);
        }
        let qs = p.c.component_mul(&d);
        let mean_p = if n > 0 { ps.iter().map(|v| v.abs()).sum::<f64>() / n as f64 } else { 0.0 };
        let cost = 1.0 / clamp_norm(mean_p.max(inf_norm(&qs)));
        ps *= cost;
        Self {
            key,
            n,
            m_eq,
            scaling: Scaling { d, e, cost },
            p_s: ps,
            a_s: a,
            factors: Vec::new(),
            last: None,
        }
    }

    fn rho_vec(&self, rho: f64, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(lower.len(), |i, _| {
            if lower[i] == upper[i] {
                (RHO_EQ_FACTOR * rho).min(RHO_MAX)
            } else if lower[i].is_infinite() && upper[i].is_infinite() {
                RHO_MIN
            } else {
                rho
            }
        })
    }

    fn factor(&mut self, rho: f64, rho_v: &DVector<f64>, sigma: f64) -> usize {
        let bits = rho.to_bits();
        if let Some(pos) = self.factors.iter().position(|(b, _)| *b == bits) {
            return pos;
        }
        let mut ra = self.a_s.clone();
        for i in 0..ra.nrows() {
            let s = rho_v[i];
            ra.row_mut(i).scale_mut(s);
        }
        let mut k = self.a_s.tr_mul(&ra);
        for j in 0..self.n {
            k[(j, j)] += self.p_s[j] + sigma;
        }
        let chol = Cholesky::new(k).expect("regularized KKT block is positive definite");
        if self.factors.len() >= 8 {
            self.factors.remove(0);
        }
        self.factors.push((bits, chol));
        self.factors.len() - 1
    }
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings, ws: None }
    }

    pub fn settings(&self) -> &QpSettings {
        &self.settings
    }

    pub fn settings_mut(&mut self) -> &mut QpSettings {
        &mut self.settings
    }

    /// Drops cached factorizations and the warm-start point.
    pub fn reset(&mut self) {
        self.ws = None;
    }

    pub fn solve(&mut self, p: &QpProblem) -> Result<QpSolution, QpError> {
        p.validate()?;
        let s = self.settings;
        let key = structure_key(p);
        if self.ws.as_ref().map(|w| w.key) != Some(key) {
            self.ws = Some(Workspace::new(p, key));
        }
        let ws = self.ws.as_mut().expect("workspace initialized");
        let n = ws.n;
        let m_eq = ws.m_eq;
        let m = ws.a_s.nrows();
        let (d, e, cost) = (ws.scaling.d.clone(), ws.scaling.e.clone(), ws.scaling.cost);

        let q_s = p.c.component_mul(&d) * cost;
        let mut lower = DVector::from_element(m, f64::NEG_INFINITY);
        let mut upper = DVector::zeros(m);
        for i in 0..m_eq {
            lower[i] = p.b_eq[i] * e[i];
            upper[i] = lower[i];
        }
        for i in 0..p.g.nrows() {
            upper[m_eq + i] = p.h[i] * e[m_eq + i];
        }

        let (mut x, mut z, mut y, mut rho) = match (&ws.last, s.warm_start) {
            (Some((x0, z0, y0, r0)), true) => {
                let zc = DVector::from_fn(m, |i, _| z0[i].clamp(lower[i], upper[i]));
                (x0.clone(), zc, y0.clone(), *r0)
            }
            _ => (DVector::zeros(n), DVector::zeros(m), DVector::zeros(m), s.rho),
        };
        let mut rho_v = ws.rho_vec(rho, &lower, &upper);
        let mut fidx = ws.factor(rho, &rho_v, s.sigma);

        let mut rhs = DVector::zeros(n);
        let mut prev_merit = f64::INFINITY;
        let mut trace = Vec::new();
        let mut y_window = y.clone();
        let mut polish_threshold = 1e-3;
        let mut last_res = (f64::INFINITY, f64::INFINITY);

        let unscale = |xs: &DVector<f64>, ys: &DVector<f64>| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
            let x: Vec<f64> = (0..n).map(|j| xs[j] * d[j]).collect();
            let y: Vec<f64> = (0..m).map(|i| ys[i] * e[i] / cost).collect();
            (x, y[..m_eq].to_vec(), y[m_eq..].to_vec())
        };

        for iter in 1..=s.max_iter {
            // x-update through the cached factorization
            let w = DVector::from_fn(m, |i, _| rho_v[i] * z[i] - y[i]);
            rhs.copy_from(&(&x * s.sigma - &q_s));
            if m > 0 {
                rhs += ws.a_s.tr_mul(&w);
            }
            let mut x_new = rhs.clone();
            ws.factors[fidx].1.solve_mut(&mut x_new);
            let z_tilde = &ws.a_s * &x_new;
            // z-update (projection) and multiplier step
            let mut merit = s.sigma * (&x_new - &x).norm_squared();
            for i in 0..m {
                let zn = (z_tilde[i] + y[i] / rho_v[i]).clamp(lower[i], upper[i]);
                let yn = y[i] + rho_v[i] * (z_tilde[i] - zn);
                merit += rho_v[i] * (zn - z[i]).powi(2) + (yn - y[i]).powi(2) / rho_v[i];
                z[i] = zn;
                y[i] = yn;
            }
            x = x_new;
            // Fixed-point residual of the splitting is non-increasing while
            // the step size is held fixed.
            debug_assert!(
                merit <= prev_merit * (1.0 + 1e-6) + rounding_floor(&x, &z, &y),
                "merit increased: {prev_merit:e} -> {merit:e} at iteration {iter}"
            );
            prev_merit = merit;

            if s.infeasibility_window > 0 && iter % s.infeasibility_window == 0 {
                let dy = &y - &y_window;
                if primal_infeasible(&ws.a_s, &d, &e, &dy, &p.b_eq, &p.h, m_eq) {
                    let (xu, yu, zu) = unscale(&x, &y);
                    return Ok(QpSolution {
                        x: xu,
                        dual_eq: yu,
                        dual_ineq: zu,
                        status: QpStatus::Infeasible,
                        iterations: iter,
                        primal_residual: last_res.0,
                        dual_residual: last_res.1,
                        polished: false,
                        trace,
                    });
                }
                y_window.copy_from(&y);
            }

            if iter % s.check_interval != 0 && iter != s.max_iter {
                continue;
            }
            let ax = &z_tilde;
            let r_prim = (0..m).fold(0.0_f64, |acc, i| acc.max(((ax[i] - z[i]) / e[i]).abs()));
            let norm_prim = (0..m).fold(0.0_f64, |acc, i| {
                acc.max((ax[i] / e[i]).abs()).max((z[i] / e[i]).abs())
            });
            let px = ws.p_s.component_mul(&x);
            let aty = if m > 0 { ws.a_s.tr_mul(&y) } else { DVector::zeros(n) };
            let mut r_dual = 0.0_f64;
            let mut norm_dual = 0.0_f64;
            for j in 0..n {
                r_dual = r_dual.max(((px[j] + q_s[j] + aty[j]) / d[j]).abs());
                norm_dual = norm_dual
                    .max((px[j] / d[j]).abs())
                    .max((aty[j] / d[j]).abs())
                    .max((q_s[j] / d[j]).abs());
            }
            r_dual /= cost;
            norm_dual /= cost;
            last_res = (r_prim, r_dual);
            if s.trace {
                trace.push(IterTrace {
                    iteration: iter,
                    primal_residual: r_prim,
                    dual_residual: r_dual,
                    rho,
                    merit,
                });
            }

            let eps_prim = s.tol_abs + s.tol_rel * norm_prim;
            let eps_dual = s.tol_abs + s.tol_rel * norm_dual;
            let converged = r_prim <= eps_prim && r_dual <= eps_dual;
            let near = r_prim <= polish_threshold * (1.0 + norm_prim)
                && r_dual <= polish_threshold * (1.0 + norm_dual);

            if s.polish && (converged || near) {
                if let Some((xp, yp)) = polish(ws, &q_s, &lower, &upper, &z, &y) {
                    let (xu, yu, zu) = unscale(&xp, &yp);
                    let rep = verify_kkt(p, &xu, &yu, &zu);
                    if rep.accepts(s.tol_abs, s.stationarity_tol, s.complementarity_tol) {
                        ws.last = Some((x.clone(), z.clone(), y.clone(), rho));
                        return Ok(QpSolution {
                            x: xu,
                            dual_eq: yu,
                            dual_ineq: zu.iter().map(|v| v.max(0.0)).collect(),
                            status: QpStatus::Optimal,
                            iterations: iter,
                            primal_residual: rep.equality.max(rep.inequality),
                            dual_residual: rep.stationarity,
                            polished: true,
                            trace,
                        });
                    }
                }
                polish_threshold = (polish_threshold * 0.1).max(1e-12);
            }
            if converged {
                let (xu, yu, zu) = unscale(&x, &y);
                let rep = verify_kkt(p, &xu, &yu, &zu);
                if rep.accepts(s.tol_abs, s.stationarity_tol, s.complementarity_tol) {
                    ws.last = Some((x.clone(), z.clone(), y.clone(), rho));
                    return Ok(QpSolution {
                        x: xu,
                        dual_eq: yu,
                        dual_ineq: zu.iter().map(|v| v.max(0.0)).collect(),
                        status: QpStatus::Optimal,
                        iterations: iter,
                        primal_residual: rep.equality.max(rep.inequality),
                        dual_residual: rep.stationarity,
                        polished: false,
                        trace,
                    });
                }
            }

            if s.adaptive_rho_interval > 0 && iter % s.adaptive_rho_interval == 0 {
                let pn = r_prim / norm_prim.max(1e-30);
                let dn = r_dual / norm_dual.max(1e-30);
                if pn > 0.0 && dn > 0.0 {
                    let new_rho = (rho * (pn / dn).sqrt()).clamp(RHO_MIN, RHO_MAX);
                    if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                        rho = new_rho;
                        rho_v = ws.rho_vec(rho, &lower, &upper);
                        fidx = ws.factor(rho, &rho_v, s.sigma);
                        prev_merit = f64::INFINITY;
                    }
                }
            }
        }

        ws.last = Some((x.clone(), z.clone(), y.clone(), rho));
        let (xu, yu, zu) = unscale(&x, &y);
        Ok(QpSolution {
            x: xu,
            dual_eq: yu,
            dual_ineq: zu,
            status: QpStatus::MaxIter,
            iterations: s.max_iter,
            primal_residual: last_res.0,
            dual_residual: last_res.1,
            polished: false,
            trace,
        })
    }
}

/// Multiplier drift `dy` certifies infeasibility when `A'dy ~ 0` while the
/// support function of the bounds is negative along it.
fn primal_infeasible(
    a_s: &DMatrix<f64>,
    d: &DVector<f64>,
    e: &DVector<f64>,
    dy_s: &DVector<f64>,
    b_eq: &DVector<f64>,
    h: &DVector<f64>,
    m_eq: usize,
) -> bool {
    let m = dy_s.len();
    if m == 0 {
        return false;
    }
    let dy = DVector::from_fn(m, |i, _| dy_s[i] * e[i]);
    let norm = dy.amax();
    if norm < 1e-12 {
        return false;
    }
    let dy = dy / norm;
    let at = a_s.tr_mul(&DVector::from_fn(m, |i, _| dy_s[i] / norm));
    let at_inf = (0..at.len()).fold(0.0_f64, |acc, j| acc.max((at[j] / d[j]).abs()));
    if at_inf > EPS_PRIMAL_INFEASIBLE {
        return false;
    }
    let mut support = 0.0;
    for i in 0..m {
        if i < m_eq {
            support += b_eq[i] * dy[i];
        } else if dy[i] < -EPS_PRIMAL_INFEASIBLE {
            // lower bound is -inf: a negative direction is unbounded
            return false;
        } else {
            support += h[i - m_eq] * dy[i].max(0.0);
        }
    }
    support < -EPS_PRIMAL_INFEASIBLE
}

/// Solves the equality-constrained QP on the active set guessed from the
/// current iterate, with regularization and iterative refinement.
fn polish(
    ws: &Workspace,
    q_s: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    z: &DVector<f64>,
    y: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = ws.n;
    let m = lower.len();
    let mut active = Vec::new();
    for i in 0..m {
        if lower[i] == upper[i] {
            active.push((i, lower[i]));
        } else if z[i] - lower[i] < -y[i] {
            active.push((i, lower[i]));
        } else if upper[i] - z[i] < y[i] {
            active.push((i, upper[i]));
        }
    }
    let na = active.len();
    let dim = n + na;
    let mut k0 = DMatrix::zeros(dim, dim);
    for j in 0..n {
        k0[(j, j)] = ws.p_s[j];
    }
    for (r, &(i, _)) in active.iter().enumerate() {
        for j in 0..n {
            let v = ws.a_s[(i, j)];
            k0[(n + r, j)] = v;
            k0[(j, n + r)] = v;
        }
    }
    let mut kd = k0.clone();
    for j in 0..n {
        kd[(j, j)] += POLISH_DELTA;
    }
    for r in 0..na {
        kd[(n + r, n + r)] -= POLISH_DELTA;
    }
    let mut rhs = DVector::zeros(dim);
    for j in 0..n {
        rhs[j] = -q_s[j];
    }
    for (r, &(_, b)) in active.iter().enumerate() {
        rhs[n + r] = b;
    }
    let lu = kd.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..POLISH_REFINE {
        let res = &rhs - &k0 * &sol;
        let corr = lu.solve(&res)?;
        sol += corr;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut yfull = DVector::zeros(m);
    for (r, &(i, _)) in active.iter().enumerate() {
        yfull[i] = sol[n + r];
    }
    Some((x, yfull))
}

/// Merit changes below this are solve noise at iterates of this magnitude.
fn rounding_floor(x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let scale = x.amax().max(z.amax()).max(y.amax()).max(1.0);
    (1e-10 * scale).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::{solve, verify_kkt};

    fn prob(q: &[f64], c: &[f64], a: (usize, &[f64]), b: &[f64], g: (usize, &[f64]), h: &[f64]) -> QpProblem {
        let n = c.len();
        QpProblem {
            q_diag: DVector::from_column_slice(q),
            c: DVector::from_column_slice(c),
            a_eq: DMatrix::from_row_slice(a.0, n, a.1),
            b_eq: DVector::from_column_slice(b),
            g: DMatrix::from_row_slice(g.0, n, g.1),
            h: DVector::from_column_slice(h),
        }
    }

    #[test]
    fn active_lower_bound() {
        // min (x-1)^2 s.t. x >= 2  ->  1/2*2x^2 - 2x
        let p = prob(&[2.0], &[-2.0], (0, &[]), &[], (1, &[-1.0]), &[-2.0]);
        let s = solve(&p, QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 2.0).abs() < 1e-9);
        assert!((s.dual_ineq[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn equality_symmetric() {
        let p = prob(&[2.0, 2.0], &[0.0, 0.0], (1, &[1.0, 1.0]), &[2.0], (0, &[]), &[]);
        let s = solve(&p, QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-9 && (s.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn lp_with_box() {
        // min -x - y s.t. x + 2y <= 4, 0 <= x,y <= 3
        let p = prob(
            &[0.0, 0.0],
            &[-1.0, -1.0],
            (0, &[]),
            &[],
            (5, &[1.0, 2.0, 1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
            &[4.0, 3.0, 0.0, 3.0, 0.0],
        );
        let s = solve(&p, QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 3.0).abs() < 1e-8 && (s.x[1] - 0.5).abs() < 1e-8, "{:?}", s.x);
        let rep = verify_kkt(&p, &s.x, &s.dual_eq, &s.dual_ineq);
        assert!(rep.accepts(1e-8, 1e-6, 1e-6), "{rep:?}");
    }

    #[test]
    fn detects_infeasible() {
        // x <= 0 and x >= 1
        let p = prob(&[1.0], &[0.0], (0, &[]), &[], (2, &[1.0, -1.0]), &[0.0, -1.0]);
        let s = solve(&p, QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        assert_eq!(s.into_optimal().unwrap_err(), QpError::Infeasible);
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let p = prob(&[1.0, 1.0], &[0.0, 0.0], (2, &[1.0, 1.0, 1.0, 1.0]), &[1.0, 2.0], (0, &[]), &[]);
        let s = solve(&p, QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_bad_dimensions_and_nonconvex() {
        let mut p = prob(&[1.0], &[0.0], (0, &[]), &[], (1, &[1.0]), &[1.0]);
        p.h = DVector::zeros(2);
        assert!(matches!(solve(&p, QpSettings::default()), Err(QpError::DimensionMismatch(_))));
        let p = prob(&[-1.0], &[0.0], (0, &[]), &[], (1, &[1.0]), &[1.0]);
        assert_eq!(solve(&p, QpSettings::default()), Err(QpError::NotConvex(0)));
    }

    #[test]
    fn warm_start_reuses_factorization_and_stays_deterministic() {
        let mut p = prob(
            &[2.0, 0.0, 1.0],
            &[1.0, -1.0, 0.5],
            (1, &[1.0, 1.0, 1.0]),
            &[1.0],
            (3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
            &[2.0, 2.0, 2.0],
        );
        let mut a = QpSolver::new(QpSettings::default());
        let mut b = QpSolver::new(QpSettings::default());
        for k in 0..5 {
            p.c[0] = 1.0 + k as f64 * 0.1;
            let sa = a.solve(&p).unwrap();
            let sb = b.solve(&p).unwrap();
            assert_eq!(sa, sb);
            assert_eq!(sa.status, QpStatus::Optimal);
        }
    }

    #[test]
    fn trace_csv_has_header() {
        let p = prob(&[2.0], &[-2.0], (0, &[]), &[], (1, &[-1.0]), &[-2.0]);
        let s = solve(&p, QpSettings { trace: true, ..Default::default() }).unwrap();
        assert!(!s.trace.is_empty());
        let mut buf = Vec::new();
        s.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,primal_residual,dual_residual,rho,merit"));
    }
}
