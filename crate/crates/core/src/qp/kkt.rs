//! Post-hoc KKT certificate check, independent of how a candidate was found.

use nalgebra::DVector;

use super::QpProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `max |A x - b|`.
    pub equality: f64,
    /// `max(0, max(G x - h))`.
    pub inequality: f64,
    /// `max |Q x + c + A'y + G'z|` with `z` clipped at zero.
    pub stationarity: f64,
    /// Most negative inequality multiplier (0 if all are non-negative).
    pub dual_sign: f64,
    /// `max |z_i (h - G x)_i|`.
    pub complementarity: f64,
}

impl KktReport {
    pub fn accepts(&self, primal_tol: f64, stationarity_tol: f64, complementarity_tol: f64) -> bool {
        self.equality <= primal_tol
            && self.inequality <= primal_tol
            && self.stationarity <= stationarity_tol
            && self.dual_sign <= stationarity_tol
            && self.complementarity <= complementarity_tol
    }
}

pub fn verify_kkt(p: &QpProblem, x: &[f64], y: &[f64], z: &[f64]) -> KktReport {
    let xv = DVector::from_column_slice(x);
    let yv = DVector::from_column_slice(y);
    let zc = DVector::from_iterator(z.len(), z.iter().map(|&v| v.max(0.0)));

    let equality = if p.b_eq.is_empty() {
        0.0
    } else {
        (&p.a_eq * &xv - &p.b_eq).amax()
    };
    let slack = &p.h - &p.g * &xv;
    let inequality = slack.iter().fold(0.0_f64, |m, &s| m.max(-s));

    let mut grad = p.q_diag.component_mul(&xv) + &p.c;
    if !y.is_empty() {
        grad += p.a_eq.tr_mul(&yv);
    }
    if !z.is_empty() {
        grad += p.g.tr_mul(&zc);
    }
    let stationarity = if grad.is_empty() { 0.0 } else { grad.amax() };
    let dual_sign = z.iter().fold(0.0_f64, |m, &v| m.max(-v));
    let complementarity = zc
        .iter()
        .zip(slack.iter())
        .fold(0.0_f64, |m, (&zi, &si)| m.max((zi * si).abs()));
    KktReport {
        equality,
        inequality,
        stationarity,
        dual_sign,
        complementarity,
    }
}
