//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. `LOOPMAC_ACCEPTANCE=1,3` restricts the run to the
//! listed criteria.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use loopmac::admm::{run_admm, AdmmConfig};
use loopmac::bench::{bench, verify_identical, BenchConfig, BenchSummary, LoopmacConfig, Mode, WindowRuns};
use loopmac::gauge::{GaugeNet, Mlp, HIDDEN_UNITS};
use loopmac::model::{reference_agents, ScenarioInput, Vpp};
use loopmac::qp::{QpProblem, QpSettings, QpSolver, QpStatus};
use loopmac::scenario::synthesize_day;
use loopmac::train::{
    fit_scaling, generate_dataset, kink_pattern, prepare, recurrent_loss, recurrent_loss_value, rolling_day, train,
    window_label, DatasetConfig, Prepared, Split, TrainConfig,
};

const DAY_SEED: u64 = 2024;
const HORIZON: usize = 12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn reference_vpp() -> Vpp {
    Vpp::new(reference_agents())
}

fn windows(vpp: &Vpp, starts: &[usize]) -> Vec<ScenarioInput> {
    let last = starts.iter().max().copied().unwrap_or(0);
    rolling_day(vpp, &synthesize_day(DAY_SEED), HORIZON, last + 1, QpSettings::default())
        .unwrap()
        .into_iter()
        .filter(|(s, _)| starts.contains(&s.horizon.t_start))
        .map(|(s, _)| s)
        .collect()
}

// 1. ADMM run to a consensus residual of 1e-4 reaches the centralized
// objective.
fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let vpp = reference_vpp();
    let cfg = AdmmConfig {
        max_iter: 500,
        stop_tolerance: Some(1e-4),
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    let mut rounds = Vec::new();
    for scen in windows(&vpp, &[24, 84, 144, 204, 264]) {
        let run = run_admm(&vpp, &scen, &cfg, "w").unwrap();
        let f_star = run.central.objective;
        let gap = (run.objective - f_star).abs() / f_star.abs().max(1.0);
        worst = worst.max(gap);
        rounds.push(run.rounds);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-3 && secs <= 60.0,
        format!("largest relative objective gap {worst:.2e} (limit 1e-3), rounds {rounds:?}, {secs:.1} s (limit 60 s)"),
    )
}

fn random_qp(rng: &mut ChaCha8Rng, n: usize, strictly_convex: bool) -> QpProblem {
    let m_eq = rng.gen_range(0..=n / 3);
    let m_in = rng.gen_range(0..=n);
    let x_feas = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let q_diag = DVector::from_fn(n, |_, _| {
        if !strictly_convex && rng.gen_bool(0.3) {
            0.0
        } else {
            rng.gen_range(0.5..3.0)
        }
    });
    let c = DVector::from_fn(n, |_, _| rng.gen_range(-10.0..10.0));
    let a_eq = DMatrix::from_fn(m_eq, n, |_, _| rng.gen_range(-1.0..1.0));
    let b_eq = &a_eq * &x_feas;
    // general rows plus a box that keeps PSD problems bounded
    let general = DMatrix::from_fn(m_in, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut g = DMatrix::zeros(m_in + 2 * n, n);
    g.view_mut((0, 0), (m_in, n)).copy_from(&general);
    let mut h = DVector::zeros(m_in + 2 * n);
    let gx = &general * &x_feas;
    for r in 0..m_in {
        h[r] = gx[r] + rng.gen_range(0.0..2.0);
    }
    for j in 0..n {
        g[(m_in + 2 * j, j)] = 1.0;
        g[(m_in + 2 * j + 1, j)] = -1.0;
        h[m_in + 2 * j] = 10.0;
        h[m_in + 2 * j + 1] = 10.0;
    }
    QpProblem {
        q_diag,
        c,
        a_eq,
        b_eq,
        g,
        h,
    }
}

/// KKT residuals computed from scratch with plain loops:
/// (primal, stationarity, complementarity).
fn kkt_residuals(p: &QpProblem, x: &[f64], y: &[f64], z: &[f64]) -> (f64, f64, f64) {
    let n = x.len();
    let mut primal: f64 = 0.0;
    for r in 0..p.a_eq.nrows() {
        let s: f64 = (0..n).map(|j| p.a_eq[(r, j)] * x[j]).sum();
        primal = primal.max((s - p.b_eq[r]).abs());
    }
    let mut comp: f64 = 0.0;
    let mut sign: f64 = 0.0;
    for r in 0..p.g.nrows() {
        let s: f64 = (0..n).map(|j| p.g[(r, j)] * x[j]).sum();
        primal = primal.max(s - p.h[r]);
        comp = comp.max((z[r] * (p.h[r] - s)).abs());
        sign = sign.max(-z[r]);
    }
    let mut stat: f64 = 0.0;
    for j in 0..n {
        let mut d = p.q_diag[j] * x[j] + p.c[j];
        for r in 0..p.a_eq.nrows() {
            d += p.a_eq[(r, j)] * y[r];
        }
        for r in 0..p.g.nrows() {
            d += p.g[(r, j)] * z[r];
        }
        stat = stat.max(d.abs());
    }
    (primal, stat.max(sign), comp)
}

fn objective(p: &QpProblem, x: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(j, &v)| 0.5 * p.q_diag[j] * v * v + p.c[j] * v)
        .sum()
}

/// Accelerated projected gradient ascent on the dual of a strictly convex
/// QP; returns the primal point recovered from the final multipliers.
fn projected_gradient_oracle(p: &QpProblem, iters: usize) -> Vec<f64> {
    let n = p.c.len();
    let (me, mi) = (p.a_eq.nrows(), p.g.nrows());
    let mut k = DMatrix::zeros(me + mi, n);
    k.view_mut((0, 0), (me, n)).copy_from(&p.a_eq);
    k.view_mut((me, 0), (mi, n)).copy_from(&p.g);
    let mut rhs = DVector::zeros(me + mi);
    rhs.rows_mut(0, me).copy_from(&p.b_eq);
    rhs.rows_mut(me, mi).copy_from(&p.h);
    let qinv = p.q_diag.map(|q| 1.0 / q);
    let primal = |w: &DVector<f64>| -> DVector<f64> { -(&p.c + k.tr_mul(w)).component_mul(&qinv) };
    // Lipschitz constant of the dual gradient: |K Q^-1 K'|_2
    let scaled = &k * DMatrix::from_diagonal(&qinv) * k.transpose();
    let lip = scaled.symmetric_eigenvalues().amax().max(1e-12);
    let project = |w: &mut DVector<f64>| {
        for r in me..me + mi {
            w[r] = w[r].max(0.0);
        }
    };
    let mut w = DVector::zeros(me + mi);
    let mut y = w.clone();
    let mut t: f64 = 1.0;
    for _ in 0..iters {
        let x = primal(&y);
        let mut next = &y + (&k * &x - &rhs) / lip;
        project(&mut next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &w) * ((t - 1.0) / t_next);
        w = next;
        t = t_next;
    }
    primal(&w).as_slice().to_vec()
}

// 2. Random QPs certified by an independent KKT check; 20 cross-checked
// against the dual projected-gradient oracle.
fn qp_certification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut solver = QpSolver::new(QpSettings::default());
    let mut failures = Vec::new();
    let mut worst = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut worst_gap: f64 = 0.0;
    for case in 0..200 {
        let n = rng.gen_range(2..=50);
        let cross = case % 10 == 0;
        let p = random_qp(&mut rng, if cross { n.min(20) } else { n }, cross);
        solver.reset();
        let sol = solver.solve(&p).unwrap();
        if sol.status != QpStatus::Optimal {
            failures.push(format!("case {case}: {:?}", sol.status));
            continue;
        }
        let (pr, st, co) = kkt_residuals(&p, &sol.x, &sol.dual_eq, &sol.dual_ineq);
        worst = (worst.0.max(pr), worst.1.max(st), worst.2.max(co));
        if pr > 1e-6 || st > 1e-6 || co > 1e-6 {
            failures.push(format!("case {case}: kkt {pr:.1e} {st:.1e} {co:.1e}"));
        }
        if cross {
            let x_ref = projected_gradient_oracle(&p, 200_000);
            let (f, f_ref) = (objective(&p, &sol.x), objective(&p, &x_ref));
            let gap = (f - f_ref).abs();
            worst_gap = worst_gap.max(gap);
            if gap > 1e-6 * f_ref.abs().max(1.0) {
                failures.push(format!("case {case}: objective {f} vs oracle {f_ref}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "200 QPs, worst KKT primal {:.1e} stationarity {:.1e} complementarity {:.1e} (limit 1e-6), 20 oracle checks, worst objective gap {:.1e}{}",
            worst.0,
            worst.1,
            worst.2,
            worst_gap,
            if failures.is_empty() { String::new() } else { format!("; failures: {failures:?}") }
        ),
    )
}

// 3. Random weights and inputs never leave the local feasible set.
fn feasibility_by_construction() -> Outcome {
    let vpp = reference_vpp();
    let scens = windows(&vpp, &[10, 70, 130, 190, 250]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = (0.0_f64, 0.0_f64);
    let mut violations = 0;
    let mut passes = 0;
    for agent in 0..vpp.n_agents() {
        let mut net = GaugeNet::new(&vpp, &scens[0], agent, 0).unwrap();
        let contexts: Vec<_> = scens.iter().map(|s| net.context(&vpp, s).unwrap()).collect();
        let locals: Vec<_> = scens.iter().map(|s| vpp.local(agent, s).unwrap()).collect();
        for draw in 0..100 {
            let scale = rng.gen_range(0.1..20.0);
            let mut mlp = Mlp::new(net.n_inputs(), HIDDEN_UNITS, net.layout.dim(), &mut rng);
            for p in mlp.params_mut() {
                p.iter_mut().for_each(|x| *x *= scale);
            }
            net.mlp = mlp;
            for _ in 0..100 {
                let s = (draw + passes) % scens.len();
                let other: Vec<f64> = (0..net.n_other()).map(|_| rng.gen_range(-300.0..300.0)).collect();
                let u = net.forward(&contexts[s], &other).unwrap();
                let (eq, ineq) = locals[s].violations(&u);
                worst = (worst.0.max(eq), worst.1.max(ineq));
                if eq > 1e-8 || ineq > 1e-6 {
                    violations += 1;
                }
                passes += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!(
            "{passes} forward passes, {violations} violations, worst equality {:.1e} (limit 1e-8), worst inequality {:.1e} (limit 1e-6)",
            worst.0, worst.1
        ),
    )
}

fn small_prepared(vpp: &Vpp) -> (Vec<GaugeNet>, Prepared) {
    let cfg = DatasetConfig {
        admm: AdmmConfig {
            max_iter: 4,
            ..Default::default()
        },
        select: vec![41, 42, 100],
        ..Default::default()
    };
    let set = generate_dataset(vpp, &synthesize_day(DAY_SEED), &cfg).unwrap();
    let mut nets = GaugeNet::for_vpp(vpp, &set.windows[0].scenario, 0).unwrap();
    let prep = prepare(&nets, vpp, &set).unwrap();
    fit_scaling(&mut nets, &prep);
    (nets, prep)
}

// 4. Analytic gradients of the recurrent loss agree with central
// differences along random directions.
fn gradient_check() -> Outcome {
    let vpp = reference_vpp();
    let (base, prep) = small_prepared(&vpp);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let all: Vec<(usize, usize)> = (0..prep.windows.len()).flat_map(|d| (0..4).map(move |k| (d, k))).collect();
    let (mut checked, mut skipped) = (0, 0);
    let mut worst: f64 = 0.0;
    while checked < 50 {
        let mut nets = base.clone();
        for (i, net) in nets.iter_mut().enumerate() {
            let mut r = ChaCha8Rng::seed_from_u64(1000 + checked as u64 * 7 + i as u64 + skipped as u64 * 131);
            net.mlp = Mlp::new(net.n_inputs(), HIDDEN_UNITS, net.layout.dim(), &mut r);
        }
        let items: Vec<(usize, usize)> = (0..3).map(|_| all[rng.gen_range(0..all.len())]).collect();
        let n_r = rng.gen_range(1..=3);
        let grads = recurrent_loss(&nets, &prep, &items, n_r).unwrap().grads;
        let dir: Vec<Vec<Vec<f64>>> = nets
            .iter()
            .map(|n| n.mlp.params().iter().map(|p| p.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
            .collect();
        let norm = dir.iter().flatten().flatten().map(|x| x * x).sum::<f64>().sqrt();
        let analytic: f64 = grads
            .iter()
            .zip(&dir)
            .flat_map(|(g, d)| g.params().into_iter().zip(d).flat_map(|(gb, db)| gb.iter().zip(db).map(|(a, b)| a * b)))
            .sum::<f64>()
            / norm;
        let h = 1e-6;
        let shifted = |s: f64| {
            let mut n = nets.clone();
            for (net, d) in n.iter_mut().zip(&dir) {
                for (p, db) in net.mlp.params_mut().into_iter().zip(d) {
                    p.iter_mut().zip(db).for_each(|(x, y)| *x += s * y / norm);
                }
            }
            (
                recurrent_loss_value(&n, &prep, &items, n_r).unwrap(),
                kink_pattern(&n, &prep, &items, n_r).unwrap(),
            )
        };
        let centre = kink_pattern(&nets, &prep, &items, n_r).unwrap();
        let ((lp, kp), (lm, km)) = (shifted(h), shifted(-h));
        if kp != centre || km != centre {
            skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * h);
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()));
        checked += 1;
    }
    outcome(
        worst <= 1e-4,
        format!("50 points ({skipped} skipped at kinks), worst relative error {worst:.2e} (limit 1e-4)"),
    )
}

struct Trained {
    runs: Vec<WindowRuns>,
    summary: BenchSummary,
    train_secs: f64,
    verified: Result<usize, String>,
}

fn train_and_bench() -> Trained {
    let vpp = reference_vpp();
    let day = synthesize_day(DAY_SEED);
    let start = Instant::now();
    let set = generate_dataset(&vpp, &day, &DatasetConfig::default()).unwrap();
    let data_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let cfg = TrainConfig::default();
    let mut nets = GaugeNet::for_vpp(&vpp, &set.windows[0].scenario, cfg.seed).unwrap();
    let prep = prepare(&nets, &vpp, &set).unwrap();
    fit_scaling(&mut nets, &prep);
    let report = train(&mut nets, &prep, &cfg).unwrap();
    let train_secs = start.elapsed().as_secs_f64();
    println!("  generated {} ADMM trajectories in {data_secs:.0} s", set.windows.len());
    println!(
        "  trained {} epochs in {train_secs:.0} s, best test loss {:.3} at epoch {}, recoveries {:?}",
        report.curve.len() - 1,
        report.best_test,
        report.best_epoch,
        report.recoveries
    );
    let test: Vec<(String, ScenarioInput)> = set
        .windows
        .iter()
        .filter(|w| w.split == Split::Test)
        .map(|w| (window_label(w.t_start), w.scenario.clone()))
        .collect();
    let cfg = BenchConfig {
        admm: AdmmConfig::default(),
        loopmac: LoopmacConfig::default(),
        seed: DAY_SEED,
    };
    let runs = bench(&vpp, &nets, &test, &cfg).unwrap();
    let again = bench(&vpp, &nets, &test, &cfg).unwrap();
    let verified = verify_identical(&runs, &again).map_err(|e| e.to_string());
    let summary = BenchSummary::from_runs(&runs);
    print!("{}", summary.text().lines().map(|l| format!("  {l}\n")).collect::<String>());
    Trained {
        runs,
        summary,
        train_secs,
        verified,
    }
}

// 5. Post-convergence deviations of trained LOOP-MAC on the test split.
fn table_character(t: &Trained) -> Outcome {
    let lm = t.summary.mode(Mode::Loopmac);
    let (o, s) = (lm.post_optimality.avg, lm.post_schedule.avg);
    outcome(
        o <= 0.10 && s <= 0.10 && t.train_secs <= 1800.0,
        format!(
            "post-convergence optimality {o:.4}, schedule {s:.4} (limits 0.10) over {} test windows; training {:.0} s (limit 1800 s)",
            t.runs.len(),
            t.train_secs
        ),
    )
}

// 6. Trained LOOP-MAC gets within 0.15 schedule deviation in 10 rounds and
// is ahead of ADMM at round 10.
fn convergence_speed(t: &Trained) -> Outcome {
    let frac = t.summary.loopmac_within_10;
    let admm10 = t.summary.mode(Mode::Admm).schedule_at(10).unwrap_or(f64::NAN);
    let lm10 = t.summary.mode(Mode::Loopmac).schedule_at(10).unwrap_or(f64::NAN);
    outcome(
        frac >= 0.9 && admm10 > lm10,
        format!(
            "loopmac within 0.15 by round 10 on {:.1}% of windows (need 90%); mean schedule deviation at round 10: admm {admm10:.4} vs loopmac {lm10:.4} (admm must be larger)",
            100.0 * frac
        ),
    )
}

// 7. Per-agent LOOP-MAC round time against the ADMM primal solve.
fn speedup(t: &Trained) -> Outcome {
    let row = |m: Mode| t.summary.timing.iter().find(|r| r.mode == m).unwrap().clone();
    let (a, l) = (row(Mode::Admm), row(Mode::Loopmac));
    outcome(
        t.summary.speedup >= 50.0,
        format!(
            "admm primal mean {:.1} us (median {:.1}), loopmac forward mean {:.2} us (median {:.2}), ratio {:.1}x (need 50x)",
            a.mean_ns / 1e3,
            a.median_ns / 1e3,
            l.mean_ns / 1e3,
            l.median_ns / 1e3,
            t.summary.speedup
        ),
    )
}

// 8. A second bench run reproduces every reported number.
fn determinism(t: &Trained) -> Outcome {
    match &t.verified {
        Ok(n) => outcome(true, format!("{n} run reports reproduced bit-identically (timings excluded)")),
        Err(e) => outcome(false, e.clone()),
    }
}

fn main() {
    let wanted: BTreeSet<usize> = match std::env::var("LOOPMAC_ACCEPTANCE") {
        Ok(s) if !s.trim().is_empty() => s.split(',').filter_map(|x| x.trim().parse().ok()).collect(),
        _ => (1..=8).collect(),
    };
    // libtest-style flags from `cargo test` are accepted and ignored
    let names = [
        "oracle equivalence",
        "QP certification",
        "feasibility by construction",
        "gradient check",
        "post-convergence deviations",
        "convergence speed",
        "speedup",
        "determinism",
    ];
    let mut failed = Vec::new();
    let mut report = |k: usize, o: Outcome| {
        println!("criterion {k} ({}): {} - {}", names[k - 1], if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(k);
        }
    };
    let cheap: [(usize, fn() -> Outcome); 4] = [
        (1, oracle_equivalence),
        (2, qp_certification),
        (3, feasibility_by_construction),
        (4, gradient_check),
    ];
    for (k, f) in cheap {
        if wanted.contains(&k) {
            report(k, f());
        }
    }
    if wanted.iter().any(|k| (5..=8).contains(k)) {
        let trained = train_and_bench();
        let heavy: [(usize, fn(&Trained) -> Outcome); 4] =
            [(5, table_character), (6, convergence_speed), (7, speedup), (8, determinism)];
        for (k, f) in heavy {
            if wanted.contains(&k) {
                report(k, f(&trained));
            }
        }
    }
    if !failed.is_empty() {
        println!("acceptance: {} criterion(s) failed: {failed:?}", failed.len());
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
