use std::io::Write;

use serde::Serialize;

use super::{Mode, RunReport, Stats, WindowRuns};

/// Leading rounds of each run left out of timing statistics.
pub const WARMUP_ROUNDS: usize = 1;

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub mode: Mode,
    /// Per-agent computations counted.
    pub samples: usize,
    pub mean_ns: f64,
    pub median_ns: f64,
    pub mean_round_ns: f64,
    pub median_round_ns: f64,
    pub mean_setup_ns: f64,
}

fn timing_row(mode: Mode, runs: &[&RunReport]) -> TimingRow {
    let skip = if mode == Mode::Central { 0 } else { WARMUP_ROUNDS };
    let mut agent: Vec<f64> = Vec::new();
    let mut round: Vec<f64> = Vec::new();
    for r in runs {
        for row in r.compute_ns.iter().skip(skip) {
            agent.extend(row.iter().map(|&x| x as f64));
        }
        round.extend(r.round_ns.iter().skip(skip).map(|&x| x as f64));
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let setup: Vec<f64> = runs.iter().map(|r| r.setup_ns as f64).collect();
    TimingRow {
        mode,
        samples: agent.len(),
        mean_ns: mean(&agent),
        median_ns: median(&mut agent.clone()),
        mean_round_ns: mean(&round),
        median_round_ns: median(&mut round),
        mean_setup_ns: mean(&setup),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: Mode,
    /// Pooled over every run's rounds from its convergence round on.
    pub post_optimality: Stats,
    pub post_schedule: Stats,
    pub mean_converged_at: f64,
    /// Mean over windows of each round's deviations.
    pub mean_optimality: Vec<f64>,
    pub mean_schedule: Vec<f64>,
}

impl ModeSummary {
    /// Mean schedule deviation at `round` (1-based), if every run got there.
    pub fn schedule_at(&self, round: usize) -> Option<f64> {
        self.mean_schedule.get(round.checked_sub(1)?).copied()
    }
}

pub fn mode_summary(mode: Mode, runs: &[&RunReport]) -> ModeSummary {
    let mut opt = Vec::new();
    let mut sch = Vec::new();
    for r in runs {
        let from = r.converged_at.max(1) - 1;
        opt.extend_from_slice(&r.optimality[from..]);
        sch.extend_from_slice(&r.schedule[from..]);
    }
    let rounds = runs.iter().map(|r| r.schedule.len()).min().unwrap_or(0);
    let n = runs.len().max(1) as f64;
    let curve = |f: fn(&RunReport) -> &Vec<f64>| -> Vec<f64> {
        (0..rounds).map(|k| runs.iter().map(|r| f(r)[k]).sum::<f64>() / n).collect()
    };
    ModeSummary {
        mode,
        post_optimality: Stats::of(&opt),
        post_schedule: Stats::of(&sch),
        mean_converged_at: runs.iter().map(|r| r.converged_at as f64).sum::<f64>() / n,
        mean_optimality: curve(|r| &r.optimality),
        mean_schedule: curve(|r| &r.schedule),
    }
}

/// Aggregates of a bench over all windows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub windows: usize,
    pub timing: Vec<TimingRow>,
    /// Mean ADMM primal time over mean LOOP-MAC forward time, per agent.
    pub speedup: f64,
    pub modes: Vec<ModeSummary>,
    /// Share of windows where LOOP-MAC's schedule deviation reaches 0.15
    /// within 10 rounds.
    pub loopmac_within_10: f64,
}

fn pick(runs: &[WindowRuns], mode: Mode) -> Vec<&RunReport> {
    runs.iter()
        .map(|w| match mode {
            Mode::Central => &w.central,
            Mode::Admm => &w.admm,
            Mode::Loopmac => &w.loopmac,
        })
        .collect()
}

impl BenchSummary {
    pub fn from_runs(runs: &[WindowRuns]) -> Self {
        let modes = [Mode::Central, Mode::Admm, Mode::Loopmac];
        let timing: Vec<TimingRow> = modes.iter().map(|&m| timing_row(m, &pick(runs, m))).collect();
        let lm = pick(runs, Mode::Loopmac);
        let within = lm
            .iter()
            .filter(|r| r.schedule.iter().take(10).any(|&s| s <= 0.15))
            .count();
        Self {
            windows: runs.len(),
            speedup: timing[1].mean_ns / timing[2].mean_ns,
            timing,
            modes: modes.iter().map(|&m| mode_summary(m, &pick(runs, m))).collect(),
            loopmac_within_10: within as f64 / runs.len().max(1) as f64,
        }
    }

    pub fn mode(&self, mode: Mode) -> &ModeSummary {
        self.modes.iter().find(|m| m.mode == mode).expect("all modes summarized")
    }

    /// Plain-text summary block.
    pub fn text(&self) -> String {
        let mut s = format!("windows: {}\n", self.windows);
        s += "per-agent computation time (warmup round excluded):\n";
        for t in &self.timing {
            s += &format!(
                "  {:<8} mean {:>12.0} ns  median {:>12.0} ns  setup {:>12.0} ns\n",
                t.mode.label(),
                t.mean_ns,
                t.median_ns,
                t.mean_setup_ns
            );
        }
        s += &format!("speedup (admm primal / loopmac forward): {:.1}x\n", self.speedup);
        s += "post-convergence deviation (avg / var / max / min):\n";
        for m in &self.modes {
            let (o, d) = (m.post_optimality, m.post_schedule);
            s += &format!(
                "  {:<8} optimality {:.4} / {:.2e} / {:.4} / {:.4}   schedule {:.4} / {:.2e} / {:.4} / {:.4}   converged at {:.1}\n",
                m.mode.label(),
                o.avg,
                o.var,
                o.max,
                o.min,
                d.avg,
                d.var,
                d.max,
                d.min,
                m.mean_converged_at
            );
        }
        let at10 = |m: Mode| self.mode(m).schedule_at(10).unwrap_or(f64::NAN);
        s += &format!(
            "schedule deviation at round 10: admm {:.4}, loopmac {:.4}; loopmac within 0.15 by round 10 on {:.1}% of windows\n",
            at10(Mode::Admm),
            at10(Mode::Loopmac),
            100.0 * self.loopmac_within_10
        );
        s
    }
}

/// Table of per-agent iteration times, one row per mode.
pub fn write_timing_csv<W: Write>(summary: &BenchSummary, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "mode",
        "samples",
        "mean_ns",
        "median_ns",
        "mean_round_ns",
        "median_round_ns",
        "mean_setup_ns",
        "speedup",
    ])?;
    let base = summary.timing.iter().find(|t| t.mode == Mode::Admm).map_or(f64::NAN, |t| t.mean_ns);
    for t in &summary.timing {
        out.write_record([
            t.mode.label().to_string(),
            t.samples.to_string(),
            t.mean_ns.to_string(),
            t.median_ns.to_string(),
            t.mean_round_ns.to_string(),
            t.median_round_ns.to_string(),
            t.mean_setup_ns.to_string(),
            (base / t.mean_ns).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Post-convergence statistics, one row per mode and metric.
pub fn write_post_convergence_csv<W: Write>(summary: &BenchSummary, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["mode", "metric", "avg", "var", "max", "min"])?;
    for m in &summary.modes {
        for (name, s) in [("optimality", m.post_optimality), ("schedule", m.post_schedule)] {
            out.write_record([
                m.mode.label().to_string(),
                name.to_string(),
                s.avg.to_string(),
                s.var.to_string(),
                s.max.to_string(),
                s.min.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Per-round deviations of every run, plus `mean` rows averaged over
/// windows.
pub fn write_curves_csv<W: Write>(runs: &[WindowRuns], summary: &BenchSummary, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["mode", "scenario", "iteration", "optimality", "schedule"])?;
    for m in &summary.modes {
        for (k, (o, s)) in m.mean_optimality.iter().zip(&m.mean_schedule).enumerate() {
            out.write_record([
                m.mode.label().to_string(),
                "mean".to_string(),
                (k + 1).to_string(),
                o.to_string(),
                s.to_string(),
            ])?;
        }
    }
    for w in runs {
        for r in [&w.central, &w.admm, &w.loopmac] {
            for (k, (o, s)) in r.optimality.iter().zip(&r.schedule).enumerate() {
                out.write_record([
                    r.mode.label().to_string(),
                    r.scenario.clone(),
                    (k + 1).to_string(),
                    o.to_string(),
                    s.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }
}
