use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DayProfileSet, STEPS_PER_DAY};
use crate::model::{reference_agents, AgentInput, AgentSpec, Horizon};

/// Declared value ranges of synthesized series.
pub mod ranges {
    /// Inflexible and preferred flexible load, kW.
    pub const LOAD: (f64, f64) = (10.0, 25.0);
    /// Magnitude of the VPP schedule, kW (the schedule itself is negative:
    /// the VPP is a net consumer).
    pub const SCHEDULE: (f64, f64) = (45.0, 115.0);
    /// PEV energy requirement rate, kW.
    pub const PEV: (f64, f64) = (10.0, 22.0);
    /// Outdoor temperature, degF.
    pub const OUTDOOR: (f64, f64) = (70.0, 95.0);
    /// Irradiance, kW/m^2.
    pub const IRRADIANCE: (f64, f64) = (0.0, 0.3);
    /// Flexible load band as a fraction of the preferred level.
    pub const FL_BAND: (f64, f64) = (0.6, 1.4);
    pub const T_REF: f64 = 77.0;
    pub const SOC0: f64 = 0.5;
}

fn hour(t: usize) -> f64 {
    t as f64 * 24.0 / STEPS_PER_DAY as f64
}

/// Smooth random series: the given daily shape plus two random low-order
/// harmonics plus AR(1) noise.
fn wave(rng: &mut ChaCha8Rng, shape: impl Fn(f64) -> f64, amp: f64, noise: f64) -> Vec<f64> {
    let harmonics: Vec<(f64, f64, f64)> = (0..2)
        .map(|k| {
            (
                rng.gen_range(0.0..amp),
                (k + 2) as f64,
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let mut e = 0.0;
    (0..STEPS_PER_DAY)
        .map(|t| {
            let h = hour(t);
            e = 0.9 * e + noise * rng.gen_range(-1.0..1.0);
            let hw: f64 = harmonics
                .iter()
                .map(|(a, k, p)| a * (2.0 * PI * k * h / 24.0 + p).sin())
                .sum();
            shape(h) + hw + e
        })
        .collect()
}

fn clip(v: Vec<f64>, (lo, hi): (f64, f64)) -> Vec<f64> {
    v.into_iter().map(|x| x.clamp(lo, hi)).collect()
}

/// Synthetic day for the three-agent reference system.
pub fn synthesize_day(seed: u64) -> DayProfileSet {
    synthesize_day_for(&reference_agents(), seed)
}

/// Synthetic day for an arbitrary agent set: every agent gets an
/// inflexible load; device-specific series are filled for the devices the
/// agent has. The schedule tracks the nominal net consumption plus a smooth
/// perturbation, clipped to the schedule range.
pub fn synthesize_day_for(agents: &[AgentSpec], seed: u64) -> DayProfileSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = STEPS_PER_DAY;
    let t_out = clip(
        wave(&mut rng, |h| 82.0 + 7.0 * (2.0 * PI * (h - 15.0) / 24.0).cos(), 1.0, 0.15),
        ranges::OUTDOOR,
    );
    let peak = rng.gen_range(0.18..0.24);
    let cloud = wave(&mut rng, |_| 0.0, 0.5, 0.05);
    let irradiance: Vec<f64> = (0..n)
        .map(|t| {
            let h = hour(t);
            if (6.0..20.0).contains(&h) {
                let shade = 1.0 - 0.15 * cloud[t].abs().min(1.0);
                (peak * (PI * (h - 6.0) / 14.0).sin() * shade).clamp(ranges::IRRADIANCE.0, ranges::IRRADIANCE.1)
            } else {
                0.0
            }
        })
        .collect();

    let mut nominal = vec![0.0; n];
    let mut inputs = Vec::with_capacity(agents.len());
    for spec in agents {
        let shift = rng.gen_range(-2.0..2.0);
        let il = clip(
            wave(&mut rng, |h| 17.5 + 5.0 * (2.0 * PI * (h - 18.0 - shift) / 24.0).cos(), 1.5, 0.3),
            ranges::LOAD,
        );
        let mut inp = AgentInput {
            inflexible_load: il.clone(),
            ..Default::default()
        };
        for t in 0..n {
            nominal[t] += il[t];
        }
        if spec.flex_load.is_some() {
            let shift = rng.gen_range(-3.0..3.0);
            let r = clip(
                wave(&mut rng, |h| 17.5 + 5.0 * (2.0 * PI * (h - 17.0 - shift) / 24.0).cos(), 1.5, 0.3),
                ranges::LOAD,
            );
            inp.fl_min = r.iter().map(|x| x * ranges::FL_BAND.0).collect();
            inp.fl_max = r.iter().map(|x| x * ranges::FL_BAND.1).collect();
            for t in 0..n {
                nominal[t] += r[t];
            }
            inp.fl_ref = r;
        }
        if let Some(st) = &spec.storage {
            inp.soc0 = ranges::SOC0.clamp(st.soc_min, st.soc_max);
        }
        if let Some(hv) = &spec.hvac {
            inp.t_out = t_out.clone();
            inp.t_ref = vec![ranges::T_REF; n];
            inp.occupied = vec![1.0; n];
            inp.t0 = ranges::T_REF;
            for t in 0..n {
                nominal[t] += ((t_out[t] - ranges::T_REF) / hv.gain()).clamp(0.0, hv.p_max);
            }
        }
        if let Some(pev) = &spec.pev {
            let e = clip(
                wave(&mut rng, |h| 16.0 + 6.0 * (2.0 * PI * (h - 14.0) / 24.0).cos(), 1.0, 0.2),
                ranges::PEV,
            );
            let e: Vec<f64> = e.into_iter().map(|x| x.min(pev.p_max)).collect();
            for t in 0..n {
                nominal[t] += e[t];
            }
            inp.pev_energy = e;
        }
        if let Some(pv) = &spec.pv {
            inp.irradiance = irradiance.clone();
            for t in 0..n {
                nominal[t] -= irradiance[t] * pv.area * pv.eta;
            }
        }
        inputs.push(inp);
    }
    let perturb = wave(&mut rng, |_| 0.0, 5.0, 0.2);
    let schedule = (0..n)
        .map(|t| -(nominal[t] + perturb[t]).clamp(ranges::SCHEDULE.0, ranges::SCHEDULE.1))
        .collect();
    DayProfileSet {
        dt: Horizon::FIVE_MINUTES,
        schedule,
        agents: inputs,
    }
}
