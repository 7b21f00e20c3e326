use std::collections::HashMap;

use super::TrainError;
use crate::admm::{run_admm, solve_centralized, AdmmConfig, CentralSolution, TrajectoryLog};
use crate::model::{ScenarioInput, Vpp};
use crate::qp::QpSettings;
use crate::scenario::{chain_states, DayProfileSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Odd window starts train, even ones test.
    pub fn of(t_start: usize) -> Self {
        if t_start % 2 == 1 {
            Split::Train
        } else {
            Split::Test
        }
    }
}

/// Label of the window starting at `t_start`.
pub fn window_label(t_start: usize) -> String {
    format!("t{t_start:04}")
}

/// One scenario of a rolling day together with its ADMM trajectory and the
/// centralized optimum (the log's reference).
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub t_start: usize,
    pub split: Split,
    pub scenario: ScenarioInput,
    pub log: TrajectoryLog,
}

impl Window {
    pub fn reference(&self) -> &[Vec<f64>] {
        self.log.reference.as_deref().expect("dataset windows carry a reference")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub steps: usize,
    /// ADMM rounds N_K recorded per window.
    pub n_iter: usize,
    pub windows: Vec<Window>,
}

impl TrainingSet {
    /// Data points `(window, k)` of a split; `k` indexes the recorded
    /// iterate that seeds the unroll (0 is the all-zero start).
    pub fn points(&self, split: Split) -> Vec<(usize, usize)> {
        self.windows
            .iter()
            .enumerate()
            .filter(|(_, w)| w.split == split)
            .flat_map(|(d, _)| (0..self.n_iter).map(move |k| (d, k)))
            .collect()
    }

    pub fn logs(&self) -> Vec<TrajectoryLog> {
        self.windows.iter().map(|w| w.log.clone()).collect()
    }

    /// Rebuilds a set from trajectory logs labelled by [`window_label`],
    /// re-deriving each window's scenario from the rolling day and checking
    /// it against the logged reference.
    pub fn from_logs(vpp: &Vpp, day: &DayProfileSet, steps: usize, logs: Vec<TrajectoryLog>) -> Result<Self, TrainError> {
        let mut wanted: HashMap<usize, TrajectoryLog> = HashMap::new();
        for log in logs {
            let t = log
                .scenario
                .strip_prefix('t')
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| TrainError::Dataset(format!("unrecognized scenario label {:?}", log.scenario)))?;
            if log.reference.is_none() {
                return Err(TrainError::Dataset(format!("scenario {} has no reference", log.scenario)));
            }
            wanted.insert(t, log);
        }
        let last = wanted.keys().copied().max().unwrap_or(0);
        let n_iter = wanted.values().map(|l| l.iterations()).min().unwrap_or(0);
        let mut windows = Vec::new();
        for (scenario, central) in rolling_day(vpp, day, steps, last + 1, QpSettings::default())? {
            let t = scenario.horizon.t_start;
            let Some(log) = wanted.remove(&t) else { continue };
            let reference = log.reference.as_ref().expect("checked above");
            let gap = reference
                .iter()
                .flatten()
                .zip(central.local.iter().flatten())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if gap > 1e-5 {
                return Err(TrainError::Dataset(format!(
                    "scenario {} reference differs from the re-solved optimum by {gap:e}",
                    log.scenario
                )));
            }
            windows.push(Window {
                t_start: t,
                split: Split::of(t),
                scenario,
                log,
            });
        }
        Ok(Self { steps, n_iter, windows })
    }
}

/// Windows `t = 0, 1, ...` (at most `count`) of a rolling day: each window
/// starts from the state the previous window's optimum reaches after its
/// first step. Returns each scenario with its centralized optimum.
pub fn rolling_day(
    vpp: &Vpp,
    day: &DayProfileSet,
    steps: usize,
    count: usize,
    settings: QpSettings,
) -> Result<Vec<(ScenarioInput, CentralSolution)>, TrainError> {
    let mut states = day.initial_states();
    let mut out = Vec::new();
    for t in 0..count {
        if t + steps > day.len() {
            break;
        }
        let scen = day.slice_with_states(t, steps, &states)?;
        let central = solve_centralized(vpp, &scen, settings)?;
        let own: Vec<Vec<f64>> = central
            .local
            .iter()
            .zip(vpp.indices(steps))
            .map(|(u, idx)| u[..idx.n_own()].to_vec())
            .collect();
        states = chain_states(&vpp.agents, &scen, &own);
        out.push((scen, central));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub horizon: usize,
    pub admm: AdmmConfig,
    /// Window starts to keep; empty keeps every start of the day.
    pub select: Vec<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            admm: AdmmConfig::default(),
            select: Vec::new(),
        }
    }
}

/// Runs the rolling day and, for every selected window, `N_K` rounds of
/// ADMM recorded against the centralized optimum.
pub fn generate_dataset(vpp: &Vpp, day: &DayProfileSet, cfg: &DatasetConfig) -> Result<TrainingSet, TrainError> {
    if cfg.admm.stop_tolerance.is_some() {
        return Err(TrainError::Config("dataset trajectories need a fixed round count".into()));
    }
    let count = cfg.select.iter().max().map_or(day.len(), |m| m + 1);
    let mut windows = Vec::new();
    for (scen, _) in rolling_day(vpp, day, cfg.horizon, count, cfg.admm.qp)? {
        let t = scen.horizon.t_start;
        if !cfg.select.is_empty() && !cfg.select.contains(&t) {
            continue;
        }
        let run = run_admm(vpp, &scen, &cfg.admm, &window_label(t))?;
        windows.push(Window {
            t_start: t,
            split: Split::of(t),
            scenario: scen,
            log: run.log,
        });
    }
    Ok(TrainingSet {
        steps: cfg.horizon,
        n_iter: cfg.admm.max_iter,
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference_agents;
    use crate::scenario::synthesize_day;

    fn small(select: Vec<usize>, n_iter: usize) -> TrainingSet {
        let vpp = Vpp::new(reference_agents());
        let day = synthesize_day(21);
        let cfg = DatasetConfig {
            admm: AdmmConfig {
                max_iter: n_iter,
                ..Default::default()
            },
            select,
            ..Default::default()
        };
        generate_dataset(&vpp, &day, &cfg).unwrap()
    }

    #[test]
    fn counts_records() {
        let set = small(vec![5], 2);
        assert_eq!(set.windows.len(), 1);
        assert_eq!(set.windows[0].log.records.len(), 2 * 3);
        assert_eq!(set.points(Split::Train), vec![(0, 0), (0, 1)]);
        assert!(set.points(Split::Test).is_empty());
    }

    #[test]
    fn split_alternates_and_is_disjoint() {
        let set = small(vec![2, 3, 4], 1);
        let splits: Vec<Split> = set.windows.iter().map(|w| w.split).collect();
        assert_eq!(splits, vec![Split::Test, Split::Train, Split::Test]);
        let train = set.points(Split::Train);
        let test = set.points(Split::Test);
        assert!(train.iter().all(|p| !test.contains(p)));
    }

    #[test]
    fn generation_is_deterministic_and_reloads() {
        let untimed = |mut s: TrainingSet| {
            s.windows.iter_mut().for_each(|w| w.log.timings.clear());
            s
        };
        let a = untimed(small(vec![3, 4], 2));
        let b = untimed(small(vec![3, 4], 2));
        assert_eq!(a, b);
        let vpp = Vpp::new(reference_agents());
        let back = TrainingSet::from_logs(&vpp, &synthesize_day(21), 12, a.logs()).unwrap();
        assert_eq!(back.windows.len(), 2);
        assert_eq!(back.windows[1].scenario, a.windows[1].scenario);
        assert_eq!(back.n_iter, 2);
    }
}
