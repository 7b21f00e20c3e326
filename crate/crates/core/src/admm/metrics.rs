use super::{AdmmError, TrajectoryLog};

/// Per-iteration deviation curves of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub iterations: Vec<usize>,
    /// `[iteration][agent]` optimality deviation rate on own variables.
    pub optimality: Vec<Vec<f64>>,
    /// Mean over agents of `optimality`.
    pub mean_optimality: Vec<f64>,
    pub schedule: Vec<f64>,
    /// Largest agent consensus residual.
    pub consensus: Vec<f64>,
    pub agent_ns: Vec<Vec<u64>>,
    pub coordination_ns: Vec<u64>,
}

/// `|u - u*|^2 / |u*|^2`.
pub fn optimality_deviation(u: &[f64], u_ref: &[f64]) -> f64 {
    assert_eq!(u.len(), u_ref.len(), "vector lengths differ");
    let num: f64 = u.iter().zip(u_ref).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = u_ref.iter().map(|b| b * b).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Mean over steps of `|sum_i P_O^i - P_sch| / |P_sch|`.
pub fn schedule_deviation(outputs: &[&[f64]], schedule: &[f64]) -> f64 {
    let h = schedule.len();
    if h == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for t in 0..h {
        let total: f64 = outputs.iter().map(|o| o[t]).sum();
        let gap = (total - schedule[t]).abs();
        acc += if schedule[t] == 0.0 { gap } else { gap / schedule[t].abs() };
    }
    acc / h as f64
}

pub fn metrics(log: &TrajectoryLog) -> Result<MetricsReport, AdmmError> {
    let reference = log.reference.as_ref().ok_or(AdmmError::MissingReference)?;
    let n = log.n_agents();
    let h = log.steps();
    let last = log.iterations();
    let mut rep = MetricsReport {
        iterations: Vec::new(),
        optimality: Vec::new(),
        mean_optimality: Vec::new(),
        schedule: Vec::new(),
        consensus: Vec::new(),
        agent_ns: log.timings.iter().map(|t| t.agent_ns.clone()).collect(),
        coordination_ns: log.timings.iter().map(|t| t.coordination_ns).collect(),
    };
    for k in 1..=last {
        let recs: Vec<_> = (0..n).filter_map(|i| log.record(k, i)).collect();
        if recs.len() != n {
            return Err(AdmmError::Log(format!(
                "scenario {}: iteration {k} has {} of {n} agents",
                log.scenario,
                recs.len()
            )));
        }
        let opt: Vec<f64> = recs
            .iter()
            .map(|r| {
                let m = log.n_own[r.agent];
                optimality_deviation(&r.u[..m], &reference[r.agent][..m])
            })
            .collect();
        let outputs: Vec<&[f64]> = recs
            .iter()
            .map(|r| {
                let m = log.n_own[r.agent];
                &r.u[m - h..m]
            })
            .collect();
        rep.iterations.push(k);
        rep.mean_optimality.push(opt.iter().sum::<f64>() / n as f64);
        rep.optimality.push(opt);
        rep.schedule.push(schedule_deviation(&outputs, &log.schedule));
        rep.consensus.push(recs.iter().map(|r| r.residual).fold(0.0, f64::max));
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::TrajectoryRecord;

    #[test]
    fn deviation_rates() {
        let u = [1.0, -2.0, 3.0];
        assert_eq!(optimality_deviation(&u, &u), 0.0);
        let twice: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
        assert!((optimality_deviation(&twice, &u) - 1.0).abs() < 1e-15);
        assert_eq!(optimality_deviation(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn schedule_rate() {
        let a = [-30.0, -20.0];
        let b = [-20.0, -20.0];
        assert_eq!(schedule_deviation(&[&a, &b], &[-50.0, -40.0]), 0.0);
        let r = schedule_deviation(&[&a, &b], &[-40.0, -50.0]);
        assert!((r - 0.5 * (10.0 / 40.0 + 10.0 / 50.0)).abs() < 1e-15);
    }

    #[test]
    fn missing_reference() {
        let log = TrajectoryLog::new("x", &[1.0], vec![1]);
        assert_eq!(metrics(&log), Err(AdmmError::MissingReference));
    }

    #[test]
    fn curves_from_log() {
        let mut log = TrajectoryLog::new("x", &[-10.0], vec![2, 1]);
        log.reference = Some(vec![vec![1.0, -4.0, -6.0], vec![-6.0, -4.0]]);
        log.records.push(TrajectoryRecord { iteration: 1, agent: 0, residual: 0.5, u: vec![1.0, -4.0, 0.0], lambda: vec![0.0] });
        log.records.push(TrajectoryRecord { iteration: 1, agent: 1, residual: 0.2, u: vec![-12.0, 0.0], lambda: vec![0.0] });
        let m = metrics(&log).unwrap();
        assert_eq!(m.optimality[0], vec![0.0, 1.0]);
        assert!((m.schedule[0] - 0.6).abs() < 1e-15);
        assert_eq!(m.consensus[0], 0.5);
    }
}
