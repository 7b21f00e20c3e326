//! ADMM trajectory records and their CSV form.
//!
//! One row per (scenario, iteration, agent). Vectors are `;`-joined in the
//! `u` and `lambda` columns. Besides `iter` rows, each scenario carries one
//! `schedule` row (the schedule in `u`) and one `ref` row per agent (the
//! centralized optimum expanded to the agent's local vector).

use std::collections::HashMap;
use std::io::{Read, Write};

use super::{AdmmError, RoundTiming};

pub const LOG_HEADER: [&str; 8] = ["scenario", "kind", "iteration", "agent", "n_own", "residual", "u", "lambda"];

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub iteration: usize,
    pub agent: usize,
    /// Agent's consensus residual `max |copies - neighbor globals|`.
    pub residual: f64,
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub scenario: String,
    pub schedule: Vec<f64>,
    /// Number of own (non-copy) variables per agent; the last `H` of them
    /// are the agent's net power.
    pub n_own: Vec<usize>,
    pub reference: Option<Vec<Vec<f64>>>,
    pub records: Vec<TrajectoryRecord>,
    /// Wall-clock timings per round; not serialized.
    pub timings: Vec<RoundTiming>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn split(s: &str, line: usize, col: &str) -> Result<Vec<f64>, AdmmError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|x| {
            x.parse::<f64>()
                .map_err(|e| AdmmError::Log(format!("line {line}, column {col}: {e}")))
        })
        .collect()
}

impl TrajectoryLog {
    pub fn new(scenario: &str, schedule: &[f64], n_own: Vec<usize>) -> Self {
        Self {
            scenario: scenario.to_string(),
            schedule: schedule.to_vec(),
            n_own,
            reference: None,
            records: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_own.len()
    }

    pub fn steps(&self) -> usize {
        self.schedule.len()
    }

    pub fn iterations(&self) -> usize {
        self.records.iter().map(|r| r.iteration).max().unwrap_or(0)
    }

    /// Record of `agent` at `iteration`, if present.
    pub fn record(&self, iteration: usize, agent: usize) -> Option<&TrajectoryRecord> {
        self.records
            .iter()
            .find(|r| r.iteration == iteration && r.agent == agent)
    }

    fn write_rows<W: Write>(&self, out: &mut csv::Writer<W>) -> csv::Result<()> {
        let s = self.scenario.as_str();
        out.write_record([s, "schedule", "0", "", "", "0", &join(&self.schedule), ""])?;
        if let Some(reference) = &self.reference {
            for (i, u) in reference.iter().enumerate() {
                out.write_record([
                    s,
                    "ref",
                    "0",
                    &i.to_string(),
                    &self.n_own[i].to_string(),
                    "0",
                    &join(u),
                    "",
                ])?;
            }
        }
        for r in &self.records {
            out.write_record([
                s,
                "iter",
                &r.iteration.to_string(),
                &r.agent.to_string(),
                &self.n_own[r.agent].to_string(),
                &r.residual.to_string(),
                &join(&r.u),
                &join(&r.lambda),
            ])?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(logs: &[TrajectoryLog], w: W) -> Result<(), AdmmError> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| AdmmError::Log(e.to_string());
        out.write_record(LOG_HEADER).map_err(err)?;
        for log in logs {
            log.write_rows(&mut out).map_err(err)?;
        }
        out.flush().map_err(|e| AdmmError::Log(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        Self::write_csv(std::slice::from_ref(self), &mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Parses logs written by [`TrajectoryLog::write_csv`], in order of first
    /// appearance of each scenario.
    pub fn read_csv<R: Read>(r: R) -> Result<Vec<TrajectoryLog>, AdmmError> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers().map_err(|e| AdmmError::Log(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != LOG_HEADER {
            return Err(AdmmError::Log(format!("unexpected header {:?}", headers)));
        }
        let mut logs: Vec<TrajectoryLog> = Vec::new();
        let mut pos: HashMap<String, usize> = HashMap::new();
        let mut n_own: Vec<HashMap<usize, usize>> = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|e| AdmmError::Log(format!("line {line}: {e}")))?;
            let field = |k: usize| rec.get(k).unwrap_or("");
            let int = |k: usize| -> Result<usize, AdmmError> {
                field(k)
                    .parse::<usize>()
                    .map_err(|e| AdmmError::Log(format!("line {line}, column {}: {e}", LOG_HEADER[k])))
            };
            let scen = field(0).to_string();
            let li = *pos.entry(scen.clone()).or_insert_with(|| {
                logs.push(TrajectoryLog::new(&scen, &[], Vec::new()));
                n_own.push(HashMap::new());
                logs.len() - 1
            });
            match field(1) {
                "schedule" => logs[li].schedule = split(field(6), line, "u")?,
                "ref" => {
                    let agent = int(3)?;
                    n_own[li].insert(agent, int(4)?);
                    let reference = logs[li].reference.get_or_insert_with(Vec::new);
                    if reference.len() <= agent {
                        reference.resize(agent + 1, Vec::new());
                    }
                    reference[agent] = split(field(6), line, "u")?;
                }
                "iter" => {
                    let agent = int(3)?;
                    n_own[li].insert(agent, int(4)?);
                    let residual = field(5)
                        .parse::<f64>()
                        .map_err(|e| AdmmError::Log(format!("line {line}, column residual: {e}")))?;
                    logs[li].records.push(TrajectoryRecord {
                        iteration: int(2)?,
                        agent,
                        residual,
                        u: split(field(6), line, "u")?,
                        lambda: split(field(7), line, "lambda")?,
                    });
                }
                other => return Err(AdmmError::Log(format!("line {line}, column kind: unknown kind {other:?}"))),
            }
        }
        for (log, sizes) in logs.iter_mut().zip(n_own) {
            let n = sizes.keys().max().map_or(0, |m| m + 1);
            log.n_own = (0..n)
                .map(|i| {
                    sizes
                        .get(&i)
                        .copied()
                        .ok_or_else(|| AdmmError::Log(format!("scenario {}: no rows for agent {i}", log.scenario)))
                })
                .collect::<Result<_, _>>()?;
        }
        Ok(logs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrajectoryLog {
        let mut log = TrajectoryLog::new("t0005", &[-50.0, -51.25], vec![2, 2]);
        log.reference = Some(vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.1, 1e-17, 5.0, 6.0]]);
        for k in 1..=2 {
            for a in 0..2 {
                log.records.push(TrajectoryRecord {
                    iteration: k,
                    agent: a,
                    residual: 0.1 / k as f64,
                    u: vec![1.0 / 3.0, -2.5, k as f64, a as f64],
                    lambda: vec![1e-300, -0.0005],
                });
            }
        }
        log
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let a = sample();
        let mut b = sample();
        b.scenario = "t0007".into();
        let mut buf = Vec::new();
        TrajectoryLog::write_csv(&[a.clone(), b.clone()], &mut buf).unwrap();
        let back = TrajectoryLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn header_is_documented() {
        let text = sample().to_csv_string();
        assert!(text.starts_with("scenario,kind,iteration,agent,n_own,residual,u,lambda\n"));
    }

    #[test]
    fn bad_number_names_line_and_column() {
        let text = "scenario,kind,iteration,agent,n_own,residual,u,lambda\ns,iter,1,0,2,x,1;2,\n";
        let err = TrajectoryLog::read_csv(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2, column residual"), "{err}");
    }
}
