//! Scenario directory layout:
//!
//! - `agents.conf`: TOML, one `[[agent]]` table per agent with optional
//!   device sub-tables (`flex_load`, `storage`, `hvac`, `pev`, `pv`).
//!   Powers in kW, energies in kWh, temperatures in degF.
//! - `profiles.csv`: long format `index,series,value,unit`, series named
//!   `agent<i>.<field>`.
//! - `schedule.csv`: same columns, series `schedule`.
//!
//! Accepted units: `kW`, `W`, `MW` for powers; `degF`, `degC` for
//! temperatures; `kW/m2`, `W/m2` for irradiance; `-` for occupancy.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DayProfileSet, ScenarioError, STEPS_PER_DAY};
use crate::model::{
    AgentInput, AgentSpec, FlexLoadParams, Horizon, HvacParams, PevParams, PvParams, StorageParams,
    DEFAULT_NET_POWER_BOUND,
};

pub const AGENTS_FILE: &str = "agents.conf";
pub const PROFILES_FILE: &str = "profiles.csv";
pub const SCHEDULE_FILE: &str = "schedule.csv";

const CSV_HEADER: [&str; 4] = ["index", "series", "value", "unit"];

fn neg_bound() -> f64 {
    -DEFAULT_NET_POWER_BOUND
}

fn pos_bound() -> f64 {
    DEFAULT_NET_POWER_BOUND
}

fn five() -> f64 {
    5.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfFile {
    #[serde(default = "five")]
    dt_minutes: f64,
    agent: Vec<ConfAgent>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfAgent {
    id: usize,
    name: String,
    #[serde(default = "neg_bound")]
    p_out_min: f64,
    #[serde(default = "pos_bound")]
    p_out_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_soc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    flex_load: Option<FlexLoadParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    storage: Option<StorageParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hvac: Option<HvacParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pev: Option<PevParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pv: Option<PvParams>,
}

#[derive(Clone, Copy, PartialEq)]
enum Dim {
    Power,
    Temperature,
    Irradiance,
    Unitless,
}

const FIELDS: [(&str, Dim); 9] = [
    ("inflexible_load", Dim::Power),
    ("fl_min", Dim::Power),
    ("fl_max", Dim::Power),
    ("fl_ref", Dim::Power),
    ("t_out", Dim::Temperature),
    ("t_ref", Dim::Temperature),
    ("occupied", Dim::Unitless),
    ("irradiance", Dim::Irradiance),
    ("pev_energy", Dim::Power),
];

fn canonical_unit(d: Dim) -> &'static str {
    match d {
        Dim::Power => "kW",
        Dim::Temperature => "degF",
        Dim::Irradiance => "kW/m2",
        Dim::Unitless => "-",
    }
}

fn normalize(d: Dim, unit: &str, v: f64) -> Option<f64> {
    match (d, unit) {
        (Dim::Power, "kW") | (Dim::Temperature, "degF") | (Dim::Irradiance, "kW/m2") | (Dim::Unitless, "-" | "") => {
            Some(v)
        }
        (Dim::Power, "W") | (Dim::Irradiance, "W/m2") => Some(v / 1000.0),
        (Dim::Power, "MW") => Some(v * 1000.0),
        (Dim::Temperature, "degC") => Some(v * 9.0 / 5.0 + 32.0),
        _ => None,
    }
}

fn series<'a>(inp: &'a AgentInput, name: &str) -> &'a Vec<f64> {
    match name {
        "inflexible_load" => &inp.inflexible_load,
        "fl_min" => &inp.fl_min,
        "fl_max" => &inp.fl_max,
        "fl_ref" => &inp.fl_ref,
        "t_out" => &inp.t_out,
        "t_ref" => &inp.t_ref,
        "occupied" => &inp.occupied,
        "irradiance" => &inp.irradiance,
        "pev_energy" => &inp.pev_energy,
        _ => unreachable!("unknown series {name}"),
    }
}

fn series_mut<'a>(inp: &'a mut AgentInput, name: &str) -> &'a mut Vec<f64> {
    match name {
        "inflexible_load" => &mut inp.inflexible_load,
        "fl_min" => &mut inp.fl_min,
        "fl_max" => &mut inp.fl_max,
        "fl_ref" => &mut inp.fl_ref,
        "t_out" => &mut inp.t_out,
        "t_ref" => &mut inp.t_ref,
        "occupied" => &mut inp.occupied,
        "irradiance" => &mut inp.irradiance,
        "pev_energy" => &mut inp.pev_energy,
        _ => unreachable!("unknown series {name}"),
    }
}

fn io(e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Io(e.to_string())
}

pub fn save_scenario(dir: &Path, agents: &[AgentSpec], day: &DayProfileSet) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir).map_err(io)?;
    let conf = ConfFile {
        dt_minutes: day.dt * 60.0,
        agent: agents
            .iter()
            .zip(&day.agents)
            .map(|(a, inp)| ConfAgent {
                id: a.id,
                name: a.name.clone(),
                p_out_min: a.p_out_min,
                p_out_max: a.p_out_max,
                initial_soc: a.storage.as_ref().map(|_| inp.soc0),
                initial_temperature: a.hvac.as_ref().map(|_| inp.t0),
                flex_load: a.flex_load.clone(),
                storage: a.storage.clone(),
                hvac: a.hvac.clone(),
                pev: a.pev.clone(),
                pv: a.pv.clone(),
            })
            .collect(),
    };
    let text = toml::to_string(&conf).map_err(io)?;
    fs::write(dir.join(AGENTS_FILE), text).map_err(io)?;

    let mut w = csv::Writer::from_path(dir.join(PROFILES_FILE)).map_err(io)?;
    w.write_record(CSV_HEADER).map_err(io)?;
    for (i, inp) in day.agents.iter().enumerate() {
        for (name, dim) in FIELDS {
            for (t, v) in series(inp, name).iter().enumerate() {
                w.write_record([
                    t.to_string(),
                    format!("agent{i}.{name}"),
                    v.to_string(),
                    canonical_unit(dim).to_string(),
                ])
                .map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)?;

    let mut w = csv::Writer::from_path(dir.join(SCHEDULE_FILE)).map_err(io)?;
    w.write_record(CSV_HEADER).map_err(io)?;
    for (t, v) in day.schedule.iter().enumerate() {
        w.write_record([t.to_string(), "schedule".into(), v.to_string(), "kW".into()])
            .map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Field named in a deserializer message such as "missing field `eta_c`".
fn field_in(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "?".into())
}

fn parse_conf(text: &str) -> Result<(Vec<AgentSpec>, Vec<AgentInput>, f64), ScenarioError> {
    let conf: ConfFile = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        if message.contains("field") {
            ScenarioError::Schema {
                file: AGENTS_FILE.into(),
                field: field_in(&message),
                message: e.to_string().trim().to_string(),
            }
        } else {
            ScenarioError::Parse {
                file: AGENTS_FILE.into(),
                message: e.to_string().trim().to_string(),
            }
        }
    })?;
    let mut specs = Vec::new();
    let mut inputs = Vec::new();
    for (k, a) in conf.agent.into_iter().enumerate() {
        if a.id != k {
            return Err(ScenarioError::Schema {
                file: AGENTS_FILE.into(),
                field: "id".into(),
                message: format!("agent #{k} has id {}; ids must be 0, 1, 2, ... in order", a.id),
            });
        }
        if a.storage.is_some() && a.initial_soc.is_none() {
            return Err(ScenarioError::Schema {
                file: AGENTS_FILE.into(),
                field: "initial_soc".into(),
                message: format!("agent {k} has storage but no initial_soc"),
            });
        }
        if a.hvac.is_some() && a.initial_temperature.is_none() {
            return Err(ScenarioError::Schema {
                file: AGENTS_FILE.into(),
                field: "initial_temperature".into(),
                message: format!("agent {k} has hvac but no initial_temperature"),
            });
        }
        inputs.push(AgentInput {
            soc0: a.initial_soc.unwrap_or(0.0),
            t0: a.initial_temperature.unwrap_or(0.0),
            ..Default::default()
        });
        specs.push(AgentSpec {
            id: a.id,
            name: a.name,
            flex_load: a.flex_load,
            storage: a.storage,
            hvac: a.hvac,
            pev: a.pev,
            pv: a.pv,
            p_out_min: a.p_out_min,
            p_out_max: a.p_out_max,
        });
    }
    if !(conf.dt_minutes > 0.0) {
        return Err(ScenarioError::Schema {
            file: AGENTS_FILE.into(),
            field: "dt_minutes".into(),
            message: "must be positive".into(),
        });
    }
    Ok((specs, inputs, conf.dt_minutes / 60.0))
}

/// Reads a long-format CSV into `series name -> day-length vector`.
fn read_long(path: &Path, file: &str) -> Result<BTreeMap<String, (Dim, Vec<Option<f64>>)>, ScenarioError> {
    let mut rdr = csv::Reader::from_path(path).map_err(io)?;
    let headers = rdr.headers().map_err(io)?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(ScenarioError::Parse {
            file: file.into(),
            message: format!("header must be {}", CSV_HEADER.join(",")),
        });
    }
    let mut out: BTreeMap<String, (Dim, Vec<Option<f64>>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ScenarioError::Parse {
            file: file.into(),
            message: e.to_string(),
        })?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let range = |column: &str, message: String| ScenarioError::Range {
            file: file.into(),
            row,
            column: column.into(),
            message,
        };
        let t: usize = rec[0]
            .trim()
            .parse()
            .map_err(|e| range("index", format!("{e}")))?;
        if t >= STEPS_PER_DAY {
            return Err(range("index", format!("{t} is past the last step {}", STEPS_PER_DAY - 1)));
        }
        let name = rec[1].trim().to_string();
        let dim = if name == "schedule" {
            Dim::Power
        } else {
            let field = name.split_once('.').map(|(_, f)| f).unwrap_or("");
            FIELDS
                .iter()
                .find(|(f, _)| *f == field)
                .map(|(_, d)| *d)
                .ok_or_else(|| range("series", format!("unknown series {name:?}")))?
        };
        let raw: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|e| range("value", format!("{e}")))?;
        if !raw.is_finite() {
            return Err(range("value", "value must be finite".into()));
        }
        let unit = rec[3].trim();
        let v = normalize(dim, unit, raw)
            .ok_or_else(|| range("unit", format!("unit {unit:?} does not apply to {name}")))?;
        let entry = out
            .entry(name.clone())
            .or_insert_with(|| (dim, vec![None; STEPS_PER_DAY]));
        if entry.1[t].is_some() {
            return Err(range("index", format!("duplicate sample {t} of {name}")));
        }
        entry.1[t] = Some(v);
    }
    Ok(out)
}

fn complete(file: &str, name: &str, v: Vec<Option<f64>>) -> Result<Vec<f64>, ScenarioError> {
    v.into_iter()
        .enumerate()
        .map(|(t, x)| {
            x.ok_or_else(|| ScenarioError::Schema {
                file: file.into(),
                field: name.into(),
                message: format!("sample {t} missing"),
            })
        })
        .collect()
}

pub fn load_scenario(dir: &Path) -> Result<(Vec<AgentSpec>, DayProfileSet), ScenarioError> {
    let text = fs::read_to_string(dir.join(AGENTS_FILE)).map_err(|e| io(format!("{AGENTS_FILE}: {e}")))?;
    let (specs, mut inputs, dt) = parse_conf(&text)?;

    for (name, (_, v)) in read_long(&dir.join(PROFILES_FILE), PROFILES_FILE)? {
        let (agent, field) = name.split_once('.').expect("validated series name");
        let i = agent
            .strip_prefix("agent")
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&i| i < specs.len())
            .ok_or_else(|| ScenarioError::Schema {
                file: PROFILES_FILE.into(),
                field: name.clone(),
                message: format!("no agent {agent:?} in {AGENTS_FILE}"),
            })?;
        let data = complete(PROFILES_FILE, &name, v)?;
        *series_mut(&mut inputs[i], field) = data;
    }
    let mut sched = read_long(&dir.join(SCHEDULE_FILE), SCHEDULE_FILE)?;
    let schedule = match sched.remove("schedule") {
        Some((_, v)) => complete(SCHEDULE_FILE, "schedule", v)?,
        None => {
            return Err(ScenarioError::Schema {
                file: SCHEDULE_FILE.into(),
                field: "schedule".into(),
                message: "series missing".into(),
            })
        }
    };
    if let Some(other) = sched.keys().next() {
        return Err(ScenarioError::Schema {
            file: SCHEDULE_FILE.into(),
            field: other.clone(),
            message: "only the schedule series belongs here".into(),
        });
    }
    for (spec, inp) in specs.iter().zip(&inputs) {
        spec.validate()?;
        inp.validate(spec, STEPS_PER_DAY)?;
        if inp.occupied.iter().any(|&o| o != 0.0 && o != 1.0) {
            return Err(ScenarioError::Schema {
                file: PROFILES_FILE.into(),
                field: format!("agent{}.occupied", spec.id),
                message: "occupancy must be 0 or 1".into(),
            });
        }
    }
    let day = DayProfileSet {
        dt: if (dt - Horizon::FIVE_MINUTES).abs() < 1e-15 { Horizon::FIVE_MINUTES } else { dt },
        schedule,
        agents: inputs,
    };
    Ok((specs, day))
}
