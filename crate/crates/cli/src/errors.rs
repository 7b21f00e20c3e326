use std::fmt::Display;
use std::path::Path;
use std::process::ExitCode;

use serde::Serialize;

use loopmac::admm::AdmmError;
use loopmac::bench::BenchError;
use loopmac::gauge::GaugeError;
use loopmac::model::ModelError;
use loopmac::qp::QpError;
use loopmac::scenario::ScenarioError;
use loopmac::train::TrainError;

pub const USAGE: u8 = 2;
pub const INFEASIBLE: u8 = 3;
pub const SOLVER: u8 = 4;

/// Error report printed as one JSON object on stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: u8,
}

impl CliError {
    fn new(kind: &'static str, exit_code: u8, message: impl Display) -> Self {
        Self {
            kind,
            message: message.to_string(),
            exit_code,
        }
    }

    pub fn usage(message: impl Display) -> Self {
        Self::new("usage", USAGE, message)
    }

    pub fn io(path: &Path, e: impl Display) -> Self {
        Self::new("io", USAGE, format!("{}: {e}", path.display()))
    }

    pub fn emit(&self) -> ExitCode {
        let json = serde_json::to_string(self).unwrap_or_else(|_| format!("{{\"message\":{:?}}}", self.message));
        eprintln!("{json}");
        ExitCode::from(self.exit_code)
    }
}

impl From<QpError> for CliError {
    fn from(e: QpError) -> Self {
        match e {
            QpError::Infeasible | QpError::EmptyInterior(_) => Self::new("infeasible", INFEASIBLE, e),
            QpError::MaxIter(_) => Self::new("solver", SOLVER, e),
            QpError::DimensionMismatch(_) | QpError::NotConvex(_) => Self::new("invalid_problem", USAGE, e),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InfeasibleBounds { .. } | ModelError::InconsistentEqualities(_) => {
                Self::new("infeasible", INFEASIBLE, e)
            }
            _ => Self::new("invalid_model", USAGE, e),
        }
    }
}

impl From<AdmmError> for CliError {
    fn from(e: AdmmError) -> Self {
        match e {
            AdmmError::Model(m) => m.into(),
            AdmmError::Qp(q) => q.into(),
            AdmmError::SubproblemInfeasible { .. } | AdmmError::CentralInfeasible => {
                Self::new("infeasible", INFEASIBLE, e)
            }
            AdmmError::SolverMaxIter { .. }
            | AdmmError::CentralMaxIter(_)
            | AdmmError::StaleMessage { .. }
            | AdmmError::MissingMessage { .. } => Self::new("solver", SOLVER, e),
            AdmmError::InvalidConfig(_) => Self::new("usage", USAGE, e),
            AdmmError::MissingReference | AdmmError::Log(_) => Self::new("data", USAGE, e),
        }
    }
}

impl From<GaugeError> for CliError {
    fn from(e: GaugeError) -> Self {
        match e {
            GaugeError::Model(m) => m.into(),
            GaugeError::Qp(q) => q.into(),
            GaugeError::WeightsMissing(_) => Self::new("weights_missing", USAGE, e),
            GaugeError::Weights(_) | GaugeError::ShapeMismatch(_) => Self::new("weights", USAGE, e),
            GaugeError::Infeasible(_) | GaugeError::BadShift { .. } => Self::new("infeasible", INFEASIBLE, e),
            GaugeError::SingularBasis(_)
            | GaugeError::OutOfBall(_)
            | GaugeError::Unbounded
            | GaugeError::NonFiniteActivation => Self::new("numerical", SOLVER, e),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Model(m) => m.into(),
            _ => Self::new("scenario", USAGE, e),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Admm(a) => a.into(),
            TrainError::Gauge(g) => g.into(),
            TrainError::Scenario(s) => s.into(),
            TrainError::Config(_) => Self::new("usage", USAGE, e),
            TrainError::Dataset(_) => Self::new("data", USAGE, e),
            TrainError::NonFiniteLoss | TrainError::Diverged { .. } => Self::new("training", SOLVER, e),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Admm(a) => a.into(),
            BenchError::Gauge(g) => g.into(),
            BenchError::Config(_) => Self::new("usage", USAGE, e),
            BenchError::Io(_) => Self::new("io", USAGE, e),
            BenchError::Verify(_) => Self::new("verify", SOLVER, e),
        }
    }
}
