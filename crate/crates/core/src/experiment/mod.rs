//! Configuration-driven sweeps over sampling periods and gain schedules.

mod config;
pub mod plot;
mod replay;
mod run;

use thiserror::Error;

use crate::matrix_time::MatrixTimeError;
use crate::plant_sim::SimError;
use crate::stability::StabilityError;

pub use config::{
    preset_names, preset_text, AuditConfig, CryptoConfig, ExperimentConfig, FeasibilityConfig, GainSpec, Mode,
    MrmsConfig, PlantConfig, RunsConfig, ScheduleSpec, SimulationConfig, FROM_CERTIFICATE,
};
pub use replay::{replay, replay_file, ReplayVerdict, RunSpec};
pub use run::{
    cell_seed, run, AuditRow, ExperimentReport, FeasibilityRow, ResidualRow, RunOptions, RunRow, REPORT_FILE,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("infeasible or inadmissible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("transcript: {0}")]
    Transcript(String),
    #[error("output: {0}")]
    Io(String),
}

impl ExperimentError {
    /// 1 configuration, 2 infeasible or inadmissible, 3 numerical or
    /// verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Io(_) => 1,
            ExperimentError::Infeasible(_) => 2,
            ExperimentError::Numerical(_) | ExperimentError::Transcript(_) => 3,
        }
    }

    fn context(self, what: &str) -> Self {
        match self {
            ExperimentError::Config(m) => ExperimentError::Config(format!("{what}: {m}")),
            ExperimentError::Infeasible(m) => ExperimentError::Infeasible(format!("{what}: {m}")),
            ExperimentError::Numerical(m) => ExperimentError::Numerical(format!("{what}: {m}")),
            ExperimentError::Transcript(m) => ExperimentError::Transcript(format!("{what}: {m}")),
            ExperimentError::Io(m) => ExperimentError::Io(format!("{what}: {m}")),
        }
    }
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

fn from_matrix(e: MatrixTimeError) -> ExperimentError {
    match e {
        MatrixTimeError::InvalidPeriod(_) | MatrixTimeError::Shape(_) | MatrixTimeError::NotSquare(..) => {
            ExperimentError::Config(e.to_string())
        }
        MatrixTimeError::LogUndefined { .. } | MatrixTimeError::Singular(_) => ExperimentError::Infeasible(e.to_string()),
        MatrixTimeError::NonFinite | MatrixTimeError::NoConvergence(_) => ExperimentError::Numerical(e.to_string()),
    }
}

impl From<SimError> for ExperimentError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => ExperimentError::Config(m),
            SimError::Matrix(m) => from_matrix(m),
            SimError::Controller(c) => ExperimentError::Numerical(c.to_string()),
            SimError::Io(m) => ExperimentError::Io(m),
        }
    }
}

impl From<StabilityError> for ExperimentError {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::Matrix(m) => from_matrix(m),
            StabilityError::Quantizer(q) => ExperimentError::Config(q.to_string()),
            StabilityError::Inadmissible(m) | StabilityError::Infeasible(m) => ExperimentError::Infeasible(m),
            StabilityError::Format(m) => ExperimentError::Config(m),
            StabilityError::Io(e) => ExperimentError::Io(e.to_string()),
        }
    }
}
