//! Experiment harness: dataset generation, two-phase training, difficulty
//! scoring, repeated balanced evaluation, and mode comparison tables.

use thiserror::Error;

pub mod commands;
pub mod config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing prerequisite {missing}; produce it with `{produce_with}`")]
    MissingPrerequisite {
        missing: String,
        produce_with: String,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingPrerequisite { .. } => 3,
            CliError::Data(_) => 4,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<vogcl::data::DataError> for CliError {
    fn from(e: vogcl::data::DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<vogcl::trainer::TrainError> for CliError {
    fn from(e: vogcl::trainer::TrainError) -> Self {
        match e {
            vogcl::trainer::TrainError::InvalidConfig(_) => CliError::Config(e.to_string()),
            vogcl::trainer::TrainError::EmptyDataset => CliError::Data(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<vogcl::model::ModelError> for CliError {
    fn from(e: vogcl::model::ModelError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<vogcl::vog::VogError> for CliError {
    fn from(e: vogcl::vog::VogError) -> Self {
        match e {
            vogcl::vog::VogError::TooFewCheckpoints(_) => CliError::Config(e.to_string()),
            vogcl::vog::VogError::NanScore(_) | vogcl::vog::VogError::MalformedScores { .. } => {
                CliError::Data(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<vogcl::curriculum::CurriculumError> for CliError {
    fn from(e: vogcl::curriculum::CurriculumError) -> Self {
        match e {
            vogcl::curriculum::CurriculumError::MissingScore(_) => CliError::Data(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<vogcl::metrics::MetricsError> for CliError {
    fn from(e: vogcl::metrics::MetricsError) -> Self {
        CliError::Internal(e.to_string())
    }
}
