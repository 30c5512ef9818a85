//! Process-level error handling: every failure is folded into a message
//! plus one of the documented exit codes (1 usage, 2 data, 3 numerical).

use std::path::Path;

use prock_core::autodiff::AutodiffError;
use prock_core::checkpoint::CheckpointError;
use prock_core::data::DataError;
use prock_core::ingest::IngestError;
use prock_core::metrics::MetricsError;
use prock_core::net::NetError;
use prock_core::synth::SynthError;
use prock_core::train::TrainError;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

pub fn usage(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_USAGE, message: message.into() }
}

pub fn data(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_DATA, message: message.into() }
}

pub fn numeric(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_NUMERIC, message: message.into() }
}

pub fn io_write(path: &Path, e: std::io::Error) -> CliError {
    data(format!("cannot write {}: {e}", path.display()))
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> CliError {
        data(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> CliError {
        data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> CliError {
        data(e.to_string())
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> CliError {
        data(e.to_string())
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> CliError {
        numeric(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> CliError {
        // Bad fractions and a class-less stratified request are
        // misconfigurations; everything else is a property of the data.
        match e {
            MetricsError::BadFractions { .. } | MetricsError::StratifiedNeedsClasses { .. } => {
                usage(e.to_string())
            }
            MetricsError::NonFiniteScore => numeric(e.to_string()),
            _ => data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> CliError {
        match e {
            TrainError::BadConfig { .. } | TrainError::BadDropoutRate { .. } => {
                usage(e.to_string())
            }
            TrainError::Autodiff(inner) => inner.into(),
            TrainError::Net(inner) => inner.into(),
            TrainError::Metrics(inner) => inner.into(),
            other => data(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> CliError {
        match e {
            SynthError::Data(inner) => inner.into(),
            other => usage(other.to_string()),
        }
    }
}
