use std::fmt;
use std::path::Path;

use nsl_core::dataset::DatasetError;
use nsl_core::evaluation::report::ReportError;
use nsl_core::evaluation::{CvError, OverlayError};
use nsl_core::ols::OlsError;
use nsl_core::training::BundleError;
use nsl_core::{StainError, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Validation,
    Data,
    Numeric,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Validation,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Data,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Numeric,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::data(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Validation => 1,
            Kind::Data => 2,
            Kind::Numeric => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<StainError> for CliError {
    fn from(e: StainError) -> Self {
        let kind = match e {
            StainError::InvalidEpsilon(_) => Kind::Validation,
            StainError::InvalidPatch(_) | StainError::EmptyBatch => Kind::Data,
            StainError::SingularRow { .. } | StainError::NonFiniteParameter => Kind::Numeric,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Stain(s) => s.into(),
            DatasetError::UnknownGene(_)
            | DatasetError::InvalidPseudoCount(_)
            | DatasetError::InvalidSynth(_) => Self::validation(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Stain(s) => s.into(),
            TrainError::InvalidConfig(_)
            | TrainError::UnknownGene(_)
            | TrainError::EmptyGeneList => Self::validation(e.to_string()),
            TrainError::NonFiniteLoss { .. } => Self::numeric(e.to_string()),
            TrainError::EmptyDataset(_) | TrainError::MissingPatch(_) => Self::data(e.to_string()),
        }
    }
}

impl From<CvError> for CliError {
    fn from(e: CvError) -> Self {
        match e {
            CvError::Train(t) => t.into(),
            CvError::SinglePatient(_) => Self::data(e.to_string()),
            CvError::EmptyGeneList | CvError::UnknownGene { .. } => Self::validation(e.to_string()),
        }
    }
}

impl From<OlsError> for CliError {
    fn from(e: OlsError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<BundleError> for CliError {
    fn from(e: BundleError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<OverlayError> for CliError {
    fn from(e: OverlayError) -> Self {
        Self::numeric(e.to_string())
    }
}
