use softschema::analysis::AnalysisError;
use softschema::datagen::DatasetError;
use softschema::models::ModelError;
use softschema::render::RenderError;
use softschema::sim::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Format(_) => "format",
            CliError::Divergence(_) => "divergence",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Format(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let msg = e.to_string();
        match e {
            DatasetError::Config(_) => CliError::Config(msg),
            DatasetError::Sim {
                source: SimError::Divergence { .. },
                ..
            }
            | DatasetError::Sensor { .. } => CliError::Divergence(msg),
            DatasetError::Sim { .. } => CliError::Config(msg),
            DatasetError::Render(r) => r.into(),
            DatasetError::Io(_) => CliError::Io(msg),
            DatasetError::Magic
            | DatasetError::Version { .. }
            | DatasetError::Truncated { .. }
            | DatasetError::Trailing(_)
            | DatasetError::Header(_) => CliError::Format(msg),
        }
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        let msg = e.to_string();
        match e {
            RenderError::Io(_) | RenderError::Png(_) => CliError::Io(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let msg = e.to_string();
        match e {
            ModelError::Resolution(_) | ModelError::Spec(_) => CliError::Config(msg),
            ModelError::Diverged(_) => CliError::Divergence(msg),
            ModelError::Io(_) => CliError::Io(msg),
            ModelError::Shape { .. } | ModelError::Format(_) | ModelError::Truncated { .. } | ModelError::Tensor(_) => {
                CliError::Format(msg)
            }
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        let msg = e.to_string();
        match e {
            AnalysisError::Model(m) => m.into(),
            AnalysisError::Dataset(d) => d.into(),
            AnalysisError::Render(r) => r.into(),
            AnalysisError::UnknownLayer { .. }
            | AnalysisError::Lag { .. }
            | AnalysisError::Frame { .. }
            | AnalysisError::EmptySplit => CliError::Config(msg),
            AnalysisError::Shape(_) | AnalysisError::Tensor(_) => CliError::Format(msg),
            AnalysisError::Csv(_) | AnalysisError::Io(_) | AnalysisError::Encode(_) => CliError::Io(msg),
        }
    }
}
