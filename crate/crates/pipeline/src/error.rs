use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Input,
    Segmentation,
    Candidates,
    Selection,
    Composition,
    Hints,
    Propagation,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Input => "input",
            Stage::Segmentation => "segmentation",
            Stage::Candidates => "candidates",
            Stage::Selection => "selection",
            Stage::Composition => "composition",
            Stage::Hints => "hints",
            Stage::Propagation => "propagation",
            Stage::Output => "output",
        })
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync + 'static>;

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    source: BoxError,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Message(String);

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<BoxError>) -> Self {
        Self {
            stage,
            source: source.into(),
        }
    }

    pub fn message(stage: Stage, msg: impl Into<String>) -> Self {
        Self::new(stage, Message(msg.into()))
    }

    pub fn source_message(&self) -> String {
        self.source.to_string()
    }

    pub fn inner(&self) -> &(dyn std::error::Error + Send + Sync + 'static) {
        &*self.source
    }

    /// Process exit code: 2 for configuration and unreadable inputs, 1 for
    /// failures inside a stage.
    pub fn exit_code(&self) -> i32 {
        match self.stage {
            Stage::Config => 2,
            Stage::Input => 2,
            _ => 1,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<BoxError>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}
