//! placeholder
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("not yet implemented")]
    Todo,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {}

pub fn run_pipeline(_cfg: &PipelineConfig) -> Result<(), PipelineError> {
    Err(PipelineError::Todo)
}
