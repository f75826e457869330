use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or invalid input files; exit code 1.
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] relightkit::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if is_input_error(e) => 1,
            CliError::Core(_) => 2,
        }
    }
}

/// Errors caused by what the user passed in rather than by the run itself.
fn is_input_error(e: &relightkit::Error) -> bool {
    use relightkit::Error::*;
    matches!(
        e,
        EmptyTrack
            | InvalidLight(_)
            | InvalidPose(_)
            | InvalidScript(_)
            | NonPositiveDepth(_)
            | NonIncreasingDepths
            | FrameCount(_)
            | PlaneCount(_)
            | Config(_)
    )
}

pub type CliResult<T> = Result<T, CliError>;
