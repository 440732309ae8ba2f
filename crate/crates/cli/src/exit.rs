//! The exit-code contract.

use stackscope_core::analyzer::AnalyzeError;
use stackscope_core::config::ConfigError;
use stackscope_core::detector::DetectorError;
use stackscope_core::launcher::LaunchError;
use stackscope_core::pipeline::PipelineError;
use stackscope_core::reporter::ReportError;
use stackscope_core::source::SourceError;

pub const USAGE: i32 = 1;
pub const PERMISSION: i32 = 2;
pub const TARGET: i32 = 3;
pub const TIMEOUT: i32 = 4;

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: i32, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }

    pub fn usage(msg: impl std::fmt::Display) -> Self {
        Failure::new(USAGE, anyhow::anyhow!("{msg}"))
    }
}

pub type Outcome = Result<i32, Failure>;

fn io_code(e: &std::io::Error) -> i32 {
    match e.kind() {
        std::io::ErrorKind::PermissionDenied => PERMISSION,
        _ => TARGET,
    }
}

pub fn source_code(e: &SourceError) -> i32 {
    match e {
        SourceError::PermissionDenied(_) | SourceError::UnsupportedKernel(_) => PERMISSION,
        SourceError::InvalidConfig(_) => USAGE,
        SourceError::Io(io) => io_code(io),
        _ => TARGET,
    }
}

fn analyze_code(e: &AnalyzeError) -> i32 {
    match e {
        AnalyzeError::NoMatch(_) => TARGET,
        _ => USAGE,
    }
}

/// Reading a document: bad or missing input is a target error.
pub fn read_code(e: &ReportError) -> i32 {
    match e {
        ReportError::Io { source, .. } => io_code(source),
        _ => TARGET,
    }
}

/// Any failure to write an artifact counts as an unwritable destination.
pub fn write_code(_: &ReportError) -> i32 {
    PERMISSION
}

pub fn pipeline_code(e: &PipelineError) -> i32 {
    match e {
        PipelineError::Source(s) => source_code(s),
        PipelineError::Detector(_) => USAGE,
        PipelineError::Analyze(a) => analyze_code(a),
        PipelineError::Report(r) => write_code(r),
        PipelineError::Io { .. } => PERMISSION,
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let code = match &e {
            ConfigError::Io { source, .. } => io_code(source),
            ConfigError::Invalid { .. } => USAGE,
        };
        Failure::new(code, e)
    }
}

impl From<AnalyzeError> for Failure {
    fn from(e: AnalyzeError) -> Self {
        Failure::new(analyze_code(&e), e)
    }
}

impl From<DetectorError> for Failure {
    fn from(e: DetectorError) -> Self {
        Failure::new(USAGE, e)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::new(pipeline_code(&e), e)
    }
}

pub fn launch_code(e: &LaunchError) -> i32 {
    match e {
        LaunchError::InvalidSpec(_) => USAGE,
        LaunchError::SpawnFailed { .. } => TARGET,
        LaunchError::Source(s) => source_code(s),
        LaunchError::Pipeline(p) => pipeline_code(p),
    }
}

impl From<LaunchError> for Failure {
    fn from(e: LaunchError) -> Self {
        Failure::new(launch_code(&e), e)
    }
}
