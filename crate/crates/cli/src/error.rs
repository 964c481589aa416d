use std::fmt;
use std::path::Path;

use kolmo_core::KolmoError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Validation,
    Numeric,
    Io,
    PartialScaling,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Validation => 2,
            FailureKind::Numeric => 3,
            FailureKind::PartialScaling => 4,
            FailureKind::Io => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub kind: FailureKind,
    pub stage: String,
    pub message: String,
}

impl CliError {
    pub fn validation(stage: &str, message: impl Into<String>) -> Self {
        Self {
            kind: FailureKind::Validation,
            stage: stage.into(),
            message: message.into(),
        }
    }

    /// Errors raised while checking inputs are validation failures; anything
    /// later in the pipeline is numeric unless it is I/O.
    pub fn from_core(stage: &str, validating: bool, e: KolmoError) -> Self {
        let kind = match &e {
            KolmoError::Io(_) => FailureKind::Io,
            _ if validating => FailureKind::Validation,
            _ => FailureKind::Numeric,
        };
        Self {
            kind,
            stage: stage.into(),
            message: e.to_string(),
        }
    }

    pub fn io(stage: &str, e: std::io::Error) -> Self {
        Self {
            kind: FailureKind::Io,
            stage: stage.into(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }

    /// Writes `diagnostic.json` into `dir`, creating it if needed.
    pub fn write_diagnostic(&self, dir: &Path) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Diagnostic<'a> {
            exit_code: i32,
            #[serde(flatten)]
            error: &'a CliError,
        }
        std::fs::create_dir_all(dir)?;
        let body = serde_json::to_string_pretty(&Diagnostic {
            exit_code: self.exit_code(),
            error: self,
        })
        .expect("diagnostic serializes");
        std::fs::write(dir.join("diagnostic.json"), body)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failure during {}: {}", self.kind_name(), self.stage, self.message)
    }
}

impl CliError {
    fn kind_name(&self) -> &'static str {
        match self.kind {
            FailureKind::Validation => "validation",
            FailureKind::Numeric => "numeric",
            FailureKind::Io => "io",
            FailureKind::PartialScaling => "partial scaling",
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;
