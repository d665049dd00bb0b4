use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] draftlab_core::Error),
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown {what} `{name}`{}", suggestion(.nearest))]
    UnknownKey { line: usize, what: &'static str, name: String, nearest: Option<String> },
    #[error("line {line}: {key}: {msg}")]
    Value { line: usize, key: String, msg: String },
    #[error("{}{msg}", at_line(*.line))]
    Rule { line: Option<usize>, msg: String },
    #[error("{}{what} path does not exist: {}", at_line(*.line), .path.display())]
    Path { line: Option<usize>, what: String, path: PathBuf },
    #[error("{0}")]
    Usage(String),
    #[error("conflicting cells for {cell}: {} and {}", .first.display(), .second.display())]
    Conflict { cell: String, first: PathBuf, second: PathBuf },
    #[error("{}: malformed summary: {msg}", .path.display())]
    Summary { path: PathBuf, msg: String },
}

fn suggestion(nearest: &Option<String>) -> String {
    nearest.as_ref().map(|n| format!(" (did you mean `{n}`?)")).unwrap_or_default()
}

fn at_line(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

impl CliError {
    pub fn rule(line: Option<usize>, msg: impl Into<String>) -> Self {
        CliError::Rule { line, msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Core(draftlab_core::Error::io(path, source))
    }

    /// Class name printed before the message.
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.class(),
            CliError::Syntax { .. } => "syntax",
            CliError::UnknownKey { .. } => "unknown-key",
            CliError::Value { .. } => "value",
            CliError::Rule { .. } => "rule",
            CliError::Path { .. } => "path",
            CliError::Usage(_) => "usage",
            CliError::Conflict { .. } | CliError::Summary { .. } => "report",
        }
    }

    /// Process exit code, one per class family.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "usage" => 2,
            "syntax" | "unknown-key" | "value" | "rule" | "config" => 3,
            "path" | "io" => 4,
            "format" => 5,
            "checkpoint" => 6,
            "training" => 7,
            "scoring" => 8,
            "report" => 9,
            _ => 10,
        }
    }

    /// `error[class]: message` on a single line.
    pub fn render(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.class())
    }
}
