use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single model problem, optionally pinned to a source position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub message: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
}

impl Diagnostic {
    pub fn new(message: impl Into<String>) -> Self {
        Diagnostic {
            message: message.into(),
            line: None,
            column: None,
        }
    }

    pub fn at(mut self, line: usize, column: usize) -> Self {
        self.line = Some(line);
        self.column = Some(column);
        self
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{l}:{c}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

fn join(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum HazError {
    #[error("lexical error at {line}:{column}: {message}")]
    Lex { line: usize, column: usize, message: String },
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("model validation failed: {}", join(.0))]
    Validation(Vec<Diagnostic>),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

impl HazError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            HazError::Lex { .. } | HazError::Syntax { .. } | HazError::Validation(_) => 2,
            HazError::Resource(_) => 3,
            HazError::Config(_) | HazError::Io(_) | HazError::Format(_) => 1,
        }
    }
}

impl From<serde_json::Error> for HazError {
    fn from(e: serde_json::Error) -> Self {
        HazError::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HazError>;
