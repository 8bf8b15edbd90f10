use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("map load error ({field}): {msg}")]
    MapLoad { field: &'static str, msg: String },
    #[error("pose ({0}, {1}) is outside the map")]
    OutOfBounds(f64, f64),
    #[error("unknown word `{word}`{}", suggestion_suffix(.suggestions))]
    UnknownWord { word: String, suggestions: Vec<String> },
    #[error("word id {0} is outside the vocabulary")]
    UnknownWordId(usize),
    #[error("model invariant violated: {0}")]
    Invariant(String),
    #[error("schema mismatch: expected {expected} version {version}, found {found}")]
    Schema { expected: &'static str, version: u32, found: String },
    #[error("malformed document: {0}")]
    Format(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no path found (searched {searched} cells)")]
    NoPath { searched: usize },
    #[error("no feasible plan; unreachable places: {unreachable:?}")]
    NoPlan { unreachable: Vec<usize> },
}

fn suggestion_suffix(s: &[String]) -> String {
    if s.is_empty() {
        String::new()
    } else {
        format!(" (did you mean: {})", s.join(", "))
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether the error reflects a broken internal invariant rather than
    /// bad user input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Invariant(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
