//! Exit codes and single-line diagnostics.

use std::fmt;

use monoid_core::Error as CoreError;

pub const EXIT_BREACH: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_LINE_SEARCH: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_IO: i32 = 5;

/// An error that already knows its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, kind: &'static str, message: impl Into<String>) -> Self {
        Failure {
            code,
            kind,
            message: message.into(),
        }
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, "schema", message)
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, "usage", message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(EXIT_IO, "io", message)
    }

    pub fn schema_from(e: CoreError) -> Self {
        Self::schema(e.to_string())
    }

    /// Maps a library error onto the CLI's exit codes.
    pub fn from_core(e: &CoreError) -> Self {
        let code = match e {
            CoreError::Newton { .. } | CoreError::Singular { .. } => EXIT_SOLVER,
            CoreError::LineSearch { .. } => EXIT_LINE_SEARCH,
            CoreError::Io { .. } => EXIT_IO,
            CoreError::Format(_) => EXIT_USAGE,
            CoreError::Usage(_) | CoreError::Domain(_) | CoreError::Shape(_) => EXIT_USAGE,
        };
        let kind = match e {
            CoreError::Format(_) => "schema",
            other => other.kind(),
        };
        Self::new(code, kind, e.to_string())
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

/// Exit code and `error[kind]: message` line for any error reaching `main`.
pub fn diagnose(err: &anyhow::Error) -> (i32, String) {
    let (code, kind) = if let Some(f) = err.downcast_ref::<Failure>() {
        (f.code, f.kind)
    } else if let Some(e) = err.downcast_ref::<CoreError>() {
        let f = Failure::from_core(e);
        (f.code, f.kind)
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        (EXIT_IO, "io")
    } else {
        (EXIT_USAGE, "usage")
    };
    let mut msg = String::new();
    for part in err.chain().map(|e| e.to_string()) {
        if msg.ends_with(&part) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&part);
    }
    let msg = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    (code, format!("error[{kind}]: {msg}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_follow_error_kind() {
        let e = anyhow::Error::new(CoreError::Newton { step: 3, residual: 1.0 });
        assert_eq!(diagnose(&e).0, EXIT_SOLVER);
        let e = anyhow::Error::new(CoreError::Format("bad\nthing".into())).context("reading x");
        let (code, line) = diagnose(&e);
        assert_eq!(code, EXIT_USAGE);
        assert!(line.starts_with("error[schema]: reading x: "));
        assert!(!line.contains('\n'));
        assert_eq!(diagnose(&anyhow::Error::new(Failure::io("gone"))).0, EXIT_IO);
    }
}
