use std::fmt;
use std::process::ExitCode;

/// An error tagged with the process exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// The input was read fine but is not acceptable.
    Invalid,
    /// A file could not be read, written or parsed.
    Io,
}

impl Failure {
    pub fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: Kind::Invalid,
            error: error.into(),
        }
    }

    pub fn io(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: Kind::Io,
            error: error.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self.kind {
            Kind::Invalid => ExitCode::from(1),
            Kind::Io => ExitCode::from(2),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Library errors often repeat their source in their own message.
        let mut text = self.error.to_string();
        for cause in self.error.chain().skip(1) {
            let cause = cause.to_string();
            if !text.contains(&cause) {
                text = format!("{text}: {cause}");
            }
        }
        f.write_str(&text)
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub trait Tag<T> {
    fn io(self) -> CliResult<T>;
    fn invalid(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for Result<T, E> {
    fn io(self) -> CliResult<T> {
        self.map_err(Failure::io)
    }

    fn invalid(self) -> CliResult<T> {
        self.map_err(Failure::invalid)
    }
}
