use std::fmt;
use std::process::ExitCode;

/// Input or configuration problem.
pub const EXIT_INPUT: u8 = 2;
/// The estimation itself failed.
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Library errors default to input errors; estimation call sites map to
/// [`Failure::runtime`] explicitly.
impl From<dslift_core::Error> for Failure {
    fn from(e: dslift_core::Error) -> Failure {
        Failure::input(e.to_string())
    }
}

pub trait Context<T> {
    fn context(self, what: impl fmt::Display) -> Result<T, Failure>;
}

impl<T> Context<T> for dslift_core::Result<T> {
    fn context(self, what: impl fmt::Display) -> Result<T, Failure> {
        self.map_err(|e| Failure::input(format!("{what}: {e}")))
    }
}
