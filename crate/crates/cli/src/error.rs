use std::fmt;

use calibfpa::Error;

pub const EXIT_BAD_ARGS: u8 = 2;
pub const EXIT_MISSING_INPUT: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn bad_args(message: impl Into<String>) -> Self {
        Self { code: EXIT_BAD_ARGS, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::ShapeMismatch(_) => EXIT_BAD_ARGS,
            Error::MissingInput(_) | Error::Format { .. } | Error::Io { .. } => EXIT_MISSING_INPUT,
            Error::Numerical(_) => EXIT_NUMERICAL,
        };
        Self { code, message: e.to_string() }
    }
}
