//! Error classes and their process exit codes.

use std::fmt;

pub const USAGE: u8 = 2;
pub const IO: u8 = 3;
pub const FORMAT: u8 = 4;
pub const INTEGRITY: u8 = 5;
pub const CONFIG: u8 = 6;
pub const TRAINING: u8 = 7;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

impl From<fusionseg_core::Error> for CliError {
    fn from(e: fusionseg_core::Error) -> Self {
        use fusionseg_core::Error as E;
        let code = match &e {
            E::MissingFile(_) | E::Io { .. } => IO,
            E::MalformedHeader { .. }
            | E::NotThreeDimensional { .. }
            | E::UnsupportedDatatype { .. }
            | E::NonBinary { .. }
            | E::Manifest { .. }
            | E::FoldPlan(_) => FORMAT,
            E::InvalidSpacing(_)
            | E::InvalidShape(_)
            | E::NonFinite(_)
            | E::Mismatch(_)
            | E::Integrity(_)
            | E::EmptyStructure(_) => INTEGRITY,
            E::InvalidArgument(_) => CONFIG,
        };
        Self::new(code, e.to_string())
    }
}

impl From<fusionseg_nn::Error> for CliError {
    fn from(e: fusionseg_nn::Error) -> Self {
        use fusionseg_nn::Error as E;
        let code = match &e {
            E::InvalidConfig(_) => CONFIG,
            E::Shape(_) | E::Checkpoint { .. } => INTEGRITY,
            E::Io { .. } => IO,
        };
        Self::new(code, e.to_string())
    }
}

impl From<fusionseg_train::Error> for CliError {
    fn from(e: fusionseg_train::Error) -> Self {
        use fusionseg_train::Error as E;
        match e {
            E::Data(e) => e.into(),
            E::Model(e) => e.into(),
            E::Config(_) => Self::new(CONFIG, e.to_string()),
            E::NonFinite { .. } => Self::new(TRAINING, e.to_string()),
            E::Io { .. } => Self::new(IO, e.to_string()),
            E::Format { .. } => Self::new(FORMAT, e.to_string()),
            E::Integrity(_) => Self::new(INTEGRITY, e.to_string()),
        }
    }
}
