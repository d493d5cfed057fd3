//! Process exit codes derived from the error chain.

use std::fmt;

use cmbe_core::benchgen::VocabError;
use cmbe_core::calib::CalibError;
use cmbe_core::detect::{DetectError, LexiconError};
use cmbe_core::eval::EvalError;
use cmbe_core::ModelError;

pub const OK: u8 = 0;
pub const VALIDATION: u8 = 1;
pub const IO: u8 = 2;
pub const NETWORK: u8 = 3;

/// An error with an explicit exit code.
#[derive(Debug)]
pub struct Coded {
    pub code: u8,
    pub message: String,
}

impl Coded {
    pub fn io(message: impl Into<String>) -> Coded {
        Coded { code: IO, message: message.into() }
    }

    pub fn validation(message: impl Into<String>) -> Coded {
        Coded { code: VALIDATION, message: message.into() }
    }
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

fn model_code(e: &ModelError) -> u8 {
    match e {
        ModelError::Network { .. } => NETWORK,
        ModelError::Http { .. } | ModelError::CacheMiss(_) | ModelError::Config(_) | ModelError::Io(_) => IO,
        ModelError::Unparseable { .. } | ModelError::MissingInput { .. } => VALIDATION,
    }
}

fn lexicon_code(_: &LexiconError) -> u8 {
    IO
}

fn detect_code(e: &DetectError) -> u8 {
    match e {
        DetectError::MissingThresholds(_) | DetectError::InvalidConfig(_) => IO,
        _ => VALIDATION,
    }
}

/// The first cause in the chain that maps to a code decides; anything
/// unrecognized is a validation failure.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code;
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return model_code(e);
        }
        if let Some(e) = cause.downcast_ref::<CalibError>() {
            match e {
                CalibError::Model(m) => return model_code(m),
                CalibError::Detect(d) => return detect_code(d),
                _ => return VALIDATION,
            }
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            match e {
                EvalError::Model(m) => return model_code(m),
                EvalError::Detect(d) => return detect_code(d),
                EvalError::Csv(_) => return IO,
                _ => return VALIDATION,
            }
        }
        if let Some(e) = cause.downcast_ref::<DetectError>() {
            return detect_code(e);
        }
        if let Some(e) = cause.downcast_ref::<LexiconError>() {
            return lexicon_code(e);
        }
        if cause.downcast_ref::<VocabError>().is_some()
            || cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
            || cause.downcast_ref::<tempfile::PersistError>().is_some()
        {
            return IO;
        }
    }
    VALIDATION
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn codes_follow_the_cause() {
        let net: anyhow::Error = CalibError::Model(ModelError::Network { attempts: 3, message: "x".into() }).into();
        assert_eq!(exit_code(&net), NETWORK);
        let miss: anyhow::Error = EvalError::Model(ModelError::CacheMiss("k".into())).into();
        assert_eq!(exit_code(&miss), IO);
        let empty = anyhow::Error::from(EvalError::Empty).context("probing");
        assert_eq!(exit_code(&empty), VALIDATION);
        let io = Err::<(), _>(std::io::Error::other("disk")).context("writing").unwrap_err();
        assert_eq!(exit_code(&io), IO);
        assert_eq!(exit_code(&anyhow::anyhow!("plain")), VALIDATION);
        assert_eq!(exit_code(&Coded::io("cfg").into()), IO);
    }
}
