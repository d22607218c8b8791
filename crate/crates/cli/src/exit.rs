use std::fmt;

use keyrel::Error as CoreError;

pub const OK: u8 = 0;
pub const OTHER: u8 = 1;
pub const CONFIG: u8 = 2;
pub const DATA: u8 = 3;
pub const GATE: u8 = 4;

/// Invalid configuration or command line.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// A quality gate (minimum F1, minimum gap) was not met.
#[derive(Debug)]
pub struct GateFailure(pub String);

impl fmt::Display for GateFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "gate failed: {}", self.0)
    }
}

impl std::error::Error for GateFailure {}

fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::Config(_) | CoreError::ObjectiveMismatch(_) => CONFIG,
        CoreError::Divergence { .. } => OTHER,
        _ => DATA,
    }
}

/// Exit code for an error, taken from the first classifiable cause.
pub fn code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<GateFailure>() {
            return GATE;
        }
        if cause.is::<ConfigError>() || cause.is::<toml::de::Error>() || cause.is::<clap::Error>() {
            return CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return core_code(e);
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return DATA;
        }
    }
    OTHER
}
