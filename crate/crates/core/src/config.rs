//! Versioned TOML configuration files.

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// Format version written to and required from every config file.
pub const CONFIG_VERSION: u32 = 1;

/// Config structs that carry a `version` key.
pub trait Versioned {
    fn version(&self) -> u32;
}

/// Parses a versioned TOML document. Syntax and type errors carry the line
/// and column reported by the TOML parser.
pub fn from_toml<T: DeserializeOwned + Versioned>(text: &str) -> Result<T> {
    let value: T = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if value.version() != CONFIG_VERSION {
        return Err(Error::UnsupportedVersion(format!(
            "config version {} (expected {CONFIG_VERSION})",
            value.version()
        )));
    }
    Ok(value)
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Parse(e.to_string()))
}

/// Hex SHA-256 of the canonical TOML rendering of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(to_toml(value)?.as_bytes()))
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
