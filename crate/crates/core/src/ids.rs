//! Identifier newtypes and the shared token grammar.
//!
//! Every user, role and policy identifier is a *token*: 1 to 64 bytes drawn
//! from `[A-Za-z0-9_.-]`. Tokens embed in XML attributes, URL paths and the
//! line-oriented wire format without any escaping.

use std::borrow::Borrow;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_TOKEN_LEN: usize = 64;
pub const MAX_TEXT_LEN: usize = 256;

/// Returns true when `s` is a valid identifier token.
pub fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= MAX_TOKEN_LEN
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

/// Resources and obligation action tokens are looser than identifiers but
/// still single words: non-empty, no whitespace, no control characters.
pub fn is_word(s: &str) -> bool {
    !s.is_empty() && s.len() <= MAX_TEXT_LEN && !s.chars().any(|c| c.is_whitespace() || c.is_control())
}

/// Context values may contain spaces but never control characters.
pub fn is_context_value(s: &str) -> bool {
    s.len() <= MAX_TEXT_LEN && !s.chars().any(char::is_control)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {kind} {value:?}")]
pub struct InvalidName {
    pub kind: &'static str,
    pub value: String,
}

macro_rules! token_type {
    ($(#[$meta:meta])* $name:ident, $kind:literal, $check:path) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(value: impl Into<String>) -> Result<Self, InvalidName> {
                let value = value.into();
                if $check(&value) {
                    Ok(Self(value))
                } else {
                    Err(InvalidName { kind: $kind, value })
                }
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl FromStr for $name {
            type Err = InvalidName;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::new(s)
            }
        }

        impl TryFrom<String> for $name {
            type Error = InvalidName;
            fn try_from(s: String) -> Result<Self, Self::Error> {
                Self::new(s)
            }
        }

        impl TryFrom<&str> for $name {
            type Error = InvalidName;
            fn try_from(s: &str) -> Result<Self, Self::Error> {
                Self::new(s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl AsRef<str> for $name {
            fn as_ref(&self) -> &str {
                &self.0
            }
        }
    };
}

token_type!(
    /// A user (subject) name. Comparison is case-sensitive byte equality.
    UserId,
    "user name",
    is_token
);
token_type!(
    /// A role name.
    RoleId,
    "role name",
    is_token
);
token_type!(
    /// Identifier of a restriction or obligation policy.
    PolicyId,
    "policy id",
    is_token
);
token_type!(
    /// Correlates a decision with its audit record and anomaly events.
    RequestId,
    "request id",
    is_token
);
token_type!(
    /// Name of a migrated table or column.
    SchemaName,
    "schema name",
    is_token
);
token_type!(
    /// A protected resource identifier.
    Resource,
    "resource",
    is_word
);

/// UTC time in whole seconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn seconds(self) -> i64 {
        self.0
    }

    pub fn now() -> Self {
        Timestamp(Utc::now().timestamp())
    }

    /// `2026-10-14T11:49:39Z`
    pub fn to_iso8601(self) -> String {
        match DateTime::<Utc>::from_timestamp(self.0, 0) {
            Some(dt) => dt.to_rfc3339_opts(SecondsFormat::Secs, true),
            None => self.0.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid timestamp {0:?}: expected epoch seconds or RFC 3339")]
pub struct InvalidTimestamp(pub String);

/// Accepts epoch seconds (`1700000000`) or RFC 3339 (`2023-11-14T22:13:20Z`).
impl FromStr for Timestamp {
    type Err = InvalidTimestamp;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(n) = s.parse::<i64>() {
            return Ok(Timestamp(n));
        }
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Timestamp(dt.timestamp()))
            .map_err(|_| InvalidTimestamp(s.to_string()))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
