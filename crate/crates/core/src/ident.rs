use std::borrow::Borrow;
use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

/// Identifier for processes, subjects, messages, schemas and states.
///
/// Matches `[A-Za-z][A-Za-z0-9_-]{0,63}` and is compared case-sensitively, so
/// it is safe to embed in file names and wire frames.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Ident(String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid identifier {0:?}: expected [A-Za-z][A-Za-z0-9_-]{{0,63}}")]
pub struct InvalidIdent(pub String);

impl Ident {
    pub const MAX_LEN: usize = 64;

    pub fn new(s: impl Into<String>) -> Result<Self, InvalidIdent> {
        let s = s.into();
        if Self::is_valid(&s) {
            Ok(Ident(s))
        } else {
            Err(InvalidIdent(s))
        }
    }

    pub fn is_valid(s: &str) -> bool {
        let bytes = s.as_bytes();
        match bytes.first() {
            Some(b) if b.is_ascii_alphabetic() => {}
            _ => return false,
        }
        bytes.len() <= Self::MAX_LEN
            && bytes[1..]
                .iter()
                .all(|b| b.is_ascii_alphanumeric() || *b == b'_' || *b == b'-')
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl Deref for Ident {
    type Target = str;
    fn deref(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for Ident {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for Ident {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl PartialEq<str> for Ident {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for Ident {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

impl fmt::Display for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Ident {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&self.0, f)
    }
}

impl std::str::FromStr for Ident {
    type Err = InvalidIdent;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ident::new(s)
    }
}

impl TryFrom<&str> for Ident {
    type Error = InvalidIdent;
    fn try_from(s: &str) -> Result<Self, Self::Error> {
        Ident::new(s)
    }
}

impl<'de> Deserialize<'de> for Ident {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ident::new(s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_and_rejects() {
        for ok in ["A", "s0", "order-handling", "x_1", &"a".repeat(64)] {
            assert!(Ident::is_valid(ok), "{ok}");
        }
        for bad in ["", "0a", "_a", "a b", "a.b", "ä", &"a".repeat(65)] {
            assert!(!Ident::is_valid(bad), "{bad}");
        }
    }

    #[test]
    fn deserialize_validates() {
        assert!(serde_json::from_str::<Ident>("\"ok\"").is_ok());
        assert!(serde_json::from_str::<Ident>("\"9no\"").is_err());
    }
}
