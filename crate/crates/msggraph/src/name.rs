use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("name is empty")]
    Empty,
    #[error("name {0:?} must begin with '/'")]
    NotAbsolute(String),
    #[error("name {0:?} has a trailing slash")]
    TrailingSlash(String),
    #[error("name {name:?} has an invalid segment {segment:?}")]
    BadSegment { name: String, segment: String },
}

/// Absolute slash-separated graph name such as `/cmd_vel` or `/camera/points`.
///
/// Every segment matches `[A-Za-z0-9_]+`. Service names use the same shape.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TopicName(String);

impl TopicName {
    pub fn new(path: impl Into<String>) -> Result<Self, NameError> {
        let path = path.into();
        validate(&path)?;
        Ok(Self(path))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

fn validate(path: &str) -> Result<(), NameError> {
    if path.is_empty() {
        return Err(NameError::Empty);
    }
    let Some(rest) = path.strip_prefix('/') else {
        return Err(NameError::NotAbsolute(path.to_owned()));
    };
    if rest.ends_with('/') {
        return Err(NameError::TrailingSlash(path.to_owned()));
    }
    for segment in rest.split('/') {
        let ok = !segment.is_empty()
            && segment
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || b == b'_');
        if !ok {
            return Err(NameError::BadSegment {
                name: path.to_owned(),
                segment: segment.to_owned(),
            });
        }
    }
    Ok(())
}

impl FromStr for TopicName {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl TryFrom<&str> for TopicName {
    type Error = NameError;

    fn try_from(s: &str) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for TopicName {
    fn as_ref(&self) -> &str {
        &self.0
    }
}
