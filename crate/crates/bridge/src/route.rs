use std::str::FromStr;

use crate::BridgeError;

/// Websocket paths served by the bridge start with this prefix.
pub const PATH_PREFIX: &str = "/bridge/";

/// One path-routed endpoint, `/bridge/<name>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub name: String,
    /// Isolated routes get a graph of their own; the rest share one.
    pub isolated: bool,
    /// Bearer token peers must present in their hello frame.
    pub token: Option<String>,
}

impl Route {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            isolated: false,
            token: None,
        }
    }

    pub fn isolated(mut self) -> Self {
        self.isolated = true;
        self
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn path(&self) -> String {
        format!("{PATH_PREFIX}{}", self.name)
    }
}

/// Parses the `name[:isolated]` form used on the command line.
impl FromStr for Route {
    type Err = BridgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, isolated) = match s.split_once(':') {
            Some((name, "isolated")) => (name, true),
            Some(_) => return Err(BridgeError::Config(format!("bad route spec {s:?}"))),
            None => (s, false),
        };
        validate_name(name)?;
        Ok(Route {
            name: name.to_owned(),
            isolated,
            token: None,
        })
    }
}

pub(crate) fn validate_name(name: &str) -> Result<(), BridgeError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(BridgeError::Config(format!("bad route name {name:?}")))
    }
}

/// Extracts the route name from a request path such as `/bridge/teamA`.
/// A query string is ignored.
pub fn route_name(path: &str) -> Option<&str> {
    let path = path.split('?').next().unwrap_or_default();
    let name = path.strip_prefix(PATH_PREFIX)?.trim_end_matches('/');
    validate_name(name).ok().map(|_| name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_cli_form() {
        let r: Route = "teamA:isolated".parse().unwrap();
        assert_eq!((r.name.as_str(), r.isolated), ("teamA", true));
        let r: Route = "lobby".parse().unwrap();
        assert!(!r.isolated);
        assert!("x:shared".parse::<Route>().is_err());
        assert!("".parse::<Route>().is_err());
        assert!("a/b".parse::<Route>().is_err());
    }

    #[test]
    fn extracts_name_from_path() {
        assert_eq!(route_name("/bridge/teamA"), Some("teamA"));
        assert_eq!(route_name("/bridge/teamA/"), Some("teamA"));
        assert_eq!(route_name("/bridge/teamA?x=1"), Some("teamA"));
        assert_eq!(route_name("/x"), None);
        assert_eq!(route_name("/bridge/"), None);
        assert_eq!(route_name("/bridge/a/b"), None);
    }
}
