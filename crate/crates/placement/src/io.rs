use std::path::Path;

use serde::de::DeserializeOwned;

use crate::{NodeSpec, PlacementError, PlacementPlan, SessionSpec};

/// Reads either one JSON array or one JSON object per line (blank lines and
/// `#` comments skipped).
pub fn parse_records<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>, PlacementError> {
    let perr = |msg: String| PlacementError::Parse {
        path: origin.to_owned(),
        msg,
    };
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(text).map_err(|e| perr(e.to_string()));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| perr(format!("line {}: {e}", i + 1))))
        .collect()
}

fn read(path: &Path) -> Result<String, PlacementError> {
    std::fs::read_to_string(path).map_err(|source| PlacementError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_nodes(path: &Path) -> Result<Vec<NodeSpec>, PlacementError> {
    parse_records(&read(path)?, &path.display().to_string())
}

pub fn load_sessions(path: &Path) -> Result<Vec<SessionSpec>, PlacementError> {
    parse_records(&read(path)?, &path.display().to_string())
}

/// A single session document, used as a capacity template.
pub fn load_session(path: &Path) -> Result<SessionSpec, PlacementError> {
    serde_json::from_str(&read(path)?).map_err(|e| PlacementError::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn load_plan(path: &Path) -> Result<PlacementPlan, PlacementError> {
    serde_json::from_str(&read(path)?).map_err(|e| PlacementError::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_or_lines() {
        let a: Vec<NodeSpec> =
            parse_records(r#"[{"name":"n1","cpu_millis":8000,"mem_mb":32768,"gpus":1,"taints":["gpu-lab"]}]"#, "x")
                .unwrap();
        let b: Vec<NodeSpec> = parse_records(
            "# nodes\n{\"name\":\"n1\",\"cpu_millis\":8000,\"mem_mb\":32768,\"gpus\":1,\"taints\":[\"gpu-lab\"]}\n\n",
            "x",
        )
        .unwrap();
        assert_eq!(a, b);
        let e = parse_records::<NodeSpec>("{\"name\":1}", "f.jsonl").unwrap_err();
        assert!(e.to_string().starts_with("f.jsonl: line 1"));
    }
}
