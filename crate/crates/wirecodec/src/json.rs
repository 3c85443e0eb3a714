//! JSON mapping. Byte strings become `{"$b64": "<base64>"}`; user map keys
//! that start with `$` are escaped by doubling the sigil.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use msggraph::Value;
use serde_json::{Map, Number, Value as Json};

use crate::{CodecError, JSON_SAFE_INT, MAX_DEPTH};

const BYTES_KEY: &str = "$b64";

pub(crate) fn encode_value(value: &Value) -> Result<Vec<u8>, CodecError> {
    let json = to_json(value, "msg", 0)?;
    serde_json::to_vec(&json).map_err(|e| CodecError::schema("<frame>", e.to_string()))
}

fn to_json(value: &Value, path: &str, depth: usize) -> Result<Json, CodecError> {
    if depth > MAX_DEPTH {
        return Err(CodecError::schema(path, "nesting too deep"));
    }
    Ok(match value {
        Value::Null => Json::Null,
        Value::Bool(b) => Json::Bool(*b),
        Value::Int(i) => {
            if i.unsigned_abs() > JSON_SAFE_INT as u64 {
                return Err(CodecError::schema(path, "integer outside +/-2^53"));
            }
            Json::Number((*i).into())
        }
        Value::Float(f) => Json::Number(
            Number::from_f64(*f).ok_or_else(|| CodecError::schema(path, "NaN or infinite float"))?,
        ),
        Value::String(s) => Json::String(s.clone()),
        Value::Bytes(b) => {
            let mut m = Map::new();
            m.insert(BYTES_KEY.to_owned(), Json::String(STANDARD.encode(b)));
            Json::Object(m)
        }
        Value::List(items) => Json::Array(
            items
                .iter()
                .map(|v| to_json(v, path, depth + 1))
                .collect::<Result<_, _>>()?,
        ),
        Value::Map(entries) => {
            let mut m = Map::new();
            for (k, v) in entries {
                let key = if k.starts_with('$') {
                    format!("${k}")
                } else {
                    k.clone()
                };
                m.insert(key, to_json(v, k, depth + 1)?);
            }
            Json::Object(m)
        }
    })
}

pub(crate) fn decode_value(bytes: &[u8]) -> Result<Value, CodecError> {
    let json: Json = serde_json::from_slice(bytes)
        .map_err(|e| CodecError::malformed(byte_offset(bytes, e.line(), e.column()), e.to_string()))?;
    if !json.is_object() {
        return Err(CodecError::schema("<frame>", "frame must be a JSON object"));
    }
    from_json(json, "<frame>", 0)
}

fn from_json(json: Json, path: &str, depth: usize) -> Result<Value, CodecError> {
    if depth > MAX_DEPTH + 1 {
        return Err(CodecError::schema(path, "nesting too deep"));
    }
    Ok(match json {
        Json::Null => Value::Null,
        Json::Bool(b) => Value::Bool(b),
        Json::Number(n) => {
            if let Some(i) = n.as_i64() {
                if i.unsigned_abs() > JSON_SAFE_INT as u64 {
                    return Err(CodecError::schema(path, "integer outside +/-2^53"));
                }
                Value::Int(i)
            } else if n.is_u64() {
                return Err(CodecError::schema(path, "integer outside +/-2^53"));
            } else {
                let f = n
                    .as_f64()
                    .ok_or_else(|| CodecError::schema(path, "unrepresentable number"))?;
                Value::Float(f)
            }
        }
        Json::String(s) => Value::String(s),
        Json::Array(items) => Value::List(
            items
                .into_iter()
                .map(|v| from_json(v, path, depth + 1))
                .collect::<Result<_, _>>()?,
        ),
        Json::Object(m) => {
            if m.len() == 1 {
                if let Some(Json::String(b64)) = m.get(BYTES_KEY) {
                    let bytes = STANDARD
                        .decode(b64)
                        .map_err(|e| CodecError::schema(path, format!("bad base64: {e}")))?;
                    return Ok(Value::Bytes(bytes));
                }
            }
            let mut out = BTreeMap::new();
            for (k, v) in m {
                let key = match k.strip_prefix('$') {
                    Some(rest) if rest.starts_with('$') => rest.to_owned(),
                    Some(_) => return Err(CodecError::schema(&k, "reserved key")),
                    None => k,
                };
                let v = from_json(v, &key, depth + 1)?;
                out.insert(key, v);
            }
            Value::Map(out)
        }
    })
}

// serde_json reports 1-based line/column; convert to a byte offset.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line <= 1 {
        return column.saturating_sub(1).min(bytes.len());
    }
    let mut seen = 1;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' {
            seen += 1;
            if seen == line {
                return (i + column).min(bytes.len());
            }
        }
    }
    bytes.len()
}
