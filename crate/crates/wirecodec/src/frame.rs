use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use msggraph::Value;

use crate::{CodecError, JSON_SAFE_INT, MAX_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Advertise,
    Unadvertise,
    Publish,
    Subscribe,
    Unsubscribe,
    CallService,
    ServiceResponse,
    AdvertiseService,
    UnadvertiseService,
    Status,
    Hello,
}

impl Op {
    pub const ALL: [Op; 11] = [
        Op::Advertise,
        Op::Unadvertise,
        Op::Publish,
        Op::Subscribe,
        Op::Unsubscribe,
        Op::CallService,
        Op::ServiceResponse,
        Op::AdvertiseService,
        Op::UnadvertiseService,
        Op::Status,
        Op::Hello,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Op::Advertise => "advertise",
            Op::Unadvertise => "unadvertise",
            Op::Publish => "publish",
            Op::Subscribe => "subscribe",
            Op::Unsubscribe => "unsubscribe",
            Op::CallService => "call_service",
            Op::ServiceResponse => "service_response",
            Op::AdvertiseService => "advertise_service",
            Op::UnadvertiseService => "unadvertise_service",
            Op::Status => "status",
            Op::Hello => "hello",
        }
    }

    fn required_fields(self) -> &'static [&'static str] {
        match self {
            Op::Advertise => &["topic", "type_name"],
            Op::Unadvertise | Op::Subscribe | Op::Unsubscribe => &["topic"],
            Op::Publish => &["topic", "msg"],
            Op::CallService => &["service", "id"],
            Op::ServiceResponse => &["id", "result"],
            Op::AdvertiseService | Op::UnadvertiseService => &["service"],
            Op::Status => &["level", "text"],
            Op::Hello => &["versions", "encodings"],
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Op {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Op::ALL
            .into_iter()
            .find(|op| op.as_str() == s)
            .ok_or_else(|| CodecError::UnknownOp(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Encoding {
    Json,
    Cbor,
}

impl Encoding {
    pub fn as_str(self) -> &'static str {
        match self {
            Encoding::Json => "json",
            Encoding::Cbor => "cbor",
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Encoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Encoding::Json),
            "cbor" => Ok(Encoding::Cbor),
            other => Err(format!("unknown encoding {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatusLevel {
    Info,
    Warning,
    Error,
}

impl StatusLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            StatusLevel::Info => "info",
            StatusLevel::Warning => "warning",
            StatusLevel::Error => "error",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "info" => Some(StatusLevel::Info),
            "warning" => Some(StatusLevel::Warning),
            "error" => Some(StatusLevel::Error),
            _ => None,
        }
    }
}

/// One protocol operation.
///
/// Fields beyond `op` are optional on the wire; which ones must be present
/// depends on the op (publish needs topic and msg, call_service needs service
/// and id, and so on). `versions`, `encodings` and `token` are carried only by
/// hello frames.
#[derive(Debug, Clone, PartialEq)]
pub struct WireFrame {
    pub op: Op,
    pub id: Option<String>,
    pub topic: Option<String>,
    pub service: Option<String>,
    pub type_name: Option<String>,
    pub msg: Option<Value>,
    pub throttle_rate_ms: Option<u64>,
    pub queue_length: Option<u64>,
    pub latched: Option<bool>,
    pub encoding_hint: Option<Encoding>,
    pub result: Option<bool>,
    pub level: Option<StatusLevel>,
    pub text: Option<String>,
    pub versions: Option<Vec<u32>>,
    pub encodings: Option<Vec<Encoding>>,
    pub token: Option<String>,
}

/// Queue length assumed when a subscribe frame does not carry one.
pub const DEFAULT_QUEUE_LENGTH: u64 = 10;

impl WireFrame {
    pub fn new(op: Op) -> Self {
        Self {
            op,
            id: None,
            topic: None,
            service: None,
            type_name: None,
            msg: None,
            throttle_rate_ms: None,
            queue_length: None,
            latched: None,
            encoding_hint: None,
            result: None,
            level: None,
            text: None,
            versions: None,
            encodings: None,
            token: None,
        }
    }

    pub fn hello(versions: Vec<u32>, encodings: Vec<Encoding>, token: Option<String>) -> Self {
        Self {
            versions: Some(versions),
            encodings: Some(encodings),
            token,
            ..Self::new(Op::Hello)
        }
    }

    pub fn advertise(topic: impl Into<String>, type_name: impl Into<String>, latched: bool) -> Self {
        Self {
            topic: Some(topic.into()),
            type_name: Some(type_name.into()),
            latched: latched.then_some(true),
            ..Self::new(Op::Advertise)
        }
    }

    pub fn unadvertise(topic: impl Into<String>) -> Self {
        Self {
            topic: Some(topic.into()),
            ..Self::new(Op::Unadvertise)
        }
    }

    pub fn publish(topic: impl Into<String>, msg: Value) -> Self {
        Self {
            topic: Some(topic.into()),
            msg: Some(msg),
            ..Self::new(Op::Publish)
        }
    }

    pub fn subscribe(
        topic: impl Into<String>,
        throttle_rate_ms: Option<u64>,
        queue_length: Option<u64>,
    ) -> Self {
        Self {
            topic: Some(topic.into()),
            throttle_rate_ms,
            queue_length,
            ..Self::new(Op::Subscribe)
        }
    }

    pub fn unsubscribe(topic: impl Into<String>) -> Self {
        Self {
            topic: Some(topic.into()),
            ..Self::new(Op::Unsubscribe)
        }
    }

    pub fn call_service(id: impl Into<String>, service: impl Into<String>, args: Value) -> Self {
        Self {
            id: Some(id.into()),
            service: Some(service.into()),
            msg: Some(args),
            ..Self::new(Op::CallService)
        }
    }

    pub fn service_ok(id: impl Into<String>, service: Option<String>, values: Value) -> Self {
        Self {
            id: Some(id.into()),
            service,
            result: Some(true),
            msg: Some(values),
            ..Self::new(Op::ServiceResponse)
        }
    }

    pub fn service_err(id: impl Into<String>, service: Option<String>, reason: impl Into<String>) -> Self {
        Self {
            id: Some(id.into()),
            service,
            result: Some(false),
            text: Some(reason.into()),
            ..Self::new(Op::ServiceResponse)
        }
    }

    pub fn advertise_service(service: impl Into<String>, type_name: Option<String>) -> Self {
        Self {
            service: Some(service.into()),
            type_name,
            ..Self::new(Op::AdvertiseService)
        }
    }

    pub fn unadvertise_service(service: impl Into<String>) -> Self {
        Self {
            service: Some(service.into()),
            ..Self::new(Op::UnadvertiseService)
        }
    }

    pub fn status(level: StatusLevel, text: impl Into<String>) -> Self {
        Self {
            level: Some(level),
            text: Some(text.into()),
            ..Self::new(Op::Status)
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    /// Effective subscription queue length.
    pub fn queue_length_or_default(&self) -> u64 {
        self.queue_length.unwrap_or(DEFAULT_QUEUE_LENGTH)
    }

    fn has(&self, field: &str) -> bool {
        match field {
            "id" => self.id.is_some(),
            "topic" => self.topic.is_some(),
            "service" => self.service.is_some(),
            "type_name" => self.type_name.is_some(),
            "msg" => self.msg.is_some(),
            "result" => self.result.is_some(),
            "level" => self.level.is_some(),
            "text" => self.text.is_some(),
            "versions" => self.versions.as_ref().is_some_and(|v| !v.is_empty()),
            "encodings" => self.encodings.as_ref().is_some_and(|v| !v.is_empty()),
            _ => true,
        }
    }

    /// Checks the op-specific required fields and payload limits.
    pub fn validate(&self) -> Result<(), CodecError> {
        for &field in self.op.required_fields() {
            if !self.has(field) {
                return Err(CodecError::InvalidFrame {
                    op: self.op.as_str(),
                    field,
                });
            }
        }
        if let Some(msg) = &self.msg {
            if msg.depth() > MAX_DEPTH {
                return Err(CodecError::schema("msg", "nesting too deep"));
            }
            if !msg.is_finite() {
                return Err(CodecError::schema("msg", "NaN or infinite float"));
            }
        }
        for (field, v) in [
            ("throttle_rate_ms", self.throttle_rate_ms),
            ("queue_length", self.queue_length),
        ] {
            if v.is_some_and(|v| v > JSON_SAFE_INT as u64) {
                return Err(CodecError::schema(field, "exceeds 2^53"));
            }
        }
        Ok(())
    }

    pub(crate) fn to_value(&self) -> Value {
        let mut m = BTreeMap::new();
        m.insert("op".to_owned(), Value::from(self.op.as_str()));
        let strings = [
            ("id", &self.id),
            ("topic", &self.topic),
            ("service", &self.service),
            ("type_name", &self.type_name),
            ("text", &self.text),
            ("token", &self.token),
        ];
        for (k, v) in strings {
            if let Some(v) = v {
                m.insert(k.to_owned(), Value::String(v.clone()));
            }
        }
        if let Some(msg) = &self.msg {
            m.insert("msg".to_owned(), msg.clone());
        }
        for (k, v) in [
            ("throttle_rate_ms", self.throttle_rate_ms),
            ("queue_length", self.queue_length),
        ] {
            if let Some(v) = v {
                m.insert(k.to_owned(), Value::Int(v as i64));
            }
        }
        for (k, v) in [("latched", self.latched), ("result", self.result)] {
            if let Some(v) = v {
                m.insert(k.to_owned(), Value::Bool(v));
            }
        }
        if let Some(e) = self.encoding_hint {
            m.insert("encoding_hint".to_owned(), Value::from(e.as_str()));
        }
        if let Some(l) = self.level {
            m.insert("level".to_owned(), Value::from(l.as_str()));
        }
        if let Some(vs) = &self.versions {
            let list = vs.iter().map(|&v| Value::Int(v.into())).collect();
            m.insert("versions".to_owned(), Value::List(list));
        }
        if let Some(es) = &self.encodings {
            let list = es.iter().map(|e| Value::from(e.as_str())).collect();
            m.insert("encodings".to_owned(), Value::List(list));
        }
        Value::Map(m)
    }

    pub(crate) fn from_value(value: Value) -> Result<Self, CodecError> {
        let Value::Map(mut m) = value else {
            return Err(CodecError::schema("<frame>", "frame must be a map"));
        };
        let op = match m.remove("op") {
            Some(Value::String(s)) => s.parse::<Op>()?,
            Some(_) => return Err(CodecError::schema("op", "expected string")),
            None => return Err(CodecError::schema("op", "missing")),
        };
        let mut frame = WireFrame::new(op);
        for (key, v) in m {
            match key.as_str() {
                "id" => frame.id = Some(take_string(&key, v)?),
                "topic" => frame.topic = Some(take_string(&key, v)?),
                "service" => frame.service = Some(take_string(&key, v)?),
                "type_name" => frame.type_name = Some(take_string(&key, v)?),
                "text" => frame.text = Some(take_string(&key, v)?),
                "token" => frame.token = Some(take_string(&key, v)?),
                "msg" => frame.msg = Some(v),
                "throttle_rate_ms" => frame.throttle_rate_ms = Some(take_uint(&key, v)?),
                "queue_length" => frame.queue_length = Some(take_uint(&key, v)?),
                "latched" => frame.latched = Some(take_bool(&key, v)?),
                "result" => frame.result = Some(take_bool(&key, v)?),
                "encoding_hint" => {
                    let s = take_string(&key, v)?;
                    frame.encoding_hint =
                        Some(s.parse().map_err(|e: String| CodecError::schema(&key, e))?);
                }
                "level" => {
                    let s = take_string(&key, v)?;
                    frame.level = Some(
                        StatusLevel::parse(&s)
                            .ok_or_else(|| CodecError::schema(&key, "unknown level"))?,
                    );
                }
                "versions" => {
                    let items = take_list(&key, v)?;
                    let versions = items
                        .into_iter()
                        .map(|item| {
                            take_uint(&key, item).and_then(|n| {
                                u32::try_from(n)
                                    .map_err(|_| CodecError::schema(&key, "version out of range"))
                            })
                        })
                        .collect::<Result<_, _>>()?;
                    frame.versions = Some(versions);
                }
                "encodings" => {
                    let items = take_list(&key, v)?;
                    let encodings = items
                        .into_iter()
                        .map(|item| {
                            take_string(&key, item)?
                                .parse()
                                .map_err(|e: String| CodecError::schema(&key, e))
                        })
                        .collect::<Result<_, _>>()?;
                    frame.encodings = Some(encodings);
                }
                _ => return Err(CodecError::schema(key, "unknown field")),
            }
        }
        frame.validate().map_err(|e| match e {
            CodecError::InvalidFrame { field, .. } => {
                CodecError::schema(field, format!("required by {op}"))
            }
            other => other,
        })?;
        Ok(frame)
    }
}

fn take_string(field: &str, v: Value) -> Result<String, CodecError> {
    match v {
        Value::String(s) => Ok(s),
        _ => Err(CodecError::schema(field, "expected string")),
    }
}

fn take_bool(field: &str, v: Value) -> Result<bool, CodecError> {
    match v {
        Value::Bool(b) => Ok(b),
        _ => Err(CodecError::schema(field, "expected bool")),
    }
}

fn take_uint(field: &str, v: Value) -> Result<u64, CodecError> {
    match v {
        Value::Int(i) if i >= 0 => Ok(i as u64),
        _ => Err(CodecError::schema(field, "expected unsigned integer")),
    }
}

fn take_list(field: &str, v: Value) -> Result<Vec<Value>, CodecError> {
    match v {
        Value::List(items) => Ok(items),
        _ => Err(CodecError::schema(field, "expected list")),
    }
}
