//! Seeded generators for random payloads and frames.

use std::collections::BTreeMap;

use msggraph::Value;
use rand::Rng;

use crate::{Encoding, Op, StatusLevel, WireFrame, JSON_SAFE_INT};

/// Random payload tree no deeper than `max_depth`, with NaN-free floats and
/// integers inside the JSON-safe range.
pub fn random_value<R: Rng>(rng: &mut R, max_depth: usize) -> Value {
    let leaf_only = max_depth == 0;
    let kind = if leaf_only {
        rng.gen_range(0..6)
    } else {
        rng.gen_range(0..9)
    };
    match kind {
        0 => Value::Null,
        1 => Value::Bool(rng.gen()),
        2 => Value::Int(match rng.gen_range(0..4) {
            0 => rng.gen_range(-24..24),
            1 => rng.gen_range(-70_000..70_000),
            2 => JSON_SAFE_INT * if rng.gen() { 1 } else { -1 },
            _ => rng.gen_range(-JSON_SAFE_INT..=JSON_SAFE_INT),
        }),
        3 => Value::Float(match rng.gen_range(0..4) {
            0 => rng.gen_range(-1.0..1.0),
            1 => f64::from_bits(rng.gen::<u64>() & !(0x7ff << 52) | ((rng.gen_range(1..0x7fe_u64)) << 52)),
            2 => rng.gen_range(-1e6..1e6_f64).round(),
            _ => [0.0, -0.0, f64::MIN_POSITIVE, f64::MAX, f64::EPSILON][rng.gen_range(0..5)],
        }),
        4 => Value::String(random_string(rng)),
        5 => {
            let len = rng.gen_range(0..48);
            Value::Bytes((0..len).map(|_| rng.gen()).collect())
        }
        6 | 7 => {
            let len = rng.gen_range(0..5);
            Value::List((0..len).map(|_| random_value(rng, max_depth - 1)).collect())
        }
        _ => {
            let len = rng.gen_range(0..5);
            let mut m = BTreeMap::new();
            for _ in 0..len {
                m.insert(random_key(rng), random_value(rng, max_depth - 1));
            }
            Value::Map(m)
        }
    }
}

/// A value nested exactly `depth` levels deep.
pub fn deep_value<R: Rng>(rng: &mut R, depth: usize) -> Value {
    let mut v = random_value(rng, 0);
    for i in 0..depth {
        v = if i % 2 == 0 {
            Value::List(vec![v])
        } else {
            Value::map([(random_key(rng), v)])
        };
    }
    v
}

fn random_string<R: Rng>(rng: &mut R) -> String {
    const ALPHABET: &[char] = &['a', 'Z', '0', '_', ' ', '"', '\\', '\n', '$', 'é', '→', '😀', '\u{0}'];
    let len = rng.gen_range(0..12);
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())])
        .collect()
}

fn random_key<R: Rng>(rng: &mut R) -> String {
    match rng.gen_range(0..6) {
        0 => "$b64".to_owned(),
        1 => format!("${}", random_string(rng)),
        _ => random_string(rng),
    }
}

fn maybe<R: Rng, T>(rng: &mut R, f: impl FnOnce(&mut R) -> T) -> Option<T> {
    if rng.gen_bool(0.5) {
        Some(f(rng))
    } else {
        None
    }
}

fn random_encoding<R: Rng>(rng: &mut R) -> Encoding {
    if rng.gen() {
        Encoding::Json
    } else {
        Encoding::Cbor
    }
}

/// Random frame that satisfies its op's required fields.
pub fn random_frame<R: Rng>(rng: &mut R, max_depth: usize) -> WireFrame {
    let op = Op::ALL[rng.gen_range(0..Op::ALL.len())];
    let mut f = WireFrame::new(op);
    f.id = maybe(rng, random_string);
    f.topic = maybe(rng, |r| format!("/{}", random_string(r)));
    f.service = maybe(rng, |r| format!("/{}", random_string(r)));
    f.type_name = maybe(rng, random_string);
    f.msg = maybe(rng, |r| random_value(r, max_depth));
    f.throttle_rate_ms = maybe(rng, |r| r.gen_range(0..10_000));
    f.queue_length = maybe(rng, |r| r.gen_range(0..1_000));
    f.latched = maybe(rng, |r| r.gen());
    f.encoding_hint = maybe(rng, random_encoding);
    f.result = maybe(rng, |r| r.gen());
    f.level = maybe(rng, |r| {
        [StatusLevel::Info, StatusLevel::Warning, StatusLevel::Error][r.gen_range(0..3)]
    });
    f.text = maybe(rng, random_string);
    f.versions = maybe(rng, |r| (0..r.gen_range(1..4)).map(|_| r.gen_range(1..4)).collect());
    f.encodings = maybe(rng, |r| (0..r.gen_range(1..3)).map(|_| random_encoding(r)).collect());
    f.token = maybe(rng, random_string);
    for field in required(op) {
        match *field {
            "id" => f.id = f.id.take().or_else(|| Some(random_string(rng))),
            "topic" => f.topic = f.topic.take().or_else(|| Some("/t".into())),
            "service" => f.service = f.service.take().or_else(|| Some("/s".into())),
            "type_name" => f.type_name = f.type_name.take().or_else(|| Some("T".into())),
            "msg" => f.msg = f.msg.take().or_else(|| Some(random_value(rng, max_depth))),
            "result" => f.result = f.result.or(Some(true)),
            "level" => f.level = f.level.or(Some(StatusLevel::Info)),
            "text" => f.text = f.text.take().or_else(|| Some(String::new())),
            "versions" => f.versions = f.versions.take().or_else(|| Some(vec![1])),
            "encodings" => {
                f.encodings = f.encodings.take().or_else(|| Some(vec![Encoding::Cbor]))
            }
            _ => {}
        }
    }
    f
}

fn required(op: Op) -> &'static [&'static str] {
    match op {
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
