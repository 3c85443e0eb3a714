//! Minimal CBOR (RFC 8949) codec over [`Value`].
//!
//! Encoding emits definite lengths, shortest integer heads, and 64-bit
//! floats. Decoding accepts the same subset plus half- and single-precision
//! floats, and rejects tags, indefinite lengths, non-text map keys,
//! duplicate keys and trailing bytes.

use std::collections::BTreeMap;

use msggraph::Value;

use crate::{CodecError, MAX_DEPTH};

const MAJOR_UINT: u8 = 0;
const MAJOR_NINT: u8 = 1;
const MAJOR_BYTES: u8 = 2;
const MAJOR_TEXT: u8 = 3;
const MAJOR_ARRAY: u8 = 4;
const MAJOR_MAP: u8 = 5;
const MAJOR_TAG: u8 = 6;
const MAJOR_SIMPLE: u8 = 7;

pub(crate) fn encode_value(value: &Value) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(64);
    write_value(&mut out, value, 0)?;
    Ok(out)
}

fn write_head(out: &mut Vec<u8>, major: u8, n: u64) {
    let m = major << 5;
    if n < 24 {
        out.push(m | n as u8);
    } else if n <= u8::MAX as u64 {
        out.extend_from_slice(&[m | 24, n as u8]);
    } else if n <= u16::MAX as u64 {
        out.push(m | 25);
        out.extend_from_slice(&(n as u16).to_be_bytes());
    } else if n <= u32::MAX as u64 {
        out.push(m | 26);
        out.extend_from_slice(&(n as u32).to_be_bytes());
    } else {
        out.push(m | 27);
        out.extend_from_slice(&n.to_be_bytes());
    }
}

fn write_value(out: &mut Vec<u8>, value: &Value, depth: usize) -> Result<(), CodecError> {
    if depth > MAX_DEPTH + 1 {
        return Err(CodecError::schema("msg", "nesting too deep"));
    }
    match value {
        Value::Null => out.push(0xf6),
        Value::Bool(false) => out.push(0xf4),
        Value::Bool(true) => out.push(0xf5),
        Value::Int(i) if *i >= 0 => write_head(out, MAJOR_UINT, *i as u64),
        Value::Int(i) => write_head(out, MAJOR_NINT, !(*i as u64)),
        Value::Float(f) => {
            if !f.is_finite() {
                return Err(CodecError::schema("msg", "NaN or infinite float"));
            }
            out.push(0xfb);
            out.extend_from_slice(&f.to_bits().to_be_bytes());
        }
        Value::String(s) => {
            write_head(out, MAJOR_TEXT, s.len() as u64);
            out.extend_from_slice(s.as_bytes());
        }
        Value::Bytes(b) => {
            write_head(out, MAJOR_BYTES, b.len() as u64);
            out.extend_from_slice(b);
        }
        Value::List(items) => {
            write_head(out, MAJOR_ARRAY, items.len() as u64);
            for item in items {
                write_value(out, item, depth + 1)?;
            }
        }
        Value::Map(m) => {
            write_head(out, MAJOR_MAP, m.len() as u64);
            for (k, v) in m {
                write_head(out, MAJOR_TEXT, k.len() as u64);
                out.extend_from_slice(k.as_bytes());
                write_value(out, v, depth + 1)?;
            }
        }
    }
    Ok(())
}

pub(crate) fn decode_value(bytes: &[u8]) -> Result<Value, CodecError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if bytes.first().map(|b| b >> 5) != Some(MAJOR_MAP) {
        if bytes.is_empty() {
            return Err(CodecError::malformed(0, "empty buffer"));
        }
        return Err(CodecError::schema("<frame>", "frame must be a CBOR map"));
    }
    let value = r.read_value(0)?;
    if r.pos != bytes.len() {
        return Err(CodecError::malformed(r.pos, "trailing bytes after frame"));
    }
    Ok(value)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CodecError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| {
                CodecError::malformed(
                    self.pos,
                    format!("need {n} bytes, {} available", self.buf.len() - self.pos),
                )
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn byte(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    /// Returns (major, argument, offset of the initial byte).
    fn head(&mut self) -> Result<(u8, u64, usize), CodecError> {
        let at = self.pos;
        let initial = self.byte()?;
        let major = initial >> 5;
        let info = initial & 0x1f;
        let arg = match info {
            0..=23 => info as u64,
            24 => self.byte()? as u64,
            25 => u16::from_be_bytes(self.take(2)?.try_into().unwrap()) as u64,
            26 => u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as u64,
            27 => u64::from_be_bytes(self.take(8)?.try_into().unwrap()),
            28..=30 => return Err(CodecError::malformed(at, "reserved additional info")),
            _ => {
                return Err(CodecError::malformed(
                    at,
                    "indefinite lengths are not supported",
                ))
            }
        };
        Ok((major, arg, at))
    }

    fn length(&self, arg: u64, at: usize) -> Result<usize, CodecError> {
        // Every element needs at least one byte, so a count larger than the
        // remaining input is already known to be truncated.
        let remaining = (self.buf.len() - self.pos) as u64;
        if arg > remaining {
            return Err(CodecError::malformed(
                at,
                format!("declared length {arg} exceeds remaining {remaining} bytes"),
            ));
        }
        Ok(arg as usize)
    }

    fn read_text(&mut self, arg: u64, at: usize) -> Result<String, CodecError> {
        let len = self.length(arg, at)?;
        let raw = self.take(len)?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|e| CodecError::malformed(at, format!("invalid UTF-8: {e}")))
    }

    fn read_value(&mut self, depth: usize) -> Result<Value, CodecError> {
        if depth > MAX_DEPTH + 1 {
            return Err(CodecError::malformed(self.pos, "nesting too deep"));
        }
        let (major, arg, at) = self.head()?;
        match major {
            MAJOR_UINT => i64::try_from(arg)
                .map(Value::Int)
                .map_err(|_| CodecError::malformed(at, "integer exceeds i64")),
            MAJOR_NINT => i64::try_from(arg)
                .map(|n| Value::Int(-1 - n))
                .map_err(|_| CodecError::malformed(at, "integer exceeds i64")),
            MAJOR_BYTES => {
                let len = self.length(arg, at)?;
                Ok(Value::Bytes(self.take(len)?.to_vec()))
            }
            MAJOR_TEXT => self.read_text(arg, at).map(Value::String),
            MAJOR_ARRAY => {
                let n = self.length(arg, at)?;
                let mut items = Vec::with_capacity(n);
                for _ in 0..n {
                    items.push(self.read_value(depth + 1)?);
                }
                Ok(Value::List(items))
            }
            MAJOR_MAP => {
                let n = self.length(arg, at)?;
                let mut m = BTreeMap::new();
                for _ in 0..n {
                    let (kmajor, karg, kat) = self.head()?;
                    if kmajor != MAJOR_TEXT {
                        return Err(CodecError::malformed(kat, "map key is not a text string"));
                    }
                    let key = self.read_text(karg, kat)?;
                    let v = self.read_value(depth + 1)?;
                    if m.insert(key, v).is_some() {
                        return Err(CodecError::malformed(kat, "duplicate map key"));
                    }
                }
                Ok(Value::Map(m))
            }
            MAJOR_TAG => Err(CodecError::malformed(at, "tags are not supported")),
            MAJOR_SIMPLE => {
                let initial_info = self.buf[at] & 0x1f;
                let f = match initial_info {
                    20 => return Ok(Value::Bool(false)),
                    21 => return Ok(Value::Bool(true)),
                    22 => return Ok(Value::Null),
                    25 => f16_to_f64(arg as u16),
                    26 => f32::from_bits(arg as u32) as f64,
                    27 => f64::from_bits(arg),
                    _ => return Err(CodecError::malformed(at, "unsupported simple value")),
                };
                if f.is_finite() {
                    Ok(Value::Float(f))
                } else {
                    Err(CodecError::malformed(at, "NaN or infinite float"))
                }
            }
            _ => unreachable!("major type is three bits"),
        }
    }
}

fn f16_to_f64(half: u16) -> f64 {
    let sign = if half & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((half >> 10) & 0x1f) as i32;
    let mant = (half & 0x3ff) as f64;
    match exp {
        0 => sign * mant * 2f64.powi(-24),
        31 if mant == 0.0 => sign * f64::INFINITY,
        31 => f64::NAN,
        _ => sign * (1.0 + mant / 1024.0) * 2f64.powi(exp - 15),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(v: &Value) -> Vec<u8> {
        encode_value(v).unwrap()
    }

    // Expected bytes from the RFC 8949 appendix A examples.
    #[test]
    fn matches_reference_vectors() {
        let wrap = |v: Value| Value::map([("a", v)]);
        let cases: Vec<(Value, &[u8])> = vec![
            (Value::Int(0), &[0x00]),
            (Value::Int(23), &[0x17]),
            (Value::Int(24), &[0x18, 0x18]),
            (Value::Int(1000), &[0x19, 0x03, 0xe8]),
            (Value::Int(1_000_000), &[0x1a, 0x00, 0x0f, 0x42, 0x40]),
            (Value::Int(-1), &[0x20]),
            (Value::Int(-1000), &[0x39, 0x03, 0xe7]),
            (Value::Int(i64::MIN), &[0x3b, 0x7f, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff]),
            (Value::Float(1.1), &[0xfb, 0x3f, 0xf1, 0x99, 0x99, 0x99, 0x99, 0x99, 0x9a]),
            (Value::Bool(false), &[0xf4]),
            (Value::Null, &[0xf6]),
            (Value::Bytes(vec![1, 2, 3, 4]), &[0x44, 1, 2, 3, 4]),
            (Value::from("IETF"), &[0x64, 0x49, 0x45, 0x54, 0x46]),
            (Value::List(vec![Value::Int(1), Value::Int(2)]), &[0x82, 0x01, 0x02]),
        ];
        for (v, expected) in cases {
            let bytes = enc(&wrap(v.clone()));
            // map(1), text "a", value
            assert_eq!(&bytes[..3], &[0xa1, 0x61, 0x61]);
            assert_eq!(&bytes[3..], expected, "{v:?}");
            assert_eq!(decode_value(&bytes).unwrap(), wrap(v));
        }
    }

    #[test]
    fn accepts_short_floats() {
        // {"a": 1.5 as f16}, {"a": 100000.0 as f32}
        assert_eq!(
            decode_value(&[0xa1, 0x61, 0x61, 0xf9, 0x3e, 0x00]).unwrap(),
            Value::map([("a", Value::Float(1.5))])
        );
        assert_eq!(
            decode_value(&[0xa1, 0x61, 0x61, 0xfa, 0x47, 0xc3, 0x50, 0x00]).unwrap(),
            Value::map([("a", Value::Float(100000.0))])
        );
        assert_eq!(f16_to_f64(0x0001), 5.960464477539063e-8);
        assert_eq!(f16_to_f64(0xc400), -4.0);
    }

    #[test]
    fn rejects_unsupported_constructs() {
        let cases: &[(&[u8], usize)] = &[
            (&[0xa1, 0x61, 0x61, 0xc1, 0x00], 3),       // tag
            (&[0xbf, 0xff], 0),                         // indefinite map
            (&[0xa1, 0x01, 0x02], 1),                   // int key
            (&[0xa1, 0x61, 0x61, 0xf7], 3),             // undefined
            (&[0xa1, 0x61, 0x61, 0xf9, 0x7e, 0x00], 3), // NaN
            (&[0xa1, 0x61, 0x61, 0x1b, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff], 3),
            (&[0xa1, 0x61, 0x61, 0x1c], 3),             // reserved info
            (&[0xa2, 0x61, 0x61, 0x01, 0x61, 0x61, 0x02], 4), // duplicate key
            (&[0xa1, 0x61, 0xff, 0x01], 1),             // bad utf-8 key
            (&[0xa0, 0x00], 1),                         // trailing
        ];
        for (bytes, offset) in cases {
            match decode_value(bytes) {
                Err(CodecError::MalformedBytes { offset: got, .. }) => {
                    assert_eq!(got, *offset, "{bytes:02x?}")
                }
                other => panic!("{bytes:02x?}: {other:?}"),
            }
        }
    }

    #[test]
    fn huge_declared_lengths_fail_fast() {
        let bytes = [0xa1, 0x61, 0x61, 0x9b, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff];
        assert!(matches!(
            decode_value(&bytes),
            Err(CodecError::MalformedBytes { offset: 3, .. })
        ));
    }

    #[test]
    fn deep_nesting_is_bounded() {
        let mut bytes = vec![0xa1, 0x61, 0x61];
        bytes.extend(std::iter::repeat_n(0x81, 10_000));
        bytes.push(0xf6);
        assert!(matches!(
            decode_value(&bytes),
            Err(CodecError::MalformedBytes { .. })
        ));
    }
}
