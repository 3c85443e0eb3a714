use msggraph::Value;
use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wirecodec::testgen::{deep_value, random_frame};
use wirecodec::{decode, encode, CodecError, Encoding, Op, WireFrame};

const BOTH: [Encoding; 2] = [Encoding::Json, Encoding::Cbor];

#[test]
fn publish_frame_is_a_json_object_with_op() {
    let frame = WireFrame::publish("/cmd_vel", Value::map([("v", Value::Float(1.0))]));
    let enc = encode(&frame, Encoding::Json).unwrap();
    let text = std::str::from_utf8(&enc.bytes).unwrap();
    assert!(text.starts_with('{') && text.ends_with('}'));
    assert!(text.contains(r#""op":"publish""#));
    assert_eq!(text, r#"{"msg":{"v":1.0},"op":"publish","topic":"/cmd_vel"}"#);
}

#[test]
fn encoding_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let f = random_frame(&mut rng, 4);
        for e in BOTH {
            assert_eq!(encode(&f, e).unwrap(), encode(&f.clone(), e).unwrap());
        }
    }
}

#[test]
fn publish_without_topic_is_invalid() {
    let mut f = WireFrame::publish("/x", Value::Null);
    f.topic = None;
    for e in BOTH {
        assert_eq!(
            encode(&f, e),
            Err(CodecError::InvalidFrame { op: "publish", field: "topic" })
        );
    }
}

#[test]
fn unknown_op_is_reported() {
    assert_eq!(
        decode(br#"{"op":"warp"}"#, Encoding::Json),
        Err(CodecError::UnknownOp("warp".into()))
    );
}

#[test]
fn missing_required_field_on_decode_is_schema_violation() {
    let err = decode(br#"{"op":"publish","topic":"/x"}"#, Encoding::Json).unwrap_err();
    assert!(matches!(err, CodecError::SchemaViolation { field, .. } if field == "msg"));
    let err = decode(br#"{"op":"publish","topic":3,"msg":1}"#, Encoding::Json).unwrap_err();
    assert!(matches!(err, CodecError::SchemaViolation { field, .. } if field == "topic"));
    let err = decode(br#"{"op":"status","level":"loud","text":""}"#, Encoding::Json).unwrap_err();
    assert!(matches!(err, CodecError::SchemaViolation { field, .. } if field == "level"));
    let err = decode(br#"{"op":"hello","versions":[1],"encodings":[],"x":1}"#, Encoding::Json)
        .unwrap_err();
    assert!(matches!(err, CodecError::SchemaViolation { .. }));
}

#[test]
fn non_finite_payloads_are_rejected_in_both_encodings() {
    for bad in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
        let f = WireFrame::publish("/x", Value::List(vec![Value::Float(bad)]));
        for e in BOTH {
            assert!(matches!(encode(&f, e), Err(CodecError::SchemaViolation { .. })));
        }
    }
}

#[test]
fn big_integers_only_fail_in_json() {
    let f = WireFrame::publish("/x", Value::Int(i64::MAX));
    assert!(matches!(encode(&f, Encoding::Json), Err(CodecError::SchemaViolation { .. })));
    let enc = encode(&f, Encoding::Cbor).unwrap();
    assert_eq!(decode(&enc.bytes, Encoding::Cbor).unwrap(), f);
}

#[test]
fn random_bytes_payload_sizes() {
    // Sizes computed by hand from the two layouts:
    // CBOR: a3 | 63 "msg" | 59 27 10 <10000> | 62 "op" | 67 "publish" | 65 "topic" | 6d "/camera/image"
    let cbor_expected = 1 + (1 + 3) + (3 + 10_000) + (1 + 2) + (1 + 7) + (1 + 5) + (1 + 13);
    // JSON: {"msg":{"$b64":"<4*ceil(10000/3) chars>"},"op":"publish","topic":"/camera/image"}
    let b64_len = 4 * 10_000_usize.div_ceil(3);
    let json_expected = r#"{"msg":{"$b64":""},"op":"publish","topic":"/camera/image"}"#.len() + b64_len;

    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let mut payload = vec![0u8; 10_000];
    rng.fill_bytes(&mut payload);
    let f = WireFrame::publish("/camera/image", Value::Bytes(payload));
    let cbor = encode(&f, Encoding::Cbor).unwrap();
    let json = encode(&f, Encoding::Json).unwrap();
    assert_eq!(cbor.len(), cbor_expected);
    assert_eq!(json.len(), json_expected);
    // Base64 inflates by 4/3, so the ratio sits just under 3/4.
    let ratio = cbor.len() as f64 / json.len() as f64;
    assert!((0.74..0.75).contains(&ratio), "{ratio}");
}

#[test]
fn every_truncation_errors_with_offset() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let f = random_frame(&mut rng, 6);
        for e in BOTH {
            let enc = encode(&f, e).unwrap();
            for cut in 0..enc.bytes.len() {
                match decode(&enc.bytes[..cut], e) {
                    Ok(g) => panic!("prefix {cut} of {e} decoded to {g:?}"),
                    Err(CodecError::MalformedBytes { offset, .. }) => assert!(offset <= cut),
                    Err(CodecError::SchemaViolation { .. }) if cut == 0 && e == Encoding::Json => {}
                    Err(other) if e == Encoding::Json => {
                        panic!("JSON prefix {cut}: unexpected {other:?}")
                    }
                    Err(other) => panic!("CBOR prefix {cut}: unexpected {other:?}"),
                }
            }
        }
    }
}

#[test]
fn depth_32_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..20 {
        let v = deep_value(&mut rng, 32);
        assert_eq!(v.depth(), 32);
        let f = WireFrame::publish("/deep", v);
        for e in BOTH {
            assert_eq!(decode(&encode(&f, e).unwrap().bytes, e).unwrap(), f);
        }
    }
}

#[test]
fn excessive_depth_is_rejected_not_crashed() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = WireFrame::publish("/deep", deep_value(&mut rng, 200));
    for e in BOTH {
        assert!(encode(&f, e).is_err());
    }
    let json = format!("{{\"op\":\"publish\",\"topic\":\"/x\",\"msg\":{}1{}}}", "[".repeat(5000), "]".repeat(5000));
    assert!(decode(json.as_bytes(), Encoding::Json).is_err());
}

#[test]
fn flipped_bytes_never_panic() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..300 {
        let f = random_frame(&mut rng, 4);
        for e in BOTH {
            let mut bytes = encode(&f, e).unwrap().bytes;
            for _ in 0..rng.gen_range(1..4) {
                let i = rng.gen_range(0..bytes.len());
                bytes[i] ^= 1 << rng.gen_range(0..8);
            }
            let _ = decode(&bytes, e);
        }
    }
}

#[test]
fn op_specific_helpers_validate() {
    let frames = [
        WireFrame::advertise("/a", "T", true),
        WireFrame::unadvertise("/a"),
        WireFrame::subscribe("/a", Some(100), Some(1)),
        WireFrame::unsubscribe("/a"),
        WireFrame::call_service("1", "/s", Value::Null),
        WireFrame::service_ok("1", Some("/s".into()), Value::Int(2)),
        WireFrame::service_err("1", None, "nope"),
        WireFrame::advertise_service("/s", None),
        WireFrame::unadvertise_service("/s"),
        WireFrame::status(wirecodec::StatusLevel::Warning, "careful"),
        WireFrame::hello(vec![1], vec![Encoding::Cbor], Some("secret".into())),
    ];
    let ops: Vec<Op> = frames.iter().map(|f| f.op).collect();
    assert_eq!(ops.len(), Op::ALL.len() - 1 + 1);
    for f in frames {
        for e in BOTH {
            assert_eq!(decode(&encode(&f, e).unwrap().bytes, e).unwrap(), f);
        }
    }
}

fn frame_strategy() -> impl Strategy<Value = WireFrame> {
    any::<u64>().prop_map(|seed| random_frame(&mut ChaCha8Rng::seed_from_u64(seed), 8))
}

proptest! {
    #[test]
    fn round_trip_identity(f in frame_strategy()) {
        for e in BOTH {
            let enc = encode(&f, e).unwrap();
            prop_assert_eq!(decode(&enc.bytes, e).unwrap(), f.clone());
        }
    }

    #[test]
    fn cross_encoding_equivalence(f in frame_strategy()) {
        let via_json = decode(&encode(&f, Encoding::Json).unwrap().bytes, Encoding::Json).unwrap();
        let via_cbor = decode(&encode(&f, Encoding::Cbor).unwrap().bytes, Encoding::Cbor).unwrap();
        prop_assert_eq!(via_json, via_cbor);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        let _ = decode(&bytes, Encoding::Cbor);
        let _ = decode(&bytes, Encoding::Json);
    }
}
