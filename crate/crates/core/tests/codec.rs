mod common;

use common::*;
use hapitrace::codegen::FieldKind;
use hapitrace::trace::{
    check_stream_header, decode_payload, decode_record, encode_record, encode_stream_header, EventRecord, Value,
    STREAM_HEADER_LEN, STREAM_MAGIC,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value_of(kind: FieldKind) -> BoxedStrategy<Value> {
    match kind {
        FieldKind::U64 => any::<u64>().prop_map(Value::U64).boxed(),
        FieldKind::I64 => any::<i64>().prop_map(Value::I64).boxed(),
        FieldKind::F64 => any::<u64>().prop_map(|b| Value::F64(f64::from_bits(b))).boxed(),
        FieldKind::Address => any::<u64>().prop_map(Value::Address).boxed(),
        FieldKind::String => ".{0,40}".prop_map(Value::String).boxed(),
        FieldKind::Blob => prop::collection::vec(any::<u8>(), 0..64).prop_map(Value::Blob).boxed(),
    }
}

/// A schema index plus a payload matching its field kinds.
fn record() -> impl Strategy<Value = EventRecord> {
    let reg = mock_registry();
    let n = reg.schemas().len();
    (0..n, any::<u64>()).prop_flat_map(move |(i, ts)| {
        let schema = &reg.schemas()[i];
        let id = schema.id;
        let fields: Vec<_> = schema.fields.iter().map(|f| value_of(f.kind)).collect();
        fields.prop_map(move |payload| EventRecord::new(id, ts, payload))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn records_round_trip(rec in record()) {
        let reg = mock_registry();
        let mut bytes = Vec::new();
        encode_record(&rec, &mut bytes);
        prop_assert_eq!(bytes.len(), rec.encoded_len());
        let (back, used) = decode_record(&reg, &bytes).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, rec);
    }

    #[test]
    fn concatenated_records_decode_in_order(recs in prop::collection::vec(record(), 0..20)) {
        let reg = mock_registry();
        let mut bytes = Vec::new();
        for r in &recs {
            encode_record(r, &mut bytes);
        }
        let mut pos = 0;
        let mut back = Vec::new();
        while pos < bytes.len() {
            let (r, n) = decode_record(&reg, &bytes[pos..]).unwrap();
            back.push(r);
            pos += n;
        }
        prop_assert_eq!(back, recs);
    }

    #[test]
    fn truncation_is_an_error_not_a_panic(rec in record(), cut in any::<prop::sample::Index>()) {
        let reg = mock_registry();
        let mut bytes = Vec::new();
        encode_record(&rec, &mut bytes);
        let at = cut.index(bytes.len());
        prop_assert!(decode_record(&reg, &bytes[..at]).is_err());
    }
}

#[test]
fn payload_decoding_is_exact() {
    let reg = mock_registry();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for schema in reg.schemas() {
        let payload: Vec<Value> = schema.fields.iter().map(|f| random_value(&mut rng, f.kind)).collect();
        let mut bytes = Vec::new();
        for v in &payload {
            v.encode_into(&mut bytes);
        }
        assert_eq!(decode_payload(schema, &bytes).unwrap(), payload);
        bytes.push(0);
        assert!(
            decode_payload(schema, &bytes).is_err(),
            "{} accepts trailing bytes",
            schema.name
        );
    }
}

#[test]
fn scalars_are_little_endian_and_strings_length_prefixed() {
    let mut b = Vec::new();
    Value::U64(0x0102).encode_into(&mut b);
    assert_eq!(b, [2, 1, 0, 0, 0, 0, 0, 0]);
    b.clear();
    Value::String("ab".into()).encode_into(&mut b);
    assert_eq!(b, [2, 0, 0, 0, b'a', b'b']);
}

#[test]
fn stream_header_carries_the_magic() {
    let mut h = Vec::new();
    encode_stream_header(&mut h);
    assert_eq!(h.len(), STREAM_HEADER_LEN);
    assert_eq!(u32::from_le_bytes(h[..4].try_into().unwrap()), STREAM_MAGIC);
    check_stream_header(&h).unwrap();
    h[0] ^= 0xff;
    assert!(check_stream_header(&h).is_err());
}
