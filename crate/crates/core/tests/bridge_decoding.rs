use proptest::prelude::*;
use serde::Deserialize;
use taintledger::bridge::{
    read_records, BridgeRecord, BridgeRegistry, ChainTarget, Field, FieldKind, Layout, SchemeDescriptor, FIXTURES,
};
use taintledger::{Address, Wei};

#[derive(Deserialize)]
struct Expect {
    destination: Option<i64>,
    recipient: Option<String>,
    amount: String,
    #[serde(default)]
    via: Option<String>,
}

#[derive(Deserialize)]
struct Fixture {
    expect: Expect,
}

#[test]
fn shipped_fixtures_decode_to_their_expected_fields() {
    let reg = BridgeRegistry::builtin();
    let records: Vec<BridgeRecord<Wei>> = read_records(FIXTURES.as_bytes()).unwrap();
    let expects: Vec<Expect> = FIXTURES.lines().map(|l| serde_json::from_str::<Fixture>(l).unwrap().expect).collect();
    assert_eq!(records.len(), expects.len());
    for (rec, want) in records.iter().zip(&expects) {
        let got = reg.decode(rec).unwrap();
        let dest = match got.destination {
            ChainTarget::Known(id) => Some(id),
            ChainTarget::Unknown => None,
        };
        assert_eq!(dest, want.destination, "{}", rec.bridge);
        assert_eq!(got.recipient.map(|a| a.to_string()), want.recipient.clone().map(|s| s.to_lowercase()));
        assert_eq!(got.amount.to_string(), want.amount);
        assert_eq!(got.via, want.via);
    }
}

#[test]
fn identifier_conventions_normalize_to_one_chain() {
    let reg = BridgeRegistry::builtin();
    let to = Address::from_index(42);
    let endpoint = reg.encode("endpoint-id", 30184, to, Wei::from(5)).unwrap();
    let chain = reg.encode("chain-id", 8453, to, Wei::from(5)).unwrap();
    let a = reg.decode(&BridgeRecord { bridge: "endpoint-id".into(), payload: endpoint, amount: Wei::ZERO, height: 1 });
    let b = reg.decode(&BridgeRecord { bridge: "chain-id".into(), payload: chain, amount: Wei::ZERO, height: 1 });
    assert_eq!(a.unwrap().destination, ChainTarget::Known(8453));
    assert_eq!(b.unwrap().destination, ChainTarget::Known(8453));
}

#[test]
fn opaque_scheme_keeps_only_the_record_amount() {
    let reg = BridgeRegistry::builtin();
    let d = reg
        .decode(&BridgeRecord { bridge: "opaque-relay".into(), payload: vec![9; 77], amount: 31u64, height: 3 })
        .unwrap();
    assert_eq!((d.destination, d.recipient, d.amount), (ChainTarget::Unknown, None, 31));
}

#[test]
fn registered_scheme_decodes_its_fixture() {
    let mut reg = BridgeRegistry::builtin();
    reg.chains.insert("tiny", 7, taintledger::bridge::SOLANA).unwrap();
    reg.register_scheme(SchemeDescriptor {
        name: "tiny".into(),
        id_convention: None,
        layout: Layout::Fixed {
            length: 22,
            fields: vec![
                Field { field: FieldKind::Destination, offset: 0, width: 2 },
                Field { field: FieldKind::Recipient, offset: 2, width: 20 },
            ],
        },
    })
    .unwrap();
    let mut payload = vec![0, 7];
    payload.extend_from_slice(&Address::from_index(9).0);
    let d = reg.decode(&BridgeRecord { bridge: "tiny".into(), payload, amount: 4u64, height: 1 }).unwrap();
    assert_eq!(d.destination, ChainTarget::Known(-2));
    assert_eq!(d.recipient, Some(Address::from_index(9)));
    assert_eq!(d.amount, 4);
}

#[test]
fn aggregator_with_unknown_tag_is_a_payload_error() {
    let reg = BridgeRegistry::builtin();
    let rec =
        BridgeRecord { bridge: "proxy-aggregator".into(), payload: vec![0, 0, 0, 9, 1, 2], amount: 1u64, height: 1 };
    assert!(matches!(reg.decode(&rec), Err(taintledger::Error::Payload(_))));
}

proptest! {
    #[test]
    fn fixed_layouts_roundtrip(
        raw in any::<u32>(),
        recipient in any::<[u8; 20]>(),
        amount in any::<u128>(),
        scheme in prop::sample::select(vec!["endpoint-id", "chain-id"]),
        wrapped in any::<bool>(),
    ) {
        let reg = BridgeRegistry::builtin();
        let payload = reg.encode(scheme, u64::from(raw), Address(recipient), Wei::from(amount)).unwrap();
        let (bridge, payload) = if wrapped {
            ("proxy-aggregator", reg.wrap("proxy-aggregator", scheme, &payload).unwrap())
        } else {
            (scheme, payload)
        };
        let d = reg.decode(&BridgeRecord { bridge: bridge.into(), payload, amount: Wei::ZERO, height: 0 }).unwrap();
        prop_assert_eq!(d.recipient, Some(Address(recipient)));
        prop_assert_eq!(d.amount, Wei::from(amount));
        let conv = reg.scheme(scheme).unwrap().convention().to_string();
        // only registered ids ever come back as known
        match d.destination {
            ChainTarget::Known(id) => prop_assert_eq!(reg.chains.lookup(&conv, u64::from(raw)), Some(id)),
            ChainTarget::Unknown => prop_assert_eq!(reg.chains.lookup(&conv, u64::from(raw)), None),
        }
    }
}
