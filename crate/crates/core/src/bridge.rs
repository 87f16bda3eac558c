//! Declarative decoders for bridge-transfer payloads.
//!
//! A scheme descriptor gives the byte layout of a payload. Destination ids are
//! raw values in the scheme's identifier convention and are mapped to
//! canonical chain ids through a [`ChainIdRegistry`]. Anything the payload
//! does not determine comes back as unknown.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::address::Address;
use crate::amount::Amount;
use crate::error::{Error, Result};

pub const BITCOIN: i64 = -1;
pub const SOLANA: i64 = -2;
pub const LITECOIN: i64 = -3;

const BUILTIN_REGISTRY: &str = include_str!("../bridges/registry.txt");
const BUILTIN_SCHEMES: &str = include_str!("../bridges/schemes.json");

/// Sample records for the shipped schemes, one JSON object per line, each
/// with an `expect` object holding the decoded fields.
pub const FIXTURES: &str = include_str!("../bridges/fixtures.jsonl");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Destination,
    Recipient,
    Amount,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Field {
    pub field: FieldKind,
    pub offset: usize,
    pub width: usize,
}

impl Field {
    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.width
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Layout {
    Fixed {
        length: usize,
        fields: Vec<Field>,
    },
    /// The payload carries nothing decodable on chain.
    Opaque,
    /// A proxy that selects an inner scheme by tag and forwards the rest of the payload.
    Aggregator {
        tag_offset: usize,
        tag_width: usize,
        inner_offset: usize,
        routes: Vec<Route>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Route {
    pub tag: u64,
    pub scheme: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeDescriptor {
    pub name: String,
    /// Namespace of the raw destination ids; defaults to the scheme name.
    #[serde(default)]
    pub id_convention: Option<String>,
    pub layout: Layout,
}

impl SchemeDescriptor {
    pub fn convention(&self) -> &str {
        self.id_convention.as_deref().unwrap_or(&self.name)
    }

    fn check_self(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Descriptor(format!("{}: {msg}", self.name)));
        if self.name.trim().is_empty() {
            return Err(Error::Descriptor("scheme name is empty".into()));
        }
        match &self.layout {
            Layout::Opaque => Ok(()),
            Layout::Fixed { length, fields } => {
                let mut seen = Vec::new();
                for f in fields {
                    if f.width == 0 || f.range().end > *length {
                        return bad(format!("{:?} field does not fit the {length}-byte payload", f.field));
                    }
                    let width_ok = match f.field {
                        FieldKind::Destination => f.width <= 8,
                        FieldKind::Recipient => f.width == 20 || f.width == 32,
                        FieldKind::Amount => f.width <= 32,
                    };
                    if !width_ok {
                        return bad(format!("{:?} field cannot be {} bytes wide", f.field, f.width));
                    }
                    if seen.iter().any(|g: &Field| g.field == f.field) {
                        return bad(format!("{:?} declared twice", f.field));
                    }
                    if seen.iter().any(|g: &Field| g.offset < f.range().end && f.offset < g.range().end) {
                        return bad(format!("{:?} overlaps another field", f.field));
                    }
                    seen.push(*f);
                }
                Ok(())
            }
            Layout::Aggregator { tag_offset, tag_width, inner_offset, routes } => {
                if *tag_width == 0 || *tag_width > 8 {
                    return bad(format!("tag width {tag_width} out of range"));
                }
                if *inner_offset < tag_offset + tag_width && *tag_offset < *inner_offset {
                    return bad("inner payload overlaps the tag".into());
                }
                if routes.is_empty() {
                    return bad("aggregator has no routes".into());
                }
                if routes.iter().enumerate().any(|(i, r)| routes[..i].iter().any(|q| q.tag == r.tag)) {
                    return bad("duplicate route tag".into());
                }
                Ok(())
            }
        }
    }
}

/// Raw `(convention, id)` pairs mapped to canonical chain ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChainIdRegistry {
    entries: HashMap<(String, u64), i64>,
}

impl ChainIdRegistry {
    pub fn insert(&mut self, convention: &str, raw: u64, canonical: i64) -> Result<()> {
        match self.entries.get(&(convention.to_string(), raw)) {
            Some(existing) if *existing != canonical => {
                Err(Error::Descriptor(format!("{convention} id {raw} already maps to {existing}, not {canonical}")))
            }
            _ => {
                self.entries.insert((convention.to_string(), raw), canonical);
                Ok(())
            }
        }
    }

    pub fn lookup(&self, convention: &str, raw: u64) -> Option<i64> {
        self.entries.get(&(convention.to_string(), raw)).copied()
    }

    /// Adds every entry of `other`; conflicting mappings are an error.
    pub fn merge(&mut self, other: &ChainIdRegistry) -> Result<()> {
        let mut entries: Vec<_> = other.entries.iter().collect();
        entries.sort();
        for ((conv, raw), canonical) in entries {
            self.insert(conv, *raw, *canonical)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Lines of `convention raw_id canonical_id`; `#` starts a comment.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut reg = ChainIdRegistry::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let text = line.split('#').next().unwrap_or_default().trim();
            if text.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: i + 1, message };
            let parts: Vec<&str> = text.split_whitespace().collect();
            let [conv, raw, canonical] = parts[..] else {
                return Err(err("expected `convention raw_id canonical_id`".into()));
            };
            let raw = raw.parse().map_err(|_| err(format!("bad raw id {raw:?}")))?;
            let canonical = canonical.parse().map_err(|_| err(format!("bad canonical id {canonical:?}")))?;
            reg.insert(conv, raw, canonical).map_err(|e| err(e.to_string()))?;
        }
        Ok(reg)
    }
}

#[derive(Clone, Debug, Default)]
pub struct BridgeRegistry {
    pub chains: ChainIdRegistry,
    schemes: BTreeMap<String, SchemeDescriptor>,
}

impl BridgeRegistry {
    pub fn new(chains: ChainIdRegistry) -> Self {
        BridgeRegistry { chains, schemes: BTreeMap::new() }
    }

    /// The shipped chain-id table and scheme descriptors.
    pub fn builtin() -> Self {
        let chains = ChainIdRegistry::parse(BUILTIN_REGISTRY.as_bytes()).expect("shipped registry parses");
        let mut reg = BridgeRegistry::new(chains);
        reg.register_all(serde_json::from_str(BUILTIN_SCHEMES).expect("shipped schemes parse"))
            .expect("shipped schemes are consistent");
        reg
    }

    pub fn scheme(&self, name: &str) -> Option<&SchemeDescriptor> {
        self.schemes.get(name)
    }

    pub fn scheme_names(&self) -> impl Iterator<Item = &str> {
        self.schemes.keys().map(String::as_str)
    }

    pub fn register_scheme(&mut self, descriptor: SchemeDescriptor) -> Result<()> {
        descriptor.check_self()?;
        if self.schemes.contains_key(&descriptor.name) {
            return Err(Error::Descriptor(format!("scheme {:?} is already registered", descriptor.name)));
        }
        if let Layout::Aggregator { routes, .. } = &descriptor.layout {
            for Route { tag, scheme: inner } in routes {
                match self.schemes.get(inner).map(|d| &d.layout) {
                    None => {
                        return Err(Error::Descriptor(format!(
                            "{}: route {tag} names unregistered scheme {inner:?}",
                            descriptor.name
                        )))
                    }
                    Some(Layout::Aggregator { .. }) => {
                        return Err(Error::Descriptor(format!(
                            "{}: route {tag} leads to another aggregator",
                            descriptor.name
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        self.schemes.insert(descriptor.name.clone(), descriptor);
        Ok(())
    }

    /// Registers in order, so aggregators may follow the schemes they route to.
    pub fn register_all(&mut self, descriptors: Vec<SchemeDescriptor>) -> Result<()> {
        for d in descriptors {
            self.register_scheme(d)?;
        }
        Ok(())
    }

    pub fn decode<A: Amount>(&self, record: &BridgeRecord<A>) -> Result<Decoded<A>> {
        let scheme = self.schemes.get(&record.bridge).ok_or_else(|| Error::UnsupportedScheme(record.bridge.clone()))?;
        match &scheme.layout {
            Layout::Aggregator { tag_offset, tag_width, inner_offset, routes } => {
                let p = &record.payload;
                let tag_end = tag_offset + tag_width;
                if p.len() < tag_end || p.len() < *inner_offset {
                    return Err(Error::Payload(format!("{}: payload of {} bytes is too short", scheme.name, p.len())));
                }
                let tag = be_u64(&p[*tag_offset..tag_end]);
                let inner = routes
                    .iter()
                    .find(|r| r.tag == tag)
                    .map(|r| &r.scheme)
                    .ok_or_else(|| Error::Payload(format!("{}: no route for tag {tag}", scheme.name)))?;
                let inner_scheme = &self.schemes[inner];
                let mut decoded = self.decode_direct(inner_scheme, &p[*inner_offset..], record.amount)?;
                decoded.via = Some(inner.clone());
                Ok(decoded)
            }
            _ => self.decode_direct(scheme, &record.payload, record.amount),
        }
    }

    fn decode_direct<A: Amount>(&self, scheme: &SchemeDescriptor, payload: &[u8], amount: A) -> Result<Decoded<A>> {
        let mut out = Decoded { destination: ChainTarget::Unknown, recipient: None, amount, via: None };
        let Layout::Fixed { length, fields } = &scheme.layout else {
            return Ok(out);
        };
        if payload.len() != *length {
            return Err(Error::Payload(format!("{}: expected {length} bytes, got {}", scheme.name, payload.len())));
        }
        for f in fields {
            let bytes = &payload[f.range()];
            match f.field {
                FieldKind::Destination => {
                    let raw = be_u64(bytes);
                    out.destination = match self.chains.lookup(scheme.convention(), raw) {
                        Some(id) => ChainTarget::Known(id),
                        None => ChainTarget::Unknown,
                    };
                }
                FieldKind::Recipient => {
                    let (pad, addr) = bytes.split_at(bytes.len() - 20);
                    if pad.iter().any(|b| *b != 0) {
                        return Err(Error::Payload(format!("{}: recipient word has non-zero padding", scheme.name)));
                    }
                    out.recipient = Some(Address(addr.try_into().expect("20 bytes")));
                }
                FieldKind::Amount => {
                    out.amount = A::from_biguint(&BigUint::from_bytes_be(bytes))
                        .ok_or_else(|| Error::Payload(format!("{}: amount does not fit", scheme.name)))?;
                }
            }
        }
        Ok(out)
    }

    /// Builds a payload for a fixed-layout scheme.
    pub fn encode<A: Amount>(
        &self,
        scheme: &str,
        raw_destination: u64,
        recipient: Address,
        amount: A,
    ) -> Result<Vec<u8>> {
        let d = self.schemes.get(scheme).ok_or_else(|| Error::UnsupportedScheme(scheme.to_string()))?;
        let Layout::Fixed { length, fields } = &d.layout else {
            return Err(Error::Descriptor(format!("{scheme} has no fixed layout")));
        };
        let mut out = vec![0u8; *length];
        for f in fields {
            let slot = &mut out[f.range()];
            let bytes = match f.field {
                FieldKind::Destination => raw_destination.to_be_bytes().to_vec(),
                FieldKind::Recipient => recipient.0.to_vec(),
                FieldKind::Amount => amount.to_biguint().to_bytes_be(),
            };
            let significant: &[u8] = {
                let first = bytes.iter().position(|b| *b != 0).unwrap_or(bytes.len());
                &bytes[first..]
            };
            if significant.len() > slot.len() {
                return Err(Error::Payload(format!("{:?} does not fit {} bytes", f.field, slot.len())));
            }
            let start = slot.len() - significant.len();
            slot[start..].copy_from_slice(significant);
        }
        Ok(out)
    }

    /// Wraps an inner payload in an aggregator envelope.
    pub fn wrap(&self, aggregator: &str, inner_scheme: &str, inner: &[u8]) -> Result<Vec<u8>> {
        let d = self.schemes.get(aggregator).ok_or_else(|| Error::UnsupportedScheme(aggregator.to_string()))?;
        let Layout::Aggregator { tag_offset, tag_width, inner_offset, routes } = &d.layout else {
            return Err(Error::Descriptor(format!("{aggregator} is not an aggregator")));
        };
        let tag = routes
            .iter()
            .find(|r| r.scheme == inner_scheme)
            .map(|r| r.tag)
            .ok_or_else(|| Error::Descriptor(format!("{aggregator} has no route to {inner_scheme}")))?;
        let mut out = vec![0u8; (*inner_offset).max(tag_offset + tag_width)];
        out[*tag_offset..tag_offset + tag_width].copy_from_slice(&tag.to_be_bytes()[8 - tag_width..]);
        out.truncate(*inner_offset);
        out.extend_from_slice(inner);
        Ok(out)
    }
}

fn be_u64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, b| (acc << 8) | u64::from(*b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChainTarget {
    Known(i64),
    Unknown,
}

impl fmt::Display for ChainTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainTarget::Known(id) => write!(f, "{id}"),
            ChainTarget::Unknown => f.write_str("unknown"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoded<A> {
    pub destination: ChainTarget,
    pub recipient: Option<Address>,
    pub amount: A,
    /// Inner scheme, when the record came through an aggregator.
    pub via: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(bound = "A: Amount")]
pub struct BridgeRecord<A> {
    pub bridge: String,
    #[serde(with = "hex_payload")]
    pub payload: Vec<u8>,
    #[serde(with = "crate::ingest::decimal")]
    pub amount: A,
    pub height: u64,
}

mod hex_payload {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&format_args!("0x{}", hex::encode(v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s.strip_prefix("0x").unwrap_or(&s)).map_err(serde::de::Error::custom)
    }
}

/// One JSON record per line.
pub fn read_records<R: BufRead, A: Amount>(reader: R) -> Result<Vec<BridgeRecord<A>>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

pub fn write_decoded_csv<W: Write, A: Amount>(out: W, rows: &[(BridgeRecord<A>, Decoded<A>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bridge", "height", "via", "destination", "recipient", "amount"])?;
    for (rec, d) in rows {
        w.write_record([
            rec.bridge.clone(),
            rec.height.to_string(),
            d.via.clone().unwrap_or_default(),
            d.destination.to_string(),
            d.recipient.map_or_else(|| "unknown".to_string(), |a| a.to_string()),
            d.amount.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
