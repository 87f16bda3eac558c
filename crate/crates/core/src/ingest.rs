//! Block, withdrawal-event and label files.
//!
//! A block file holds one JSON object per line:
//!
//! ```text
//! {"number":7,"producer":"0x..","ops":[{"kind":"transfer","from":"0x..","to":"0x..","sent":"10","received":"10"}]}
//! ```
//!
//! `kind` is `transfer`, `fee` or `reward`; rewards carry no `from`. Amounts
//! are base-10 strings. Block numbers must increase by exactly one per line.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

use crate::address::Address;
use crate::amount::Amount;
use crate::error::{Error, Result};
use crate::ledger::{BalanceOp, Block, OpKind};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockLine {
    number: u64,
    producer: Address,
    ops: Vec<OpLine>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpLine {
    kind: OpKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    from: Option<Address>,
    to: Address,
    sent: String,
    received: String,
}

/// Streams blocks from a block file, validating each op and the block order.
pub struct BlockReader<R, A> {
    lines: std::io::Lines<R>,
    line_no: usize,
    expected: Option<u64>,
    _amount: PhantomData<A>,
}

impl<R: BufRead, A: Amount> BlockReader<R, A> {
    pub fn new(reader: R) -> Self {
        BlockReader { lines: reader.lines(), line_no: 0, expected: None, _amount: PhantomData }
    }

    fn parse_line(&mut self, line: &str) -> Result<Block<A>> {
        let line_no = self.line_no;
        let err = |message: String| Error::Parse { line: line_no, message };
        let raw: BlockLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if let Some(expected) = self.expected {
            if raw.number != expected {
                return Err(Error::StreamOrder { expected, got: raw.number });
            }
        }
        let mut ops = Vec::with_capacity(raw.ops.len());
        for (i, op) in raw.ops.into_iter().enumerate() {
            let amount = |s: &str, field: &str| {
                A::parse_decimal(s).ok_or_else(|| err(format!("op {i}: bad {field} amount {s:?}")))
            };
            let parsed = BalanceOp {
                kind: op.kind,
                from: op.from,
                to: op.to,
                sent: amount(&op.sent, "sent")?,
                received: amount(&op.received, "received")?,
            };
            parsed.validate().map_err(|e| err(format!("op {i}: {e}")))?;
            ops.push(parsed);
        }
        self.expected = Some(raw.number + 1);
        Ok(Block { number: raw.number, producer: raw.producer, ops })
    }
}

impl<R: BufRead, A: Amount> Iterator for BlockReader<R, A> {
    type Item = Result<Block<A>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse_line(&line));
        }
    }
}

pub fn read_blocks<R: BufRead, A: Amount>(reader: R) -> BlockReader<R, A> {
    BlockReader::new(reader)
}

/// Writes one block as a canonical line.
pub fn write_block<W: Write, A: Amount>(out: &mut W, block: &Block<A>) -> Result<()> {
    let line = BlockLine {
        number: block.number,
        producer: block.producer,
        ops: block
            .ops
            .iter()
            .map(|op| OpLine {
                kind: op.kind,
                from: op.from,
                to: op.to,
                sent: op.sent.to_string(),
                received: op.received.to_string(),
            })
            .collect(),
    };
    serde_json::to_writer(&mut *out, &line)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_blocks<'a, W: Write, A: Amount>(
    out: &mut W,
    blocks: impl IntoIterator<Item = &'a Block<A>>,
) -> Result<()> {
    for block in blocks {
        write_block(out, block)?;
    }
    Ok(())
}

/// A withdrawal log entry from a mixing pool. `tx_sender` may be a relayer or
/// proxy; the beneficiary comes from the event payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(bound = "A: Amount")]
pub struct WithdrawalEvent<A> {
    pub contract: Address,
    pub tx_sender: Address,
    pub beneficiary: Address,
    #[serde(with = "decimal")]
    pub amount: A,
    pub block: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Withdrawal<A> {
    pub beneficiary: Address,
    pub amount: A,
    pub block: u64,
}

/// Reads `contract,tx_sender,beneficiary,amount,block` CSV with a header row.
pub fn read_withdrawals<R: std::io::Read, A: Amount>(reader: R) -> Result<Vec<WithdrawalEvent<A>>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize().enumerate() {
        out.push(row.map_err(|e: csv::Error| Error::Parse { line: i + 2, message: e.to_string() })?);
    }
    Ok(out)
}

pub fn write_withdrawals<W: Write, A: Amount>(out: W, events: &[WithdrawalEvent<A>]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for e in events {
        wtr.serialize(e)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Beneficiaries of withdrawals from `pools`, in input order, duplicates kept.
pub fn extract_withdrawers<'a, A: Amount>(
    events: impl IntoIterator<Item = &'a WithdrawalEvent<A>>,
    pools: &HashSet<Address>,
) -> Vec<Withdrawal<A>> {
    events
        .into_iter()
        .filter(|e| pools.contains(&e.contract))
        .map(|e| Withdrawal { beneficiary: e.beneficiary, amount: e.amount, block: e.block })
        .collect()
}

/// One address per line; blank lines and `#` comments are ignored.
pub fn read_address_list<R: BufRead>(reader: R) -> Result<Vec<Address>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(t.parse().map_err(|e: Error| Error::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

pub fn write_address_list<W: Write>(mut out: W, addresses: &[Address]) -> Result<()> {
    for a in addresses {
        writeln!(out, "{a}")?;
    }
    Ok(())
}

/// Serde adapter for amounts written as base-10 strings.
pub mod decimal {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::amount::Amount;

    pub fn serialize<S: Serializer, A: Amount>(v: &A, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, A: Amount>(d: D) -> Result<A, D::Error> {
        let s = String::deserialize(d)?;
        A::parse_decimal(&s).ok_or_else(|| serde::de::Error::custom(format!("bad amount {s:?}")))
    }
}
