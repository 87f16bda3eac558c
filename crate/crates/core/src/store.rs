//! Persistent block history on an embedded key-value store.
//!
//! A store is a directory holding one redb file with these tables:
//!
//! * `latest`: address -> record of the most recent commit touching it
//! * `history`: (address, block) -> record, one row per commit touching the address
//! * `flows`: (block, seq) -> every transfer and fee, in chain order
//! * `outgoing`: (sender, block, seq) -> transfer, for forward traversal
//! * `activity`: address -> number of transfers and fees it took part in
//! * `meta`: counters and the last committed block
//!
//! Records are stored as `I` then `B`, each a 32-byte big-endian word. Keys use
//! fixed-width big-endian integers so byte order equals numeric order.

use std::marker::PhantomData;
use std::path::{Path, PathBuf};

use redb::{Database, Durability, ReadableDatabase, ReadableTable, TableDefinition, WriteTransaction};

use crate::address::Address;
use crate::amount::{Amount, WORD_BYTES};
use crate::error::{Error, Result};
use crate::ledger::{DeltaSet, FlowRecord, ImpurityRecord, LedgerState, OpKind};
use crate::view::{check_height, HistoryView, Lookup};

const LATEST: TableDefinition<&[u8], &[u8]> = TableDefinition::new("latest");
const HISTORY: TableDefinition<&[u8], &[u8]> = TableDefinition::new("history");
const FLOWS: TableDefinition<&[u8], &[u8]> = TableDefinition::new("flows");
const OUTGOING: TableDefinition<&[u8], &[u8]> = TableDefinition::new("outgoing");
const ACTIVITY: TableDefinition<&[u8], u64> = TableDefinition::new("activity");
const META: TableDefinition<&str, u64> = TableDefinition::new("meta");

const DB_FILE: &str = "taint.redb";
const RECORD_BYTES: usize = 2 * WORD_BYTES;
const FLOW_BYTES: usize = 1 + 20 + 20 + 4 * WORD_BYTES;

const META_LAST: &str = "last_block";
const META_FIRST: &str = "first_block";
const META_RECORDS: &str = "record_count";
const META_ADDRESSES: &str = "address_count";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StoreStats {
    pub record_count: u64,
    pub address_count: u64,
    pub last_block: Option<u64>,
    pub bytes_on_disk: u64,
}

#[derive(Clone, Copy, Debug)]
pub struct StoreOptions {
    /// fsync every commit. Without it a crash may lose recent commits, never
    /// leaving a partial one.
    pub sync: bool,
    pub cache_bytes: usize,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { sync: true, cache_bytes: 256 << 20 }
    }
}

pub struct HistoryStore<A> {
    db: Option<Database>,
    dir: PathBuf,
    options: StoreOptions,
    _amount: PhantomData<A>,
}

impl<A: Amount> HistoryStore<A> {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(dir, StoreOptions::default())
    }

    /// Opens the store in `dir`, creating the directory and tables if needed.
    pub fn open_with(dir: impl AsRef<Path>, options: StoreOptions) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let db = Database::builder().set_cache_size(options.cache_bytes).create(dir.join(DB_FILE))?;
        let initialized = db.begin_read()?.open_table(META).is_ok();
        if !initialized {
            Self::create_tables(&db)?;
        }
        Ok(HistoryStore { db: Some(db), dir, options, _amount: PhantomData })
    }

    fn create_tables(db: &Database) -> Result<()> {
        let txn = db.begin_write()?;
        {
            txn.open_table(LATEST)?;
            txn.open_table(HISTORY)?;
            txn.open_table(FLOWS)?;
            txn.open_table(OUTGOING)?;
            txn.open_table(ACTIVITY)?;
            txn.open_table(META)?;
        }
        txn.commit()?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn close(&mut self) {
        self.db = None;
    }

    pub fn is_open(&self) -> bool {
        self.db.is_some()
    }

    fn db(&self) -> Result<&Database> {
        self.db.as_ref().ok_or(Error::StoreClosed)
    }

    pub fn commit_block(&mut self, deltas: &DeltaSet<A>) -> Result<()> {
        self.commit_blocks(std::slice::from_ref(deltas))
    }

    /// Commits consecutive blocks in one transaction: all become visible or none do.
    pub fn commit_blocks(&mut self, batch: &[DeltaSet<A>]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let sync = self.options.sync;
        let db = self.db()?;
        let mut txn = db.begin_write()?;
        txn.set_durability(if sync { Durability::Immediate } else { Durability::None })?;
        write_batch(&txn, batch)?;
        txn.commit()?;
        Ok(())
    }

    pub fn stats(&self) -> Result<StoreStats> {
        let txn = self.db()?.begin_read()?;
        let meta = txn.open_table(META)?;
        let get = |k: &str| -> Result<Option<u64>> { Ok(meta.get(k)?.map(|v| v.value())) };
        let bytes_on_disk = std::fs::metadata(self.dir.join(DB_FILE))?.len();
        Ok(StoreStats {
            record_count: get(META_RECORDS)?.unwrap_or(0),
            address_count: get(META_ADDRESSES)?.unwrap_or(0),
            last_block: get(META_LAST)?,
            bytes_on_disk,
        })
    }

    pub fn first_block(&self) -> Result<Option<u64>> {
        let txn = self.db()?.begin_read()?;
        let meta = txn.open_table(META)?;
        Ok(meta.get(META_FIRST)?.map(|v| v.value()))
    }

    /// Rebuilds the in-memory ledger from the latest table, ready to continue
    /// at the block after the last commit.
    pub fn load_ledger(&self) -> Result<Option<LedgerState<A>>> {
        let txn = self.db()?.begin_read()?;
        let meta = txn.open_table(META)?;
        let (Some(first), Some(last)) =
            (meta.get(META_FIRST)?.map(|v| v.value()), meta.get(META_LAST)?.map(|v| v.value()))
        else {
            return Ok(None);
        };
        let latest = txn.open_table(LATEST)?;
        let mut records = Vec::new();
        for row in latest.iter()? {
            let (k, v) = row?;
            records.push((address_from(k.value()), decode_record(v.value())?));
        }
        LedgerState::from_records(records, first, last + 1).map(Some)
    }

    /// Addresses with a stored record, in byte order.
    pub fn for_each_latest(&self, f: &mut dyn FnMut(Address, ImpurityRecord<A>) -> Result<()>) -> Result<()> {
        let txn = self.db()?.begin_read()?;
        let latest = txn.open_table(LATEST)?;
        for row in latest.iter()? {
            let (k, v) = row?;
            f(address_from(k.value()), decode_record(v.value())?)?;
        }
        Ok(())
    }
}

fn write_batch<A: Amount>(txn: &WriteTransaction, batch: &[DeltaSet<A>]) -> Result<()> {
    let mut latest = txn.open_table(LATEST)?;
    let mut history = txn.open_table(HISTORY)?;
    let mut flows = txn.open_table(FLOWS)?;
    let mut outgoing = txn.open_table(OUTGOING)?;
    let mut activity = txn.open_table(ACTIVITY)?;
    let mut meta = txn.open_table(META)?;

    let mut last = meta.get(META_LAST)?.map(|v| v.value());
    let mut records = meta.get(META_RECORDS)?.map_or(0, |v| v.value());
    let mut addresses = meta.get(META_ADDRESSES)?.map_or(0, |v| v.value());
    if last.is_none() {
        meta.insert(META_FIRST, batch[0].block)?;
    }

    for deltas in batch {
        if let Some(l) = last {
            if deltas.block != l + 1 {
                return Err(Error::StreamOrder { expected: l + 1, got: deltas.block });
            }
        }
        for (addr, rec) in &deltas.records {
            let value = encode_record(rec);
            if latest.insert(addr.0.as_slice(), value.as_slice())?.is_none() {
                addresses += 1;
            }
            history.insert(history_key(addr, deltas.block).as_slice(), value.as_slice())?;
            records += 1;
        }
        for flow in &deltas.flows {
            let value = encode_flow(flow);
            flows.insert(flow_key(flow.block, flow.seq).as_slice(), value.as_slice())?;
            if flow.kind == OpKind::Transfer {
                outgoing.insert(outgoing_key(&flow.from, flow.block, flow.seq).as_slice(), value.as_slice())?;
            }
            bump(&mut activity, &flow.from)?;
            if flow.to != flow.from {
                bump(&mut activity, &flow.to)?;
            }
        }
        last = Some(deltas.block);
    }

    meta.insert(META_LAST, last.expect("batch is not empty"))?;
    meta.insert(META_RECORDS, records)?;
    meta.insert(META_ADDRESSES, addresses)?;
    Ok(())
}

fn bump(table: &mut redb::Table<&[u8], u64>, addr: &Address) -> Result<()> {
    let n = table.get(addr.0.as_slice())?.map_or(0, |v| v.value());
    table.insert(addr.0.as_slice(), n + 1)?;
    Ok(())
}

impl<A: Amount> HistoryView<A> for HistoryStore<A> {
    fn last_block(&self) -> Result<Option<u64>> {
        let txn = self.db()?.begin_read()?;
        let meta = txn.open_table(META)?;
        Ok(meta.get(META_LAST)?.map(|v| v.value()))
    }

    fn query_latest(&self, address: &Address) -> Result<Lookup<A>> {
        let txn = self.db()?.begin_read()?;
        let latest = txn.open_table(LATEST)?;
        let Some(value) = latest.get(address.0.as_slice())? else {
            return Ok(Lookup::Untouched);
        };
        let record = decode_record(value.value())?;
        // the block of the latest write is the last history row for the address
        let history = txn.open_table(HISTORY)?;
        let lo = history_key(address, 0);
        let hi = history_key(address, u64::MAX);
        let block = match history.range(lo.as_slice()..=hi.as_slice())?.next_back() {
            Some(row) => block_from_history_key(row?.0.value()),
            None => return Err(Error::Storage(format!("latest row for {address} has no history"))),
        };
        Ok(Lookup::Recorded { block, record })
    }

    fn query_at(&self, address: &Address, block: u64) -> Result<Lookup<A>> {
        let txn = self.db()?.begin_read()?;
        let meta = txn.open_table(META)?;
        check_height(block, meta.get(META_LAST)?.map(|v| v.value()))?;
        let history = txn.open_table(HISTORY)?;
        let lo = history_key(address, 0);
        let hi = history_key(address, block);
        Ok(match history.range(lo.as_slice()..=hi.as_slice())?.next_back() {
            Some(row) => {
                let (k, v) = row?;
                Lookup::Recorded { block: block_from_history_key(k.value()), record: decode_record(v.value())? }
            }
            None => Lookup::Untouched,
        })
    }

    fn outgoing(&self, address: &Address, from_block: u64) -> Result<Vec<FlowRecord<A>>> {
        let txn = self.db()?.begin_read()?;
        let table = txn.open_table(OUTGOING)?;
        let lo = outgoing_key(address, from_block, 0);
        let hi = outgoing_key(address, u64::MAX, u32::MAX);
        let mut out = Vec::new();
        for row in table.range(lo.as_slice()..=hi.as_slice())? {
            let (k, v) = row?;
            let k = k.value();
            let block = u64::from_be_bytes(k[20..28].try_into().unwrap());
            let seq = u32::from_be_bytes(k[28..32].try_into().unwrap());
            out.push(decode_flow(block, seq, v.value())?);
        }
        Ok(out)
    }

    fn for_each_flow(&self, from: u64, to: u64, f: &mut dyn FnMut(&FlowRecord<A>) -> Result<()>) -> Result<()> {
        if from > to {
            return Ok(());
        }
        let txn = self.db()?.begin_read()?;
        let table = txn.open_table(FLOWS)?;
        let lo = flow_key(from, 0);
        let hi = flow_key(to, u32::MAX);
        for row in table.range(lo.as_slice()..=hi.as_slice())? {
            let (k, v) = row?;
            let k = k.value();
            let block = u64::from_be_bytes(k[..8].try_into().unwrap());
            let seq = u32::from_be_bytes(k[8..12].try_into().unwrap());
            f(&decode_flow(block, seq, v.value())?)?;
        }
        Ok(())
    }

    fn activity(&self, address: &Address) -> Result<u64> {
        let txn = self.db()?.begin_read()?;
        let table = txn.open_table(ACTIVITY)?;
        Ok(table.get(address.0.as_slice())?.map_or(0, |v| v.value()))
    }

    fn addresses(&self) -> Result<Vec<Address>> {
        let txn = self.db()?.begin_read()?;
        let latest = txn.open_table(LATEST)?;
        let mut out = Vec::new();
        for row in latest.iter()? {
            out.push(address_from(row?.0.value()));
        }
        Ok(out)
    }
}

fn history_key(addr: &Address, block: u64) -> [u8; 28] {
    let mut k = [0u8; 28];
    k[..20].copy_from_slice(&addr.0);
    k[20..].copy_from_slice(&block.to_be_bytes());
    k
}

fn block_from_history_key(k: &[u8]) -> u64 {
    u64::from_be_bytes(k[20..28].try_into().unwrap())
}

fn flow_key(block: u64, seq: u32) -> [u8; 12] {
    let mut k = [0u8; 12];
    k[..8].copy_from_slice(&block.to_be_bytes());
    k[8..].copy_from_slice(&seq.to_be_bytes());
    k
}

fn outgoing_key(addr: &Address, block: u64, seq: u32) -> [u8; 32] {
    let mut k = [0u8; 32];
    k[..20].copy_from_slice(&addr.0);
    k[20..28].copy_from_slice(&block.to_be_bytes());
    k[28..].copy_from_slice(&seq.to_be_bytes());
    k
}

fn address_from(bytes: &[u8]) -> Address {
    Address(bytes.try_into().expect("20-byte address key"))
}

fn word<A: Amount>(bytes: &[u8]) -> Result<A> {
    let w: &[u8; WORD_BYTES] = bytes.try_into().map_err(|_| Error::Storage("short amount word".into()))?;
    A::from_word(w).ok_or_else(|| Error::Storage("stored amount exceeds the amount width".into()))
}

fn encode_record<A: Amount>(rec: &ImpurityRecord<A>) -> [u8; RECORD_BYTES] {
    let mut out = [0u8; RECORD_BYTES];
    out[..WORD_BYTES].copy_from_slice(&rec.impurity.to_word());
    out[WORD_BYTES..].copy_from_slice(&rec.balance.to_word());
    out
}

fn decode_record<A: Amount>(bytes: &[u8]) -> Result<ImpurityRecord<A>> {
    if bytes.len() != RECORD_BYTES {
        return Err(Error::Storage(format!("record of {} bytes", bytes.len())));
    }
    Ok(ImpurityRecord::new(word(&bytes[..WORD_BYTES])?, word(&bytes[WORD_BYTES..])?))
}

fn encode_flow<A: Amount>(flow: &FlowRecord<A>) -> [u8; FLOW_BYTES] {
    let mut out = [0u8; FLOW_BYTES];
    out[0] = match flow.kind {
        OpKind::Transfer => 0,
        OpKind::Fee => 1,
        OpKind::Reward => 2,
    };
    out[1..21].copy_from_slice(&flow.from.0);
    out[21..41].copy_from_slice(&flow.to.0);
    let mut at = 41;
    for v in [flow.amount, flow.carried, flow.sender_pre.impurity, flow.sender_pre.balance] {
        out[at..at + WORD_BYTES].copy_from_slice(&v.to_word());
        at += WORD_BYTES;
    }
    out
}

fn decode_flow<A: Amount>(block: u64, seq: u32, bytes: &[u8]) -> Result<FlowRecord<A>> {
    if bytes.len() != FLOW_BYTES {
        return Err(Error::Storage(format!("flow of {} bytes", bytes.len())));
    }
    let kind = match bytes[0] {
        0 => OpKind::Transfer,
        1 => OpKind::Fee,
        2 => OpKind::Reward,
        other => return Err(Error::Storage(format!("unknown flow kind {other}"))),
    };
    let w = |i: usize| word::<A>(&bytes[41 + i * WORD_BYTES..41 + (i + 1) * WORD_BYTES]);
    Ok(FlowRecord {
        block,
        seq,
        kind,
        from: address_from(&bytes[1..21]),
        to: address_from(&bytes[21..41]),
        amount: w(0)?,
        carried: w(1)?,
        sender_pre: ImpurityRecord::new(w(2)?, w(3)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ruint::aliases::U256;

    fn addr(n: u64) -> Address {
        Address::from_index(n)
    }

    fn deltas(block: u64, recs: &[(u64, u64, u64)]) -> DeltaSet<U256> {
        DeltaSet {
            block,
            records: recs
                .iter()
                .map(|&(a, i, b)| (addr(a), ImpurityRecord::new(U256::from(i), U256::from(b))))
                .collect(),
            flows: Vec::new(),
        }
    }

    fn open(dir: &Path) -> HistoryStore<U256> {
        HistoryStore::open_with(dir, StoreOptions { sync: false, ..Default::default() }).unwrap()
    }

    #[test]
    fn fresh_store_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let store = open(dir.path());
        let stats = store.stats().unwrap();
        assert_eq!((stats.record_count, stats.address_count, stats.last_block), (0, 0, None));
        assert_eq!(store.query_latest(&addr(1)).unwrap(), Lookup::Untouched);
        assert!(matches!(store.query_at(&addr(1), 0), Err(Error::FutureBlock { .. })));
    }

    #[test]
    fn latest_and_floor_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open(dir.path());
        for b in 1..=12 {
            let recs: &[(u64, u64, u64)] = match b {
                5 => &[(1, 1, 10)],
                9 => &[(1, 4, 20)],
                _ => &[],
            };
            store.commit_block(&deltas(b, recs)).unwrap();
        }
        let at5 = Lookup::Recorded { block: 5, record: ImpurityRecord::new(U256::from(1), U256::from(10)) };
        let at9 = Lookup::Recorded { block: 9, record: ImpurityRecord::new(U256::from(4), U256::from(20)) };
        assert_eq!(store.query_latest(&addr(1)).unwrap(), at9);
        assert_eq!(store.query_at(&addr(1), 7).unwrap(), at5);
        assert_eq!(store.query_at(&addr(1), 9).unwrap(), at9);
        assert_eq!(store.query_at(&addr(1), 4).unwrap(), Lookup::Untouched);
        assert!(matches!(store.query_at(&addr(1), 13), Err(Error::FutureBlock { requested: 13, .. })));
        let stats = store.stats().unwrap();
        assert_eq!((stats.record_count, stats.address_count, stats.last_block), (2, 1, Some(12)));
    }

    #[test]
    fn empty_commit_advances_last_block() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open(dir.path());
        store.commit_block(&deltas(3, &[(1, 0, 5)])).unwrap();
        store.commit_block(&deltas(4, &[])).unwrap();
        let stats = store.stats().unwrap();
        assert_eq!(stats.last_block, Some(4));
        assert_eq!(stats.record_count, 1);
    }

    #[test]
    fn out_of_order_commit_is_rejected_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open(dir.path());
        store.commit_block(&deltas(1, &[(1, 0, 5)])).unwrap();
        let err = store.commit_blocks(&[deltas(2, &[(2, 1, 1)]), deltas(4, &[(3, 1, 1)])]).unwrap_err();
        assert!(matches!(err, Error::StreamOrder { expected: 3, got: 4 }));
        assert_eq!(store.stats().unwrap().last_block, Some(1));
        assert_eq!(store.query_latest(&addr(2)).unwrap(), Lookup::Untouched);
    }

    #[test]
    fn closed_store_refuses_queries() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = open(dir.path());
        store.close();
        assert!(matches!(store.query_latest(&addr(1)), Err(Error::StoreClosed)));
        assert!(matches!(store.stats(), Err(Error::StoreClosed)));
    }

    #[test]
    fn flow_encoding_roundtrips() {
        let flow = FlowRecord {
            block: 7,
            seq: 3,
            kind: OpKind::Fee,
            from: addr(1),
            to: addr(2),
            amount: U256::MAX,
            carried: U256::from(5),
            sender_pre: ImpurityRecord::new(U256::from(6), U256::from(7)),
        };
        assert_eq!(decode_flow::<U256>(7, 3, &encode_flow(&flow)).unwrap(), flow);
    }
}
