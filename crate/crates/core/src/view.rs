//! Read access to committed history, shared by the on-disk store and the
//! in-memory replay used for small experiments.

use std::collections::HashMap;

use crate::address::Address;
use crate::amount::Amount;
use crate::error::{Error, Result};
use crate::ledger::{Block, DeltaSet, FlowRecord, ImpurityRecord, LedgerState, OpKind};
use crate::sanctions::SanctionSet;
use crate::score::Score;

/// Outcome of a point query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lookup<A> {
    /// The record written at `block`, the latest commit at or before the queried height.
    Recorded { block: u64, record: ImpurityRecord<A> },
    /// No record exists. Impurity is zero; the balance is unknown and has to
    /// come from a balance provider.
    Untouched,
}

impl<A: Amount> Lookup<A> {
    pub fn record(&self) -> Option<ImpurityRecord<A>> {
        match self {
            Lookup::Recorded { record, .. } => Some(*record),
            Lookup::Untouched => None,
        }
    }

    pub fn record_or_zero(&self) -> ImpurityRecord<A> {
        self.record().unwrap_or_default()
    }

    pub fn score(&self) -> Score<A> {
        self.record_or_zero().score()
    }

    pub fn impurity(&self) -> A {
        self.record_or_zero().impurity
    }

    pub fn balance_known(&self) -> bool {
        matches!(self, Lookup::Recorded { .. })
    }
}

pub trait HistoryView<A: Amount> {
    fn last_block(&self) -> Result<Option<u64>>;

    fn query_latest(&self, address: &Address) -> Result<Lookup<A>>;

    /// Floor lookup: the record from the greatest commit height `<= block`.
    fn query_at(&self, address: &Address, block: u64) -> Result<Lookup<A>>;

    /// Transfers sent by `address` at heights `>= from_block`, in chain order.
    fn outgoing(&self, address: &Address, from_block: u64) -> Result<Vec<FlowRecord<A>>>;

    /// Visits every flow (transfers and fees) with `from <= block <= to` in chain order.
    fn for_each_flow(&self, from: u64, to: u64, f: &mut dyn FnMut(&FlowRecord<A>) -> Result<()>) -> Result<()>;

    /// Number of transfers and fees the address took part in.
    fn activity(&self, address: &Address) -> Result<u64>;

    /// Every address with at least one stored record, in byte order.
    fn addresses(&self) -> Result<Vec<Address>>;

    fn flows(&self, from: u64, to: u64) -> Result<Vec<FlowRecord<A>>> {
        let mut out = Vec::new();
        self.for_each_flow(from, to, &mut |f| {
            out.push(*f);
            Ok(())
        })?;
        Ok(out)
    }
}

pub(crate) fn check_height(requested: u64, last: Option<u64>) -> Result<()> {
    match last {
        Some(l) if requested <= l => Ok(()),
        _ => Err(Error::FutureBlock { requested, last }),
    }
}

/// History kept in memory, fed the same [`DeltaSet`]s the store persists.
#[derive(Clone, Debug, Default)]
pub struct MemoryHistory<A> {
    history: HashMap<Address, Vec<(u64, ImpurityRecord<A>)>>,
    flows: Vec<FlowRecord<A>>,
    outgoing: HashMap<Address, Vec<usize>>,
    activity: HashMap<Address, u64>,
    last_block: Option<u64>,
}

impl<A: Amount> MemoryHistory<A> {
    pub fn new() -> Self {
        MemoryHistory {
            history: HashMap::new(),
            flows: Vec::new(),
            outgoing: HashMap::new(),
            activity: HashMap::new(),
            last_block: None,
        }
    }

    pub fn commit(&mut self, deltas: &DeltaSet<A>) -> Result<()> {
        if let Some(last) = self.last_block {
            if deltas.block != last + 1 {
                return Err(Error::StreamOrder { expected: last + 1, got: deltas.block });
            }
        }
        for (addr, rec) in &deltas.records {
            self.history.entry(*addr).or_default().push((deltas.block, *rec));
        }
        for flow in &deltas.flows {
            let idx = self.flows.len();
            self.flows.push(*flow);
            if flow.kind == OpKind::Transfer {
                self.outgoing.entry(flow.from).or_default().push(idx);
            }
            *self.activity.entry(flow.from).or_default() += 1;
            if flow.to != flow.from {
                *self.activity.entry(flow.to).or_default() += 1;
            }
        }
        self.last_block = Some(deltas.block);
        Ok(())
    }

    /// Commits the initial state one block before its first block, then
    /// applies and commits every block.
    pub fn replay(state: &mut LedgerState<A>, blocks: &[Block<A>], sanctions: &SanctionSet) -> Result<Self> {
        let mut history = MemoryHistory::new();
        if !state.is_empty() {
            history.commit(&state.genesis_deltas()?)?;
        }
        for block in blocks {
            let deltas = state.apply_block(block, sanctions)?;
            history.commit(&deltas)?;
        }
        Ok(history)
    }
}

impl<A: Amount> HistoryView<A> for MemoryHistory<A> {
    fn last_block(&self) -> Result<Option<u64>> {
        Ok(self.last_block)
    }

    fn query_latest(&self, address: &Address) -> Result<Lookup<A>> {
        Ok(match self.history.get(address).and_then(|h| h.last()) {
            Some(&(block, record)) => Lookup::Recorded { block, record },
            None => Lookup::Untouched,
        })
    }

    fn query_at(&self, address: &Address, block: u64) -> Result<Lookup<A>> {
        check_height(block, self.last_block)?;
        let Some(h) = self.history.get(address) else {
            return Ok(Lookup::Untouched);
        };
        let idx = h.partition_point(|(b, _)| *b <= block);
        Ok(match idx.checked_sub(1).map(|i| h[i]) {
            Some((block, record)) => Lookup::Recorded { block, record },
            None => Lookup::Untouched,
        })
    }

    fn outgoing(&self, address: &Address, from_block: u64) -> Result<Vec<FlowRecord<A>>> {
        let Some(idx) = self.outgoing.get(address) else {
            return Ok(Vec::new());
        };
        let start = idx.partition_point(|&i| self.flows[i].block < from_block);
        Ok(idx[start..].iter().map(|&i| self.flows[i]).collect())
    }

    fn for_each_flow(&self, from: u64, to: u64, f: &mut dyn FnMut(&FlowRecord<A>) -> Result<()>) -> Result<()> {
        let start = self.flows.partition_point(|fl| fl.block < from);
        for flow in self.flows[start..].iter().take_while(|fl| fl.block <= to) {
            f(flow)?;
        }
        Ok(())
    }

    fn activity(&self, address: &Address) -> Result<u64> {
        Ok(self.activity.get(address).copied().unwrap_or(0))
    }

    fn addresses(&self) -> Result<Vec<Address>> {
        let mut out: Vec<Address> = self.history.keys().copied().collect();
        out.sort_unstable();
        Ok(out)
    }
}
