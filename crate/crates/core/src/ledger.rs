//! The impurity state machine.
//!
//! Each address carries an impurity amount `I` next to its balance `B`. Value
//! leaving an address takes a proportional, ceiling-rounded share of `I` with
//! it; value arriving at a sanctioned address is fully tainted.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::address::Address;
use crate::amount::Amount;
use crate::error::{Error, Result};
use crate::sanctions::SanctionSet;
use crate::score::Score;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ImpurityRecord<A> {
    pub impurity: A,
    pub balance: A,
}

impl<A: Amount> ImpurityRecord<A> {
    pub fn new(impurity: A, balance: A) -> Self {
        ImpurityRecord { impurity, balance }
    }

    pub fn zero() -> Self {
        Self::new(A::zero(), A::zero())
    }

    pub fn score(&self) -> Score<A> {
        Score::new(self.impurity, self.balance)
    }

    pub fn is_valid(&self) -> bool {
        self.impurity <= self.balance
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Transfer,
    Fee,
    Reward,
}

/// One balance-changing event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BalanceOp<A> {
    pub kind: OpKind,
    pub from: Option<Address>,
    pub to: Address,
    pub sent: A,
    pub received: A,
}

impl<A: Amount> BalanceOp<A> {
    pub fn transfer(from: Address, to: Address, amount: A) -> Self {
        BalanceOp { kind: OpKind::Transfer, from: Some(from), to, sent: amount, received: amount }
    }

    pub fn fee(from: Address, producer: Address, sent: A, received: A) -> Self {
        BalanceOp { kind: OpKind::Fee, from: Some(from), to: producer, sent, received }
    }

    pub fn reward(to: Address, amount: A) -> Self {
        BalanceOp { kind: OpKind::Reward, from: None, to, sent: A::zero(), received: amount }
    }

    /// Checks the per-kind shape invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidChainData(format!("{:?} op: {msg}", self.kind)));
        match self.kind {
            OpKind::Transfer => {
                if self.from.is_none() {
                    return bad("transfer requires a sender");
                }
                if self.sent != self.received {
                    return bad("transfer requires sent = received");
                }
            }
            OpKind::Fee => {
                if self.from.is_none() {
                    return bad("fee requires a sender");
                }
                if self.sent < self.received {
                    return bad("fee requires sent >= received");
                }
            }
            OpKind::Reward => {
                if self.from.is_some() {
                    return bad("reward must not have a sender");
                }
                if !self.sent.is_zero() {
                    return bad("reward requires sent = 0");
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block<A> {
    pub number: u64,
    pub producer: Address,
    pub ops: Vec<BalanceOp<A>>,
}

/// A value movement with a sender, as observed while applying a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowRecord<A> {
    pub block: u64,
    /// Index of the op within its block.
    pub seq: u32,
    pub kind: OpKind,
    pub from: Address,
    pub to: Address,
    pub amount: A,
    /// Impurity credited to the receiver by the proportional rule.
    pub carried: A,
    /// Sender's record immediately before the op.
    pub sender_pre: ImpurityRecord<A>,
}

/// Everything a block changed: post-block records of touched addresses plus
/// the block's flow log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeltaSet<A> {
    pub block: u64,
    /// Sorted by address; only addresses whose record differs from the pre-block value.
    pub records: Vec<(Address, ImpurityRecord<A>)>,
    pub flows: Vec<FlowRecord<A>>,
}

impl<A> DeltaSet<A> {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LedgerOptions {
    /// Zero an address's impurity when its sanction window closes.
    pub zero_on_delist: bool,
}

/// Per-op result of the update rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpEffect<A> {
    pub sender_pre: Option<ImpurityRecord<A>>,
    pub carried: A,
}

#[derive(Clone, Debug)]
pub struct LedgerState<A> {
    records: HashMap<Address, ImpurityRecord<A>>,
    start_block: u64,
    next_block: u64,
    options: LedgerOptions,
}

impl<A: Amount> LedgerState<A> {
    /// Builds the state at `start_block`: sanctioned addresses start fully
    /// tainted, everything else clean.
    pub fn initialize<I>(balances: I, sanctions: &SanctionSet, start_block: u64) -> Result<Self>
    where
        I: IntoIterator<Item = (Address, A)>,
    {
        let mut records = HashMap::new();
        for (address, balance) in balances {
            let impurity = if sanctions.is_sanctioned(&address, start_block) { balance } else { A::zero() };
            match records.entry(address) {
                Entry::Occupied(_) => return Err(Error::Validation(format!("duplicate balance entry for {address}"))),
                Entry::Vacant(slot) => {
                    slot.insert(ImpurityRecord::new(impurity, balance));
                }
            }
        }
        Ok(LedgerState { records, start_block, next_block: start_block, options: LedgerOptions::default() })
    }

    /// Rebuilds a state from stored records, e.g. a store's latest table.
    /// `next_block` is the height the next applied block must carry.
    pub fn from_records<I>(records: I, start_block: u64, next_block: u64) -> Result<Self>
    where
        I: IntoIterator<Item = (Address, ImpurityRecord<A>)>,
    {
        let mut map = HashMap::new();
        for (address, rec) in records {
            if !rec.is_valid() {
                return Err(Error::Validation(format!("record for {address} has impurity above balance")));
            }
            if map.insert(address, rec).is_some() {
                return Err(Error::Validation(format!("duplicate record for {address}")));
            }
        }
        if next_block < start_block {
            return Err(Error::Validation("next block precedes start block".into()));
        }
        Ok(LedgerState { records: map, start_block, next_block, options: LedgerOptions::default() })
    }

    pub fn empty(start_block: u64) -> Self {
        LedgerState { records: HashMap::new(), start_block, next_block: start_block, options: LedgerOptions::default() }
    }

    pub fn with_options(mut self, options: LedgerOptions) -> Self {
        self.options = options;
        self
    }

    pub fn start_block(&self) -> u64 {
        self.start_block
    }

    /// Height the next applied block must carry.
    pub fn next_block(&self) -> u64 {
        self.next_block
    }

    pub fn last_block(&self) -> Option<u64> {
        (self.next_block > self.start_block).then(|| self.next_block - 1)
    }

    pub fn record(&self, address: &Address) -> Option<ImpurityRecord<A>> {
        self.records.get(address).copied()
    }

    /// Record of `address`, treating unknown addresses as empty.
    pub fn record_or_zero(&self, address: &Address) -> ImpurityRecord<A> {
        self.record(address).unwrap_or_else(ImpurityRecord::zero)
    }

    pub fn records(&self) -> impl Iterator<Item = (&Address, &ImpurityRecord<A>)> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_impurity(&self) -> A {
        self.records.values().fold(A::zero(), |acc, r| acc + r.impurity)
    }

    pub fn total_balance(&self) -> A {
        self.records.values().fold(A::zero(), |acc, r| acc + r.balance)
    }

    /// Applies a single op at height `block`. On error the state is unchanged.
    pub fn apply_op(&mut self, op: &BalanceOp<A>, sanctions: &SanctionSet, block: u64) -> Result<OpEffect<A>> {
        self.apply_op_journaled(op, sanctions, block, &mut |_, _| {})
    }

    fn apply_op_journaled(
        &mut self,
        op: &BalanceOp<A>,
        sanctions: &SanctionSet,
        block: u64,
        journal: &mut dyn FnMut(Address, Option<ImpurityRecord<A>>),
    ) -> Result<OpEffect<A>> {
        op.validate()?;

        let sender_pre = match op.from {
            Some(from) => {
                let pre = self.record_or_zero(&from);
                if pre.balance < op.sent {
                    return Err(Error::InvalidChainData(format!("{from} sends {} but holds {}", op.sent, pre.balance)));
                }
                Some((from, pre))
            }
            None => None,
        };

        // Receiver balance overflow would break exact arithmetic; reject it up front.
        let receiver_pre = self.record_or_zero(&op.to);
        let receiver_base = match sender_pre {
            Some((from, _)) if from == op.to => receiver_pre.balance - op.sent,
            _ => receiver_pre.balance,
        };
        if receiver_base.checked_add(&op.received).is_none() {
            return Err(Error::InvalidChainData(format!("balance overflow at {}", op.to)));
        }

        let mut carried = A::zero();
        if let Some((from, pre)) = sender_pre {
            if !pre.balance.is_zero() {
                let taken = op.sent.mul_div_ceil(pre.impurity, pre.balance);
                carried = op.received.mul_div_ceil(pre.impurity, pre.balance);
                journal(from, self.records.get(&from).copied());
                let rec = self.records.entry(from).or_default();
                rec.balance = rec.balance - op.sent;
                rec.impurity = rec.impurity - taken;
            }
        }

        journal(op.to, self.records.get(&op.to).copied());
        let rec = self.records.entry(op.to).or_default();
        rec.balance = rec.balance + op.received;
        if sanctions.is_sanctioned(&op.to, block) {
            rec.impurity = rec.balance;
        } else {
            rec.impurity = rec.impurity + carried;
        }
        debug_assert!(rec.is_valid());

        Ok(OpEffect { sender_pre: sender_pre.map(|(_, pre)| pre), carried })
    }

    /// The whole state as a delta at the block before `next_block`, used to
    /// persist an initial state ahead of the first streamed block.
    pub fn genesis_deltas(&self) -> Result<DeltaSet<A>> {
        let block = self
            .next_block
            .checked_sub(1)
            .ok_or_else(|| Error::Validation("an initial state needs a start block of at least 1".into()))?;
        let mut records: Vec<_> = self.records.iter().map(|(a, r)| (*a, *r)).collect();
        records.sort_unstable_by_key(|(a, _)| *a);
        Ok(DeltaSet { block, records, flows: Vec::new() })
    }

    /// Applies a whole block atomically and reports what changed.
    pub fn apply_block(&mut self, block: &Block<A>, sanctions: &SanctionSet) -> Result<DeltaSet<A>> {
        if block.number != self.next_block {
            return Err(Error::StreamOrder { expected: self.next_block, got: block.number });
        }
        let mut pre_values: HashMap<Address, Option<ImpurityRecord<A>>> = HashMap::new();
        let mut journal = |addr: Address, pre: Option<ImpurityRecord<A>>| {
            pre_values.entry(addr).or_insert(pre);
        };

        self.apply_sanction_transitions(block.number, sanctions, &mut journal);

        let mut flows = Vec::new();
        for (seq, op) in block.ops.iter().enumerate() {
            match self.apply_op_journaled(op, sanctions, block.number, &mut journal) {
                Ok(effect) => {
                    if let (Some(from), Some(sender_pre)) = (op.from, effect.sender_pre) {
                        flows.push(FlowRecord {
                            block: block.number,
                            seq: seq as u32,
                            kind: op.kind,
                            from,
                            to: op.to,
                            amount: op.received,
                            carried: effect.carried,
                            sender_pre,
                        });
                    }
                }
                Err(e) => {
                    for (addr, pre) in pre_values {
                        match pre {
                            Some(rec) => self.records.insert(addr, rec),
                            None => self.records.remove(&addr),
                        };
                    }
                    return Err(match e {
                        Error::InvalidChainData(msg) => {
                            Error::InvalidChainData(format!("block {} op {seq}: {msg}", block.number))
                        }
                        other => other,
                    });
                }
            }
        }

        let mut records: Vec<_> = pre_values
            .into_iter()
            .filter_map(|(addr, pre)| {
                let post = self.records[&addr];
                (pre != Some(post)).then_some((addr, post))
            })
            .collect();
        records.sort_unstable_by_key(|(addr, _)| *addr);
        self.next_block += 1;
        Ok(DeltaSet { block: block.number, records, flows })
    }

    fn apply_sanction_transitions(
        &mut self,
        block: u64,
        sanctions: &SanctionSet,
        journal: &mut dyn FnMut(Address, Option<ImpurityRecord<A>>),
    ) {
        for addr in sanctions.activated_at(block) {
            if let Some(rec) = self.records.get_mut(addr) {
                if rec.impurity != rec.balance {
                    journal(*addr, Some(*rec));
                    rec.impurity = rec.balance;
                }
            }
        }
        if self.options.zero_on_delist {
            for addr in sanctions.deactivated_at(block) {
                if sanctions.is_sanctioned(addr, block) {
                    continue;
                }
                if let Some(rec) = self.records.get_mut(addr) {
                    if !rec.impurity.is_zero() {
                        journal(*addr, Some(*rec));
                        rec.impurity = A::zero();
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(n: u64) -> Address {
        Address::from_index(n)
    }

    fn state_with(records: &[(u64, u64, u64)]) -> LedgerState<u64> {
        let mut s = LedgerState::empty(1);
        for &(a, i, b) in records {
            s.records.insert(addr(a), ImpurityRecord::new(i, b));
        }
        s
    }

    #[test]
    fn initialization_rules() {
        let sanctions = SanctionSet::new().with(addr(1), 0).with(addr(3), 0);
        let s = LedgerState::initialize([(addr(1), 500u64), (addr(2), 500), (addr(3), 0)], &sanctions, 5).unwrap();
        assert_eq!(s.record(&addr(1)), Some(ImpurityRecord::new(500, 500)));
        assert!(s.record(&addr(1)).unwrap().score().is_one());
        assert_eq!(s.record(&addr(2)), Some(ImpurityRecord::new(0, 500)));
        assert!(s.record(&addr(2)).unwrap().score().is_zero());
        assert_eq!(s.record(&addr(3)), Some(ImpurityRecord::new(0, 0)));
        assert!(s.record(&addr(3)).unwrap().score().is_zero());
    }

    #[test]
    fn duplicate_initial_balance_rejected() {
        let err = LedgerState::initialize([(addr(1), 1u64), (addr(1), 2)], &SanctionSet::new(), 0).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn proportional_transfer() {
        let mut s = state_with(&[(1, 50, 100)]);
        let none = SanctionSet::new();
        let eff = s.apply_op(&BalanceOp::transfer(addr(1), addr(2), 10), &none, 1).unwrap();
        assert_eq!(eff.carried, 5);
        assert_eq!(s.record(&addr(1)), Some(ImpurityRecord::new(45, 90)));
        assert_eq!(s.record(&addr(2)), Some(ImpurityRecord::new(5, 10)));
    }

    #[test]
    fn ceiling_favours_receiver() {
        let mut s = state_with(&[(1, 1, 3)]);
        s.apply_op(&BalanceOp::transfer(addr(1), addr(2), 1), &SanctionSet::new(), 1).unwrap();
        assert_eq!(s.record(&addr(1)), Some(ImpurityRecord::new(0, 2)));
        assert_eq!(s.record(&addr(2)), Some(ImpurityRecord::new(1, 1)));
    }

    #[test]
    fn fee_burn_destroys_impurity() {
        let mut s = state_with(&[(1, 100, 100)]);
        let before = s.total_impurity();
        s.apply_op(&BalanceOp::fee(addr(1), addr(9), 10, 8), &SanctionSet::new(), 1).unwrap();
        assert_eq!(s.record(&addr(1)), Some(ImpurityRecord::new(90, 90)));
        assert_eq!(s.record(&addr(9)), Some(ImpurityRecord::new(8, 8)));
        assert_eq!(before - s.total_impurity(), 2);
    }

    #[test]
    fn sanctioned_receiver_resets() {
        let sanctions = SanctionSet::new().with(addr(7), 0);
        let mut s = state_with(&[(1, 0, 100), (7, 20, 20)]);
        s.apply_op(&BalanceOp::transfer(addr(1), addr(7), 7), &sanctions, 1).unwrap();
        assert_eq!(s.record(&addr(7)), Some(ImpurityRecord::new(27, 27)));
        assert!(s.record(&addr(7)).unwrap().score().is_one());
    }

    #[test]
    fn reward_carries_no_impurity() {
        let mut s = state_with(&[(1, 5, 10)]);
        s.apply_op(&BalanceOp::reward(addr(1), 10), &SanctionSet::new(), 1).unwrap();
        assert_eq!(s.record(&addr(1)), Some(ImpurityRecord::new(5, 20)));
    }

    #[test]
    fn invalid_ops_rejected_without_mutation() {
        let none = SanctionSet::new();
        let mut s = state_with(&[(1, 5, 10)]);
        let overdraft = BalanceOp::transfer(addr(1), addr(2), 11);
        assert!(matches!(s.apply_op(&overdraft, &none, 1), Err(Error::InvalidChainData(_))));
        let mismatched = BalanceOp { received: 4, ..BalanceOp::transfer(addr(1), addr(2), 5) };
        assert!(matches!(s.apply_op(&mismatched, &none, 1), Err(Error::InvalidChainData(_))));
        let reward_with_sender = BalanceOp { from: Some(addr(1)), ..BalanceOp::reward(addr(2), 5) };
        assert!(matches!(s.apply_op(&reward_with_sender, &none, 1), Err(Error::InvalidChainData(_))));
        let fee_inflating = BalanceOp::fee(addr(1), addr(2), 3, 4);
        assert!(matches!(s.apply_op(&fee_inflating, &none, 1), Err(Error::InvalidChainData(_))));
        assert_eq!(s.record(&addr(1)), Some(ImpurityRecord::new(5, 10)));
        assert_eq!(s.record(&addr(2)), None);
    }

    #[test]
    fn empty_block_changes_nothing() {
        let mut s = state_with(&[(1, 5, 10)]);
        let deltas = s.apply_block(&Block { number: 1, producer: addr(0), ops: vec![] }, &SanctionSet::new()).unwrap();
        assert!(deltas.is_empty());
        assert_eq!(s.record(&addr(1)), Some(ImpurityRecord::new(5, 10)));
        assert_eq!(s.next_block(), 2);
    }

    #[test]
    fn block_deltas_list_changed_addresses() {
        let mut s = state_with(&[(1, 50, 100), (3, 1, 3)]);
        let block = Block {
            number: 1,
            producer: addr(0),
            ops: vec![BalanceOp::transfer(addr(1), addr(2), 10), BalanceOp::transfer(addr(3), addr(4), 1)],
        };
        let deltas = s.apply_block(&block, &SanctionSet::new()).unwrap();
        assert_eq!(
            deltas.records,
            vec![
                (addr(1), ImpurityRecord::new(45, 90)),
                (addr(2), ImpurityRecord::new(5, 10)),
                (addr(3), ImpurityRecord::new(0, 2)),
                (addr(4), ImpurityRecord::new(1, 1)),
            ]
        );
        assert_eq!(deltas.flows.len(), 2);
        assert_eq!(deltas.flows[0].carried, 5);
    }

    #[test]
    fn self_transfer_is_net_zero() {
        let mut s = state_with(&[(1, 50, 100)]);
        let block = Block { number: 1, producer: addr(0), ops: vec![BalanceOp::transfer(addr(1), addr(1), 10)] };
        let deltas = s.apply_block(&block, &SanctionSet::new()).unwrap();
        assert!(deltas.is_empty());
        assert_eq!(s.record(&addr(1)), Some(ImpurityRecord::new(50, 100)));
    }

    #[test]
    fn out_of_order_block_rejected() {
        let mut s = state_with(&[]);
        let err = s.apply_block(&Block { number: 3, producer: addr(0), ops: vec![] }, &SanctionSet::new()).unwrap_err();
        assert!(matches!(err, Error::StreamOrder { expected: 1, got: 3 }));
    }

    #[test]
    fn failed_block_rolls_back() {
        let mut s = state_with(&[(1, 50, 100)]);
        let block = Block {
            number: 1,
            producer: addr(0),
            ops: vec![BalanceOp::transfer(addr(1), addr(2), 10), BalanceOp::transfer(addr(2), addr(3), 11)],
        };
        assert!(s.apply_block(&block, &SanctionSet::new()).is_err());
        assert_eq!(s.record(&addr(1)), Some(ImpurityRecord::new(50, 100)));
        assert_eq!(s.record(&addr(2)), None);
        assert_eq!(s.next_block(), 1);
    }

    #[test]
    fn late_activation_and_delisting() {
        let mut sanctions = SanctionSet::new();
        sanctions.insert(addr(1), 2, Some(3)).unwrap();
        let mut s = state_with(&[(1, 0, 40)]).with_options(LedgerOptions { zero_on_delist: true });
        let empty = |n| Block { number: n, producer: addr(0), ops: vec![] };
        s.apply_block(&empty(1), &sanctions).unwrap();
        assert_eq!(s.record(&addr(1)), Some(ImpurityRecord::new(0, 40)));
        let d = s.apply_block(&empty(2), &sanctions).unwrap();
        assert_eq!(d.records, vec![(addr(1), ImpurityRecord::new(40, 40))]);
        let d = s.apply_block(&empty(3), &sanctions).unwrap();
        assert_eq!(d.records, vec![(addr(1), ImpurityRecord::new(0, 40))]);
    }

    #[test]
    fn delisting_retains_impurity_by_default() {
        let mut sanctions = SanctionSet::new();
        sanctions.insert(addr(1), 0, Some(2)).unwrap();
        let mut s = LedgerState::initialize([(addr(1), 40u64)], &sanctions, 1).unwrap();
        s.apply_block(&Block { number: 1, producer: addr(0), ops: vec![] }, &sanctions).unwrap();
        s.apply_block(&Block { number: 2, producer: addr(0), ops: vec![BalanceOp::reward(addr(1), 10)] }, &sanctions)
            .unwrap();
        assert_eq!(s.record(&addr(1)), Some(ImpurityRecord::new(40, 50)));
    }
}
