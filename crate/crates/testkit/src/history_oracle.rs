//! Per-block snapshots of the rational replay, for checking stored history.

use std::collections::{BTreeSet, HashMap};

use taintledger::{Address, Block, SanctionSet};

use crate::chains::SmallChain;
use crate::rational_ledger::{Holding, RationalLedger};

/// Every distinct value each address held, keyed by the block that produced it.
/// The initial balances appear at `start - 1`.
#[derive(Default)]
pub struct ReplayHistory {
    pub by_address: HashMap<Address, Vec<(u64, Holding)>>,
    pub last_block: u64,
}

impl ReplayHistory {
    pub fn of_chain(chain: &SmallChain) -> Self {
        let mut ledger = RationalLedger::new(&chain.balances, &chain.sanctions, chain.start);
        let mut out = ReplayHistory { last_block: chain.start - 1, ..Default::default() };
        for (a, h) in &ledger.holdings {
            out.by_address.insert(*a, vec![(chain.start - 1, h.clone())]);
        }
        for block in &chain.blocks {
            ledger.apply_block(block, &chain.sanctions);
            out.record(&ledger, block, &chain.sanctions);
        }
        out
    }

    fn record(&mut self, ledger: &RationalLedger, block: &Block<u64>, sanctions: &SanctionSet) {
        let mut touched: BTreeSet<Address> = sanctions.addresses().copied().collect();
        for op in &block.ops {
            touched.insert(op.to);
            touched.extend(op.from);
        }
        for a in touched {
            let Some(now) = ledger.get(&a) else { continue };
            let hist = self.by_address.entry(a).or_default();
            if hist.last().map(|(_, h)| h) != Some(now) {
                hist.push((block.number, now.clone()));
            }
        }
        self.last_block = block.number;
    }

    /// Value held at `block`, or `None` before the address first appears.
    pub fn at(&self, addr: &Address, block: u64) -> Option<&Holding> {
        let hist = self.by_address.get(addr)?;
        hist.iter().rev().find(|(b, _)| *b <= block).map(|(_, h)| h)
    }

    pub fn latest(&self, addr: &Address) -> Option<&Holding> {
        self.by_address.get(addr)?.last().map(|(_, h)| h)
    }
}
