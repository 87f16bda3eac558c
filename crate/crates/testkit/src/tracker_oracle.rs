//! Fixed-point tracking computed by repeated full scans of the chain.

use std::collections::{BTreeMap, HashSet};

use num_bigint::BigUint;
use num_traits::Zero;
use taintledger::{Address, OpKind};

use crate::chains::SmallChain;
use crate::history_oracle::ReplayHistory;

/// `I/B >= p/q` on the replayed value after `block`; an absent or empty holding scores 0.
pub fn meets(history: &ReplayHistory, addr: &Address, block: u64, (p, q): (u64, u64)) -> bool {
    match history.at(addr, block) {
        Some(h) if !h.balance.is_zero() => &h.impurity * BigUint::from(q) >= &h.balance * BigUint::from(p),
        _ => p == 0,
    }
}

/// Flagged addresses with their entry block. Repeats passes over every
/// transfer until no address gains an earlier entry point.
pub fn track(
    chain: &SmallChain,
    history: &ReplayHistory,
    seeds: &[(Address, u64)],
    threshold: (u64, u64),
    prune: &HashSet<Address>,
) -> BTreeMap<Address, u64> {
    let seed_set: HashSet<Address> = seeds.iter().map(|(a, _)| *a).collect();
    let mut entry: BTreeMap<Address, (u64, i64)> = BTreeMap::new();
    for &(a, h) in seeds {
        let e = entry.entry(a).or_insert((h, -1));
        *e = (*e).min((h, -1));
    }
    loop {
        let mut changed = false;
        for block in &chain.blocks {
            for (seq, op) in block.ops.iter().enumerate() {
                let Some(from) = op.from else { continue };
                if op.kind != OpKind::Transfer || from == op.to {
                    continue;
                }
                let pos = (block.number, seq as i64);
                let Some(&from_entry) = entry.get(&from) else { continue };
                if pos <= from_entry {
                    continue;
                }
                if prune.contains(&op.to) && !seed_set.contains(&op.to) {
                    continue;
                }
                if !meets(history, &op.to, block.number, threshold) {
                    continue;
                }
                if entry.get(&op.to).is_none_or(|e| pos < *e) {
                    entry.insert(op.to, pos);
                    changed = true;
                }
            }
        }
        if !changed {
            return entry.into_iter().map(|(a, (b, _))| (a, b)).collect();
        }
    }
}
