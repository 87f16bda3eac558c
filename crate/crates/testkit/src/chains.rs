//! Small seeded random chains that never overdraw.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taintledger::{Address, BalanceOp, Block, SanctionSet};

pub struct SmallChain {
    pub balances: Vec<(Address, u64)>,
    pub sanctions: SanctionSet,
    pub start: u64,
    pub blocks: Vec<Block<u64>>,
}

impl SmallChain {
    pub fn op_count(&self) -> usize {
        self.blocks.iter().map(|b| b.ops.len()).sum()
    }
}

/// Random chain over at most `max_addresses` addresses with at most `max_ops` ops.
///
/// Mixes transfers, fees with burn, rewards and self-transfers; one or two
/// addresses are sanctioned from the start and may receive inflows.
pub fn random_chain(seed: u64, max_addresses: usize, max_ops: usize) -> SmallChain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_addresses.max(2));
    let (addrs, producer, start, sanctions, mut bal, balances) = setup(&mut rng, n);
    let total_ops = rng.gen_range(1..=max_ops);
    let mut blocks = Vec::new();
    let mut number = start;
    let mut emitted = 0;
    while emitted < total_ops {
        let in_block = rng.gen_range(0..=20).min(total_ops - emitted);
        let ops = (0..in_block).map(|_| random_op(&mut rng, &addrs, &mut bal, producer)).collect();
        emitted += in_block;
        blocks.push(Block { number, producer, ops });
        number += 1;
    }
    SmallChain { balances, sanctions, start, blocks }
}

/// Exactly `blocks` consecutive blocks of zero to three ops each over `addresses` addresses.
pub fn sparse_chain(seed: u64, addresses: usize, blocks: usize) -> SmallChain {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (addrs, producer, start, sanctions, mut bal, balances) = setup(&mut rng, addresses.max(2));
    let blocks = (0..blocks as u64)
        .map(|i| {
            let ops = (0..rng.gen_range(0..=3)).map(|_| random_op(&mut rng, &addrs, &mut bal, producer)).collect();
            Block { number: start + i, producer, ops }
        })
        .collect();
    SmallChain { balances, sanctions, start, blocks }
}

type Setup = (Vec<Address>, Address, u64, SanctionSet, BTreeMap<Address, u64>, Vec<(Address, u64)>);

fn setup(rng: &mut ChaCha8Rng, n: usize) -> Setup {
    let addrs: Vec<Address> = (1..=n as u64).map(Address::from_index).collect();
    let producer = addrs[rng.gen_range(0..n)];
    let start = rng.gen_range(1..100);
    let mut sanctions = SanctionSet::new();
    let sanctioned = rng.gen_range(1..=2.min(n - 1));
    for a in addrs.iter().take(sanctioned) {
        sanctions.insert(*a, start, None).unwrap();
    }
    let mut bal: BTreeMap<Address, u64> = BTreeMap::new();
    let mut balances = Vec::new();
    for a in &addrs {
        let b = if rng.gen_bool(0.8) { rng.gen_range(0..1_000_000_000u64) } else { 0 };
        bal.insert(*a, b);
        balances.push((*a, b));
    }
    (addrs, producer, start, sanctions, bal, balances)
}

fn random_op(
    rng: &mut ChaCha8Rng,
    addrs: &[Address],
    bal: &mut BTreeMap<Address, u64>,
    producer: Address,
) -> BalanceOp<u64> {
    let n = addrs.len();
    let to = addrs[rng.gen_range(0..n)];
    let from = addrs[rng.gen_range(0..n)];
    let have = bal[&from];
    let roll = rng.gen_range(0..100);
    let op = if roll < 10 || have == 0 {
        BalanceOp::reward(to, rng.gen_range(0..10_000_000u64))
    } else if roll < 30 {
        let sent = rng.gen_range(0..=have.min(1_000_000));
        let received = rng.gen_range(0..=sent);
        BalanceOp::fee(from, producer, sent, received)
    } else {
        let amount = match rng.gen_range(0..4) {
            0 => have,
            1 => rng.gen_range(0..=have.min(3)),
            _ => rng.gen_range(0..=have),
        };
        let to = if rng.gen_bool(0.05) { from } else { to };
        BalanceOp::transfer(from, to, amount)
    };
    if let Some(f) = op.from {
        *bal.get_mut(&f).unwrap() -= op.sent;
    }
    *bal.get_mut(&op.to).unwrap() += op.received;
    op
}
