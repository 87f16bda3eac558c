//! Seeded synthetic chains with optional embedded scenarios.
//!
//! The background population trades among itself. Each scenario uses its own
//! address namespace, so its scripted ops never depend on background balances.
//! Output is a function of the config and the seed only.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::address::Address;
use crate::amount::{format_coins, parse_coins};
use crate::error::{Error, Result};
use crate::ingest::{write_address_list, write_blocks, WithdrawalEvent};
use crate::ledger::{BalanceOp, Block};
use crate::sanctions::SanctionSet;
use crate::{Op, Wei, WeiBlock};

/// One coin in base units.
pub const COIN: u128 = 1_000_000_000_000_000_000;

const TAG_DUST: u32 = 1;
const TAG_SPLIT: u32 = 2;
const TAG_TEST: u32 = 3;
const TAG_EXPLOIT: u32 = 4;
const TAG_CENSOR: u32 = 5;
const TAG_EXCHANGE: u32 = 6;
const TAG_MERCHANT: u32 = 7;
const TAG_DECOY: u32 = 8;
const TAG_PRODUCER: u32 = 9;
const TAG_RELAYER: u32 = 10;

/// A coin amount written as a decimal string (`"0.5"`, `"7600"`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Coins(pub u128);

impl Coins {
    pub fn whole(n: u64) -> Self {
        Coins(n as u128 * COIN)
    }

    pub fn wei(&self) -> Wei {
        Wei::from(self.0)
    }
}

impl fmt::Display for Coins {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_coins(&self.0))
    }
}

impl FromStr for Coins {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_coins(s).map(Coins).ok_or_else(|| Error::Config(format!("bad coin amount {s:?}")))
    }
}

impl Serialize for Coins {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Coins {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpMix {
    pub transfer: f64,
    pub fee: f64,
    pub reward: f64,
}

impl Default for OpMix {
    fn default() -> Self {
        OpMix { transfer: 0.8, fee: 0.15, reward: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub start_block: u64,
    /// Background blocks; scenarios may extend the chain past them.
    pub blocks: u64,
    pub ops_per_block: u32,
    /// Size of the background address population.
    pub addresses: u64,
    /// Chance that a transfer goes to a never-used address while any remain.
    pub fresh_recipient_ratio: f64,
    /// Relative op weights; they must sum to at most 1 and are normalized.
    pub mix: OpMix,
    /// Background addresses sanctioned from the first block.
    pub sanctioned: u64,
    pub producers: u64,
    pub scenarios: Vec<Scenario>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            start_block: 1,
            blocks: 100,
            ops_per_block: 20,
            addresses: 1000,
            fresh_recipient_ratio: 0.3,
            mix: OpMix::default(),
            sanctioned: 2,
            producers: 8,
            scenarios: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    /// A sanctioned source splits `budget` evenly over `victims` well-funded addresses.
    Dusting { at: u64, victims: u64, victim_balance: Coins, budget: Coins },
    /// Fan-out from one source to `fan_out` addresses, merge into one, fan out and merge again.
    SplitAndMerge { at: u64, instances: u64, fan_out: u64 },
    /// Small probe deposits followed by large deposits to the same service, plus look-alikes.
    TestDeposits { at: u64, probing: u64, large_only: u64, cross_service: u64, services: u64, max_gap: u64 },
    /// A sanctioned exploiter launders through a tree of fresh addresses, a mixer and
    /// cash-out services; a decoy branch lands innocent addresses at exactly 2.6%.
    Exploit {
        at: u64,
        width: u64,
        depth: u32,
        mixer_withdrawals: u64,
        decoys: u64,
        diluted: u64,
        merchants: u64,
        exchanges: u64,
    },
    /// One producer only includes fully tainted, non-sanctioned senders.
    Censorship { at: u64, senders: u64 },
}

impl Scenario {
    pub fn dusting() -> Self {
        Scenario::Dusting { at: 0, victims: 1200, victim_balance: Coins::whole(7600), budget: Coins::whole(12) }
    }

    pub fn split_and_merge() -> Self {
        Scenario::SplitAndMerge { at: 0, instances: 2, fan_out: 120 }
    }

    pub fn test_deposits() -> Self {
        Scenario::TestDeposits { at: 0, probing: 20, large_only: 10, cross_service: 5, services: 4, max_gap: 40 }
    }

    pub fn exploit() -> Self {
        Scenario::Exploit {
            at: 0,
            width: 6,
            depth: 4,
            mixer_withdrawals: 31,
            decoys: 60,
            diluted: 2,
            merchants: 2,
            exchanges: 4,
        }
    }

    pub fn censorship() -> Self {
        Scenario::Censorship { at: 0, senders: 10 }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "dusting" => Self::dusting(),
            "split-and-merge" => Self::split_and_merge(),
            "test-deposits" => Self::test_deposits(),
            "exploit" => Self::exploit(),
            "censorship" => Self::censorship(),
            other => return Err(Error::Config(format!("unknown scenario {other:?}"))),
        })
    }
}

impl GeneratorConfig {
    /// Scenario only, no background traffic.
    pub fn scenario_only(scenario: Scenario) -> Self {
        GeneratorConfig { blocks: 0, addresses: 0, sanctioned: 0, scenarios: vec![scenario], ..Default::default() }
    }

    /// `blocks` blocks of `ops_per_block` background ops reaching about `addresses` distinct addresses.
    pub fn perf(blocks: u64, ops_per_block: u32, addresses: u64) -> Self {
        GeneratorConfig {
            blocks,
            ops_per_block,
            addresses,
            fresh_recipient_ratio: 0.85,
            sanctioned: 20,
            producers: 32,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.mix;
        let parts = [m.transfer, m.fee, m.reward];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config("op mix weights must be non-negative".into()));
        }
        let sum: f64 = parts.iter().sum();
        if sum > 1.0 + 1e-9 {
            return Err(Error::Config(format!("op mix sums to {sum}, above 1")));
        }
        if sum == 0.0 && self.blocks > 0 && self.ops_per_block > 0 {
            return Err(Error::Config("op mix is all zero".into()));
        }
        if !(0.0..=1.0).contains(&self.fresh_recipient_ratio) {
            return Err(Error::Config("fresh_recipient_ratio outside [0,1]".into()));
        }
        if self.start_block == 0 {
            return Err(Error::Config("start_block must be at least 1".into()));
        }
        if self.sanctioned > self.addresses {
            return Err(Error::Config("more sanctioned addresses than addresses".into()));
        }
        if self.producers == 0 {
            return Err(Error::Config("at least one producer is required".into()));
        }
        for s in &self.scenarios {
            match s {
                Scenario::Dusting { victims, budget, .. } if *victims == 0 || budget.0 < *victims as u128 => {
                    return Err(Error::Config("dusting needs victims and a budget of at least 1 unit each".into()))
                }
                Scenario::SplitAndMerge { fan_out, .. } if *fan_out < 2 => {
                    return Err(Error::Config("split-and-merge fan_out must be at least 2".into()))
                }
                Scenario::TestDeposits { services, max_gap, .. } if *services < 2 || *max_gap == 0 => {
                    return Err(Error::Config("test deposits need two services and a positive gap".into()))
                }
                Scenario::Exploit { width, depth, decoys, diluted, merchants, exchanges, .. } => {
                    let leaves = width * 2u64.pow(depth.saturating_sub(1));
                    if *width == 0 || *depth == 0 || *exchanges == 0 {
                        return Err(Error::Config("exploit needs width, depth and exchanges".into()));
                    }
                    if diluted + merchants > leaves {
                        return Err(Error::Config("exploit has more diluted and merchant hops than leaves".into()));
                    }
                    if *decoys > 10_000 {
                        return Err(Error::Config("too many decoys".into()));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Scripted side facts a scenario knows about its own chain.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DustOutcome {
    pub source: Address,
    pub targets: Vec<Address>,
    pub per_target: Wei,
    pub spent: Wei,
    pub block: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ProbePair {
    pub depositor: Address,
    pub service: Address,
    pub probe_block: u64,
    pub large_block: u64,
}

#[derive(Clone, Debug, Default)]
pub struct SynthChain {
    pub blocks: Vec<WeiBlock>,
    pub sanctions: SanctionSet,
    /// Attacker-controlled addresses of exploit scenarios.
    pub ground_truth: Vec<Address>,
    pub seeds: Vec<(Address, u64)>,
    pub prune_set: Vec<Address>,
    pub labels: BTreeMap<Address, String>,
    pub withdrawals: Vec<WithdrawalEvent<Wei>>,
    pub dust: Option<DustOutcome>,
    pub probe_pairs: Vec<ProbePair>,
    /// Innocent addresses placed at a known score by the exploit's decoy branch.
    pub decoys: Vec<Address>,
    /// Producer whose blocks carry only fully tainted, non-sanctioned senders.
    pub censoring_producer: Option<Address>,
    /// Nodes of split-and-merge instances.
    pub split_merge_nodes: Vec<Address>,
}

impl SynthChain {
    pub fn op_count(&self) -> usize {
        self.blocks.iter().map(|b| b.ops.len()).sum()
    }

    pub fn first_block(&self) -> Option<u64> {
        self.blocks.first().map(|b| b.number)
    }

    pub fn last_block(&self) -> Option<u64> {
        self.blocks.last().map(|b| b.number)
    }

    /// Writes `blocks.jsonl`, `sanctions.txt` and, when present, `ground_truth.txt`,
    /// `seeds.txt`, `prune.txt`, `labels.csv` and `withdrawals.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("blocks.jsonl"))?);
        write_blocks(&mut out, &self.blocks)?;
        out.flush()?;
        std::fs::write(dir.join("sanctions.txt"), self.sanctions.to_text())?;
        if !self.ground_truth.is_empty() {
            write_address_list(std::fs::File::create(dir.join("ground_truth.txt"))?, &self.ground_truth)?;
        }
        if !self.seeds.is_empty() {
            let text: String = self.seeds.iter().map(|(a, h)| format!("{a} {h}\n")).collect();
            std::fs::write(dir.join("seeds.txt"), text)?;
        }
        if !self.prune_set.is_empty() {
            write_address_list(std::fs::File::create(dir.join("prune.txt"))?, &self.prune_set)?;
        }
        if !self.labels.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("labels.csv"))?;
            w.write_record(["address", "label"])?;
            for (a, l) in &self.labels {
                w.write_record([a.to_string(), l.clone()])?;
            }
            w.flush()?;
        }
        if !self.withdrawals.is_empty() {
            crate::ingest::write_withdrawals(std::fs::File::create(dir.join("withdrawals.csv"))?, &self.withdrawals)?;
        }
        Ok(())
    }
}

/// Scripted ops keyed by absolute block, plus forced producers.
#[derive(Default)]
struct Timeline {
    ops: BTreeMap<u64, Vec<Op>>,
    producers: BTreeMap<u64, Address>,
}

impl Timeline {
    fn push(&mut self, block: u64, op: Op) {
        self.ops.entry(block).or_default().push(op);
    }

    fn reward(&mut self, block: u64, to: Address, amount: u128) {
        self.push(block, BalanceOp::reward(to, Wei::from(amount)));
    }

    fn transfer(&mut self, block: u64, from: Address, to: Address, amount: u128) {
        self.push(block, BalanceOp::transfer(from, to, Wei::from(amount)));
    }

    /// Spreads ops over consecutive blocks, `per_block` at a time; returns the next free block.
    fn spread(&mut self, start: u64, per_block: usize, ops: Vec<Op>) -> u64 {
        let mut block = start;
        for chunk in ops.chunks(per_block.max(1)) {
            self.ops.entry(block).or_default().extend(chunk.iter().cloned());
            block += 1;
        }
        block
    }
}

pub fn generate(config: &GeneratorConfig, seed: u64) -> Result<SynthChain> {
    config.validate()?;
    let mut chain = SynthChain::default();
    let mut timeline = Timeline::default();
    for (i, scenario) in config.scenarios.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5ce7_a110 + i as u64));
        let base = config.start_block;
        match scenario {
            Scenario::Dusting { at, victims, victim_balance, budget } => {
                dusting(&mut chain, &mut timeline, base + at, *victims, *victim_balance, *budget)?
            }
            Scenario::SplitAndMerge { at, instances, fan_out } => {
                split_and_merge(&mut chain, &mut timeline, base + at, *instances, *fan_out)
            }
            Scenario::TestDeposits { at, probing, large_only, cross_service, services, max_gap } => test_deposits(
                &mut chain,
                &mut timeline,
                &mut rng,
                base + at,
                [*probing, *large_only, *cross_service],
                *services,
                *max_gap,
            ),
            Scenario::Exploit { at, width, depth, mixer_withdrawals, decoys, diluted, merchants, exchanges } => {
                let shape = ExploitShape {
                    width: *width,
                    depth: *depth,
                    mixer_withdrawals: *mixer_withdrawals,
                    decoys: *decoys,
                    diluted: *diluted,
                    merchants: *merchants,
                    exchanges: *exchanges,
                };
                exploit(&mut chain, &mut timeline, base + at, &shape)?
            }
            Scenario::Censorship { at, senders } => censorship(&mut chain, &mut timeline, base + at, *senders)?,
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background_end = config.start_block + config.blocks;
    let scripted_end = timeline.ops.keys().chain(timeline.producers.keys()).max().map_or(0, |b| b + 1);
    let end = background_end.max(scripted_end);
    let producers: Vec<Address> = (0..config.producers).map(|i| Address::tagged(TAG_PRODUCER, i)).collect();
    let mut background = Background::new(config, &mut chain.sanctions)?;

    for number in config.start_block..end {
        let producer = match timeline.producers.get(&number) {
            Some(p) => *p,
            None => *producers.choose(&mut rng).expect("producers validated non-empty"),
        };
        let mut ops = Vec::new();
        if number == config.start_block {
            ops.extend(background.fund_sanctioned());
        }
        if number < background_end {
            for _ in 0..config.ops_per_block {
                ops.push(background.next_op(&mut rng, producer));
            }
        }
        if let Some(scripted) = timeline.ops.remove(&number) {
            ops.extend(scripted);
        }
        chain.blocks.push(Block { number, producer, ops });
    }
    Ok(chain)
}

struct Background {
    population: u64,
    next_fresh: u64,
    fresh_ratio: f64,
    cumulative: [f64; 3],
    seen: Vec<Address>,
    funded: Vec<Address>,
    balances: HashMap<Address, u128>,
    sanctioned: Vec<Address>,
}

impl Background {
    fn new(config: &GeneratorConfig, sanctions: &mut SanctionSet) -> Result<Self> {
        let m = &config.mix;
        let total = m.transfer + m.fee + m.reward;
        let norm = if total > 0.0 { total } else { 1.0 };
        let cumulative = [m.transfer / norm, (m.transfer + m.fee) / norm, 1.0];
        let mut bg = Background {
            population: config.addresses,
            next_fresh: 1,
            fresh_ratio: config.fresh_recipient_ratio,
            cumulative,
            seen: Vec::new(),
            funded: Vec::new(),
            balances: HashMap::new(),
            sanctioned: Vec::new(),
        };
        for _ in 0..config.sanctioned {
            let a = bg.fresh().expect("sanctioned count validated");
            sanctions.insert(a, config.start_block, None)?;
            bg.sanctioned.push(a);
        }
        Ok(bg)
    }

    fn fresh(&mut self) -> Option<Address> {
        if self.next_fresh > self.population {
            return None;
        }
        let a = Address::from_index(self.next_fresh);
        self.next_fresh += 1;
        self.seen.push(a);
        Some(a)
    }

    fn recipient(&mut self, rng: &mut ChaCha8Rng) -> Address {
        if self.seen.is_empty() || rng.gen_bool(self.fresh_ratio) {
            if let Some(a) = self.fresh() {
                return a;
            }
        }
        self.seen[rng.gen_range(0..self.seen.len())]
    }

    fn credit(&mut self, to: Address, amount: u128) {
        let entry = self.balances.entry(to).or_insert_with(|| {
            self.funded.push(to);
            0
        });
        *entry += amount;
    }

    fn fund_sanctioned(&mut self) -> Vec<Op> {
        let targets = self.sanctioned.clone();
        targets
            .into_iter()
            .map(|a| {
                self.credit(a, 10 * COIN);
                BalanceOp::reward(a, Wei::from(10 * COIN))
            })
            .collect()
    }

    fn pick_sender(&self, rng: &mut ChaCha8Rng) -> Option<Address> {
        for _ in 0..4 {
            let a = *self.funded.choose(rng)?;
            if self.balances[&a] > 0 {
                return Some(a);
            }
        }
        None
    }

    fn next_op(&mut self, rng: &mut ChaCha8Rng, producer: Address) -> Op {
        let roll: f64 = rng.gen();
        let sender = if roll < self.cumulative[1] { self.pick_sender(rng) } else { None };
        let Some(from) = sender.filter(|_| self.population > 0) else {
            let to = self.recipient(rng);
            let amount = rng.gen_range(COIN / 10..=5 * COIN);
            self.credit(to, amount);
            return BalanceOp::reward(to, Wei::from(amount));
        };
        let have = self.balances[&from];
        if roll < self.cumulative[0] {
            let amount = match rng.gen_range(0..10) {
                0 => have,
                1..=3 => rng.gen_range(1..=have.min(COIN / 100).max(1)),
                _ => rng.gen_range(1..=have),
            };
            let mut to = self.recipient(rng);
            if to == from {
                to = self.recipient(rng);
            }
            *self.balances.get_mut(&from).unwrap() -= amount;
            self.credit(to, amount);
            BalanceOp::transfer(from, to, Wei::from(amount))
        } else {
            let sent = rng.gen_range(1..=have.min(COIN / 100));
            let received = sent * rng.gen_range(0..=100u128) / 100;
            *self.balances.get_mut(&from).unwrap() -= sent;
            self.credit(producer, received);
            BalanceOp::fee(from, producer, Wei::from(sent), Wei::from(received))
        }
    }
}

fn dusting(
    chain: &mut SynthChain,
    t: &mut Timeline,
    t0: u64,
    victims: u64,
    victim_balance: Coins,
    budget: Coins,
) -> Result<()> {
    let source = Address::tagged(TAG_DUST, 0);
    chain.sanctions.insert(source, t0, None)?;
    let targets: Vec<Address> = (1..=victims).map(|i| Address::tagged(TAG_DUST, i)).collect();
    t.reward(t0, source, budget.0);
    let funding = targets.iter().map(|v| BalanceOp::reward(*v, victim_balance.wei())).collect();
    let dust_start = t.spread(t0 + 1, 500, funding);
    let per_target = budget.0 / victims as u128;
    let dust = targets.iter().map(|v| BalanceOp::transfer(source, *v, Wei::from(per_target))).collect();
    t.spread(dust_start, 500, dust);
    chain.dust = Some(DustOutcome {
        source,
        targets,
        per_target: Wei::from(per_target),
        spent: Wei::from(per_target * victims as u128),
        block: dust_start,
    });
    Ok(())
}

fn split_and_merge(chain: &mut SynthChain, t: &mut Timeline, t0: u64, instances: u64, fan_out: u64) {
    let mut next = 0u64;
    let mut fresh = || {
        next += 1;
        Address::tagged(TAG_SPLIT, next)
    };
    for _ in 0..instances {
        let source = fresh();
        let first: Vec<Address> = (0..fan_out).map(|_| fresh()).collect();
        let merge = fresh();
        let second: Vec<Address> = (0..fan_out).map(|_| fresh()).collect();
        let sink = fresh();
        t.reward(t0, source, fan_out as u128 * COIN);
        for a in &first {
            t.transfer(t0 + 1, source, *a, COIN);
            t.transfer(t0 + 2, *a, merge, COIN);
        }
        for b in &second {
            t.transfer(t0 + 3, merge, *b, COIN);
            t.transfer(t0 + 4, *b, sink, COIN);
        }
        chain.split_merge_nodes.push(source);
        chain.split_merge_nodes.extend(first);
        chain.split_merge_nodes.push(merge);
        chain.split_merge_nodes.extend(second);
        chain.split_merge_nodes.push(sink);
    }
}

fn test_deposits(
    chain: &mut SynthChain,
    t: &mut Timeline,
    rng: &mut ChaCha8Rng,
    t0: u64,
    [probing, large_only, cross_service]: [u64; 3],
    services: u64,
    max_gap: u64,
) {
    let services: Vec<Address> = (0..services).map(|i| Address::tagged(TAG_EXCHANGE, 1000 + i)).collect();
    for s in &services {
        chain.labels.insert(*s, "exchange".into());
        t.reward(t0, *s, 1000 * COIN);
    }
    let mut next = 0u64;
    let mut actor = |t: &mut Timeline| {
        next += 1;
        let a = Address::tagged(TAG_TEST, next);
        t.reward(t0, a, 100 * COIN);
        a
    };
    let small = |rng: &mut ChaCha8Rng| rng.gen_range(COIN / 20..=COIN / 2);
    let large = |rng: &mut ChaCha8Rng| rng.gen_range(5 * COIN..=50 * COIN);
    for _ in 0..probing {
        let a = actor(t);
        let s = *services.choose(rng).unwrap();
        let probe_block = t0 + 1 + rng.gen_range(0..10);
        let large_block = probe_block + rng.gen_range(1..=max_gap);
        t.transfer(probe_block, a, s, small(rng));
        t.transfer(large_block, a, s, large(rng));
        if rng.gen_bool(0.5) {
            t.transfer(large_block + 1, a, s, large(rng));
        }
        chain.probe_pairs.push(ProbePair { depositor: a, service: s, probe_block, large_block });
    }
    for _ in 0..large_only {
        let a = actor(t);
        let s = *services.choose(rng).unwrap();
        t.transfer(t0 + 1 + rng.gen_range(0..max_gap), a, s, large(rng));
    }
    for _ in 0..cross_service {
        let a = actor(t);
        let mut pair: Vec<Address> = services.choose_multiple(rng, 2).copied().collect();
        pair.shuffle(rng);
        let b = t0 + 1 + rng.gen_range(0..10);
        t.transfer(b, a, pair[0], small(rng));
        t.transfer(b + rng.gen_range(1..=max_gap), a, pair[1], large(rng));
    }
}

struct ExploitShape {
    width: u64,
    depth: u32,
    mixer_withdrawals: u64,
    decoys: u64,
    diluted: u64,
    merchants: u64,
    exchanges: u64,
}

fn exploit(chain: &mut SynthChain, t: &mut Timeline, t0: u64, shape: &ExploitShape) -> Result<()> {
    let mut next = 10u64;
    let mut fresh = || {
        next += 1;
        Address::tagged(TAG_EXPLOIT, next)
    };
    let exploiter = Address::tagged(TAG_EXPLOIT, 0);
    let mixer = Address::tagged(TAG_EXPLOIT, 1);
    let distributor = Address::tagged(TAG_EXPLOIT, 2);
    let relayer = Address::tagged(TAG_RELAYER, 0);
    let exchanges: Vec<Address> = (0..shape.exchanges).map(|i| Address::tagged(TAG_EXCHANGE, i)).collect();
    let merchants: Vec<Address> = (0..shape.merchants).map(|i| Address::tagged(TAG_MERCHANT, i)).collect();
    let decoys: Vec<Address> = (0..shape.decoys).map(|i| Address::tagged(TAG_DECOY, i)).collect();
    let diluted: Vec<Address> = (0..shape.diluted).map(|_| fresh()).collect();

    // clean pools and innocent holdings exist before the exploit
    t.reward(t0, mixer, 1_000_000 * COIN);
    for e in &exchanges {
        t.reward(t0, *e, 100_000 * COIN);
        chain.labels.insert(*e, "exchange".into());
    }
    for m in &merchants {
        t.reward(t0, *m, 10 * COIN);
        chain.labels.insert(*m, "merchant".into());
    }
    for d in &decoys {
        t.reward(t0, *d, 974 * COIN);
    }
    for d in &diluted {
        t.reward(t0, *d, 96 * COIN);
    }
    chain.labels.insert(mixer, "mixer".into());

    let to_layers = shape.width as u128 * 1000 * COIN;
    let to_decoys = shape.decoys as u128 * 26 * COIN;
    let to_mixer = shape.mixer_withdrawals as u128 * 100 * COIN;
    let stolen = to_layers + to_decoys + to_mixer + 1000 * COIN;
    let hit = t0 + 1;
    chain.sanctions.insert(exploiter, hit, None)?;
    t.reward(hit, exploiter, stolen);
    chain.seeds.push((exploiter, hit));

    let mut ground_truth = vec![exploiter, distributor];
    let mut level: Vec<(Address, u128)> = Vec::new();
    for _ in 0..shape.width {
        let a = fresh();
        t.transfer(hit + 1, exploiter, a, 1000 * COIN);
        level.push((a, 1000 * COIN));
    }
    t.transfer(hit + 1, exploiter, distributor, to_decoys);
    t.transfer(hit + 1, exploiter, mixer, to_mixer);
    ground_truth.extend(level.iter().map(|(a, _)| *a));

    let mut block = hit + 2;
    for _ in 1..shape.depth {
        let mut children = Vec::new();
        for (parent, held) in &level {
            let share = held * 2 / 5;
            for _ in 0..2 {
                let c = fresh();
                t.transfer(block, *parent, c, share);
                children.push((c, share));
            }
        }
        ground_truth.extend(children.iter().map(|(a, _)| *a));
        level = children;
        block += 1;
    }

    for (i, (leaf, held)) in level.iter().enumerate() {
        let cash_out = (held / 3).min(20 * COIN);
        t.transfer(block, *leaf, exchanges[i % exchanges.len()], cash_out);
    }
    let mut leaves = level.iter().map(|(a, _)| *a);
    for m in &merchants {
        t.transfer(block + 1, leaves.next().unwrap(), *m, 10 * COIN);
    }
    for d in &diluted {
        t.transfer(block + 1, leaves.next().unwrap(), *d, 4 * COIN);
    }
    ground_truth.extend(diluted.iter().copied());

    for d in &decoys {
        t.transfer(hit + 2, distributor, *d, 26 * COIN);
    }

    let mut w_block = block + 2;
    for (i, _) in (0..shape.mixer_withdrawals).enumerate() {
        let w = fresh();
        t.transfer(w_block, mixer, w, 100 * COIN);
        chain.withdrawals.push(WithdrawalEvent {
            contract: mixer,
            tx_sender: relayer,
            beneficiary: w,
            amount: Wei::from(100 * COIN),
            block: w_block,
        });
        ground_truth.push(w);
        if i % 8 == 7 {
            w_block += 1;
        }
    }

    chain.prune_set.push(mixer);
    chain.decoys.extend(decoys);
    chain.ground_truth.extend(ground_truth);
    Ok(())
}

fn censorship(chain: &mut SynthChain, t: &mut Timeline, t0: u64, senders: u64) -> Result<()> {
    let censor = Address::tagged(TAG_CENSOR, 0);
    let other = Address::tagged(TAG_CENSOR, 1);
    let pool = Address::tagged(TAG_CENSOR, 2);
    chain.sanctions.insert(pool, t0, None)?;
    t.reward(t0, pool, senders as u128 * 10 * COIN);
    t.producers.insert(t0, other);
    t.producers.insert(t0 + 1, other);
    for i in 0..senders {
        let x = Address::tagged(TAG_CENSOR, 100 + i);
        let y = Address::tagged(TAG_CENSOR, 10_000 + i);
        t.transfer(t0 + 1, pool, x, 10 * COIN);
        t.transfer(t0 + 2 + i, x, y, 5 * COIN);
        t.producers.insert(t0 + 2 + i, censor);
    }
    chain.censoring_producer = Some(censor);
    Ok(())
}
