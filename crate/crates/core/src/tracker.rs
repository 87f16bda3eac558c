//! Forward tracking from seed addresses over stored transfers.
//!
//! An address joins the tracked set when a transfer from a tracked address
//! leaves it with a score of at least the threshold; its score is read from
//! the record after the receiving block. Tracked addresses are expanded from
//! the earliest such transfer onward. Recipients in the prune set break
//! linkability: they are recorded and never expanded.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::io::Write;

use serde::Serialize;

use crate::address::Address;
use crate::amount::Amount;
use crate::error::{Error, Result};
use crate::score::{Score, Threshold};
use crate::view::{HistoryView, Lookup};

pub const DEFAULT_SUPER_ACCOUNT_FLOOR: u64 = 1000;

#[derive(Clone, Debug)]
pub struct TrackConfig {
    pub threshold: Threshold,
    /// Activity count at which a tracked address is tagged as a super-account.
    pub super_account_floor: u64,
    pub prune_set: HashSet<Address>,
    pub service_labels: HashMap<Address, String>,
}

impl TrackConfig {
    pub fn new(threshold: Threshold) -> Self {
        TrackConfig {
            threshold,
            super_account_floor: DEFAULT_SUPER_ACCOUNT_FLOOR,
            prune_set: HashSet::new(),
            service_labels: HashMap::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlaggedAddress<A> {
    pub address: Address,
    pub first_seen: u64,
    /// Score when the address entered the tracked set.
    pub entry_score: Score<A>,
    /// Highest score observed on any traversed transfer into the address.
    pub peak_score: Score<A>,
    pub super_account: bool,
    pub seed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrackEdge<A> {
    pub from: Address,
    pub to: Address,
    pub amount: A,
    pub carried: A,
    pub block: u64,
    pub seq: u32,
    /// Receiver's score after the block.
    pub receiver_score: Score<A>,
}

#[derive(Clone, Debug, Default)]
pub struct TrackState<A> {
    pub flagged: BTreeMap<Address, FlaggedAddress<A>>,
    pub pruned: BTreeSet<Address>,
    pub impurity_volume: BTreeMap<String, A>,
    /// Traversed transfers in chain order.
    pub edges: Vec<TrackEdge<A>>,
}

impl<A: Amount> TrackState<A> {
    pub fn flagged_set(&self) -> BTreeSet<Address> {
        self.flagged.keys().copied().collect()
    }

    pub fn write_flagged_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["address", "first_seen", "entry_score", "peak_score", "super_account", "seed"])?;
        for f in self.flagged.values() {
            w.write_record([
                f.address.to_string(),
                f.first_seen.to_string(),
                f.entry_score.render(6),
                f.peak_score.render(6),
                f.super_account.to_string(),
                f.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_edges_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["from", "to", "amount", "carried", "block", "seq", "receiver_score"])?;
        for e in &self.edges {
            w.write_record([
                e.from.to_string(),
                e.to.to_string(),
                e.amount.to_string(),
                e.carried.to_string(),
                e.block.to_string(),
                e.seq.to_string(),
                e.receiver_score.render(6),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_volume_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "impurity_volume"])?;
        for (label, v) in &self.impurity_volume {
            w.write_record([label.clone(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Position of a transfer in the chain; seeds enter before any op of their block.
type Position = (u64, Option<u32>);

pub fn track<A: Amount, V: HistoryView<A> + ?Sized>(
    view: &V,
    seeds: &[(Address, u64)],
    config: &TrackConfig,
) -> Result<TrackState<A>> {
    let mut entry: HashMap<Address, (Position, Score<A>)> = HashMap::new();
    let mut queue = VecDeque::new();
    let seed_set: HashSet<Address> = seeds.iter().map(|(a, _)| *a).collect();
    for &(seed, height) in seeds {
        if view.query_latest(&seed)? == Lookup::Untouched {
            return Err(Error::SeedNotFound(seed));
        }
        let score = view.query_at(&seed, height)?.score();
        let pos = (height, None);
        if entry.get(&seed).is_none_or(|(p, _)| pos < *p) {
            entry.insert(seed, (pos, score));
            queue.push_back(seed);
        }
    }

    let mut edges: BTreeMap<(u64, u32), TrackEdge<A>> = BTreeMap::new();
    let mut pruned = BTreeSet::new();
    let mut score_cache: HashMap<(Address, u64), Score<A>> = HashMap::new();

    while let Some(addr) = queue.pop_front() {
        let (pos, _) = entry[&addr];
        for flow in view.outgoing(&addr, pos.0)? {
            if (flow.block, Some(flow.seq)) <= pos || flow.to == addr {
                continue;
            }
            let score = match score_cache.get(&(flow.to, flow.block)) {
                Some(s) => *s,
                None => {
                    let s = view.query_at(&flow.to, flow.block)?.score();
                    score_cache.insert((flow.to, flow.block), s);
                    s
                }
            };
            edges.insert(
                (flow.block, flow.seq),
                TrackEdge {
                    from: addr,
                    to: flow.to,
                    amount: flow.amount,
                    carried: flow.carried,
                    block: flow.block,
                    seq: flow.seq,
                    receiver_score: score,
                },
            );
            if config.prune_set.contains(&flow.to) && !seed_set.contains(&flow.to) {
                pruned.insert(flow.to);
                continue;
            }
            if !score.at_least(config.threshold) {
                continue;
            }
            let arrival = (flow.block, Some(flow.seq));
            if entry.get(&flow.to).is_none_or(|(p, _)| arrival < *p) {
                entry.insert(flow.to, (arrival, score));
                queue.push_back(flow.to);
            }
        }
    }

    let mut state = TrackState { pruned, ..Default::default() };
    for (addr, ((block, _), score)) in &entry {
        let super_account = view.activity(addr)? >= config.super_account_floor;
        state.flagged.insert(
            *addr,
            FlaggedAddress {
                address: *addr,
                first_seen: *block,
                entry_score: *score,
                peak_score: *score,
                super_account,
                seed: seed_set.contains(addr),
            },
        );
    }
    for edge in edges.into_values() {
        if let Some(f) = state.flagged.get_mut(&edge.to) {
            if edge.receiver_score > f.peak_score {
                f.peak_score = edge.receiver_score;
            }
        }
        if let Some(label) = config.service_labels.get(&edge.to) {
            let v = state.impurity_volume.entry(label.clone()).or_insert_with(A::zero);
            *v = *v + edge.carried;
        }
        state.edges.push(edge);
    }
    Ok(state)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub flagged: usize,
    pub ground_truth: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub fp_services: usize,
    pub fp_unlabeled: usize,
    pub precision: f64,
    pub recall: f64,
    /// Nothing was flagged; precision is reported as 1.
    pub zero_support: bool,
}

pub fn evaluate(
    flagged: &BTreeSet<Address>,
    ground_truth: &HashSet<Address>,
    service_labels: &HashMap<Address, String>,
) -> Evaluation {
    let tp = flagged.iter().filter(|a| ground_truth.contains(a)).count();
    let fps: Vec<&Address> = flagged.iter().filter(|a| !ground_truth.contains(a)).collect();
    let fp_services = fps.iter().filter(|a| service_labels.contains_key(a)).count();
    let zero_support = flagged.is_empty();
    Evaluation {
        flagged: flagged.len(),
        ground_truth: ground_truth.len(),
        true_positives: tp,
        false_positives: fps.len(),
        fp_services,
        fp_unlabeled: fps.len() - fp_services,
        precision: if zero_support { 1.0 } else { tp as f64 / flagged.len() as f64 },
        recall: if ground_truth.is_empty() { 0.0 } else { tp as f64 / ground_truth.len() as f64 },
        zero_support,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub threshold: Threshold,
    pub evaluation: Evaluation,
}

pub fn threshold_sweep<A: Amount, V: HistoryView<A> + ?Sized>(
    view: &V,
    seeds: &[(Address, u64)],
    ground_truth: &HashSet<Address>,
    grid: &[Threshold],
    base: &TrackConfig,
) -> Result<Vec<SweepPoint>> {
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("threshold grid must be strictly ascending".into()));
    }
    let mut out = Vec::with_capacity(grid.len());
    for &threshold in grid {
        let config = TrackConfig { threshold, ..base.clone() };
        let state = track(view, seeds, &config)?;
        out.push(SweepPoint {
            threshold,
            evaluation: evaluate(&state.flagged_set(), ground_truth, &base.service_labels),
        });
    }
    Ok(out)
}

pub fn write_sweep_csv<W: Write>(out: W, curve: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "threshold",
        "flagged",
        "true_positives",
        "false_positives",
        "fp_services",
        "precision",
        "recall",
    ])?;
    for p in curve {
        let e = &p.evaluation;
        w.write_record([
            p.threshold.to_string(),
            e.flagged.to_string(),
            e.true_positives.to_string(),
            e.false_positives.to_string(),
            e.fp_services.to_string(),
            format!("{:.6}", e.precision),
            format!("{:.6}", e.recall),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `address height` lines into seeds.
pub fn parse_seeds<R: std::io::BufRead>(reader: R) -> Result<Vec<(Address, u64)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: i + 1, message };
        let mut parts = t.split_whitespace();
        let (Some(a), Some(h), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err("expected `address height`".into()));
        };
        let addr = a.parse().map_err(|e: Error| err(e.to_string()))?;
        let height = h.parse().map_err(|_| err(format!("bad height {h:?}")))?;
        out.push((addr, height));
    }
    Ok(out)
}

/// Parses an `address,label` CSV with a header row.
pub fn parse_labels<R: std::io::Read>(reader: R) -> Result<HashMap<Address, String>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let err = |message: String| Error::Parse { line: i + 2, message };
        if row.len() != 2 {
            return Err(err("expected `address,label`".into()));
        }
        let addr = row[0].parse().map_err(|e: Error| err(e.to_string()))?;
        out.insert(addr, row[1].to_string());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{BalanceOp, Block, LedgerState};
    use crate::sanctions::SanctionSet;
    use crate::view::MemoryHistory;

    fn addr(n: u64) -> Address {
        Address::from_index(n)
    }

    fn history(blocks: Vec<Vec<BalanceOp<u64>>>, sanctions: &SanctionSet) -> MemoryHistory<u64> {
        let mut state = LedgerState::empty(1);
        let blocks: Vec<Block<u64>> = blocks
            .into_iter()
            .enumerate()
            .map(|(i, ops)| Block { number: i as u64 + 1, producer: addr(999), ops })
            .collect();
        MemoryHistory::replay(&mut state, &blocks, sanctions).unwrap()
    }

    #[test]
    fn clean_recipient_stops_expansion() {
        let sanctions = SanctionSet::new().with(addr(1), 1);
        let h = history(
            vec![
                vec![BalanceOp::reward(addr(1), 10), BalanceOp::reward(addr(2), 1000)],
                vec![BalanceOp::transfer(addr(2), addr(3), 5)],
            ],
            &sanctions,
        );
        let state = track(&h, &[(addr(2), 1)], &TrackConfig::new(Threshold::percent(5))).unwrap();
        assert_eq!(state.flagged_set(), BTreeSet::from([addr(2)]));
        assert_eq!(state.edges.len(), 1);
    }

    #[test]
    fn prune_set_is_recorded_not_expanded() {
        let sanctions = SanctionSet::new().with(addr(1), 1);
        let h = history(
            vec![
                vec![BalanceOp::reward(addr(1), 10)],
                vec![BalanceOp::transfer(addr(1), addr(5), 10)],
                vec![BalanceOp::transfer(addr(5), addr(6), 10)],
            ],
            &sanctions,
        );
        let mut config = TrackConfig::new(Threshold::percent(5));
        config.prune_set.insert(addr(5));
        let state = track(&h, &[(addr(1), 1)], &config).unwrap();
        assert_eq!(state.pruned, BTreeSet::from([addr(5)]));
        assert_eq!(state.flagged_set(), BTreeSet::from([addr(1)]));
        assert!(state.edges.iter().all(|e| e.from != addr(5)));
    }

    #[test]
    fn later_transfers_only_and_earliest_entry_wins() {
        let sanctions = SanctionSet::new().with(addr(1), 1);
        // addr 3 sends to 4 before it is tainted, then is tainted twice
        let h = history(
            vec![
                vec![BalanceOp::reward(addr(1), 100), BalanceOp::reward(addr(3), 1)],
                vec![BalanceOp::transfer(addr(3), addr(4), 1)],
                vec![BalanceOp::transfer(addr(1), addr(2), 50)],
                vec![BalanceOp::transfer(addr(2), addr(3), 10), BalanceOp::transfer(addr(3), addr(5), 5)],
                vec![BalanceOp::transfer(addr(1), addr(3), 10)],
            ],
            &sanctions,
        );
        let state = track(&h, &[(addr(1), 1)], &TrackConfig::new(Threshold::percent(5))).unwrap();
        let flagged = state.flagged_set();
        assert!(flagged.contains(&addr(3)) && flagged.contains(&addr(5)));
        assert!(!flagged.contains(&addr(4)));
        assert_eq!(state.flagged[&addr(3)].first_seen, 4);
    }

    #[test]
    fn unknown_seed_is_an_error() {
        let h = history(vec![vec![BalanceOp::reward(addr(1), 1)]], &SanctionSet::new());
        let err = track(&h, &[(addr(9), 1)], &TrackConfig::new(Threshold::ONE)).unwrap_err();
        assert!(matches!(err, Error::SeedNotFound(a) if a == addr(9)));
    }

    #[test]
    fn volume_counts_carried_impurity_into_services() {
        let sanctions = SanctionSet::new().with(addr(1), 1);
        let h = history(
            vec![
                vec![BalanceOp::reward(addr(1), 100), BalanceOp::reward(addr(7), 10_000)],
                vec![BalanceOp::transfer(addr(1), addr(7), 30), BalanceOp::transfer(addr(1), addr(7), 20)],
            ],
            &sanctions,
        );
        let mut config = TrackConfig::new(Threshold::percent(5));
        config.service_labels.insert(addr(7), "exchange".into());
        let state = track(&h, &[(addr(1), 1)], &config).unwrap();
        assert_eq!(state.impurity_volume["exchange"], 50);
        assert!(!state.flagged.contains_key(&addr(7)));
    }

    #[test]
    fn evaluation_edge_cases() {
        let gt: HashSet<Address> = [addr(1), addr(2)].into();
        let all: BTreeSet<Address> = gt.iter().copied().collect();
        let e = evaluate(&all, &gt, &HashMap::new());
        assert_eq!((e.precision, e.recall), (1.0, 1.0));
        let e = evaluate(&BTreeSet::new(), &gt, &HashMap::new());
        assert!(e.zero_support);
        assert_eq!((e.precision, e.recall), (1.0, 0.0));
        let labels = HashMap::from([(addr(3), "exchange".to_string())]);
        let e = evaluate(&BTreeSet::from([addr(1), addr(3), addr(4)]), &gt, &labels);
        assert_eq!((e.fp_services, e.fp_unlabeled), (1, 1));
    }

    #[test]
    fn seeds_and_labels_parse() {
        let seeds = parse_seeds("# s\n0x0000000000000000000000000000000000000001 5\n".as_bytes()).unwrap();
        assert_eq!(seeds, vec![(addr(1), 5)]);
        assert!(parse_seeds("0x0000000000000000000000000000000000000001\n".as_bytes()).is_err());
        let labels =
            parse_labels("address,label\n0x0000000000000000000000000000000000000002,exchange\n".as_bytes()).unwrap();
        assert_eq!(labels[&addr(2)], "exchange");
    }
}
