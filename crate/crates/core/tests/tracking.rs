use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use proptest::prelude::*;
use taintledger::tracker::{threshold_sweep, track, TrackConfig};
use taintledger::{Address, HistoryView, LedgerState, MemoryHistory, Threshold};
use taintledger_testkit::chains::{random_chain, SmallChain};
use taintledger_testkit::history_oracle::ReplayHistory;
use taintledger_testkit::tracker_oracle;

fn replay(chain: &SmallChain) -> MemoryHistory<u64> {
    let mut state = LedgerState::initialize(chain.balances.iter().copied(), &chain.sanctions, chain.start).unwrap();
    MemoryHistory::replay(&mut state, &chain.blocks, &chain.sanctions).unwrap()
}

fn seeds_of(chain: &SmallChain) -> Vec<(Address, u64)> {
    chain.sanctions.addresses().map(|a| (*a, chain.start)).collect()
}

const GRID: [(u64, u64); 6] = [(0, 1), (1, 200), (1, 50), (1, 20), (1, 4), (1, 1)];

#[test]
fn matches_brute_force_fixed_point() {
    for seed in 0..150 {
        let chain = random_chain(seed, 10, 400);
        let history = replay(&chain);
        let oracle = ReplayHistory::of_chain(&chain);
        let seeds = seeds_of(&chain);
        let prune: HashSet<Address> = if seed % 3 == 0 { [Address::from_index(3)].into() } else { HashSet::new() };
        for (p, q) in GRID {
            let mut config = TrackConfig::new(Threshold::new(p, q).unwrap());
            config.prune_set = prune.clone();
            let got = track(&history, &seeds, &config).unwrap();
            let got: BTreeMap<Address, u64> = got.flagged.values().map(|f| (f.address, f.first_seen)).collect();
            let want = tracker_oracle::track(&chain, &oracle, &seeds, (p, q), &prune);
            assert_eq!(got, want, "seed {seed} threshold {p}/{q}");
        }
    }
}

#[test]
fn raising_the_threshold_never_adds_addresses() {
    for seed in 200..260 {
        let chain = random_chain(seed, 10, 600);
        let history = replay(&chain);
        let seeds = seeds_of(&chain);
        let mut previous: Option<BTreeSet<Address>> = None;
        for (p, q) in GRID {
            let now = track(&history, &seeds, &TrackConfig::new(Threshold::new(p, q).unwrap())).unwrap().flagged_set();
            if let Some(prev) = &previous {
                assert!(now.is_subset(prev), "seed {seed} at {p}/{q}");
            }
            previous = Some(now);
        }
    }
}

#[test]
fn every_expanded_address_met_the_threshold_on_entry() {
    let threshold = Threshold::percent(5);
    for seed in 300..340 {
        let chain = random_chain(seed, 10, 600);
        let history = replay(&chain);
        let state = track(&history, &seeds_of(&chain), &TrackConfig::new(threshold)).unwrap();
        for f in state.flagged.values().filter(|f| !f.seed) {
            assert!(history.query_at(&f.address, f.first_seen).unwrap().score().at_least(threshold));
            assert!(f.peak_score >= f.entry_score);
        }
    }
}

#[test]
fn pruned_addresses_originate_no_edges() {
    for seed in 400..460 {
        let chain = random_chain(seed, 10, 600);
        let history = replay(&chain);
        let mut config = TrackConfig::new(Threshold::percent(1));
        config.prune_set = [Address::from_index(2), Address::from_index(4)].into();
        let seeds: Vec<_> = seeds_of(&chain).into_iter().filter(|(a, _)| !config.prune_set.contains(a)).collect();
        let state = track(&history, &seeds, &config).unwrap();
        assert!(state.flagged.keys().all(|a| !state.pruned.contains(a)));
        assert!(state.edges.iter().all(|e| !state.pruned.contains(&e.from)));
    }
}

#[test]
fn deposit_volume_never_exceeds_flagged_impurity() {
    for seed in 500..540 {
        let chain = random_chain(seed, 10, 600);
        let history = replay(&chain);
        let mut config = TrackConfig::new(Threshold::percent(2));
        let service = Address::from_index(5);
        config.service_labels = HashMap::from([(service, "exchange".to_string())]);
        let state = track(&history, &seeds_of(&chain), &config).unwrap();
        let volume: u64 = state.impurity_volume.values().sum();
        let sent_by_flagged: u64 = state.edges.iter().map(|e| e.carried).sum();
        assert!(volume <= sent_by_flagged);
    }
}

#[test]
fn sweep_recall_is_non_increasing() {
    for seed in 600..640 {
        let chain = random_chain(seed, 10, 600);
        let history = replay(&chain);
        let seeds = seeds_of(&chain);
        let gt: HashSet<Address> = history.addresses().unwrap().into_iter().step_by(2).collect();
        let grid: Vec<Threshold> = GRID.iter().map(|&(p, q)| Threshold::new(p, q).unwrap()).collect();
        let curve = threshold_sweep(&history, &seeds, &gt, &grid, &TrackConfig::new(Threshold::ZERO)).unwrap();
        assert!(curve.windows(2).all(|w| w[1].evaluation.recall <= w[0].evaluation.recall));
        let single = threshold_sweep(&history, &seeds, &gt, &grid[2..3], &TrackConfig::new(Threshold::ZERO)).unwrap();
        assert_eq!(single[0], curve[2]);
    }
}

#[test]
fn unsorted_grid_is_rejected() {
    let chain = random_chain(1, 5, 50);
    let history = replay(&chain);
    let grid = [Threshold::percent(5), Threshold::percent(1)];
    assert!(threshold_sweep(&history, &seeds_of(&chain), &HashSet::new(), &grid, &TrackConfig::new(Threshold::ZERO))
        .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn seed_order_does_not_matter(seed in 0u64..10_000) {
        let chain = random_chain(seed, 8, 300);
        let history = replay(&chain);
        let mut seeds = seeds_of(&chain);
        seeds.push((Address::from_index(1), chain.start));
        let config = TrackConfig::new(Threshold::percent(3));
        let forward = track(&history, &seeds, &config).unwrap();
        seeds.reverse();
        let backward = track(&history, &seeds, &config).unwrap();
        prop_assert_eq!(forward.flagged, backward.flagged);
        prop_assert_eq!(forward.edges, backward.edges);
    }
}
