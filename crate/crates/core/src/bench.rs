//! Ingest and query throughput on a synthetic chain.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::address::Address;
use crate::error::{Error, Result};
use crate::ledger::LedgerState;
use crate::store::{HistoryStore, StoreOptions};
use crate::synth::SynthChain;
use crate::view::HistoryView;
use crate::Wei;

#[derive(Clone, Copy, Debug)]
pub struct BenchOptions {
    /// Blocks per store transaction.
    pub batch: usize,
    pub queries: usize,
    pub seed: u64,
    pub sync: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { batch: 250, queries: 10_000, seed: 0, sync: true }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LatencySummary {
    pub median_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl LatencySummary {
    fn of(mut samples: Vec<Duration>) -> Self {
        if samples.is_empty() {
            return LatencySummary { median_us: 0.0, p99_us: 0.0, max_us: 0.0 };
        }
        samples.sort_unstable();
        let at = |q: f64| samples[((samples.len() - 1) as f64 * q).round() as usize].as_secs_f64() * 1e6;
        LatencySummary { median_us: at(0.5), p99_us: at(0.99), max_us: at(1.0) }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub blocks: u64,
    pub ops: u64,
    pub addresses: u64,
    pub ingest_seconds: f64,
    pub blocks_per_second: f64,
    pub ops_per_second: f64,
    pub query_latest: LatencySummary,
    pub query_at: LatencySummary,
    pub bytes_on_disk: u64,
}

impl BenchReport {
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        vec![
            ("blocks", self.blocks.to_string()),
            ("ops", self.ops.to_string()),
            ("addresses", self.addresses.to_string()),
            ("ingest_seconds", format!("{:.3}", self.ingest_seconds)),
            ("blocks_per_second", format!("{:.1}", self.blocks_per_second)),
            ("ops_per_second", format!("{:.1}", self.ops_per_second)),
            ("query_latest_median_us", format!("{:.2}", self.query_latest.median_us)),
            ("query_latest_p99_us", format!("{:.2}", self.query_latest.p99_us)),
            ("query_at_median_us", format!("{:.2}", self.query_at.median_us)),
            ("query_at_p99_us", format!("{:.2}", self.query_at.p99_us)),
            ("bytes_on_disk", self.bytes_on_disk.to_string()),
        ]
    }
}

/// Ingests `chain` into a fresh store under `dir`, then samples point queries.
pub fn run(chain: &SynthChain, dir: &Path, options: &BenchOptions) -> Result<BenchReport> {
    let first = chain.first_block().ok_or_else(|| Error::Config("benchmark chain has no blocks".into()))?;
    let mut store: HistoryStore<Wei> =
        HistoryStore::open_with(dir, StoreOptions { sync: options.sync, ..Default::default() })?;
    if store.last_block()?.is_some() {
        return Err(Error::Config(format!("benchmark store {} is not empty", dir.display())));
    }
    let mut ledger = LedgerState::empty(first);
    let mut batch = Vec::with_capacity(options.batch);
    let started = Instant::now();
    for block in &chain.blocks {
        batch.push(ledger.apply_block(block, &chain.sanctions)?);
        if batch.len() >= options.batch.max(1) {
            store.commit_blocks(&batch)?;
            batch.clear();
        }
    }
    store.commit_blocks(&batch)?;
    let elapsed = started.elapsed().as_secs_f64();

    let mut addresses: Vec<Address> = ledger.records().map(|(a, _)| *a).collect();
    addresses.sort_unstable();
    let last = chain.last_block().unwrap_or(first);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut latest = Vec::with_capacity(options.queries);
    let mut at = Vec::with_capacity(options.queries);
    if !addresses.is_empty() {
        for _ in 0..options.queries {
            let a = addresses[rng.gen_range(0..addresses.len())];
            let t = Instant::now();
            store.query_latest(&a)?;
            latest.push(t.elapsed());
            let h = rng.gen_range(first..=last);
            let t = Instant::now();
            store.query_at(&a, h)?;
            at.push(t.elapsed());
        }
    }
    let blocks = chain.blocks.len() as u64;
    let ops = chain.op_count() as u64;
    Ok(BenchReport {
        blocks,
        ops,
        addresses: addresses.len() as u64,
        ingest_seconds: elapsed,
        blocks_per_second: blocks as f64 / elapsed.max(1e-9),
        ops_per_second: ops as f64 / elapsed.max(1e-9),
        query_latest: LatencySummary::of(latest),
        query_at: LatencySummary::of(at),
        bytes_on_disk: store.stats()?.bytes_on_disk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, GeneratorConfig};

    #[test]
    fn small_bench_reports_consistent_counts() {
        let chain = generate(&GeneratorConfig::perf(40, 10, 300), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let report = run(&chain, dir.path(), &BenchOptions { queries: 50, sync: false, ..Default::default() }).unwrap();
        assert_eq!(report.blocks, chain.blocks.len() as u64);
        assert_eq!(report.ops, chain.op_count() as u64);
        assert!(report.query_at.median_us <= report.query_at.max_us);
        assert!(run(&chain, dir.path(), &BenchOptions::default()).is_err());
    }
}
