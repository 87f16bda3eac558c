use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use serde_json::json;
use taintledger::amount::{parse_coins, Amount};
use taintledger::bench::{self, BenchOptions};
use taintledger::bridge::{self, BridgeRegistry, ChainIdRegistry, SchemeDescriptor};
use taintledger::graph::{self, TestDepositParams, TxGraph};
use taintledger::ingest::{read_address_list, read_blocks};
use taintledger::report::ScoreDistribution;
use taintledger::rules::{self, AdversaryPlan, AmplificationConfig, Classifier, RuleContext, Sandbox, Sweep};
use taintledger::synth::{self, GeneratorConfig, Scenario};
use taintledger::tracker::{self, TrackConfig};
use taintledger::{Address, HistoryView, LedgerState, Lookup, SanctionSet, Store, StoreOptions, Wei};

use crate::output;
use crate::{usage, Cli, Command, Preset, RulesArgs};

const SANCTIONS_FILE: &str = "sanctions.txt";

struct Ctx {
    out: Option<PathBuf>,
    json: bool,
}

impl Ctx {
    fn out(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    fn writer(&self) -> Result<Box<dyn Write>> {
        output::open(self.out())
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx { out: cli.out, json: cli.json };
    match cli.command {
        Command::Ingest { store, blocks, sanctions, batch, no_sync } => {
            ingest(&ctx, &store.store, &blocks, sanctions.as_deref(), batch, !no_sync)
        }
        Command::QueryLatest { store, address } => {
            let store = open_existing(&store.store)?;
            let last = store.last_block()?.unwrap_or(0);
            let lookup = store.query_latest(&address)?;
            emit_lookup(&ctx, address, last, lookup)
        }
        Command::QueryAt { store, address, block } => {
            let store = open_existing(&store.store)?;
            let lookup = store.query_at(&address, block)?;
            emit_lookup(&ctx, address, block, lookup)
        }
        Command::Track { store, seeds, threshold, prune, labels, super_floor, edges_out, volume_out } => {
            let seeds = tracker::parse_seeds(reader(&seeds)?)?;
            let config = TrackConfig {
                threshold,
                super_account_floor: super_floor,
                prune_set: prune.as_deref().map(read_addresses).transpose()?.unwrap_or_default(),
                service_labels: labels.as_deref().map(read_labels).transpose()?.unwrap_or_default(),
            };
            let store = open_existing(&store.store)?;
            track(&ctx, &store, &seeds, &config, edges_out.as_deref(), volume_out.as_deref())
        }
        Command::Sweep { store, seeds, ground_truth, grid, prune, labels } => {
            if grid.is_empty() {
                return Err(usage("--grid needs at least one threshold"));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(usage("--grid must be strictly ascending"));
            }
            let seeds = tracker::parse_seeds(reader(&seeds)?)?;
            let truth = read_addresses(&ground_truth)?;
            let mut base = TrackConfig::new(grid[0]);
            base.prune_set = prune.as_deref().map(read_addresses).transpose()?.unwrap_or_default();
            base.service_labels = labels.as_deref().map(read_labels).transpose()?.unwrap_or_default();
            let store = open_existing(&store.store)?;
            let curve = tracker::threshold_sweep(&store, &seeds, &truth, &grid, &base)?;
            if ctx.json {
                output::json(ctx.out(), &serde_json::to_value(&curve)?)
            } else {
                Ok(tracker::write_sweep_csv(ctx.writer()?, &curve)?)
            }
        }
        Command::Rules(args) => rules_cmd(&ctx, args),
        Command::Amplify { population, balance, per_target, steps, threshold } => {
            if steps.is_empty() {
                return Err(usage("--steps needs at least one value"));
            }
            let config = AmplificationConfig {
                population,
                balance_each: units(&balance, "--balance")?,
                per_target: units(&per_target, "--per-target")?,
                steps,
                threshold,
            };
            amplify(&ctx, &config)
        }
        Command::Motifs { store, from, to, focus } => {
            let focus = focus.as_deref().map(read_addresses).transpose()?;
            let store = open_existing(&store.store)?;
            let (from, to) = block_range(&store, from, to)?;
            let g = match &focus {
                Some(f) => TxGraph::around(&store, f, from, to)?,
                None => TxGraph::from_view(&store, from, to)?,
            };
            let census = graph::motif_census(&g);
            if ctx.json {
                let mut v = census.to_json();
                v["nodes"] = json!(g.nodes.len());
                v["arcs"] = json!(g.distinct_arcs());
                output::json(ctx.out(), &v)
            } else {
                Ok(census.write_csv(ctx.writer()?)?)
            }
        }
        Command::TestDeposits { store, labels, small_cap, large_floor, max_gap } => {
            let params = TestDepositParams {
                small_cap: coins(&small_cap, "--small-cap")?,
                large_floor: coins(&large_floor, "--large-floor")?,
                max_gap_blocks: max_gap,
            };
            let services: HashSet<Address> = read_labels(&labels)?.into_keys().collect();
            let store = open_existing(&store.store)?;
            let (from, to) = block_range(&store, None, None)?;
            let deposits = graph::deposits_into(&store, &services, from, to)?;
            let flagged = graph::detect_test_deposits(&deposits, &params);
            if ctx.json {
                output::json(ctx.out(), &json!({ "deposits": deposits.len(), "flagged": flagged }))
            } else {
                let mut w = ctx.writer()?;
                writeln!(w, "address")?;
                for a in &flagged {
                    writeln!(w, "{a}")?;
                }
                w.flush()?;
                Ok(())
            }
        }
        Command::Census { store, blocks, sanctions } => {
            let store = open_existing(&store.store)?;
            let sanctions = match sanctions {
                Some(p) => read_sanctions(&p)?,
                None => stored_sanctions(store.dir())?.unwrap_or_default(),
            };
            let mut census = graph::ProducerCensus::default();
            for block in read_blocks::<_, Wei>(reader(&blocks)?) {
                census.observe(&block?, &store, &sanctions)?;
            }
            if ctx.json {
                output::json(ctx.out(), &census.to_json())
            } else {
                Ok(census.write_csv(ctx.writer()?)?)
            }
        }
        Command::DecodeBridge { records, registry, schemes } => decode_bridge(&ctx, &records, registry, schemes),
        Command::Synth { out_dir, seed, config, scenarios, blocks, ops_per_block, addresses } => {
            let mut cfg: GeneratorConfig = match config {
                Some(p) => serde_json::from_reader(reader(&p)?).with_context(|| format!("reading {}", p.display()))?,
                None => GeneratorConfig::default(),
            };
            cfg.blocks = blocks.unwrap_or(cfg.blocks);
            cfg.ops_per_block = ops_per_block.unwrap_or(cfg.ops_per_block);
            cfg.addresses = addresses.unwrap_or(cfg.addresses);
            for name in &scenarios {
                cfg.scenarios.push(Scenario::by_name(name).map_err(|e| usage(e.to_string()))?);
            }
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let chain = synth::generate(&cfg, seed)?;
            chain.write_dir(&out_dir)?;
            let rows = [
                ("blocks", chain.blocks.len().to_string()),
                ("ops", chain.op_count().to_string()),
                ("first_block", chain.first_block().map_or_else(String::new, |b| b.to_string())),
                ("last_block", chain.last_block().map_or_else(String::new, |b| b.to_string())),
                ("sanctioned", chain.sanctions.len().to_string()),
                ("ground_truth", chain.ground_truth.len().to_string()),
                ("seeds", chain.seeds.len().to_string()),
                ("labels", chain.labels.len().to_string()),
            ];
            summary(&ctx, &rows)
        }
        Command::Bench { synth: preset, seed, blocks, ops_per_block, addresses, store, queries, batch } => {
            if batch == 0 {
                return Err(usage("--batch must be positive"));
            }
            let mut cfg = match preset {
                Preset::Small => GeneratorConfig::perf(1_000, 50, 20_000),
                Preset::Large => GeneratorConfig::perf(10_000, 150, 1_200_000),
            };
            cfg.blocks = blocks.unwrap_or(cfg.blocks);
            cfg.ops_per_block = ops_per_block.unwrap_or(cfg.ops_per_block);
            cfg.addresses = addresses.unwrap_or(cfg.addresses);
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let chain = synth::generate(&cfg, seed)?;
            let tmp;
            let dir = match &store {
                Some(d) => d.as_path(),
                None => {
                    tmp = tempfile::tempdir()?;
                    tmp.path()
                }
            };
            let report = bench::run(&chain, dir, &BenchOptions { batch, queries, seed, sync: true })?;
            if ctx.json {
                output::json(ctx.out(), &serde_json::to_value(&report)?)
            } else {
                output::pairs(ctx.out(), &report.rows())
            }
        }
        Command::Report { store } => {
            let store = open_existing(&store.store)?;
            let stats = store.stats()?;
            let mut dist = ScoreDistribution::<Wei>::default();
            store.for_each_latest(&mut |_, r| {
                dist.add(&r);
                Ok(())
            })?;
            if ctx.json {
                let mut v = dist.to_json();
                v["last_block"] = json!(stats.last_block);
                v["first_block"] = json!(store.first_block()?);
                v["addresses"] = json!(stats.address_count);
                v["records"] = json!(stats.record_count);
                output::json(ctx.out(), &v)
            } else {
                Ok(dist.write_csv(ctx.writer()?)?)
            }
        }
    }
}

fn reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn read_addresses(path: &Path) -> Result<HashSet<Address>> {
    Ok(read_address_list(reader(path)?)?.into_iter().collect())
}

fn read_labels(path: &Path) -> Result<HashMap<Address, String>> {
    Ok(tracker::parse_labels(reader(path)?)?)
}

fn read_sanctions(path: &Path) -> Result<SanctionSet> {
    SanctionSet::parse(reader(path)?).with_context(|| format!("reading {}", path.display()))
}

fn stored_sanctions(dir: &Path) -> Result<Option<SanctionSet>> {
    let path = dir.join(SANCTIONS_FILE);
    if path.exists() {
        read_sanctions(&path).map(Some)
    } else {
        Ok(None)
    }
}

fn units(s: &str, flag: &str) -> Result<Wei> {
    Wei::parse_decimal(s).ok_or_else(|| usage(format!("{flag}: {s:?} is not a base-unit amount")))
}

fn coins(s: &str, flag: &str) -> Result<Wei> {
    parse_coins(s).ok_or_else(|| usage(format!("{flag}: {s:?} is not a coin amount")))
}

/// Opens a store that must already hold committed blocks.
fn open_existing(dir: &Path) -> Result<Store> {
    if !dir.is_dir() {
        bail!(taintledger::Error::Config(format!("no store at {}", dir.display())));
    }
    let store = Store::open(dir)?;
    if store.last_block()?.is_none() {
        bail!(taintledger::Error::Config(format!("store {} has no committed blocks", dir.display())));
    }
    Ok(store)
}

fn block_range(store: &Store, from: Option<u64>, to: Option<u64>) -> Result<(u64, u64)> {
    let first = store.first_block()?.unwrap_or(0);
    let last = store.last_block()?.unwrap_or(0);
    let (from, to) = (from.unwrap_or(first), to.unwrap_or(last));
    if from > to {
        return Err(usage(format!("empty block range {from}..{to}")));
    }
    Ok((from, to))
}

fn summary(ctx: &Ctx, rows: &[(&str, String)]) -> Result<()> {
    if ctx.json {
        let map: serde_json::Map<String, serde_json::Value> =
            rows.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
        output::json(ctx.out(), &serde_json::Value::Object(map))
    } else {
        output::pairs(ctx.out(), rows)
    }
}

fn ingest(ctx: &Ctx, dir: &Path, blocks: &Path, sanctions: Option<&Path>, batch: usize, sync: bool) -> Result<()> {
    if batch == 0 {
        return Err(usage("--batch must be positive"));
    }
    let given = sanctions.map(read_sanctions).transpose()?;
    let mut input = read_blocks::<_, Wei>(reader(blocks)?).peekable();
    let mut store = Store::open_with(dir, StoreOptions { sync, ..Default::default() })?;
    let mut ledger = store.load_ledger()?;

    // The sanction list is part of the store: later runs must use the same one.
    let sanctions = match (stored_sanctions(dir)?, given) {
        (Some(stored), Some(given)) if stored.to_text() != given.to_text() => {
            bail!(taintledger::Error::Config(format!("sanctions differ from the list stored in {}", dir.display())))
        }
        (Some(stored), _) => stored,
        (None, given) => {
            if ledger.is_some() && given.is_some() {
                bail!(taintledger::Error::Config("store was built without a sanction list".into()));
            }
            let set = given.unwrap_or_default();
            std::fs::write(dir.join(SANCTIONS_FILE), set.to_text())?;
            set
        }
    };

    let started = Instant::now();
    let (mut count, mut ops) = (0u64, 0u64);
    let mut pending = Vec::with_capacity(batch);
    while let Some(block) = input.next() {
        let block = block?;
        let state = ledger.get_or_insert_with(|| LedgerState::empty(block.number));
        if block.number < state.next_block() {
            bail!(taintledger::Error::Validation(format!(
                "block {} is already committed (store is at block {})",
                block.number,
                state.next_block() - 1
            )));
        }
        pending.push(state.apply_block(&block, &sanctions)?);
        count += 1;
        ops += block.ops.len() as u64;
        if pending.len() >= batch || input.peek().is_none() {
            store.commit_blocks(&pending)?;
            pending.clear();
        }
    }
    let secs = started.elapsed().as_secs_f64();
    eprintln!(
        "ingested {count} blocks, {ops} ops in {secs:.3}s ({:.1} blocks/s, {:.1} ops/s)",
        count as f64 / secs.max(1e-9),
        ops as f64 / secs.max(1e-9)
    );
    let stats = store.stats()?;
    summary(
        ctx,
        &[
            ("blocks", count.to_string()),
            ("ops", ops.to_string()),
            ("last_block", stats.last_block.map_or_else(String::new, |b| b.to_string())),
            ("records", stats.record_count.to_string()),
            ("addresses", stats.address_count.to_string()),
        ],
    )
}

fn emit_lookup(ctx: &Ctx, address: Address, block: u64, lookup: Lookup<Wei>) -> Result<()> {
    let (recorded_at, impurity, balance) = match lookup {
        Lookup::Recorded { block, record } => {
            (block.to_string(), record.impurity.to_string(), record.balance.to_string())
        }
        Lookup::Untouched => (String::new(), "0".into(), "unknown".into()),
    };
    let score = lookup.score().render(6);
    if ctx.json {
        return output::json(
            ctx.out(),
            &json!({
                "address": address,
                "block": block,
                "recorded_at": lookup_block(&lookup),
                "impurity": impurity,
                "balance": balance,
                "score": score,
            }),
        );
    }
    let mut w = csv::Writer::from_writer(ctx.writer()?);
    w.write_record(["address", "block", "recorded_at", "impurity", "balance", "score"])?;
    w.write_record([address.to_string(), block.to_string(), recorded_at, impurity, balance, score])?;
    w.flush()?;
    Ok(())
}

fn lookup_block(lookup: &Lookup<Wei>) -> Option<u64> {
    match lookup {
        Lookup::Recorded { block, .. } => Some(*block),
        Lookup::Untouched => None,
    }
}

fn track(
    ctx: &Ctx,
    store: &Store,
    seeds: &[(Address, u64)],
    config: &TrackConfig,
    edges_out: Option<&Path>,
    volume_out: Option<&Path>,
) -> Result<()> {
    let state = tracker::track(store, seeds, config)?;
    if let Some(p) = edges_out {
        state.write_edges_csv(output::open(Some(p))?)?;
    }
    if let Some(p) = volume_out {
        state.write_volume_csv(output::open(Some(p))?)?;
    }
    if !ctx.json {
        return Ok(state.write_flagged_csv(ctx.writer()?)?);
    }
    let flagged: Vec<_> = state
        .flagged
        .values()
        .map(|f| {
            json!({
                "address": f.address,
                "first_seen": f.first_seen,
                "entry_score": f.entry_score.render(6),
                "peak_score": f.peak_score.render(6),
                "super_account": f.super_account,
                "seed": f.seed,
            })
        })
        .collect();
    let volume: serde_json::Map<String, serde_json::Value> =
        state.impurity_volume.iter().map(|(l, v)| (l.clone(), json!(v.to_string()))).collect();
    output::json(
        ctx.out(),
        &json!({
            "threshold": config.threshold.to_string(),
            "flagged": flagged,
            "pruned": state.pruned,
            "impurity_volume": volume,
            "edges": state.edges.len(),
        }),
    )
}

/// In-memory adversary scenario: funds and setup transfers run in blocks 1 and 2,
/// then the plan executes against the classifier.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    classifier: Classifier<Wei>,
    #[serde(default)]
    sanctioned: Vec<Address>,
    #[serde(default)]
    resets: Vec<Address>,
    #[serde(default)]
    funds: Vec<Fund>,
    #[serde(default)]
    setup: Vec<SetupTransfer>,
    plan: AdversaryPlan<Wei>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Fund {
    address: Address,
    #[serde(with = "taintledger::ingest::decimal")]
    amount: Wei,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetupTransfer {
    from: Address,
    to: Address,
    #[serde(with = "taintledger::ingest::decimal")]
    amount: Wei,
}

fn rules_cmd(ctx: &Ctx, args: RulesArgs) -> Result<()> {
    if let Some(path) = &args.scenario {
        let file: ScenarioFile =
            serde_json::from_reader(reader(path)?).with_context(|| format!("reading {}", path.display()))?;
        return run_scenario(ctx, file);
    }
    let classifier = args.classifier.ok_or_else(|| usage("rules needs --classifier or --scenario"))?;
    classifier.validate().map_err(|e| usage(e.to_string()))?;
    let dir = args.store.ok_or_else(|| usage("rules needs --store (or TAINTLEDGER_STORE)"))?;
    let mut targets: BTreeSet<Address> = args.address.into_iter().collect();
    if let Some(p) = &args.addresses {
        targets.extend(read_addresses(p)?);
    }
    let store = open_existing(&dir)?;
    let sanctions = match &args.sanctions {
        Some(p) => read_sanctions(p)?,
        None => stored_sanctions(&dir)?.unwrap_or_default(),
    };
    let resets = args.resets.as_deref().map(read_addresses).transpose()?.unwrap_or_default();
    let rule_ctx = RuleContext { sanctions, resets };
    let block = match args.block {
        Some(b) => b,
        None => store.last_block()?.ok_or_else(|| anyhow!("store has no committed blocks"))?,
    };
    if targets.is_empty() {
        targets.extend(store.addresses()?);
    }
    let sweep = Sweep::new(classifier, &rule_ctx, &store, block)?;
    let mut rows = Vec::with_capacity(targets.len());
    for a in &targets {
        let record = store.query_at(a, block)?.record_or_zero();
        rows.push((*a, sweep.verdict(a)?, record));
    }
    if ctx.json {
        let list: Vec<_> = rows
            .iter()
            .map(|(a, v, r)| {
                json!({
                    "address": a,
                    "verdict": v,
                    "impurity": r.impurity.to_string(),
                    "balance": r.balance.to_string(),
                    "score": r.score().render(6),
                })
            })
            .collect();
        return output::json(
            ctx.out(),
            &json!({ "classifier": classifier.to_string(), "block": block, "addresses": list }),
        );
    }
    let mut w = csv::Writer::from_writer(ctx.writer()?);
    w.write_record(["address", "verdict", "impurity", "balance", "score"])?;
    for (a, v, r) in &rows {
        w.write_record([
            a.to_string(),
            v.to_string(),
            r.impurity.to_string(),
            r.balance.to_string(),
            r.score().render(6),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn run_scenario(ctx: &Ctx, file: ScenarioFile) -> Result<()> {
    file.classifier.validate().map_err(|e| usage(e.to_string()))?;
    let sanctions = file.sanctioned.iter().fold(SanctionSet::new(), |s, a| s.with(*a, 1));
    let mut sandbox = Sandbox::new(RuleContext { sanctions, resets: file.resets.into_iter().collect() });
    let funds: Vec<(Address, Wei)> = file.funds.iter().map(|f| (f.address, f.amount)).collect();
    sandbox.fund(&funds)?;
    if !file.setup.is_empty() {
        sandbox.execute(file.setup.iter().map(|t| taintledger::Op::transfer(t.from, t.to, t.amount)).collect())?;
    }
    let report = rules::run_adversary(&file.plan, file.classifier, &mut sandbox)?;
    if ctx.json {
        let mut v = report.to_json();
        v["flipped"] = json!(report.flipped());
        return output::json(ctx.out(), &v);
    }
    summary(
        ctx,
        &[
            ("strategy", report.strategy.to_string()),
            ("classifier", report.classifier.to_string()),
            ("budget", report.budget.to_string()),
            ("tainted", report.tainted.to_string()),
            ("v_tainted", report.v_tainted.to_string()),
            ("v_entire", report.v_entire.to_string()),
            ("amplification", format!("{:.6}", report.amplification)),
            ("subject", report.subject.to_string()),
            ("subject_before", report.subject_before.to_string()),
            ("subject_after", report.subject_after.to_string()),
            ("flipped", report.flipped().to_string()),
        ],
    )
}

fn amplify(ctx: &Ctx, config: &AmplificationConfig<Wei>) -> Result<()> {
    let rows = rules::amplification_study(config)?;
    if !ctx.json {
        return Ok(rules::write_amplification_csv(ctx.writer()?, &rows)?);
    }
    let list: Vec<_> = rows
        .iter()
        .map(|r| {
            json!({
                "targets": r.targets,
                "budget": r.budget.to_string(),
                "binary_tainted": r.binary_tainted,
                "v_tainted": r.v_tainted.to_string(),
                "amplification": r.amplification,
                "max_target_score": r.max_target_score.render(6),
                "over_threshold": r.over_threshold,
            })
        })
        .collect();
    output::json(ctx.out(), &json!(list))
}

fn decode_bridge(ctx: &Ctx, records: &Path, registry: Option<PathBuf>, schemes: Option<PathBuf>) -> Result<()> {
    let mut reg = BridgeRegistry::builtin();
    if let Some(p) = registry {
        let extra = ChainIdRegistry::parse(reader(&p)?).with_context(|| format!("reading {}", p.display()))?;
        reg.chains.merge(&extra)?;
    }
    if let Some(p) = schemes {
        let extra: Vec<SchemeDescriptor> =
            serde_json::from_reader(reader(&p)?).with_context(|| format!("reading {}", p.display()))?;
        reg.register_all(extra)?;
    }
    let records = bridge::read_records::<_, Wei>(reader(records)?)?;
    let mut rows = Vec::with_capacity(records.len());
    for (i, rec) in records.into_iter().enumerate() {
        let decoded = reg.decode(&rec).with_context(|| format!("record {}", i + 1))?;
        rows.push((rec, decoded));
    }
    if !ctx.json {
        return Ok(bridge::write_decoded_csv(ctx.writer()?, &rows)?);
    }
    let list: Vec<_> = rows
        .iter()
        .map(|(rec, d)| {
            json!({
                "bridge": rec.bridge,
                "height": rec.height,
                "via": d.via,
                "destination": d.destination.to_string(),
                "recipient": d.recipient,
                "amount": d.amount.to_string(),
            })
        })
        .collect();
    output::json(ctx.out(), &json!(list))
}
