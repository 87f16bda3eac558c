use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use taintledger::rules::Classifier;
use taintledger::{Address, Threshold, Wei};

mod commands;
mod output;

#[derive(Parser)]
#[command(name = "taintledger", version, about = "Proportional taint tracking over account-model ledgers")]
struct Cli {
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Emit JSON instead of CSV.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StoreArg {
    /// Store directory.
    #[arg(long, env = "TAINTLEDGER_STORE")]
    store: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a block file to the store.
    Ingest {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        blocks: PathBuf,
        /// `address active_from [active_until]` per line. Kept in the store for later runs.
        #[arg(long)]
        sanctions: Option<PathBuf>,
        /// Blocks per store transaction.
        #[arg(long, default_value_t = 256)]
        batch: usize,
        /// Skip fsync on commit.
        #[arg(long)]
        no_sync: bool,
    },
    /// Latest record of an address.
    QueryLatest {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        address: Address,
    },
    /// Record of an address as of a block.
    QueryAt {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        address: Address,
        #[arg(long)]
        block: u64,
    },
    /// Follow funds forward from seed addresses.
    Track {
        #[command(flatten)]
        store: StoreArg,
        /// `address height` per line.
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long, default_value = "5%")]
        threshold: Threshold,
        /// Addresses beyond which funds are not followed.
        #[arg(long)]
        prune: Option<PathBuf>,
        /// `address,label` CSV of services.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = taintledger::tracker::DEFAULT_SUPER_ACCOUNT_FLOOR)]
        super_floor: u64,
        #[arg(long)]
        edges_out: Option<PathBuf>,
        #[arg(long)]
        volume_out: Option<PathBuf>,
    },
    /// Precision and recall of tracking over a threshold grid.
    Sweep {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Ascending thresholds, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0.5%,1%,1.5%,2%,2.5%,2.6%,3%,3.5%,4%,4.5%,5%")]
        grid: Vec<Threshold>,
        #[arg(long)]
        prune: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Classify addresses with a rule, or run an adversary scenario file.
    Rules(RulesArgs),
    /// Binary-rule coverage bought by dusting a fixed population.
    Amplify {
        #[arg(long, default_value_t = 1000)]
        population: usize,
        /// Balance of each population member, in base units.
        #[arg(long, default_value = "1000000")]
        balance: String,
        /// Dust per target, in base units.
        #[arg(long, default_value = "1")]
        per_target: String,
        #[arg(long, value_delimiter = ',', default_value = "0,125,250,500,1000")]
        steps: Vec<usize>,
        #[arg(long, default_value = "5%")]
        threshold: Threshold,
    },
    /// Connected triad census of the transfer graph.
    Motifs {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
        /// Keep only transfers touching these addresses.
        #[arg(long)]
        focus: Option<PathBuf>,
    },
    /// Depositors that probe a service with a small deposit before a large one.
    TestDeposits {
        #[command(flatten)]
        store: StoreArg,
        /// `address,label` CSV of services.
        #[arg(long)]
        labels: PathBuf,
        /// Coins.
        #[arg(long, default_value = "0.5")]
        small_cap: String,
        /// Coins.
        #[arg(long, default_value = "5")]
        large_floor: String,
        #[arg(long, default_value_t = 50_000)]
        max_gap: u64,
    },
    /// Per-producer counts of blocks with sanctioned or high-score senders.
    Census {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        blocks: PathBuf,
        #[arg(long)]
        sanctions: Option<PathBuf>,
    },
    /// Decode bridge-transfer records.
    DecodeBridge {
        /// One JSON record per line.
        #[arg(long)]
        records: PathBuf,
        /// Extra `convention raw_id canonical_id` lines.
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Extra scheme descriptors (JSON array).
        #[arg(long)]
        schemes: Option<PathBuf>,
    },
    /// Generate a synthetic chain with scenario ground truth.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generator settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// dusting, split-and-merge, test-deposits, exploit or censorship.
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        #[arg(long)]
        blocks: Option<u64>,
        #[arg(long)]
        ops_per_block: Option<u32>,
        #[arg(long)]
        addresses: Option<u64>,
    },
    /// Ingest and query throughput on a generated chain.
    Bench {
        #[arg(long, value_enum, default_value_t = Preset::Small)]
        synth: Preset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        blocks: Option<u64>,
        #[arg(long)]
        ops_per_block: Option<u32>,
        #[arg(long)]
        addresses: Option<u64>,
        /// Store directory; a temporary one by default.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        queries: usize,
        #[arg(long, default_value_t = 250)]
        batch: usize,
    },
    /// Store summary and the distribution of latest scores.
    Report {
        #[command(flatten)]
        store: StoreArg,
    },
}

#[derive(Args)]
struct RulesArgs {
    /// Adversary scenario (JSON); runs in memory and needs no store.
    #[arg(long, conflicts_with_all = ["classifier", "address", "addresses"])]
    scenario: Option<PathBuf>,
    #[arg(long, env = "TAINTLEDGER_STORE")]
    store: Option<PathBuf>,
    /// binary, time:<blocks>, hop:<n>, value:<units>[:scope], percent:<pct>[:scope].
    #[arg(long)]
    classifier: Option<Classifier<Wei>>,
    #[arg(long)]
    address: Vec<Address>,
    /// One address per line.
    #[arg(long)]
    addresses: Option<PathBuf>,
    /// Defaults to the last committed block.
    #[arg(long)]
    block: Option<u64>,
    #[arg(long)]
    sanctions: Option<PathBuf>,
    /// Services that do not carry taint forward, one per line.
    #[arg(long)]
    resets: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Small,
    Large,
}

/// A flag combination that parsed but makes no sense; exits like a parse error.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    use taintledger::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::InvalidChainData(_)) => "invalid-chain-data",
        Some(E::StreamOrder { .. }) => "stream-order",
        Some(E::Parse { .. }) => "parse",
        Some(E::Validation(_)) => "validation",
        Some(E::StoreClosed) => "store-closed",
        Some(E::FutureBlock { .. }) => "future-block",
        Some(E::SeedNotFound(_)) => "seed-not-found",
        Some(E::Config(_)) => "config",
        Some(E::UnsupportedScheme(_)) => "unsupported-scheme",
        Some(E::Payload(_)) => "payload",
        Some(E::Descriptor(_)) => "descriptor",
        Some(E::Storage(_)) => "storage",
        Some(E::Io(_)) => "io",
        Some(E::Csv(_)) => "csv",
        Some(E::Json(_)) => "json",
        None if err.downcast_ref::<std::io::Error>().is_some() => "io",
        None => "data",
    }
}

/// Output piped into a reader that closed early, e.g. `| head`.
fn is_broken_pipe(err: &anyhow::Error) -> bool {
    use std::io::ErrorKind::BrokenPipe;
    let csv_pipe = |c: &csv::Error| matches!(c.kind(), csv::ErrorKind::Io(io) if io.kind() == BrokenPipe);
    err.chain().any(|e| {
        e.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == BrokenPipe)
            || e.downcast_ref::<csv::Error>().is_some_and(csv_pipe)
            || match e.downcast_ref::<taintledger::Error>() {
                Some(taintledger::Error::Io(io)) => io.kind() == BrokenPipe,
                Some(taintledger::Error::Csv(c)) => csv_pipe(c),
                _ => false,
            }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if is_broken_pipe(&err) => ExitCode::SUCCESS,
        Err(err) if err.downcast_ref::<Usage>().is_some() => {
            eprintln!("error: usage: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            let chain: Vec<String> = err.chain().map(|e| e.to_string().replace('\n', " ")).collect();
            eprintln!("error: {}: {}", error_kind(&err), chain.join(": "));
            ExitCode::from(1)
        }
    }
}
