//! Proportional taint tracking for account-model ledgers.
//!
//! The core types are generic over the integer [`Amount`] width. The aliases
//! at the crate root fix it to 256-bit base units, which is what file-backed
//! chains and the command line use.

pub mod address;
pub mod amount;
pub mod bench;
pub mod bridge;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod ledger;
pub mod report;
pub mod rules;
pub mod sanctions;
pub mod score;
pub mod store;
pub mod synth;
pub mod tracker;
pub mod view;

pub use address::Address;
pub use amount::Amount;
pub use error::{Error, Result};
pub use ledger::{BalanceOp, Block, DeltaSet, FlowRecord, ImpurityRecord, LedgerOptions, LedgerState, OpKind};
pub use ruint::aliases::U256;
pub use sanctions::SanctionSet;
pub use score::{Score, Threshold};
pub use store::{HistoryStore, StoreOptions, StoreStats};
pub use view::{HistoryView, Lookup, MemoryHistory};

/// Base-unit amount used by file-backed chains (1 coin = 10^18 units).
pub type Wei = U256;
pub type Record = ImpurityRecord<Wei>;
pub type Op = BalanceOp<Wei>;
pub type WeiBlock = Block<Wei>;
pub type Ledger = LedgerState<Wei>;
pub type Deltas = DeltaSet<Wei>;
pub type Store = HistoryStore<Wei>;
