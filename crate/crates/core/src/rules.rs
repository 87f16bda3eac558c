//! Rule-based taint classifiers and scripted adversaries against them.
//!
//! Every classifier is evaluated over the transfer history up to a block and
//! treats active sanctioned addresses as tainted. Addresses in the reset set
//! stand for services that do not carry taint forward: they are never tainted
//! and never pass taint on.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::address::Address;
use crate::amount::Amount;
use crate::error::{Error, Result};
use crate::ledger::{BalanceOp, Block, FlowRecord, LedgerState, OpKind};
use crate::sanctions::SanctionSet;
use crate::score::{Score, Threshold};
use crate::view::{HistoryView, MemoryHistory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scope {
    TargetOnly,
    PlusTransactions,
    PlusSources,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::TargetOnly, Scope::PlusTransactions, Scope::PlusSources];

    fn name(self) -> &'static str {
        match self {
            Scope::TargetOnly => "target",
            Scope::PlusTransactions => "transactions",
            Scope::PlusSources => "sources",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scope::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scope {s:?} (target, transactions, sources)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classifier<A> {
    Binary,
    /// Taint from a transfer lasts this many blocks, counting the receiving block.
    TimeBased {
        blocks: u64,
    },
    /// Tainted within this many hops of a sanctioned address.
    HopBased {
        hops: u32,
    },
    /// Tainted impurity above `theta` base units, widened by scope.
    ValueThreshold {
        theta: A,
        scope: Scope,
    },
    PercentageThreshold {
        theta: Threshold,
        scope: Scope,
    },
}

impl<A: Amount> Classifier<A> {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Classifier::Binary => true,
            Classifier::TimeBased { blocks } => *blocks > 0,
            Classifier::HopBased { hops } => *hops > 0,
            Classifier::ValueThreshold { theta, .. } => !theta.is_zero(),
            Classifier::PercentageThreshold { theta, .. } => *theta > Threshold::ZERO,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("classifier {self} needs a positive parameter")))
        }
    }
}

impl<A: Amount> fmt::Display for Classifier<A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classifier::Binary => write!(f, "binary"),
            Classifier::TimeBased { blocks } => write!(f, "time:{blocks}"),
            Classifier::HopBased { hops } => write!(f, "hop:{hops}"),
            Classifier::ValueThreshold { theta, scope } => write!(f, "value:{theta}:{scope}"),
            Classifier::PercentageThreshold { theta, scope } => {
                write!(f, "percent:{theta}:{scope}")
            }
        }
    }
}

impl<A: Amount> FromStr for Classifier<A> {
    type Err = Error;

    /// `binary`, `time:<blocks>`, `hop:<hops>`, `value:<units>[:scope]` or
    /// `percent:<threshold>[:scope]`; the scope defaults to `target`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Config(format!("classifier {s:?}: {why}"));
        let mut parts = s.trim().split(':');
        let kind = parts.next().unwrap_or_default();
        let param = parts.next();
        let scope = parts.next().map(str::parse).transpose()?.unwrap_or(Scope::TargetOnly);
        if parts.next().is_some() {
            return Err(bad("too many fields"));
        }
        let need = || param.ok_or_else(|| bad("missing parameter"));
        let c = match kind {
            "binary" if param.is_none() => Classifier::Binary,
            "time" => Classifier::TimeBased { blocks: need()?.parse().map_err(|_| bad("bad block count"))? },
            "hop" => Classifier::HopBased { hops: need()?.parse().map_err(|_| bad("bad hop count"))? },
            "value" => {
                Classifier::ValueThreshold { theta: A::parse_decimal(need()?).ok_or_else(|| bad("bad amount"))?, scope }
            }
            "percent" => Classifier::PercentageThreshold { theta: need()?.parse()?, scope },
            _ => return Err(bad("unknown kind")),
        };
        c.validate()?;
        Ok(c)
    }
}

impl<A: Amount> Serialize for Classifier<A> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de, A: Amount> Deserialize<'de> for Classifier<A> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Clean,
    Tainted,
}

impl Verdict {
    fn of(tainted: bool) -> Self {
        if tainted {
            Verdict::Tainted
        } else {
            Verdict::Clean
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Clean => "clean",
            Verdict::Tainted => "tainted",
        })
    }
}

/// Sanctioned sources and taint-resetting services shared by every classifier.
#[derive(Clone, Debug, Default)]
pub struct RuleContext {
    pub sanctions: SanctionSet,
    pub resets: HashSet<Address>,
}

#[derive(Clone, Copy, Debug)]
struct HopEntry {
    hops: u32,
    block: u64,
    via: Address,
}

#[derive(Clone, Copy, Debug, Default)]
struct Inbound<A> {
    max_carried: A,
    max_source_impurity: A,
    from_impure: A,
    from_high_score: A,
}

enum Propagation<A> {
    Binary(HashSet<Address>),
    Time(HashMap<Address, u64>),
    Hop(HashMap<Address, HopEntry>),
    Inbound(HashMap<Address, Inbound<A>>),
}

/// Classifier state after replaying transfers up to one block.
pub struct Sweep<'a, A, V: ?Sized> {
    classifier: Classifier<A>,
    ctx: &'a RuleContext,
    view: &'a V,
    block: u64,
    state: Propagation<A>,
}

impl<'a, A: Amount, V: HistoryView<A> + ?Sized> Sweep<'a, A, V> {
    pub fn new(classifier: Classifier<A>, ctx: &'a RuleContext, view: &'a V, block: u64) -> Result<Self> {
        classifier.validate()?;
        // query_at rejects heights beyond the history
        view.query_at(&Address::ZERO, block)?;
        let mut flows: Vec<FlowRecord<A>> = Vec::new();
        view.for_each_flow(0, block, &mut |f| {
            if f.kind == OpKind::Transfer && f.from != f.to {
                flows.push(*f);
            }
            Ok(())
        })?;
        let sanctioned = |a: &Address, b: u64| ctx.sanctions.is_sanctioned(a, b);
        let state = match classifier {
            Classifier::Binary => {
                let mut tainted = HashSet::new();
                for f in &flows {
                    if (sanctioned(&f.from, f.block) || tainted.contains(&f.from)) && !ctx.resets.contains(&f.to) {
                        tainted.insert(f.to);
                    }
                }
                Propagation::Binary(tainted)
            }
            Classifier::TimeBased { blocks } => {
                let mut until: HashMap<Address, u64> = HashMap::new();
                for f in &flows {
                    let live = sanctioned(&f.from, f.block) || until.get(&f.from).is_some_and(|u| *u > f.block);
                    if live && !ctx.resets.contains(&f.to) {
                        let u = until.entry(f.to).or_default();
                        *u = (*u).max(f.block.saturating_add(blocks));
                    }
                }
                Propagation::Time(until)
            }
            Classifier::HopBased { .. } => {
                let mut hops: HashMap<Address, HopEntry> = HashMap::new();
                for f in &flows {
                    if ctx.resets.contains(&f.to) || sanctioned(&f.to, f.block) {
                        continue;
                    }
                    let sender = if sanctioned(&f.from, f.block) { Some(0) } else { hops.get(&f.from).map(|e| e.hops) };
                    let Some(sender) = sender else { continue };
                    let entry = HopEntry { hops: sender.saturating_add(1), block: f.block, via: f.from };
                    match hops.get(&f.to) {
                        None => {
                            hops.insert(f.to, entry);
                        }
                        Some(e) if e.block == f.block && f.from < e.via => {
                            hops.insert(f.to, entry);
                        }
                        Some(_) => {}
                    }
                }
                Propagation::Hop(hops)
            }
            Classifier::ValueThreshold { .. } | Classifier::PercentageThreshold { .. } => {
                let theta = match classifier {
                    Classifier::PercentageThreshold { theta, .. } => Some(theta),
                    _ => None,
                };
                let mut inbound: HashMap<Address, Inbound<A>> = HashMap::new();
                for f in &flows {
                    let e = inbound.entry(f.to).or_default();
                    e.max_carried = e.max_carried.max(f.carried);
                    e.max_source_impurity = e.max_source_impurity.max(f.sender_pre.impurity);
                    if !f.sender_pre.impurity.is_zero() {
                        e.from_impure = e.from_impure.saturating_add(f.amount);
                    }
                    if theta.is_some_and(|t| f.sender_pre.score().exceeds(t)) {
                        e.from_high_score = e.from_high_score.saturating_add(f.amount);
                    }
                }
                Propagation::Inbound(inbound)
            }
        };
        Ok(Sweep { classifier, ctx, view, block, state })
    }

    pub fn block(&self) -> u64 {
        self.block
    }

    pub fn is_tainted(&self, address: &Address) -> Result<bool> {
        if self.ctx.sanctions.is_sanctioned(address, self.block) {
            return Ok(true);
        }
        if self.ctx.resets.contains(address) {
            return Ok(false);
        }
        Ok(match (&self.state, self.classifier) {
            (Propagation::Binary(set), _) => set.contains(address),
            (Propagation::Time(until), _) => until.get(address).is_some_and(|u| *u > self.block),
            (Propagation::Hop(hops), Classifier::HopBased { hops: limit }) => {
                hops.get(address).is_some_and(|e| e.hops <= limit)
            }
            (Propagation::Inbound(inbound), Classifier::ValueThreshold { theta, scope }) => {
                let rec = self.view.query_at(address, self.block)?.record_or_zero();
                let i = inbound.get(address).copied().unwrap_or_default();
                rec.impurity > theta
                    || (scope != Scope::TargetOnly && i.max_carried > theta)
                    || (scope == Scope::PlusSources && i.max_source_impurity > theta)
            }
            (Propagation::Inbound(inbound), Classifier::PercentageThreshold { theta, scope }) => {
                let rec = self.view.query_at(address, self.block)?.record_or_zero();
                let i = inbound.get(address).copied().unwrap_or_default();
                rec.score().exceeds(theta)
                    || (scope != Scope::TargetOnly && Score::new(i.from_impure, rec.balance).exceeds(theta))
                    || (scope == Scope::PlusSources && Score::new(i.from_high_score, rec.balance).exceeds(theta))
            }
            _ => unreachable!("propagation state always matches its classifier"),
        })
    }

    pub fn verdict(&self, address: &Address) -> Result<Verdict> {
        self.is_tainted(address).map(Verdict::of)
    }

    /// Every tainted address with a recorded history.
    pub fn tainted_set(&self) -> Result<BTreeSet<Address>> {
        let mut out = BTreeSet::new();
        for a in self.view.addresses()? {
            if self.is_tainted(&a)? {
                out.insert(a);
            }
        }
        Ok(out)
    }

    /// Tainted-set size and the balance it holds.
    pub fn coverage(&self) -> Result<Coverage<A>> {
        let mut cov = Coverage { tainted: 0, v_tainted: A::zero(), v_entire: A::zero() };
        for a in self.view.addresses()? {
            let balance = self.view.query_at(&a, self.block)?.record_or_zero().balance;
            cov.v_entire = cov.v_entire.saturating_add(balance);
            if self.is_tainted(&a)? {
                cov.tainted += 1;
                cov.v_tainted = cov.v_tainted.saturating_add(balance);
            }
        }
        Ok(cov)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coverage<A> {
    pub tainted: usize,
    pub v_tainted: A,
    pub v_entire: A,
}

pub fn classify<A: Amount, V: HistoryView<A> + ?Sized>(
    classifier: Classifier<A>,
    ctx: &RuleContext,
    view: &V,
    address: &Address,
    block: u64,
) -> Result<Verdict> {
    Sweep::new(classifier, ctx, view, block)?.verdict(address)
}

/// An in-memory chain that adversary plans append blocks to.
pub struct Sandbox<A> {
    ledger: LedgerState<A>,
    history: MemoryHistory<A>,
    ctx: RuleContext,
    producer: Address,
    fresh: u64,
}

const FRESH_TAG: u32 = 0x5a4e_0001;
pub const BURN_ADDRESS: Address = Address([0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xde, 0xad]);

impl<A: Amount> Sandbox<A> {
    pub fn new(ctx: RuleContext) -> Self {
        Sandbox {
            ledger: LedgerState::empty(1),
            history: MemoryHistory::new(),
            ctx,
            producer: Address::tagged(FRESH_TAG, u64::MAX),
            fresh: 0,
        }
    }

    pub fn context(&self) -> &RuleContext {
        &self.ctx
    }

    pub fn history(&self) -> &MemoryHistory<A> {
        &self.history
    }

    pub fn ledger(&self) -> &LedgerState<A> {
        &self.ledger
    }

    /// Last executed block; 0 before anything ran.
    pub fn last_block(&self) -> u64 {
        self.ledger.next_block() - 1
    }

    pub fn fresh_address(&mut self) -> Address {
        self.fresh += 1;
        Address::tagged(FRESH_TAG, self.fresh)
    }

    /// Executes `ops` as the next block and returns its number.
    pub fn execute(&mut self, ops: Vec<BalanceOp<A>>) -> Result<u64> {
        let block = Block { number: self.ledger.next_block(), producer: self.producer, ops };
        let deltas = self.ledger.apply_block(&block, &self.ctx.sanctions)?;
        self.history.commit(&deltas)?;
        Ok(block.number)
    }

    /// Mints clean funds in one block.
    pub fn fund(&mut self, funds: &[(Address, A)]) -> Result<u64> {
        self.execute(funds.iter().map(|(a, v)| BalanceOp::reward(*a, *v)).collect())
    }

    pub fn advance(&mut self, blocks: u64) -> Result<()> {
        for _ in 0..blocks {
            self.execute(Vec::new())?;
        }
        Ok(())
    }

    pub fn sweep(&self, classifier: Classifier<A>) -> Result<Sweep<'_, A, MemoryHistory<A>>> {
        Sweep::new(classifier, &self.ctx, &self.history, self.last_block())
    }

    pub fn verdict(&self, classifier: Classifier<A>, address: &Address) -> Result<Verdict> {
        self.sweep(classifier)?.verdict(address)
    }

    pub fn balance(&self, address: &Address) -> A {
        self.ledger.record_or_zero(address).balance
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "A: Amount", deny_unknown_fields)]
pub enum Strategy<A> {
    /// One transfer of `per_target` to each target.
    Dust {
        #[serde(with = "crate::ingest::decimal")]
        per_target: A,
        targets: Vec<Address>,
    },
    /// Re-sends `amount` to the target every `period` blocks.
    Refresh {
        target: Address,
        #[serde(with = "crate::ingest::decimal")]
        amount: A,
        period: u64,
        rounds: u32,
    },
    OneHopDirect {
        target: Address,
        #[serde(with = "crate::ingest::decimal")]
        amount: A,
    },
    /// Sends `total` in transfers of at most `theta` each.
    SplitBelowValue {
        target: Address,
        #[serde(with = "crate::ingest::decimal")]
        total: A,
        #[serde(with = "crate::ingest::decimal")]
        theta: A,
    },
    /// Funds `count` fresh helpers with tainted and clean amounts, then each
    /// helper forwards its whole balance to the target.
    PreparedSources {
        target: Address,
        count: u32,
        #[serde(with = "crate::ingest::decimal")]
        tainted_each: A,
        #[serde(with = "crate::ingest::decimal")]
        clean_each: A,
    },
    /// The holder receives clean funds.
    BalanceDilute {
        #[serde(with = "crate::ingest::decimal")]
        clean: A,
    },
    WaitOut {
        blocks: u64,
    },
    /// Sends just enough to the burn address to bring impurity down to `theta`.
    BurnExcess {
        #[serde(with = "crate::ingest::decimal")]
        theta: A,
    },
    /// Moves the whole balance through `len` fresh addresses, one block per hop.
    HopChain {
        len: u32,
    },
    /// Moves the whole balance into a service, which pays it out to a fresh address.
    RouteViaService {
        service: Address,
    },
}

impl<A> Strategy<A> {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Dust { .. } => "dust",
            Strategy::Refresh { .. } => "refresh",
            Strategy::OneHopDirect { .. } => "one_hop_direct",
            Strategy::SplitBelowValue { .. } => "split_below_value",
            Strategy::PreparedSources { .. } => "prepared_sources",
            Strategy::BalanceDilute { .. } => "balance_dilute",
            Strategy::WaitOut { .. } => "wait_out",
            Strategy::BurnExcess { .. } => "burn_excess",
            Strategy::HopChain { .. } => "hop_chain",
            Strategy::RouteViaService { .. } => "route_via_service",
        }
    }
}

/// A strategy run from `source`. Attacks spend the source's funds on a
/// target; evasions act on the source's own holdings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(bound = "A: Amount", deny_unknown_fields)]
pub struct AdversaryPlan<A> {
    pub source: Address,
    pub strategy: Strategy<A>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetScore<A> {
    pub address: Address,
    pub impurity: A,
    pub balance: A,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackReport<A> {
    pub strategy: &'static str,
    pub classifier: Classifier<A>,
    /// Value the plan moved out of the source plus clean funds it minted.
    pub budget: A,
    pub tainted: usize,
    pub v_tainted: A,
    pub v_entire: A,
    pub amplification: f64,
    /// The target for attacks, the final holder of the funds for evasions.
    pub subject: Address,
    pub subject_before: Verdict,
    pub subject_after: Verdict,
    pub targets: Vec<TargetScore<A>>,
}

impl<A: Amount> AttackReport<A> {
    pub fn flipped(&self) -> bool {
        self.subject_before != self.subject_after
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["address", "impurity", "balance", "score", "verdict"])?;
        for t in &self.targets {
            w.write_record([
                t.address.to_string(),
                t.impurity.to_string(),
                t.balance.to_string(),
                Score::new(t.impurity, t.balance).render(6),
                t.verdict.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "strategy": self.strategy,
            "classifier": self.classifier.to_string(),
            "budget": self.budget.to_string(),
            "tainted": self.tainted,
            "v_tainted": self.v_tainted.to_string(),
            "v_entire": self.v_entire.to_string(),
            "amplification": self.amplification,
            "subject": self.subject.to_string(),
            "subject_before": self.subject_before,
            "subject_after": self.subject_after,
            "targets": self.targets.iter().map(|t| serde_json::json!({
                "address": t.address.to_string(),
                "impurity": t.impurity.to_string(),
                "balance": t.balance.to_string(),
                "score": Score::new(t.impurity, t.balance).render(6),
                "verdict": t.verdict,
            })).collect::<Vec<_>>(),
        })
    }
}

fn ratio_f64<A: Amount>(num: A, den: A) -> f64 {
    if den.is_zero() {
        0.0
    } else {
        num.to_f64_lossy() / den.to_f64_lossy()
    }
}

/// Executes `plan` on the sandbox and reports the classifier's view before and after.
pub fn run_adversary<A: Amount>(
    plan: &AdversaryPlan<A>,
    classifier: Classifier<A>,
    sandbox: &mut Sandbox<A>,
) -> Result<AttackReport<A>> {
    classifier.validate()?;
    let src = plan.source;
    let initial_subject = match &plan.strategy {
        Strategy::Dust { targets, .. } => *targets.first().ok_or_else(|| Error::Config("dust needs targets".into()))?,
        Strategy::Refresh { target, .. }
        | Strategy::OneHopDirect { target, .. }
        | Strategy::SplitBelowValue { target, .. }
        | Strategy::PreparedSources { target, .. } => *target,
        _ => src,
    };
    let before =
        if sandbox.last_block() == 0 { Verdict::Clean } else { sandbox.verdict(classifier, &initial_subject)? };

    let mut budget = A::zero();
    let mut subject = initial_subject;
    let mut targets = vec![initial_subject];
    match &plan.strategy {
        Strategy::Dust { per_target, targets: t } => {
            targets = t.clone();
            sandbox.execute(t.iter().map(|a| BalanceOp::transfer(src, *a, *per_target)).collect())?;
            budget = *per_target * A::from_units(t.len() as u64);
        }
        Strategy::Refresh { target, amount, period, rounds } => {
            if *period == 0 || *rounds == 0 {
                return Err(Error::Config("refresh needs a positive period and round count".into()));
            }
            for r in 0..*rounds {
                if r > 0 {
                    sandbox.advance(period - 1)?;
                }
                sandbox.execute(vec![BalanceOp::transfer(src, *target, *amount)])?;
                budget = budget + *amount;
            }
        }
        Strategy::OneHopDirect { target, amount } => {
            sandbox.execute(vec![BalanceOp::transfer(src, *target, *amount)])?;
            budget = *amount;
        }
        Strategy::SplitBelowValue { target, total, theta } => {
            if theta.is_zero() {
                return Err(Error::Config("split size must be positive".into()));
            }
            let mut ops = Vec::new();
            let mut left = *total;
            while !left.is_zero() {
                let chunk = left.min(*theta);
                ops.push(BalanceOp::transfer(src, *target, chunk));
                left = left - chunk;
            }
            sandbox.execute(ops)?;
            budget = *total;
        }
        Strategy::PreparedSources { target, count, tainted_each, clean_each } => {
            let helpers: Vec<Address> = (0..*count).map(|_| sandbox.fresh_address()).collect();
            let mut ops = Vec::new();
            for h in &helpers {
                if !tainted_each.is_zero() {
                    ops.push(BalanceOp::transfer(src, *h, *tainted_each));
                }
                if !clean_each.is_zero() {
                    ops.push(BalanceOp::reward(*h, *clean_each));
                }
            }
            sandbox.execute(ops)?;
            let each = *tainted_each + *clean_each;
            sandbox.execute(helpers.iter().map(|h| BalanceOp::transfer(*h, *target, each)).collect())?;
            budget = each * A::from_units(u64::from(*count));
        }
        Strategy::BalanceDilute { clean } => {
            sandbox.execute(vec![BalanceOp::reward(src, *clean)])?;
            budget = *clean;
        }
        Strategy::WaitOut { blocks } => sandbox.advance(*blocks)?,
        Strategy::BurnExcess { theta } => {
            let rec = sandbox.ledger().record_or_zero(&src);
            if rec.impurity > *theta {
                // smallest s with ceil(s * I / B) >= I - theta
                let burn = (rec.impurity - *theta).mul_div_ceil(rec.balance, rec.impurity);
                sandbox.execute(vec![BalanceOp::transfer(src, BURN_ADDRESS, burn)])?;
                budget = burn;
            }
        }
        Strategy::HopChain { len } => {
            let mut holder = src;
            for _ in 0..*len {
                let next = sandbox.fresh_address();
                let all = sandbox.balance(&holder);
                sandbox.execute(vec![BalanceOp::transfer(holder, next, all)])?;
                if holder == src {
                    budget = all;
                }
                holder = next;
            }
            subject = holder;
            targets = vec![holder];
        }
        Strategy::RouteViaService { service } => {
            let out = sandbox.fresh_address();
            let all = sandbox.balance(&src);
            sandbox.execute(vec![BalanceOp::transfer(src, *service, all)])?;
            sandbox.execute(vec![BalanceOp::transfer(*service, out, all)])?;
            budget = all;
            subject = out;
            targets = vec![out];
        }
    }

    let sweep = sandbox.sweep(classifier)?;
    let cov = sweep.coverage()?;
    let mut scores = Vec::with_capacity(targets.len());
    for t in &targets {
        let rec = sandbox.ledger().record_or_zero(t);
        scores.push(TargetScore {
            address: *t,
            impurity: rec.impurity,
            balance: rec.balance,
            verdict: sweep.verdict(t)?,
        });
    }
    Ok(AttackReport {
        strategy: plan.strategy.name(),
        classifier,
        budget,
        tainted: cov.tainted,
        v_tainted: cov.v_tainted,
        v_entire: cov.v_entire,
        amplification: ratio_f64(cov.v_tainted, budget),
        subject,
        subject_before: before,
        subject_after: sweep.verdict(&subject)?,
        targets: scores,
    })
}

/// Dusting a fixed population with a growing number of targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmplificationConfig<A> {
    pub population: usize,
    pub balance_each: A,
    pub per_target: A,
    /// Number of population members dusted at each step.
    pub steps: Vec<usize>,
    /// Impurity threshold used for the separation column.
    pub threshold: Threshold,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmplificationRow<A> {
    pub targets: usize,
    pub budget: A,
    pub binary_tainted: usize,
    pub v_tainted: A,
    pub amplification: f64,
    /// Highest impurity score among dusted targets.
    pub max_target_score: Score<A>,
    /// Dusted targets at or above the threshold.
    pub over_threshold: usize,
}

pub fn amplification_study<A: Amount>(config: &AmplificationConfig<A>) -> Result<Vec<AmplificationRow<A>>> {
    let mut rows = Vec::with_capacity(config.steps.len());
    for &k in &config.steps {
        if k > config.population {
            return Err(Error::Config(format!("cannot dust {k} of {} addresses", config.population)));
        }
        if k == 0 {
            rows.push(AmplificationRow {
                targets: 0,
                budget: A::zero(),
                binary_tainted: 0,
                v_tainted: A::zero(),
                amplification: 0.0,
                max_target_score: Score::new(A::zero(), A::zero()),
                over_threshold: 0,
            });
            continue;
        }
        let source = Address::tagged(FRESH_TAG - 1, 0);
        let ctx = RuleContext { sanctions: SanctionSet::new().with(source, 1), resets: HashSet::new() };
        let mut sandbox = Sandbox::new(ctx);
        let population: Vec<Address> =
            (0..config.population as u64).map(|i| Address::tagged(FRESH_TAG - 1, i + 1)).collect();
        let budget = config.per_target * A::from_units(k as u64);
        let mut funds: Vec<(Address, A)> = population.iter().map(|a| (*a, config.balance_each)).collect();
        funds.push((source, budget));
        sandbox.fund(&funds)?;
        let report = run_adversary(
            &AdversaryPlan {
                source,
                strategy: Strategy::Dust { per_target: config.per_target, targets: population[..k].to_vec() },
            },
            Classifier::Binary,
            &mut sandbox,
        )?;
        let scores: Vec<Score<A>> = report.targets.iter().map(|t| Score::new(t.impurity, t.balance)).collect();
        let tainted_targets: Vec<&TargetScore<A>> =
            report.targets.iter().filter(|t| t.verdict == Verdict::Tainted).collect();
        let v_tainted = tainted_targets.iter().fold(A::zero(), |acc, t| acc.saturating_add(t.balance));
        rows.push(AmplificationRow {
            targets: k,
            budget,
            binary_tainted: tainted_targets.len(),
            v_tainted,
            amplification: ratio_f64(v_tainted, budget),
            max_target_score: scores
                .iter()
                .copied()
                .fold(Score::new(A::zero(), A::zero()), |m, s| if s > m { s } else { m }),
            over_threshold: scores.iter().filter(|s| s.at_least(config.threshold)).count(),
        });
    }
    Ok(rows)
}

pub fn write_amplification_csv<W: Write, A: Amount>(out: W, rows: &[AmplificationRow<A>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "targets",
        "budget",
        "binary_tainted",
        "v_tainted",
        "amplification",
        "max_target_score",
        "over_threshold",
    ])?;
    for r in rows {
        w.write_record([
            r.targets.to_string(),
            r.budget.to_string(),
            r.binary_tainted.to_string(),
            r.v_tainted.to_string(),
            format!("{:.3}", r.amplification),
            r.max_target_score.render(9),
            r.over_threshold.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(n: u64) -> Address {
        Address::from_index(n)
    }

    fn sandbox_with(sanctioned: &[u64], funds: &[(u64, u64)]) -> Sandbox<u64> {
        let mut sanctions = SanctionSet::new();
        for s in sanctioned {
            sanctions = sanctions.with(addr(*s), 1);
        }
        let mut sb = Sandbox::new(RuleContext { sanctions, resets: HashSet::new() });
        let funds: Vec<_> = funds.iter().map(|(a, v)| (addr(*a), *v)).collect();
        sb.fund(&funds).unwrap();
        sb
    }

    #[test]
    fn classifier_strings_roundtrip() {
        for s in ["binary", "time:100", "hop:2", "value:500:transactions", "percent:5%:sources", "percent:2.5%:target"]
        {
            let c: Classifier<u64> = s.parse().unwrap();
            assert_eq!(c.to_string(), s);
        }
        assert_eq!(
            "value:7".parse::<Classifier<u64>>().unwrap(),
            Classifier::ValueThreshold { theta: 7, scope: Scope::TargetOnly }
        );
        for bad in ["hop:0", "time", "percent:0%", "binary:1", "value:1:other", "colour:3"] {
            assert!(bad.parse::<Classifier<u64>>().is_err(), "{bad}");
        }
    }

    #[test]
    fn binary_taints_dust_recipient() {
        let mut sb = sandbox_with(&[1], &[(1, 10), (2, 1_000_000)]);
        sb.execute(vec![BalanceOp::transfer(addr(1), addr(2), 1)]).unwrap();
        assert_eq!(sb.verdict(Classifier::Binary, &addr(2)).unwrap(), Verdict::Tainted);
    }

    #[test]
    fn percentage_target_only_on_small_impurity_is_clean() {
        let mut sb = sandbox_with(&[1], &[(1, 10), (2, 999)]);
        sb.execute(vec![BalanceOp::transfer(addr(1), addr(2), 1)]).unwrap();
        let rec = sb.ledger().record(&addr(2)).unwrap();
        assert_eq!((rec.impurity, rec.balance), (1, 1000));
        let c = Classifier::PercentageThreshold { theta: Threshold::percent(5), scope: Scope::TargetOnly };
        assert_eq!(sb.verdict(c, &addr(2)).unwrap(), Verdict::Clean);
    }

    #[test]
    fn hop_limit_counts_from_sanctioned() {
        let mut sb = sandbox_with(&[1], &[(1, 10)]);
        sb.execute(vec![BalanceOp::transfer(addr(1), addr(2), 5)]).unwrap();
        sb.execute(vec![BalanceOp::transfer(addr(2), addr(3), 4)]).unwrap();
        sb.execute(vec![BalanceOp::transfer(addr(3), addr(4), 3)]).unwrap();
        let c = Classifier::HopBased { hops: 2 };
        assert_eq!(sb.verdict(c, &addr(3)).unwrap(), Verdict::Tainted);
        assert_eq!(sb.verdict(c, &addr(4)).unwrap(), Verdict::Clean);
    }

    #[test]
    fn same_block_hop_tie_prefers_lower_sender() {
        let mut sb = sandbox_with(&[1], &[(1, 10), (9, 10)]);
        sb.execute(vec![BalanceOp::transfer(addr(1), addr(2), 1), BalanceOp::transfer(addr(1), addr(9), 1)]).unwrap();
        sb.execute(vec![BalanceOp::transfer(addr(2), addr(5), 1)]).unwrap();
        // 9 is one hop away, 5 two hops; within a block the lower sender wins
        sb.execute(vec![BalanceOp::transfer(addr(9), addr(6), 1), BalanceOp::transfer(addr(5), addr(6), 1)]).unwrap();
        let sweep = sb.sweep(Classifier::HopBased { hops: 2 }).unwrap();
        let Propagation::Hop(hops) = &sweep.state else { panic!() };
        assert_eq!(hops[&addr(6)].via, addr(5));
        assert_eq!(hops[&addr(6)].hops, 3);
    }

    #[test]
    fn time_taint_expires() {
        let mut sb = sandbox_with(&[1], &[(1, 10), (2, 10)]);
        sb.execute(vec![BalanceOp::transfer(addr(1), addr(2), 1)]).unwrap();
        let c = Classifier::TimeBased { blocks: 3 };
        sb.advance(2).unwrap();
        assert_eq!(sb.verdict(c, &addr(2)).unwrap(), Verdict::Tainted);
        sb.advance(1).unwrap();
        assert_eq!(sb.verdict(c, &addr(2)).unwrap(), Verdict::Clean);
    }

    #[test]
    fn resets_never_carry_taint() {
        let mut sb = sandbox_with(&[1], &[(1, 10)]);
        sb.ctx.resets.insert(addr(2));
        sb.execute(vec![BalanceOp::transfer(addr(1), addr(2), 5)]).unwrap();
        sb.execute(vec![BalanceOp::transfer(addr(2), addr(3), 5)]).unwrap();
        for c in [Classifier::Binary, Classifier::HopBased { hops: 5 }, Classifier::TimeBased { blocks: 50 }] {
            assert_eq!(sb.verdict(c, &addr(2)).unwrap(), Verdict::Clean);
            assert_eq!(sb.verdict(c, &addr(3)).unwrap(), Verdict::Clean);
        }
    }

    #[test]
    fn dust_report_matches_closed_form() {
        let n = 1000u64;
        let mut funds: Vec<(u64, u64)> = (0..n).map(|i| (100 + i, 1_000_000)).collect();
        funds.push((1, n));
        let mut sb = sandbox_with(&[1], &funds);
        let targets: Vec<Address> = (0..n).map(|i| addr(100 + i)).collect();
        let plan = AdversaryPlan { source: addr(1), strategy: Strategy::Dust { per_target: 1, targets } };
        let report = run_adversary(&plan, Classifier::Binary, &mut sb).unwrap();
        assert_eq!(report.budget, n);
        assert_eq!(report.v_tainted, n * 1_000_001);
        assert!((report.amplification - 1_000_001.0).abs() < 1e-6);
        assert!(report.targets.iter().all(|t| t.impurity == 1 && t.balance == 1_000_001));
        assert!(report
            .targets
            .iter()
            .all(|t| !Score::new(t.impurity, t.balance).at_least(Threshold::new(1, 100_000).unwrap())));
    }

    #[test]
    fn overdraft_is_invalid_chain_data() {
        let mut sb = sandbox_with(&[1], &[(1, 5)]);
        let plan = AdversaryPlan { source: addr(1), strategy: Strategy::OneHopDirect { target: addr(2), amount: 6 } };
        let err = run_adversary(&plan, Classifier::Binary, &mut sb).unwrap_err();
        assert!(matches!(err, Error::InvalidChainData(_)));
        assert_eq!(sb.last_block(), 1);
    }

    #[test]
    fn burn_excess_lands_exactly_on_theta() {
        let mut sb = sandbox_with(&[1], &[(1, 100), (2, 300)]);
        sb.execute(vec![BalanceOp::transfer(addr(1), addr(2), 90)]).unwrap();
        let plan = AdversaryPlan { source: addr(2), strategy: Strategy::BurnExcess { theta: 40 } };
        let c = Classifier::ValueThreshold { theta: 40, scope: Scope::TargetOnly };
        let report = run_adversary(&plan, c, &mut sb).unwrap();
        assert_eq!((report.subject_before, report.subject_after), (Verdict::Tainted, Verdict::Clean));
        let rec = sb.ledger().record(&addr(2)).unwrap();
        assert!(rec.impurity <= 40 && rec.impurity > 30);
    }

    #[test]
    fn amplification_is_linear_in_targets() {
        let config = AmplificationConfig {
            population: 200,
            balance_each: 1_000_000u64,
            per_target: 1,
            steps: vec![0, 50, 100, 200],
            threshold: Threshold::percent(5),
        };
        let rows = amplification_study(&config).unwrap();
        assert_eq!(rows[0].amplification, 0.0);
        assert_eq!(rows[0].v_tainted, 0);
        assert_eq!(rows[2].v_tainted, 2 * rows[1].v_tainted);
        assert_eq!(rows[3].v_tainted, 2 * rows[2].v_tainted);
        for r in &rows[1..] {
            assert_eq!(r.binary_tainted, r.targets);
            assert_eq!(r.over_threshold, 0);
            assert!(r.max_target_score.to_f64() < 1e-3);
        }
        let mut buf = Vec::new();
        write_amplification_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn plans_roundtrip_through_json() {
        let plan = AdversaryPlan {
            source: addr(1),
            strategy: Strategy::<u64>::PreparedSources { target: addr(2), count: 3, tainted_each: 5, clean_each: 95 },
        };
        let text = serde_json::to_string(&plan).unwrap();
        assert!(text.contains("\"kind\":\"prepared_sources\""), "{text}");
        assert_eq!(serde_json::from_str::<AdversaryPlan<u64>>(&text).unwrap(), plan);
    }
}
