//! Transaction-graph motifs, test-deposit sequences and block-producer census.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::address::Address;
use crate::amount::Amount;
use crate::error::Result;
use crate::ledger::{Block, OpKind};
use crate::sanctions::SanctionSet;
use crate::score::Threshold;
use crate::view::HistoryView;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TxEdge<A> {
    pub from: Address,
    pub to: Address,
    pub amount: A,
    pub block: u64,
}

#[derive(Clone, Debug, Default)]
pub struct TxGraph<A> {
    pub nodes: BTreeSet<Address>,
    pub edges: Vec<TxEdge<A>>,
}

impl<A: Amount> TxGraph<A> {
    pub fn from_edges(edges: impl IntoIterator<Item = TxEdge<A>>) -> Self {
        let mut g = TxGraph { nodes: BTreeSet::new(), edges: Vec::new() };
        for e in edges {
            g.nodes.insert(e.from);
            g.nodes.insert(e.to);
            g.edges.push(e);
        }
        g
    }

    /// Transfers committed in `[from, to]`.
    pub fn from_view<V: HistoryView<A> + ?Sized>(view: &V, from: u64, to: u64) -> Result<Self> {
        let mut edges = Vec::new();
        view.for_each_flow(from, to, &mut |f| {
            if f.kind == OpKind::Transfer {
                edges.push(TxEdge { from: f.from, to: f.to, amount: f.amount, block: f.block });
            }
            Ok(())
        })?;
        Ok(TxGraph::from_edges(edges))
    }

    /// Transfers touching at least one address in `focus`, within `[from, to]`.
    pub fn around<V: HistoryView<A> + ?Sized>(view: &V, focus: &HashSet<Address>, from: u64, to: u64) -> Result<Self> {
        let g = TxGraph::from_view(view, from, to)?;
        Ok(TxGraph::from_edges(g.edges.into_iter().filter(|e| focus.contains(&e.from) || focus.contains(&e.to))))
    }

    pub fn distinct_arcs(&self) -> usize {
        self.edges.iter().filter(|e| e.from != e.to).map(|e| (e.from, e.to)).collect::<HashSet<_>>().len()
    }
}

/// Connected directed triad classes. `a<->b` is a mutual dyad.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Motif {
    /// a<-b->c
    #[serde(rename = "021D")]
    M021D,
    /// a->b<-c
    #[serde(rename = "021U")]
    M021U,
    /// a->b->c
    #[serde(rename = "021C")]
    M021C,
    /// a<->b<-c
    #[serde(rename = "111D")]
    M111D,
    /// a<->b->c
    #[serde(rename = "111U")]
    M111U,
    #[serde(rename = "030T")]
    M030T,
    #[serde(rename = "030C")]
    M030C,
    #[serde(rename = "201")]
    M201,
    #[serde(rename = "120D")]
    M120D,
    #[serde(rename = "120U")]
    M120U,
    #[serde(rename = "120C")]
    M120C,
    #[serde(rename = "210")]
    M210,
    #[serde(rename = "300")]
    M300,
}

impl Motif {
    pub const ALL: [Motif; 13] = [
        Motif::M021D,
        Motif::M021U,
        Motif::M021C,
        Motif::M111D,
        Motif::M111U,
        Motif::M030T,
        Motif::M030C,
        Motif::M201,
        Motif::M120D,
        Motif::M120U,
        Motif::M120C,
        Motif::M210,
        Motif::M300,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Motif::M021D => "021D",
            Motif::M021U => "021U",
            Motif::M021C => "021C",
            Motif::M111D => "111D",
            Motif::M111U => "111U",
            Motif::M030T => "030T",
            Motif::M030C => "030C",
            Motif::M201 => "201",
            Motif::M120D => "120D",
            Motif::M120U => "120U",
            Motif::M120C => "120C",
            Motif::M210 => "210",
            Motif::M300 => "300",
        }
    }

    /// Class of the triad whose arcs are given as `arcs[i][j]` for `i -> j`,
    /// or `None` when the triad is not weakly connected.
    pub fn classify(arcs: [[bool; 3]; 3]) -> Option<Motif> {
        let out = |i: usize| (0..3).filter(|&j| j != i && arcs[i][j]).count();
        let inn = |i: usize| (0..3).filter(|&j| j != i && arcs[j][i]).count();
        let mut mutual = Vec::new();
        let mut asym = Vec::new();
        let mut null = 0;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            match (arcs[i][j], arcs[j][i]) {
                (true, true) => mutual.push((i, j)),
                (true, false) => asym.push((i, j)),
                (false, true) => asym.push((j, i)),
                (false, false) => null += 1,
            }
        }
        let m = match (mutual.len(), asym.len(), null) {
            (0, 2, 1) => {
                if (0..3).any(|i| out(i) == 2) {
                    Motif::M021D
                } else if (0..3).any(|i| inn(i) == 2) {
                    Motif::M021U
                } else {
                    Motif::M021C
                }
            }
            (1, 1, 1) => {
                let (a, b) = mutual[0];
                let (s, t) = asym[0];
                // the asymmetric arc points into the mutual pair
                if (t == a || t == b) && s != a && s != b {
                    Motif::M111D
                } else {
                    Motif::M111U
                }
            }
            (0, 3, 0) => {
                if (0..3).all(|i| out(i) == 1) {
                    Motif::M030C
                } else {
                    Motif::M030T
                }
            }
            (2, 0, 1) => Motif::M201,
            (1, 2, 0) => {
                let (a, b) = mutual[0];
                let c = 3 - a - b;
                let c_out = asym.iter().filter(|(s, _)| *s == c).count();
                match c_out {
                    2 => Motif::M120D,
                    0 => Motif::M120U,
                    _ => Motif::M120C,
                }
            }
            (2, 1, 0) => Motif::M210,
            (3, 0, 0) => Motif::M300,
            _ => return None,
        };
        Some(m)
    }
}

impl fmt::Display for Motif {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MotifCensus {
    pub counts: BTreeMap<Motif, u64>,
}

impl MotifCensus {
    pub fn get(&self, m: Motif) -> u64 {
        self.counts.get(&m).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Each class as a share of all connected triads; zeros when there are none.
    pub fn normalized(&self) -> BTreeMap<Motif, f64> {
        let total = self.total();
        Motif::ALL.iter().map(|m| (*m, if total == 0 { 0.0 } else { self.get(*m) as f64 / total as f64 })).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["motif", "count", "share"])?;
        let shares = self.normalized();
        for m in Motif::ALL {
            w.write_record([m.code().to_string(), self.get(m).to_string(), format!("{:.6}", shares[&m])])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `{"counts": {code: n}, "normalized": {code: share}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let counts: BTreeMap<&str, u64> = Motif::ALL.iter().map(|m| (m.code(), self.get(*m))).collect();
        let shares: BTreeMap<&str, f64> = self.normalized().into_iter().map(|(m, s)| (m.code(), s)).collect();
        serde_json::json!({ "counts": counts, "normalized": shares })
    }
}

/// Counts connected triads by class. Parallel edges collapse to one arc and
/// self-transfers are ignored.
pub fn motif_census<A: Amount>(graph: &TxGraph<A>) -> MotifCensus {
    let index: HashMap<Address, usize> = graph.nodes.iter().enumerate().map(|(i, a)| (*a, i)).collect();
    let n = index.len();
    let mut arcs: HashSet<(usize, usize)> = HashSet::new();
    let mut neighbours: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for e in &graph.edges {
        if e.from == e.to {
            continue;
        }
        let (u, v) = (index[&e.from], index[&e.to]);
        arcs.insert((u, v));
        neighbours[u].insert(v);
        neighbours[v].insert(u);
    }
    let mut census = MotifCensus::default();
    for v in 0..n {
        let nb: Vec<usize> = neighbours[v].iter().copied().collect();
        for (i, &u) in nb.iter().enumerate() {
            for &w in &nb[i + 1..] {
                // triangles are seen from all three corners; count them at the lowest
                if neighbours[u].contains(&w) && (u < v || w < v) {
                    continue;
                }
                let tri = [u, v, w];
                let mut m = [[false; 3]; 3];
                for a in 0..3 {
                    for b in 0..3 {
                        m[a][b] = a != b && arcs.contains(&(tri[a], tri[b]));
                    }
                }
                let motif = Motif::classify(m).expect("two undirected edges connect the triad");
                *census.counts.entry(motif).or_default() += 1;
            }
        }
    }
    census
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Deposit<A> {
    pub depositor: Address,
    pub service: Address,
    pub amount: A,
    pub block: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TestDepositParams<A> {
    pub small_cap: A,
    pub large_floor: A,
    pub max_gap_blocks: u64,
}

impl<A: Amount> TestDepositParams<A> {
    /// 0.5 and 5 coins of 10^18 base units, within 50,000 blocks.
    pub fn coin_defaults() -> Self {
        let coin = A::from_units(10).pow(crate::amount::COIN_DECIMALS);
        TestDepositParams {
            small_cap: coin / A::from_units(2),
            large_floor: coin * A::from_units(5),
            max_gap_blocks: 50_000,
        }
    }
}

/// Transfers into any of `services`, in chain order.
pub fn deposits_into<A: Amount, V: HistoryView<A> + ?Sized>(
    view: &V,
    services: &HashSet<Address>,
    from: u64,
    to: u64,
) -> Result<Vec<Deposit<A>>> {
    let mut out = Vec::new();
    view.for_each_flow(from, to, &mut |f| {
        if f.kind == OpKind::Transfer && services.contains(&f.to) && f.from != f.to {
            out.push(Deposit { depositor: f.from, service: f.to, amount: f.amount, block: f.block });
        }
        Ok(())
    })?;
    Ok(out)
}

/// Depositors whose first deposit into a service is at most `small_cap` and
/// who later deposit at least `large_floor` into the same service within
/// `max_gap_blocks` of that first deposit.
pub fn detect_test_deposits<A: Amount>(deposits: &[Deposit<A>], params: &TestDepositParams<A>) -> BTreeSet<Address> {
    let mut ordered: Vec<&Deposit<A>> = deposits.iter().collect();
    ordered.sort_by_key(|d| d.block);
    let mut first: HashMap<(Address, Address), (A, u64)> = HashMap::new();
    let mut flagged = BTreeSet::new();
    for d in ordered {
        match first.get(&(d.depositor, d.service)) {
            None => {
                first.insert((d.depositor, d.service), (d.amount, d.block));
            }
            Some(&(probe, at)) => {
                if probe <= params.small_cap && d.amount >= params.large_floor && d.block - at <= params.max_gap_blocks
                {
                    flagged.insert(d.depositor);
                }
            }
        }
    }
    flagged
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ProducerCounts {
    pub total: u64,
    /// Blocks with an op sent by or to an active sanctioned address.
    pub direct: u64,
    /// Blocks with a sender whose score was exactly 1 at the parent block.
    pub full_score: u64,
    /// Blocks with a sender whose score was at least 1/2 at the parent block.
    pub half_score: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProducerCensus {
    pub producers: BTreeMap<Address, ProducerCounts>,
}

impl ProducerCensus {
    pub fn observe<A: Amount, V: HistoryView<A> + ?Sized>(
        &mut self,
        block: &Block<A>,
        view: &V,
        sanctions: &SanctionSet,
    ) -> Result<()> {
        let half = Threshold::new(1, 2).expect("valid threshold");
        let mut direct = false;
        let mut full = false;
        let mut high = false;
        let mut seen = HashSet::new();
        for op in &block.ops {
            let touches = |a: &Address| sanctions.is_sanctioned(a, block.number);
            if touches(&op.to) || op.from.as_ref().is_some_and(touches) {
                direct = true;
            }
            let Some(from) = op.from else { continue };
            if !seen.insert(from) || block.number == 0 {
                continue;
            }
            let score = view.query_at(&from, block.number - 1)?.score();
            full |= score.is_one();
            high |= score.at_least(half);
        }
        let c = self.producers.entry(block.producer).or_default();
        c.total += 1;
        c.direct += u64::from(direct);
        c.full_score += u64::from(full);
        c.half_score += u64::from(high);
        Ok(())
    }

    pub fn total_blocks(&self) -> u64 {
        self.producers.values().map(|c| c.total).sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["producer", "total", "direct", "full_score", "half_score"])?;
        for (p, c) in &self.producers {
            w.write_record([
                p.to_string(),
                c.total.to_string(),
                c.direct.to_string(),
                c.full_score.to_string(),
                c.half_score.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: BTreeMap<String, ProducerCounts> = self.producers.iter().map(|(p, c)| (p.to_string(), *c)).collect();
        serde_json::json!(rows)
    }
}

/// Census over a block stream whose parent states are in `view`.
pub fn producer_census<'a, A: Amount + 'a, V: HistoryView<A> + ?Sized>(
    blocks: impl IntoIterator<Item = &'a Block<A>>,
    view: &V,
    sanctions: &SanctionSet,
) -> Result<ProducerCensus> {
    let mut census = ProducerCensus::default();
    for b in blocks {
        census.observe(b, view, sanctions)?;
    }
    Ok(census)
}
