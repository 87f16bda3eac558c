//! Sanctioned address windows and their text format.
//!
//! One entry per line: `address active_from [active_until]`. Blank lines and
//! lines starting with `#` are ignored. `active_until` is exclusive.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;

use crate::address::Address;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SanctionWindow {
    pub active_from: u64,
    pub active_until: Option<u64>,
}

impl SanctionWindow {
    pub fn contains(&self, block: u64) -> bool {
        self.active_from <= block && self.active_until.is_none_or(|until| block < until)
    }
}

#[derive(Clone, Debug, Default)]
pub struct SanctionSet {
    windows: HashMap<Address, Vec<SanctionWindow>>,
    starts: BTreeMap<u64, Vec<Address>>,
    ends: BTreeMap<u64, Vec<Address>>,
}

impl SanctionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, address: Address, active_from: u64, active_until: Option<u64>) -> Result<()> {
        if active_until.is_some_and(|until| until <= active_from) {
            return Err(Error::Validation(format!("sanction window for {address} ends before it starts")));
        }
        let window = SanctionWindow { active_from, active_until };
        let existing = self.windows.entry(address).or_default();
        if existing.iter().any(|w| overlaps(w, &window)) {
            return Err(Error::Validation(format!("overlapping sanction windows for {address}")));
        }
        existing.push(window);
        existing.sort_by_key(|w| w.active_from);
        self.starts.entry(active_from).or_default().push(address);
        if let Some(until) = active_until {
            self.ends.entry(until).or_default().push(address);
        }
        Ok(())
    }

    /// Sanctioned from `active_from` with no end.
    pub fn with(mut self, address: Address, active_from: u64) -> Self {
        self.insert(address, active_from, None).expect("open window cannot overlap");
        self
    }

    pub fn is_sanctioned(&self, address: &Address, block: u64) -> bool {
        self.windows.get(address).is_some_and(|ws| ws.iter().any(|w| w.contains(block)))
    }

    /// Addresses whose window opens exactly at `block`.
    pub fn activated_at(&self, block: u64) -> &[Address] {
        self.starts.get(&block).map_or(&[], Vec::as_slice)
    }

    /// Addresses whose window closes exactly at `block`.
    pub fn deactivated_at(&self, block: u64) -> &[Address] {
        self.ends.get(&block).map_or(&[], Vec::as_slice)
    }

    /// Earliest activation height, the natural start of an analysis.
    pub fn earliest_activation(&self) -> Option<u64> {
        self.starts.keys().next().copied()
    }

    pub fn addresses(&self) -> impl Iterator<Item = &Address> {
        self.windows.keys()
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn entries(&self) -> Vec<(Address, SanctionWindow)> {
        let mut out: Vec<_> = self.windows.iter().flat_map(|(a, ws)| ws.iter().map(move |w| (*a, *w))).collect();
        out.sort_by_key(|(a, w)| (w.active_from, *a));
        out
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut set = SanctionSet::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: line_no, message };
            let fields: Vec<&str> = trimmed.split_whitespace().collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(parse_err(format!(
                    "expected `address active_from [active_until]`, got {} fields",
                    fields.len()
                )));
            }
            let address: Address = fields[0].parse().map_err(|e: Error| parse_err(e.to_string()))?;
            let from = fields[1].parse().map_err(|_| parse_err(format!("bad active_from {:?}", fields[1])))?;
            let until = fields
                .get(2)
                .map(|s| s.parse().map_err(|_| parse_err(format!("bad active_until {s:?}"))))
                .transpose()?;
            set.insert(address, from, until).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(set)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (address, w) in self.entries() {
            match w.active_until {
                Some(until) => writeln!(out, "{address} {} {until}", w.active_from),
                None => writeln!(out, "{address} {}", w.active_from),
            }
            .unwrap();
        }
        out
    }
}

fn overlaps(a: &SanctionWindow, b: &SanctionWindow) -> bool {
    let a_end = a.active_until.unwrap_or(u64::MAX);
    let b_end = b.active_until.unwrap_or(u64::MAX);
    a.active_from < b_end && b.active_from < a_end
}
