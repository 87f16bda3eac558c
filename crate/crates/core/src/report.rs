//! Distribution of latest impurity scores.

use std::io::Write;

use serde::Serialize;

use crate::amount::Amount;
use crate::error::Result;
use crate::ledger::ImpurityRecord;
use crate::score::Threshold;

/// Upper bounds of the score bands; the last band is closed at 100%.
pub const BAND_EDGES: [u64; 3] = [5, 50, 95];
pub const BAND_LABELS: [&str; 4] = ["[0%,5%)", "[5%,50%)", "[50%,95%)", "[95%,100%]"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Band<A> {
    pub label: &'static str,
    pub addresses: u64,
    pub balance: A,
    pub impurity: A,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoreDistribution<A> {
    pub bands: Vec<Band<A>>,
    /// Addresses with a record but no balance, scored 0 and kept out of the bands.
    pub empty: u64,
}

impl<A: Amount> Default for ScoreDistribution<A> {
    fn default() -> Self {
        ScoreDistribution {
            bands: BAND_LABELS
                .iter()
                .map(|label| Band { label, addresses: 0, balance: A::zero(), impurity: A::zero() })
                .collect(),
            empty: 0,
        }
    }
}

impl<A: Amount> ScoreDistribution<A> {
    pub fn add(&mut self, record: &ImpurityRecord<A>) {
        if record.balance.is_zero() {
            self.empty += 1;
            return;
        }
        let score = record.score();
        let idx = BAND_EDGES.iter().take_while(|pct| score.at_least(Threshold::percent(**pct))).count();
        let band = &mut self.bands[idx];
        band.addresses += 1;
        band.balance = band.balance.saturating_add(record.balance);
        band.impurity = band.impurity.saturating_add(record.impurity);
    }

    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ImpurityRecord<A>>) -> Self {
        let mut d = ScoreDistribution::default();
        for r in records {
            d.add(r);
        }
        d
    }

    pub fn addresses(&self) -> u64 {
        self.empty + self.bands.iter().map(|b| b.addresses).sum::<u64>()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["band", "addresses", "balance", "impurity"])?;
        for b in &self.bands {
            w.write_record([
                b.label.to_string(),
                b.addresses.to_string(),
                b.balance.to_string(),
                b.impurity.to_string(),
            ])?;
        }
        w.write_record(["empty".to_string(), self.empty.to_string(), "0".into(), "0".into()])?;
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Row<'a> {
            band: &'a str,
            addresses: u64,
            balance: String,
            impurity: String,
        }
        let rows: Vec<Row> = self
            .bands
            .iter()
            .map(|b| Row {
                band: b.label,
                addresses: b.addresses,
                balance: b.balance.to_string(),
                impurity: b.impurity.to_string(),
            })
            .collect();
        serde_json::json!({ "bands": rows, "empty": self.empty })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_edges_are_half_open() {
        let recs = [
            ImpurityRecord::new(0u64, 100),
            ImpurityRecord::new(4, 100),
            ImpurityRecord::new(5, 100),
            ImpurityRecord::new(49, 100),
            ImpurityRecord::new(50, 100),
            ImpurityRecord::new(95, 100),
            ImpurityRecord::new(100, 100),
            ImpurityRecord::new(0, 0),
        ];
        let d = ScoreDistribution::from_records(&recs);
        let counts: Vec<u64> = d.bands.iter().map(|b| b.addresses).collect();
        assert_eq!(counts, [2, 2, 1, 2]);
        assert_eq!(d.empty, 1);
        assert_eq!(d.addresses(), 8);
        assert_eq!(d.bands[3].impurity, 195);
    }
}
