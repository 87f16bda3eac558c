//! Exact-rational replay of the impurity update rule.

use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use taintledger::{Address, Amount, BalanceOp, Block, SanctionSet};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Holding {
    pub impurity: BigUint,
    pub balance: BigUint,
}

#[derive(Clone, Debug, Default)]
pub struct RationalLedger {
    pub holdings: BTreeMap<Address, Holding>,
    pub zero_on_delist: bool,
}

fn ceil_product(amount: &BigUint, fraction: &BigRational) -> BigUint {
    let product = BigRational::from_integer(BigInt::from(amount.clone())) * fraction;
    product.ceil().to_integer().to_biguint().expect("non-negative product")
}

impl RationalLedger {
    pub fn new<A: Amount>(balances: &[(Address, A)], sanctions: &SanctionSet, start: u64) -> Self {
        let mut holdings = BTreeMap::new();
        for (addr, bal) in balances {
            let balance = bal.to_biguint();
            let impurity = if sanctions.is_sanctioned(addr, start) { balance.clone() } else { BigUint::zero() };
            holdings.insert(*addr, Holding { impurity, balance });
        }
        RationalLedger { holdings, zero_on_delist: false }
    }

    fn ratio_of(&self, addr: &Address) -> BigRational {
        match self.holdings.get(addr) {
            Some(h) if !h.balance.is_zero() => {
                BigRational::new(BigInt::from(h.impurity.clone()), BigInt::from(h.balance.clone()))
            }
            _ => BigRational::zero(),
        }
    }

    pub fn apply_op<A: Amount>(&mut self, op: &BalanceOp<A>, sanctions: &SanctionSet, block: u64) {
        let sent = op.sent.to_biguint();
        let received = op.received.to_biguint();
        let sender_ratio = op.from.map(|f| self.ratio_of(&f)).unwrap_or_else(BigRational::zero);
        if let Some(from) = op.from {
            let h = self.holdings.entry(from).or_default();
            assert!(h.balance >= sent, "oracle fed an overdraft");
            let taken = ceil_product(&sent, &sender_ratio);
            h.balance -= &sent;
            h.impurity -= taken;
        }
        let h = self.holdings.entry(op.to).or_default();
        h.balance += &received;
        if sanctions.is_sanctioned(&op.to, block) {
            h.impurity = h.balance.clone();
        } else {
            h.impurity += ceil_product(&received, &sender_ratio);
        }
    }

    pub fn apply_block<A: Amount>(&mut self, block: &Block<A>, sanctions: &SanctionSet) {
        for addr in sanctions.activated_at(block.number) {
            if let Some(h) = self.holdings.get_mut(addr) {
                h.impurity = h.balance.clone();
            }
        }
        if self.zero_on_delist {
            for addr in sanctions.deactivated_at(block.number) {
                if !sanctions.is_sanctioned(addr, block.number) {
                    if let Some(h) = self.holdings.get_mut(addr) {
                        h.impurity = BigUint::zero();
                    }
                }
            }
        }
        for op in &block.ops {
            self.apply_op(op, sanctions, block.number);
        }
    }

    pub fn get(&self, addr: &Address) -> Option<&Holding> {
        self.holdings.get(addr)
    }

    pub fn total_impurity(&self) -> BigUint {
        self.holdings.values().map(|h| h.impurity.clone()).sum()
    }

    /// Score of `addr` as f64, for diagnostics.
    pub fn score_f64(&self, addr: &Address) -> f64 {
        self.ratio_of(addr).to_f64().unwrap_or(f64::NAN)
    }
}
