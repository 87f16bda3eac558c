//! Scripted attacker and evader plans, one pair per rule family.
//!
//! Every case builds its own sandbox, runs the plan and reports whether the
//! verdict on the subject moved the way the rule's weakness predicts. Some
//! cases also run a control plan that must leave the verdict alone.

use std::collections::HashSet;

use taintledger::rules::{run_adversary, AdversaryPlan, Classifier, RuleContext, Sandbox, Scope, Strategy, Verdict};
use taintledger::{Address, BalanceOp, SanctionSet, Threshold};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Attacker,
    Evader,
}

#[derive(Clone, Debug)]
pub struct EvasionCase {
    pub rule: String,
    pub role: Role,
    pub strategy: &'static str,
    pub before: Verdict,
    pub after: Verdict,
    pub controls_hold: bool,
}

impl EvasionCase {
    pub fn passed(&self) -> bool {
        let expected = match self.role {
            Role::Attacker => (Verdict::Clean, Verdict::Tainted),
            Role::Evader => (Verdict::Tainted, Verdict::Clean),
        };
        (self.before, self.after) == expected && self.controls_hold
    }
}

const SOURCE: u64 = 1;
const TARGET: u64 = 2;
const EVADER: u64 = 3;
const SERVICE: u64 = 4;

fn addr(n: u64) -> Address {
    Address::from_index(n)
}

fn sandbox(resets: &[u64]) -> Sandbox<u64> {
    let ctx = RuleContext {
        sanctions: SanctionSet::new().with(addr(SOURCE), 1),
        resets: resets.iter().map(|r| addr(*r)).collect::<HashSet<_>>(),
    };
    let mut sb = Sandbox::new(ctx);
    sb.fund(&[(addr(SOURCE), 10_000), (addr(TARGET), 1_000), (addr(EVADER), 1_000), (addr(SERVICE), 1_000)])
        .expect("funding block");
    sb
}

/// Sandbox where the evader already received `each` from the sanctioned source
/// through each of `helpers` fresh intermediaries, one block later.
fn tainted_evader(helpers: u64, each: u64) -> Sandbox<u64> {
    let mut sb = sandbox(&[]);
    let hs: Vec<Address> = (0..helpers).map(|_| sb.fresh_address()).collect();
    sb.execute(hs.iter().map(|h| BalanceOp::transfer(addr(SOURCE), *h, each)).collect()).unwrap();
    sb.execute(hs.iter().map(|h| BalanceOp::transfer(*h, addr(EVADER), each)).collect()).unwrap();
    sb
}

/// Sandbox where the evader received `amount` straight from the sanctioned source.
fn direct_evader(amount: u64, resets: &[u64]) -> Sandbox<u64> {
    let mut sb = sandbox(resets);
    sb.execute(vec![BalanceOp::transfer(addr(SOURCE), addr(EVADER), amount)]).unwrap();
    sb
}

fn run(
    sb: &mut Sandbox<u64>,
    rule: Classifier<u64>,
    role: Role,
    source: u64,
    strategy: Strategy<u64>,
    controls_hold: bool,
) -> EvasionCase {
    let plan = AdversaryPlan { source: addr(source), strategy };
    let report = run_adversary(&plan, rule, sb).expect("scripted plan runs");
    EvasionCase {
        rule: rule.to_string(),
        role,
        strategy: report.strategy,
        before: report.subject_before,
        after: report.subject_after,
        controls_hold,
    }
}

fn attack(rule: Classifier<u64>, strategy: Strategy<u64>, controls_hold: bool) -> EvasionCase {
    run(&mut sandbox(&[]), rule, Role::Attacker, SOURCE, strategy, controls_hold)
}

fn verdict_after(mut sb: Sandbox<u64>, rule: Classifier<u64>, source: u64, strategy: Strategy<u64>) -> Verdict {
    let plan = AdversaryPlan { source: addr(source), strategy };
    run_adversary(&plan, rule, &mut sb).expect("control plan runs").subject_after
}

fn time_cases() -> Vec<EvasionCase> {
    let t = 10;
    let rule = Classifier::TimeBased { blocks: t };
    // one dust expires after t blocks
    let mut single = sandbox(&[]);
    single.execute(vec![BalanceOp::transfer(addr(SOURCE), addr(TARGET), 1)]).unwrap();
    let first = single.last_block();
    single.advance(t).unwrap();
    let expired = single.verdict(rule, &addr(TARGET)).unwrap() == Verdict::Clean;

    let mut sb = sandbox(&[]);
    let refresh = Strategy::Refresh { target: addr(TARGET), amount: 1, period: t / 2, rounds: 4 };
    let mut attack = run(&mut sb, rule, Role::Attacker, SOURCE, refresh, expired);
    // the refreshed target must still be tainted well past the first dust's expiry
    attack.controls_hold &=
        sb.last_block() >= first + t && sb.verdict(rule, &addr(TARGET)).unwrap() == Verdict::Tainted;

    let short = verdict_after(direct_evader(50, &[]), rule, EVADER, Strategy::WaitOut { blocks: t - 2 });
    let evade = run(
        &mut direct_evader(50, &[]),
        rule,
        Role::Evader,
        EVADER,
        Strategy::WaitOut { blocks: t },
        short == Verdict::Tainted,
    );
    vec![attack, evade]
}

fn hop_cases() -> Vec<EvasionCase> {
    let rule = Classifier::HopBased { hops: 3 };
    let attack = attack(rule, Strategy::OneHopDirect { target: addr(TARGET), amount: 1 }, true);
    // a chain that stays within the limit does not help
    let within = verdict_after(direct_evader(50, &[]), rule, EVADER, Strategy::HopChain { len: 2 });
    let chain = run(
        &mut direct_evader(50, &[]),
        rule,
        Role::Evader,
        EVADER,
        Strategy::HopChain { len: 3 },
        within == Verdict::Tainted,
    );
    // routing through a service that does not share the hop count; a plain address does not reset it
    let plain =
        verdict_after(direct_evader(50, &[]), rule, EVADER, Strategy::RouteViaService { service: addr(SERVICE) });
    let service = run(
        &mut direct_evader(50, &[SERVICE]),
        rule,
        Role::Evader,
        EVADER,
        Strategy::RouteViaService { service: addr(SERVICE) },
        plain == Verdict::Tainted,
    );
    vec![attack, chain, service]
}

fn value_cases() -> Vec<EvasionCase> {
    let theta = 100;
    let mut out = Vec::new();
    for scope in Scope::ALL {
        let rule = Classifier::ValueThreshold { theta, scope };
        let (strategy, control) = match scope {
            Scope::TargetOnly => {
                let below = verdict_after(
                    sandbox(&[]),
                    rule,
                    SOURCE,
                    Strategy::OneHopDirect { target: addr(TARGET), amount: theta },
                );
                (Strategy::OneHopDirect { target: addr(TARGET), amount: theta + 1 }, below == Verdict::Clean)
            }
            Scope::PlusTransactions => {
                (Strategy::SplitBelowValue { target: addr(TARGET), total: 3 * theta, theta }, true)
            }
            Scope::PlusSources => (
                Strategy::PreparedSources { target: addr(TARGET), count: 3, tainted_each: theta / 2, clean_each: 0 },
                true,
            ),
        };
        out.push(attack(rule, strategy, control));

        // the evader's inflows and their sources each stay at or below theta
        let waited = verdict_after(tainted_evader(2, 75), rule, EVADER, Strategy::WaitOut { blocks: 50 });
        out.push(run(
            &mut tainted_evader(2, 75),
            rule,
            Role::Evader,
            EVADER,
            Strategy::BurnExcess { theta },
            waited == Verdict::Tainted,
        ));
    }
    out
}

fn percentage_cases() -> Vec<EvasionCase> {
    let theta = Threshold::percent(5);
    let mut out = Vec::new();
    for scope in Scope::ALL {
        let rule = Classifier::PercentageThreshold { theta, scope };
        let (strategy, control) = match scope {
            Scope::PlusTransactions => {
                // each helper sits at 2%, the target's own score stays far below 5%
                let strategy =
                    Strategy::PreparedSources { target: addr(TARGET), count: 2, tainted_each: 1, clean_each: 49 };
                let target_only = Classifier::PercentageThreshold { theta, scope: Scope::TargetOnly };
                let own = verdict_after(sandbox(&[]), target_only, SOURCE, strategy.clone());
                (strategy, own == Verdict::Clean)
            }
            _ => {
                // 50 of 1050 is under 5%, 60 of 1060 is over
                let below = verdict_after(
                    sandbox(&[]),
                    rule,
                    SOURCE,
                    Strategy::OneHopDirect { target: addr(TARGET), amount: 50 },
                );
                (Strategy::OneHopDirect { target: addr(TARGET), amount: 60 }, below == Verdict::Clean)
            }
        };
        out.push(attack(rule, strategy, control));

        let undiluted = verdict_after(direct_evader(100, &[]), rule, EVADER, Strategy::BalanceDilute { clean: 500 });
        out.push(run(
            &mut direct_evader(100, &[]),
            rule,
            Role::Evader,
            EVADER,
            Strategy::BalanceDilute { clean: 2_000 },
            undiluted == Verdict::Tainted,
        ));
    }
    out
}

/// All cases: time, hop, value and percentage rules, each scope separately.
pub fn suite() -> Vec<EvasionCase> {
    let mut out = time_cases();
    out.extend(hop_cases());
    out.extend(value_cases());
    out.extend(percentage_cases());
    out
}
