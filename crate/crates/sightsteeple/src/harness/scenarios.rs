//! Built-in scenario builders: the stock configurations the CLI, the attack
//! demos and the acceptance suite run.

use crate::consensus::elect_leader;
use crate::crypto::PlayerId;

use super::config::{
    AdversarySection, FamilySection, NetworkSection, OutputSection, PlayerSpec, ProtocolSection,
    RatioSpec, ScenarioConfig, ScenarioSection, ScriptedEpoch, TxSpec, WorkloadSection,
    WrongKeySpec,
};

const ACCOUNT_NAMES: [&str; 6] = ["alice", "bob", "carol", "dave", "erin", "frank"];

/// Baseline honest scenario; non-head players split between a token-sum view
/// and the null view, in non-increasing credential order.
fn base(name: &str, variant: &str, n: u32, m: u32, epochs: u64, seed: u64) -> ScenarioConfig {
    let mut players = Vec::new();
    let tail = n - m;
    for i in m..n {
        let idx = i - m;
        let upper_half = idx < tail.div_ceil(2);
        players.push(PlayerSpec {
            id: i,
            rank: if upper_half { 10 } else { 1 },
            view: if upper_half { "token_sum" } else { "null" }.into(),
        });
    }
    ScenarioConfig {
        scenario: ScenarioSection {
            name: name.into(),
            variant: variant.into(),
            n,
            m,
            epochs,
            seed,
        },
        network: NetworkSection {
            delta: 2,
            gst: 0,
            policy: "worst-case".into(),
            rounds_per_epoch: None,
            echo: true,
        },
        family: FamilySection::default(),
        players,
        accounts: ACCOUNT_NAMES
            .iter()
            .map(|a| (a.to_string(), 1_000_000u64))
            .collect(),
        workload: WorkloadSection {
            mode: "random".into(),
            txs_per_epoch: 3,
            max_amount: 100,
            script: Vec::new(),
        },
        adversary: AdversarySection::default(),
        protocol: ProtocolSection::default(),
        output: OutputSection::default(),
    }
}

pub fn cft_honest(n: u32, m: u32, epochs: u64, seed: u64) -> ScenarioConfig {
    base(&format!("cft-honest-n{n}"), "cft", n, m, epochs, seed)
}

pub fn rft_honest(n: u32, m: u32, epochs: u64, seed: u64) -> ScenarioConfig {
    base(&format!("rft-honest-n{n}"), "rft", n, m, epochs, seed)
}

/// Crash-fault scenario: `(member, crash round)` pairs.
pub fn cft_crash(n: u32, m: u32, epochs: u64, seed: u64, crashes: &[(u32, u64)]) -> ScenarioConfig {
    let mut cfg = base(&format!("cft-crash-n{n}"), "cft", n, m, epochs, seed);
    cfg.adversary.mode = "crash".into();
    cfg.adversary.members = crashes.iter().map(|(p, _)| *p).collect();
    cfg.adversary.crash_rounds = crashes.iter().map(|(_, r)| *r).collect();
    cfg
}

/// Rational-fault scenario with the default revenue model.
pub fn rft_rational(n: u32, m: u32, epochs: u64, seed: u64, members: &[u32]) -> ScenarioConfig {
    let mut cfg = base(&format!("rft-rational-n{n}"), "rft", n, m, epochs, seed);
    cfg.adversary.mode = "rational".into();
    cfg.adversary.members = members.to_vec();
    cfg.adversary.beta1 = Some(RatioSpec { num: 1, den: 2 });
    cfg.adversary.beta2 = Some(RatioSpec { num: 1, den: 2 });
    cfg.adversary.block_reward = 10;
    cfg.adversary.fee_per_tx = 1;
    cfg.adversary.max_txs_per_payload = 10;
    cfg.adversary.adversary_accounts = vec!["dave".into()];
    cfg.adversary.max_adversary_gain = 200;
    cfg
}

/// Everyone assigned the identity view: the generalization scenario.
pub fn identity_everyone(n: u32, m: u32, epochs: u64, seed: u64) -> ScenarioConfig {
    let mut cfg = base(&format!("identity-psi-n{n}"), "cft", n, m, epochs, seed);
    cfg.scenario.name = format!("identity-psi-n{n}");
    cfg.players = (m..n)
        .map(|i| PlayerSpec {
            id: i,
            rank: n - i,
            view: "identity".into(),
        })
        .collect();
    cfg
}

/// Key-broadcast demo (attack 1): a head player leaks its identity key for
/// a finalized epoch; lower-credential players can then exceed their
/// entitlement. `enabled = false` builds the control run.
pub fn attack1(seed: u64, enabled: bool) -> ScenarioConfig {
    let mut cfg = base(
        if enabled {
            "attack1-key-broadcast"
        } else {
            "attack1-control"
        },
        "rft",
        5,
        2,
        10,
        seed,
    );
    cfg.players = vec![
        PlayerSpec {
            id: 2,
            rank: 10,
            view: "token_sum".into(),
        },
        PlayerSpec {
            id: 3,
            rank: 10,
            view: "token_sum".into(),
        },
        PlayerSpec {
            id: 4,
            rank: 1,
            view: "null".into(),
        },
    ];
    if enabled {
        cfg.adversary.mode = "byzantine-demo".into();
        cfg.adversary.members = vec![1];
        cfg.adversary.leak_epoch = Some(1);
    }
    cfg
}

/// The schedule facts the wrong-key demo is built around.
#[derive(Debug, Clone, Copy)]
pub struct Attack2Plan {
    pub attacker: PlayerId,
    pub victim: PlayerId,
    /// Epoch where the attacker supplies the wrong key.
    pub wrong_key_epoch: u64,
    /// The victim's first led epoch after the wrong key takes effect.
    pub victim_epoch: u64,
}

/// Wrong-key demo (attack 2). Scans the deterministic leader schedule for an
/// attacker-led epoch followed at distance >= 3 by the victim's first led
/// epoch, so the poisoned block is finalized before the victim proposes.
pub fn attack2(seed: u64, verkey: bool) -> (ScenarioConfig, Attack2Plan) {
    let n = 7;
    let m = 3;
    let horizon = 60;
    let mut best: Option<(u64, u64, u32, u32)> = None; // (e2, e1, attacker, victim)
    for attacker in 0..m {
        let Some(e1) = (1..horizon).find(|e| elect_leader(*e, m).unwrap().0 == attacker) else {
            continue;
        };
        for victim in 0..m {
            if victim == attacker {
                continue;
            }
            let Some(e2) = (e1 + 1..horizon).find(|e| elect_leader(*e, m).unwrap().0 == victim)
            else {
                continue;
            };
            if e2 < e1 + 3 {
                continue; // poisoned epoch not finalized before the victim leads
            }
            let candidate = (e2, e1, attacker, victim);
            if best.map(|b| candidate < b).unwrap_or(true) {
                best = Some(candidate);
            }
        }
    }
    let (e2, e1, attacker, victim) =
        best.expect("the hash schedule rotates through all head players");

    let epochs = e2 + 3;
    let mut cfg = base(
        if verkey {
            "attack2-wrong-key-verkey-on"
        } else {
            "attack2-wrong-key-verkey-off"
        },
        "rft",
        n,
        m,
        epochs,
        seed,
    );
    cfg.family = FamilySection {
        preset: "with-decrement".into(),
        filter_party: "alice".into(),
    };
    cfg.accounts = [("alice", 10u64), ("bob", 0), ("carol", 0)]
        .into_iter()
        .map(|(a, v)| (a.to_string(), v))
        .collect();
    cfg.workload = WorkloadSection {
        mode: "scripted".into(),
        txs_per_epoch: 0,
        max_amount: 100,
        script: vec![
            ScriptedEpoch {
                epoch: e1,
                txs: vec![TxSpec {
                    sender: "alice".into(),
                    receiver: "bob".into(),
                    amount: 5,
                    nonce: 0,
                }],
            },
            // Crafted to overspend the true balance by exactly the one unit
            // the decremented view hides from the victim.
            ScriptedEpoch {
                epoch: e2,
                txs: vec![TxSpec {
                    sender: "alice".into(),
                    receiver: "carol".into(),
                    amount: 6,
                    nonce: 1,
                }],
            },
        ],
    };
    cfg.adversary.mode = "rational".into();
    cfg.adversary.members = vec![attacker];
    cfg.adversary.beta1 = Some(RatioSpec { num: 1, den: 2 });
    cfg.adversary.beta2 = Some(RatioSpec { num: 1, den: 2 });
    cfg.adversary.wrong_key = Some(WrongKeySpec {
        epoch: e1,
        victim,
        function: "amount_decrement".into(),
    });
    cfg.protocol.verkey = verkey;
    (
        cfg,
        Attack2Plan {
            attacker: PlayerId(attacker),
            victim: PlayerId(victim),
            wrong_key_epoch: e1,
            victim_epoch: e2,
        },
    )
}

/// Exhaustive-schedule scenario for the brute-force consistency check:
/// n=4, m=2, 4 epochs, delta 2, GST 0. Echo is off so the per-message
/// schedule product stays enumerable.
pub fn enumerate_scenario(seed: u64) -> ScenarioConfig {
    let mut cfg = base("enumerate-n4", "cft", 4, 2, 4, seed);
    cfg.network.policy = "exhaustive".into();
    cfg.network.echo = false;
    cfg.workload.txs_per_epoch = 0;
    cfg
}

/// Scenario used by the complexity-statistics check at one player count.
pub fn sizes_scenario(n: u32, seed: u64) -> ScenarioConfig {
    let mut cfg = base(&format!("sizes-n{n}"), "cft", n, 2, 6, seed);
    cfg.workload.txs_per_epoch = 2;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attack2_plan_satisfies_the_schedule_constraints() {
        let (cfg, plan) = attack2(1, false);
        assert_ne!(plan.attacker, plan.victim);
        assert!(plan.victim_epoch >= plan.wrong_key_epoch + 3);
        assert_eq!(
            elect_leader(plan.wrong_key_epoch, 3).unwrap(),
            plan.attacker
        );
        assert_eq!(elect_leader(plan.victim_epoch, 3).unwrap(), plan.victim);
        // The victim's FIRST led epoch after the wrong key.
        for e in plan.wrong_key_epoch + 1..plan.victim_epoch {
            assert_ne!(elect_leader(e, 3).unwrap(), plan.victim);
        }
        cfg.build().unwrap();
    }

    #[test]
    fn attack1_and_control_validate() {
        attack1(5, true).build().unwrap();
        attack1(5, false).build().unwrap();
    }

    #[test]
    fn enumerate_scenario_validates() {
        enumerate_scenario(0).build().unwrap();
    }
}
