//! Scenario configuration: the human-editable TOML schema, field-level
//! validation, and assembly of the immutable per-run protocol context.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{Rational, RevenueModel};
use crate::chain::{GenesisBlock, Variant};
use crate::consensus::{elect_leader, AdversaryDirectives, Behavior, EpochClock, ProtocolContext};
use crate::crypto::{hash, PlayerId, SigningKey};
use crate::net::{DelayPolicy, NetworkConfig};
use crate::views::{family_presets, AccountId, Credential, ViewAssignment, ViewFamily, ViewFnId};

#[derive(Debug, Error)]
#[error("config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

/// An exact rational parameter, written as `{ num = 1, den = 2 }`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioSpec {
    pub num: u32,
    pub den: u32,
}

impl RatioSpec {
    pub fn to_ratio(self) -> Rational {
        Rational::new(self.num as i128, self.den as i128)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    pub variant: String,
    pub n: u32,
    pub m: u32,
    pub epochs: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct NetworkSection {
    pub delta: u64,
    #[serde(default)]
    pub gst: u64,
    pub policy: String,
    #[serde(default)]
    pub rounds_per_epoch: Option<u64>,
    #[serde(default = "default_true")]
    pub echo: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FamilySection {
    /// `default` or `with-decrement`.
    #[serde(default = "default_family_preset")]
    pub preset: String,
    #[serde(default = "default_filter_party")]
    pub filter_party: String,
}

fn default_family_preset() -> String {
    "default".into()
}

fn default_filter_party() -> String {
    "alice".into()
}

impl Default for FamilySection {
    fn default() -> Self {
        FamilySection {
            preset: default_family_preset(),
            filter_party: default_filter_party(),
        }
    }
}

/// Credential rank and view assignment for one non-head player.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PlayerSpec {
    pub id: u32,
    pub rank: u32,
    pub view: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScriptedEpoch {
    pub epoch: u64,
    #[serde(default)]
    pub txs: Vec<TxSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TxSpec {
    pub sender: String,
    pub receiver: String,
    pub amount: u64,
    pub nonce: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct WorkloadSection {
    /// `random` or `scripted`.
    pub mode: String,
    #[serde(default)]
    pub txs_per_epoch: u32,
    #[serde(default = "default_max_amount")]
    pub max_amount: u64,
    #[serde(default)]
    pub script: Vec<ScriptedEpoch>,
}

fn default_max_amount() -> u64 {
    100
}

impl Default for WorkloadSection {
    fn default() -> Self {
        WorkloadSection {
            mode: "random".into(),
            txs_per_epoch: 3,
            max_amount: default_max_amount(),
            script: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct WrongKeySpec {
    pub epoch: u64,
    pub victim: u32,
    pub function: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AdversarySection {
    /// `none`, `crash`, `rational` or `byzantine-demo`.
    #[serde(default = "default_adversary_mode")]
    pub mode: String,
    #[serde(default)]
    pub members: Vec<u32>,
    /// Crash rounds, parallel to `members` (crash mode).
    #[serde(default)]
    pub crash_rounds: Vec<u64>,
    #[serde(default)]
    pub beta1: Option<RatioSpec>,
    #[serde(default)]
    pub beta2: Option<RatioSpec>,
    #[serde(default)]
    pub block_reward: u64,
    #[serde(default)]
    pub fee_per_tx: u64,
    #[serde(default)]
    pub max_txs_per_payload: u64,
    #[serde(default)]
    pub adversary_accounts: Vec<String>,
    #[serde(default)]
    pub max_adversary_gain: u64,
    #[serde(default)]
    pub fork_to_orphan: bool,
    #[serde(default)]
    pub double_proposal: bool,
    #[serde(default)]
    pub wrong_key: Option<WrongKeySpec>,
    /// Epoch whose key the demo player leaks once finalized.
    #[serde(default)]
    pub leak_epoch: Option<u64>,
}

fn default_adversary_mode() -> String {
    "none".into()
}

impl Default for AdversarySection {
    fn default() -> Self {
        AdversarySection {
            mode: default_adversary_mode(),
            members: Vec::new(),
            crash_rounds: Vec::new(),
            beta1: None,
            beta2: None,
            block_reward: 0,
            fee_per_tx: 0,
            max_txs_per_payload: 0,
            adversary_accounts: Vec::new(),
            max_adversary_gain: 0,
            fork_to_orphan: false,
            double_proposal: false,
            wrong_key: None,
            leak_epoch: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ProtocolSection {
    /// Toggles function-key verification (RFT); the wrong-key attack demo
    /// turns it off.
    #[serde(default = "default_true")]
    pub verkey: bool,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection { verkey: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub trace: Option<String>,
    #[serde(default)]
    pub report: Option<String>,
}

/// A complete scenario description; the unit of reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub network: NetworkSection,
    #[serde(default)]
    pub family: FamilySection,
    #[serde(default)]
    pub players: Vec<PlayerSpec>,
    #[serde(default)]
    pub accounts: BTreeMap<String, u64>,
    #[serde(default)]
    pub workload: WorkloadSection,
    #[serde(default)]
    pub adversary: AdversarySection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| err("<toml>", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs serialize")
    }

    pub fn variant(&self) -> Result<Variant, ConfigError> {
        match self.scenario.variant.as_str() {
            "cft" => Ok(Variant::Cft),
            "rft" => Ok(Variant::Rft),
            other => Err(err("scenario.variant", format!("unknown variant `{other}`"))),
        }
    }

    pub fn policy(&self) -> Result<DelayPolicy, ConfigError> {
        match self.network.policy.as_str() {
            "worst-case" => Ok(DelayPolicy::WorstCase),
            "uniform-random" => Ok(DelayPolicy::UniformRandom),
            "exhaustive" => Ok(DelayPolicy::Exhaustive),
            other => Err(err("network.policy", format!("unknown policy `{other}`"))),
        }
    }

    pub fn rounds_per_epoch(&self) -> u64 {
        self.network.rounds_per_epoch.unwrap_or(2 * self.network.delta)
    }

    pub fn build_family(&self) -> Result<ViewFamily, ConfigError> {
        let party = AccountId(self.family.filter_party.clone());
        match self.family.preset.as_str() {
            "default" => Ok(family_presets::default_family(&party)),
            "with-decrement" => Ok(family_presets::family_with_decrement(&party)),
            other => Err(err("family.preset", format!("unknown preset `{other}`"))),
        }
    }

    /// Validates everything and assembles the runtime setup.
    pub fn build(&self) -> Result<Setup, ConfigError> {
        let s = &self.scenario;
        if s.n == 0 {
            return Err(err("scenario.n", "need at least one player"));
        }
        if s.m == 0 || s.m > s.n {
            return Err(err("scenario.m", format!("m must be in [1, n]; got {}", s.m)));
        }
        if s.epochs == 0 {
            return Err(err("scenario.epochs", "need at least one epoch"));
        }
        let variant = self.variant()?;
        let policy = self.policy()?;
        if self.network.delta == 0 {
            return Err(err("network.delta", "delta must be at least 1 round"));
        }
        let rpe = self.rounds_per_epoch();
        if rpe == 0 {
            return Err(err("network.rounds-per-epoch", "must be positive"));
        }
        let family = self.build_family()?;

        // Per-player ranks and views: head players are pinned to the top
        // rank and the identity function; non-heads default to the bottom.
        const HEAD_RANK: u32 = 1_000_000;
        let mut ranks = vec![0u32; s.n as usize];
        let mut views: Vec<ViewFnId> = vec![family.null_id().clone(); s.n as usize];
        for i in 0..s.m {
            ranks[i as usize] = HEAD_RANK;
            views[i as usize] = family.identity_id().clone();
        }
        for (idx, i) in (s.m..s.n).enumerate() {
            ranks[i as usize] = (s.n - s.m) as u32 - idx as u32;
        }
        for p in &self.players {
            let field = format!("players[id={}]", p.id);
            if p.id >= s.n {
                return Err(err(&field, format!("id out of range (n = {})", s.n)));
            }
            if p.id < s.m {
                return Err(err(
                    &field,
                    "head players are fixed to the top credential and identity view",
                ));
            }
            if p.rank >= HEAD_RANK {
                return Err(err(&field, "rank collides with the head credential"));
            }
            let view = ViewFnId(p.view.clone());
            family
                .get(&view)
                .map_err(|e| err(&field, e.to_string()))?;
            ranks[p.id as usize] = p.rank;
            views[p.id as usize] = view;
        }

        // Players are ordered with non-increasing credentials, and the view
        // assignment must respect the hierarchy.
        for i in 1..s.n as usize {
            if ranks[i] > ranks[i - 1] {
                return Err(err(
                    &format!("players[id={i}]"),
                    format!(
                        "rank {} exceeds rank {} of player {}; ids must have non-increasing credentials",
                        ranks[i],
                        ranks[i - 1],
                        i - 1
                    ),
                ));
            }
        }
        for i in 0..s.n as usize {
            for j in 0..s.n as usize {
                if ranks[i] == ranks[j] && views[i] != views[j] {
                    return Err(err(
                        &format!("players[id={j}]"),
                        format!("players {i} and {j} share a credential but differ in view"),
                    ));
                }
                if ranks[i] < ranks[j] {
                    let ok = family
                        .leq(&views[i], &views[j])
                        .map_err(|e| err("players", e.to_string()))?;
                    if !ok {
                        return Err(err(
                            &format!("players[id={i}]"),
                            format!(
                                "view {} is not implied by higher-credential view {}",
                                views[i], views[j]
                            ),
                        ));
                    }
                }
            }
        }

        let credentials: Vec<Credential> =
            ranks.iter().map(|r| Credential::from_rank(*r)).collect();
        let mut psi = ViewAssignment::new();
        for (cred, view) in credentials.iter().zip(views.iter()) {
            psi.insert(cred, view.clone());
        }

        // Adversary wiring.
        let adv = &self.adversary;
        let mut behaviors = vec![Behavior::Honest; s.n as usize];
        let mut members = BTreeSet::new();
        for (idx, raw) in adv.members.iter().enumerate() {
            if *raw >= s.n {
                return Err(err(
                    &format!("adversary.members[{idx}]"),
                    format!("player id {raw} out of range (n = {})", s.n),
                ));
            }
            if !members.insert(PlayerId(*raw)) {
                return Err(err(
                    &format!("adversary.members[{idx}]"),
                    "duplicate member",
                ));
            }
        }
        let mut directives = AdversaryDirectives {
            members: members.clone(),
            fork_to_orphan: adv.fork_to_orphan,
            double_proposal: adv.double_proposal,
            wrong_key: None,
        };
        match adv.mode.as_str() {
            "none" => {
                if !members.is_empty() {
                    return Err(err("adversary.members", "members listed but mode is none"));
                }
            }
            "crash" => {
                if variant != Variant::Cft {
                    return Err(err("adversary.mode", "crash faults belong to the cft variant"));
                }
                if adv.crash_rounds.len() != adv.members.len() {
                    return Err(err(
                        "adversary.crash-rounds",
                        "one crash round per member required",
                    ));
                }
                if 2 * members.len() as u64 >= s.n as u64 {
                    return Err(err(
                        "adversary.members",
                        format!("crash adversary needs 2*|A| < n; |A| = {}", members.len()),
                    ));
                }
                for (member, at_round) in adv.members.iter().zip(adv.crash_rounds.iter()) {
                    behaviors[*member as usize] = Behavior::Crash { at_round: *at_round };
                }
            }
            "rational" => {
                if variant != Variant::Rft {
                    return Err(err(
                        "adversary.mode",
                        "rational faults belong to the rft variant",
                    ));
                }
                if 3 * members.len() as u64 >= s.n as u64 {
                    return Err(err(
                        "adversary.members",
                        format!("rational adversary needs 3*|A| < n; |A| = {}", members.len()),
                    ));
                }
                let beta1 = adv
                    .beta1
                    .ok_or_else(|| err("adversary.beta1", "required in rational mode"))?;
                if beta1.den == 0 || beta1.num == 0 || beta1.num >= beta1.den {
                    return Err(err("adversary.beta1", "must satisfy 0 < beta1 < 1"));
                }
                if let Some(beta2) = adv.beta2 {
                    let sum = beta1.to_ratio() + beta2.to_ratio();
                    if sum != Rational::new(1, 1) {
                        return Err(err("adversary.beta2", "beta1 + beta2 must equal 1"));
                    }
                }
                for member in &members {
                    behaviors[member.0 as usize] = Behavior::Rational;
                }
                if let Some(wk) = &adv.wrong_key {
                    if wk.victim >= s.n {
                        return Err(err("adversary.wrong-key.victim", "player id out of range"));
                    }
                    let victim = PlayerId(wk.victim);
                    if members.contains(&victim) {
                        return Err(err(
                            "adversary.wrong-key.victim",
                            "victim must be an honest player",
                        ));
                    }
                    let f = ViewFnId(wk.function.clone());
                    family
                        .get(&f)
                        .map_err(|e| err("adversary.wrong-key.function", e.to_string()))?;
                    let leader = elect_leader(wk.epoch, s.m)
                        .map_err(|e| err("adversary.wrong-key.epoch", e.to_string()))?;
                    if !members.contains(&leader) {
                        return Err(err(
                            "adversary.wrong-key.epoch",
                            format!("epoch {} is led by {leader}, not an adversary member", wk.epoch),
                        ));
                    }
                    directives.wrong_key = Some((wk.epoch, victim, f));
                }
            }
            "byzantine-demo" => {
                if variant != Variant::Rft {
                    return Err(err(
                        "adversary.mode",
                        "the key-broadcast demo runs on the rft variant",
                    ));
                }
                if members.len() != 1 {
                    return Err(err("adversary.members", "demo uses exactly one player"));
                }
                let leak_epoch = adv
                    .leak_epoch
                    .ok_or_else(|| err("adversary.leak-epoch", "required in byzantine-demo mode"))?;
                let member = *members.iter().next().unwrap();
                behaviors[member.0 as usize] = Behavior::ByzantineDemo { leak_epoch };
            }
            other => {
                return Err(err("adversary.mode", format!("unknown mode `{other}`")));
            }
        }
        if (0..s.m).all(|i| members.contains(&PlayerId(i))) {
            return Err(err("adversary.members", "at least one head player must be honest"));
        }

        // Workload.
        let workload = match self.workload.mode.as_str() {
            "random" => WorkloadPlan::Random {
                txs_per_epoch: self.workload.txs_per_epoch,
                max_amount: self.workload.max_amount.max(1),
            },
            "scripted" => {
                let mut script: BTreeMap<u64, crate::views::Payload> = BTreeMap::new();
                for (idx, entry) in self.workload.script.iter().enumerate() {
                    let txs = entry
                        .txs
                        .iter()
                        .map(|t| crate::views::Transaction {
                            sender: AccountId(t.sender.clone()),
                            receiver: AccountId(t.receiver.clone()),
                            amount: t.amount,
                            nonce: t.nonce,
                        })
                        .collect();
                    let payload = crate::views::Payload::new(txs)
                        .map_err(|e| err(&format!("workload.script[{idx}]"), e.to_string()))?;
                    if script.insert(entry.epoch, payload).is_some() {
                        return Err(err(
                            &format!("workload.script[{idx}]"),
                            format!("duplicate epoch {}", entry.epoch),
                        ));
                    }
                }
                WorkloadPlan::Scripted(script)
            }
            other => return Err(err("workload.mode", format!("unknown mode `{other}`"))),
        };

        let genesis_balances: BTreeMap<AccountId, u64> = self
            .accounts
            .iter()
            .map(|(k, v)| (AccountId(k.clone()), *v))
            .collect();

        let revenue_model = RevenueModel {
            block_reward: adv.block_reward,
            fee_per_tx: adv.fee_per_tx,
            max_txs_per_payload: adv.max_txs_per_payload,
            adversary_accounts: adv
                .adversary_accounts
                .iter()
                .map(|a| AccountId(a.clone()))
                .collect(),
            max_adversary_gain: adv.max_adversary_gain,
        };

        let genesis = GenesisBlock {
            players: s.n,
            head_players: s.m,
            credentials: credentials.clone(),
            family_digest: hash(&family.digest_bytes()),
            psi: psi.clone(),
            variant,
        };
        let genesis_digest = genesis.digest();
        let run_seed = run_seed_bytes(s.seed);
        let verify_keys = (0..s.n)
            .map(|i| SigningKey::from_seed(PlayerId(i), &run_seed).verify_key())
            .collect();

        let ctx = ProtocolContext {
            variant,
            n: s.n,
            m: s.m,
            family,
            psi,
            credentials,
            genesis,
            genesis_digest,
            verify_keys,
            genesis_balances,
            verkey_enabled: self.protocol.verkey,
            clock: EpochClock { rounds_per_epoch: rpe },
            adversary: directives,
        };

        Ok(Setup {
            ctx,
            behaviors,
            epochs: s.epochs,
            seed: s.seed,
            net: NetworkConfig {
                delta: self.network.delta,
                gst: self.network.gst,
                policy,
            },
            echo: self.network.echo,
            workload,
            revenue_model,
            beta1: adv.beta1.map(|b| b.to_ratio()),
        })
    }
}

/// Seed bytes every per-player key derivation uses.
pub fn run_seed_bytes(seed: u64) -> Vec<u8> {
    let mut bytes = b"run-seed:".to_vec();
    bytes.extend_from_slice(&seed.to_be_bytes());
    bytes
}

/// How payloads are produced for head players.
#[derive(Debug, Clone)]
pub enum WorkloadPlan {
    Random { txs_per_epoch: u32, max_amount: u64 },
    Scripted(BTreeMap<u64, crate::views::Payload>),
}

/// Validated, runnable form of a scenario.
#[derive(Debug)]
pub struct Setup {
    pub ctx: ProtocolContext,
    pub behaviors: Vec<Behavior>,
    pub epochs: u64,
    pub seed: u64,
    pub net: NetworkConfig,
    pub echo: bool,
    pub workload: WorkloadPlan,
    pub revenue_model: RevenueModel,
    pub beta1: Option<Rational>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenarios;

    #[test]
    fn builtin_scenarios_validate() {
        for cfg in [
            scenarios::cft_honest(4, 2, 10, 42),
            scenarios::cft_crash(5, 2, 12, 7, &[(4, 6)]),
            scenarios::rft_rational(6, 2, 12, 11, &[1]),
            scenarios::identity_everyone(4, 2, 8, 3),
        ] {
            cfg.build().unwrap_or_else(|e| panic!("{}: {e}", cfg.scenario.name));
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = scenarios::rft_rational(6, 2, 12, 11, &[1]);
        let text = cfg.to_toml();
        let back = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.scenario.name, back.scenario.name);
        assert_eq!(cfg.adversary.members, back.adversary.members);
        back.build().unwrap();
    }

    #[test]
    fn rejects_out_of_range_member_with_field_diagnostic() {
        let mut cfg = scenarios::rft_rational(6, 2, 12, 11, &[1]);
        cfg.adversary.members = vec![9];
        let e = cfg.build().unwrap_err();
        assert_eq!(e.field, "adversary.members[0]");
    }

    #[test]
    fn rejects_crash_majority() {
        let mut cfg = scenarios::cft_crash(4, 2, 10, 7, &[(2, 0), (3, 0)]);
        cfg.adversary.members = vec![1, 2, 3];
        cfg.adversary.crash_rounds = vec![0, 0, 0];
        let e = cfg.build().unwrap_err();
        assert!(e.to_string().contains("2*|A| < n"), "{e}");
    }

    #[test]
    fn rejects_rational_third() {
        let cfg = scenarios::rft_rational(6, 3, 12, 11, &[1, 2]);
        let e = cfg.build().unwrap_err();
        assert!(e.to_string().contains("3*|A| < n"), "{e}");
    }

    #[test]
    fn rejects_all_heads_faulty() {
        let mut cfg = scenarios::rft_rational(7, 2, 12, 11, &[0, 1]);
        cfg.adversary.members = vec![0, 1];
        let e = cfg.build().unwrap_err();
        assert!(e.to_string().contains("head player"), "{e}");
    }

    #[test]
    fn rejects_non_monotone_assignment() {
        let mut cfg = scenarios::cft_honest(5, 2, 10, 42);
        // Higher rank gets token_sum, lower rank gets party_filter:
        // incomparable under the hierarchy.
        cfg.players = vec![
            PlayerSpec {
                id: 2,
                rank: 10,
                view: "token_sum".into(),
            },
            PlayerSpec {
                id: 3,
                rank: 5,
                view: "party_filter".into(),
            },
            PlayerSpec {
                id: 4,
                rank: 1,
                view: "null".into(),
            },
        ];
        let e = cfg.build().unwrap_err();
        assert!(e.to_string().contains("not implied"), "{e}");
    }

    #[test]
    fn rejects_beta_sum_mismatch() {
        let mut cfg = scenarios::rft_rational(6, 2, 12, 11, &[1]);
        cfg.adversary.beta2 = Some(RatioSpec { num: 1, den: 3 });
        let e = cfg.build().unwrap_err();
        assert!(e.to_string().contains("beta1 + beta2"), "{e}");
    }
}
