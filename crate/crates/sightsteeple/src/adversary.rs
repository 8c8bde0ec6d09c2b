//! Rational adversary economics: revenue, the per-epoch utility function and
//! the finite dominant-strategy check for rational leaders.
//!
//! Utilities are exact rationals. A strategy's payoff is measured from the
//! block it actually announces: zero when the block is not notarized,
//! otherwise a convex combination of normalized revenue and the adversary's
//! average view depth.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use num_traits::Zero;
use serde::Serialize;

use crate::chain::{
    build_metablock_rft_honest, build_metablock_rft_rational, build_metablock_rft_wrong_key,
    BalanceBook, BlockBuildInput, GenesisBlock, Metablock, Variant,
};
use crate::consensus::{
    rft_content_verdict, AdversaryDirectives, EpochClock, ProtocolContext,
};
use crate::crypto::{hash, pke_decrypt, FeAuthority, FunctionKey, PkeKey, PlayerId, SigningKey};
use crate::views::{AccountId, Credential, Payload, ViewAssignment, ViewFamily, ViewFnId};
use crate::wire::Wire;

pub type Rational = Ratio<i128>;

/// Revenue components and their configured maxima; together they normalize
/// the revenue to [0, 1].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RevenueModel {
    /// Reward collected by the proposer when its block confirms.
    pub block_reward: u64,
    /// Per-transaction fee collected by the proposer.
    pub fee_per_tx: u64,
    /// Cap used to normalize the fee component.
    pub max_txs_per_payload: u64,
    /// Accounts controlled by the adversary; their outgoing transfers count
    /// as adversary gain, double spends included.
    pub adversary_accounts: BTreeSet<AccountId>,
    /// Cap used to normalize the adversary-transaction component.
    pub max_adversary_gain: u64,
}

impl RevenueModel {
    pub fn disabled() -> Self {
        RevenueModel {
            block_reward: 0,
            fee_per_tx: 0,
            max_txs_per_payload: 0,
            adversary_accounts: BTreeSet::new(),
            max_adversary_gain: 0,
        }
    }

    fn max_total(&self) -> u64 {
        self.block_reward + self.fee_per_tx * self.max_txs_per_payload + self.max_adversary_gain
    }
}

/// Normalized revenue of a payload for the adversary.
pub fn revenue(payload: &Payload, proposer_is_adversary: bool, model: &RevenueModel) -> Rational {
    let max = model.max_total();
    if max == 0 {
        return Rational::zero();
    }
    let mut total: u64 = 0;
    if proposer_is_adversary {
        total += model.block_reward;
        total += model.fee_per_tx * (payload.len() as u64).min(model.max_txs_per_payload);
    }
    let gain: u64 = payload
        .txs()
        .iter()
        .filter(|tx| model.adversary_accounts.contains(&tx.sender))
        .map(|tx| tx.amount)
        .sum();
    total += gain.min(model.max_adversary_gain);
    Rational::new(total.min(max) as i128, max as i128)
}

/// The per-epoch adversary utility.
///
/// `received` lists, per adversary member, the function whose key that
/// member actually received in the block's envelope.
pub fn utility(
    family: &ViewFamily,
    received: &[ViewFnId],
    tau: Rational,
    notarized: bool,
    beta1: Rational,
) -> Rational {
    if !notarized {
        return Rational::zero();
    }
    let beta2 = Rational::new(1, 1) - beta1;
    let view_term = if received.is_empty() {
        Rational::zero()
    } else {
        let span = family
            .dist(family.null_id(), family.identity_id())
            .expect("bounds hold in a valid family") as i128;
        let mut sum = Rational::zero();
        for f in received {
            let d = family.dist(family.null_id(), f).expect("null below all") as i128;
            sum += Rational::new(d, span);
        }
        sum / Rational::new(received.len() as i128, 1)
    };
    beta1 * tau + beta2 * view_term
}

/// One enumerated proposal strategy of a rational leader.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Strategy {
    /// Propose the block an honest leader would.
    HonestEquivalent,
    /// The rational block, with an honest player's key swapped out.
    WrongKey { victim: PlayerId, function: ViewFnId },
    /// The rational block: correct keys for honest players, identity keys
    /// for adversary members.
    RationalBlock,
    /// Propose nothing.
    Abstain,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::HonestEquivalent => write!(f, "honest-equivalent"),
            Strategy::WrongKey { victim, function } => {
                write!(f, "wrong-key({victim}, {function})")
            }
            Strategy::RationalBlock => write!(f, "rational-block"),
            Strategy::Abstain => write!(f, "abstain"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub notarized: bool,
    pub yes_votes: u32,
    pub no_votes: u32,
    /// Exact utility, serialized as numerator/denominator.
    #[serde(serialize_with = "serialize_ratio")]
    pub utility: Rational,
}

fn serialize_ratio<S: serde::Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
}

#[derive(Debug, Clone, Serialize)]
pub struct DominanceReport {
    pub leader: PlayerId,
    #[serde(serialize_with = "serialize_ratio")]
    pub beta1: Rational,
    pub outcomes: Vec<StrategyOutcome>,
    /// True when the rational block's utility is maximal over the strategy
    /// set, strictly above abstention.
    pub dominant: bool,
}

/// Inputs for the one-epoch strategy playout.
pub struct PlayoutInput<'a> {
    pub n: u32,
    pub m: u32,
    pub family: &'a ViewFamily,
    pub psi: &'a ViewAssignment,
    pub credentials: &'a [Credential],
    pub adversary: &'a BTreeSet<PlayerId>,
    pub leader: PlayerId,
    pub beta1: Rational,
    pub revenue_model: &'a RevenueModel,
    pub payload: &'a Payload,
    pub genesis_balances: &'a BTreeMap<AccountId, u64>,
}

/// Plays out every enumerated one-epoch strategy from genesis and scores it.
///
/// Honest players vote per the protocol's validation rules (key verification
/// on); rational players abstain. Utility is evaluated on the keys the block
/// actually carries.
pub fn dominance_playout(input: &PlayoutInput<'_>) -> DominanceReport {
    assert!(
        input.adversary.contains(&input.leader),
        "playout leader must be an adversary head player"
    );
    let seed: &[u8] = b"dominance-playout";
    let genesis = GenesisBlock {
        players: input.n,
        head_players: input.m,
        credentials: input.credentials.to_vec(),
        family_digest: hash(&input.family.digest_bytes()),
        psi: input.psi.clone(),
        variant: Variant::Rft,
    };
    let genesis_digest = genesis.digest();
    let sig_keys: Vec<SigningKey> = (0..input.n)
        .map(|i| SigningKey::from_seed(PlayerId(i), seed))
        .collect();
    let pke_keys: Vec<PkeKey> = (0..input.n)
        .map(|i| PkeKey::from_seed(PlayerId(i), seed))
        .collect();
    let ctx = ProtocolContext {
        variant: Variant::Rft,
        n: input.n,
        m: input.m,
        family: input.family.clone(),
        psi: input.psi.clone(),
        credentials: input.credentials.to_vec(),
        genesis,
        genesis_digest,
        verify_keys: sig_keys.iter().map(|k| k.verify_key()).collect(),
        genesis_balances: input.genesis_balances.clone(),
        verkey_enabled: true,
        clock: EpochClock {
            rounds_per_epoch: 2,
        },
        adversary: AdversaryDirectives {
            members: input.adversary.clone(),
            ..AdversaryDirectives::default()
        },
    };

    let mut strategies = vec![Strategy::HonestEquivalent];
    for victim in 0..input.n {
        let victim = PlayerId(victim);
        if input.adversary.contains(&victim) {
            continue;
        }
        let assigned = ctx.assigned_fn(victim).clone();
        for f in input.family.ids() {
            if *f != assigned {
                strategies.push(Strategy::WrongKey {
                    victim,
                    function: f.clone(),
                });
            }
        }
    }
    strategies.push(Strategy::RationalBlock);
    strategies.push(Strategy::Abstain);

    let mut outcomes = Vec::new();
    let mut authority = FeAuthority::from_seed(input.leader, seed);
    let empty_chain_digest =
        crate::chain::PlayerChain::default().digest(&genesis_digest);
    let chain_digests = vec![empty_chain_digest; input.n as usize];

    for strategy in strategies {
        let instance = authority.setup(1);
        let build = BlockBuildInput {
            epoch: 1,
            parent_digest: genesis_digest,
            payload: input.payload,
            family: input.family,
            psi: input.psi,
            credentials: input.credentials,
            chain_digests: &chain_digests,
            fe_instance: &instance,
        };
        let leader_key = &sig_keys[input.leader.0 as usize];
        let block = match &strategy {
            Strategy::HonestEquivalent => {
                Some(build_metablock_rft_honest(leader_key, &build).unwrap())
            }
            Strategy::RationalBlock => {
                Some(build_metablock_rft_rational(leader_key, &build, input.adversary).unwrap())
            }
            Strategy::WrongKey { victim, function } => Some(
                build_metablock_rft_wrong_key(
                    leader_key,
                    &build,
                    input.adversary,
                    *victim,
                    function,
                )
                .unwrap(),
            ),
            Strategy::Abstain => None,
        };
        outcomes.push(score_block(input, &ctx, &pke_keys, strategy, block));
    }

    let rational_utility = outcomes
        .iter()
        .find(|o| o.strategy == Strategy::RationalBlock)
        .map(|o| o.utility)
        .unwrap();
    let abstain_utility = outcomes
        .iter()
        .find(|o| o.strategy == Strategy::Abstain)
        .map(|o| o.utility)
        .unwrap();
    let dominant = outcomes.iter().all(|o| o.utility <= rational_utility)
        && rational_utility > abstain_utility;

    DominanceReport {
        leader: input.leader,
        beta1: input.beta1,
        outcomes,
        dominant,
    }
}

fn score_block(
    input: &PlayoutInput<'_>,
    ctx: &ProtocolContext,
    pke_keys: &[PkeKey],
    strategy: Strategy,
    block: Option<Metablock>,
) -> StrategyOutcome {
    let Some(block) = block else {
        return StrategyOutcome {
            strategy,
            notarized: false,
            yes_votes: 0,
            no_votes: 0,
            utility: Rational::zero(),
        };
    };
    let book = BalanceBook::new(input.genesis_balances);
    let mut yes = 0u32;
    let mut no = 0u32;
    for i in 0..input.n {
        let player = PlayerId(i);
        if input.adversary.contains(&player) {
            continue; // rational players abstain
        }
        match rft_content_verdict(&block, player, &pke_keys[i as usize], ctx, &book) {
            Ok(()) => yes += 1,
            Err(_) => no += 1,
        }
    }
    let notarized = 3 * yes as u64 >= 2 * input.n as u64 && no == 0;

    let mut received = Vec::new();
    for member in input.adversary {
        if let Some(entry) = block.entry_for(*member) {
            if let Ok(bytes) = pke_decrypt(&entry.key_envelope, &pke_keys[member.0 as usize]) {
                if let Ok(key) = FunctionKey::from_bytes(&bytes) {
                    received.push(key.function_id);
                }
            }
        }
    }
    let tau = revenue(input.payload, true, input.revenue_model);
    let u = utility(input.family, &received, tau, notarized, input.beta1);
    StrategyOutcome {
        strategy,
        notarized,
        yes_votes: yes,
        no_votes: no,
        utility: u,
    }
}

/// Strict privilege escalation: the leaked function sits strictly above the
/// entitlement in the hierarchy.
pub fn leak_escalates(family: &ViewFamily, entitled: &ViewFnId, leaked: &ViewFnId) -> bool {
    family.leq(entitled, leaked).unwrap_or(false) && !family.leq(leaked, entitled).unwrap_or(true)
}

/// Maximal elements of a set of function ids: what a colluding set jointly
/// learns.
pub fn joint_knowledge(family: &ViewFamily, fns: &BTreeSet<ViewFnId>) -> BTreeSet<ViewFnId> {
    fns.iter()
        .filter(|f| {
            !fns.iter()
                .any(|g| *g != **f && family.leq(f, g).unwrap_or(false))
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::views::family_presets::{self, *};
    use crate::views::Transaction;

    fn tx(s: &str, r: &str, amount: u64, nonce: u64) -> Transaction {
        Transaction {
            sender: s.into(),
            receiver: r.into(),
            amount,
            nonce,
        }
    }

    fn model() -> RevenueModel {
        RevenueModel {
            block_reward: 10,
            fee_per_tx: 1,
            max_txs_per_payload: 10,
            adversary_accounts: [AccountId::from("mallory")].into_iter().collect(),
            max_adversary_gain: 30,
        }
    }

    #[test]
    fn revenue_zero_without_components() {
        let p = Payload::new(vec![tx("alice", "bob", 5, 0)]).unwrap();
        assert_eq!(revenue(&p, false, &model()), Rational::zero());
        assert_eq!(revenue(&p, true, &RevenueModel::disabled()), Rational::zero());
    }

    #[test]
    fn revenue_saturates_at_one() {
        let txs: Vec<Transaction> = (0..10)
            .map(|i| tx("mallory", "bob", 3, i))
            .collect();
        let p = Payload::new(txs).unwrap();
        // 10 reward + 10 fees + 30 gain = 50 = max.
        assert_eq!(revenue(&p, true, &model()), Rational::new(1, 1));
    }

    #[test]
    fn revenue_mixed_case_matches_component_sum() {
        let p = Payload::new(vec![tx("mallory", "bob", 7, 0), tx("alice", "bob", 2, 0)]).unwrap();
        // Components: reward 10, fees 2, gain 7; max 50.
        assert_eq!(revenue(&p, true, &model()), Rational::new(19, 50));
        // Non-adversary proposer keeps only the gain component.
        assert_eq!(revenue(&p, false, &model()), Rational::new(7, 50));
    }

    #[test]
    fn utility_of_unnotarized_block_is_zero() {
        let fam = family_presets::default_family(&"alice".into());
        let u = utility(
            &fam,
            &[IDENTITY.into()],
            Rational::new(1, 1),
            false,
            Rational::new(1, 2),
        );
        assert_eq!(u, Rational::zero());
    }

    #[test]
    fn utility_is_one_at_full_revenue_and_identity_keys() {
        let fam = family_presets::default_family(&"alice".into());
        let u = utility(
            &fam,
            &[IDENTITY.into(), IDENTITY.into()],
            Rational::new(1, 1),
            true,
            Rational::new(1, 2),
        );
        assert_eq!(u, Rational::new(1, 1));
    }

    #[test]
    fn psi_keys_give_strictly_less_view_utility_than_identity_keys() {
        // Evaluating the view term by hand: token_sum sits one edge above
        // null and the span is two edges, so its ratio is 1/2.
        let fam = family_presets::default_family(&"alice".into());
        let beta1 = Rational::new(1, 2);
        let tau = Rational::zero();
        let psi_util = utility(&fam, &[TOKEN_SUM.into()], tau, true, beta1);
        let star_util = utility(&fam, &[IDENTITY.into()], tau, true, beta1);
        assert_eq!(psi_util, Rational::new(1, 4));
        assert_eq!(star_util, Rational::new(1, 2));
        assert!(psi_util < star_util);
    }

    #[test]
    fn empty_adversary_view_term_is_zero() {
        let fam = family_presets::default_family(&"alice".into());
        let u = utility(&fam, &[], Rational::new(1, 1), true, Rational::new(1, 2));
        assert_eq!(u, Rational::new(1, 2));
    }

    fn playout_fixture(n: u32, m: u32) -> (ViewFamily, ViewAssignment, Vec<Credential>) {
        let family = family_presets::default_family(&"alice".into());
        let mut psi = ViewAssignment::new();
        let mut credentials = Vec::new();
        for i in 0..n {
            let (rank, f) = if i < m {
                (1000, IDENTITY)
            } else if i % 2 == 0 {
                (10, TOKEN_SUM)
            } else {
                (1, NULL)
            };
            let cred = Credential::from_rank(rank);
            psi.insert(&cred, f.into());
            credentials.push(cred);
        }
        (family, psi, credentials)
    }

    #[test]
    fn rational_block_dominates_the_strategy_set() {
        let (family, psi, credentials) = playout_fixture(6, 2);
        let adversary: BTreeSet<PlayerId> = [PlayerId(1)].into_iter().collect();
        let payload = Payload::new(vec![tx("mallory", "bob", 5, 0)]).unwrap();
        let mut balances = BTreeMap::new();
        balances.insert(AccountId::from("mallory"), 100);
        for beta1 in [Rational::new(1, 10), Rational::new(1, 2), Rational::new(9, 10)] {
            let report = dominance_playout(&PlayoutInput {
                n: 6,
                m: 2,
                family: &family,
                psi: &psi,
                credentials: &credentials,
                adversary: &adversary,
                leader: PlayerId(1),
                beta1,
                revenue_model: &model(),
                payload: &payload,
                genesis_balances: &balances,
            });
            assert!(report.dominant, "beta1 = {beta1}: {report:?}");
            // Every wrong-key strategy fails notarization outright.
            for o in &report.outcomes {
                if matches!(o.strategy, Strategy::WrongKey { .. }) {
                    assert!(!o.notarized);
                    assert!(o.utility.is_zero());
                    assert!(o.no_votes >= 1);
                }
            }
        }
    }

    #[test]
    fn abstention_keeps_honest_supermajority_sufficient() {
        // n = 6, one rational player: five honest yes votes clear the
        // two-thirds threshold (15 >= 12).
        let yes = 5u64;
        assert!(3 * yes >= 2 * 6);
    }

    #[test]
    fn escalation_predicate() {
        let fam = family_presets::default_family(&"alice".into());
        assert!(leak_escalates(&fam, &NULL.into(), &TOKEN_SUM.into()));
        assert!(leak_escalates(&fam, &TOKEN_SUM.into(), &IDENTITY.into()));
        assert!(!leak_escalates(&fam, &IDENTITY.into(), &IDENTITY.into()));
        // Incomparable functions do not count as strict escalation.
        assert!(!leak_escalates(&fam, &TOKEN_SUM.into(), &PARTY_FILTER.into()));
    }

    #[test]
    fn joint_knowledge_is_the_maximal_set() {
        let fam = family_presets::default_family(&"alice".into());
        let set: BTreeSet<ViewFnId> = [ViewFnId::from(NULL), TOKEN_SUM.into(), IDENTITY.into()]
            .into_iter()
            .collect();
        let sup = joint_knowledge(&fam, &set);
        assert_eq!(sup, [ViewFnId::from(IDENTITY)].into_iter().collect());

        let set: BTreeSet<ViewFnId> = [ViewFnId::from(PARTY_FILTER), TOKEN_SUM.into()]
            .into_iter()
            .collect();
        let sup = joint_knowledge(&fam, &set);
        assert_eq!(sup.len(), 2);
    }
}
