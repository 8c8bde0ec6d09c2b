//! Per-player protocol state machines for both protocol variants.
//!
//! Each player is an isolated state machine: it consumes delivered message
//! bytes and epoch-boundary ticks, and emits messages to broadcast plus
//! structured events for the trace. Players share nothing; the only
//! cross-player channel is the simulated network.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::chain::{
    build_metablock_cft, build_metablock_rft_honest, build_metablock_rft_rational,
    build_metablock_rft_wrong_key, extend_player_chain, BalanceBook, BlockBuildInput, ChainEvents,
    EntryOutcome, GenesisBlock, Metablock, MetaChainState, PlayerChain, PlayerChainEntry, Variant,
    Verdict, Vote,
};
use crate::crypto::{
    self, fe_decrypt, fe_verify_ct, fe_verify_key, hash, pke_decrypt, FeAuthority, FunctionKey,
    HashDigest, PkeKey, PlayerId, SigningKey, VerifyKey,
};
use crate::views::{
    apply_view, AccountId, Credential, Payload, ViewAssignment, ViewFamily, ViewFnId, ViewValue,
};
use crate::wire::{self, Reader, Wire, WireError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConsensusError {
    #[error("cannot elect a leader from zero head players")]
    NoHeadPlayers,
}

/// Shared epoch clock: all players derive the epoch from the round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochClock {
    pub rounds_per_epoch: u64,
}

impl EpochClock {
    pub fn epoch_of(&self, round: u64) -> u64 {
        round / self.rounds_per_epoch
    }

    pub fn epoch_start_round(&self, epoch: u64) -> u64 {
        epoch * self.rounds_per_epoch
    }

    pub fn is_epoch_start(&self, round: u64) -> bool {
        round % self.rounds_per_epoch == 0
    }
}

/// Leader election: hash of the canonical 8-byte big-endian epoch encoding,
/// reduced modulo the head player count.
pub fn elect_leader(epoch: u64, m: u32) -> Result<PlayerId, ConsensusError> {
    if m == 0 {
        return Err(ConsensusError::NoHeadPlayers);
    }
    let digest = hash(&epoch.to_be_bytes());
    let word = u64::from_be_bytes(digest.0[..8].try_into().unwrap());
    Ok(PlayerId((word % m as u64) as u32))
}

/// What a player does when it deviates from the protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Behavior {
    Honest,
    /// Permanently silent from the given round on.
    Crash { at_round: u64 },
    /// Utility-maximizing deviation (RFT only).
    Rational,
    /// Behaves honestly except for a post-finalization key broadcast.
    /// Demonstration mode only.
    ByzantineDemo { leak_epoch: u64 },
}

impl Behavior {
    pub fn is_adversary(&self) -> bool {
        !matches!(self, Behavior::Honest)
    }
}

/// Adversary-wide directives shared by rational players.
#[derive(Debug, Clone, Default)]
pub struct AdversaryDirectives {
    pub members: BTreeSet<PlayerId>,
    /// Propose on top of the longest tip's parent instead of the tip.
    pub fork_to_orphan: bool,
    /// Announce blocks for two queued payloads in one led epoch.
    pub double_proposal: bool,
    /// One-shot wrong-key swap: (epoch, victim, wrong function).
    pub wrong_key: Option<(u64, PlayerId, ViewFnId)>,
}

/// Immutable per-run context shared read-only by every player.
#[derive(Debug)]
pub struct ProtocolContext {
    pub variant: Variant,
    pub n: u32,
    pub m: u32,
    pub family: ViewFamily,
    pub psi: ViewAssignment,
    pub credentials: Vec<Credential>,
    pub genesis: GenesisBlock,
    pub genesis_digest: HashDigest,
    pub verify_keys: Vec<VerifyKey>,
    pub genesis_balances: BTreeMap<AccountId, u64>,
    pub verkey_enabled: bool,
    pub clock: EpochClock,
    pub adversary: AdversaryDirectives,
}

impl ProtocolContext {
    pub fn is_head(&self, player: PlayerId) -> bool {
        player.0 < self.m
    }

    pub fn assigned_fn(&self, player: PlayerId) -> &ViewFnId {
        self.psi
            .get(&self.credentials[player.0 as usize])
            .expect("every player credential is registered")
    }
}

/// Network-visible protocol messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Proposal(Metablock),
    Vote(Vote),
    /// Demonstration-only broadcast of a recovered function key.
    KeyLeak {
        from: PlayerId,
        epoch: u64,
        key: FunctionKey,
    },
}

impl Wire for Message {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x12);
        match self {
            Message::Proposal(b) => {
                wire::put_u8(out, 0);
                b.encode(out);
            }
            Message::Vote(v) => {
                wire::put_u8(out, 1);
                v.encode(out);
            }
            Message::KeyLeak { from, epoch, key } => {
                wire::put_u8(out, 2);
                wire::put_u32(out, from.0);
                wire::put_u64(out, *epoch);
                key.encode(out);
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x12)?;
        let offset = r.offset();
        Ok(match r.u8()? {
            0 => Message::Proposal(Metablock::decode(r)?),
            1 => Message::Vote(Vote::decode(r)?),
            2 => Message::KeyLeak {
                from: PlayerId(r.u32()?),
                epoch: r.u64()?,
                key: FunctionKey::decode(r)?,
            },
            d => return Err(WireError::BadDiscriminant(d, offset)),
        })
    }
}

/// Kind of block a leader announced; recorded in traces and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    Honest,
    Rational,
    WrongKey,
}

/// Structured events a player emits while stepping; the harness turns these
/// into trace lines.
#[derive(Debug, Clone)]
pub enum PlayerEvent {
    Propose {
        epoch: u64,
        digest: HashDigest,
        kind: ProposalKind,
        parent: HashDigest,
    },
    Vote {
        epoch: u64,
        digest: HashDigest,
        verdict: Option<Verdict>,
    },
    Notarize {
        epoch: u64,
        digest: HashDigest,
    },
    Finalize {
        epoch: u64,
        digest: HashDigest,
    },
    Leak {
        epoch: u64,
        function: ViewFnId,
    },
    Drop {
        reason: String,
    },
    FinalityConflict {
        detail: String,
    },
}

/// Output of one player step.
#[derive(Debug, Default)]
pub struct StepOutput {
    /// Newly originated messages; the harness encodes and broadcasts them.
    pub outgoing: Vec<Message>,
    /// First-seen messages to rebroadcast byte-exactly.
    pub echoes: Vec<Arc<Vec<u8>>>,
    pub events: Vec<PlayerEvent>,
}

/// One consensus participant.
pub struct PlayerState {
    pub id: PlayerId,
    pub behavior: Behavior,
    pub sig_key: SigningKey,
    pub pke_key: PkeKey,
    pub fe_authority: FeAuthority,
    pub chain: MetaChainState,
    pub derived: PlayerChain,
    /// Balances replayed from the derived chain; meaningful for players with
    /// payload-shaped views (head players).
    pub book: BalanceBook,
    /// Function keys recovered while deriving, by epoch.
    pub recovered_keys: BTreeMap<u64, FunctionKey>,
    /// Keys observed from demonstration leaks: (origin, epoch, key).
    pub observed_leaks: Vec<(PlayerId, u64, FunctionKey)>,
    pub payload_queue: VecDeque<Payload>,
    /// Message digests already seen; echo-once memory.
    seen: BTreeSet<HashDigest>,
    /// First proposal latched per epoch.
    proposal_latch: BTreeMap<u64, HashDigest>,
    /// Epochs this player has voted in.
    voted: BTreeSet<u64>,
    leak_sent: bool,
}

impl PlayerState {
    pub fn new(id: PlayerId, behavior: Behavior, ctx: &ProtocolContext, run_seed: &[u8]) -> Self {
        PlayerState {
            id,
            behavior,
            sig_key: SigningKey::from_seed(id, run_seed),
            pke_key: PkeKey::from_seed(id, run_seed),
            fe_authority: FeAuthority::from_seed(id, run_seed),
            chain: MetaChainState::new(ctx.variant, ctx.n, ctx.genesis_digest),
            derived: PlayerChain::default(),
            book: BalanceBook::new(&ctx.genesis_balances),
            recovered_keys: BTreeMap::new(),
            observed_leaks: Vec::new(),
            payload_queue: VecDeque::new(),
            seen: BTreeSet::new(),
            proposal_latch: BTreeMap::new(),
            voted: BTreeSet::new(),
            leak_sent: false,
        }
    }

    pub fn is_crashed(&self, round: u64) -> bool {
        matches!(self.behavior, Behavior::Crash { at_round } if round >= at_round)
    }

    pub fn is_rational(&self) -> bool {
        matches!(self.behavior, Behavior::Rational)
    }

    fn acts_honestly(&self) -> bool {
        matches!(
            self.behavior,
            Behavior::Honest | Behavior::ByzantineDemo { .. } | Behavior::Crash { .. }
        )
    }

    /// Epoch-boundary hook: leaders propose, the demo player checks whether
    /// its leak is due.
    pub fn on_epoch_start(&mut self, ctx: &ProtocolContext, epoch: u64, round: u64) -> StepOutput {
        let mut out = StepOutput::default();
        if self.is_crashed(round) {
            return out;
        }

        if let Behavior::ByzantineDemo { leak_epoch } = self.behavior {
            self.maybe_leak(leak_epoch, &mut out);
        }

        let leader = elect_leader(epoch, ctx.m).expect("m >= 1 checked at config time");
        if leader != self.id {
            return out;
        }

        if self.is_rational() {
            self.propose_rational(ctx, epoch, &mut out);
        } else {
            self.propose_honest(ctx, epoch, &mut out);
        }
        out
    }

    fn maybe_leak(&mut self, leak_epoch: u64, out: &mut StepOutput) {
        if self.leak_sent {
            return;
        }
        let finalized = self
            .derived
            .entries
            .iter()
            .any(|e: &PlayerChainEntry| e.epoch == leak_epoch);
        if !finalized {
            return;
        }
        if let Some(key) = self.recovered_keys.get(&leak_epoch) {
            self.leak_sent = true;
            out.events.push(PlayerEvent::Leak {
                epoch: leak_epoch,
                function: key.function_id.clone(),
            });
            let msg = Message::KeyLeak {
                from: self.id,
                epoch: leak_epoch,
                key: key.clone(),
            };
            self.remember(&msg.to_bytes());
            out.outgoing.push(msg);
        }
    }

    /// Payloads of every block from genesis (exclusive) down to `tip`, read
    /// through this head player's own envelopes.
    fn branch_payloads(&self, ctx: &ProtocolContext, tip: &HashDigest) -> Vec<(u64, Payload)> {
        let mut digests = Vec::new();
        let mut cur = *tip;
        while cur != ctx.genesis_digest {
            let Some(block) = self.chain.block(&cur) else {
                break;
            };
            digests.push(cur);
            cur = block.parent_digest;
        }
        digests.reverse();
        let mut payloads = Vec::new();
        for d in digests {
            let block = self.chain.block(&d).unwrap();
            let Some(entry) = block.entry_for(self.id) else {
                continue;
            };
            let Ok(key_bytes) = pke_decrypt(&entry.key_envelope, &self.pke_key) else {
                continue;
            };
            let Ok(key) = FunctionKey::from_bytes(&key_bytes) else {
                continue;
            };
            if let Ok(view) = fe_decrypt(&ctx.family, &key, &block.fe_ciphertext) {
                if let ViewValue::FullPayload(p) = view.value {
                    payloads.push((block.epoch, p));
                }
            }
        }
        payloads
    }

    /// `H*(chain_i^{e-1})` for every player, as entitled by psi, along the
    /// branch ending at `parent`.
    fn chain_digests_for(&self, ctx: &ProtocolContext, parent: &HashDigest) -> Vec<HashDigest> {
        let payloads = self.branch_payloads(ctx, parent);
        (0..ctx.n)
            .map(|i| {
                let f = ctx.assigned_fn(PlayerId(i));
                entitled_chain(&ctx.family, f, &ctx.genesis_digest, &payloads)
                    .digest(&ctx.genesis_digest)
            })
            .collect()
    }

    fn propose_honest(&mut self, ctx: &ProtocolContext, epoch: u64, out: &mut StepOutput) {
        let (parent, _) = self.chain.longest_notarized_tip();
        let payload = self.payload_queue.pop_front().unwrap_or_else(Payload::empty);
        let digests = self.chain_digests_for(ctx, &parent);
        let instance = self.fe_authority.setup(epoch);
        let input = BlockBuildInput {
            epoch,
            parent_digest: parent,
            payload: &payload,
            family: &ctx.family,
            psi: &ctx.psi,
            credentials: &ctx.credentials,
            chain_digests: &digests,
            fe_instance: &instance,
        };
        let block = match ctx.variant {
            Variant::Cft => build_metablock_cft(self.id, &input),
            Variant::Rft => build_metablock_rft_honest(&self.sig_key, &input),
        };
        let block = match block {
            Ok(b) => b,
            Err(e) => {
                out.events.push(PlayerEvent::Drop {
                    reason: format!("proposal build failed: {e}"),
                });
                return;
            }
        };
        self.announce(ctx, epoch, block, ProposalKind::Honest, true, out);
    }

    fn propose_rational(&mut self, ctx: &ProtocolContext, epoch: u64, out: &mut StepOutput) {
        let (tip, _) = self.chain.longest_notarized_tip();
        let parent = if ctx.adversary.fork_to_orphan {
            // Extending an ancestor orphans the tip, when one exists.
            self.chain
                .block(&tip)
                .map(|b| b.parent_digest)
                .unwrap_or(tip)
        } else {
            tip
        };

        let mut payloads = vec![self.payload_queue.pop_front().unwrap_or_else(Payload::empty)];
        if ctx.adversary.double_proposal {
            if let Some(second) = self.payload_queue.pop_front() {
                payloads.push(second);
            }
        }

        let digests = self.chain_digests_for(ctx, &parent);
        for payload in payloads {
            let instance = self.fe_authority.setup(epoch);
            let input = BlockBuildInput {
                epoch,
                parent_digest: parent,
                payload: &payload,
                family: &ctx.family,
                psi: &ctx.psi,
                credentials: &ctx.credentials,
                chain_digests: &digests,
                fe_instance: &instance,
            };
            let wrong_key = ctx
                .adversary
                .wrong_key
                .as_ref()
                .filter(|(e, _, _)| *e == epoch);
            let (block, kind) = match wrong_key {
                Some((_, victim, f)) => (
                    build_metablock_rft_wrong_key(
                        &self.sig_key,
                        &input,
                        &ctx.adversary.members,
                        *victim,
                        f,
                    ),
                    ProposalKind::WrongKey,
                ),
                None => (
                    build_metablock_rft_rational(&self.sig_key, &input, &ctx.adversary.members),
                    ProposalKind::Rational,
                ),
            };
            match block {
                Ok(b) => self.announce(ctx, epoch, b, kind, false, out),
                Err(e) => out.events.push(PlayerEvent::Drop {
                    reason: format!("rational proposal build failed: {e}"),
                }),
            }
        }
    }

    /// Broadcasts a freshly built block, applies it to our own state, and
    /// (for honest leaders) votes for it.
    fn announce(
        &mut self,
        ctx: &ProtocolContext,
        epoch: u64,
        block: Metablock,
        kind: ProposalKind,
        vote_own: bool,
        out: &mut StepOutput,
    ) {
        let digest = block.digest();
        out.events.push(PlayerEvent::Propose {
            epoch,
            digest,
            kind,
            parent: block.parent_digest,
        });
        let msg = Message::Proposal(block.clone());
        self.remember(&msg.to_bytes());
        self.proposal_latch.entry(epoch).or_insert(digest);
        let ev = self.chain.insert_block(block);
        self.absorb_chain_events(ctx, ev, out);
        out.outgoing.push(msg);

        if vote_own && !self.voted.contains(&epoch) {
            self.voted.insert(epoch);
            let vote = match ctx.variant {
                Variant::Cft => Vote::cft(self.id, epoch, digest),
                Variant::Rft => Vote::rft(epoch, digest, Verdict::Yes, &self.sig_key),
            };
            out.events.push(PlayerEvent::Vote {
                epoch,
                digest,
                verdict: vote.verdict,
            });
            let msg = Message::Vote(vote.clone());
            self.remember(&msg.to_bytes());
            let ev = self.chain.add_vote(vote);
            self.absorb_chain_events(ctx, ev, out);
            out.outgoing.push(msg);
        }
    }

    fn remember(&mut self, bytes: &[u8]) {
        self.seen.insert(hash(bytes));
    }

    /// Delivered-message hook: echo once, decode, dispatch.
    pub fn on_message(
        &mut self,
        ctx: &ProtocolContext,
        round: u64,
        bytes: &Arc<Vec<u8>>,
    ) -> StepOutput {
        let mut out = StepOutput::default();
        if self.is_crashed(round) {
            return out;
        }
        let digest = hash(bytes);
        if !self.seen.insert(digest) {
            return out;
        }
        out.echoes.push(Arc::clone(bytes));

        let msg = match Message::from_bytes(bytes) {
            Ok(m) => m,
            Err(e) => {
                out.events.push(PlayerEvent::Drop {
                    reason: format!("undecodable message: {e}"),
                });
                return out;
            }
        };
        match msg {
            Message::Proposal(block) => self.handle_proposal(ctx, round, block, &mut out),
            Message::Vote(vote) => self.handle_vote(ctx, vote, &mut out),
            Message::KeyLeak { from, epoch, key } => {
                self.observed_leaks.push((from, epoch, key));
            }
        }
        out
    }

    fn handle_proposal(
        &mut self,
        ctx: &ProtocolContext,
        round: u64,
        block: Metablock,
        out: &mut StepOutput,
    ) {
        let epoch = block.epoch;
        let digest = block.digest();

        if let Err(reason) = self.structural_checks(ctx, &block) {
            out.events.push(PlayerEvent::Drop { reason });
            return;
        }

        // Head players clear a proposed payload from their own queue so the
        // next leader does not re-propose it.
        if ctx.is_head(self.id) {
            self.dequeue_matching_payload(ctx, &block);
        }

        let ev = self.chain.insert_block(block.clone());
        self.absorb_chain_events(ctx, ev, out);

        // Voting happens only in the block's own epoch, once per epoch, for
        // the first proposal from the scheduled leader.
        let current_epoch = ctx.clock.epoch_of(round);
        if epoch != current_epoch {
            out.events.push(PlayerEvent::Drop {
                reason: format!("proposal for epoch {epoch} received in epoch {current_epoch}"),
            });
            return;
        }
        let latched = self.proposal_latch.entry(epoch).or_insert(digest);
        if *latched != digest {
            return; // second proposal this epoch; tracked but never voted
        }
        if self.voted.contains(&epoch) || !self.acts_honestly() {
            // Rational players abstain: no yes, and never a no.
            return;
        }

        // Streamlet vote rule: the proposal must extend a longest notarized
        // chain we know of.
        let (_, longest) = self.chain.longest_notarized_tip();
        match self.chain.notarized_chain_len(&block.parent_digest) {
            Some(len) if len == longest => {}
            _ => {
                out.events.push(PlayerEvent::Drop {
                    reason: "proposal does not extend a longest notarized chain".into(),
                });
                return;
            }
        }

        self.voted.insert(epoch);
        let vote = match ctx.variant {
            Variant::Cft => Vote::cft(self.id, epoch, digest),
            Variant::Rft => {
                let verdict = match rft_content_verdict(
                    &block,
                    self.id,
                    &self.pke_key,
                    ctx,
                    &self.book,
                ) {
                    Ok(()) => Verdict::Yes,
                    Err(reason) => {
                        out.events.push(PlayerEvent::Drop {
                            reason: format!("validation failed, voting no: {reason}"),
                        });
                        Verdict::No
                    }
                };
                Vote::rft(epoch, digest, verdict, &self.sig_key)
            }
        };
        out.events.push(PlayerEvent::Vote {
            epoch,
            digest,
            verdict: vote.verdict,
        });
        let msg = Message::Vote(vote.clone());
        self.remember(&msg.to_bytes());
        let ev = self.chain.add_vote(vote);
        self.absorb_chain_events(ctx, ev, out);
        out.outgoing.push(msg);
    }

    /// Checks that make a proposal well-formed at all; failures are drops,
    /// never `no` votes.
    fn structural_checks(&self, ctx: &ProtocolContext, block: &Metablock) -> Result<(), String> {
        if block.variant != ctx.variant {
            return Err("variant mismatch".into());
        }
        let scheduled = elect_leader(block.epoch, ctx.m).expect("m >= 1");
        if block.leader != scheduled {
            return Err(format!(
                "proposal names leader {} but epoch {} belongs to {scheduled}",
                block.leader, block.epoch
            ));
        }
        let mut seen_players = BTreeSet::new();
        for e in &block.per_player {
            if e.player.0 >= ctx.n || !seen_players.insert(e.player) {
                return Err("per-player entries do not cover [n] exactly once".into());
            }
        }
        if seen_players.len() != ctx.n as usize {
            return Err("per-player entries do not cover [n] exactly once".into());
        }
        if let Some(parent_epoch) = self.epoch_of_known(ctx, &block.parent_digest) {
            if parent_epoch >= block.epoch {
                return Err("parent epoch not below block epoch".into());
            }
        }
        if ctx.variant == Variant::Rft {
            let vk = &ctx.verify_keys[block.leader.0 as usize];
            let Some(sig) = &block.header_sig else {
                return Err("missing leader signature on header".into());
            };
            if !crypto::verify_sig(&block.header_signing_bytes(), sig, vk) {
                return Err("invalid leader signature on header".into());
            }
            if block.pp.is_none() {
                return Err("missing public parameters".into());
            }
            for entry in &block.per_player {
                let Some(sig) = &entry.sig else {
                    return Err(format!("missing leader signature on entry {}", entry.player));
                };
                if !crypto::verify_sig(
                    &entry.signing_bytes(block.epoch, &block.parent_digest),
                    sig,
                    vk,
                ) {
                    return Err(format!("invalid leader signature on entry {}", entry.player));
                }
            }
        }
        Ok(())
    }

    fn epoch_of_known(&self, ctx: &ProtocolContext, digest: &HashDigest) -> Option<u64> {
        if *digest == ctx.genesis_digest {
            Some(0)
        } else {
            self.chain.block(digest).map(|b| b.epoch)
        }
    }

    fn dequeue_matching_payload(&mut self, ctx: &ProtocolContext, block: &Metablock) {
        let Some(entry) = block.entry_for(self.id) else {
            return;
        };
        let Ok(key_bytes) = pke_decrypt(&entry.key_envelope, &self.pke_key) else {
            return;
        };
        let Ok(key) = FunctionKey::from_bytes(&key_bytes) else {
            return;
        };
        let Ok(view) = fe_decrypt(&ctx.family, &key, &block.fe_ciphertext) else {
            return;
        };
        if let ViewValue::FullPayload(p) = view.value {
            if let Some(pos) = self.payload_queue.iter().position(|q| *q == p) {
                self.payload_queue.remove(pos);
            }
        }
    }

    fn handle_vote(&mut self, ctx: &ProtocolContext, vote: Vote, out: &mut StepOutput) {
        match ctx.variant {
            Variant::Cft => {
                if vote.verdict.is_some() || vote.sig.is_some() {
                    out.events.push(PlayerEvent::Drop {
                        reason: "signed vote in the plain-vote variant".into(),
                    });
                    return;
                }
            }
            Variant::Rft => {
                let (Some(verdict), Some(sig)) = (vote.verdict, &vote.sig) else {
                    out.events.push(PlayerEvent::Drop {
                        reason: "unsigned vote".into(),
                    });
                    return;
                };
                if vote.voter.0 >= ctx.n {
                    out.events.push(PlayerEvent::Drop {
                        reason: "vote from unknown player".into(),
                    });
                    return;
                }
                let vk = &ctx.verify_keys[vote.voter.0 as usize];
                let bytes =
                    Vote::signing_bytes(vote.voter, vote.epoch, &vote.block_digest, verdict);
                if !crypto::verify_sig(&bytes, sig, vk) {
                    out.events.push(PlayerEvent::Drop {
                        reason: "invalid vote signature".into(),
                    });
                    return;
                }
            }
        }
        let ev = self.chain.add_vote(vote);
        self.absorb_chain_events(ctx, ev, out);
    }

    /// Applies notarization/finalization fallout: events, derived-chain
    /// extension and the balance book.
    fn absorb_chain_events(&mut self, ctx: &ProtocolContext, ev: ChainEvents, out: &mut StepOutput) {
        for d in &ev.newly_notarized {
            let epoch = self.chain.block(d).map(|b| b.epoch).unwrap_or(0);
            out.events.push(PlayerEvent::Notarize { epoch, digest: *d });
        }
        for detail in ev.finality_conflicts {
            out.events.push(PlayerEvent::FinalityConflict { detail });
        }
        for d in &ev.newly_finalized {
            let block = self.chain.block(d).expect("finalized blocks are known");
            let epoch = block.epoch;
            out.events.push(PlayerEvent::Finalize { epoch, digest: *d });
            // Rational players accept whatever key they actually received;
            // honest players verify in the RFT variant.
            let verify = ctx.variant == Variant::Rft && ctx.verkey_enabled && !self.is_rational();
            let block = block.clone();
            let recovered = extend_player_chain(
                &mut self.derived,
                &ctx.genesis_digest,
                &block,
                self.id,
                &self.pke_key,
                &ctx.family,
                verify,
            );
            if let Some(key) = recovered {
                self.recovered_keys.insert(epoch, key);
            }
            if let Some(PlayerChainEntry {
                outcome: EntryOutcome::View(view),
                ..
            }) = self.derived.entries.last()
            {
                if let ViewValue::FullPayload(p) = &view.value {
                    self.book.apply_payload(p);
                }
            }
        }
    }
}

/// The RFT content validation an honest player runs before voting:
/// (a) the listed function matches the assignment, (b) the enveloped key
/// verifies for that function, (c) the ciphertext verifies, and (d) head
/// players re-check the payload for double spending against their finalized
/// balances.
pub fn rft_content_verdict(
    block: &Metablock,
    me: PlayerId,
    pke_key: &PkeKey,
    ctx: &ProtocolContext,
    book: &BalanceBook,
) -> Result<(), String> {
    let entry = block
        .entry_for(me)
        .ok_or_else(|| "no entry for this player".to_string())?;
    let assigned = ctx.assigned_fn(me);
    if entry.function_id != *assigned {
        return Err(format!(
            "listed function {} differs from assigned {assigned}",
            entry.function_id
        ));
    }
    let pp = block.pp.as_ref().ok_or("missing public parameters")?;

    let key_bytes =
        pke_decrypt(&entry.key_envelope, pke_key).map_err(|e| format!("envelope: {e}"))?;
    let key = FunctionKey::from_bytes(&key_bytes).map_err(|e| format!("key decode: {e}"))?;
    if ctx.verkey_enabled && !fe_verify_key(pp, assigned, &key) {
        return Err("function key fails verification for the assigned function".into());
    }
    if !fe_verify_ct(pp, &block.fe_ciphertext) {
        return Err("ciphertext fails verification".into());
    }
    if ctx.is_head(me) {
        let view = fe_decrypt(&ctx.family, &key, &block.fe_ciphertext)
            .map_err(|e| format!("decrypt: {e}"))?;
        let ViewValue::FullPayload(payload) = view.value else {
            return Err("head player key does not reveal the payload".into());
        };
        book.validate_payload(&payload)
            .map_err(|e| format!("double spend: {e}"))?;
    }
    Ok(())
}

/// The view chain a player is entitled to under psi, recomputed directly
/// from payloads. Used by leaders to fill in `H*(chain_i)` fields.
pub fn entitled_chain(
    family: &ViewFamily,
    f: &ViewFnId,
    genesis_digest: &HashDigest,
    payloads: &[(u64, Payload)],
) -> PlayerChain {
    let mut chain = PlayerChain::default();
    for (epoch, payload) in payloads {
        let parent_link = chain.tip_link(genesis_digest);
        let view = apply_view(family, f, payload).expect("registered function");
        chain.entries.push(PlayerChainEntry {
            epoch: *epoch,
            parent_link,
            outcome: EntryOutcome::View(view),
        });
    }
    chain
}
