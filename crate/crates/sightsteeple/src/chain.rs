//! Metablocks, votes, the notarized metablock tree and per-player chains.
//!
//! The metachain is a tree of metablocks rooted at the genesis block. Blocks
//! become notarized when their vote tally crosses the variant threshold and
//! final via the three-consecutive-epochs rule; each player then derives its
//! own view chain from the finalized metachain and its key material.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    self, fe_decrypt, fe_encrypt, fe_keygen, fe_verify_key, hash, pke_decrypt, pke_encrypt,
    CryptoError, FeCiphertext, FeInstance, FePublicParams, FunctionKey, HashDigest, PkeCiphertext,
    PkeKey, PlayerId, Signature, SigningKey,
};
use crate::views::{
    apply_view, AccountId, Credential, Payload, PayloadView, ViewAssignment, ViewFamily, ViewFnId,
};
use crate::wire::{self, Reader, Wire, WireError};

/// Protocol variant: crash-fault or rational-fault tolerant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Cft,
    Rft,
}

impl Variant {
    fn wire_tag(self) -> u8 {
        match self {
            Variant::Cft => 0,
            Variant::Rft => 1,
        }
    }

    pub fn fe_scheme_id(self) -> &'static str {
        match self {
            Variant::Cft => crypto::AFE_SCHEME_ID,
            Variant::Rft => crypto::VFE_SCHEME_ID,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::Cft => write!(f, "cft"),
            Variant::Rft => write!(f, "rft"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("leader holds no payload for epoch {0}")]
    MissingPayload(u64),
    #[error("crypto failure: {0}")]
    Crypto(#[from] CryptoError),
    #[error("view failure: {0}")]
    View(#[from] crate::views::ViewError),
}

/// The agreed starting point: players, credentials, view family, assignment
/// and scheme identifiers. Epoch 0 of every chain.
#[derive(Debug, Clone)]
pub struct GenesisBlock {
    pub players: u32,
    pub head_players: u32,
    pub credentials: Vec<Credential>,
    pub family_digest: HashDigest,
    pub psi: ViewAssignment,
    pub variant: Variant,
}

impl GenesisBlock {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        wire::put_u8(&mut out, 0x0d);
        wire::put_u64(&mut out, 0); // epoch
        wire::put_u32(&mut out, self.players);
        wire::put_u32(&mut out, self.head_players);
        wire::put_list(&mut out, &self.credentials, |o, c| c.encode(o));
        self.family_digest.encode(&mut out);
        let entries: Vec<(Vec<u8>, ViewFnId)> = self
            .psi
            .entries()
            .map(|(bits, f)| (bits.clone(), f.clone()))
            .collect();
        wire::put_u32(&mut out, entries.len() as u32);
        for (bits, f) in &entries {
            wire::put_bytes(&mut out, bits);
            f.encode(&mut out);
        }
        wire::put_str(&mut out, crypto::PKE_SCHEME_ID);
        wire::put_str(&mut out, self.variant.fe_scheme_id());
        wire::put_str(&mut out, crypto::HASH_SCHEME_ID);
        wire::put_u8(&mut out, self.variant.wire_tag());
        out
    }

    pub fn digest(&self) -> HashDigest {
        hash(&self.to_bytes())
    }
}

/// Per-player line of a metablock: chain digest, listed view function and
/// the key envelope addressed to that player.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerEntry {
    pub player: PlayerId,
    pub chain_digest: HashDigest,
    pub function_id: ViewFnId,
    pub key_envelope: PkeCiphertext,
    pub sig: Option<Signature>,
}

impl PlayerEntry {
    /// Bytes covered by the per-entry leader signature; bound to the block
    /// position via epoch and parent digest.
    pub fn signing_bytes(&self, epoch: u64, parent: &HashDigest) -> Vec<u8> {
        let mut out = Vec::new();
        wire::put_u8(&mut out, 0x0f);
        wire::put_u64(&mut out, epoch);
        parent.encode(&mut out);
        wire::put_u32(&mut out, self.player.0);
        self.chain_digest.encode(&mut out);
        self.function_id.encode(&mut out);
        self.key_envelope.encode(&mut out);
        out
    }
}

impl Wire for PlayerEntry {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x0f);
        wire::put_u32(out, self.player.0);
        self.chain_digest.encode(out);
        self.function_id.encode(out);
        self.key_envelope.encode(out);
        wire::put_option(out, &self.sig, |o, s| s.encode(o));
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x0f)?;
        Ok(PlayerEntry {
            player: PlayerId(r.u32()?),
            chain_digest: HashDigest::decode(r)?,
            function_id: ViewFnId::decode(r)?,
            key_envelope: PkeCiphertext::decode(r)?,
            sig: r.option(Signature::decode)?,
        })
    }
}

/// The per-epoch super block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metablock {
    pub variant: Variant,
    pub epoch: u64,
    pub parent_digest: HashDigest,
    pub leader: PlayerId,
    /// Explicit in the block only for the RFT variant.
    pub pp: Option<FePublicParams>,
    pub fe_ciphertext: FeCiphertext,
    pub header_sig: Option<Signature>,
    pub per_player: Vec<PlayerEntry>,
}

impl Metablock {
    /// Bytes covered by the header signature.
    pub fn header_signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        wire::put_u8(&mut out, 0x0e);
        wire::put_u8(&mut out, self.variant.wire_tag());
        wire::put_u64(&mut out, self.epoch);
        self.parent_digest.encode(&mut out);
        wire::put_u32(&mut out, self.leader.0);
        wire::put_option(&mut out, &self.pp, |o, pp| pp.encode(o));
        self.fe_ciphertext.encode(&mut out);
        out
    }

    pub fn digest(&self) -> HashDigest {
        hash(&self.to_bytes())
    }

    pub fn entry_for(&self, player: PlayerId) -> Option<&PlayerEntry> {
        self.per_player.iter().find(|e| e.player == player)
    }
}

impl Wire for Metablock {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x10);
        wire::put_u8(out, self.variant.wire_tag());
        wire::put_u64(out, self.epoch);
        self.parent_digest.encode(out);
        wire::put_u32(out, self.leader.0);
        wire::put_option(out, &self.pp, |o, pp| pp.encode(o));
        self.fe_ciphertext.encode(out);
        wire::put_option(out, &self.header_sig, |o, s| s.encode(o));
        wire::put_list(out, &self.per_player, |o, e| e.encode(o));
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x10)?;
        let offset = r.offset();
        let variant = match r.u8()? {
            0 => Variant::Cft,
            1 => Variant::Rft,
            d => return Err(WireError::BadDiscriminant(d, offset)),
        };
        Ok(Metablock {
            variant,
            epoch: r.u64()?,
            parent_digest: HashDigest::decode(r)?,
            leader: PlayerId(r.u32()?),
            pp: r.option(FePublicParams::decode)?,
            fe_ciphertext: FeCiphertext::decode(r)?,
            header_sig: r.option(Signature::decode)?,
            per_player: r.list(PlayerEntry::decode)?,
        })
    }
}

/// Vote verdict, carried only by RFT votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    Yes,
    No,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Yes => write!(f, "yes"),
            Verdict::No => write!(f, "no"),
        }
    }
}

/// A vote: unsigned block acknowledgement in CFT, signed yes/no in RFT.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub voter: PlayerId,
    pub epoch: u64,
    pub block_digest: HashDigest,
    /// `None` for CFT votes (plain acknowledgement tuples).
    pub verdict: Option<Verdict>,
    pub sig: Option<Signature>,
}

impl Vote {
    pub fn signing_bytes(voter: PlayerId, epoch: u64, block: &HashDigest, verdict: Verdict) -> Vec<u8> {
        let mut out = Vec::new();
        wire::put_u8(&mut out, 0x11);
        wire::put_u32(&mut out, voter.0);
        wire::put_u64(&mut out, epoch);
        block.encode(&mut out);
        wire::put_u8(&mut out, if verdict == Verdict::Yes { 0 } else { 1 });
        out
    }

    pub fn cft(voter: PlayerId, epoch: u64, block_digest: HashDigest) -> Vote {
        Vote {
            voter,
            epoch,
            block_digest,
            verdict: None,
            sig: None,
        }
    }

    pub fn rft(epoch: u64, block_digest: HashDigest, verdict: Verdict, key: &SigningKey) -> Vote {
        let bytes = Vote::signing_bytes(key.player, epoch, &block_digest, verdict);
        Vote {
            voter: key.player,
            epoch,
            block_digest,
            verdict: Some(verdict),
            sig: Some(crypto::sign(&bytes, key)),
        }
    }

    pub fn effective_verdict(&self) -> Verdict {
        self.verdict.unwrap_or(Verdict::Yes)
    }
}

impl Wire for Vote {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x11);
        wire::put_u32(out, self.voter.0);
        wire::put_u64(out, self.epoch);
        self.block_digest.encode(out);
        wire::put_option(out, &self.verdict, |o, v| {
            wire::put_u8(o, if *v == Verdict::Yes { 0 } else { 1 })
        });
        wire::put_option(out, &self.sig, |o, s| s.encode(o));
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x11)?;
        Ok(Vote {
            voter: PlayerId(r.u32()?),
            epoch: r.u64()?,
            block_digest: HashDigest::decode(r)?,
            verdict: r.option(|r| {
                let offset = r.offset();
                match r.u8()? {
                    0 => Ok(Verdict::Yes),
                    1 => Ok(Verdict::No),
                    d => Err(WireError::BadDiscriminant(d, offset)),
                }
            })?,
            sig: r.option(Signature::decode)?,
        })
    }
}

#[derive(Debug, Clone, Default)]
struct Tally {
    yes: BTreeSet<PlayerId>,
    no: BTreeSet<PlayerId>,
}

/// Result of folding one vote or block into the chain state.
#[derive(Debug, Default)]
pub struct ChainEvents {
    pub newly_notarized: Vec<HashDigest>,
    pub newly_finalized: Vec<HashDigest>,
    pub finality_conflicts: Vec<String>,
}

impl ChainEvents {
    fn merge(&mut self, other: ChainEvents) {
        self.newly_notarized.extend(other.newly_notarized);
        self.newly_finalized.extend(other.newly_finalized);
        self.finality_conflicts.extend(other.finality_conflicts);
    }
}

/// One player's copy of the metablock tree: blocks, tallies, the notarized
/// set and the finalized path.
#[derive(Debug, Clone)]
pub struct MetaChainState {
    variant: Variant,
    n: u32,
    genesis_digest: HashDigest,
    blocks: BTreeMap<HashDigest, Metablock>,
    tallies: BTreeMap<HashDigest, Tally>,
    notarized: BTreeSet<HashDigest>,
    /// Votes for blocks not yet seen; buffered, not dropped.
    pending_votes: BTreeMap<HashDigest, Vec<Vote>>,
    /// Blocks whose parent is not yet known.
    pending_blocks: BTreeMap<HashDigest, Vec<Metablock>>,
    /// Finalized path from genesis (genesis digest at index 0).
    finalized: Vec<HashDigest>,
}

impl MetaChainState {
    /// Starts from an agreed genesis block, which is notarized and final by
    /// setup-time agreement (its votes are not simulated).
    pub fn new(variant: Variant, n: u32, genesis_digest: HashDigest) -> Self {
        let mut notarized = BTreeSet::new();
        notarized.insert(genesis_digest);
        MetaChainState {
            variant,
            n,
            genesis_digest,
            blocks: BTreeMap::new(),
            tallies: BTreeMap::new(),
            notarized,
            pending_votes: BTreeMap::new(),
            pending_blocks: BTreeMap::new(),
            finalized: vec![genesis_digest],
        }
    }

    pub fn genesis_digest(&self) -> HashDigest {
        self.genesis_digest
    }

    pub fn block(&self, d: &HashDigest) -> Option<&Metablock> {
        self.blocks.get(d)
    }

    pub fn has_block(&self, d: &HashDigest) -> bool {
        *d == self.genesis_digest || self.blocks.contains_key(d)
    }

    pub fn is_notarized(&self, d: &HashDigest) -> bool {
        self.notarized.contains(d)
    }

    pub fn notarized_digests(&self) -> impl Iterator<Item = &HashDigest> {
        self.notarized.iter()
    }

    /// Finalized path excluding genesis.
    pub fn finalized_blocks(&self) -> Vec<&Metablock> {
        self.finalized[1..]
            .iter()
            .map(|d| &self.blocks[d])
            .collect()
    }

    pub fn finalized_path(&self) -> &[HashDigest] {
        &self.finalized
    }

    pub fn finalized_epoch(&self) -> u64 {
        self.finalized
            .last()
            .and_then(|d| self.blocks.get(d))
            .map(|b| b.epoch)
            .unwrap_or(0)
    }

    fn epoch_of(&self, d: &HashDigest) -> Option<u64> {
        if *d == self.genesis_digest {
            Some(0)
        } else {
            self.blocks.get(d).map(|b| b.epoch)
        }
    }

    fn parent_of(&self, d: &HashDigest) -> Option<HashDigest> {
        self.blocks.get(d).map(|b| b.parent_digest)
    }

    /// Number of blocks above genesis when the whole path is notarized.
    pub fn notarized_chain_len(&self, d: &HashDigest) -> Option<u64> {
        let mut len = 0;
        let mut cur = *d;
        loop {
            if !self.notarized.contains(&cur) {
                return None;
            }
            if cur == self.genesis_digest {
                return Some(len);
            }
            cur = self.parent_of(&cur)?;
            len += 1;
        }
    }

    /// The tip every honest proposer extends: longest fully notarized chain,
    /// ties broken by smaller digest.
    pub fn longest_notarized_tip(&self) -> (HashDigest, u64) {
        let mut best = (self.genesis_digest, 0u64);
        for d in &self.notarized {
            if let Some(len) = self.notarized_chain_len(d) {
                if len > best.1 || (len == best.1 && d.0 < best.0 .0) {
                    best = (*d, len);
                }
            }
        }
        best
    }

    /// Inserts a block; orphans are parked until their parent shows up.
    /// Buffered votes for the block are applied on insertion.
    pub fn insert_block(&mut self, block: Metablock) -> ChainEvents {
        let mut events = ChainEvents::default();
        let digest = block.digest();
        if self.blocks.contains_key(&digest) || digest == self.genesis_digest {
            return events;
        }
        if !self.has_block(&block.parent_digest) {
            self.pending_blocks
                .entry(block.parent_digest)
                .or_default()
                .push(block);
            return events;
        }
        self.blocks.insert(digest, block);
        if let Some(votes) = self.pending_votes.remove(&digest) {
            for v in votes {
                events.merge(self.add_vote(v));
            }
        }
        events.merge(self.recheck(digest));
        if let Some(children) = self.pending_blocks.remove(&digest) {
            for child in children {
                events.merge(self.insert_block(child));
            }
        }
        events
    }

    /// Tallies one vote. Duplicate (voter, block, verdict) votes are ignored;
    /// conflicting verdicts from one voter are kept and poison the block.
    pub fn add_vote(&mut self, vote: Vote) -> ChainEvents {
        if !self.blocks.contains_key(&vote.block_digest) {
            self.pending_votes
                .entry(vote.block_digest)
                .or_default()
                .push(vote);
            return ChainEvents::default();
        }
        let digest = vote.block_digest;
        let tally = self.tallies.entry(digest).or_default();
        match vote.effective_verdict() {
            Verdict::Yes => tally.yes.insert(vote.voter),
            Verdict::No => tally.no.insert(vote.voter),
        };
        self.recheck(digest)
    }

    /// Threshold rule: CFT `2*yes >= n`; RFT `3*yes >= 2n` with zero no votes.
    fn meets_threshold(&self, tally: &Tally) -> bool {
        let yes = tally.yes.len() as u64;
        let n = self.n as u64;
        match self.variant {
            Variant::Cft => 2 * yes >= n,
            Variant::Rft => 3 * yes >= 2 * n && tally.no.is_empty(),
        }
    }

    fn recheck(&mut self, digest: HashDigest) -> ChainEvents {
        let mut events = ChainEvents::default();
        if !self.notarized.contains(&digest) {
            if let Some(tally) = self.tallies.get(&digest) {
                if self.meets_threshold(tally) {
                    self.notarized.insert(digest);
                    events.newly_notarized.push(digest);
                    events.merge(self.run_finalization());
                }
            }
        }
        events
    }

    /// Three hash-linked notarized metablocks with consecutive epochs
    /// finalize the prefix up to the second. Only proposed blocks count
    /// toward a triple (the genesis block does not), and the finalized path
    /// only ever extends.
    fn run_finalization(&mut self) -> ChainEvents {
        let mut events = ChainEvents::default();
        let mut best: Option<Vec<HashDigest>> = None;
        for d3 in self.notarized.iter() {
            let Some(b3_epoch) = self.epoch_of(d3) else {
                continue;
            };
            if *d3 == self.genesis_digest {
                continue;
            }
            let Some(d2) = self.parent_of(d3) else {
                continue;
            };
            if !self.notarized.contains(&d2) || d2 == self.genesis_digest {
                continue;
            }
            let Some(e2) = self.epoch_of(&d2) else {
                continue;
            };
            let d1 = match self.parent_of(&d2) {
                Some(d) => d,
                None => continue,
            };
            if !self.notarized.contains(&d1) || d1 == self.genesis_digest {
                continue;
            }
            let Some(e1) = self.epoch_of(&d1) else {
                continue;
            };
            if e1 + 1 != e2 || e2 + 1 != b3_epoch {
                continue;
            }
            // Candidate: path from genesis through d2.
            let mut path = vec![d2];
            let mut cur = d2;
            while cur != self.genesis_digest {
                cur = match self.parent_of(&cur) {
                    Some(p) => p,
                    None => break,
                };
                path.push(cur);
            }
            path.reverse();
            if path[0] != self.genesis_digest {
                continue;
            }
            if best.as_ref().map(|b| b.len()).unwrap_or(0) < path.len() {
                best = Some(path);
            }
        }
        if let Some(candidate) = best {
            if candidate.len() > self.finalized.len() {
                if candidate[..self.finalized.len()] == self.finalized[..] {
                    for d in &candidate[self.finalized.len()..] {
                        events.newly_finalized.push(*d);
                    }
                    self.finalized = candidate;
                } else {
                    events.finality_conflicts.push(format!(
                        "finalized path {} diverges from candidate {}",
                        self.finalized.last().unwrap().short_hex(),
                        candidate.last().unwrap().short_hex()
                    ));
                }
            } else if self.finalized[..candidate.len()] != candidate[..] {
                events.finality_conflicts.push(format!(
                    "candidate path at {} conflicts with finalized prefix",
                    candidate.last().unwrap().short_hex()
                ));
            }
        }
        events
    }

    pub fn yes_count(&self, d: &HashDigest) -> usize {
        self.tallies.get(d).map(|t| t.yes.len()).unwrap_or(0)
    }

    pub fn no_count(&self, d: &HashDigest) -> usize {
        self.tallies.get(d).map(|t| t.no.len()).unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// Player chains
// ---------------------------------------------------------------------------

/// Why a derived chain entry could not be trusted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryFlag {
    EnvelopeNotAddressed,
    KeyVerificationFailed,
    DecryptFailed(String),
}

impl std::fmt::Display for EntryFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EntryFlag::EnvelopeNotAddressed => write!(f, "envelope-not-addressed"),
            EntryFlag::KeyVerificationFailed => write!(f, "key-verification-failed"),
            EntryFlag::DecryptFailed(e) => write!(f, "decrypt-failed: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryOutcome {
    View(PayloadView),
    Flagged(EntryFlag),
}

/// One derived ledger entry: the epoch, the hash link to the parent view and
/// the view itself (or a flag when derivation failed verification).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerChainEntry {
    pub epoch: u64,
    pub parent_link: HashDigest,
    pub outcome: EntryOutcome,
}

impl PlayerChainEntry {
    fn view_bytes(&self) -> Vec<u8> {
        match &self.outcome {
            EntryOutcome::View(v) => v.to_bytes(),
            EntryOutcome::Flagged(_) => {
                let mut out = b"flagged:".to_vec();
                out.extend_from_slice(&self.epoch.to_be_bytes());
                out
            }
        }
    }
}

/// A player's derived blockchain of payload views.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlayerChain {
    pub entries: Vec<PlayerChainEntry>,
}

impl PlayerChain {
    /// The hash link for the next entry: the genesis digest before any
    /// entries exist, afterwards the digest of the latest view.
    pub fn tip_link(&self, genesis_digest: &HashDigest) -> HashDigest {
        match self.entries.last() {
            None => *genesis_digest,
            Some(e) => hash(&e.view_bytes()),
        }
    }

    /// Digest of the whole chain; this is what metablock entries carry as
    /// `H*(chain_i)`.
    pub fn digest(&self, genesis_digest: &HashDigest) -> HashDigest {
        let mut out = Vec::new();
        wire::put_u8(&mut out, 0x13);
        genesis_digest.encode(&mut out);
        wire::put_u32(&mut out, self.entries.len() as u32);
        for e in &self.entries {
            wire::put_u64(&mut out, e.epoch);
            e.parent_link.encode(&mut out);
            wire::put_bytes(&mut out, &e.view_bytes());
        }
        hash(&out)
    }
}

/// Extends a derived chain with one finalized metablock, unwrapping the
/// player's envelope, optionally verifying the key, and decrypting.
/// Verification failures surface as flagged entries, never silently skipped.
/// Returns the recovered key alongside, when one was recovered.
pub fn extend_player_chain(
    chain: &mut PlayerChain,
    genesis_digest: &HashDigest,
    block: &Metablock,
    player: PlayerId,
    pke_key: &PkeKey,
    family: &ViewFamily,
    verify_keys: bool,
) -> Option<FunctionKey> {
    let parent_link = chain.tip_link(genesis_digest);
    let (outcome, key) = derive_entry(block, player, pke_key, family, verify_keys);
    chain.entries.push(PlayerChainEntry {
        epoch: block.epoch,
        parent_link,
        outcome,
    });
    key
}

fn derive_entry(
    block: &Metablock,
    player: PlayerId,
    pke_key: &PkeKey,
    family: &ViewFamily,
    verify_keys: bool,
) -> (EntryOutcome, Option<FunctionKey>) {
    let Some(entry) = block.entry_for(player) else {
        return (EntryOutcome::Flagged(EntryFlag::EnvelopeNotAddressed), None);
    };
    let key_bytes = match pke_decrypt(&entry.key_envelope, pke_key) {
        Ok(b) => b,
        Err(_) => return (EntryOutcome::Flagged(EntryFlag::EnvelopeNotAddressed), None),
    };
    let key = match FunctionKey::from_bytes(&key_bytes) {
        Ok(k) => k,
        Err(e) => {
            return (
                EntryOutcome::Flagged(EntryFlag::DecryptFailed(e.to_string())),
                None,
            )
        }
    };
    if verify_keys {
        let pp = block.pp.as_ref().unwrap_or(&block.fe_ciphertext.instance);
        if !fe_verify_key(pp, &entry.function_id, &key) {
            return (
                EntryOutcome::Flagged(EntryFlag::KeyVerificationFailed),
                Some(key),
            );
        }
    }
    match fe_decrypt(family, &key, &block.fe_ciphertext) {
        Ok(view) => (EntryOutcome::View(view), Some(key)),
        Err(e) => (
            EntryOutcome::Flagged(EntryFlag::DecryptFailed(e.to_string())),
            Some(key),
        ),
    }
}

/// Full derivation of player `i`'s chain from a finalized metachain.
pub fn derive_player_chain(
    player: PlayerId,
    genesis_digest: &HashDigest,
    finalized: &[&Metablock],
    pke_key: &PkeKey,
    family: &ViewFamily,
    verify_keys: bool,
) -> PlayerChain {
    let mut chain = PlayerChain::default();
    for block in finalized {
        extend_player_chain(
            &mut chain,
            genesis_digest,
            block,
            player,
            pke_key,
            family,
            verify_keys,
        );
    }
    chain
}

/// The fully visible chain a head player derives: identical to the ideal
/// chain `chain*` built directly from the payloads.
pub fn ideal_chain(
    family: &ViewFamily,
    identity: &ViewFnId,
    genesis_digest: &HashDigest,
    payloads: &[(u64, Payload)],
) -> PlayerChain {
    let mut chain = PlayerChain::default();
    for (epoch, payload) in payloads {
        let parent_link = chain.tip_link(genesis_digest);
        let view = apply_view(family, identity, payload).expect("identity is registered");
        chain.entries.push(PlayerChainEntry {
            epoch: *epoch,
            parent_link,
            outcome: EntryOutcome::View(view),
        });
    }
    chain
}

// ---------------------------------------------------------------------------
// Token ledger
// ---------------------------------------------------------------------------

/// Account balances replayed from a genesis allocation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BalanceBook {
    balances: BTreeMap<AccountId, u64>,
}

impl BalanceBook {
    pub fn new(genesis: &BTreeMap<AccountId, u64>) -> Self {
        BalanceBook {
            balances: genesis.clone(),
        }
    }

    pub fn balance(&self, account: &AccountId) -> u64 {
        self.balances.get(account).copied().unwrap_or(0)
    }

    /// The double-spend predicate: processing transactions in list order,
    /// every sender must cover its amount from its balance plus earlier
    /// intra-payload inflows, and (sender, nonce) pairs must be unique.
    pub fn validate_payload(&self, payload: &Payload) -> Result<(), String> {
        let mut scratch = self.clone();
        let mut nonces = BTreeSet::new();
        for (i, tx) in payload.txs().iter().enumerate() {
            if !nonces.insert((tx.sender.clone(), tx.nonce)) {
                return Err(format!(
                    "tx {i}: duplicate nonce {} for {}",
                    tx.nonce, tx.sender
                ));
            }
            let have = scratch.balance(&tx.sender);
            if have < tx.amount {
                return Err(format!(
                    "tx {i}: {} spends {} with balance {have}",
                    tx.sender, tx.amount
                ));
            }
            scratch.transfer(tx.sender.clone(), tx.receiver.clone(), tx.amount);
        }
        Ok(())
    }

    /// Applies a payload; callers validate first.
    pub fn apply_payload(&mut self, payload: &Payload) {
        for tx in payload.txs() {
            self.transfer(tx.sender.clone(), tx.receiver.clone(), tx.amount);
        }
    }

    fn transfer(&mut self, from: AccountId, to: AccountId, amount: u64) {
        let src = self.balances.entry(from).or_insert(0);
        *src = src.saturating_sub(amount);
        *self.balances.entry(to).or_insert(0) += amount;
    }
}

// ---------------------------------------------------------------------------
// Metablock builders
// ---------------------------------------------------------------------------

/// Everything a leader needs to assemble a metablock.
pub struct BlockBuildInput<'a> {
    pub epoch: u64,
    pub parent_digest: HashDigest,
    pub payload: &'a Payload,
    pub family: &'a ViewFamily,
    pub psi: &'a ViewAssignment,
    pub credentials: &'a [Credential],
    /// `H*(chain_i^{e-1})` per player, derived along the parent branch.
    pub chain_digests: &'a [HashDigest],
    pub fe_instance: &'a FeInstance,
}

fn build_entries(
    input: &BlockBuildInput<'_>,
    key_for: impl Fn(PlayerId, &ViewFnId) -> Result<FunctionKey, ChainError>,
) -> Result<Vec<PlayerEntry>, ChainError> {
    let mut entries = Vec::with_capacity(input.credentials.len());
    for (i, cred) in input.credentials.iter().enumerate() {
        let player = PlayerId(i as u32);
        let assigned = input.psi.get(cred)?.clone();
        let key = key_for(player, &assigned)?;
        entries.push(PlayerEntry {
            player,
            chain_digest: input.chain_digests[i],
            function_id: assigned,
            key_envelope: pke_encrypt(player, &key.to_bytes()),
            sig: None,
        });
    }
    Ok(entries)
}

/// CFT metablock by an honest head leader: every envelope holds the key for
/// the player's assigned function; nothing is signed.
pub fn build_metablock_cft(
    leader: PlayerId,
    input: &BlockBuildInput<'_>,
) -> Result<Metablock, ChainError> {
    let entries = build_entries(input, |_, f| {
        Ok(fe_keygen(input.fe_instance, input.family, f)?)
    })?;
    Ok(Metablock {
        variant: Variant::Cft,
        epoch: input.epoch,
        parent_digest: input.parent_digest,
        leader,
        pp: None,
        fe_ciphertext: fe_encrypt(input.fe_instance, input.payload),
        header_sig: None,
        per_player: entries,
    })
}

fn sign_block(mut block: Metablock, key: &SigningKey) -> Metablock {
    block.header_sig = Some(crypto::sign(&block.header_signing_bytes(), key));
    let epoch = block.epoch;
    let parent = block.parent_digest;
    for entry in &mut block.per_player {
        entry.sig = Some(crypto::sign(&entry.signing_bytes(epoch, &parent), key));
    }
    block
}

/// RFT metablock by an honest leader: fresh public parameters plus leader
/// signatures on the header and on every entry.
pub fn build_metablock_rft_honest(
    leader_key: &SigningKey,
    input: &BlockBuildInput<'_>,
) -> Result<Metablock, ChainError> {
    let entries = build_entries(input, |_, f| {
        Ok(fe_keygen(input.fe_instance, input.family, f)?)
    })?;
    let block = Metablock {
        variant: Variant::Rft,
        epoch: input.epoch,
        parent_digest: input.parent_digest,
        leader: leader_key.player,
        pp: Some(input.fe_instance.pp.clone()),
        fe_ciphertext: fe_encrypt(input.fe_instance, input.payload),
        header_sig: None,
        per_player: entries,
    };
    Ok(sign_block(block, leader_key))
}

/// RFT metablock by a rational leader: identical to the honest block except
/// every adversary player's envelope holds the identity key.
pub fn build_metablock_rft_rational(
    leader_key: &SigningKey,
    input: &BlockBuildInput<'_>,
    adversary: &BTreeSet<PlayerId>,
) -> Result<Metablock, ChainError> {
    let identity = input.family.identity_id().clone();
    let entries = build_entries(input, |player, f| {
        let f = if adversary.contains(&player) { &identity } else { f };
        Ok(fe_keygen(input.fe_instance, input.family, f)?)
    })?;
    let block = Metablock {
        variant: Variant::Rft,
        epoch: input.epoch,
        parent_digest: input.parent_digest,
        leader: leader_key.player,
        pp: Some(input.fe_instance.pp.clone()),
        fe_ciphertext: fe_encrypt(input.fe_instance, input.payload),
        header_sig: None,
        per_player: entries,
    };
    Ok(sign_block(block, leader_key))
}

/// Wrong-key demo block: the rational block with one honest victim's envelope
/// swapped to a key for `wrong_fn`, while the listed function stays honest.
pub fn build_metablock_rft_wrong_key(
    leader_key: &SigningKey,
    input: &BlockBuildInput<'_>,
    adversary: &BTreeSet<PlayerId>,
    victim: PlayerId,
    wrong_fn: &ViewFnId,
) -> Result<Metablock, ChainError> {
    let identity = input.family.identity_id().clone();
    let entries = build_entries(input, |player, f| {
        let f = if adversary.contains(&player) {
            &identity
        } else if player == victim {
            wrong_fn
        } else {
            f
        };
        Ok(fe_keygen(input.fe_instance, input.family, f)?)
    })?;
    let block = Metablock {
        variant: Variant::Rft,
        epoch: input.epoch,
        parent_digest: input.parent_digest,
        leader: leader_key.player,
        pp: Some(input.fe_instance.pp.clone()),
        fe_ciphertext: fe_encrypt(input.fe_instance, input.payload),
        header_sig: None,
        per_player: entries,
    };
    Ok(sign_block(block, leader_key))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::FeAuthority;
    use crate::views::family_presets::{self, *};
    use crate::views::{Transaction, ViewValue};

    fn tx(s: &str, r: &str, amount: u64, nonce: u64) -> Transaction {
        Transaction {
            sender: s.into(),
            receiver: r.into(),
            amount,
            nonce,
        }
    }

    struct Fixture {
        family: ViewFamily,
        psi: ViewAssignment,
        credentials: Vec<Credential>,
        genesis: GenesisBlock,
        pke_keys: Vec<PkeKey>,
        sig_keys: Vec<SigningKey>,
    }

    /// n=4, m=2 fixture: two head players, one token-sum player, one
    /// null-view player.
    fn fixture() -> Fixture {
        let family = family_presets::default_family(&"alice".into());
        let assignments = [IDENTITY, IDENTITY, TOKEN_SUM, NULL];
        let ranks = [100u32, 100, 10, 1];
        let mut psi = ViewAssignment::new();
        let mut credentials = Vec::new();
        for (i, a) in assignments.iter().enumerate() {
            let cred = Credential::from_rank(ranks[i]);
            psi.insert(&cred, (*a).into());
            credentials.push(cred);
        }
        let genesis = GenesisBlock {
            players: 4,
            head_players: 2,
            credentials: credentials.clone(),
            family_digest: hash(&family.digest_bytes()),
            psi: psi.clone(),
            variant: Variant::Rft,
        };
        let pke_keys = (0..4)
            .map(|i| PkeKey::from_seed(PlayerId(i), b"fix"))
            .collect();
        let sig_keys = (0..4)
            .map(|i| SigningKey::from_seed(PlayerId(i), b"fix"))
            .collect();
        Fixture {
            family,
            psi,
            credentials,
            genesis,
            pke_keys,
            sig_keys,
        }
    }

    fn payload() -> Payload {
        Payload::new(vec![tx("alice", "bob", 3, 0), tx("bob", "carol", 4, 0)]).unwrap()
    }

    fn build_input<'a>(f: &'a Fixture, inst: &'a FeInstance, p: &'a Payload, digests: &'a [HashDigest]) -> BlockBuildInput<'a> {
        BlockBuildInput {
            epoch: 1,
            parent_digest: f.genesis.digest(),
            payload: p,
            family: &f.family,
            psi: &f.psi,
            credentials: &f.credentials,
            chain_digests: digests,
            fe_instance: inst,
        }
    }

    #[test]
    fn cft_block_covers_every_player_and_round_trips() {
        let f = fixture();
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"fix");
        let inst = auth.setup(1);
        let p = payload();
        let digests = vec![f.genesis.digest(); 4];
        let input = build_input(&f, &inst, &p, &digests);
        let block = build_metablock_cft(PlayerId(0), &input).unwrap();
        assert_eq!(block.per_player.len(), 4);

        // Head player entry carries an identity key.
        for (i, entry) in block.per_player.iter().enumerate() {
            let key_bytes = pke_decrypt(&entry.key_envelope, &f.pke_keys[i]).unwrap();
            let key = FunctionKey::from_bytes(&key_bytes).unwrap();
            let expected = f.psi.get(&f.credentials[i]).unwrap();
            assert_eq!(&key.function_id, expected);
            // Each player derives exactly its assigned view.
            let view = fe_decrypt(&f.family, &key, &block.fe_ciphertext).unwrap();
            assert_eq!(view, apply_view(&f.family, expected, &p).unwrap());
        }
    }

    #[test]
    fn rft_honest_block_signatures_and_keys_verify() {
        let f = fixture();
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"fix");
        let inst = auth.setup(1);
        let p = payload();
        let digests = vec![f.genesis.digest(); 4];
        let input = build_input(&f, &inst, &p, &digests);
        let block = build_metablock_rft_honest(&f.sig_keys[0], &input).unwrap();

        let vk = f.sig_keys[0].verify_key();
        assert!(crypto::verify_sig(
            &block.header_signing_bytes(),
            block.header_sig.as_ref().unwrap(),
            &vk
        ));
        for (i, entry) in block.per_player.iter().enumerate() {
            assert!(crypto::verify_sig(
                &entry.signing_bytes(block.epoch, &block.parent_digest),
                entry.sig.as_ref().unwrap(),
                &vk
            ));
            let key_bytes = pke_decrypt(&entry.key_envelope, &f.pke_keys[i]).unwrap();
            let key = FunctionKey::from_bytes(&key_bytes).unwrap();
            assert!(fe_verify_key(
                block.pp.as_ref().unwrap(),
                &entry.function_id,
                &key
            ));
        }
        // Fresh pp per epoch.
        let inst2 = auth.setup(2);
        assert_ne!(inst.pp, inst2.pp);
    }

    #[test]
    fn rational_block_only_rewrites_adversary_envelopes() {
        let f = fixture();
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"fix");
        let inst = auth.setup(1);
        let p = payload();
        let digests = vec![f.genesis.digest(); 4];
        let input = build_input(&f, &inst, &p, &digests);

        let adv: BTreeSet<PlayerId> = [PlayerId(2)].into_iter().collect();
        let honest = build_metablock_rft_honest(&f.sig_keys[1], &input).unwrap();
        let rational = build_metablock_rft_rational(&f.sig_keys[1], &input, &adv).unwrap();

        for i in [0usize, 1, 3] {
            assert_eq!(honest.per_player[i], rational.per_player[i]);
        }
        // The adversary's envelope decrypts to the full payload.
        let key_bytes =
            pke_decrypt(&rational.per_player[2].key_envelope, &f.pke_keys[2]).unwrap();
        let key = FunctionKey::from_bytes(&key_bytes).unwrap();
        let view = fe_decrypt(&f.family, &key, &rational.fe_ciphertext).unwrap();
        assert_eq!(view.value, ViewValue::FullPayload(p.clone()));
        // But the listed function is still the assigned one.
        assert_eq!(
            rational.per_player[2].function_id,
            ViewFnId::from(TOKEN_SUM)
        );

        // Empty adversary set: byte-identical to the honest block.
        let same = build_metablock_rft_rational(&f.sig_keys[1], &input, &BTreeSet::new()).unwrap();
        assert_eq!(honest.to_bytes(), same.to_bytes());
    }

    fn mk_block(variant: Variant, epoch: u64, parent: HashDigest, salt: u8) -> Metablock {
        let mut auth = FeAuthority::from_seed(PlayerId(salt as u32), b"salt");
        let inst = auth.setup(epoch);
        Metablock {
            variant,
            epoch,
            parent_digest: parent,
            leader: PlayerId(0),
            pp: None,
            fe_ciphertext: fe_encrypt(&inst, &Payload::empty()),
            header_sig: None,
            per_player: vec![],
        }
    }

    #[test]
    fn cft_notarization_threshold_n4() {
        let f = fixture();
        let gen = f.genesis.digest();
        let mut state = MetaChainState::new(Variant::Cft, 4, gen);
        let block = mk_block(Variant::Cft, 1, gen, 0);
        let d = block.digest();
        state.insert_block(block);
        state.add_vote(Vote::cft(PlayerId(0), 1, d));
        assert!(!state.is_notarized(&d));
        let ev = state.add_vote(Vote::cft(PlayerId(1), 1, d));
        assert!(state.is_notarized(&d));
        assert_eq!(ev.newly_notarized, vec![d]);
        // Duplicate vote does not change anything.
        let ev = state.add_vote(Vote::cft(PlayerId(1), 1, d));
        assert!(ev.newly_notarized.is_empty());
    }

    #[test]
    fn rft_notarization_needs_supermajority_and_zero_nos() {
        let f = fixture();
        let gen = f.genesis.digest();
        let mut state = MetaChainState::new(Variant::Rft, 6, gen);
        let block = mk_block(Variant::Rft, 1, gen, 0);
        let d = block.digest();
        state.insert_block(block.clone());

        let keys: Vec<SigningKey> = (0..6)
            .map(|i| SigningKey::from_seed(PlayerId(i), b"fix6"))
            .collect();
        // 4 yes + 1 no in one tallied batch: the no lands before the
        // threshold crossing, so the block never notarizes.
        for k in keys.iter().take(3) {
            state.add_vote(Vote::rft(1, d, Verdict::Yes, k));
        }
        state.add_vote(Vote::rft(1, d, Verdict::No, &keys[4]));
        state.add_vote(Vote::rft(1, d, Verdict::Yes, &keys[3]));
        assert!(!state.is_notarized(&d));
        assert_eq!(state.yes_count(&d), 4);
        assert_eq!(state.no_count(&d), 1);

        // Fresh state, 4 yes and no `no` votes: notarized at equality.
        let mut state = MetaChainState::new(Variant::Rft, 6, gen);
        state.insert_block(block);
        for k in keys.iter().take(3) {
            state.add_vote(Vote::rft(1, d, Verdict::Yes, k));
        }
        assert!(!state.is_notarized(&d));
        state.add_vote(Vote::rft(1, d, Verdict::Yes, &keys[3]));
        assert!(state.is_notarized(&d));
    }

    #[test]
    fn conflicting_verdicts_poison_the_block() {
        let f = fixture();
        let gen = f.genesis.digest();
        let mut state = MetaChainState::new(Variant::Rft, 4, gen);
        let block = mk_block(Variant::Rft, 1, gen, 0);
        let d = block.digest();
        state.insert_block(block);
        let keys: Vec<SigningKey> = (0..4)
            .map(|i| SigningKey::from_seed(PlayerId(i), b"fix"))
            .collect();
        state.add_vote(Vote::rft(1, d, Verdict::Yes, &keys[0]));
        state.add_vote(Vote::rft(1, d, Verdict::No, &keys[0]));
        for k in keys.iter().skip(1) {
            state.add_vote(Vote::rft(1, d, Verdict::Yes, k));
        }
        assert!(!state.is_notarized(&d));
    }

    #[test]
    fn votes_for_unknown_blocks_are_buffered() {
        let f = fixture();
        let gen = f.genesis.digest();
        let mut state = MetaChainState::new(Variant::Cft, 4, gen);
        let block = mk_block(Variant::Cft, 1, gen, 0);
        let d = block.digest();
        state.add_vote(Vote::cft(PlayerId(0), 1, d));
        state.add_vote(Vote::cft(PlayerId(1), 1, d));
        assert!(!state.is_notarized(&d));
        let ev = state.insert_block(block);
        assert_eq!(ev.newly_notarized, vec![d]);
    }

    #[test]
    fn finalization_examples() {
        let f = fixture();
        let gen = f.genesis.digest();

        // Consecutive epochs 1,2,3: finalize through epoch 2.
        let mut state = MetaChainState::new(Variant::Cft, 2, gen);
        let b1 = mk_block(Variant::Cft, 1, gen, 1);
        let b2 = mk_block(Variant::Cft, 2, b1.digest(), 2);
        let b3 = mk_block(Variant::Cft, 3, b2.digest(), 3);
        for b in [&b1, &b2, &b3] {
            let d = b.digest();
            state.insert_block(b.clone());
            state.add_vote(Vote::cft(PlayerId(0), b.epoch, d));
        }
        assert_eq!(state.finalized_epoch(), 2);
        assert_eq!(state.finalized_path().len(), 3); // genesis, b1, b2

        // Epoch gap 1,2,4: nothing new finalizes.
        let mut state = MetaChainState::new(Variant::Cft, 2, gen);
        let b1 = mk_block(Variant::Cft, 1, gen, 1);
        let b2 = mk_block(Variant::Cft, 2, b1.digest(), 2);
        let b4 = mk_block(Variant::Cft, 4, b2.digest(), 4);
        for b in [&b1, &b2, &b4] {
            let d = b.digest();
            state.insert_block(b.clone());
            state.add_vote(Vote::cft(PlayerId(0), b.epoch, d));
        }
        assert_eq!(state.finalized_epoch(), 0);

        // Genesis only.
        let state = MetaChainState::new(Variant::Cft, 2, gen);
        assert_eq!(state.finalized_path(), &[gen]);
    }

    /// Brute-force oracle: a chain state finalizes through epoch X iff some
    /// notarized path holds three consecutive-epoch hash-linked blocks.
    #[test]
    fn finalization_matches_oracle_over_small_trees() {
        let f = fixture();
        let gen = f.genesis.digest();
        // Enumerate all linear chains of up to 4 blocks with epochs drawn
        // from 1..=5 (strictly increasing), all notarized.
        fn epochs_lists(maxlen: usize) -> Vec<Vec<u64>> {
            let mut out = vec![vec![]];
            for _ in 0..maxlen {
                let mut next = Vec::new();
                for l in &out {
                    let lo = l.last().copied().unwrap_or(0) + 1;
                    for e in lo..=5 {
                        let mut l2 = l.clone();
                        l2.push(e);
                        next.push(l2);
                    }
                }
                out.extend(next.clone());
                out = {
                    let mut seen = BTreeSet::new();
                    out.into_iter()
                        .filter(|l| seen.insert(l.clone()))
                        .collect()
                };
            }
            out
        }
        for epochs in epochs_lists(4) {
            let mut state = MetaChainState::new(Variant::Cft, 2, gen);
            let mut parent = gen;
            let mut blocks = Vec::new();
            for (i, e) in epochs.iter().enumerate() {
                let b = mk_block(Variant::Cft, *e, parent, i as u8 + 1);
                parent = b.digest();
                blocks.push(b);
            }
            for b in &blocks {
                let d = b.digest();
                state.insert_block(b.clone());
                state.add_vote(Vote::cft(PlayerId(0), b.epoch, d));
            }
            // Oracle: longest prefix ending at the middle of a consecutive
            // triple of proposed blocks (genesis does not participate).
            let mut expect = 0u64;
            for w in epochs.windows(3) {
                if w[0] + 1 == w[1] && w[1] + 1 == w[2] {
                    expect = expect.max(w[1]);
                }
            }
            assert_eq!(
                state.finalized_epoch(),
                expect,
                "epoch sequence {epochs:?}"
            );
        }
    }

    #[test]
    fn derive_chain_for_each_credential_level() {
        let f = fixture();
        let gen_digest = f.genesis.digest();
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"fix");
        let p1 = payload();
        let p2 = Payload::new(vec![tx("carol", "alice", 2, 0)]).unwrap();

        let inst1 = auth.setup(1);
        let digests: Vec<HashDigest> = (0..4)
            .map(|_| PlayerChain::default().digest(&gen_digest))
            .collect();
        let input1 = BlockBuildInput {
            epoch: 1,
            parent_digest: gen_digest,
            payload: &p1,
            family: &f.family,
            psi: &f.psi,
            credentials: &f.credentials,
            chain_digests: &digests,
            fe_instance: &inst1,
        };
        let b1 = build_metablock_rft_honest(&f.sig_keys[0], &input1).unwrap();

        let inst2 = auth.setup(2);
        let input2 = BlockBuildInput {
            epoch: 2,
            parent_digest: b1.digest(),
            payload: &p2,
            family: &f.family,
            psi: &f.psi,
            credentials: &f.credentials,
            chain_digests: &digests,
            fe_instance: &inst2,
        };
        let b2 = build_metablock_rft_honest(&f.sig_keys[0], &input2).unwrap();

        let finalized = vec![&b1, &b2];

        // Head player derivation equals the ideal chain.
        let head = derive_player_chain(
            PlayerId(0),
            &gen_digest,
            &finalized,
            &f.pke_keys[0],
            &f.family,
            true,
        );
        let ideal = ideal_chain(
            &f.family,
            f.family.identity_id(),
            &gen_digest,
            &[(1, p1.clone()), (2, p2.clone())],
        );
        assert_eq!(head, ideal);

        // Null-credential player derives a chain of bottoms.
        let null_chain = derive_player_chain(
            PlayerId(3),
            &gen_digest,
            &finalized,
            &f.pke_keys[3],
            &f.family,
            true,
        );
        for e in &null_chain.entries {
            assert!(matches!(
                &e.outcome,
                EntryOutcome::View(v) if v.value == ViewValue::Bottom
            ));
        }

        // Lower-credential chains are recomputable from higher ones via
        // edge derivations.
        let sum_chain = derive_player_chain(
            PlayerId(2),
            &gen_digest,
            &finalized,
            &f.pke_keys[2],
            &f.family,
            true,
        );
        for (hi, lo) in head.entries.iter().zip(sum_chain.entries.iter()) {
            let (EntryOutcome::View(hv), EntryOutcome::View(lv)) = (&hi.outcome, &lo.outcome)
            else {
                panic!("expected views");
            };
            let derived = crate::views::derive_view(
                &f.family,
                &hv.function_id,
                &lv.function_id,
                hv,
            )
            .unwrap();
            assert_eq!(&derived, lv);
        }
    }

    #[test]
    fn wrong_key_entry_is_flagged_when_verifying() {
        let f = fixture();
        let gen_digest = f.genesis.digest();
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"fix");
        let inst = auth.setup(1);
        let p = payload();
        let digests = vec![gen_digest; 4];
        let input = build_input(&f, &inst, &p, &digests);
        let adv: BTreeSet<PlayerId> = [PlayerId(1)].into_iter().collect();
        // Victim: player 0 (honest head), wrong function: token_sum.
        let block = build_metablock_rft_wrong_key(
            &f.sig_keys[1],
            &input,
            &adv,
            PlayerId(0),
            &TOKEN_SUM.into(),
        )
        .unwrap();
        let mut chain = PlayerChain::default();
        extend_player_chain(
            &mut chain,
            &gen_digest,
            &block,
            PlayerId(0),
            &f.pke_keys[0],
            &f.family,
            true,
        );
        assert!(matches!(
            chain.entries[0].outcome,
            EntryOutcome::Flagged(EntryFlag::KeyVerificationFailed)
        ));
        // Without verification the wrong view is accepted silently.
        let mut chain = PlayerChain::default();
        extend_player_chain(
            &mut chain,
            &gen_digest,
            &block,
            PlayerId(0),
            &f.pke_keys[0],
            &f.family,
            false,
        );
        assert!(matches!(
            &chain.entries[0].outcome,
            EntryOutcome::View(v) if v.value == ViewValue::Sum(7)
        ));
    }

    #[test]
    fn balance_book_double_spend_predicate() {
        let mut genesis = BTreeMap::new();
        genesis.insert(AccountId::from("alice"), 10);
        let book = BalanceBook::new(&genesis);

        // Spending within balance, including chained intra-payload inflows.
        let ok = Payload::new(vec![tx("alice", "bob", 10, 0), tx("bob", "carol", 10, 0)]).unwrap();
        assert!(book.validate_payload(&ok).is_ok());

        // Overspend.
        let bad = Payload::new(vec![tx("alice", "bob", 11, 0)]).unwrap();
        assert!(book.validate_payload(&bad).is_err());

        // Order matters: bob spends before receiving.
        let bad = Payload::new(vec![tx("bob", "carol", 10, 0), tx("alice", "bob", 10, 0)]).unwrap();
        assert!(book.validate_payload(&bad).is_err());

        // Empty payload is valid.
        assert!(book.validate_payload(&Payload::empty()).is_ok());
    }

    #[test]
    fn longest_notarized_tip_prefers_length_then_digest() {
        let f = fixture();
        let gen = f.genesis.digest();
        let mut state = MetaChainState::new(Variant::Cft, 2, gen);
        let a = mk_block(Variant::Cft, 1, gen, 1);
        let b = mk_block(Variant::Cft, 1, gen, 2);
        let (da, db) = (a.digest(), b.digest());
        for blk in [&a, &b] {
            state.insert_block(blk.clone());
            let d = blk.digest();
            state.add_vote(Vote::cft(PlayerId(0), 1, d));
        }
        let (tip, len) = state.longest_notarized_tip();
        assert_eq!(len, 1);
        assert_eq!(tip, if da.0 < db.0 { da } else { db });
    }
}
