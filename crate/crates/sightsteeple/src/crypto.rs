//! Simulated cryptographic primitives with honest functional contracts.
//!
//! The hash is real SHA-256. Everything else is a simulation: signatures,
//! public-key envelopes and functional encryption enforce their contracts
//! structurally (private fields, addressee checks, instance binding) rather
//! than computationally. The protocol-level adversary is modeled by which
//! operations it invokes, never by inspecting private fields; the one escape
//! hatch is metered by [`FeAudit`] and asserted zero in honest runs.

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::views::{apply_view, Payload, PayloadView, ViewFamily, ViewFnId};
use crate::wire::{self, Reader, Wire, WireError};

pub const HASH_SCHEME_ID: &str = "sha-256";
pub const SIG_SCHEME_ID: &str = "sim-sig-v1";
pub const PKE_SCHEME_ID: &str = "sim-pke-v1";
pub const AFE_SCHEME_ID: &str = "sim-afe-v1";
pub const VFE_SCHEME_ID: &str = "sim-vfe-v1";

/// Identifier of a protocol player; also the address of its key material.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct PlayerId(pub u32);

impl std::fmt::Display for PlayerId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// A SHA-256 output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HashDigest(pub [u8; 32]);

impl HashDigest {
    pub fn short_hex(&self) -> String {
        hex::encode(&self.0[..4])
    }

    pub fn hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl std::fmt::Display for HashDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.hex())
    }
}

impl Wire for HashDigest {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.0);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        Ok(HashDigest(r.array()?))
    }
}

/// H*: deterministic, collision resistant over any test run.
pub fn hash(bytes: &[u8]) -> HashDigest {
    let mut h = Sha256::new();
    h.update(bytes);
    HashDigest(h.finalize().into())
}

fn hash_parts(parts: &[&[u8]]) -> HashDigest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    HashDigest(h.finalize().into())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("ciphertext addressed to {addressee}, not {holder}")]
    WrongAddressee {
        addressee: PlayerId,
        holder: PlayerId,
    },
    #[error("function key instance does not match ciphertext instance")]
    InstanceMismatch,
    #[error("function key authenticity tag is invalid")]
    InvalidKeyTag,
    #[error("ciphertext failed verification against its parameters")]
    InvalidCiphertext,
    #[error("ciphertext payload is corrupt: {0}")]
    CorruptPayload(WireError),
    #[error("view error: {0}")]
    View(#[from] crate::views::ViewError),
}

// ---------------------------------------------------------------------------
// Signatures
// ---------------------------------------------------------------------------

/// Signing half of a simulated signature keypair.
#[derive(Debug, Clone)]
pub struct SigningKey {
    pub player: PlayerId,
    #[allow(dead_code)]
    secret: [u8; 32],
    public: [u8; 32],
}

/// Verification half; payload-free public data shared via the genesis block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyKey {
    pub player: PlayerId,
    public: [u8; 32],
}

impl SigningKey {
    pub fn from_seed(player: PlayerId, seed: &[u8]) -> Self {
        let secret = hash_parts(&[b"sig-sk", seed, &player.0.to_be_bytes()]).0;
        let public = hash_parts(&[b"sig-pk", &secret]).0;
        SigningKey {
            player,
            secret,
            public,
        }
    }

    pub fn verify_key(&self) -> VerifyKey {
        VerifyKey {
            player: self.player,
            public: self.public,
        }
    }

    /// The secret bytes never leave this module except through this scan
    /// helper used by leakage tests.
    #[cfg(test)]
    pub(crate) fn secret_bytes(&self) -> &[u8] {
        &self.secret
    }
}

/// A signed-message envelope: signer, payload digest, binding tag.
///
/// Authenticity is contractual: simulation components only obtain tags
/// through [`sign`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub signer: PlayerId,
    pub payload_digest: HashDigest,
    tag: HashDigest,
}

impl Wire for Signature {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x0c);
        wire::put_u32(out, self.signer.0);
        self.payload_digest.encode(out);
        self.tag.encode(out);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x0c)?;
        Ok(Signature {
            signer: PlayerId(r.u32()?),
            payload_digest: HashDigest::decode(r)?,
            tag: HashDigest::decode(r)?,
        })
    }
}

pub fn sign(msg: &[u8], key: &SigningKey) -> Signature {
    let payload_digest = hash(msg);
    let tag = hash_parts(&[b"sig-tag", &key.public, &payload_digest.0]);
    Signature {
        signer: key.player,
        payload_digest,
        tag,
    }
}

pub fn verify_sig(msg: &[u8], sig: &Signature, key: &VerifyKey) -> bool {
    sig.signer == key.player
        && sig.payload_digest == hash(msg)
        && sig.tag == hash_parts(&[b"sig-tag", &key.public, &sig.payload_digest.0])
}

// ---------------------------------------------------------------------------
// Public-key encryption
// ---------------------------------------------------------------------------

/// Decryption half of a simulated PKE keypair.
#[derive(Debug, Clone)]
pub struct PkeKey {
    pub player: PlayerId,
    #[allow(dead_code)]
    secret: [u8; 32],
}

impl PkeKey {
    pub fn from_seed(player: PlayerId, seed: &[u8]) -> Self {
        let secret = hash_parts(&[b"pke-sk", seed, &player.0.to_be_bytes()]).0;
        PkeKey { player, secret }
    }
}

/// An encrypted envelope addressed to one player.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PkeCiphertext {
    pub addressee: PlayerId,
    sealed: Vec<u8>,
}

impl Wire for PkeCiphertext {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x0b);
        wire::put_u32(out, self.addressee.0);
        wire::put_bytes(out, &self.sealed);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x0b)?;
        Ok(PkeCiphertext {
            addressee: PlayerId(r.u32()?),
            sealed: r.bytes()?,
        })
    }
}

pub fn pke_encrypt(addressee: PlayerId, plaintext: &[u8]) -> PkeCiphertext {
    PkeCiphertext {
        addressee,
        sealed: plaintext.to_vec(),
    }
}

pub fn pke_decrypt(ct: &PkeCiphertext, key: &PkeKey) -> Result<Vec<u8>, CryptoError> {
    if ct.addressee != key.player {
        return Err(CryptoError::WrongAddressee {
            addressee: ct.addressee,
            holder: key.player,
        });
    }
    Ok(ct.sealed.clone())
}

// ---------------------------------------------------------------------------
// Functional encryption
// ---------------------------------------------------------------------------

/// Public parameters of one FE instance. Fresh per setup call; carries the
/// epoch tag and a public verifier token for VerKey/VerCT, never the master
/// secret.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FePublicParams {
    pub authority: PlayerId,
    pub epoch: u64,
    pub seq: u64,
    verifier: HashDigest,
}

impl Wire for FePublicParams {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x07);
        wire::put_u32(out, self.authority.0);
        wire::put_u64(out, self.epoch);
        wire::put_u64(out, self.seq);
        self.verifier.encode(out);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x07)?;
        Ok(FePublicParams {
            authority: PlayerId(r.u32()?),
            epoch: r.u64()?,
            seq: r.u64()?,
            verifier: HashDigest::decode(r)?,
        })
    }
}

/// A live FE instance: public parameters plus the master secret.
///
/// Held only by the issuing authority (the epoch leader); only `pp` is ever
/// serialized.
#[derive(Debug, Clone)]
pub struct FeInstance {
    pub pp: FePublicParams,
    msk: [u8; 32],
}

impl FeInstance {
    #[cfg(test)]
    pub(crate) fn msk_bytes(&self) -> &[u8] {
        &self.msk
    }
}

/// Per-authority setup counter; makes repeated setups for one epoch produce
/// distinct parameters deterministically.
#[derive(Debug, Clone)]
pub struct FeAuthority {
    pub player: PlayerId,
    seed: [u8; 32],
    next_seq: u64,
}

impl FeAuthority {
    pub fn from_seed(player: PlayerId, seed: &[u8]) -> Self {
        FeAuthority {
            player,
            seed: hash_parts(&[b"fe-auth", seed, &player.0.to_be_bytes()]).0,
            next_seq: 0,
        }
    }

    /// Setup: mints a fresh instance tagged with `epoch`.
    pub fn setup(&mut self, epoch: u64) -> FeInstance {
        let seq = self.next_seq;
        self.next_seq += 1;
        let msk = hash_parts(&[
            b"fe-msk",
            &self.seed,
            &epoch.to_be_bytes(),
            &seq.to_be_bytes(),
        ])
        .0;
        let verifier = hash_parts(&[b"fe-vt", &msk]);
        FeInstance {
            pp: FePublicParams {
                authority: self.player,
                epoch,
                seq,
                verifier,
            },
            msk,
        }
    }
}

/// A decryption key for one registered function under one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionKey {
    pub function_id: ViewFnId,
    pub instance: FePublicParams,
    auth_tag: HashDigest,
    /// Sealed material enabling decryption; derived from the master secret
    /// but never equal to it.
    unlock: HashDigest,
}

impl Wire for FunctionKey {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x08);
        self.function_id.encode(out);
        self.instance.encode(out);
        self.auth_tag.encode(out);
        self.unlock.encode(out);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x08)?;
        Ok(FunctionKey {
            function_id: ViewFnId::decode(r)?,
            instance: FePublicParams::decode(r)?,
            auth_tag: HashDigest::decode(r)?,
            unlock: HashDigest::decode(r)?,
        })
    }
}

/// A functionally encrypted payload, bound to one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeCiphertext {
    pub instance: FePublicParams,
    sealed: Vec<u8>,
    binding: HashDigest,
}

impl Wire for FeCiphertext {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x09);
        self.instance.encode(out);
        wire::put_bytes(out, &self.sealed);
        self.binding.encode(out);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x09)?;
        Ok(FeCiphertext {
            instance: FePublicParams::decode(r)?,
            sealed: r.bytes()?,
            binding: HashDigest::decode(r)?,
        })
    }
}

/// Counts raw accesses to sealed ciphertext bytes outside `fe_decrypt`.
/// Honest runs assert this stays zero.
#[derive(Debug, Default, Clone)]
pub struct FeAudit {
    pub raw_opens: u64,
}

impl FeCiphertext {
    /// The metered escape hatch: reads the sealed bytes without a key.
    /// No protocol code path calls this; it exists so the access-discipline
    /// invariant is checkable rather than merely asserted in prose.
    pub fn sealed_bytes_for_audit(&self, audit: &mut FeAudit) -> &[u8] {
        audit.raw_opens += 1;
        &self.sealed
    }
}

fn keytag(pp: &FePublicParams, f: &ViewFnId) -> HashDigest {
    hash_parts(&[b"fe-keytag", &pp.verifier.0, f.0.as_bytes()])
}

fn unlock_token(msk: &[u8; 32]) -> HashDigest {
    hash_parts(&[b"fe-unlock", msk])
}

fn keystream_xor(pp: &FePublicParams, unlock: &HashDigest, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    let pp_bytes = pp.to_bytes();
    for (block_idx, chunk) in data.chunks(32).enumerate() {
        let ks = hash_parts(&[
            b"fe-stream",
            &unlock.0,
            &pp_bytes,
            &(block_idx as u64).to_be_bytes(),
        ]);
        for (i, b) in chunk.iter().enumerate() {
            out.push(b ^ ks.0[i]);
        }
    }
    out
}

/// KeyGen: issues a key for a registered function. Issuing a key for a
/// wrong-but-registered function is allowed at this layer; that is exactly
/// what the wrong-key attack does.
pub fn fe_keygen(
    inst: &FeInstance,
    family: &ViewFamily,
    f: &ViewFnId,
) -> Result<FunctionKey, CryptoError> {
    family.get(f)?;
    Ok(FunctionKey {
        function_id: f.clone(),
        instance: inst.pp.clone(),
        auth_tag: keytag(&inst.pp, f),
        unlock: unlock_token(&inst.msk),
    })
}

/// Enc: seals a payload under the instance.
pub fn fe_encrypt(inst: &FeInstance, txs: &Payload) -> FeCiphertext {
    let plain = txs.to_bytes();
    let unlock = unlock_token(&inst.msk);
    let sealed = keystream_xor(&inst.pp, &unlock, &plain);
    let binding = hash_parts(&[b"fe-ctbind", &inst.pp.verifier.0, &sealed]);
    FeCiphertext {
        instance: inst.pp.clone(),
        sealed,
        binding,
    }
}

/// Dec: recovers exactly `f(txs)` for the key's function.
pub fn fe_decrypt(
    family: &ViewFamily,
    key: &FunctionKey,
    ct: &FeCiphertext,
) -> Result<PayloadView, CryptoError> {
    if key.instance != ct.instance {
        return Err(CryptoError::InstanceMismatch);
    }
    if !fe_verify_key(&key.instance, &key.function_id, key) {
        return Err(CryptoError::InvalidKeyTag);
    }
    if !fe_verify_ct(&ct.instance, ct) {
        return Err(CryptoError::InvalidCiphertext);
    }
    let plain = keystream_xor(&ct.instance, &key.unlock, &ct.sealed);
    let payload = Payload::from_bytes(&plain).map_err(CryptoError::CorruptPayload)?;
    Ok(apply_view(family, &key.function_id, &payload)?)
}

/// VerKey: true iff `key` was issued by KeyGen for exactly (`pp`, `f`).
pub fn fe_verify_key(pp: &FePublicParams, f: &ViewFnId, key: &FunctionKey) -> bool {
    key.instance == *pp && key.function_id == *f && key.auth_tag == keytag(pp, f)
}

/// VerCT: true iff the ciphertext was produced under `pp`.
pub fn fe_verify_ct(pp: &FePublicParams, ct: &FeCiphertext) -> bool {
    ct.instance == *pp && ct.binding == hash_parts(&[b"fe-ctbind", &pp.verifier.0, &ct.sealed])
}

/// Validity predicate for a message-privacy adversary transcript: every
/// queried function applied to every encrypted message must give one value.
/// Test-oracle only.
pub fn is_valid_privacy_transcript(
    family: &ViewFamily,
    queried_fns: &[ViewFnId],
    messages: &[Payload],
) -> Result<bool, CryptoError> {
    let mut first: Option<Vec<u8>> = None;
    for f in queried_fns {
        for m in messages {
            let v = apply_view(family, f, m)?;
            let bytes = v.value.to_bytes();
            match &first {
                None => first = Some(bytes),
                Some(b) if *b != bytes => return Ok(false),
                Some(_) => {}
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::views::family_presets::{self, *};
    use crate::views::{Transaction, ViewValue};

    fn fam() -> ViewFamily {
        family_presets::default_family(&"alice".into())
    }

    fn payload() -> Payload {
        Payload::new(vec![
            Transaction {
                sender: "alice".into(),
                receiver: "bob".into(),
                amount: 3,
                nonce: 0,
            },
            Transaction {
                sender: "bob".into(),
                receiver: "carol".into(),
                amount: 4,
                nonce: 0,
            },
        ])
        .unwrap()
    }

    #[test]
    fn hash_is_deterministic() {
        assert_eq!(hash(b"abc"), hash(b"abc"));
        assert_ne!(hash(b"abc"), hash(b"abd"));
    }

    #[test]
    fn hash_collision_free_over_generated_corpus() {
        let mut seen = std::collections::BTreeMap::new();
        for i in 0..5000u64 {
            let input = i.to_be_bytes();
            if let Some(prev) = seen.insert(hash(&input), input) {
                panic!("collision between {prev:?} and {input:?}");
            }
        }
    }

    #[test]
    fn sign_verify_round_trip() {
        let sk = SigningKey::from_seed(PlayerId(3), b"seed");
        let sig = sign(b"hello", &sk);
        assert!(verify_sig(b"hello", &sig, &sk.verify_key()));
        assert!(!verify_sig(b"hellO", &sig, &sk.verify_key()));
        let other = SigningKey::from_seed(PlayerId(4), b"seed");
        assert!(!verify_sig(b"hello", &sig, &other.verify_key()));
    }

    #[test]
    fn pke_rejects_non_addressee() {
        let ct = pke_encrypt(PlayerId(1), b"secret");
        let right = PkeKey::from_seed(PlayerId(1), b"seed");
        let wrong = PkeKey::from_seed(PlayerId(2), b"seed");
        assert_eq!(pke_decrypt(&ct, &right).unwrap(), b"secret");
        assert!(matches!(
            pke_decrypt(&ct, &wrong),
            Err(CryptoError::WrongAddressee { .. })
        ));
    }

    #[test]
    fn setup_twice_gives_distinct_pp_with_epoch_tag() {
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"run");
        let a = auth.setup(5);
        let b = auth.setup(5);
        assert_ne!(a.pp, b.pp);
        assert_eq!(a.pp.epoch, 5);
        assert_eq!(b.pp.epoch, 5);
    }

    #[test]
    fn serialized_pp_carries_no_msk() {
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"run");
        let inst = auth.setup(1);
        let pp_bytes = inst.pp.to_bytes();
        assert!(!pp_bytes
            .windows(inst.msk_bytes().len())
            .any(|w| w == inst.msk_bytes()));
    }

    #[test]
    fn decrypt_recovers_each_registered_view() {
        let fam = fam();
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"run");
        let inst = auth.setup(1);
        let p = payload();
        let ct = fe_encrypt(&inst, &p);
        for f in fam.ids() {
            let key = fe_keygen(&inst, &fam, f).unwrap();
            let got = fe_decrypt(&fam, &key, &ct).unwrap();
            let expected = apply_view(&fam, f, &p).unwrap();
            assert_eq!(got, expected, "function {f}");
        }
    }

    #[test]
    fn null_and_sum_examples() {
        let fam = fam();
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"run");
        let inst = auth.setup(1);
        let ct = fe_encrypt(&inst, &payload());
        let null_key = fe_keygen(&inst, &fam, &NULL.into()).unwrap();
        assert_eq!(
            fe_decrypt(&fam, &null_key, &ct).unwrap().value,
            ViewValue::Bottom
        );
        let sum_key = fe_keygen(&inst, &fam, &TOKEN_SUM.into()).unwrap();
        assert_eq!(
            fe_decrypt(&fam, &sum_key, &ct).unwrap().value,
            ViewValue::Sum(7)
        );
    }

    #[test]
    fn cross_instance_key_is_rejected() {
        let fam = fam();
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"run");
        let a = auth.setup(1);
        let b = auth.setup(2);
        let ct = fe_encrypt(&a, &payload());
        let foreign = fe_keygen(&b, &fam, &IDENTITY.into()).unwrap();
        assert!(matches!(
            fe_decrypt(&fam, &foreign, &ct),
            Err(CryptoError::InstanceMismatch)
        ));
        assert!(!fe_verify_key(&a.pp, &IDENTITY.into(), &foreign));
    }

    #[test]
    fn verify_key_truth_table_over_all_pairs() {
        let fam = fam();
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"run");
        let inst = auth.setup(1);
        let ids: Vec<ViewFnId> = fam.ids().cloned().collect();
        for issued in &ids {
            let key = fe_keygen(&inst, &fam, issued).unwrap();
            for claimed in &ids {
                assert_eq!(
                    fe_verify_key(&inst.pp, claimed, &key),
                    issued == claimed,
                    "issued {issued}, claimed {claimed}"
                );
            }
        }
    }

    #[test]
    fn verify_ct_binding() {
        let fam = fam();
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"run");
        let a = auth.setup(1);
        let b = auth.setup(1);
        let ct = fe_encrypt(&a, &payload());
        assert!(fe_verify_ct(&a.pp, &ct));
        assert!(!fe_verify_ct(&b.pp, &ct));
        // Malformed: flip one sealed byte through the wire round trip.
        let mut bytes = ct.to_bytes();
        let sealed_at = bytes.len() - 40;
        bytes[sealed_at] ^= 0xff;
        let corrupt = FeCiphertext::from_bytes(&bytes).unwrap();
        assert!(!fe_verify_ct(&a.pp, &corrupt));
        let key = fe_keygen(&a, &fam, &IDENTITY.into()).unwrap();
        assert!(matches!(
            fe_decrypt(&fam, &key, &corrupt),
            Err(CryptoError::InvalidCiphertext)
        ));
    }

    #[test]
    fn forged_key_tag_fails_verification() {
        let fam = fam();
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"run");
        let inst = auth.setup(1);
        let key = fe_keygen(&inst, &fam, &TOKEN_SUM.into()).unwrap();
        let mut bytes = key.to_bytes();
        // auth_tag sits 64 bytes from the end (tag + unlock).
        let at = bytes.len() - 64;
        bytes[at] ^= 1;
        let forged = FunctionKey::from_bytes(&bytes).unwrap();
        assert!(!fe_verify_key(&inst.pp, &TOKEN_SUM.into(), &forged));
        let ct = fe_encrypt(&inst, &payload());
        assert!(matches!(
            fe_decrypt(&fam, &forged, &ct),
            Err(CryptoError::InvalidKeyTag)
        ));
    }

    #[test]
    fn wrong_but_registered_function_key_is_producible() {
        // The key layer does not police which registered function a key is
        // issued for; protocol-level validation does.
        let fam = family_presets::family_with_decrement(&"alice".into());
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"run");
        let inst = auth.setup(1);
        let key = fe_keygen(&inst, &fam, &AMOUNT_DECREMENT.into()).unwrap();
        assert!(fe_verify_key(&inst.pp, &AMOUNT_DECREMENT.into(), &key));
        assert!(!fe_verify_key(&inst.pp, &IDENTITY.into(), &key));
    }

    #[test]
    fn audit_counter_meters_raw_access() {
        let mut auth = FeAuthority::from_seed(PlayerId(0), b"run");
        let inst = auth.setup(1);
        let ct = fe_encrypt(&inst, &payload());
        let mut audit = FeAudit::default();
        assert_eq!(audit.raw_opens, 0);
        let _ = ct.sealed_bytes_for_audit(&mut audit);
        assert_eq!(audit.raw_opens, 1);
    }

    #[test]
    fn privacy_transcript_validity() {
        let fam = fam();
        let p1 = payload();
        let p2 = Payload::new(vec![Transaction {
            sender: "dave".into(),
            receiver: "erin".into(),
            amount: 7,
            nonce: 0,
        }])
        .unwrap();
        // Null on anything is a single constant value.
        assert!(
            is_valid_privacy_transcript(&fam, &[NULL.into()], &[p1.clone(), p2.clone()]).unwrap()
        );
        // Token sum happens to agree on these two payloads.
        assert!(is_valid_privacy_transcript(&fam, &[TOKEN_SUM.into()], &[p1.clone(), p2.clone()])
            .unwrap());
        // Identity distinguishes them.
        assert!(!is_valid_privacy_transcript(&fam, &[IDENTITY.into()], &[p1, p2]).unwrap());
    }
}
