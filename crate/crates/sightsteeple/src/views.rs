//! Transactions, payload view functions and the view hierarchy.
//!
//! A view family is a finite set of payload view functions registered with an
//! explicit Hasse diagram. The order `f1 <= f2` means "f1's view is derivable
//! from f2's view" and is decided by reachability on the declared diagram, not
//! by semantic inference. Every declared edge carries a derivation rule, so
//! "derivable" is witnessed by executable code (see [`derive_along_edge`]).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{self, Reader, Wire, WireError};

/// Account name in the toy token ledger.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccountId(pub String);

impl std::fmt::Display for AccountId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<&str> for AccountId {
    fn from(s: &str) -> Self {
        AccountId(s.to_string())
    }
}

/// A single account-based transfer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: AccountId,
    pub receiver: AccountId,
    pub amount: u64,
    pub nonce: u64,
}

impl Wire for Transaction {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x01);
        wire::put_str(out, &self.sender.0);
        wire::put_str(out, &self.receiver.0);
        wire::put_u64(out, self.amount);
        wire::put_u64(out, self.nonce);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x01)?;
        Ok(Transaction {
            sender: AccountId(r.string()?),
            receiver: AccountId(r.string()?),
            amount: r.u64()?,
            nonce: r.u64()?,
        })
    }
}

/// An ordered list of transactions proposed for one epoch.
///
/// Invariant: (sender, nonce) pairs are unique within the list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Payload {
    txs: Vec<Transaction>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PayloadError {
    #[error("duplicate (sender, nonce) pair ({0}, {1})")]
    DuplicateNonce(AccountId, u64),
}

impl Payload {
    pub fn new(txs: Vec<Transaction>) -> Result<Self, PayloadError> {
        let mut seen = BTreeSet::new();
        for tx in &txs {
            if !seen.insert((tx.sender.clone(), tx.nonce)) {
                return Err(PayloadError::DuplicateNonce(tx.sender.clone(), tx.nonce));
            }
        }
        Ok(Payload { txs })
    }

    pub fn empty() -> Self {
        Payload { txs: Vec::new() }
    }

    pub fn txs(&self) -> &[Transaction] {
        &self.txs
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }
}

impl Wire for Payload {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x02);
        wire::put_list(out, &self.txs, |o, tx| tx.encode(o));
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x02)?;
        let txs = r.list(Transaction::decode)?;
        Ok(Payload { txs })
    }
}

/// Stable identifier of a view function within a registered family.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViewFnId(pub String);

impl std::fmt::Display for ViewFnId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<&str> for ViewFnId {
    fn from(s: &str) -> Self {
        ViewFnId(s.to_string())
    }
}

impl Wire for ViewFnId {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x03);
        wire::put_str(out, &self.0);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x03)?;
        Ok(ViewFnId(r.string()?))
    }
}

/// The closed set of supported view function kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewKind {
    /// The identity function f*: full transaction list.
    Identity,
    /// The null function: reveals nothing.
    Null,
    /// Sub-list of transactions sent or received by one party.
    PartyFilter(AccountId),
    /// Sum of all amounts in the list.
    TokenSum,
    /// The transaction with the smallest amount (first on ties).
    MinTx,
    /// The list with every amount replaced by a presence marker.
    ValueRedact,
    /// Full list with every amount reduced by one unit (saturating).
    ///
    /// Its output is shaped like an identity view on purpose: it exists to
    /// demonstrate the wrong-key attack, where a victim cannot tell the
    /// decremented list from the real one.
    AmountDecrement,
}

impl ViewKind {
    fn wire_tag(&self) -> u8 {
        match self {
            ViewKind::Identity => 0,
            ViewKind::Null => 1,
            ViewKind::PartyFilter(_) => 2,
            ViewKind::TokenSum => 3,
            ViewKind::MinTx => 4,
            ViewKind::ValueRedact => 5,
            ViewKind::AmountDecrement => 6,
        }
    }
}

impl Wire for ViewKind {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, self.wire_tag());
        if let ViewKind::PartyFilter(p) = self {
            wire::put_str(out, &p.0);
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let offset = r.offset();
        Ok(match r.u8()? {
            0 => ViewKind::Identity,
            1 => ViewKind::Null,
            2 => ViewKind::PartyFilter(AccountId(r.string()?)),
            3 => ViewKind::TokenSum,
            4 => ViewKind::MinTx,
            5 => ViewKind::ValueRedact,
            6 => ViewKind::AmountDecrement,
            d => return Err(WireError::BadDiscriminant(d, offset)),
        })
    }
}

/// One node of the view hierarchy.
///
/// `parent_ids` lists the immediate successors in the Hasse diagram: the
/// functions directly above this one whose views imply this one's view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewFunction {
    pub id: ViewFnId,
    pub kind: ViewKind,
    pub parent_ids: Vec<ViewFnId>,
}

/// A transaction with its amount redacted to a presence marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactedTx {
    pub sender: AccountId,
    pub receiver: AccountId,
    pub nonce: u64,
}

impl Wire for RedactedTx {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x0a);
        wire::put_str(out, &self.sender.0);
        wire::put_str(out, &self.receiver.0);
        wire::put_u64(out, self.nonce);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x0a)?;
        Ok(RedactedTx {
            sender: AccountId(r.string()?),
            receiver: AccountId(r.string()?),
            nonce: r.u64()?,
        })
    }
}

/// The tagged result of applying a view function to a payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewValue {
    FullPayload(Payload),
    Bottom,
    TxSubset(Vec<Transaction>),
    Sum(u128),
    /// `None` when the payload was empty.
    SingleTx(Option<Transaction>),
    RedactedList(Vec<RedactedTx>),
}

impl Wire for ViewValue {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            ViewValue::FullPayload(p) => {
                wire::put_u8(out, 0);
                p.encode(out);
            }
            ViewValue::Bottom => wire::put_u8(out, 1),
            ViewValue::TxSubset(txs) => {
                wire::put_u8(out, 2);
                wire::put_list(out, txs, |o, tx| tx.encode(o));
            }
            ViewValue::Sum(s) => {
                wire::put_u8(out, 3);
                wire::put_u128(out, *s);
            }
            ViewValue::SingleTx(tx) => {
                wire::put_u8(out, 4);
                wire::put_option(out, tx, |o, tx| tx.encode(o));
            }
            ViewValue::RedactedList(rs) => {
                wire::put_u8(out, 5);
                wire::put_list(out, rs, |o, x| x.encode(o));
            }
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let offset = r.offset();
        Ok(match r.u8()? {
            0 => ViewValue::FullPayload(Payload::decode(r)?),
            1 => ViewValue::Bottom,
            2 => ViewValue::TxSubset(r.list(Transaction::decode)?),
            3 => ViewValue::Sum(r.u128()?),
            4 => ViewValue::SingleTx(r.option(Transaction::decode)?),
            5 => ViewValue::RedactedList(r.list(RedactedTx::decode)?),
            d => return Err(WireError::BadDiscriminant(d, offset)),
        })
    }
}

/// A payload view: the function that produced it plus its value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadView {
    pub function_id: ViewFnId,
    pub value: ViewValue,
}

impl Wire for PayloadView {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x05);
        self.function_id.encode(out);
        self.value.encode(out);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x05)?;
        Ok(PayloadView {
            function_id: ViewFnId::decode(r)?,
            value: ViewValue::decode(r)?,
        })
    }
}

/// A player credential: opaque bits plus a rank used for total ordering.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Credential {
    pub bits: Vec<u8>,
    pub rank: u32,
}

impl Credential {
    /// Canonical credential for a rank; equal ranks share bits.
    pub fn from_rank(rank: u32) -> Self {
        let mut bits = b"cred:".to_vec();
        bits.extend_from_slice(&rank.to_be_bytes());
        Credential { bits, rank }
    }
}

impl Wire for Credential {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u8(out, 0x06);
        wire::put_bytes(out, &self.bits);
        wire::put_u32(out, self.rank);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self, WireError> {
        r.tag(0x06)?;
        Ok(Credential {
            bits: r.bytes()?,
            rank: r.u32()?,
        })
    }
}

/// The published credential-to-view-function map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ViewAssignment {
    psi: BTreeMap<Vec<u8>, ViewFnId>,
}

impl ViewAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, cred: &Credential, f: ViewFnId) {
        self.psi.insert(cred.bits.clone(), f);
    }

    pub fn get(&self, cred: &Credential) -> Result<&ViewFnId, ViewError> {
        self.psi
            .get(&cred.bits)
            .ok_or_else(|| ViewError::UnknownCredential(cred.rank))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Vec<u8>, &ViewFnId)> {
        self.psi.iter()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ViewError {
    #[error("unknown view function id `{0}`")]
    UnknownFunction(ViewFnId),
    #[error("functions `{0}` and `{1}` are not comparable")]
    NotComparable(ViewFnId, ViewFnId),
    #[error("credential of rank {0} is not registered")]
    UnknownCredential(u32),
    #[error("empty view set")]
    EmptyViewSet,
    #[error("no derivation rule for Hasse edge {parent} -> {child}")]
    NoDerivation { parent: ViewFnId, child: ViewFnId },
    #[error("family validation failed: {0}")]
    BadFamily(String),
}

/// A registered, validated family of view functions.
///
/// Construction checks: exactly one identity and one null function, acyclic
/// Hasse diagram, every function reachable between null and identity, and a
/// derivation rule available for every declared edge.
#[derive(Debug, Clone)]
pub struct ViewFamily {
    functions: BTreeMap<ViewFnId, ViewFunction>,
    identity: ViewFnId,
    null: ViewFnId,
    /// child -> set of ids reachable upward (ancestors, not incl. self).
    ancestors: BTreeMap<ViewFnId, BTreeSet<ViewFnId>>,
    /// parent -> immediate children in the Hasse diagram.
    children: BTreeMap<ViewFnId, Vec<ViewFnId>>,
}

impl ViewFamily {
    pub fn new(functions: Vec<ViewFunction>) -> Result<Self, ViewError> {
        let mut map = BTreeMap::new();
        for f in functions {
            if map.insert(f.id.clone(), f.clone()).is_some() {
                return Err(ViewError::BadFamily(format!("duplicate id `{}`", f.id)));
            }
        }

        let identities: Vec<_> = map
            .values()
            .filter(|f| f.kind == ViewKind::Identity)
            .map(|f| f.id.clone())
            .collect();
        let nulls: Vec<_> = map
            .values()
            .filter(|f| f.kind == ViewKind::Null)
            .map(|f| f.id.clone())
            .collect();
        if identities.len() != 1 {
            return Err(ViewError::BadFamily(format!(
                "expected exactly one identity function, found {}",
                identities.len()
            )));
        }
        if nulls.len() != 1 {
            return Err(ViewError::BadFamily(format!(
                "expected exactly one null function, found {}",
                nulls.len()
            )));
        }
        let identity = identities.into_iter().next().unwrap();
        let null = nulls.into_iter().next().unwrap();

        let mut children: BTreeMap<ViewFnId, Vec<ViewFnId>> = BTreeMap::new();
        for f in map.values() {
            children.entry(f.id.clone()).or_default();
            for p in &f.parent_ids {
                let parent = map
                    .get(p)
                    .ok_or_else(|| ViewError::UnknownFunction(p.clone()))?;
                if derivation_supported(&parent.kind, &f.kind).is_none() {
                    return Err(ViewError::NoDerivation {
                        parent: p.clone(),
                        child: f.id.clone(),
                    });
                }
                children.entry(p.clone()).or_default().push(f.id.clone());
            }
        }
        for v in children.values_mut() {
            v.sort();
            v.dedup();
        }

        // Cycle check plus upward transitive closure, child by child.
        let mut ancestors: BTreeMap<ViewFnId, BTreeSet<ViewFnId>> = BTreeMap::new();
        for id in map.keys() {
            let mut seen = BTreeSet::new();
            let mut queue: VecDeque<ViewFnId> = map[id].parent_ids.iter().cloned().collect();
            while let Some(up) = queue.pop_front() {
                if up == *id {
                    return Err(ViewError::BadFamily(format!(
                        "cycle through `{id}` in the Hasse diagram"
                    )));
                }
                if seen.insert(up.clone()) {
                    queue.extend(map[&up].parent_ids.iter().cloned());
                }
            }
            ancestors.insert(id.clone(), seen);
        }
        // A cycle not passing through its own start is still caught: members
        // of a cycle would be their own ancestors via any member.
        for (id, anc) in &ancestors {
            if anc.contains(id) {
                return Err(ViewError::BadFamily(format!(
                    "cycle through `{id}` in the Hasse diagram"
                )));
            }
        }

        let fam = ViewFamily {
            functions: map,
            identity,
            null,
            ancestors,
            children,
        };

        // Bounds: null <= f <= identity for every f.
        for id in fam.functions.keys() {
            if !fam.reachable_down(id, &fam.null) && *id != fam.null {
                return Err(ViewError::BadFamily(format!(
                    "`{id}` cannot reach the null function"
                )));
            }
            if !fam.reachable_down(&fam.identity, id) && *id != fam.identity {
                return Err(ViewError::BadFamily(format!(
                    "`{id}` is not reachable from the identity function"
                )));
            }
        }
        Ok(fam)
    }

    pub fn get(&self, id: &ViewFnId) -> Result<&ViewFunction, ViewError> {
        self.functions
            .get(id)
            .ok_or_else(|| ViewError::UnknownFunction(id.clone()))
    }

    pub fn identity_id(&self) -> &ViewFnId {
        &self.identity
    }

    pub fn null_id(&self) -> &ViewFnId {
        &self.null
    }

    pub fn ids(&self) -> impl Iterator<Item = &ViewFnId> {
        self.functions.keys()
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Digest of the registered family; pinned into the genesis block.
    pub fn digest_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        wire::put_u8(&mut out, 0x14);
        let fns: Vec<_> = self.functions.values().collect();
        wire::put_u32(&mut out, fns.len() as u32);
        for f in fns {
            f.id.encode(&mut out);
            f.kind.encode(&mut out);
            wire::put_list(&mut out, &f.parent_ids, |o, p| p.encode(o));
        }
        out
    }

    /// True when `lo`'s view is derivable by walking edges down from `hi`.
    fn reachable_down(&self, hi: &ViewFnId, lo: &ViewFnId) -> bool {
        hi == lo || self.ancestors.get(lo).is_some_and(|a| a.contains(hi))
    }

    /// The partial order: `f1 <= f2`.
    pub fn leq(&self, f1: &ViewFnId, f2: &ViewFnId) -> Result<bool, ViewError> {
        self.get(f1)?;
        self.get(f2)?;
        Ok(self.reachable_down(f2, f1))
    }

    /// Edge count of a shortest directed path from `f2` down to `f1`.
    pub fn dist(&self, f1: &ViewFnId, f2: &ViewFnId) -> Result<u32, ViewError> {
        if !self.leq(f1, f2)? {
            return Err(ViewError::NotComparable(f1.clone(), f2.clone()));
        }
        let mut depth: BTreeMap<&ViewFnId, u32> = BTreeMap::new();
        let mut queue = VecDeque::new();
        depth.insert(f2, 0);
        queue.push_back(f2);
        while let Some(cur) = queue.pop_front() {
            let d = depth[cur];
            if cur == f1 {
                return Ok(d);
            }
            for ch in &self.children[cur] {
                depth.entry(ch).or_insert_with(|| {
                    queue.push_back(ch);
                    d + 1
                });
            }
        }
        unreachable!("leq held, so BFS must reach f1");
    }

    /// Minimal elements of a view set: the smallest subset every member of
    /// the input dominates.
    pub fn inf_views(&self, views: &[PayloadView]) -> Result<Vec<PayloadView>, ViewError> {
        self.extremal_views(views, |a, b| self.leq(a, b))
    }

    /// Maximal elements of a view set (dual of [`Self::inf_views`]).
    pub fn sup_views(&self, views: &[PayloadView]) -> Result<Vec<PayloadView>, ViewError> {
        self.extremal_views(views, |a, b| self.leq(b, a))
    }

    fn extremal_views(
        &self,
        views: &[PayloadView],
        below: impl Fn(&ViewFnId, &ViewFnId) -> Result<bool, ViewError>,
    ) -> Result<Vec<PayloadView>, ViewError> {
        if views.is_empty() {
            return Err(ViewError::EmptyViewSet);
        }
        let mut by_id: BTreeMap<ViewFnId, &PayloadView> = BTreeMap::new();
        for v in views {
            self.get(&v.function_id)?;
            by_id.insert(v.function_id.clone(), v);
        }
        let ids: Vec<ViewFnId> = by_id.keys().cloned().collect();
        let mut out = Vec::new();
        for id in &ids {
            let dominated = ids
                .iter()
                .filter(|o| *o != id)
                .any(|o| below(o, id).unwrap_or(false));
            if !dominated {
                out.push((*by_id[id]).clone());
            }
        }
        Ok(out)
    }
}

/// Applies a registered view function to a payload.
pub fn apply_view(
    family: &ViewFamily,
    f: &ViewFnId,
    txs: &Payload,
) -> Result<PayloadView, ViewError> {
    let func = family.get(f)?;
    let value = eval_kind(&func.kind, txs);
    Ok(PayloadView {
        function_id: f.clone(),
        value,
    })
}

fn eval_kind(kind: &ViewKind, txs: &Payload) -> ViewValue {
    match kind {
        ViewKind::Identity => ViewValue::FullPayload(txs.clone()),
        ViewKind::Null => ViewValue::Bottom,
        ViewKind::PartyFilter(p) => ViewValue::TxSubset(
            txs.txs()
                .iter()
                .filter(|tx| tx.sender == *p || tx.receiver == *p)
                .cloned()
                .collect(),
        ),
        ViewKind::TokenSum => {
            ViewValue::Sum(txs.txs().iter().map(|tx| tx.amount as u128).sum())
        }
        ViewKind::MinTx => ViewValue::SingleTx(
            txs.txs()
                .iter()
                .min_by_key(|tx| tx.amount)
                .cloned(),
        ),
        ViewKind::ValueRedact => ViewValue::RedactedList(
            txs.txs()
                .iter()
                .map(|tx| RedactedTx {
                    sender: tx.sender.clone(),
                    receiver: tx.receiver.clone(),
                    nonce: tx.nonce,
                })
                .collect(),
        ),
        ViewKind::AmountDecrement => {
            let decremented: Vec<Transaction> = txs
                .txs()
                .iter()
                .map(|tx| Transaction {
                    amount: tx.amount.saturating_sub(1),
                    ..tx.clone()
                })
                .collect();
            // Nonces are untouched, so uniqueness carries over.
            ViewValue::FullPayload(Payload::new(decremented).expect("nonces preserved"))
        }
    }
}

/// Looks up the view function a credential entitles its holder to.
pub fn assign_view<'a>(
    family: &'a ViewFamily,
    psi: &'a ViewAssignment,
    cred: &Credential,
) -> Result<&'a ViewFunction, ViewError> {
    let id = psi.get(cred)?;
    family.get(id)
}

enum DerivationRule {
    /// Parent is the identity view: re-evaluate the child on the payload.
    FromFull,
    /// Child is the null function.
    ToBottom,
}

fn derivation_supported(parent: &ViewKind, child: &ViewKind) -> Option<DerivationRule> {
    if *child == ViewKind::Null {
        Some(DerivationRule::ToBottom)
    } else if matches!(parent, ViewKind::Identity | ViewKind::AmountDecrement) {
        // AmountDecrement output is payload-shaped, so downstream functions
        // evaluate on it directly (their results reflect the decrement).
        Some(DerivationRule::FromFull)
    } else {
        None
    }
}

/// Recomputes the child view from the parent view along one declared edge.
///
/// This is the executable witness that the edge's "implied by" claim holds.
pub fn derive_along_edge(
    family: &ViewFamily,
    parent: &ViewFnId,
    child: &ViewFnId,
    parent_view: &PayloadView,
) -> Result<PayloadView, ViewError> {
    let pf = family.get(parent)?;
    let cf = family.get(child)?;
    if !cf.parent_ids.contains(parent) {
        return Err(ViewError::NoDerivation {
            parent: parent.clone(),
            child: child.clone(),
        });
    }
    let rule = derivation_supported(&pf.kind, &cf.kind).ok_or(ViewError::NoDerivation {
        parent: parent.clone(),
        child: child.clone(),
    })?;
    let value = match rule {
        DerivationRule::ToBottom => ViewValue::Bottom,
        DerivationRule::FromFull => match &parent_view.value {
            ViewValue::FullPayload(p) => eval_kind(&cf.kind, p),
            _ => {
                return Err(ViewError::NoDerivation {
                    parent: parent.clone(),
                    child: child.clone(),
                })
            }
        },
    };
    Ok(PayloadView {
        function_id: child.clone(),
        value,
    })
}

/// Recomputes `lo`'s view from `hi`'s view by composing edge derivations
/// along a shortest downward path.
pub fn derive_view(
    family: &ViewFamily,
    hi: &ViewFnId,
    lo: &ViewFnId,
    hi_view: &PayloadView,
) -> Result<PayloadView, ViewError> {
    if !family.leq(lo, hi)? {
        return Err(ViewError::NotComparable(lo.clone(), hi.clone()));
    }
    if hi == lo {
        return Ok(hi_view.clone());
    }
    // BFS parent tracking down from hi to lo.
    let mut prev: BTreeMap<ViewFnId, ViewFnId> = BTreeMap::new();
    let mut queue = VecDeque::new();
    queue.push_back(hi.clone());
    while let Some(cur) = queue.pop_front() {
        if cur == *lo {
            break;
        }
        for ch in &family.children[&cur] {
            if *ch != *hi && !prev.contains_key(ch) {
                prev.insert(ch.clone(), cur.clone());
                queue.push_back(ch.clone());
            }
        }
    }
    let mut path = vec![lo.clone()];
    let mut cur = lo.clone();
    while cur != *hi {
        cur = prev[&cur].clone();
        path.push(cur.clone());
    }
    path.reverse();
    let mut view = hi_view.clone();
    for pair in path.windows(2) {
        view = derive_along_edge(family, &pair[0], &pair[1], &view)?;
    }
    Ok(view)
}

pub mod family_presets {
    //! Built-in view families used by the scenario configs.

    use super::*;

    pub const IDENTITY: &str = "identity";
    pub const NULL: &str = "null";
    pub const PARTY_FILTER: &str = "party_filter";
    pub const TOKEN_SUM: &str = "token_sum";
    pub const MIN_TX: &str = "min_tx";
    pub const VALUE_REDACT: &str = "value_redact";
    pub const AMOUNT_DECREMENT: &str = "amount_decrement";

    /// Six functions: identity over four mutually incomparable mid-level
    /// functions over null.
    pub fn default_family(filter_party: &AccountId) -> ViewFamily {
        ViewFamily::new(default_functions(filter_party)).expect("preset family is valid")
    }

    /// The default family plus the decrement function used by the wrong-key
    /// attack demo.
    pub fn family_with_decrement(filter_party: &AccountId) -> ViewFamily {
        let mut fns = default_functions(filter_party);
        fns.push(ViewFunction {
            id: AMOUNT_DECREMENT.into(),
            kind: ViewKind::AmountDecrement,
            parent_ids: vec![IDENTITY.into()],
        });
        for f in fns.iter_mut() {
            if f.id == ViewFnId::from(NULL) {
                f.parent_ids.push(AMOUNT_DECREMENT.into());
            }
        }
        ViewFamily::new(fns).expect("preset family is valid")
    }

    fn default_functions(filter_party: &AccountId) -> Vec<ViewFunction> {
        vec![
            ViewFunction {
                id: IDENTITY.into(),
                kind: ViewKind::Identity,
                parent_ids: vec![],
            },
            ViewFunction {
                id: PARTY_FILTER.into(),
                kind: ViewKind::PartyFilter(filter_party.clone()),
                parent_ids: vec![IDENTITY.into()],
            },
            ViewFunction {
                id: VALUE_REDACT.into(),
                kind: ViewKind::ValueRedact,
                parent_ids: vec![IDENTITY.into()],
            },
            ViewFunction {
                id: MIN_TX.into(),
                kind: ViewKind::MinTx,
                parent_ids: vec![IDENTITY.into()],
            },
            ViewFunction {
                id: TOKEN_SUM.into(),
                kind: ViewKind::TokenSum,
                parent_ids: vec![IDENTITY.into()],
            },
            ViewFunction {
                id: NULL.into(),
                kind: ViewKind::Null,
                parent_ids: vec![
                    PARTY_FILTER.into(),
                    VALUE_REDACT.into(),
                    MIN_TX.into(),
                    TOKEN_SUM.into(),
                ],
            },
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::family_presets::*;
    use super::*;

    fn tx(s: &str, r: &str, amount: u64, nonce: u64) -> Transaction {
        Transaction {
            sender: s.into(),
            receiver: r.into(),
            amount,
            nonce,
        }
    }

    fn fam() -> ViewFamily {
        default_family(&"alice".into())
    }

    fn sample_payload() -> Payload {
        Payload::new(vec![tx("alice", "bob", 3, 0), tx("bob", "carol", 4, 0)]).unwrap()
    }

    #[test]
    fn identity_view_is_the_payload() {
        let f = fam();
        let p = sample_payload();
        let v = apply_view(&f, &IDENTITY.into(), &p).unwrap();
        assert_eq!(v.value, ViewValue::FullPayload(p));
    }

    #[test]
    fn null_view_is_bottom() {
        let f = fam();
        let v = apply_view(&f, &NULL.into(), &sample_payload()).unwrap();
        assert_eq!(v.value, ViewValue::Bottom);
    }

    #[test]
    fn token_sum_adds_amounts() {
        let f = fam();
        let v = apply_view(&f, &TOKEN_SUM.into(), &sample_payload()).unwrap();
        assert_eq!(v.value, ViewValue::Sum(7));
    }

    #[test]
    fn party_filter_matches_linear_scan_oracle() {
        let f = fam();
        let p = Payload::new(vec![
            tx("alice", "bob", 3, 0),
            tx("bob", "carol", 4, 0),
            tx("dave", "alice", 9, 0),
        ])
        .unwrap();
        let v = apply_view(&f, &PARTY_FILTER.into(), &p).unwrap();
        // Independent scan over the list.
        let expected: Vec<Transaction> = p
            .txs()
            .iter()
            .filter(|t| t.sender.0 == "alice" || t.receiver.0 == "alice")
            .cloned()
            .collect();
        assert_eq!(v.value, ViewValue::TxSubset(expected));
        assert_eq!(
            v.value,
            ViewValue::TxSubset(vec![tx("alice", "bob", 3, 0), tx("dave", "alice", 9, 0)])
        );
    }

    #[test]
    fn min_tx_of_empty_payload_is_none() {
        let f = fam();
        let v = apply_view(&f, &MIN_TX.into(), &Payload::empty()).unwrap();
        assert_eq!(v.value, ViewValue::SingleTx(None));
    }

    #[test]
    fn unknown_function_is_an_error() {
        let f = fam();
        assert!(matches!(
            apply_view(&f, &"nope".into(), &sample_payload()),
            Err(ViewError::UnknownFunction(_))
        ));
    }

    #[test]
    fn leq_examples() {
        let f = fam();
        assert!(f.leq(&NULL.into(), &TOKEN_SUM.into()).unwrap());
        assert!(!f.leq(&TOKEN_SUM.into(), &PARTY_FILTER.into()).unwrap());
        assert!(!f.leq(&PARTY_FILTER.into(), &TOKEN_SUM.into()).unwrap());
        for id in f.ids() {
            assert!(f.leq(id, id).unwrap(), "reflexivity for {id}");
        }
    }

    #[test]
    fn partial_order_laws_hold_exhaustively() {
        let f = fam();
        let ids: Vec<_> = f.ids().cloned().collect();
        for a in &ids {
            assert!(f.leq(a, a).unwrap());
            for b in &ids {
                if f.leq(a, b).unwrap() && f.leq(b, a).unwrap() {
                    assert_eq!(a, b, "anti-symmetry");
                }
                for c in &ids {
                    if f.leq(a, b).unwrap() && f.leq(b, c).unwrap() {
                        assert!(f.leq(a, c).unwrap(), "transitivity {a} {b} {c}");
                    }
                }
            }
        }
    }

    #[test]
    fn bounds_hold_for_every_function() {
        let f = fam();
        let span = f.dist(&NULL.into(), &IDENTITY.into()).unwrap();
        let ids: Vec<_> = f.ids().cloned().collect();
        for id in &ids {
            assert!(f.leq(&NULL.into(), id).unwrap());
            assert!(f.leq(id, &IDENTITY.into()).unwrap());
            for other in &ids {
                if f.leq(id, other).unwrap() {
                    assert!(f.dist(id, other).unwrap() <= span);
                }
            }
        }
    }

    /// Exhaustive path enumeration, independent of the BFS in `dist`.
    fn all_downward_path_lengths(
        f: &ViewFamily,
        from: &ViewFnId,
        to: &ViewFnId,
        depth: u32,
        acc: &mut Vec<u32>,
    ) {
        if from == to {
            acc.push(depth);
            return;
        }
        for ch in &f.children[from] {
            all_downward_path_lengths(f, ch, to, depth + 1, acc);
        }
    }

    #[test]
    fn dist_matches_exhaustive_path_oracle() {
        let f = fam();
        let ids: Vec<_> = f.ids().cloned().collect();
        for lo in &ids {
            for hi in &ids {
                if f.leq(lo, hi).unwrap() {
                    let mut lens = Vec::new();
                    all_downward_path_lengths(&f, hi, lo, 0, &mut lens);
                    let expected = *lens.iter().min().expect("leq implies a path");
                    assert_eq!(f.dist(lo, hi).unwrap(), expected, "dist({lo}, {hi})");
                } else {
                    assert!(f.dist(lo, hi).is_err());
                }
            }
        }
        // In the default family the null-to-identity span is two edges.
        assert_eq!(f.dist(&NULL.into(), &IDENTITY.into()).unwrap(), 2);
    }

    #[test]
    fn dist_from_null_positive_for_others() {
        let f = fam();
        assert_eq!(f.dist(&NULL.into(), &NULL.into()).unwrap(), 0);
        for id in f.ids() {
            if *id != ViewFnId::from(NULL) {
                assert!(f.dist(&NULL.into(), id).unwrap() > 0);
            }
        }
    }

    #[test]
    fn inf_and_sup_examples() {
        let f = fam();
        let p = sample_payload();
        let view = |id: &str| apply_view(&f, &id.into(), &p).unwrap();

        let inf = f.inf_views(&[view(IDENTITY), view(NULL)]).unwrap();
        assert_eq!(inf, vec![view(NULL)]);

        let single = f.inf_views(&[view(TOKEN_SUM)]).unwrap();
        assert_eq!(single, vec![view(TOKEN_SUM)]);

        // Incomparable views are both retained.
        let inf = f.inf_views(&[view(PARTY_FILTER), view(TOKEN_SUM)]).unwrap();
        assert_eq!(inf.len(), 2);

        let sup = f.sup_views(&[view(IDENTITY), view(TOKEN_SUM)]).unwrap();
        assert_eq!(sup, vec![view(IDENTITY)]);

        let sup = f.sup_views(&[view(PARTY_FILTER), view(TOKEN_SUM)]).unwrap();
        assert_eq!(sup.len(), 2);

        assert!(matches!(f.inf_views(&[]), Err(ViewError::EmptyViewSet)));
    }

    #[test]
    fn assignment_examples() {
        let f = fam();
        let head = Credential::from_rank(100);
        let mid = Credential::from_rank(10);
        let mut psi = ViewAssignment::new();
        psi.insert(&head, IDENTITY.into());
        psi.insert(&mid, TOKEN_SUM.into());

        assert_eq!(assign_view(&f, &psi, &head).unwrap().id, IDENTITY.into());
        // Same credential again: same function.
        assert_eq!(
            assign_view(&f, &psi, &Credential::from_rank(100)).unwrap().id,
            ViewFnId::from(IDENTITY)
        );
        assert!(matches!(
            assign_view(&f, &psi, &Credential::from_rank(7)),
            Err(ViewError::UnknownCredential(7))
        ));
    }

    #[test]
    fn family_validation_rejects_bad_diagrams() {
        // No identity.
        let e = ViewFamily::new(vec![ViewFunction {
            id: NULL.into(),
            kind: ViewKind::Null,
            parent_ids: vec![],
        }]);
        assert!(matches!(e, Err(ViewError::BadFamily(_))));

        // Cycle between two mid functions.
        let e = ViewFamily::new(vec![
            ViewFunction {
                id: IDENTITY.into(),
                kind: ViewKind::Identity,
                parent_ids: vec![],
            },
            ViewFunction {
                id: "a".into(),
                kind: ViewKind::Identity,
                parent_ids: vec![],
            },
        ]);
        assert!(matches!(e, Err(ViewError::BadFamily(_))));

        // Edge with no derivation rule: token_sum under value_redact.
        let e = ViewFamily::new(vec![
            ViewFunction {
                id: IDENTITY.into(),
                kind: ViewKind::Identity,
                parent_ids: vec![],
            },
            ViewFunction {
                id: VALUE_REDACT.into(),
                kind: ViewKind::ValueRedact,
                parent_ids: vec![IDENTITY.into()],
            },
            ViewFunction {
                id: TOKEN_SUM.into(),
                kind: ViewKind::TokenSum,
                parent_ids: vec![VALUE_REDACT.into()],
            },
            ViewFunction {
                id: NULL.into(),
                kind: ViewKind::Null,
                parent_ids: vec![TOKEN_SUM.into()],
            },
        ]);
        assert!(matches!(e, Err(ViewError::NoDerivation { .. })));

        // Unreachable function (no upward path to identity).
        let e = ViewFamily::new(vec![
            ViewFunction {
                id: IDENTITY.into(),
                kind: ViewKind::Identity,
                parent_ids: vec![],
            },
            ViewFunction {
                id: NULL.into(),
                kind: ViewKind::Null,
                parent_ids: vec![IDENTITY.into()],
            },
            ViewFunction {
                id: TOKEN_SUM.into(),
                kind: ViewKind::TokenSum,
                parent_ids: vec![],
            },
        ]);
        assert!(matches!(e, Err(ViewError::BadFamily(_))));
    }

    #[test]
    fn decrement_family_registers_and_decrements() {
        let f = family_with_decrement(&"alice".into());
        let p = Payload::new(vec![tx("alice", "bob", 5, 0), tx("bob", "carol", 1, 0)]).unwrap();
        let v = apply_view(&f, &AMOUNT_DECREMENT.into(), &p).unwrap();
        match v.value {
            ViewValue::FullPayload(dec) => {
                assert_eq!(dec.txs()[0].amount, 4);
                assert_eq!(dec.txs()[1].amount, 0);
            }
            other => panic!("expected payload-shaped view, got {other:?}"),
        }
        assert_eq!(f.dist(&NULL.into(), &IDENTITY.into()).unwrap(), 2);
    }

    #[test]
    fn payload_rejects_duplicate_nonce() {
        let e = Payload::new(vec![tx("alice", "bob", 1, 0), tx("alice", "carol", 2, 0)]);
        assert!(matches!(e, Err(PayloadError::DuplicateNonce(_, 0))));
    }
}
