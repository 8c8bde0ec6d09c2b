//! Named property checks evaluated over finished runs.
//!
//! Every enabled property maps to exactly one named check with a pass/fail
//! line in the report; failures also append to the report's violation list.

use std::collections::{BTreeMap, BTreeSet};

use crate::adversary::{
    dominance_playout, joint_knowledge, leak_escalates, revenue, utility, PlayoutInput, Rational,
};
use crate::chain::{BalanceBook, EntryOutcome, Variant};
use crate::consensus::{elect_leader, Behavior, ProposalKind};
use crate::crypto::{fe_decrypt, pke_decrypt, FunctionKey, HashDigest, PlayerId};
use crate::views::{apply_view, ViewFnId};
use crate::wire::Wire;

use super::world::RunArtifacts;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Default)]
pub struct CheckOutcome {
    pub lines: Vec<CheckLine>,
    pub violations: Vec<String>,
}

impl CheckOutcome {
    fn push(&mut self, name: &str, failures: Vec<String>, ok_detail: &str) {
        if failures.is_empty() {
            self.lines.push(CheckLine {
                name: name.to_string(),
                passed: true,
                detail: ok_detail.to_string(),
            });
        } else {
            self.lines.push(CheckLine {
                name: name.to_string(),
                passed: false,
                detail: format!("{} violation(s)", failures.len()),
            });
            for f in failures {
                self.violations.push(format!("{name}: {f}"));
            }
        }
    }
}

fn honest_players(artifacts: &RunArtifacts) -> Vec<usize> {
    artifacts
        .setup
        .behaviors
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.is_adversary())
        .map(|(i, _)| i)
        .collect()
}

/// Evaluates every check applicable to the run.
pub fn evaluate(artifacts: &RunArtifacts) -> CheckOutcome {
    let mut out = CheckOutcome::default();
    check_consistency(artifacts, &mut out);
    check_uniqueness(artifacts, &mut out);
    check_bound_compliance(artifacts, &mut out);
    check_access_discipline(artifacts, &mut out);
    check_hierarchy(artifacts, &mut out);
    check_integrity(artifacts, &mut out);
    check_liveness(artifacts, &mut out);
    check_generalization(artifacts, &mut out);
    check_dominance(artifacts, &mut out);
    check_collusion_bound(artifacts, &mut out);
    out
}

fn check_consistency(artifacts: &RunArtifacts, out: &mut CheckOutcome) {
    let mut failures: Vec<String> = artifacts
        .online_violations
        .iter()
        .filter(|v| v.contains("diverge"))
        .cloned()
        .collect();
    // End-of-run pairwise check as a belt over the online one.
    let honest = honest_players(artifacts);
    for (i, &a) in honest.iter().enumerate() {
        for &b in honest.iter().skip(i + 1) {
            let pa = artifacts.players[a].chain.finalized_path();
            let pb = artifacts.players[b].chain.finalized_path();
            let k = pa.len().min(pb.len());
            if pa[..k] != pb[..k] {
                failures.push(format!("final chains of p{a} and p{b} diverge at end of run"));
            }
        }
    }
    out.push("consistency", failures, "honest finalized chains prefix-comparable at every step");
}

fn check_uniqueness(artifacts: &RunArtifacts, out: &mut CheckOutcome) {
    let mut per_epoch: BTreeMap<u64, BTreeSet<HashDigest>> = BTreeMap::new();
    for &i in &honest_players(artifacts) {
        let st = &artifacts.players[i].chain;
        for d in st.notarized_digests() {
            if let Some(block) = st.block(d) {
                per_epoch.entry(block.epoch).or_default().insert(*d);
            }
        }
    }
    let failures: Vec<String> = per_epoch
        .iter()
        .filter(|(_, set)| set.len() > 1)
        .map(|(e, set)| format!("epoch {e} has {} notarized blocks", set.len()))
        .collect();
    out.push(
        "per-epoch-uniqueness",
        failures,
        "at most one notarized block per epoch across honest players",
    );
}

fn check_bound_compliance(artifacts: &RunArtifacts, out: &mut CheckOutcome) {
    let mut failures = artifacts.bound_violations.clone();
    failures.extend(
        artifacts
            .online_violations
            .iter()
            .filter(|v| v.contains("finality conflict"))
            .cloned(),
    );
    out.push(
        "bound-compliance",
        failures,
        "every delivery within max(r0, GST) + delta; finality monotone",
    );
}

fn check_access_discipline(artifacts: &RunArtifacts, out: &mut CheckOutcome) {
    let failures = if artifacts.audit.raw_opens == 0 {
        vec![]
    } else {
        vec![format!(
            "sealed ciphertext bytes read {} time(s) outside fe_decrypt",
            artifacts.audit.raw_opens
        )]
    };
    out.push("access-discipline", failures, "no raw sealed-payload access");
}

/// Functional hierarchy consistency: every finalized block lists exactly the
/// assigned function for every player, in every honest player's state.
fn check_hierarchy(artifacts: &RunArtifacts, out: &mut CheckOutcome) {
    let ctx = artifacts.ctx();
    let mut failures = Vec::new();
    for &i in &honest_players(artifacts) {
        let st = &artifacts.players[i].chain;
        for block in st.finalized_blocks() {
            let mut covered = BTreeSet::new();
            for entry in &block.per_player {
                covered.insert(entry.player);
                let assigned = ctx.assigned_fn(entry.player);
                if entry.function_id != *assigned {
                    failures.push(format!(
                        "p{i}: finalized epoch {} lists {} for {} (assigned {assigned})",
                        block.epoch, entry.function_id, entry.player
                    ));
                }
            }
            if covered.len() != ctx.n as usize {
                failures.push(format!(
                    "p{i}: finalized epoch {} covers {} players of {}",
                    block.epoch,
                    covered.len(),
                    ctx.n
                ));
            }
        }
    }
    out.push(
        "def2-hierarchy",
        failures,
        "finalized listings match the published assignment for all players",
    );
}

/// Block payload view integrity: every honest player's derived entry equals
/// the assigned view of the proposed payload; head players' finalized
/// payloads replay without double spending; no leaked key grants an honest
/// player a strictly higher view of a finalized payload.
fn check_integrity(artifacts: &RunArtifacts, out: &mut CheckOutcome) {
    let ctx = artifacts.ctx();
    let mut failures = Vec::new();

    for &i in &honest_players(artifacts) {
        let player = &artifacts.players[i];
        let path = player.chain.finalized_path();
        let assigned = ctx.assigned_fn(PlayerId(i as u32));
        if player.derived.entries.len() != path.len() - 1 {
            failures.push(format!(
                "p{i}: derived chain has {} entries for {} finalized blocks",
                player.derived.entries.len(),
                path.len() - 1
            ));
            continue;
        }
        for (entry, digest) in player.derived.entries.iter().zip(path[1..].iter()) {
            let Some(record) = artifacts.proposals.get(digest) else {
                failures.push(format!(
                    "p{i}: finalized block {} has no proposal record",
                    digest.short_hex()
                ));
                continue;
            };
            let Some(payload) = &record.payload else {
                failures.push(format!(
                    "p{i}: payload of finalized epoch {} unknown",
                    record.epoch
                ));
                continue;
            };
            let expected = apply_view(&ctx.family, assigned, payload)
                .expect("assigned functions are registered");
            match &entry.outcome {
                EntryOutcome::View(v) if *v == expected => {}
                EntryOutcome::View(v) => failures.push(format!(
                    "p{i}: epoch {} derived {:?} but assignment implies {:?}",
                    entry.epoch, v.value, expected.value
                )),
                EntryOutcome::Flagged(flag) => failures.push(format!(
                    "p{i}: epoch {} entry flagged: {flag}",
                    entry.epoch
                )),
            }
        }
    }

    // Head players' finalized payload sequence must replay cleanly.
    if let Some(&h) = honest_players(artifacts).first() {
        let mut book = BalanceBook::new(&ctx.genesis_balances);
        for digest in &artifacts.players[h].chain.finalized_path()[1..] {
            let Some(record) = artifacts.proposals.get(digest) else {
                continue;
            };
            let Some(payload) = &record.payload else {
                continue;
            };
            if let Err(e) = book.validate_payload(payload) {
                failures.push(format!(
                    "finalized epoch {} double spends: {e}",
                    record.epoch
                ));
            }
            book.apply_payload(payload);
        }
    }

    // Leaked keys: an honest player that can decrypt a finalized payload
    // strictly above its entitlement breaks integrity.
    for &i in &honest_players(artifacts) {
        let player = &artifacts.players[i];
        let entitled = ctx.assigned_fn(PlayerId(i as u32));
        for (from, epoch, key) in &player.observed_leaks {
            let block = player
                .chain
                .finalized_path()
                .iter()
                .skip(1)
                .filter_map(|d| player.chain.block(d))
                .find(|b| b.epoch == *epoch);
            let Some(block) = block else { continue };
            if !leak_escalates(&ctx.family, entitled, &key.function_id) {
                continue;
            }
            if fe_decrypt(&ctx.family, key, &block.fe_ciphertext).is_ok() {
                failures.push(format!(
                    "p{i} recovers {} view of finalized epoch {epoch} from {from}'s leaked key (entitled to {entitled})",
                    key.function_id
                ));
            }
        }
    }

    out.push(
        "def2-integrity",
        failures,
        "derived views equal assigned views of the proposed payloads",
    );
}

/// Liveness: any five consecutive honest-leader epochs after GST finalize a
/// new honest-proposed block for every honest player by the window's end.
fn check_liveness(artifacts: &RunArtifacts, out: &mut CheckOutcome) {
    let ctx = artifacts.ctx();
    let setup = &artifacts.setup;
    let gst = setup.net.gst;
    let mut failures = Vec::new();

    let leader_is_honest = |e: u64| {
        let l = elect_leader(e, ctx.m).expect("m >= 1");
        !setup.behaviors[l.0 as usize].is_adversary()
    };
    // Per player: digest -> earliest finalize round.
    let mut finalize_rounds: BTreeMap<PlayerId, BTreeMap<HashDigest, u64>> = BTreeMap::new();
    for ev in &artifacts.events {
        if ev.event == "finalize" {
            if let Some(d) = ev.digest {
                finalize_rounds
                    .entry(ev.player)
                    .or_default()
                    .entry(d)
                    .or_insert(ev.round);
            }
        }
    }

    let mut windows = 0u64;
    if setup.epochs >= 5 {
        for a in 1..=(setup.epochs - 4) {
            if !(a..a + 5).all(leader_is_honest) {
                continue;
            }
            if ctx.clock.epoch_start_round(a) < gst {
                continue;
            }
            windows += 1;
            let start = ctx.clock.epoch_start_round(a);
            let deadline = ctx.clock.epoch_start_round(a + 5);
            for &i in &honest_players(artifacts) {
                let player = PlayerId(i as u32);
                let empty = BTreeMap::new();
                let rounds = finalize_rounds.get(&player).unwrap_or(&empty);
                let found = rounds.iter().any(|(d, r)| {
                    *r > start
                        && *r <= deadline
                        && artifacts
                            .proposals
                            .get(d)
                            .map(|rec| !setup.behaviors[rec.leader.0 as usize].is_adversary())
                            .unwrap_or(false)
                });
                if !found {
                    failures.push(format!(
                        "p{i}: no new honest-proposed final block in epochs [{a}, {}]",
                        a + 4
                    ));
                }
            }
        }
    }
    out.push(
        "def2-liveness",
        failures,
        &format!("{windows} honest-leader window(s) all finalized in time"),
    );
}

/// With the identity assignment everywhere, every player chain must equal
/// the ideal chain byte for byte.
fn check_generalization(artifacts: &RunArtifacts, out: &mut CheckOutcome) {
    let ctx = artifacts.ctx();
    let identity = ctx.family.identity_id();
    let all_identity = (0..ctx.n).all(|i| ctx.assigned_fn(PlayerId(i)) == identity);
    if !all_identity {
        return;
    }
    let mut failures = Vec::new();
    let Some(&h) = honest_players(artifacts).first() else {
        return;
    };
    let reference = &artifacts.players[h];
    let payloads: Vec<(u64, crate::views::Payload)> = reference
        .chain
        .finalized_path()[1..]
        .iter()
        .filter_map(|d| {
            let rec = artifacts.proposals.get(d)?;
            Some((rec.epoch, rec.payload.clone()?))
        })
        .collect();
    let ideal = crate::chain::ideal_chain(&ctx.family, identity, &ctx.genesis_digest, &payloads);
    let ideal_digest = ideal.digest(&ctx.genesis_digest);
    for &i in &honest_players(artifacts) {
        let player = &artifacts.players[i];
        // Compare over the common finalized prefix.
        let len = player.derived.entries.len();
        if player.derived.entries[..] != ideal.entries[..len] {
            failures.push(format!("p{i}: derived chain deviates from the ideal chain"));
        }
        if len == ideal.entries.len()
            && player.derived.digest(&ctx.genesis_digest) != ideal_digest
        {
            failures.push(format!("p{i}: chain digest differs from the ideal digest"));
        }
    }
    out.push(
        "generalization",
        failures,
        "identity assignment reproduces the standard blockchain for every player",
    );
}

fn check_dominance(artifacts: &RunArtifacts, out: &mut CheckOutcome) {
    let ctx = artifacts.ctx();
    let setup = &artifacts.setup;
    let Some(beta1) = setup.beta1 else { return };
    if ctx.variant != Variant::Rft || ctx.adversary.members.is_empty() || ctx.n > 8 {
        return;
    }
    let rational_heads: Vec<PlayerId> = ctx
        .adversary
        .members
        .iter()
        .copied()
        .filter(|p| ctx.is_head(*p))
        .collect();
    if rational_heads.is_empty() {
        return;
    }
    // Deterministic payload sample: the first recorded proposal carrying one.
    let payload = artifacts
        .proposals
        .values()
        .min_by_key(|r| (r.epoch, r.digest.0))
        .and_then(|r| r.payload.clone())
        .unwrap_or_else(crate::views::Payload::empty);
    let mut failures = Vec::new();
    for leader in rational_heads {
        let report = dominance_playout(&PlayoutInput {
            n: ctx.n,
            m: ctx.m,
            family: &ctx.family,
            psi: &ctx.psi,
            credentials: &ctx.credentials,
            adversary: &ctx.adversary.members,
            leader,
            beta1,
            revenue_model: &setup.revenue_model,
            payload: &payload,
            genesis_balances: &ctx.genesis_balances,
        });
        if !report.dominant {
            failures.push(format!(
                "rational block is not dominant for leader {leader}"
            ));
        }
    }
    out.push(
        "dominance",
        failures,
        "the rational block maximizes utility over the enumerated strategies",
    );
}

/// The adversary's joint knowledge per finalized epoch: identity exactly
/// when a rational leader proposed, else the sup of its assigned views.
fn check_collusion_bound(artifacts: &RunArtifacts, out: &mut CheckOutcome) {
    let ctx = artifacts.ctx();
    if ctx.variant != Variant::Rft || ctx.adversary.members.is_empty() {
        return;
    }
    if artifacts
        .setup
        .behaviors
        .iter()
        .any(|b| matches!(b, Behavior::ByzantineDemo { .. }))
    {
        return; // the key-broadcast demo deliberately breaks this bound
    }
    let Some(&h) = honest_players(artifacts).first() else {
        return;
    };
    let mut failures = Vec::new();
    let reference = &artifacts.players[h].chain;
    for digest in &reference.finalized_path()[1..] {
        let block = reference.block(digest).unwrap();
        let mut actual: BTreeSet<ViewFnId> = BTreeSet::new();
        for member in &ctx.adversary.members {
            let Some(entry) = block.entry_for(*member) else {
                continue;
            };
            let Ok(bytes) = pke_decrypt(
                &entry.key_envelope,
                &artifacts.players[member.0 as usize].pke_key,
            ) else {
                continue;
            };
            if let Ok(key) = FunctionKey::from_bytes(&bytes) {
                actual.insert(key.function_id);
            }
        }
        let sup_actual = joint_knowledge(&ctx.family, &actual);
        let expected: BTreeSet<ViewFnId> = if ctx.adversary.members.contains(&block.leader) {
            [ctx.family.identity_id().clone()].into_iter().collect()
        } else {
            let assigned: BTreeSet<ViewFnId> = ctx
                .adversary
                .members
                .iter()
                .map(|m| ctx.assigned_fn(*m).clone())
                .collect();
            joint_knowledge(&ctx.family, &assigned)
        };
        if sup_actual != expected {
            failures.push(format!(
                "epoch {}: joint knowledge {:?} differs from expected {:?}",
                block.epoch, sup_actual, expected
            ));
        }
    }
    out.push(
        "collusion-bound",
        failures,
        "adversary joint knowledge matches the leader-dependent bound",
    );
}

/// Complexity-statistics verdict over runs at several player counts.
pub struct SizesReport {
    pub lines: Vec<CheckLine>,
    pub passed: bool,
}

/// Entry counts must equal n exactly; envelope counts must scale like the
/// cube of the player count (full echo); vote encodings stay constant-size.
pub fn verify_sizes(runs: &[&RunArtifacts], tolerance_factor: f64) -> SizesReport {
    let mut lines = Vec::new();
    let mut all_ok = true;

    for artifacts in runs {
        let n = artifacts.ctx().n;
        let bad: Vec<String> = artifacts
            .proposals
            .values()
            .filter(|r| r.block.per_player.len() != n as usize)
            .map(|r| format!("epoch {}: {} entries", r.epoch, r.block.per_player.len()))
            .collect();
        let passed = bad.is_empty();
        all_ok &= passed;
        lines.push(CheckLine {
            name: format!("sizes-entries-n{n}"),
            passed,
            detail: if passed {
                format!("every metablock carries exactly {n} entries")
            } else {
                bad.join("; ")
            },
        });
    }

    let avg = |art: &RunArtifacts| {
        let epochs = art.setup.epochs;
        let total: u64 = (1..=epochs).map(|e| art.envelopes_in_epoch(e)).sum();
        total as f64 / epochs as f64
    };
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let (a, b) = (runs[i], runs[j]);
            let (na, nb) = (a.ctx().n as f64, b.ctx().n as f64);
            let ratio = avg(b) / avg(a);
            let ideal = (nb / na).powi(3);
            let passed = ratio >= ideal / tolerance_factor && ratio <= ideal * tolerance_factor;
            all_ok &= passed;
            lines.push(CheckLine {
                name: format!("sizes-scaling-n{}-to-n{}", na as u32, nb as u32),
                passed,
                detail: format!(
                    "message ratio {ratio:.2} vs ideal {ideal:.2} (tolerance x{tolerance_factor})"
                ),
            });
        }
    }

    // Vote encodings do not grow with n.
    let vote_sizes: BTreeSet<usize> = runs
        .iter()
        .flat_map(|art| {
            art.players.iter().flat_map(|p| {
                p.chain.finalized_path()[1..]
                    .iter()
                    .filter_map(|d| p.chain.block(d))
                    .map(|b| {
                        crate::consensus::Message::Vote(crate::chain::Vote::cft(
                            PlayerId(0),
                            b.epoch,
                            b.digest(),
                        ))
                        .to_bytes()
                        .len()
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let passed = vote_sizes.len() <= 1;
    all_ok &= passed;
    lines.push(CheckLine {
        name: "sizes-vote-constant".into(),
        passed,
        detail: format!("observed vote encodings: {vote_sizes:?} bytes"),
    });

    SizesReport {
        lines,
        passed: all_ok,
    }
}

/// Utility series for the report: one exact value per proposed epoch.
pub fn utility_series(artifacts: &RunArtifacts) -> Vec<(u64, bool, Rational)> {
    let ctx = artifacts.ctx();
    let setup = &artifacts.setup;
    let Some(beta1) = setup.beta1 else {
        return Vec::new();
    };
    if ctx.adversary.members.is_empty() {
        return Vec::new();
    }
    let notarized_by_honest = |d: &HashDigest| {
        honest_players(artifacts)
            .iter()
            .any(|&i| artifacts.players[i].chain.is_notarized(d))
    };
    let mut by_epoch: BTreeMap<u64, Vec<&super::world::ProposalRecord>> = BTreeMap::new();
    for rec in artifacts.proposals.values() {
        by_epoch.entry(rec.epoch).or_default().push(rec);
    }
    let mut series = Vec::new();
    for (epoch, mut recs) in by_epoch {
        recs.sort_by_key(|r| (!notarized_by_honest(&r.digest), r.digest.0));
        let rec = recs[0];
        let notarized = notarized_by_honest(&rec.digest);
        let mut received = Vec::new();
        for member in &ctx.adversary.members {
            let Some(entry) = rec.block.entry_for(*member) else {
                continue;
            };
            if let Ok(bytes) = pke_decrypt(
                &entry.key_envelope,
                &artifacts.players[member.0 as usize].pke_key,
            ) {
                if let Ok(key) = FunctionKey::from_bytes(&bytes) {
                    received.push(key.function_id);
                }
            }
        }
        let tau = match &rec.payload {
            Some(p) => revenue(
                p,
                ctx.adversary.members.contains(&rec.leader),
                &setup.revenue_model,
            ),
            None => Rational::new(0, 1),
        };
        let u = utility(&ctx.family, &received, tau, notarized, beta1);
        series.push((epoch, notarized, u));
    }
    series
}

/// Summary row for one epoch, assembled from a reference honest player.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochSummary {
    pub epoch: u64,
    pub leader: u32,
    pub kind: Option<ProposalKind>,
    pub proposals: u32,
    pub yes: u32,
    pub no: u32,
    pub notarized: bool,
    pub digest_prefix: Option<String>,
}

pub fn epoch_summaries(artifacts: &RunArtifacts) -> Vec<EpochSummary> {
    let ctx = artifacts.ctx();
    let setup = &artifacts.setup;
    let reference = honest_players(artifacts)
        .first()
        .map(|&i| &artifacts.players[i].chain);
    let mut by_epoch: BTreeMap<u64, Vec<&super::world::ProposalRecord>> = BTreeMap::new();
    for rec in artifacts.proposals.values() {
        by_epoch.entry(rec.epoch).or_default().push(rec);
    }
    (1..=setup.epochs)
        .map(|epoch| {
            let leader = elect_leader(epoch, ctx.m).expect("m >= 1").0;
            let recs = by_epoch.get(&epoch);
            let (kind, digest, yes, no, notarized) = match (recs, reference) {
                (Some(recs), Some(chain)) => {
                    let mut sorted: Vec<_> = recs.to_vec();
                    sorted.sort_by_key(|r| (!chain.is_notarized(&r.digest), r.digest.0));
                    let rec = sorted[0];
                    (
                        Some(rec.kind),
                        Some(rec.digest),
                        chain.yes_count(&rec.digest) as u32,
                        chain.no_count(&rec.digest) as u32,
                        chain.is_notarized(&rec.digest),
                    )
                }
                _ => (None, None, 0, 0, false),
            };
            EpochSummary {
                epoch,
                leader,
                kind,
                proposals: recs.map(|r| r.len() as u32).unwrap_or(0),
                yes,
                no,
                notarized,
                digest_prefix: digest.map(|d| d.short_hex()),
            }
        })
        .collect()
}
