//! The run loop: wires players, the network, the workload and the trace
//! together and executes one seeded scenario.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chain::Metablock;
use crate::consensus::{
    elect_leader, Message, PlayerEvent, PlayerState, ProposalKind, ProtocolContext,
};
use crate::crypto::{fe_decrypt, pke_decrypt, FeAudit, FunctionKey, HashDigest, PlayerId};
use crate::net::{ExhaustiveScheduler, DelayPolicy, NetStats, Network};
use crate::views::{Payload, ViewValue};
use crate::wire::Wire;

use super::config::{run_seed_bytes, ConfigError, ScenarioConfig, Setup, WorkloadPlan};
use super::workload::TxGenerator;

/// One structured trace record; rendered as
/// `epoch|event|player|digest-prefix|detail`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub round: u64,
    pub epoch: u64,
    pub event: &'static str,
    pub player: PlayerId,
    pub digest: Option<HashDigest>,
    pub detail: String,
}

/// What the harness knows about a proposed block; the ground truth the
/// checks compare derived views against.
#[derive(Debug, Clone)]
pub struct ProposalRecord {
    pub epoch: u64,
    pub digest: HashDigest,
    pub leader: PlayerId,
    pub kind: ProposalKind,
    pub parent: HashDigest,
    pub payload: Option<Payload>,
    pub block: Metablock,
}

/// Everything a finished run leaves behind.
pub struct RunArtifacts {
    pub config: ScenarioConfig,
    pub setup: Setup,
    pub players: Vec<PlayerState>,
    pub events: Vec<TraceEvent>,
    pub proposals: BTreeMap<HashDigest, ProposalRecord>,
    pub net_stats: NetStats,
    pub bound_violations: Vec<String>,
    /// Violations detected while the run was in flight (consistency,
    /// finality monotonicity).
    pub online_violations: Vec<String>,
    pub audit: FeAudit,
    /// Cumulative envelope count at each epoch boundary.
    pub envelope_snapshots: BTreeMap<u64, u64>,
    pub end_round: u64,
}

impl RunArtifacts {
    pub fn ctx(&self) -> &ProtocolContext {
        &self.setup.ctx
    }

    /// Envelopes scheduled during one epoch's window.
    pub fn envelopes_in_epoch(&self, epoch: u64) -> u64 {
        let start = self.envelope_snapshots.get(&epoch).copied().unwrap_or(0);
        let end = self
            .envelope_snapshots
            .get(&(epoch + 1))
            .copied()
            .unwrap_or(self.net_stats.envelopes);
        end - start
    }
}

#[derive(Debug, Default)]
pub struct RunOptions {
    /// Shuffle within-round delivery order (determinism probe).
    pub permute_delivery_seed: Option<u64>,
    /// Required when the network policy is `exhaustive`.
    pub scheduler: Option<ExhaustiveScheduler>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("exhaustive delay policy requires the enumerate command")]
    SchedulerMissing,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Executes one scenario run; returns the artifacts and, in exhaustive mode,
/// the scheduler for the next enumeration step.
pub fn run_scenario(
    config: &ScenarioConfig,
    mut opts: RunOptions,
) -> Result<(RunArtifacts, Option<ExhaustiveScheduler>), RunError> {
    let setup = config.build()?;
    let ctx = &setup.ctx;
    let n = ctx.n;
    let rpe = ctx.clock.rounds_per_epoch;
    let end_round = (setup.epochs + 1) * rpe;
    let run_seed = run_seed_bytes(setup.seed);

    let mut players: Vec<PlayerState> = (0..n)
        .map(|i| {
            PlayerState::new(
                PlayerId(i),
                setup.behaviors[i as usize].clone(),
                ctx,
                &run_seed,
            )
        })
        .collect();

    let crash_rounds: Vec<Option<u64>> = setup
        .behaviors
        .iter()
        .map(|b| match b {
            crate::consensus::Behavior::Crash { at_round } => Some(*at_round),
            _ => None,
        })
        .collect();
    let mut net = Network::new(setup.net, setup.seed, crash_rounds);
    if setup.net.policy == DelayPolicy::Exhaustive {
        let mut sched = opts.scheduler.take().ok_or(RunError::SchedulerMissing)?;
        sched.begin_run();
        net.attach_scheduler(sched);
    }

    let mut generator = match &setup.workload {
        WorkloadPlan::Random {
            txs_per_epoch,
            max_amount,
        } => Some(TxGenerator::new(
            setup.seed,
            &ctx.genesis_balances,
            *txs_per_epoch,
            *max_amount,
        )),
        WorkloadPlan::Scripted(_) => None,
    };

    let mut permute_rng = opts
        .permute_delivery_seed
        .map(ChaCha8Rng::seed_from_u64);

    let mut events: Vec<TraceEvent> = Vec::new();
    let mut proposals: BTreeMap<HashDigest, ProposalRecord> = BTreeMap::new();
    let mut online_violations: Vec<String> = Vec::new();
    let mut envelope_snapshots: BTreeMap<u64, u64> = BTreeMap::new();

    for round in 0..=end_round {
        let epoch_now = ctx.clock.epoch_of(round);
        let mut outputs: Vec<(PlayerId, crate::consensus::StepOutput)> = Vec::new();

        // Deliveries first: boundary-round votes must land before the new
        // epoch's proposal is built.
        let mut due = net.step(round);
        if let Some(rng) = &mut permute_rng {
            due.shuffle(rng);
        }
        for env in due {
            let out = players[env.recipient.0 as usize].on_message(ctx, round, &env.payload);
            outputs.push((env.recipient, out));
        }

        if ctx.clock.is_epoch_start(round) {
            let epoch = epoch_now;
            envelope_snapshots.insert(epoch, net.stats.envelopes);
            if epoch >= 1 && epoch <= setup.epochs {
                dispatch_workload(ctx, &setup.workload, &mut generator, &mut players, epoch);
                for i in 0..n {
                    let p = &mut players[i as usize];
                    if !p.is_crashed(round) {
                        let out = p.on_epoch_start(ctx, epoch, round);
                        outputs.push((PlayerId(i), out));
                    }
                }
            }
        }

        for (pid, out) in outputs {
            for ev in &out.events {
                if let PlayerEvent::FinalityConflict { detail } = ev {
                    online_violations
                        .push(format!("round {round}: {pid} finality conflict: {detail}"));
                }
                events.push(to_trace_event(round, epoch_now, pid, ev));
            }
            for msg in &out.outgoing {
                if let Message::Proposal(block) = msg {
                    record_proposal(ctx, &players, block, &out.events, &mut proposals);
                }
                net.broadcast(pid, round, msg.to_bytes(), n);
            }
            if setup.echo {
                for bytes in &out.echoes {
                    net.broadcast(pid, round, (**bytes).clone(), n);
                }
            }
        }

        // Online consistency: finalized chains of honest players must stay
        // pairwise prefix-comparable at every step.
        check_consistency_step(ctx, &players, round, &mut online_violations);
    }

    let scheduler = net.take_scheduler();
    let artifacts = RunArtifacts {
        config: config.clone(),
        players,
        events,
        proposals,
        net_stats: net.stats.clone(),
        bound_violations: net.bound_violations.clone(),
        online_violations,
        audit: FeAudit::default(),
        envelope_snapshots,
        end_round,
        setup,
    };
    Ok((artifacts, scheduler))
}

fn dispatch_workload(
    ctx: &ProtocolContext,
    plan: &WorkloadPlan,
    generator: &mut Option<TxGenerator>,
    players: &mut [PlayerState],
    epoch: u64,
) {
    match plan {
        WorkloadPlan::Random { .. } => {
            let batch = generator.as_mut().expect("random plan has generator").batch();
            if batch.is_empty() {
                return;
            }
            for i in 0..ctx.m as usize {
                players[i].payload_queue.push_back(batch.clone());
            }
        }
        WorkloadPlan::Scripted(script) => {
            let leader = elect_leader(epoch, ctx.m).expect("m >= 1");
            let queue = &mut players[leader.0 as usize].payload_queue;
            queue.clear();
            if let Some(payload) = script.get(&epoch) {
                queue.push_back(payload.clone());
            }
        }
    }
}

fn record_proposal(
    ctx: &ProtocolContext,
    players: &[PlayerState],
    block: &Metablock,
    events: &[PlayerEvent],
    proposals: &mut BTreeMap<HashDigest, ProposalRecord>,
) {
    let digest = block.digest();
    let kind = events
        .iter()
        .find_map(|e| match e {
            PlayerEvent::Propose {
                digest: d, kind, ..
            } if *d == digest => Some(*kind),
            _ => None,
        })
        .unwrap_or(ProposalKind::Honest);
    let payload = payload_of_block(ctx, players, block);
    proposals.insert(
        digest,
        ProposalRecord {
            epoch: block.epoch,
            digest,
            leader: block.leader,
            kind,
            parent: block.parent_digest,
            payload,
            block: block.clone(),
        },
    );
}

/// Opens the leader's own envelope to learn the proposed payload; head
/// players always hold a payload-shaped view of their own blocks.
pub fn payload_of_block(
    ctx: &ProtocolContext,
    players: &[PlayerState],
    block: &Metablock,
) -> Option<Payload> {
    let leader = &players[block.leader.0 as usize];
    let entry = block.entry_for(block.leader)?;
    let bytes = pke_decrypt(&entry.key_envelope, &leader.pke_key).ok()?;
    let key = FunctionKey::from_bytes(&bytes).ok()?;
    match fe_decrypt(&ctx.family, &key, &block.fe_ciphertext).ok()?.value {
        ViewValue::FullPayload(p) => Some(p),
        _ => None,
    }
}

fn to_trace_event(
    round: u64,
    current_epoch: u64,
    player: PlayerId,
    ev: &PlayerEvent,
) -> TraceEvent {
    let sanitize = |s: &str| s.replace('|', "/").replace('\n', " ");
    match ev {
        PlayerEvent::Propose {
            epoch,
            digest,
            kind,
            parent,
        } => TraceEvent {
            round,
            epoch: *epoch,
            event: "propose",
            player,
            digest: Some(*digest),
            detail: format!(
                "round={round},kind={},parent={}",
                match kind {
                    ProposalKind::Honest => "honest",
                    ProposalKind::Rational => "rational",
                    ProposalKind::WrongKey => "wrong-key",
                },
                parent.short_hex()
            ),
        },
        PlayerEvent::Vote {
            epoch,
            digest,
            verdict,
        } => TraceEvent {
            round,
            epoch: *epoch,
            event: "vote",
            player,
            digest: Some(*digest),
            detail: format!(
                "round={round},verdict={}",
                verdict.map(|v| v.to_string()).unwrap_or_else(|| "ack".into())
            ),
        },
        PlayerEvent::Notarize { epoch, digest } => TraceEvent {
            round,
            epoch: *epoch,
            event: "notarize",
            player,
            digest: Some(*digest),
            detail: format!("round={round}"),
        },
        PlayerEvent::Finalize { epoch, digest } => TraceEvent {
            round,
            epoch: *epoch,
            event: "finalize",
            player,
            digest: Some(*digest),
            detail: format!("round={round}"),
        },
        PlayerEvent::Leak { epoch, function } => TraceEvent {
            round,
            epoch: *epoch,
            event: "leak",
            player,
            digest: None,
            detail: format!("round={round},function={function}"),
        },
        PlayerEvent::Drop { reason } => TraceEvent {
            round,
            epoch: current_epoch,
            event: "drop",
            player,
            digest: None,
            detail: format!("round={round},reason={}", sanitize(reason)),
        },
        PlayerEvent::FinalityConflict { detail } => TraceEvent {
            round,
            epoch: current_epoch,
            event: "finality-conflict",
            player,
            digest: None,
            detail: format!("round={round},detail={}", sanitize(detail)),
        },
    }
}

fn prefix_comparable(a: &[HashDigest], b: &[HashDigest]) -> bool {
    let k = a.len().min(b.len());
    a[..k] == b[..k]
}

fn check_consistency_step(
    ctx: &ProtocolContext,
    players: &[PlayerState],
    round: u64,
    violations: &mut Vec<String>,
) {
    let honest: Vec<&PlayerState> = players
        .iter()
        .filter(|p| !p.behavior.is_adversary())
        .collect();
    for (i, a) in honest.iter().enumerate() {
        for b in honest.iter().skip(i + 1) {
            let pa = a.chain.finalized_path();
            let pb = b.chain.finalized_path();
            if !prefix_comparable(pa, pb) {
                violations.push(format!(
                    "round {round}: finalized chains of {} and {} diverge",
                    a.id, b.id
                ));
            }
        }
    }
    let _ = ctx;
}
