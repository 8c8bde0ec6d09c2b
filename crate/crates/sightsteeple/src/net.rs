//! Deterministic discrete-event message layer with partial synchrony.
//!
//! Every broadcast schedules one envelope per live recipient, with a delivery
//! round chosen by the delay policy inside `[r0+1, max(r0, GST) + delta]`.
//! Messages are never dropped or forged; the adversary's only network power
//! is delay choice within the bound. Delivery within a round follows a
//! canonical order so identical seeds give identical traces.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::PlayerId;

/// How per-message delays are chosen within the partial-synchrony bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayPolicy {
    /// Every delivery lands exactly on the bound.
    WorstCase,
    /// Uniform random delivery round within the admissible window,
    /// independent per recipient.
    UniformRandom,
    /// Model-checking mode: one enumerated delay per message, shared by all
    /// recipients, driven by an [`ExhaustiveScheduler`].
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Post-stabilization delivery bound, in rounds. Must be >= 1.
    pub delta: u64,
    /// Global stabilization time, as a round number.
    pub gst: u64,
    pub policy: DelayPolicy,
}

/// One scheduled point-to-point delivery.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub sender: PlayerId,
    pub send_round: u64,
    pub seq: u64,
    pub recipient: PlayerId,
    pub delivery_round: u64,
    pub payload: Arc<Vec<u8>>,
}

/// Depth-first enumerator over all per-message delay choices.
///
/// A schedule is the sequence of choices consumed by one simulation run;
/// [`ExhaustiveScheduler::advance`] steps to the next schedule like an
/// odometer and returns false once every assignment has been visited.
#[derive(Debug, Default, Clone)]
pub struct ExhaustiveScheduler {
    choices: Vec<u64>,
    ranges: Vec<u64>,
    cursor: usize,
}

impl ExhaustiveScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Consumes the next choice in `[0, range)`, extending the schedule with
    /// the first option when running past the recorded prefix.
    fn next_choice(&mut self, range: u64) -> u64 {
        debug_assert!(range >= 1);
        let i = self.cursor;
        self.cursor += 1;
        if i < self.choices.len() {
            self.ranges[i] = range;
            self.choices[i]
        } else {
            self.choices.push(0);
            self.ranges.push(range);
            0
        }
    }

    /// Rewinds for the next run without changing the planned choices.
    pub fn begin_run(&mut self) {
        self.cursor = 0;
    }

    /// Steps to the next unvisited schedule; false when exhausted.
    pub fn advance(&mut self) -> bool {
        while let Some(last) = self.choices.last().copied() {
            let range = *self.ranges.last().unwrap();
            if last + 1 < range {
                *self.choices.last_mut().unwrap() += 1;
                return true;
            }
            self.choices.pop();
            self.ranges.pop();
        }
        false
    }

    /// Number of choices consumed by the last run.
    pub fn choice_count(&self) -> usize {
        self.cursor
    }
}

#[derive(Debug, Default, Clone, Serialize, PartialEq, Eq)]
pub struct NetStats {
    /// Broadcast calls.
    pub messages: u64,
    /// Point-to-point envelopes scheduled.
    pub envelopes: u64,
    /// Total payload bytes across envelopes.
    pub bytes: u64,
}

/// The event queue. Single source of message ordering for a run.
pub struct Network {
    config: NetworkConfig,
    rng: ChaCha8Rng,
    /// Static crash schedule; index = player id. `None` = never crashes.
    crash_rounds: Vec<Option<u64>>,
    queue: Vec<Envelope>,
    next_seq: u64,
    scheduler: Option<ExhaustiveScheduler>,
    pub stats: NetStats,
    pub bound_violations: Vec<String>,
}

impl Network {
    pub fn new(config: NetworkConfig, seed: u64, crash_rounds: Vec<Option<u64>>) -> Self {
        assert!(config.delta >= 1, "delta must be at least one round");
        let mut seed_bytes = [0u8; 32];
        seed_bytes[..8].copy_from_slice(&seed.to_be_bytes());
        seed_bytes[8..16].copy_from_slice(b"net-rng\0");
        Network {
            config,
            rng: ChaCha8Rng::from_seed(seed_bytes),
            crash_rounds,
            queue: Vec::new(),
            next_seq: 0,
            scheduler: None,
            stats: NetStats::default(),
            bound_violations: Vec::new(),
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn attach_scheduler(&mut self, s: ExhaustiveScheduler) {
        self.scheduler = Some(s);
    }

    pub fn take_scheduler(&mut self) -> Option<ExhaustiveScheduler> {
        self.scheduler.take()
    }

    fn crashed_by(&self, player: PlayerId, round: u64) -> bool {
        self.crash_rounds
            .get(player.0 as usize)
            .copied()
            .flatten()
            .is_some_and(|c| round >= c)
    }

    /// Latest admissible delivery round for a message sent at `r0`.
    pub fn delivery_bound(&self, r0: u64) -> u64 {
        r0.max(self.config.gst) + self.config.delta
    }

    /// Schedules one envelope per live player other than the sender.
    pub fn broadcast(&mut self, sender: PlayerId, round: u64, payload: Vec<u8>, n: u32) {
        debug_assert!(
            !self.crashed_by(sender, round),
            "crashed players do not send"
        );
        let payload = Arc::new(payload);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.stats.messages += 1;

        let earliest = round + 1;
        let bound = self.delivery_bound(round);
        let range = bound - earliest + 1;
        // Exhaustive mode fixes one delay for the whole message.
        let shared_delay = match self.config.policy {
            DelayPolicy::Exhaustive => {
                let s = self
                    .scheduler
                    .as_mut()
                    .expect("exhaustive policy requires a scheduler");
                Some(earliest + s.next_choice(range))
            }
            _ => None,
        };

        for pid in 0..n {
            let recipient = PlayerId(pid);
            if recipient == sender || self.crashed_by(recipient, round) {
                continue;
            }
            let delivery_round = match self.config.policy {
                DelayPolicy::WorstCase => bound,
                DelayPolicy::UniformRandom => self.rng.gen_range(earliest..=bound),
                DelayPolicy::Exhaustive => shared_delay.unwrap(),
            };
            if delivery_round < earliest || delivery_round > bound {
                self.bound_violations.push(format!(
                    "delivery at {delivery_round} outside [{earliest}, {bound}] for send at {round}"
                ));
            }
            self.stats.envelopes += 1;
            self.stats.bytes += payload.len() as u64;
            self.queue.push(Envelope {
                sender,
                send_round: round,
                seq,
                recipient,
                delivery_round,
                payload: Arc::clone(&payload),
            });
        }
    }

    /// Removes and returns every envelope due at `round`, in canonical order
    /// (sender id, sequence number, recipient), dropping deliveries to
    /// players that crashed in the meantime.
    pub fn step(&mut self, round: u64) -> Vec<Envelope> {
        let mut due = Vec::new();
        let mut rest = Vec::with_capacity(self.queue.len());
        let queue = std::mem::take(&mut self.queue);
        for env in queue {
            if env.delivery_round == round {
                if !self.crashed_by(env.recipient, round) {
                    due.push(env);
                }
            } else {
                rest.push(env);
            }
        }
        self.queue = rest;
        due.sort_by_key(|e| (e.sender, e.seq, e.recipient));
        due
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}
