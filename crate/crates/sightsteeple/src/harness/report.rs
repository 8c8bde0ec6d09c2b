//! Run reports: a machine-readable summary plus a rendered text document.
//! The JSON form is hashed to pin scenario outputs in golden tests.

use serde::Serialize;

use crate::consensus::Behavior;
use crate::crypto::hash;

use super::checks::{epoch_summaries, utility_series, CheckLine, CheckOutcome, EpochSummary};
use super::world::RunArtifacts;

pub const REPORT_VERSION: &str = "sightsteeple-report v1";

#[derive(Debug, Clone, Serialize)]
pub struct PlayerSummary {
    pub player: u32,
    pub behavior: String,
    pub finalized_epoch: u64,
    pub chain_entries: usize,
    pub flagged_entries: usize,
    pub chain_digest: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct UtilityPoint {
    pub epoch: u64,
    pub notarized: bool,
    /// Exact rational, rendered `numerator/denominator`.
    pub value: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsBlock {
    pub messages: u64,
    pub envelopes: u64,
    pub bytes: u64,
    /// Envelopes scheduled per epoch window.
    pub envelopes_per_epoch: Vec<u64>,
    pub max_proposal_bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub version: String,
    pub scenario: String,
    pub variant: String,
    pub n: u32,
    pub m: u32,
    pub epochs: u64,
    pub seed: u64,
    pub epochs_detail: Vec<EpochSummary>,
    pub players: Vec<PlayerSummary>,
    pub utilities: Vec<UtilityPoint>,
    pub checks: Vec<CheckLine>,
    pub violations: Vec<String>,
    pub stats: StatsBlock,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Stable digest of the machine-readable form.
    pub fn digest_hex(&self) -> String {
        hash(serde_json::to_string(self).expect("reports serialize").as_bytes()).hex()
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// The human-readable document.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let mut line = |s: String| {
            out.push_str(&s);
            out.push('\n');
        };
        line(format!("# {}", self.version));
        line(format!(
            "scenario {} | variant {} | n={} m={} epochs={} seed={}",
            self.scenario, self.variant, self.n, self.m, self.epochs, self.seed
        ));
        line(String::new());
        line("## epochs".into());
        line("epoch | leader | kind | props | yes | no | notarized | digest".into());
        for e in &self.epochs_detail {
            line(format!(
                "{:5} | p{:5} | {:9} | {:5} | {:3} | {:2} | {:9} | {}",
                e.epoch,
                e.leader,
                e.kind
                    .map(|k| format!("{k:?}").to_lowercase())
                    .unwrap_or_else(|| "-".into()),
                e.proposals,
                e.yes,
                e.no,
                e.notarized,
                e.digest_prefix.clone().unwrap_or_else(|| "-".into())
            ));
        }
        line(String::new());
        line("## players".into());
        for p in &self.players {
            line(format!(
                "p{} [{}] finalized through epoch {}, {} entries ({} flagged), chain {}",
                p.player,
                p.behavior,
                p.finalized_epoch,
                p.chain_entries,
                p.flagged_entries,
                &p.chain_digest[..8]
            ));
        }
        if !self.utilities.is_empty() {
            line(String::new());
            line("## adversary utility".into());
            for u in &self.utilities {
                line(format!(
                    "epoch {:3} notarized={} v = {}",
                    u.epoch, u.notarized, u.value
                ));
            }
        }
        line(String::new());
        line("## checks".into());
        for c in &self.checks {
            line(format!(
                "check {}: {} — {}",
                c.name,
                if c.passed { "pass" } else { "FAIL" },
                c.detail
            ));
        }
        if !self.violations.is_empty() {
            line(String::new());
            line("## violations".into());
            for v in &self.violations {
                line(format!("- {v}"));
            }
        }
        line(String::new());
        line(format!(
            "stats: {} messages, {} envelopes, {} bytes, max proposal {} bytes",
            self.stats.messages, self.stats.envelopes, self.stats.bytes, self.stats.max_proposal_bytes
        ));
        line(format!("report digest: {}", self.digest_hex()));
        out
    }
}

fn behavior_name(b: &Behavior) -> String {
    match b {
        Behavior::Honest => "honest".into(),
        Behavior::Crash { at_round } => format!("crash@{at_round}"),
        Behavior::Rational => "rational".into(),
        Behavior::ByzantineDemo { leak_epoch } => format!("byzantine-demo@{leak_epoch}"),
    }
}

/// Builds the report from finished artifacts and evaluated checks.
pub fn build_report(artifacts: &RunArtifacts, checks: CheckOutcome) -> RunReport {
    let ctx = artifacts.ctx();
    let setup = &artifacts.setup;
    let players = artifacts
        .players
        .iter()
        .enumerate()
        .map(|(i, p)| PlayerSummary {
            player: i as u32,
            behavior: behavior_name(&setup.behaviors[i]),
            finalized_epoch: p.chain.finalized_epoch(),
            chain_entries: p.derived.entries.len(),
            flagged_entries: p
                .derived
                .entries
                .iter()
                .filter(|e| matches!(e.outcome, crate::chain::EntryOutcome::Flagged(_)))
                .count(),
            chain_digest: p.derived.digest(&ctx.genesis_digest).hex(),
        })
        .collect();
    let utilities = utility_series(artifacts)
        .into_iter()
        .map(|(epoch, notarized, v)| UtilityPoint {
            epoch,
            notarized,
            value: format!("{}/{}", v.numer(), v.denom()),
        })
        .collect();
    let stats = StatsBlock {
        messages: artifacts.net_stats.messages,
        envelopes: artifacts.net_stats.envelopes,
        bytes: artifacts.net_stats.bytes,
        envelopes_per_epoch: (1..=setup.epochs)
            .map(|e| artifacts.envelopes_in_epoch(e))
            .collect(),
        max_proposal_bytes: artifacts
            .proposals
            .values()
            .map(|r| crate::wire::Wire::to_bytes(&r.block).len())
            .max()
            .unwrap_or(0),
    };
    RunReport {
        version: REPORT_VERSION.into(),
        scenario: artifacts.config.scenario.name.clone(),
        variant: ctx.variant.to_string(),
        n: ctx.n,
        m: ctx.m,
        epochs: setup.epochs,
        seed: setup.seed,
        epochs_detail: epoch_summaries(artifacts),
        players,
        utilities,
        checks: checks.lines,
        violations: checks.violations,
        stats,
    }
}
