//! Scenario harness: configuration, the run loop, checks, reports, traces,
//! replay and the exhaustive scheduler driver.

pub mod checks;
pub mod config;
pub mod replay;
pub mod report;
pub mod scenarios;
pub mod trace;
pub mod workload;
pub mod world;

pub use config::{ConfigError, ScenarioConfig};
pub use replay::{replay, ReplayError};
pub use report::{build_report, RunReport};
pub use world::{run_scenario, RunArtifacts, RunError, RunOptions};

use crate::net::{DelayPolicy, ExhaustiveScheduler};

/// Result of enumerating every delivery schedule of a bounded scenario.
#[derive(Debug)]
pub struct EnumerationSummary {
    pub schedules: u64,
    /// `(schedule index, violation)` pairs; empty on success.
    pub conflicts: Vec<(u64, String)>,
}

#[derive(Debug, thiserror::Error)]
pub enum EnumerateError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("config exceeds exhaustive-mode caps: {0} (need n <= 4, epochs <= 4, delta <= 2)")]
    CapsExceeded(String),
    #[error("combinatorial bound exceeded: more than {0} schedules")]
    BoundExceeded(u64),
}

/// Runs the scenario under every admissible per-message delay assignment and
/// reports any schedule that produces conflicting finalized blocks.
pub fn enumerate_schedules(
    config: &ScenarioConfig,
    max_schedules: u64,
) -> Result<EnumerationSummary, EnumerateError> {
    let s = &config.scenario;
    if s.n > 4 || s.epochs > 4 || config.network.delta > 2 {
        return Err(EnumerateError::CapsExceeded(format!(
            "n = {}, epochs = {}, delta = {}",
            s.n, s.epochs, config.network.delta
        )));
    }
    if config.policy().map_err(RunError::Config)? != DelayPolicy::Exhaustive {
        return Err(EnumerateError::CapsExceeded(
            "network.policy must be `exhaustive`".into(),
        ));
    }

    let mut scheduler = ExhaustiveScheduler::new();
    let mut schedules = 0u64;
    let mut conflicts = Vec::new();
    loop {
        let opts = RunOptions {
            scheduler: Some(scheduler),
            ..RunOptions::default()
        };
        let (artifacts, sched) = run_scenario(config, opts)?;
        scheduler = sched.expect("exhaustive run returns its scheduler");
        for v in &artifacts.online_violations {
            conflicts.push((schedules, v.clone()));
        }
        schedules += 1;
        if schedules >= max_schedules {
            return Err(EnumerateError::BoundExceeded(max_schedules));
        }
        if !scheduler.advance() {
            break;
        }
    }
    Ok(EnumerationSummary {
        schedules,
        conflicts,
    })
}

/// Convenience: run a scenario and evaluate every applicable check.
pub fn run_with_report(
    config: &ScenarioConfig,
    opts: RunOptions,
) -> Result<(RunArtifacts, RunReport), RunError> {
    let (artifacts, _) = run_scenario(config, opts)?;
    let outcome = checks::evaluate(&artifacts);
    let report = build_report(&artifacts, outcome);
    Ok((artifacts, report))
}
