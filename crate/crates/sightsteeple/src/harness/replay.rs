//! Trace replay: re-executes the embedded scenario deterministically and
//! verifies the recorded lines as it goes, then reconstructs the report.

use std::path::Path;

use thiserror::Error;

use super::checks::evaluate;
use super::report::{build_report, RunReport};
use super::trace::{parse_header, trace_lines, TraceReadError};
use super::world::{run_scenario, RunArtifacts, RunError, RunOptions};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Read(#[from] TraceReadError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("trace corrupt at line {line}: expected `{expected}`, found `{found}`")]
    LineMismatch {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("trace truncated at line {line}: expected `{expected}`")]
    Truncated { line: usize, expected: String },
    #[error("trace has {extra} unexpected trailing line(s) starting at line {line}")]
    TrailingLines { line: usize, extra: usize },
}

/// Re-runs a trace file and returns the reconstructed artifacts and report.
pub fn replay(path: &Path) -> Result<(RunArtifacts, RunReport), ReplayError> {
    let text = std::fs::read_to_string(path)?;
    let recorded: Vec<String> = text.lines().map(str::to_string).collect();
    let header = parse_header(&recorded)?;

    let mut config = header.config;
    config.scenario.seed = header.seed;
    let (artifacts, _) = run_scenario(&config, RunOptions::default())?;

    let regenerated = trace_lines(&artifacts);
    for (idx, expected) in regenerated.iter().enumerate() {
        match recorded.get(idx) {
            Some(found) if found == expected => {}
            Some(found) => {
                return Err(ReplayError::LineMismatch {
                    line: idx + 1,
                    expected: expected.clone(),
                    found: found.clone(),
                })
            }
            None => {
                return Err(ReplayError::Truncated {
                    line: idx + 1,
                    expected: expected.clone(),
                })
            }
        }
    }
    if recorded.len() > regenerated.len() {
        return Err(ReplayError::TrailingLines {
            line: regenerated.len() + 1,
            extra: recorded.len() - regenerated.len(),
        });
    }

    let report = build_report(&artifacts, evaluate(&artifacts));
    Ok((artifacts, report))
}
