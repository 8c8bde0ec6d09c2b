//! Line-oriented trace files: `epoch|event|player|digest-prefix|detail`,
//! preceded by a version, seed and config header. The field order is frozen;
//! golden tests pin it.

use std::io::Write as _;
use std::path::Path;

use super::config::ScenarioConfig;
use super::world::{RunArtifacts, TraceEvent};

pub const TRACE_VERSION: &str = "sightsteeple-trace v1";

pub fn format_event(ev: &TraceEvent) -> String {
    format!(
        "{}|{}|{}|{}|{}",
        ev.epoch,
        ev.event,
        ev.player,
        ev.digest
            .map(|d| d.short_hex())
            .unwrap_or_else(|| "-".into()),
        ev.detail
    )
}

/// All trace lines for a run, header included.
pub fn trace_lines(artifacts: &RunArtifacts) -> Vec<String> {
    let mut lines = vec![
        format!("# {TRACE_VERSION}"),
        format!("# seed {}", artifacts.setup.seed),
        format!(
            "# config {}",
            serde_json::to_string(&artifacts.config).expect("configs serialize")
        ),
    ];
    lines.extend(artifacts.events.iter().map(format_event));
    lines
}

pub fn write_trace(path: &Path, artifacts: &RunArtifacts) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    for line in trace_lines(artifacts) {
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Parsed header of a trace file.
pub struct TraceHeader {
    pub seed: u64,
    pub config: ScenarioConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceReadError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace version mismatch: found `{found}`, expected `{expected}`")]
    VersionMismatch { found: String, expected: String },
    #[error("trace header incomplete (line {0})")]
    MissingHeader(usize),
    #[error("bad config header: {0}")]
    BadConfig(String),
}

pub fn parse_header(lines: &[String]) -> Result<TraceHeader, TraceReadError> {
    let version = lines.first().ok_or(TraceReadError::MissingHeader(1))?;
    let expected = format!("# {TRACE_VERSION}");
    if *version != expected {
        return Err(TraceReadError::VersionMismatch {
            found: version.clone(),
            expected,
        });
    }
    let seed_line = lines.get(1).ok_or(TraceReadError::MissingHeader(2))?;
    let seed = seed_line
        .strip_prefix("# seed ")
        .and_then(|s| s.parse().ok())
        .ok_or(TraceReadError::MissingHeader(2))?;
    let config_line = lines.get(2).ok_or(TraceReadError::MissingHeader(3))?;
    let config_json = config_line
        .strip_prefix("# config ")
        .ok_or(TraceReadError::MissingHeader(3))?;
    let config = serde_json::from_str(config_json)
        .map_err(|e| TraceReadError::BadConfig(e.to_string()))?;
    Ok(TraceHeader { seed, config })
}
