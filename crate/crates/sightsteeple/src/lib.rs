//! Deterministic simulation harness for the SightSteeple functional
//! blockchain consensus protocols.
//!
//! Players with different credentials agree on different, hierarchy
//! consistent views of each block payload. The crate implements the payload
//! view algebra, simulated cryptography (including functional encryption
//! with verifiable keys), the metablock chain with Streamlet-style
//! notarization and finalization, per-player protocol state machines for the
//! crash-fault and rational-fault tolerant variants, a partially synchronous
//! discrete-event network, the rational adversary's utility analysis, and a
//! scenario-driven harness with traces, reports and replay.

pub mod adversary;
pub mod chain;
pub mod consensus;
pub mod crypto;
pub mod harness;
pub mod net;
pub mod views;
pub mod wire;
