//! Deterministic discrete-event simulation of a roaming deployment.
//!
//! [`run`] executes one scenario with one seed and returns every handoff
//! record, stream statistics and the logs. All state lives in ordered maps
//! and a single seeded generator per purpose, so a seed fully determines
//! the output.

pub mod config;
pub mod delay;
pub mod medium;
pub mod queue;
pub mod session;
mod world;

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

pub use config::{load_scenario, parse_scenario, Baseline, ConfigError, Direction, ScenarioConfig};
pub use delay::{DelayModel, DelaySampler, Dist};
pub use medium::{medium_visibility, Station, Transmission, Visibility};
pub use queue::EventQueue;
pub use session::{Endpoint, SessionController, SessionError, StreamLedger, StreamStats};
pub use world::{run, RunError};

use crate::protocol::HandoffRecord;
use crate::relay::{AuditRecord, RelayRefusal};
use crate::time::SimTime;
use crate::wire::MacAddress;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Mode {
    /// Cooperative roaming with every mechanism enabled.
    Cr,
    /// The scenario's baseline (see [`Baseline`]).
    Legacy,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Cr => "cr",
            Mode::Legacy => "legacy",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cr" => Ok(Mode::Cr),
            "legacy" => Ok(Mode::Legacy),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamSummary {
    pub node: MacAddress,
    pub direction: Direction,
    pub stats: StreamStats,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfoRespEvent {
    pub at: SimTime,
    pub sender: MacAddress,
    pub target: MacAddress,
    pub entries: Vec<MacAddress>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProxyExchange {
    pub at: SimTime,
    pub amn: MacAddress,
    pub rmn: MacAddress,
    pub duration: crate::time::SimDuration,
    /// Every message of the exchange had the broadcast bit set.
    pub broadcast: bool,
    pub ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelayDecision {
    pub at: SimTime,
    pub rn: MacAddress,
    pub mn: MacAddress,
    pub refused: Option<RelayRefusal>,
}

/// Counters and event lists collected during a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metrics {
    /// Messages put on the network, by kind.
    pub messages: BTreeMap<&'static str, u64>,
    pub info_responses: Vec<InfoRespEvent>,
    /// Suppression timers armed: (node, fire time).
    pub suppression_draws: Vec<(MacAddress, SimTime)>,
    pub proxy_exchanges: Vec<ProxyExchange>,
    pub relay_decisions: Vec<RelayDecision>,
    /// Frames an RN forwarded at or after the registration deadline.
    pub relayed_after_expiry: u64,
    pub relay_drops: u64,
    /// Data frames refused by an authenticator port still in EAPOL state.
    pub closed_port_drops: u64,
    /// Data frames that crossed an AP for a station still in EAPOL state.
    pub closed_port_leaks: u64,
    pub scripted_moves: BTreeMap<MacAddress, u64>,
    pub completed_handoffs: BTreeMap<MacAddress, u64>,
    pub skipped_moves: u64,
    pub failed_handoffs: u64,
    /// Forged messages sent by each adversary, with send times.
    pub lies: BTreeMap<MacAddress, Vec<SimTime>>,
    /// First time each observer marked each suspect.
    pub marked: BTreeMap<(MacAddress, MacAddress), SimTime>,
    /// Messages discarded because the receiver had marked the sender.
    pub ignored_from_marked: u64,
    pub sends_dropped: u64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: String,
    pub fingerprint: String,
    pub mode: Mode,
    pub seed: u64,
    /// Handoffs of honest nodes, in completion order.
    pub records: Vec<HandoffRecord>,
    pub handoff_starts: Vec<SimTime>,
    pub node_names: BTreeMap<MacAddress, String>,
    pub ap_names: BTreeMap<MacAddress, String>,
    pub streams: Vec<StreamSummary>,
    pub metrics: Metrics,
    pub trace: Vec<String>,
    pub security_log: Vec<String>,
    pub relay_audit: Vec<AuditRecord>,
    pub lease_table: String,
    pub end: SimTime,
}

impl RunReport {
    pub fn trace_text(&self) -> String {
        join_lines(&self.trace)
    }

    pub fn security_text(&self) -> String {
        join_lines(&self.security_log)
    }

    pub fn audit_text(&self) -> String {
        let mut out = String::new();
        for a in &self.relay_audit {
            let _ = writeln!(out, "{a}");
        }
        out
    }
}

fn join_lines(lines: &[String]) -> String {
    let mut out = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    out
}

/// Hash of the deployment (subnets, APs, nodes and where they start). Two
/// reports can be compared only when their fingerprints agree.
pub fn topology_fingerprint(cfg: &ScenarioConfig) -> String {
    let mut canon = String::new();
    for s in &cfg.subnets {
        let _ = writeln!(canon, "subnet {} {} {}-{}", s.id, s.router, s.pool_first, s.pool_last);
    }
    for a in &cfg.aps {
        let _ = writeln!(canon, "ap {} {} {} {} {}", a.name, a.bssid, a.channel, cfg.subnets[a.subnet].id, a.auth);
    }
    for n in &cfg.nodes {
        let kind = n.malicious.as_ref().map_or("honest", |p| p.kind.name());
        let _ = writeln!(canon, "node {} {} {} {} {} {} {}", n.name, n.mac, cfg.aps[n.ap].name, n.cr, n.assist, n.relay, kind);
    }
    let digest = Sha256::digest(canon.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
