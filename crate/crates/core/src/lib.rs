//! Cooperative roaming for 802.11 stations.
//!
//! Stations cooperate to cut handoff latency: they share cached AP
//! information, acquire IP addresses for one another in advance, and relay
//! each other's traffic while 802.1X authentication runs. The crate holds the
//! protocol logic plus a deterministic discrete-event simulator that measures
//! the resulting handoff times and packet loss against the standard procedure.

pub mod adversary;
pub mod cache;
pub mod dhcp;
pub mod protocol;
pub mod relay;
pub mod report;
pub mod security;
pub mod sim;
pub mod time;
pub mod wire;
