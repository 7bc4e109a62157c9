//! Misbehavior detection.
//!
//! Nodes cross-check the cache entries other nodes advertise against their
//! own first-hand knowledge and multicast an INFOALERT naming the sender when
//! they disagree. A single alert does nothing: a suspect is marked malicious
//! only once alerts about it have arrived from `threshold` distinct reporters.
//! Once marked, a node stays marked for the rest of the run and everything it
//! says is ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::cache::Cache;
use crate::wire::{CacheEntry, MacAddress, SubnetId};

pub const DEFAULT_THRESHOLD: usize = 5;
pub const MIN_THRESHOLD: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SecurityError {
    #[error("{0} cannot report itself")]
    SelfReport(MacAddress),
    #[error("alert threshold must be at least {MIN_THRESHOLD}, got {0}")]
    ThresholdTooLow(usize),
}

/// Outcome of checking an advertised entry against the local cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Consistent,
    Contradicts,
    Unknown,
}

/// Compares `claimed` with what `my_cache` holds for the same BSSID.
pub fn verify_claim(my_cache: &Cache, claimed: &CacheEntry) -> Verdict {
    match my_cache.get(&claimed.bssid) {
        None => Verdict::Unknown,
        Some(mine) if mine.entry.channel == claimed.channel && mine.entry.subnet_id == claimed.subnet_id => {
            Verdict::Consistent
        }
        Some(_) => Verdict::Contradicts,
    }
}

/// Like [`verify_claim`], but only first-hand knowledge can contradict.
/// Second-hand entries are themselves unverified.
pub fn verify_claim_first_hand(my_cache: &Cache, claimed: &CacheEntry) -> Verdict {
    match my_cache.get(&claimed.bssid) {
        Some(mine) if mine.is_first_hand() => verify_claim(my_cache, claimed),
        _ => Verdict::Unknown,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlertOutcome {
    /// Reporter counted (or already counted); still below the threshold.
    Counted { distinct_reporters: usize },
    /// This alert pushed the suspect over the threshold.
    NewlyMarked,
    /// The suspect was already marked.
    AlreadyMarked,
}

/// Per-node record of who has accused whom.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuspicionLedger {
    threshold: usize,
    reporters: BTreeMap<MacAddress, BTreeSet<MacAddress>>,
    marked: BTreeSet<MacAddress>,
}

impl Default for SuspicionLedger {
    fn default() -> Self {
        SuspicionLedger::new(DEFAULT_THRESHOLD).expect("default threshold is valid")
    }
}

impl SuspicionLedger {
    pub fn new(threshold: usize) -> Result<Self, SecurityError> {
        if threshold < MIN_THRESHOLD {
            return Err(SecurityError::ThresholdTooLow(threshold));
        }
        Ok(SuspicionLedger { threshold, reporters: BTreeMap::new(), marked: BTreeSet::new() })
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn record_alert(&mut self, suspect: MacAddress, reporter: MacAddress) -> Result<AlertOutcome, SecurityError> {
        if suspect == reporter {
            return Err(SecurityError::SelfReport(reporter));
        }
        let set = self.reporters.entry(suspect).or_default();
        set.insert(reporter);
        if self.marked.contains(&suspect) {
            return Ok(AlertOutcome::AlreadyMarked);
        }
        if set.len() >= self.threshold {
            self.marked.insert(suspect);
            return Ok(AlertOutcome::NewlyMarked);
        }
        Ok(AlertOutcome::Counted { distinct_reporters: set.len() })
    }

    pub fn is_malicious(&self, mac: &MacAddress) -> bool {
        self.marked.contains(mac)
    }

    pub fn distinct_reporters(&self, suspect: &MacAddress) -> usize {
        self.reporters.get(suspect).map_or(0, BTreeSet::len)
    }

    pub fn marked(&self) -> impl Iterator<Item = &MacAddress> {
        self.marked.iter()
    }
}

/// Why an address handed over by an A-MN was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BadLease {
    OutsideSubnet,
    /// Network or broadcast address of the subnet.
    Reserved,
    /// Bound to another client on arrival.
    AlreadyLeased,
}

/// Static validation of an IP_RESP address against the subnet it was
/// requested for.
pub fn validate_offered_ip(ip: Ipv4Addr, subnet: SubnetId, prefix: u8) -> Result<(), BadLease> {
    if !subnet.contains(ip, prefix) {
        return Err(BadLease::OutsideSubnet);
    }
    let host_mask = if prefix >= 32 { 0 } else { u32::MAX >> prefix };
    let host = u32::from(ip) & host_mask;
    if prefix < 31 && (host == 0 || host == host_mask) {
        return Err(BadLease::Reserved);
    }
    Ok(())
}
