//! Per-node cache of nearby APs and the store of pre-acquired leases.
//!
//! The cache is keyed by BSSID. Each entry carries the wire triple plus local
//! annotations that never go on the wire: the last observed signal strength,
//! when the entry was last touched, and which peer it came from (entries the
//! node observed itself have no source).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::time::{SimDuration, SimTime};
use crate::wire::{CacheEntry, MacAddress, SubnetId, MAX_ENTRIES};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("AP {0} is not in the cache")]
    MissingEntry(MacAddress),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("snapshot line {line}: {message}")]
pub struct SnapshotError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CachedAp {
    pub entry: CacheEntry,
    /// dBm; `None` for APs only heard about from peers.
    pub signal_dbm: Option<i32>,
    pub last_updated: SimTime,
    /// Peer that supplied the current contents; `None` when first-hand.
    pub learned_from: Option<MacAddress>,
}

impl CachedAp {
    pub fn is_first_hand(&self) -> bool {
        self.learned_from.is_none()
    }
}

/// A same-BSSID disagreement found while merging peer information.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeConflict {
    pub previous: CacheEntry,
    pub incoming: CacheEntry,
    pub previous_source: Option<MacAddress>,
    pub incoming_source: Option<MacAddress>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Cache {
    entries: BTreeMap<MacAddress, CachedAp>,
    max_age: Option<SimDuration>,
}

/// Candidate order: stronger signal first, unknown signal last, then BSSID.
fn candidate_order(a: &CachedAp, b: &CachedAp) -> std::cmp::Ordering {
    let sa = a.signal_dbm.map_or(i64::MIN, i64::from);
    let sb = b.signal_dbm.map_or(i64::MIN, i64::from);
    sb.cmp(&sa).then(a.entry.bssid.cmp(&b.entry.bssid))
}

impl Cache {
    pub fn new() -> Self {
        Cache::default()
    }

    /// Entries untouched for longer than `max_age` are dropped by
    /// [`Cache::evict_stale`]. `None` keeps entries forever.
    pub fn with_max_age(max_age: Option<SimDuration>) -> Self {
        Cache { entries: BTreeMap::new(), max_age }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, bssid: &MacAddress) -> bool {
        self.entries.contains_key(bssid)
    }

    pub fn get(&self, bssid: &MacAddress) -> Option<&CachedAp> {
        self.entries.get(bssid)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CachedAp> {
        self.entries.values()
    }

    /// All wire entries in candidate order.
    pub fn wire_entries(&self) -> Vec<CacheEntry> {
        let mut v: Vec<&CachedAp> = self.entries.values().collect();
        v.sort_by(|a, b| candidate_order(a, b));
        v.into_iter().map(|c| c.entry).collect()
    }

    /// Records a first-hand observation, replacing whatever was known.
    pub fn observe(&mut self, entry: CacheEntry, signal_dbm: Option<i32>, now: SimTime) {
        let signal_dbm = signal_dbm.or_else(|| self.entries.get(&entry.bssid).and_then(|c| c.signal_dbm));
        self.entries.insert(
            entry.bssid,
            CachedAp { entry, signal_dbm, last_updated: now, learned_from: None },
        );
    }

    /// Updates the signal annotation of a known AP. Unknown APs are ignored:
    /// a beacon alone does not reveal the subnet.
    pub fn update_signal(&mut self, bssid: &MacAddress, dbm: i32, now: SimTime) -> bool {
        match self.entries.get_mut(bssid) {
            Some(c) => {
                c.signal_dbm = Some(dbm);
                c.last_updated = now;
                true
            }
            None => false,
        }
    }

    pub fn remove(&mut self, bssid: &MacAddress) -> Option<CachedAp> {
        self.entries.remove(bssid)
    }

    /// True iff the two caches share at least one AP and this cache knows an
    /// AP the other lacks.
    pub fn should_respond(&self, theirs: &[CacheEntry]) -> bool {
        let common = theirs.iter().any(|e| self.entries.contains_key(&e.bssid));
        common && self.entries.keys().any(|k| !theirs.iter().any(|e| e.bssid == *k))
    }

    /// Entries this cache holds that `theirs` lacks, strongest first, capped
    /// at the per-message capacity.
    pub fn response_entries(&self, theirs: &[CacheEntry]) -> Vec<CacheEntry> {
        let mut missing: Vec<&CachedAp> = self
            .entries
            .values()
            .filter(|c| !theirs.iter().any(|e| e.bssid == c.entry.bssid))
            .collect();
        missing.sort_by(|a, b| candidate_order(a, b));
        missing.into_iter().take(MAX_ENTRIES).map(|c| c.entry).collect()
    }

    /// Unions `incoming` into the cache. On a same-BSSID disagreement the
    /// incoming entry wins and the conflict is returned to the caller.
    pub fn merge(&mut self, incoming: &[CacheEntry], from: Option<MacAddress>, now: SimTime) -> Vec<MergeConflict> {
        let mut conflicts = Vec::new();
        for e in incoming {
            match self.entries.get_mut(&e.bssid) {
                Some(existing) if existing.entry == *e => {
                    existing.last_updated = now;
                }
                Some(existing) => {
                    conflicts.push(MergeConflict {
                        previous: existing.entry,
                        incoming: *e,
                        previous_source: existing.learned_from,
                        incoming_source: from,
                    });
                    existing.entry = *e;
                    existing.learned_from = from;
                    existing.last_updated = now;
                }
                None => {
                    self.entries.insert(
                        e.bssid,
                        CachedAp { entry: *e, signal_dbm: None, last_updated: now, learned_from: from },
                    );
                }
            }
        }
        conflicts
    }

    /// Whether moving from `old` to `new` crosses a subnet boundary.
    pub fn subnet_changed(&self, old: &MacAddress, new: &MacAddress) -> Result<bool, CacheError> {
        let o = self.entries.get(old).ok_or(CacheError::MissingEntry(*old))?;
        let n = self.entries.get(new).ok_or(CacheError::MissingEntry(*new))?;
        Ok(subnet_changed(&o.entry, &n.entry))
    }

    /// Every AP except `current`, best candidate first.
    pub fn next_candidates(&self, current: &MacAddress) -> Vec<CacheEntry> {
        let mut v: Vec<&CachedAp> = self.entries.values().filter(|c| c.entry.bssid != *current).collect();
        v.sort_by(|a, b| candidate_order(a, b));
        v.into_iter().map(|c| c.entry).collect()
    }

    pub fn evict_stale(&mut self, now: SimTime) -> usize {
        let Some(max_age) = self.max_age else { return 0 };
        let before = self.entries.len();
        self.entries.retain(|_, c| now.since(c.last_updated) <= max_age);
        before - self.entries.len()
    }

    /// Line-oriented export: `bssid channel subnet signal`, candidate order,
    /// `-` for an unknown signal.
    pub fn to_snapshot(&self) -> String {
        let mut v: Vec<&CachedAp> = self.entries.values().collect();
        v.sort_by(|a, b| candidate_order(a, b));
        let mut out = String::new();
        for c in v {
            let signal = c.signal_dbm.map_or_else(|| "-".to_string(), |s| s.to_string());
            let _ = writeln!(out, "{} {} {} {}", c.entry.bssid, c.entry.channel, c.entry.subnet_id, signal);
        }
        out
    }

    /// Parses [`Cache::to_snapshot`] output. Imported entries count as
    /// first-hand. Blank lines and `#` comments are skipped.
    pub fn from_snapshot(text: &str, now: SimTime) -> Result<Cache, SnapshotError> {
        let mut cache = Cache::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| SnapshotError { line: i + 1, message };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", fields.len())));
            }
            let bssid: MacAddress = fields[0].parse().map_err(|e| err(format!("{e}")))?;
            let channel: u32 = fields[1].parse().map_err(|_| err(format!("bad channel `{}`", fields[1])))?;
            let subnet_id: SubnetId = fields[2].parse().map_err(|e| err(format!("{e}")))?;
            let signal = match fields[3] {
                "-" => None,
                s => Some(s.parse::<i32>().map_err(|_| err(format!("bad signal `{s}`")))?),
            };
            let entry = CacheEntry::new(bssid, channel, subnet_id);
            entry.validate().map_err(|e| err(e.to_string()))?;
            if cache.contains(&bssid) {
                return Err(err(format!("duplicate BSSID {bssid}")));
            }
            cache.observe(entry, signal, now);
        }
        Ok(cache)
    }
}

/// True iff the two APs sit in different subnets.
pub fn subnet_changed(old: &CacheEntry, new: &CacheEntry) -> bool {
    old.subnet_id != new.subnet_id
}

/// An address acquired for a subnet the node may move into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubnetLease {
    pub subnet_id: SubnetId,
    pub router_ip: Ipv4Addr,
    pub leased_ip: Ipv4Addr,
    pub expiry: SimTime,
    /// A-MN that obtained it; `None` when the node acquired it itself.
    pub acquired_via: Option<MacAddress>,
}

impl SubnetLease {
    pub fn is_valid_at(&self, now: SimTime) -> bool {
        now < self.expiry
    }
}

/// At most one lease per subnet; inserting replaces in place.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LeaseStore {
    leases: BTreeMap<SubnetId, SubnetLease>,
}

impl LeaseStore {
    pub fn new() -> Self {
        LeaseStore::default()
    }

    /// Stores `lease`, returning the one it replaced for the same subnet.
    pub fn insert(&mut self, lease: SubnetLease) -> Option<SubnetLease> {
        self.leases.insert(lease.subnet_id, lease)
    }

    pub fn get(&self, subnet: &SubnetId) -> Option<&SubnetLease> {
        self.leases.get(subnet)
    }

    pub fn valid(&self, subnet: &SubnetId, now: SimTime) -> Option<&SubnetLease> {
        self.leases.get(subnet).filter(|l| l.is_valid_at(now))
    }

    pub fn remove(&mut self, subnet: &SubnetId) -> Option<SubnetLease> {
        self.leases.remove(subnet)
    }

    /// Drops expired leases; they are never released early.
    pub fn expire(&mut self, now: SimTime) -> Vec<SubnetLease> {
        let gone: Vec<SubnetId> = self.leases.values().filter(|l| !l.is_valid_at(now)).map(|l| l.subnet_id).collect();
        gone.iter().filter_map(|s| self.leases.remove(s)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SubnetLease> {
        self.leases.values()
    }

    pub fn len(&self) -> usize {
        self.leases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leases.is_empty()
    }
}
