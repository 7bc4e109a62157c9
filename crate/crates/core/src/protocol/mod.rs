//! Per-node cooperation logic.
//!
//! A [`Node`] is a deterministic state machine. Handlers take an incoming
//! message or a fired timer and return [`Action`]s for the simulator to carry
//! out: frames to send, timers to arm, proxy DHCP exchanges to run, and
//! security events to log. Timers are never cancelled; a handler checks that
//! the state the timer was armed for still exists and ignores it otherwise.

pub mod handoff;

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use rand::Rng;

use crate::cache::{Cache, LeaseStore, MergeConflict, SubnetLease};
use crate::dhcp::{DhcpError, DEFAULT_LEASE};
use crate::relay::{RelayRefusal, RelayRequest};
use crate::security::{self, AlertOutcome, BadLease, SuspicionLedger, Verdict};
use crate::time::{SimDuration, SimTime};
use crate::wire::{CacheEntry, MacAddress, Message, MessageBody, SubnetId};

pub use handoff::{
    begin_handoff, finish_handoff, perform_handoff, Component, DelaySource, FinishContext, HandoffError,
    HandoffOutcome, HandoffRecord, L2Phase,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub cr_enabled: bool,
    pub can_assist: bool,
    pub can_relay: bool,
    /// Merge the cache contents carried by other nodes' INFOREQs.
    pub harvest_inforeq: bool,
    /// Upper bound of the random wait before answering an INFOREQ.
    pub window: SimDuration,
    /// How long a request waits for an answer at each TTL.
    pub request_deadline: SimDuration,
    pub max_ttl: u8,
    /// How long to wait for an IP_RESP before trying the next A-MN.
    pub amn_timeout: SimDuration,
    /// Assumed lifetime of a proxy-acquired lease.
    pub lease_duration: SimDuration,
    /// A lease closer than this to expiry is re-acquired.
    pub lease_margin: SimDuration,
    pub prefix: u8,
    pub alert_threshold: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            cr_enabled: true,
            can_assist: true,
            can_relay: false,
            harvest_inforeq: false,
            window: SimDuration::from_millis(50),
            request_deadline: SimDuration::from_millis(200),
            max_ttl: 3,
            amn_timeout: SimDuration::from_secs(2),
            lease_duration: DEFAULT_LEASE,
            lease_margin: SimDuration::from_secs(30),
            prefix: 24,
            alert_threshold: security::DEFAULT_THRESHOLD,
        }
    }
}

/// Minimum spacing between two assistant discoveries for one subnet.
pub const DISCOVERY_BACKOFF: SimDuration = SimDuration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dest {
    Multicast { ttl: u8 },
    Unicast(MacAddress),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Timer {
    RequestDeadline { id: u64, ttl: u8 },
    Suppression { rmn: MacAddress, token: u64 },
    AmnTimeout { subnet: SubnetId, token: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SecurityEvent {
    AlertSent { suspect: MacAddress },
    AlertReceived { suspect: MacAddress, reporter: MacAddress },
    Marked { suspect: MacAddress },
    Conflict(MergeConflict),
    BadLease { amn: MacAddress, ip: Ipv4Addr, reason: BadLease },
    RelayRefused { mn: MacAddress, reason: RelayRefusal },
    WrongEntry { bssid: MacAddress, source: Option<MacAddress> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Send { dest: Dest, msg: Message },
    Arm { at: SimTime, timer: Timer },
    /// Run a proxy DHCP exchange in this node's subnet on behalf of `rmn`.
    ProxyAcquire { rmn: MacAddress },
    Security(SecurityEvent),
    /// Informational trace line.
    Note(String),
}

/// Where the node currently is and the address it uses there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attachment {
    pub ap: CacheEntry,
    pub ip: Ipv4Addr,
    pub router: Ipv4Addr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AmnInfo {
    pub mac: MacAddress,
    pub ip: Ipv4Addr,
    pub router: Ipv4Addr,
    pub ap: MacAddress,
    pub can_relay: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestKind {
    Info,
    AmnDiscover(SubnetId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingRequest {
    pub kind: RequestKind,
    pub ttl: u8,
    pub deadline: SimTime,
    pub answered: bool,
    body: MessageBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Suppression {
    fire_at: SimTime,
    planned: Vec<CacheEntry>,
    ttl: u8,
    token: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct IpRequest {
    amn: MacAddress,
    token: u64,
    tried: BTreeSet<MacAddress>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeStats {
    pub inforeq_sent: u64,
    pub inforesp_sent: u64,
    pub entries_sent: u64,
    pub suppressed: u64,
    pub alerts_sent: u64,
    pub leases_acquired: u64,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub mac: MacAddress,
    pub cfg: ProtocolConfig,
    pub attachment: Option<Attachment>,
    pub cache: Cache,
    pub leases: LeaseStore,
    pub ledger: SuspicionLedger,
    pub stats: NodeStats,
    pending: BTreeMap<u64, PendingRequest>,
    suppression: BTreeMap<MacAddress, Suppression>,
    amn_lists: BTreeMap<SubnetId, Vec<AmnInfo>>,
    reach_ttl: BTreeMap<SubnetId, u8>,
    ip_requests: BTreeMap<SubnetId, IpRequest>,
    blacklist: BTreeSet<MacAddress>,
    last_discovery: BTreeMap<SubnetId, SimTime>,
    alerted: BTreeSet<MacAddress>,
    next_id: u64,
}

impl Node {
    pub fn new(mac: MacAddress, cfg: ProtocolConfig) -> Result<Self, security::SecurityError> {
        let ledger = SuspicionLedger::new(cfg.alert_threshold)?;
        Ok(Node {
            mac,
            cfg,
            attachment: None,
            cache: Cache::new(),
            leases: LeaseStore::new(),
            ledger,
            stats: NodeStats::default(),
            pending: BTreeMap::new(),
            suppression: BTreeMap::new(),
            amn_lists: BTreeMap::new(),
            reach_ttl: BTreeMap::new(),
            ip_requests: BTreeMap::new(),
            blacklist: BTreeSet::new(),
            last_discovery: BTreeMap::new(),
            alerted: BTreeSet::new(),
            next_id: 0,
        })
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    pub fn subnet(&self) -> Option<SubnetId> {
        self.attachment.map(|a| a.ap.subnet_id)
    }

    /// Records a (re)association: the AP becomes first-hand knowledge.
    pub fn attach(&mut self, attachment: Attachment, signal_dbm: Option<i32>, now: SimTime) {
        let signal = signal_dbm.or_else(|| self.cache.get(&attachment.ap.bssid).and_then(|c| c.signal_dbm));
        self.cache.observe(attachment.ap, signal, now);
        self.attachment = Some(attachment);
    }

    pub fn detach(&mut self) {
        self.attachment = None;
    }

    pub fn pending_requests(&self) -> impl Iterator<Item = (&u64, &PendingRequest)> {
        self.pending.iter()
    }

    pub fn amn_list(&self, subnet: &SubnetId) -> &[AmnInfo] {
        self.amn_lists.get(subnet).map_or(&[], Vec::as_slice)
    }

    pub fn is_blacklisted(&self, mac: &MacAddress) -> bool {
        self.blacklist.contains(mac)
    }

    pub fn planned_response(&self, rmn: &MacAddress) -> Option<(SimTime, &[CacheEntry])> {
        self.suppression.get(rmn).map(|s| (s.fire_at, s.planned.as_slice()))
    }

    fn usable(&self, mac: &MacAddress) -> bool {
        !self.blacklist.contains(mac) && !self.ledger.is_malicious(mac)
    }

    /// Whether the node lacks neighbor information worth asking for.
    pub fn needs_info(&self) -> bool {
        match self.attachment {
            None => self.cache.is_empty(),
            Some(a) => self.cache.next_candidates(&a.ap.bssid).is_empty(),
        }
    }

    fn multicast(&mut self, ttl: u8, body: MessageBody) -> Action {
        Action::Send { dest: Dest::Multicast { ttl }, msg: Message::new(self.mac, body) }
    }

    fn unicast(&mut self, to: MacAddress, body: MessageBody) -> Action {
        Action::Send { dest: Dest::Unicast(to), msg: Message::new(self.mac, body) }
    }

    fn open_request(&mut self, kind: RequestKind, body: MessageBody, now: SimTime) -> Vec<Action> {
        let id = self.fresh_id();
        let deadline = now + self.cfg.request_deadline;
        if kind == RequestKind::Info {
            self.stats.inforeq_sent += 1;
        }
        self.pending.insert(id, PendingRequest { kind, ttl: 1, deadline, answered: false, body: body.clone() });
        vec![self.multicast(1, body), Action::Arm { at: deadline, timer: Timer::RequestDeadline { id, ttl: 1 } }]
    }

    /// Multicasts the node's cache contents asking peers for what is missing.
    pub fn request_info(&mut self, now: SimTime) -> Vec<Action> {
        if !self.cfg.cr_enabled || self.pending.values().any(|p| p.kind == RequestKind::Info && !p.answered) {
            return Vec::new();
        }
        let body = MessageBody::InfoReq { entries: self.cache.wire_entries() };
        self.open_request(RequestKind::Info, body, now)
    }

    /// Looks for assistants in `subnet`.
    pub fn discover_amns(&mut self, subnet: SubnetId, now: SimTime) -> Vec<Action> {
        let busy = self.pending.values().any(|p| p.kind == RequestKind::AmnDiscover(subnet) && !p.answered);
        if busy {
            return Vec::new();
        }
        self.open_request(RequestKind::AmnDiscover(subnet), MessageBody::AmnDiscover { subnet_id: subnet }, now)
    }

    fn lease_ok(&self, subnet: &SubnetId, now: SimTime) -> bool {
        self.leases.valid(subnet, now + self.cfg.lease_margin).is_some()
    }

    /// Subnets of the next candidate APs that differ from the current one.
    pub fn candidate_subnets(&self) -> Vec<SubnetId> {
        let Some(att) = self.attachment else { return Vec::new() };
        let mut out = Vec::new();
        for c in self.cache.next_candidates(&att.ap.bssid) {
            if c.subnet_id != att.ap.subnet_id && !out.contains(&c.subnet_id) {
                out.push(c.subnet_id);
            }
        }
        out
    }

    /// Makes sure a lease is held or being acquired for every candidate
    /// subnet.
    pub fn prepare_l3(&mut self, now: SimTime) -> Vec<Action> {
        if !self.cfg.cr_enabled || self.attachment.is_none() {
            return Vec::new();
        }
        let mut actions = Vec::new();
        for subnet in self.candidate_subnets() {
            if self.ip_requests.contains_key(&subnet) {
                continue;
            }
            let lease_ok = self.lease_ok(&subnet, now);
            let next = self.amn_list(&subnet).iter().find(|a| self.usable(&a.mac)).copied();
            let recently = self.last_discovery.get(&subnet).is_some_and(|t| now < *t + DISCOVERY_BACKOFF);
            match (lease_ok, next) {
                (false, Some(amn)) => actions.extend(self.send_ip_req(subnet, amn.mac, BTreeSet::new(), now)),
                // Assistants double as relay nodes, so learn them even when
                // the address is already in hand.
                (true, None) if !self.amn_list(&subnet).is_empty() || recently => {}
                (_, None) if recently => {}
                (_, None) => {
                    self.last_discovery.insert(subnet, now);
                    actions.extend(self.discover_amns(subnet, now));
                }
                (true, Some(_)) => {}
            }
        }
        actions
    }

    fn send_ip_req(&mut self, subnet: SubnetId, amn: MacAddress, mut tried: BTreeSet<MacAddress>, now: SimTime) -> Vec<Action> {
        let token = self.fresh_id();
        tried.insert(amn);
        self.ip_requests.insert(subnet, IpRequest { amn, token, tried });
        let rmn_mac = self.mac;
        vec![
            self.unicast(amn, MessageBody::IpReq { rmn_mac }),
            Action::Arm { at: now + self.cfg.amn_timeout, timer: Timer::AmnTimeout { subnet, token } },
        ]
    }

    /// Tries the next untried assistant for `subnet`, or gives up.
    fn failover(&mut self, subnet: SubnetId, now: SimTime) -> Vec<Action> {
        let Some(req) = self.ip_requests.remove(&subnet) else { return Vec::new() };
        let next = self
            .amn_list(&subnet)
            .iter()
            .find(|a| !req.tried.contains(&a.mac) && self.usable(&a.mac))
            .map(|a| a.mac);
        match next {
            Some(amn) => self.send_ip_req(subnet, amn, req.tried, now),
            None => vec![Action::Note(format!("no-assistant subnet={subnet}"))],
        }
    }

    /// Multicasts an INFOALERT about `suspect`, at most once per suspect.
    pub fn raise_alert(&mut self, suspect: MacAddress, ttl: u8) -> Vec<Action> {
        if suspect == self.mac || !self.alerted.insert(suspect) {
            return Vec::new();
        }
        self.stats.alerts_sent += 1;
        vec![
            self.multicast(ttl, MessageBody::InfoAlert { suspect }),
            Action::Security(SecurityEvent::AlertSent { suspect }),
        ]
    }

    /// An RN for a handoff into `target`, learned from AMN_RESP replies.
    pub fn relay_candidate(&self, target: &CacheEntry) -> Option<(AmnInfo, u8)> {
        let amn = self
            .amn_list(&target.subnet_id)
            .iter()
            .find(|a| a.can_relay && a.ap == target.bssid && self.usable(&a.mac))
            .copied()?;
        let ttl = self.reach_ttl.get(&target.subnet_id).copied().unwrap_or(self.cfg.max_ttl);
        Some((amn, ttl))
    }

    /// Builds the RELAY_REQ sent just before moving to `target`.
    pub fn request_relay(&mut self, target: &CacheEntry, mn_ip: Ipv4Addr, cn_ip: Ipv4Addr) -> Option<(RelayRequest, Vec<Action>)> {
        if !self.cfg.cr_enabled {
            return None;
        }
        let (rn, ttl) = self.relay_candidate(target)?;
        let req = RelayRequest { mn_mac: self.mac, mn_ip, cn_ip, rn_mac: rn.mac, rn_ip: rn.ip };
        let action = self.multicast(ttl, req.to_body());
        Some((req, vec![action]))
    }

    /// Dispatches a received message. `ttl` is set for multicast deliveries.
    pub fn on_message<R: Rng + ?Sized>(&mut self, msg: &Message, ttl: Option<u8>, now: SimTime, rng: &mut R) -> Vec<Action> {
        if msg.sender == self.mac || self.ledger.is_malicious(&msg.sender) || !self.cfg.cr_enabled {
            return Vec::new();
        }
        let reply_ttl = ttl.unwrap_or(self.cfg.max_ttl);
        match &msg.body {
            MessageBody::InfoReq { entries } => self.on_inforeq(msg.sender, entries, reply_ttl, now, rng),
            MessageBody::InfoResp { target, entries } => self.on_inforesp_observed(msg.sender, *target, entries, reply_ttl, now),
            MessageBody::AmnDiscover { subnet_id } => self.on_amn_discover(msg.sender, *subnet_id),
            MessageBody::AmnResp { amn_ip, router_ip, ap, can_relay } => {
                let info = AmnInfo { mac: msg.sender, ip: *amn_ip, router: *router_ip, ap: *ap, can_relay: *can_relay };
                self.on_amn_resp(info, now)
            }
            MessageBody::IpReq { rmn_mac } => {
                if self.cfg.can_assist && self.attachment.is_some() {
                    vec![Action::ProxyAcquire { rmn: *rmn_mac }]
                } else {
                    Vec::new()
                }
            }
            MessageBody::IpResp { rmn_mac, new_ip, router_ip } => {
                if *rmn_mac != self.mac {
                    return Vec::new();
                }
                self.on_ip_resp(msg.sender, *new_ip, *router_ip, reply_ttl, now)
            }
            MessageBody::InfoAlert { suspect } => self.on_alert(*suspect, msg.sender),
            // Relay registration is handled by the relay table of the RN.
            MessageBody::RelayReq { .. } => Vec::new(),
        }
    }

    fn on_inforeq<R: Rng + ?Sized>(
        &mut self,
        rmn: MacAddress,
        theirs: &[CacheEntry],
        ttl: u8,
        now: SimTime,
        rng: &mut R,
    ) -> Vec<Action> {
        let mut actions = Vec::new();
        if self.cfg.harvest_inforeq {
            actions.extend(self.absorb(rmn, theirs, ttl, now));
        }
        if let Some(s) = self.suppression.get_mut(&rmn) {
            // A retry of a request we are already waiting to answer.
            s.ttl = s.ttl.max(ttl);
            return actions;
        }
        if !self.cache.should_respond(theirs) {
            return actions;
        }
        let planned = self.cache.response_entries(theirs);
        let window = self.cfg.window.as_micros();
        let wait = SimDuration::from_micros(if window == 0 { 0 } else { rng.random_range(0..=window) });
        let token = self.fresh_id();
        let fire_at = now + wait;
        self.suppression.insert(rmn, Suppression { fire_at, planned, ttl, token });
        actions.push(Action::Arm { at: fire_at, timer: Timer::Suppression { rmn, token } });
        actions
    }

    /// Verifies `entries` against first-hand knowledge, merges what does not
    /// contradict it and alerts on what does.
    fn absorb(&mut self, from: MacAddress, entries: &[CacheEntry], ttl: u8, now: SimTime) -> Vec<Action> {
        let mut actions = Vec::new();
        let mut accepted = Vec::with_capacity(entries.len());
        let mut lied = false;
        for e in entries {
            match security::verify_claim_first_hand(&self.cache, e) {
                Verdict::Contradicts => lied = true,
                _ => accepted.push(*e),
            }
        }
        for c in self.cache.merge(&accepted, Some(from), now) {
            actions.push(Action::Security(SecurityEvent::Conflict(c)));
        }
        if lied {
            actions.extend(self.raise_alert(from, ttl));
        }
        actions
    }

    fn on_inforesp_observed(
        &mut self,
        sender: MacAddress,
        target: MacAddress,
        entries: &[CacheEntry],
        ttl: u8,
        now: SimTime,
    ) -> Vec<Action> {
        if let Some(s) = self.suppression.get_mut(&target) {
            s.planned.retain(|p| !entries.iter().any(|e| e.bssid == p.bssid));
            if s.planned.is_empty() {
                self.suppression.remove(&target);
                self.stats.suppressed += 1;
            }
        }
        let actions = self.absorb(sender, entries, ttl, now);
        if target == self.mac {
            for p in self.pending.values_mut() {
                if p.kind == RequestKind::Info {
                    p.answered = true;
                }
            }
        }
        actions
    }

    fn on_amn_discover(&mut self, rmn: MacAddress, subnet: SubnetId) -> Vec<Action> {
        let Some(att) = self.attachment else { return Vec::new() };
        if !self.cfg.can_assist || att.ap.subnet_id != subnet {
            return Vec::new();
        }
        let body = MessageBody::AmnResp { amn_ip: att.ip, router_ip: att.router, ap: att.ap.bssid, can_relay: self.cfg.can_relay };
        vec![self.unicast(rmn, body)]
    }

    fn on_amn_resp(&mut self, info: AmnInfo, now: SimTime) -> Vec<Action> {
        let subnet = SubnetId::of(info.ip, self.cfg.prefix);
        let mut ttl = None;
        for p in self.pending.values_mut() {
            if p.kind == RequestKind::AmnDiscover(subnet) {
                p.answered = true;
                ttl = Some(p.ttl);
            }
        }
        if let Some(t) = ttl {
            self.reach_ttl.insert(subnet, t);
        }
        let list = self.amn_lists.entry(subnet).or_default();
        match list.iter_mut().find(|a| a.mac == info.mac) {
            Some(existing) => *existing = info,
            None => list.push(info),
        }
        let wanted = self.candidate_subnets().contains(&subnet);
        if wanted && !self.lease_ok(&subnet, now) && !self.ip_requests.contains_key(&subnet) && self.usable(&info.mac) {
            return self.send_ip_req(subnet, info.mac, BTreeSet::new(), now);
        }
        Vec::new()
    }

    fn on_ip_resp(&mut self, amn: MacAddress, new_ip: Ipv4Addr, router: Ipv4Addr, ttl: u8, now: SimTime) -> Vec<Action> {
        let Some((&subnet, _)) = self.ip_requests.iter().find(|(_, r)| r.amn == amn) else {
            return Vec::new();
        };
        if let Err(reason) = security::validate_offered_ip(new_ip, subnet, self.cfg.prefix) {
            return self.on_bad_ip(amn, new_ip, reason, ttl, now);
        }
        self.ip_requests.remove(&subnet);
        self.stats.leases_acquired += 1;
        self.leases.insert(SubnetLease {
            subnet_id: subnet,
            router_ip: router,
            leased_ip: new_ip,
            expiry: now + self.cfg.lease_duration,
            acquired_via: Some(amn),
        });
        vec![Action::Note(format!("lease subnet={subnet} ip={new_ip} via={amn}"))]
    }

    /// A lease from `amn` turned out unusable: alert once, stop using that
    /// assistant, and try another one.
    pub fn on_bad_ip(&mut self, amn: MacAddress, ip: Ipv4Addr, reason: BadLease, ttl: u8, now: SimTime) -> Vec<Action> {
        self.blacklist.insert(amn);
        let mut actions = vec![Action::Security(SecurityEvent::BadLease { amn, ip, reason })];
        actions.extend(self.raise_alert(amn, ttl));
        let subnet = self.ip_requests.iter().find(|(_, r)| r.amn == amn).map(|(s, _)| *s);
        if let Some(subnet) = subnet {
            actions.extend(self.failover(subnet, now));
        }
        actions
    }

    fn on_alert(&mut self, suspect: MacAddress, reporter: MacAddress) -> Vec<Action> {
        if suspect == self.mac {
            return Vec::new();
        }
        let mut actions = vec![Action::Security(SecurityEvent::AlertReceived { suspect, reporter })];
        if let Ok(AlertOutcome::NewlyMarked) = self.ledger.record_alert(suspect, reporter) {
            actions.push(Action::Security(SecurityEvent::Marked { suspect }));
            self.suppression.remove(&suspect);
        }
        actions
    }

    /// Proxy exchange finished: multicast the result for the R-MN.
    pub fn on_proxy_lease(&mut self, rmn: MacAddress, result: Result<SubnetLease, DhcpError>) -> Vec<Action> {
        match result {
            Ok(lease) => {
                let body = MessageBody::IpResp { rmn_mac: rmn, new_ip: lease.leased_ip, router_ip: lease.router_ip };
                let ttl = self.cfg.max_ttl;
                vec![self.multicast(ttl, body)]
            }
            Err(e) => vec![Action::Note(format!("proxy-failed rmn={rmn} error={e}"))],
        }
    }

    pub fn on_timer(&mut self, timer: Timer, now: SimTime) -> Vec<Action> {
        match timer {
            Timer::RequestDeadline { id, ttl } => self.on_deadline(id, ttl, now),
            Timer::Suppression { rmn, token } => {
                let live = self.suppression.get(&rmn).is_some_and(|s| s.token == token);
                if !live || self.attachment.is_none() {
                    return Vec::new();
                }
                let s = self.suppression.remove(&rmn).expect("checked above");
                self.stats.inforesp_sent += 1;
                self.stats.entries_sent += s.planned.len() as u64;
                vec![self.multicast(s.ttl, MessageBody::InfoResp { target: rmn, entries: s.planned })]
            }
            Timer::AmnTimeout { subnet, token } => {
                if self.ip_requests.get(&subnet).is_some_and(|r| r.token == token) {
                    self.failover(subnet, now)
                } else {
                    Vec::new()
                }
            }
        }
    }

    fn on_deadline(&mut self, id: u64, ttl: u8, now: SimTime) -> Vec<Action> {
        let Some(p) = self.pending.get(&id) else { return Vec::new() };
        if p.ttl != ttl {
            return Vec::new();
        }
        if p.answered || p.ttl >= self.cfg.max_ttl || self.attachment.is_none() {
            let p = self.pending.remove(&id).expect("present");
            if !p.answered {
                return vec![Action::Note(format!("request-abandoned kind={:?} ttl={}", p.kind, p.ttl))];
            }
            return Vec::new();
        }
        let deadline = now + self.cfg.request_deadline;
        let p = self.pending.get_mut(&id).expect("present");
        p.ttl += 1;
        p.deadline = deadline;
        let (ttl, body) = (p.ttl, p.body.clone());
        if p.kind == RequestKind::Info {
            self.stats.inforeq_sent += 1;
        }
        vec![self.multicast(ttl, body), Action::Arm { at: deadline, timer: Timer::RequestDeadline { id, ttl } }]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mac(n: u32) -> MacAddress {
        MacAddress::local(n)
    }

    fn t(ms: u64) -> SimTime {
        SimTime::ZERO + SimDuration::from_millis(ms)
    }

    fn entry(n: u32, channel: u32, subnet: &str) -> CacheEntry {
        CacheEntry::new(mac(1000 + n), channel, subnet.parse().unwrap())
    }

    fn node(n: u32) -> Node {
        Node::new(mac(n), ProtocolConfig::default()).unwrap()
    }

    fn attach(node: &mut Node, ap: CacheEntry, ip: &str) {
        let router = u32::from(ap.subnet_id.network()) + 1;
        node.attach(Attachment { ap, ip: ip.parse().unwrap(), router: Ipv4Addr::from(router) }, Some(-40), t(0));
    }

    fn sends(actions: &[Action]) -> Vec<(Dest, Message)> {
        actions
            .iter()
            .filter_map(|a| match a {
                Action::Send { dest, msg } => Some((*dest, msg.clone())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn empty_cache_requests_at_ttl_one_and_escalates() {
        let mut n = node(1);
        let acts = n.request_info(t(0));
        let s = sends(&acts);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].0, Dest::Multicast { ttl: 1 });
        assert_eq!(s[0].1.body, MessageBody::InfoReq { entries: vec![] });

        n.attach(Attachment { ap: entry(1, 1, "10.0.1.0"), ip: "10.0.1.5".parse().unwrap(), router: "10.0.1.1".parse().unwrap() }, None, t(0));
        let again = n.on_timer(Timer::RequestDeadline { id: 1, ttl: 1 }, t(200));
        let s2 = sends(&again);
        assert_eq!(s2[0].0, Dest::Multicast { ttl: 2 });
        assert_eq!(s2[0].1.body, s[0].1.body);
        let third = n.on_timer(Timer::RequestDeadline { id: 1, ttl: 2 }, t(400));
        assert_eq!(sends(&third)[0].0, Dest::Multicast { ttl: 3 });
        let gave_up = n.on_timer(Timer::RequestDeadline { id: 1, ttl: 3 }, t(600));
        assert!(sends(&gave_up).is_empty());
        assert_eq!(n.pending_requests().count(), 0);
    }

    #[test]
    fn answered_request_is_not_reemitted() {
        let mut rmn = node(1);
        let a = entry(1, 1, "10.0.1.0");
        attach(&mut rmn, a, "10.0.1.5");
        rmn.request_info(t(0));
        let resp = Message::new(mac(2), MessageBody::InfoResp { target: mac(1), entries: vec![entry(2, 6, "10.0.2.0")] });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        rmn.on_message(&resp, Some(1), t(10), &mut rng);
        assert!(rmn.cache.contains(&mac(1002)));
        assert!(sends(&rmn.on_timer(Timer::RequestDeadline { id: 1, ttl: 1 }, t(200))).is_empty());
    }

    #[test]
    fn responder_waits_within_window_then_answers() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (a, b) = (entry(1, 1, "10.0.1.0"), entry(2, 6, "10.0.2.0"));
        let mut helper = node(2);
        attach(&mut helper, a, "10.0.1.6");
        helper.cache.observe(b, Some(-70), t(0));

        let req = Message::new(mac(1), MessageBody::InfoReq { entries: vec![a] });
        let acts = helper.on_message(&req, Some(1), t(100), &mut rng);
        let Some(Action::Arm { at, timer }) = acts.into_iter().next() else { panic!("timer expected") };
        assert!(at >= t(100) && at <= t(150));
        let out = sends(&helper.on_timer(timer, at));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].1.body, MessageBody::InfoResp { target: mac(1), entries: vec![b] });
    }

    #[test]
    fn observed_response_cancels_or_shrinks_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b, c) = (entry(1, 1, "10.0.1.0"), entry(2, 6, "10.0.2.0"), entry(3, 11, "10.0.3.0"));
        let mut helper = node(2);
        attach(&mut helper, a, "10.0.1.6");
        helper.cache.observe(b, Some(-60), t(0));
        helper.cache.observe(c, Some(-70), t(0));
        let req = Message::new(mac(1), MessageBody::InfoReq { entries: vec![a] });
        helper.on_message(&req, Some(1), t(0), &mut rng);
        assert_eq!(helper.planned_response(&mac(1)).unwrap().1, &[b, c]);

        let partial = Message::new(mac(3), MessageBody::InfoResp { target: mac(1), entries: vec![b] });
        helper.on_message(&partial, Some(1), t(1), &mut rng);
        assert_eq!(helper.planned_response(&mac(1)).unwrap().1, &[c]);

        let rest = Message::new(mac(4), MessageBody::InfoResp { target: mac(1), entries: vec![c] });
        helper.on_message(&rest, Some(1), t(2), &mut rng);
        assert!(helper.planned_response(&mac(1)).is_none());
        assert_eq!(helper.stats.suppressed, 1);
    }

    #[test]
    fn no_response_without_common_ap_or_from_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut helper = node(2);
        attach(&mut helper, entry(1, 1, "10.0.1.0"), "10.0.1.6");
        helper.cache.observe(entry(2, 6, "10.0.2.0"), None, t(0));
        let foreign = Message::new(mac(1), MessageBody::InfoReq { entries: vec![entry(9, 1, "10.0.9.0")] });
        assert!(helper.on_message(&foreign, Some(1), t(0), &mut rng).is_empty());
        let own = Message::new(mac(2), MessageBody::InfoReq { entries: vec![entry(1, 1, "10.0.1.0")] });
        assert!(helper.on_message(&own, Some(1), t(0), &mut rng).is_empty());
    }

    #[test]
    fn contradiction_raises_one_alert_and_is_not_merged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = entry(1, 1, "10.0.1.0");
        let mut v = node(2);
        attach(&mut v, a, "10.0.1.6");
        let lie = CacheEntry { subnet_id: "10.0.9.0".parse().unwrap(), ..a };
        let resp = Message::new(mac(66), MessageBody::InfoResp { target: mac(1), entries: vec![lie] });
        let acts = v.on_message(&resp, Some(2), t(5), &mut rng);
        let s = sends(&acts);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].0, Dest::Multicast { ttl: 2 });
        assert_eq!(s[0].1.body, MessageBody::InfoAlert { suspect: mac(66) });
        assert_eq!(v.cache.get(&a.bssid).unwrap().entry, a);
        assert!(sends(&v.on_message(&resp, Some(2), t(6), &mut rng)).is_empty());
    }

    #[test]
    fn marked_sender_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut n = node(1);
        attach(&mut n, entry(1, 1, "10.0.1.0"), "10.0.1.5");
        for r in 10..15 {
            let alert = Message::new(mac(r), MessageBody::InfoAlert { suspect: mac(66) });
            n.on_message(&alert, Some(1), t(0), &mut rng);
        }
        assert!(n.ledger.is_malicious(&mac(66)));
        let resp = Message::new(mac(66), MessageBody::InfoResp { target: mac(1), entries: vec![entry(5, 3, "10.0.5.0")] });
        let before = n.cache.clone();
        assert!(n.on_message(&resp, Some(1), t(1), &mut rng).is_empty());
        assert_eq!(n.cache, before);
    }

    fn rmn_with_candidate() -> Node {
        let mut rmn = node(1);
        attach(&mut rmn, entry(1, 1, "10.0.1.0"), "10.0.1.5");
        rmn.cache.merge(&[entry(2, 6, "10.0.2.0")], Some(mac(50)), t(0));
        rmn
    }

    #[test]
    fn amn_discovery_then_proxy_lease() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rmn = rmn_with_candidate();
        let acts = rmn.prepare_l3(t(0));
        assert_eq!(sends(&acts)[0].1.body, MessageBody::AmnDiscover { subnet_id: "10.0.2.0".parse().unwrap() });

        let mut amn = node(2);
        attach(&mut amn, entry(2, 6, "10.0.2.0"), "10.0.2.20");
        let disc = sends(&acts)[0].1.clone();
        let resp = sends(&amn.on_message(&disc, Some(2), t(1), &mut rng));
        assert_eq!(resp[0].0, Dest::Unicast(mac(1)));

        let ipreq = sends(&rmn.on_message(&resp[0].1, None, t(2), &mut rng));
        assert_eq!(ipreq[0].0, Dest::Unicast(mac(2)));
        assert_eq!(rmn.amn_list(&"10.0.2.0".parse().unwrap()).len(), 1);
        assert_eq!(amn.on_message(&ipreq[0].1, None, t(3), &mut rng), vec![Action::ProxyAcquire { rmn: mac(1) }]);

        let lease = SubnetLease {
            subnet_id: "10.0.2.0".parse().unwrap(),
            router_ip: "10.0.2.1".parse().unwrap(),
            leased_ip: "10.0.2.33".parse().unwrap(),
            expiry: t(300_000),
            acquired_via: Some(mac(2)),
        };
        let ipresp = sends(&amn.on_proxy_lease(mac(1), Ok(lease)));
        let foreign = Message::new(mac(2), MessageBody::IpResp { rmn_mac: mac(9), new_ip: lease.leased_ip, router_ip: lease.router_ip });
        rmn.on_message(&foreign, Some(3), t(870), &mut rng);
        assert!(rmn.leases.is_empty());
        rmn.on_message(&ipresp[0].1, Some(3), t(870), &mut rng);
        assert_eq!(rmn.leases.get(&lease.subnet_id).unwrap().leased_ip, lease.leased_ip);
        assert!(rmn.prepare_l3(t(900)).is_empty());
    }

    #[test]
    fn bad_ip_alerts_blacklists_and_fails_over() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rmn = rmn_with_candidate();
        let subnet: SubnetId = "10.0.2.0".parse().unwrap();
        for (m, ip) in [(2, "10.0.2.20"), (3, "10.0.2.21")] {
            let r = Message::new(mac(m), MessageBody::AmnResp {
                amn_ip: ip.parse().unwrap(),
                router_ip: "10.0.2.1".parse().unwrap(),
                ap: mac(1002),
                can_relay: false,
            });
            rmn.on_message(&r, None, t(0), &mut rng);
        }
        let bad = Message::new(mac(2), MessageBody::IpResp {
            rmn_mac: mac(1),
            new_ip: "10.0.7.7".parse().unwrap(),
            router_ip: "10.0.2.1".parse().unwrap(),
        });
        let acts = rmn.on_message(&bad, Some(3), t(900), &mut rng);
        let s = sends(&acts);
        assert_eq!(s[0].1.body, MessageBody::InfoAlert { suspect: mac(2) });
        assert_eq!(s[1], (Dest::Unicast(mac(3)), Message::new(mac(1), MessageBody::IpReq { rmn_mac: mac(1) })));
        assert!(rmn.is_blacklisted(&mac(2)));
        assert!(rmn.leases.get(&subnet).is_none());
    }

    #[test]
    fn unresponsive_amn_times_out_to_next() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rmn = rmn_with_candidate();
        for (m, ip) in [(2, "10.0.2.20"), (3, "10.0.2.21")] {
            let r = Message::new(mac(m), MessageBody::AmnResp {
                amn_ip: ip.parse().unwrap(),
                router_ip: "10.0.2.1".parse().unwrap(),
                ap: mac(1002),
                can_relay: true,
            });
            rmn.on_message(&r, None, t(0), &mut rng);
        }
        let subnet: SubnetId = "10.0.2.0".parse().unwrap();
        let token = rmn.ip_requests[&subnet].token;
        let acts = rmn.on_timer(Timer::AmnTimeout { subnet, token }, t(2000));
        assert_eq!(sends(&acts)[0].0, Dest::Unicast(mac(3)));
        let token = rmn.ip_requests[&subnet].token;
        let acts = rmn.on_timer(Timer::AmnTimeout { subnet, token }, t(4000));
        assert!(sends(&acts).is_empty());
        assert!(matches!(acts[0], Action::Note(_)));
    }

    #[test]
    fn relay_candidate_must_sit_on_target_ap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rmn = rmn_with_candidate();
        let target = entry(2, 6, "10.0.2.0");
        let other_ap = Message::new(mac(2), MessageBody::AmnResp {
            amn_ip: "10.0.2.20".parse().unwrap(),
            router_ip: "10.0.2.1".parse().unwrap(),
            ap: mac(1003),
            can_relay: true,
        });
        rmn.on_message(&other_ap, None, t(0), &mut rng);
        assert!(rmn.relay_candidate(&target).is_none());
        let good = Message::new(mac(3), MessageBody::AmnResp {
            amn_ip: "10.0.2.21".parse().unwrap(),
            router_ip: "10.0.2.1".parse().unwrap(),
            ap: target.bssid,
            can_relay: true,
        });
        rmn.on_message(&good, None, t(0), &mut rng);
        let (req, acts) = rmn.request_relay(&target, "10.0.2.33".parse().unwrap(), "192.168.0.5".parse().unwrap()).unwrap();
        assert_eq!(req.rn_mac, mac(3));
        assert_eq!(sends(&acts)[0].1.body, req.to_body());
    }
}
