//! Handoff execution and accounting.
//!
//! A handoff runs in two steps. [`begin_handoff`] decides the layer-2 path
//! (cached channel, selective scan, or full scan) at the moment the node
//! leaves its AP. [`finish_handoff`] runs at association time, once the
//! simulator knows whether a relay was registered, and settles authentication
//! and the layer-3 path.
//!
//! Timeline with a relay: association, then a short first-packet delay, then
//! the L3 steps; authentication runs in the background and does not add to
//! the interruption. Without a relay nothing but EAPOL passes the
//! authenticator until authentication completes, so it is serialized before
//! L3.

use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use super::{Attachment, Node};
use crate::dhcp::{self, DhcpError, DhcpExchange, DhcpServer};
use crate::relay::AuthMechanism;
use crate::time::{SimDuration, SimTime};
use crate::wire::{CacheEntry, MacAddress};

/// Named latency components the delay model can sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Component {
    FullScan,
    SelectiveScan,
    OpenAuthAssoc,
    /// Waiting for an AP on a wrong cached channel before giving up.
    AssocTimeout,
    Auth(AuthMechanism),
    Dhcp,
    L3Signaling,
    L3Polling,
    /// Extra delay of the first relayed packet, queued behind EAPOL frames.
    FirstPacket,
}

impl Component {
    pub fn name(&self) -> String {
        match self {
            Component::FullScan => "full_scan".into(),
            Component::SelectiveScan => "selective_scan".into(),
            Component::OpenAuthAssoc => "open_auth_assoc".into(),
            Component::AssocTimeout => "assoc_timeout".into(),
            Component::Auth(m) => format!("auth.{m}"),
            Component::Dhcp => "dhcp".into(),
            Component::L3Signaling => "l3_signaling".into(),
            Component::L3Polling => "l3_polling".into(),
            Component::FirstPacket => "first_packet".into(),
        }
    }
}

pub trait DelaySource {
    fn sample(&mut self, c: Component) -> SimDuration;
}

impl<F: FnMut(Component) -> SimDuration> DelaySource for F {
    fn sample(&mut self, c: Component) -> SimDuration {
        self(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandoffRecord {
    pub node: MacAddress,
    pub from_ap: MacAddress,
    pub to_ap: MacAddress,
    pub auth: AuthMechanism,
    pub l2: SimDuration,
    pub l3: SimDuration,
    pub auth_time: SimDuration,
    /// Authentication ran while traffic flowed through a relay.
    pub overlapped: bool,
    pub lost_pkts: u64,
    pub used_relay: bool,
    pub used_cache: bool,
    /// Some step fell back to the standard procedure.
    pub legacy_fallback: bool,
}

impl HandoffRecord {
    /// Interruption: L2 + L3, plus authentication when it was serialized.
    pub fn total(&self) -> SimDuration {
        let auth = if self.overlapped { SimDuration::ZERO } else { self.auth_time };
        self.l2 + self.l3 + auth
    }
}

impl fmt::Display for HandoffRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}->{} auth={} l2={} l3={} auth_time={} total={}",
            self.node,
            self.from_ap,
            self.to_ap,
            self.auth,
            self.l2,
            self.l3,
            self.auth_time,
            self.total()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HandoffError {
    #[error("address acquisition failed: {0}")]
    Dhcp(#[from] DhcpError),
}

/// Result of the layer-2 step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct L2Phase {
    pub previous: Option<Attachment>,
    pub target: CacheEntry,
    pub started_at: SimTime,
    pub associated_at: SimTime,
    pub l2: SimDuration,
    pub used_cache: bool,
    pub fallback: bool,
    /// A cached entry sent the node to the wrong channel: (BSSID, source).
    pub wrong_entry: Option<(MacAddress, Option<MacAddress>)>,
}

/// Picks the L2 path toward `target` (the AP as it really is).
pub fn begin_handoff(node: &Node, target: CacheEntry, ds: &mut dyn DelaySource, now: SimTime) -> L2Phase {
    let assoc = ds.sample(Component::OpenAuthAssoc);
    let mut wrong_entry = None;
    let (scan, used_cache, fallback) = if !node.cfg.cr_enabled {
        (ds.sample(Component::FullScan), false, false)
    } else {
        match node.cache.get(&target.bssid) {
            Some(c) if c.entry.channel == target.channel => (SimDuration::ZERO, true, false),
            Some(c) => {
                wrong_entry = Some((target.bssid, c.learned_from));
                (ds.sample(Component::AssocTimeout) + ds.sample(Component::FullScan), false, true)
            }
            None => (ds.sample(Component::SelectiveScan), false, false),
        }
    };
    let l2 = scan + assoc;
    L2Phase {
        previous: node.attachment,
        target,
        started_at: now,
        associated_at: now + l2,
        l2,
        used_cache,
        fallback,
        wrong_entry,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FinishContext {
    pub mechanism: AuthMechanism,
    /// An RN registered this node before association completed.
    pub relay_active: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandoffOutcome {
    pub record: HandoffRecord,
    pub associated_at: SimTime,
    pub auth_done_at: SimTime,
    pub complete_at: SimTime,
    pub attachment: Attachment,
    /// A held lease proved unusable on arrival: (A-MN that supplied it, IP).
    pub bad_lease: Option<(MacAddress, Ipv4Addr)>,
    /// A DHCP exchange ran after the L2 handoff (renewals excluded).
    pub dhcp_after_l2: bool,
}

fn xid_for(node: MacAddress, at: SimTime) -> u32 {
    let o = node.octets();
    u32::from_be_bytes([o[2], o[3], o[4], o[5]]) ^ (at.as_micros() as u32)
}

fn direct_dhcp(
    node: &mut Node,
    server: &mut DhcpServer,
    target: &CacheEntry,
    at: SimTime,
    ds: &mut dyn DelaySource,
) -> Result<(SimDuration, Attachment), HandoffError> {
    let d = ds.sample(Component::Dhcp);
    let exchange = DhcpExchange::direct(node.mac, target.subnet_id, xid_for(node.mac, at));
    let (lease, _) = dhcp::run_exchange(server, exchange, at, d)?;
    node.leases.insert(lease);
    Ok((d, Attachment { ap: *target, ip: lease.leased_ip, router: lease.router_ip }))
}

/// Completes a handoff whose L2 step was planned by [`begin_handoff`].
pub fn finish_handoff(
    node: &mut Node,
    l2p: &L2Phase,
    ctx: FinishContext,
    server: &mut DhcpServer,
    ds: &mut dyn DelaySource,
) -> Result<HandoffOutcome, HandoffError> {
    let target = l2p.target;
    let needs_auth = ctx.mechanism.requires_8021x();
    let relay = ctx.relay_active && needs_auth;
    let auth_time = if needs_auth { ds.sample(Component::Auth(ctx.mechanism)) } else { SimDuration::ZERO };
    let first_packet = if relay { ds.sample(Component::FirstPacket) } else { SimDuration::ZERO };
    let l2 = l2p.l2 + first_packet;
    let l3_start = l2p.associated_at + first_packet + if relay { SimDuration::ZERO } else { auth_time };

    let mut fallback = l2p.fallback;
    let mut bad_lease = None;
    let mut dhcp_after_l2 = false;
    let (l3, attachment) = match l2p.previous {
        Some(prev) if prev.ap.subnet_id == target.subnet_id => {
            (SimDuration::ZERO, Attachment { ap: target, ..prev })
        }
        _ => {
            let held = node.leases.valid(&target.subnet_id, l3_start).copied().filter(|_| node.cfg.cr_enabled);
            match held {
                Some(lease) => {
                    let detect = ds.sample(Component::L3Signaling) + ds.sample(Component::L3Polling);
                    let configured = l3_start + detect;
                    match dhcp::renew(server, node.mac, &lease, configured) {
                        Ok(renewed) => {
                            node.leases.insert(renewed);
                            (detect, Attachment { ap: target, ip: renewed.leased_ip, router: renewed.router_ip })
                        }
                        Err(_) => {
                            node.leases.remove(&target.subnet_id);
                            if let Some(amn) = lease.acquired_via {
                                bad_lease = Some((amn, lease.leased_ip));
                            }
                            fallback = true;
                            dhcp_after_l2 = true;
                            let (d, att) = direct_dhcp(node, server, &target, configured, ds)?;
                            (detect + d, att)
                        }
                    }
                }
                None => {
                    fallback |= node.cfg.cr_enabled;
                    dhcp_after_l2 = true;
                    direct_dhcp(node, server, &target, l3_start, ds)?
                }
            }
        }
    };

    let complete_at = l3_start + l3;
    let record = HandoffRecord {
        node: node.mac,
        from_ap: l2p.previous.map_or(MacAddress::BROADCAST, |p| p.ap.bssid),
        to_ap: target.bssid,
        auth: ctx.mechanism,
        l2,
        l3,
        auth_time,
        overlapped: relay,
        lost_pkts: 0,
        used_relay: relay,
        used_cache: l2p.used_cache,
        legacy_fallback: fallback,
    };
    Ok(HandoffOutcome {
        record,
        associated_at: l2p.associated_at,
        auth_done_at: l2p.associated_at + auth_time,
        complete_at,
        attachment,
        bad_lease,
        dhcp_after_l2,
    })
}

/// Both steps at once, for callers that know the relay situation up front.
pub fn perform_handoff(
    node: &mut Node,
    target: CacheEntry,
    ctx: FinishContext,
    server: &mut DhcpServer,
    ds: &mut dyn DelaySource,
    now: SimTime,
) -> Result<HandoffOutcome, HandoffError> {
    let l2p = begin_handoff(node, target, ds, now);
    finish_handoff(node, &l2p, ctx, server, ds)
}
