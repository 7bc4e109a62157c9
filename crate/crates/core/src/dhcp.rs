//! Simulated DHCP server and client exchanges, including proxy acquisition.
//!
//! Messages are modeled at the field level the proxy procedure touches:
//! transaction id, `chaddr`, the broadcast flag, `yiaddr` and the router
//! option. An assisting node (A-MN) acquires an address on behalf of a
//! requesting node (R-MN) by putting the R-MN's MAC in `chaddr` and setting the
//! broadcast flag so the replies reach it despite the foreign `chaddr`. The
//! server cannot tell the two cases apart: the binding it records is the same
//! as if the R-MN had asked directly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::cache::SubnetLease;
use crate::time::{SimDuration, SimTime};
use crate::wire::{MacAddress, SubnetId};

pub const DEFAULT_LEASE: SimDuration = SimDuration::from_secs(300);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DhcpError {
    #[error("address pool for {0} is exhausted")]
    PoolExhausted(SubnetId),
    #[error("no DHCP server answered in {0}")]
    ServerTimeout(SubnetId),
    #[error("lease {ip} for {chaddr} is unknown to the server")]
    LeaseUnknown { ip: Ipv4Addr, chaddr: MacAddress },
    #[error("server refused the request (NAK)")]
    Nak,
    #[error("unexpected {0:?} in the current exchange state")]
    Unexpected(DhcpKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DhcpKind {
    Discover,
    Offer,
    Request,
    Ack,
    Nak,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhcpMessage {
    pub kind: DhcpKind,
    pub xid: u32,
    pub chaddr: MacAddress,
    pub broadcast: bool,
    /// Subnet the client is attached to (what a relay's giaddr would say).
    pub subnet: SubnetId,
    pub yiaddr: Option<Ipv4Addr>,
    pub router: Option<Ipv4Addr>,
    pub lease_expiry: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pool {
    pub subnet: SubnetId,
    pub prefix: u8,
    pub router: Ipv4Addr,
    pub first: Ipv4Addr,
    pub last: Ipv4Addr,
    pub lease_duration: SimDuration,
}

impl Pool {
    pub fn size(&self) -> u32 {
        u32::from(self.last).saturating_sub(u32::from(self.first)) + 1
    }

    fn addresses(&self) -> impl Iterator<Item = Ipv4Addr> {
        (u32::from(self.first)..=u32::from(self.last)).map(Ipv4Addr::from)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerLease {
    pub chaddr: MacAddress,
    pub subnet: SubnetId,
    pub expiry: SimTime,
}

#[derive(Debug, Clone, Default)]
pub struct DhcpServer {
    pools: BTreeMap<SubnetId, Pool>,
    bindings: BTreeMap<Ipv4Addr, ServerLease>,
    offers: BTreeMap<u32, (Ipv4Addr, MacAddress)>,
}

impl DhcpServer {
    pub fn new(pools: impl IntoIterator<Item = Pool>) -> Self {
        DhcpServer { pools: pools.into_iter().map(|p| (p.subnet, p)).collect(), ..Default::default() }
    }

    pub fn pool(&self, subnet: &SubnetId) -> Option<&Pool> {
        self.pools.get(subnet)
    }

    pub fn binding(&self, ip: &Ipv4Addr) -> Option<&ServerLease> {
        self.bindings.get(ip)
    }

    /// Bindings whose expiry is still ahead of `now`.
    pub fn active_leases(&self, now: SimTime) -> impl Iterator<Item = (&Ipv4Addr, &ServerLease)> {
        self.bindings.iter().filter(move |(_, l)| l.expiry > now)
    }

    fn is_free_for(&self, ip: Ipv4Addr, chaddr: MacAddress, xid: u32, now: SimTime) -> bool {
        let bound_elsewhere = self.bindings.get(&ip).is_some_and(|l| l.chaddr != chaddr && l.expiry > now);
        let offered_elsewhere = self.offers.iter().any(|(x, (o, c))| *o == ip && *x != xid && *c != chaddr);
        !bound_elsewhere && !offered_elsewhere
    }

    fn pick_address(&self, pool: &Pool, chaddr: MacAddress, xid: u32, now: SimTime) -> Option<Ipv4Addr> {
        // Prefer the client's existing binding, even an expired one.
        let existing = self
            .bindings
            .iter()
            .find(|(ip, l)| l.chaddr == chaddr && l.subnet == pool.subnet && pool.subnet.contains(**ip, pool.prefix))
            .map(|(ip, _)| *ip);
        if let Some(ip) = existing.filter(|ip| self.is_free_for(*ip, chaddr, xid, now)) {
            return Some(ip);
        }
        let never_used = pool.addresses().find(|ip| !self.bindings.contains_key(ip) && self.is_free_for(*ip, chaddr, xid, now));
        never_used.or_else(|| pool.addresses().find(|ip| self.is_free_for(*ip, chaddr, xid, now)))
    }

    /// Processes a client message and returns the server's reply.
    pub fn handle(&mut self, msg: &DhcpMessage, now: SimTime) -> Result<DhcpMessage, DhcpError> {
        let pool = self.pools.get(&msg.subnet).cloned().ok_or(DhcpError::ServerTimeout(msg.subnet))?;
        let reply = |kind, yiaddr, lease_expiry| DhcpMessage {
            kind,
            xid: msg.xid,
            chaddr: msg.chaddr,
            broadcast: msg.broadcast,
            subnet: msg.subnet,
            yiaddr,
            router: Some(pool.router),
            lease_expiry,
        };
        match msg.kind {
            DhcpKind::Discover => {
                let ip = self
                    .pick_address(&pool, msg.chaddr, msg.xid, now)
                    .ok_or(DhcpError::PoolExhausted(msg.subnet))?;
                self.offers.insert(msg.xid, (ip, msg.chaddr));
                Ok(reply(DhcpKind::Offer, Some(ip), None))
            }
            DhcpKind::Request => {
                let ip = match (self.offers.remove(&msg.xid), msg.yiaddr) {
                    (Some((ip, c)), _) if c == msg.chaddr => ip,
                    (_, Some(ip)) => ip,
                    _ => return Ok(reply(DhcpKind::Nak, None, None)),
                };
                if !pool.subnet.contains(ip, pool.prefix) || !self.is_free_for(ip, msg.chaddr, msg.xid, now) {
                    return Ok(reply(DhcpKind::Nak, None, None));
                }
                let expiry = now + pool.lease_duration;
                // One binding per client per subnet.
                self.bindings.retain(|other, l| !(l.chaddr == msg.chaddr && l.subnet == pool.subnet && *other != ip));
                self.bindings.insert(ip, ServerLease { chaddr: msg.chaddr, subnet: pool.subnet, expiry });
                Ok(reply(DhcpKind::Ack, Some(ip), Some(expiry)))
            }
            other => Err(DhcpError::Unexpected(other)),
        }
    }

    /// Extends the binding of `ip` to `chaddr`. An expired binding that has
    /// not been handed to anyone else is reissued.
    pub fn renew(&mut self, chaddr: MacAddress, ip: Ipv4Addr, now: SimTime) -> Result<SimTime, DhcpError> {
        let unknown = DhcpError::LeaseUnknown { ip, chaddr };
        let (subnet, duration) = self
            .pools
            .values()
            .find(|p| p.subnet.contains(ip, p.prefix))
            .map(|p| (p.subnet, p.lease_duration))
            .ok_or(unknown.clone())?;
        match self.bindings.get_mut(&ip) {
            Some(l) if l.chaddr == chaddr => {
                l.expiry = now + duration;
                Ok(l.expiry)
            }
            // Reallocated to another client.
            Some(_) => Err(unknown),
            None => {
                let expiry = now + duration;
                self.bindings.insert(ip, ServerLease { chaddr, subnet, expiry });
                Ok(expiry)
            }
        }
    }

    /// Text dump, one binding per line: `ip chaddr expiry_ms`.
    pub fn lease_table(&self) -> String {
        let mut out = String::new();
        for (ip, l) in &self.bindings {
            let _ = writeln!(out, "{ip} {} {}", l.chaddr, l.expiry);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ExchangeState {
    Init,
    Selecting,
    Requesting,
    Bound,
}

/// One discover/offer/request/ack exchange seen from the requesting side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhcpExchange {
    pub xid: u32,
    /// Node that actually sends and receives the messages.
    pub requester: MacAddress,
    /// Client the lease is bound to.
    pub chaddr: MacAddress,
    pub broadcast: bool,
    pub subnet: SubnetId,
    state: ExchangeState,
    offered: Option<Ipv4Addr>,
}

impl DhcpExchange {
    /// A node acquiring an address for itself.
    pub fn direct(node: MacAddress, subnet: SubnetId, xid: u32) -> Self {
        Self::build(node, node, false, subnet, xid)
    }

    /// An A-MN acquiring an address for `rmn`.
    pub fn proxy(amn: MacAddress, rmn: MacAddress, subnet: SubnetId, xid: u32) -> Self {
        Self::build(amn, rmn, true, subnet, xid)
    }

    fn build(requester: MacAddress, chaddr: MacAddress, broadcast: bool, subnet: SubnetId, xid: u32) -> Self {
        // Replies to a foreign chaddr only reach the requester when broadcast.
        let broadcast = broadcast || requester != chaddr;
        DhcpExchange { xid, requester, chaddr, broadcast, subnet, state: ExchangeState::Init, offered: None }
    }

    fn message(&self, kind: DhcpKind, yiaddr: Option<Ipv4Addr>) -> DhcpMessage {
        DhcpMessage {
            kind,
            xid: self.xid,
            chaddr: self.chaddr,
            broadcast: self.broadcast,
            subnet: self.subnet,
            yiaddr,
            router: None,
            lease_expiry: None,
        }
    }

    /// Whether a server reply would be delivered to the requester: it must
    /// belong to this transaction and be either addressed to the requester's
    /// own MAC or broadcast.
    pub fn receives(&self, reply: &DhcpMessage) -> bool {
        reply.xid == self.xid && (reply.broadcast || reply.chaddr == self.requester)
    }

    pub fn discover(&mut self) -> DhcpMessage {
        self.state = ExchangeState::Selecting;
        self.message(DhcpKind::Discover, None)
    }

    pub fn on_offer(&mut self, offer: &DhcpMessage) -> Result<DhcpMessage, DhcpError> {
        if self.state != ExchangeState::Selecting || offer.kind != DhcpKind::Offer {
            return Err(DhcpError::Unexpected(offer.kind));
        }
        self.offered = offer.yiaddr;
        self.state = ExchangeState::Requesting;
        Ok(self.message(DhcpKind::Request, offer.yiaddr))
    }

    pub fn on_ack(&mut self, ack: &DhcpMessage) -> Result<SubnetLease, DhcpError> {
        if self.state != ExchangeState::Requesting {
            return Err(DhcpError::Unexpected(ack.kind));
        }
        match (ack.kind, ack.yiaddr, ack.router, ack.lease_expiry) {
            (DhcpKind::Ack, Some(ip), Some(router), Some(expiry)) => {
                self.state = ExchangeState::Bound;
                Ok(SubnetLease {
                    subnet_id: self.subnet,
                    router_ip: router,
                    leased_ip: ip,
                    expiry,
                    acquired_via: (self.requester != self.chaddr).then_some(self.requester),
                })
            }
            (DhcpKind::Nak, ..) => Err(DhcpError::Nak),
            (k, ..) => Err(DhcpError::Unexpected(k)),
        }
    }
}

/// Transcript of a completed exchange: every message with its timestamp.
pub type Transcript = Vec<(SimTime, DhcpMessage)>;

/// Runs a full exchange against `server`, spreading the four messages evenly
/// over `duration` starting at `now`. The binding is committed when the
/// REQUEST reaches the server.
pub fn run_exchange(
    server: &mut DhcpServer,
    mut exchange: DhcpExchange,
    now: SimTime,
    duration: SimDuration,
) -> Result<(SubnetLease, Transcript), DhcpError> {
    let step = SimDuration::from_micros(duration.as_micros() / 4);
    let mut t = now;
    let mut transcript = Vec::with_capacity(4);

    let discover = exchange.discover();
    transcript.push((t, discover.clone()));
    t += step;
    let offer = server.handle(&discover, t)?;
    transcript.push((t, offer.clone()));
    if !exchange.receives(&offer) {
        return Err(DhcpError::ServerTimeout(exchange.subnet));
    }
    t += step;
    let request = exchange.on_offer(&offer)?;
    transcript.push((t, request.clone()));
    t += step;
    let ack = server.handle(&request, t)?;
    transcript.push((now + duration, ack.clone()));
    if !exchange.receives(&ack) {
        return Err(DhcpError::ServerTimeout(exchange.subnet));
    }
    exchange.on_ack(&ack).map(|lease| (lease, transcript))
}

/// Proxy acquisition performed by `amn` for `rmn` in `subnet`.
pub fn amn_acquire(
    server: &mut DhcpServer,
    amn: MacAddress,
    rmn: MacAddress,
    subnet: SubnetId,
    xid: u32,
    now: SimTime,
    duration: SimDuration,
) -> Result<(SubnetLease, Transcript), DhcpError> {
    run_exchange(server, DhcpExchange::proxy(amn, rmn, subnet, xid), now, duration)
}

/// Renews a held lease once the node is inside its subnet.
pub fn renew(server: &mut DhcpServer, node: MacAddress, lease: &SubnetLease, now: SimTime) -> Result<SubnetLease, DhcpError> {
    let expiry = server.renew(node, lease.leased_ip, now)?;
    Ok(SubnetLease { expiry, ..*lease })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mac(n: u32) -> MacAddress {
        MacAddress::local(n)
    }

    fn subnet() -> SubnetId {
        "10.0.2.0".parse().unwrap()
    }

    fn pool(first: &str, last: &str) -> Pool {
        Pool {
            subnet: subnet(),
            prefix: 24,
            router: "10.0.2.1".parse().unwrap(),
            first: first.parse().unwrap(),
            last: last.parse().unwrap(),
            lease_duration: DEFAULT_LEASE,
        }
    }

    fn ms(n: u64) -> SimDuration {
        SimDuration::from_millis(n)
    }

    #[test]
    fn proxy_acquisition_binds_rmn() {
        let mut server = DhcpServer::new([pool("10.0.2.10", "10.0.2.50")]);
        let (lease, transcript) =
            amn_acquire(&mut server, mac(1), mac(0x4d), subnet(), 7, SimTime::ZERO, ms(867)).unwrap();
        let ip = u32::from(lease.leased_ip);
        assert!((u32::from("10.0.2.10".parse::<Ipv4Addr>().unwrap())..=u32::from("10.0.2.50".parse::<Ipv4Addr>().unwrap())).contains(&ip));
        assert_eq!(server.binding(&lease.leased_ip).unwrap().chaddr, mac(0x4d));
        assert_eq!(lease.router_ip, "10.0.2.1".parse::<Ipv4Addr>().unwrap());
        assert_eq!(lease.acquired_via, Some(mac(1)));
        assert_eq!(transcript.len(), 4);
        assert!(transcript.iter().all(|(_, m)| m.broadcast && m.chaddr == mac(0x4d)));
        assert_eq!(transcript.last().unwrap().0, SimTime::ZERO + ms(867));
    }

    #[test]
    fn direct_exchange_needs_no_broadcast() {
        let ex = DhcpExchange::direct(mac(3), subnet(), 1);
        assert!(!ex.broadcast);
        let ex = DhcpExchange::proxy(mac(1), mac(3), subnet(), 1);
        assert!(ex.broadcast);
    }

    #[test]
    fn proxy_without_broadcast_never_hears_replies() {
        let mut server = DhcpServer::new([pool("10.0.2.10", "10.0.2.50")]);
        let mut ex = DhcpExchange::proxy(mac(1), mac(2), subnet(), 3);
        ex.broadcast = false;
        let r = run_exchange(&mut server, ex, SimTime::ZERO, ms(4));
        assert_eq!(r.unwrap_err(), DhcpError::ServerTimeout(subnet()));
    }

    #[test]
    fn exhausted_pool() {
        let mut server = DhcpServer::new([pool("10.0.2.10", "10.0.2.10")]);
        run_exchange(&mut server, DhcpExchange::direct(mac(1), subnet(), 1), SimTime::ZERO, ms(4)).unwrap();
        let r = amn_acquire(&mut server, mac(5), mac(2), subnet(), 2, SimTime::ZERO, ms(4));
        assert_eq!(r.unwrap_err(), DhcpError::PoolExhausted(subnet()));
    }

    #[test]
    fn unknown_subnet_times_out() {
        let mut server = DhcpServer::new([pool("10.0.2.10", "10.0.2.50")]);
        let other: SubnetId = "10.9.9.0".parse().unwrap();
        let r = run_exchange(&mut server, DhcpExchange::direct(mac(1), other, 1), SimTime::ZERO, ms(4));
        assert_eq!(r.unwrap_err(), DhcpError::ServerTimeout(other));
    }

    #[test]
    fn renewal_paths() {
        let mut p = pool("10.0.2.10", "10.0.2.10");
        p.lease_duration = SimDuration::from_secs(10);
        let mut server = DhcpServer::new([p]);
        let (lease, _) = amn_acquire(&mut server, mac(1), mac(2), subnet(), 1, SimTime::ZERO, ms(4)).unwrap();

        // Before expiry: same address, later expiry.
        let t = SimTime::from_micros(5_000_000);
        let renewed = renew(&mut server, mac(2), &lease, t).unwrap();
        assert_eq!(renewed.leased_ip, lease.leased_ip);
        assert!(renewed.expiry > lease.expiry);

        // After expiry, still free: reissued.
        let late = SimTime::from_micros(60_000_000);
        let again = renew(&mut server, mac(2), &renewed, late).unwrap();
        assert_eq!(again.leased_ip, lease.leased_ip);

        // After expiry and reallocation to someone else: unknown.
        let later = SimTime::from_micros(200_000_000);
        run_exchange(&mut server, DhcpExchange::direct(mac(9), subnet(), 5), later, ms(4)).unwrap();
        assert_eq!(server.binding(&lease.leased_ip).unwrap().chaddr, mac(9));
        let r = renew(&mut server, mac(2), &again, later + ms(10));
        assert!(matches!(r, Err(DhcpError::LeaseUnknown { .. })));
    }

    #[test]
    fn client_keeps_its_address_across_exchanges() {
        let mut server = DhcpServer::new([pool("10.0.2.10", "10.0.2.50")]);
        let (a, _) = amn_acquire(&mut server, mac(1), mac(2), subnet(), 1, SimTime::ZERO, ms(4)).unwrap();
        let (b, _) = run_exchange(&mut server, DhcpExchange::direct(mac(2), subnet(), 2), SimTime::from_micros(10_000), ms(4)).unwrap();
        assert_eq!(a.leased_ip, b.leased_ip);
        assert_eq!(server.active_leases(SimTime::from_micros(20_000)).count(), 1);
    }

    #[test]
    fn lease_table_format() {
        let mut server = DhcpServer::new([pool("10.0.2.10", "10.0.2.50")]);
        amn_acquire(&mut server, mac(1), mac(2), subnet(), 1, SimTime::ZERO, ms(4)).unwrap();
        assert_eq!(server.lease_table(), "10.0.2.10 02:00:00:00:00:02 300003.000\n");
    }
}
