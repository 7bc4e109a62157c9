//! Relaying traffic for a node while it authenticates.
//!
//! During 802.1X authentication the authenticator only passes EAPOL frames
//! for the new station. A relay node (RN) already authenticated on the target
//! AP overhears the station's ad-hoc-addressed data frames, which need no AP,
//! and forwards them under its own security association. The correspondent
//! sends downlink traffic to the RN, which re-emits it as ad-hoc frames. The
//! RN is already known to the switch, so relayed traffic also skips the
//! bridging delay.
//!
//! Countermeasures against abuse: a registration only lives for
//! `RelayConfig::timeout`; it is accepted only from a station that was
//! associated and authenticated on its previous AP; and a station whose last
//! relay ran out without it ever authenticating is refused for a cooldown.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use crate::time::{SimDuration, SimTime};
use crate::wire::{FrameHeader, FrameKind, MacAddress, MessageBody};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AuthMechanism {
    Open,
    EapTls1024,
    EapTls2048,
    PeapMschapv2,
}

impl AuthMechanism {
    pub const ALL: [AuthMechanism; 4] =
        [AuthMechanism::Open, AuthMechanism::EapTls1024, AuthMechanism::EapTls2048, AuthMechanism::PeapMschapv2];

    pub fn requires_8021x(self) -> bool {
        self != AuthMechanism::Open
    }

    pub fn name(self) -> &'static str {
        match self {
            AuthMechanism::Open => "open",
            AuthMechanism::EapTls1024 => "eap_tls_1024",
            AuthMechanism::EapTls2048 => "eap_tls_2048",
            AuthMechanism::PeapMschapv2 => "peap",
        }
    }
}

impl fmt::Display for AuthMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AuthMechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AuthMechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown auth mechanism `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameClass {
    Eapol,
    Data,
}

/// A data frame on the air: addressing, EtherType class and payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub header: FrameHeader,
    pub class: FrameClass,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelayRequest {
    pub mn_mac: MacAddress,
    pub mn_ip: Ipv4Addr,
    pub cn_ip: Ipv4Addr,
    pub rn_mac: MacAddress,
    pub rn_ip: Ipv4Addr,
}

impl RelayRequest {
    pub fn from_body(body: &MessageBody) -> Option<Self> {
        match *body {
            MessageBody::RelayReq { mn_mac, mn_ip, cn_ip, rn_mac, rn_ip } => {
                Some(RelayRequest { mn_mac, mn_ip, cn_ip, rn_mac, rn_ip })
            }
            _ => None,
        }
    }

    pub fn to_body(&self) -> MessageBody {
        MessageBody::RelayReq {
            mn_mac: self.mn_mac,
            mn_ip: self.mn_ip,
            cn_ip: self.cn_ip,
            rn_mac: self.rn_mac,
            rn_ip: self.rn_ip,
        }
    }
}

/// What the RN knows about the requesting station when the request arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequesterStatus {
    /// AP the station is associated with, if any.
    pub associated_at: Option<MacAddress>,
    pub authenticated: bool,
    pub marked_malicious: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelayRefusal {
    /// The request names a different RN.
    NotAddressed,
    RefusedUnassociated,
    RefusedMalicious,
    /// A registration for the station is live, or its last one expired
    /// unused within the cooldown.
    Cooldown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Expired,
    Unregistered,
    WrongClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndReason {
    /// Station moved back to the direct path.
    Deactivated,
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelayConfig {
    pub timeout: SimDuration,
    pub cooldown: SimDuration,
    /// Quiet time after which a used registration is considered finished.
    pub idle_timeout: SimDuration,
}

impl Default for RelayConfig {
    fn default() -> Self {
        RelayConfig {
            timeout: SimDuration::from_secs(10),
            cooldown: SimDuration::from_secs(60),
            idle_timeout: SimDuration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayRegistration {
    pub request: RelayRequest,
    pub registered_at: SimTime,
    pub expires_at: SimTime,
    pub active: bool,
    pub registered_while_mn_at: MacAddress,
    pub frames_up: u64,
    pub frames_down: u64,
    pub last_activity: Option<SimTime>,
    pub ended: Option<(SimTime, EndReason)>,
}

impl RelayRegistration {
    pub fn is_live(&self, now: SimTime) -> bool {
        self.active && now < self.expires_at
    }
}

/// One line of the relay audit log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRecord {
    pub rn: MacAddress,
    pub mn: MacAddress,
    pub created: SimTime,
    pub ended: SimTime,
    pub reason: EndReason,
    pub frames_up: u64,
    pub frames_down: u64,
}

impl fmt::Display for AuditRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let reason = match self.reason {
            EndReason::Deactivated => "deactivated",
            EndReason::Expired => "expired",
        };
        write!(
            f,
            "rn={} mn={} created={} {}={} frames_up={} frames_down={}",
            self.rn, self.mn, self.created, reason, self.ended, self.frames_up, self.frames_down
        )
    }
}

/// The relay state a single RN keeps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelayTable {
    pub config: RelayConfig,
    rn_mac: MacAddress,
    registrations: BTreeMap<MacAddress, RelayRegistration>,
    audit: Vec<AuditRecord>,
}

impl RelayTable {
    pub fn new(rn_mac: MacAddress, config: RelayConfig) -> Self {
        RelayTable { config, rn_mac, registrations: BTreeMap::new(), audit: Vec::new() }
    }

    pub fn registration(&self, mn: &MacAddress) -> Option<&RelayRegistration> {
        self.registrations.get(mn)
    }

    pub fn registrations(&self) -> impl Iterator<Item = &RelayRegistration> {
        self.registrations.values()
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.audit
    }

    /// Handles a RELAY_REQ naming this node as RN.
    pub fn on_relay_req(
        &mut self,
        req: &RelayRequest,
        status: RequesterStatus,
        now: SimTime,
    ) -> Result<&RelayRegistration, RelayRefusal> {
        if req.rn_mac != self.rn_mac {
            return Err(RelayRefusal::NotAddressed);
        }
        if status.marked_malicious {
            return Err(RelayRefusal::RefusedMalicious);
        }
        let Some(old_ap) = status.associated_at.filter(|_| status.authenticated) else {
            return Err(RelayRefusal::RefusedUnassociated);
        };
        self.expire(now);
        if let Some(prev) = self.registrations.get(&req.mn_mac) {
            let blocked = match prev.ended {
                None => true,
                Some((at, EndReason::Expired)) => now < at + self.config.cooldown,
                Some((_, EndReason::Deactivated)) => false,
            };
            if blocked {
                return Err(RelayRefusal::Cooldown);
            }
        }
        let reg = RelayRegistration {
            request: *req,
            registered_at: now,
            expires_at: now + self.config.timeout,
            active: true,
            registered_while_mn_at: old_ap,
            frames_up: 0,
            frames_down: 0,
            last_activity: None,
            ended: None,
        };
        self.registrations.insert(req.mn_mac, reg);
        Ok(&self.registrations[&req.mn_mac])
    }

    fn live_registration(&mut self, mn: &MacAddress, now: SimTime) -> Result<&mut RelayRegistration, DropReason> {
        self.expire(now);
        match self.registrations.get_mut(mn) {
            None => Err(DropReason::Unregistered),
            Some(r) if r.ended.is_some() => match r.ended {
                Some((_, EndReason::Expired)) => Err(DropReason::Expired),
                _ => Err(DropReason::Unregistered),
            },
            Some(r) => Ok(r),
        }
    }

    /// Forwards a station's ad-hoc frame to the AP as a ToDS frame sent by
    /// this RN. The payload is carried unchanged.
    pub fn relay_uplink(&mut self, frame: &Frame, rn_bssid: MacAddress, now: SimTime) -> Result<Frame, DropReason> {
        if frame.header.kind() != FrameKind::DirectAdHoc || frame.class != FrameClass::Data {
            return Err(DropReason::WrongClass);
        }
        let mn = frame.header.source().ok_or(DropReason::Unregistered)?;
        let rn = self.rn_mac;
        let reg = self.live_registration(&mn, now)?;
        reg.frames_up += 1;
        reg.last_activity = Some(now);
        let cn_hw = ip_as_mac(reg.request.cn_ip);
        Ok(Frame { header: FrameHeader::to_ap(rn_bssid, rn, cn_hw), class: FrameClass::Data, payload: frame.payload.clone() })
    }

    /// Re-emits a correspondent packet for `mn` as an ad-hoc frame.
    pub fn relay_downlink(
        &mut self,
        mn: MacAddress,
        cn_ip: Ipv4Addr,
        payload: &[u8],
        rn_bssid: MacAddress,
        now: SimTime,
    ) -> Result<Frame, DropReason> {
        let rn = self.rn_mac;
        let reg = self.live_registration(&mn, now)?;
        if reg.request.cn_ip != cn_ip {
            return Err(DropReason::Unregistered);
        }
        reg.frames_down += 1;
        reg.last_activity = Some(now);
        Ok(Frame { header: FrameHeader::ad_hoc(mn, rn, rn_bssid), class: FrameClass::Data, payload: payload.to_vec() })
    }

    /// Ends registrations past their deadline. Returns the MNs affected.
    pub fn expire(&mut self, now: SimTime) -> Vec<MacAddress> {
        let mut ended = Vec::new();
        for (mn, r) in self.registrations.iter_mut() {
            if r.ended.is_none() && now >= r.expires_at {
                r.active = false;
                r.ended = Some((r.expires_at, EndReason::Expired));
                ended.push(*mn);
            }
        }
        for mn in &ended {
            self.push_audit(mn);
        }
        ended
    }

    /// Deactivates registrations that carried traffic and have since gone
    /// quiet: the station is back on the direct path.
    pub fn check_idle(&mut self, now: SimTime) -> Vec<MacAddress> {
        self.expire(now);
        let idle = self.config.idle_timeout;
        let mut ended = Vec::new();
        for (mn, r) in self.registrations.iter_mut() {
            if r.ended.is_none() && r.last_activity.is_some_and(|t| now >= t + idle) {
                r.active = false;
                r.ended = Some((now, EndReason::Deactivated));
                ended.push(*mn);
            }
        }
        for mn in &ended {
            self.push_audit(mn);
        }
        ended
    }

    fn push_audit(&mut self, mn: &MacAddress) {
        let r = &self.registrations[mn];
        if let Some((at, reason)) = r.ended {
            self.audit.push(AuditRecord {
                rn: self.rn_mac,
                mn: *mn,
                created: r.registered_at,
                ended: at,
                reason,
                frames_up: r.frames_up,
                frames_down: r.frames_down,
            });
        }
    }
}

/// Stand-in hardware address for an IP host behind the distribution system.
fn ip_as_mac(ip: Ipv4Addr) -> MacAddress {
    let o = ip.octets();
    MacAddress::new([0x02, 0xfe, o[0], o[1], o[2], o[3]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthPhase {
    Idle,
    EapolInProgress,
    Authenticated,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthTransition {
    CredentialsExchanged,
    Authenticated,
    Failed,
}

/// 802.1X authentication of one station, as a pair of timed phases:
/// certificate/credential exchange, then session-key exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthSession {
    pub mn: MacAddress,
    pub mechanism: AuthMechanism,
    pub phase: AuthPhase,
    pub started_at: SimTime,
    pub credentials_done_at: SimTime,
    pub completes_at: SimTime,
    credentials_reported: bool,
    will_fail: bool,
}

impl AuthSession {
    /// Starts at association. Open networks authenticate immediately.
    pub fn start(
        mn: MacAddress,
        mechanism: AuthMechanism,
        now: SimTime,
        credentials: SimDuration,
        key_exchange: SimDuration,
        will_fail: bool,
    ) -> Self {
        let open = !mechanism.requires_8021x();
        AuthSession {
            mn,
            mechanism,
            phase: if open { AuthPhase::Authenticated } else { AuthPhase::EapolInProgress },
            started_at: now,
            credentials_done_at: if open { now } else { now + credentials },
            completes_at: if open { now } else { now + credentials + key_exchange },
            credentials_reported: open,
            will_fail: will_fail && !open,
        }
    }

    pub fn duration(&self) -> SimDuration {
        self.completes_at.since(self.started_at)
    }

    /// Advances the session to `now`, reporting the next transition crossed.
    pub fn auth_progress(&mut self, now: SimTime) -> Option<AuthTransition> {
        if self.phase != AuthPhase::EapolInProgress {
            return None;
        }
        if !self.credentials_reported && now >= self.credentials_done_at {
            self.credentials_reported = true;
            if now < self.completes_at {
                return Some(AuthTransition::CredentialsExchanged);
            }
        }
        if now >= self.completes_at {
            self.credentials_reported = true;
            if self.will_fail {
                self.phase = AuthPhase::Failed;
                return Some(AuthTransition::Failed);
            }
            self.phase = AuthPhase::Authenticated;
            return Some(AuthTransition::Authenticated);
        }
        None
    }
}

/// Authenticator port filter: until a station is authenticated only EAPOL
/// passes; on an open AP everything passes.
pub fn port_admits(mechanism: AuthMechanism, session: Option<&AuthSession>, class: FrameClass) -> bool {
    if !mechanism.requires_8021x() {
        return true;
    }
    match session.map(|s| s.phase) {
        Some(AuthPhase::Authenticated) => true,
        Some(AuthPhase::EapolInProgress) => class == FrameClass::Eapol,
        _ => false,
    }
}
