//! Misbehaving participants.
//!
//! A malicious node joins the network like any other station and then, at a
//! fixed rate, injects forged cooperative-roaming traffic. The bad assistant
//! is reactive instead: it answers discovery and address requests with an
//! address that is already taken.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use crate::protocol::{Action, Dest, Node};
use crate::relay::RelayRequest;
use crate::time::SimDuration;
use crate::wire::{CacheEntry, MacAddress, Message, MessageBody, SubnetId, MAX_ENTRIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AdversaryKind {
    /// Answers with real BSSIDs placed in the wrong subnets, plus an AP
    /// that does not exist.
    FakeApLiar,
    /// Answers with real BSSIDs on the wrong channels so the victim scans
    /// in vain.
    DosRedirector,
    /// Volunteers as assistant and hands out an address already in use.
    BadAmn,
    /// Registers relays over and over without ever authenticating.
    RelayAbuser,
    /// Forges answers in the name of another station. Needs an AP that does
    /// not authenticate its stations.
    Spoofer,
}

impl AdversaryKind {
    pub const ALL: [AdversaryKind; 5] = [
        AdversaryKind::FakeApLiar,
        AdversaryKind::DosRedirector,
        AdversaryKind::BadAmn,
        AdversaryKind::RelayAbuser,
        AdversaryKind::Spoofer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdversaryKind::FakeApLiar => "fake_ap_liar",
            AdversaryKind::DosRedirector => "dos_redirector",
            AdversaryKind::BadAmn => "bad_amn",
            AdversaryKind::RelayAbuser => "relay_abuser",
            AdversaryKind::Spoofer => "spoofer",
        }
    }

    /// Whether the profile acts on a timer.
    pub fn is_periodic(self) -> bool {
        self != AdversaryKind::BadAmn
    }

    /// Whether the profile forges INFORESP messages at a victim.
    pub fn forges_info(self) -> bool {
        matches!(self, AdversaryKind::FakeApLiar | AdversaryKind::DosRedirector | AdversaryKind::Spoofer)
    }
}

impl fmt::Display for AdversaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdversaryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AdversaryKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown adversary `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaliciousProfile {
    pub kind: AdversaryKind,
    /// Actions per second.
    pub rate: f64,
    /// Station whose INFOREQ the forged answers pretend to reply to.
    pub victim: Option<MacAddress>,
    /// Identity used as the sender of forged messages.
    pub spoof_as: Option<MacAddress>,
    /// RN named in abusive RELAY_REQs.
    pub rn: Option<MacAddress>,
    /// APs to lie about; empty means every AP.
    pub lie_about: Vec<MacAddress>,
}

impl MaliciousProfile {
    pub fn new(kind: AdversaryKind) -> Self {
        MaliciousProfile { kind, rate: 1.0, victim: None, spoof_as: None, rn: None, lie_about: Vec::new() }
    }

    pub fn period(&self) -> Option<SimDuration> {
        (self.kind.is_periodic() && self.rate > 0.0).then(|| SimDuration::from_millis_f64(1000.0 / self.rate))
    }
}

/// What the adversary can see when it acts.
pub struct ActContext<'a> {
    pub node: &'a Node,
    /// Every AP in the deployment, as it really is.
    pub truth: &'a [CacheEntry],
    /// All subnets, in declaration order.
    pub subnets: &'a [SubnetId],
    pub spoofing_allowed: bool,
    /// The node's current AP lets unauthenticated frames through.
    pub on_open_ap: bool,
    pub rn_ip: Option<Ipv4Addr>,
    pub cn_ip: Option<Ipv4Addr>,
    pub max_ttl: u8,
}

/// A BSSID that no AP in the deployment uses.
pub const PHANTOM_BSSID: MacAddress = MacAddress::new([0x02, 0x66, 0x61, 0x6b, 0x65, 0x01]);

fn other_subnet(subnets: &[SubnetId], real: SubnetId) -> SubnetId {
    subnets
        .iter()
        .copied()
        .find(|s| *s != real)
        .unwrap_or_else(|| SubnetId::from_network(Ipv4Addr::new(10, 254, 0, 0)))
}

fn shifted_channel(c: u32) -> u32 {
    (c + 4) % 14 + 1
}

/// The lies a profile tells about `truth`.
pub fn forged_entries(profile: &MaliciousProfile, truth: &[CacheEntry], subnets: &[SubnetId]) -> Vec<CacheEntry> {
    let targets = truth.iter().filter(|e| profile.lie_about.is_empty() || profile.lie_about.contains(&e.bssid));
    let mut out: Vec<CacheEntry> = match profile.kind {
        AdversaryKind::DosRedirector => targets.map(|e| CacheEntry { channel: shifted_channel(e.channel), ..*e }).collect(),
        AdversaryKind::FakeApLiar | AdversaryKind::Spoofer => {
            let mut v: Vec<CacheEntry> =
                targets.map(|e| CacheEntry { subnet_id: other_subnet(subnets, e.subnet_id), ..*e }).collect();
            if profile.kind == AdversaryKind::FakeApLiar {
                let phantom_subnet = subnets.first().copied().unwrap_or(SubnetId::from_network(Ipv4Addr::new(10, 254, 0, 0)));
                v.push(CacheEntry::new(PHANTOM_BSSID, 1, phantom_subnet));
            }
            v
        }
        AdversaryKind::BadAmn | AdversaryKind::RelayAbuser => Vec::new(),
    };
    out.truncate(MAX_ENTRIES);
    out
}

/// One periodic act.
pub fn act(profile: &MaliciousProfile, ctx: &ActContext<'_>) -> Vec<Action> {
    let me = ctx.node.mac;
    let Some(att) = ctx.node.attachment else { return Vec::new() };
    let multicast = |sender: MacAddress, body: MessageBody| Action::Send {
        dest: Dest::Multicast { ttl: ctx.max_ttl },
        msg: Message::new(sender, body),
    };
    match profile.kind {
        AdversaryKind::FakeApLiar | AdversaryKind::DosRedirector | AdversaryKind::Spoofer => {
            let Some(target) = profile.victim else { return Vec::new() };
            let sender = if profile.kind == AdversaryKind::Spoofer {
                if !(ctx.spoofing_allowed && ctx.on_open_ap) {
                    return Vec::new();
                }
                match profile.spoof_as {
                    Some(s) => s,
                    None => return Vec::new(),
                }
            } else {
                me
            };
            let entries = forged_entries(profile, ctx.truth, ctx.subnets);
            if entries.is_empty() {
                return Vec::new();
            }
            vec![multicast(sender, MessageBody::InfoResp { target, entries })]
        }
        AdversaryKind::RelayAbuser => {
            let (Some(rn_mac), Some(rn_ip)) = (profile.rn, ctx.rn_ip) else { return Vec::new() };
            let req = RelayRequest {
                mn_mac: me,
                mn_ip: att.ip,
                cn_ip: ctx.cn_ip.unwrap_or(att.router),
                rn_mac,
                rn_ip,
            };
            vec![multicast(me, req.to_body())]
        }
        AdversaryKind::BadAmn => Vec::new(),
    }
}

/// Reactive behaviour: the bad assistant answers discovery in its own
/// subnet and replies to address requests with its own, already leased,
/// address.
pub fn respond(profile: &MaliciousProfile, node: &Node, msg: &Message) -> Vec<Action> {
    if profile.kind != AdversaryKind::BadAmn || msg.sender == node.mac {
        return Vec::new();
    }
    let Some(att) = node.attachment else { return Vec::new() };
    match msg.body {
        MessageBody::AmnDiscover { subnet_id } if subnet_id == att.ap.subnet_id => vec![Action::Send {
            dest: Dest::Unicast(msg.sender),
            msg: Message::new(
                node.mac,
                MessageBody::AmnResp { amn_ip: att.ip, router_ip: att.router, ap: att.ap.bssid, can_relay: false },
            ),
        }],
        MessageBody::IpReq { rmn_mac } => vec![Action::Send {
            dest: Dest::Multicast { ttl: node.cfg.max_ttl },
            msg: Message::new(node.mac, MessageBody::IpResp { rmn_mac, new_ip: att.ip, router_ip: att.router }),
        }],
        _ => Vec::new(),
    }
}
