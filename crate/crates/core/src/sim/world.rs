//! The event loop.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::config::{Baseline, Direction, Prepare, ScenarioConfig};
use super::delay::DelaySampler;
use super::medium::{medium_visibility, Station, Transmission};
use super::queue::EventQueue;
use super::session::{payload_for, Endpoint, SessionController, StreamLedger};
use super::{
    topology_fingerprint, InfoRespEvent, Metrics, Mode, ProxyExchange, RelayDecision, RunReport, StreamSummary,
};
use crate::adversary::{self, ActContext, AdversaryKind, MaliciousProfile};
use crate::cache::SubnetLease;
use crate::dhcp::{self, DhcpError, DhcpExchange, DhcpServer, Pool};
use crate::protocol::{
    begin_handoff, finish_handoff, Action, Attachment, Component, Dest, FinishContext, HandoffOutcome,
    HandoffRecord, L2Phase, Node, ProtocolConfig, SecurityEvent, Timer,
};
use crate::relay::{
    port_admits, AuthPhase, AuthSession, AuthTransition, Frame, FrameClass, RelayRequest, RelayTable, RequesterStatus,
};
use crate::security::BadLease;
use crate::time::{SimDuration, SimTime};
use crate::wire::{FrameHeader, MacAddress, Message, MessageBody, SubnetId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("node {node}: {message}")]
    Setup { node: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Hop {
    /// Correspondent to the MN's address through the infrastructure.
    Direct { ip: Ipv4Addr },
    CnToRn { rn: usize },
    RnToMn { rn: usize },
    MnToRn { rn: usize },
    ToCn,
}

#[derive(Debug, Clone)]
enum Ev {
    Start { node: usize },
    Deliver { to: usize, msg: Message, ttl: Option<u8>, status: Option<RequesterStatus> },
    Timer { node: usize, timer: Timer },
    ProxyDone { amn: usize, rmn: MacAddress, result: Result<SubnetLease, DhcpError> },
    Move { node: usize, ap: usize },
    Signal { node: usize, ap: usize, dbm: i32 },
    Associated { node: usize, hid: u64 },
    Complete { node: usize, hid: u64 },
    AuthStep { node: usize, hid: u64 },
    Tick { stream: usize },
    Arrive { stream: usize, seq: u64, hop: Hop, payload: Vec<u8> },
    Redirect { mn: MacAddress, targets: Vec<Endpoint> },
    FanOut { mn: MacAddress, rn: MacAddress },
    RelayCheck { rn: usize },
    Act { node: usize },
    End,
}

struct Pending {
    hid: u64,
    target: usize,
    l2: L2Phase,
    outcome: Option<HandoffOutcome>,
}

struct NodeRt {
    name: String,
    node: Node,
    profile: Option<MaliciousProfile>,
    prepare: Prepare,
    ap: Option<usize>,
    auth: Option<AuthSession>,
    configured: bool,
    direct_ready_at: Option<SimTime>,
    handoff: Option<Pending>,
    /// RN carrying this node's traffic while it authenticates.
    relay_via: Option<usize>,
    relay: Option<RelayTable>,
    /// Sends issued while the node had no usable connection.
    deferred: Vec<Action>,
    started_at: Option<SimTime>,
}

impl NodeRt {
    fn honest(&self) -> bool {
        self.profile.is_none()
    }

    fn authorized(&self) -> bool {
        self.auth.as_ref().is_some_and(|a| a.phase == AuthPhase::Authenticated)
    }

    fn connected(&self) -> bool {
        self.ap.is_some() && self.configured && self.handoff.is_none() && self.authorized()
    }
}

struct StreamRt {
    node: usize,
    direction: Direction,
    cn_ip: Ipv4Addr,
    interval: SimDuration,
    payload: usize,
    end: SimTime,
    ledger: StreamLedger,
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    mode: Mode,
    relay_allowed: bool,
    queue: EventQueue<Ev>,
    delays: DelaySampler,
    rng: ChaCha8Rng,
    server: DhcpServer,
    nodes: Vec<NodeRt>,
    by_mac: BTreeMap<MacAddress, usize>,
    streams: Vec<StreamRt>,
    sessions: SessionController,
    metrics: Metrics,
    records: Vec<(HandoffRecord, SimTime)>,
    trace: Vec<String>,
    security: Vec<String>,
    hid: u64,
    xid: u32,
    end: SimTime,
}

/// Runs `cfg` once.
pub fn run(cfg: &ScenarioConfig, mode: Mode, seed: u64) -> Result<RunReport, RunError> {
    let mut w = World::new(cfg, mode, seed)?;
    w.schedule_script();
    while let Some((now, ev)) = w.queue.pop() {
        if matches!(ev, Ev::End) {
            break;
        }
        w.handle(now, ev);
    }
    let mut report = w.finish();
    report.seed = seed;
    Ok(report)
}

fn describe(body: &MessageBody) -> String {
    match body {
        MessageBody::InfoReq { entries } => format!("entries={}", entries.len()),
        MessageBody::InfoResp { target, entries } => format!("target={target} entries={}", entries.len()),
        MessageBody::AmnDiscover { subnet_id } => format!("subnet={subnet_id}"),
        MessageBody::AmnResp { amn_ip, ap, can_relay, .. } => format!("amn_ip={amn_ip} ap={ap} can_relay={can_relay}"),
        MessageBody::IpReq { rmn_mac } => format!("rmn={rmn_mac}"),
        MessageBody::IpResp { rmn_mac, new_ip, .. } => format!("rmn={rmn_mac} ip={new_ip}"),
        MessageBody::RelayReq { mn_mac, rn_mac, .. } => format!("mn={mn_mac} rn={rn_mac}"),
        MessageBody::InfoAlert { suspect } => format!("suspect={suspect}"),
    }
}

impl<'a> World<'a> {
    fn new(cfg: &'a ScenarioConfig, mode: Mode, seed: u64) -> Result<Self, RunError> {
        let legacy_all = mode == Mode::Legacy && cfg.baseline == Baseline::Legacy;
        let relay_allowed = mode == Mode::Cr;
        let delay_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);

        let pools: Vec<Pool> = cfg
            .subnets
            .iter()
            .map(|s| Pool {
                subnet: s.id,
                prefix: cfg.prefix,
                router: s.router,
                first: s.pool_first,
                last: s.pool_last,
                lease_duration: s.lease,
            })
            .collect();
        let lease_duration = cfg.subnets.iter().map(|s| s.lease).min().unwrap_or(dhcp::DEFAULT_LEASE);
        let mut server = DhcpServer::new(pools);

        let mut nodes = Vec::with_capacity(cfg.nodes.len());
        let mut by_mac = BTreeMap::new();
        for (i, spec) in cfg.nodes.iter().enumerate() {
            let pcfg = ProtocolConfig {
                cr_enabled: spec.cr && !legacy_all,
                can_assist: spec.assist,
                can_relay: spec.relay && relay_allowed,
                harvest_inforeq: spec.harvest,
                window: cfg.window,
                request_deadline: cfg.request_deadline,
                max_ttl: cfg.max_ttl,
                amn_timeout: cfg.amn_timeout,
                lease_duration,
                lease_margin: cfg.lease_margin,
                prefix: cfg.prefix,
                alert_threshold: cfg.threshold,
            };
            let setup_err = |message: String| RunError::Setup { node: spec.name.clone(), message };
            let mut node = Node::new(spec.mac, pcfg).map_err(|e| setup_err(e.to_string()))?;
            if let Some(c) = &spec.cache {
                node.cache = c.clone();
            }
            for &k in &spec.knows {
                node.cache.observe(cfg.ap_entry(k), None, SimTime::ZERO);
            }
            let entry = cfg.ap_entry(spec.ap);
            let exchange = DhcpExchange::direct(spec.mac, entry.subnet_id, i as u32 + 1);
            let (lease, _) = dhcp::run_exchange(&mut server, exchange, SimTime::ZERO, SimDuration::ZERO)
                .map_err(|e| setup_err(format!("initial address: {e}")))?;
            node.leases.insert(lease);
            node.attach(Attachment { ap: entry, ip: lease.leased_ip, router: lease.router_ip }, None, SimTime::ZERO);
            let relay = (spec.relay && relay_allowed && spec.malicious.is_none())
                .then(|| RelayTable::new(spec.mac, cfg.relay));
            let auth = AuthSession::start(spec.mac, crate::relay::AuthMechanism::Open, SimTime::ZERO, SimDuration::ZERO, SimDuration::ZERO, false);
            by_mac.insert(spec.mac, i);
            nodes.push(NodeRt {
                name: spec.name.clone(),
                node,
                profile: spec.malicious.clone(),
                prepare: spec.prepare,
                ap: Some(spec.ap),
                auth: Some(auth),
                configured: true,
                direct_ready_at: Some(SimTime::ZERO),
                handoff: None,
                relay_via: None,
                relay,
                deferred: Vec::new(),
                started_at: None,
            });
        }

        let end = cfg.end_time();
        let mut sessions = SessionController::new();
        let streams = cfg
            .streams
            .iter()
            .map(|s| {
                if s.direction == Direction::Down {
                    let ip = nodes[s.node].node.attachment.map(|a| a.ip).unwrap_or(Ipv4Addr::UNSPECIFIED);
                    sessions.open(cfg.nodes[s.node].mac, Endpoint::Direct { ip });
                }
                StreamRt {
                    node: s.node,
                    direction: s.direction,
                    cn_ip: s.cn_ip,
                    interval: s.interval,
                    payload: s.payload,
                    end: s.end.unwrap_or(end).min(end),
                    ledger: StreamLedger::new(),
                }
            })
            .collect();

        Ok(World {
            cfg,
            mode,
            relay_allowed,
            queue: EventQueue::new(),
            delays: DelaySampler::new(cfg.delays.clone(), delay_rng),
            rng,
            server,
            nodes,
            by_mac,
            streams,
            sessions,
            metrics: Metrics::default(),
            records: Vec::new(),
            trace: Vec::new(),
            security: Vec::new(),
            hid: 0,
            xid: 0x1000,
            end,
        })
    }

    fn schedule_script(&mut self) {
        for i in 0..self.nodes.len() {
            self.queue.push(SimTime::ZERO, Ev::Start { node: i });
            if let Some(period) = self.nodes[i].profile.as_ref().and_then(|p| p.period()) {
                self.queue.push(SimTime::ZERO + period, Ev::Act { node: i });
            }
        }
        for m in &self.cfg.moves {
            if self.nodes[m.node].honest() {
                *self.metrics.scripted_moves.entry(self.cfg.nodes[m.node].mac).or_default() += 1;
            }
            self.queue.push(m.at, Ev::Move { node: m.node, ap: m.ap });
        }
        for s in &self.cfg.signals {
            self.queue.push(s.at, Ev::Signal { node: s.node, ap: s.ap, dbm: s.dbm });
        }
        for (k, s) in self.streams.iter().enumerate() {
            let start = self.cfg.streams[k].start;
            if start < s.end {
                self.queue.push(start, Ev::Tick { stream: k });
            }
        }
        self.queue.push(self.end, Ev::End);
    }

    fn log(&mut self, now: SimTime, node: usize, what: impl AsRef<str>) {
        let line = format!("{now} {} {}", self.nodes[node].name, what.as_ref());
        self.trace.push(line);
    }

    fn name_of(&self, mac: &MacAddress) -> String {
        self.by_mac.get(mac).map_or_else(|| mac.to_string(), |&i| self.nodes[i].name.clone())
    }

    fn handle(&mut self, now: SimTime, ev: Ev) {
        match ev {
            Ev::Start { node } => self.on_start(node, now),
            Ev::Deliver { to, msg, ttl, status } => self.on_deliver(to, msg, ttl, status, now),
            Ev::Timer { node, timer } => {
                if self.nodes[node].honest() {
                    let acts = self.nodes[node].node.on_timer(timer, now);
                    self.apply(node, acts, now);
                }
            }
            Ev::ProxyDone { amn, rmn, result } => {
                let acts = self.nodes[amn].node.on_proxy_lease(rmn, result);
                self.apply(amn, acts, now);
            }
            Ev::Move { node, ap } => self.start_handoff(node, ap, now),
            Ev::Signal { node, ap, dbm } => self.on_signal(node, ap, dbm, now),
            Ev::Associated { node, hid } => self.on_associated(node, hid, now),
            Ev::Complete { node, hid } => self.on_complete(node, hid, now),
            Ev::AuthStep { node, hid } => self.on_auth_step(node, hid, now),
            Ev::Tick { stream } => self.on_tick(stream, now),
            Ev::Arrive { stream, seq, hop, payload } => self.on_arrive(stream, seq, hop, payload, now),
            Ev::Redirect { mn, targets } => {
                if self.sessions.session_redirect(mn, &targets).is_ok() {
                    let node = self.by_mac[&mn];
                    self.log(now, node, format!("session-redirect targets={targets:?}"));
                }
            }
            Ev::FanOut { mn, rn } => {
                if self.sessions.fan_out(mn, Endpoint::ViaRelay { rn }).is_ok() {
                    let node = self.by_mac[&mn];
                    self.log(now, node, format!("session-fan-out rn={}", self.name_of(&rn)));
                }
            }
            Ev::RelayCheck { rn } => self.on_relay_check(rn, now),
            Ev::Act { node } => self.on_act(node, now),
            Ev::End => {}
        }
    }

    fn on_start(&mut self, i: usize, now: SimTime) {
        if !self.nodes[i].honest() {
            return;
        }
        let rt = &mut self.nodes[i];
        rt.started_at = Some(now);
        let mut acts = Vec::new();
        if rt.node.needs_info() {
            acts.extend(rt.node.request_info(now));
        }
        if rt.prepare == Prepare::Eager {
            acts.extend(rt.node.prepare_l3(now));
        }
        self.apply(i, acts, now);
    }

    fn stations(&self) -> Vec<Station> {
        self.nodes
            .iter()
            .map(|rt| Station {
                mac: rt.node.mac,
                channel: if rt.handoff.as_ref().is_some_and(|p| p.outcome.is_none()) {
                    None
                } else {
                    rt.ap.map(|a| self.cfg.aps[a].channel)
                },
                hop: rt.ap.map(|a| self.cfg.aps[a].subnet),
                connected: rt.connected(),
            })
            .collect()
    }

    fn requester_status(&self, i: usize) -> RequesterStatus {
        let rt = &self.nodes[i];
        RequesterStatus {
            associated_at: rt.ap.filter(|_| rt.handoff.is_none()).map(|a| self.cfg.aps[a].bssid),
            authenticated: rt.authorized(),
            marked_malicious: false,
        }
    }

    fn apply(&mut self, i: usize, actions: Vec<Action>, now: SimTime) {
        for a in actions {
            match a {
                Action::Send { dest, msg } => {
                    if !self.nodes[i].connected() {
                        self.nodes[i].deferred.push(Action::Send { dest, msg });
                        continue;
                    }
                    self.send(i, dest, msg, now);
                }
                Action::Arm { at, timer } => {
                    if let Timer::Suppression { .. } = timer {
                        self.metrics.suppression_draws.push((self.nodes[i].node.mac, at));
                    }
                    self.queue.push(at, Ev::Timer { node: i, timer });
                }
                Action::ProxyAcquire { rmn } => self.proxy_acquire(i, rmn, now),
                Action::Security(ev) => self.on_security(i, ev, now),
                Action::Note(s) => self.log(now, i, s),
            }
        }
    }

    fn send(&mut self, i: usize, dest: Dest, msg: Message, now: SimTime) {
        let kind = msg.body.kind_name();
        *self.metrics.messages.entry(kind).or_default() += 1;
        let latency = self.cfg.delays.link_latency;
        let status = matches!(msg.body, MessageBody::RelayReq { .. }).then(|| self.requester_status(i));
        let dest_text = match dest {
            Dest::Multicast { ttl } => format!("multicast ttl={ttl}"),
            Dest::Unicast(to) => format!("to={}", self.name_of(&to)),
        };
        self.log(now, i, format!("send {kind} {dest_text} {}", describe(&msg.body)));
        if let MessageBody::InfoResp { target, entries } = &msg.body {
            self.metrics.info_responses.push(InfoRespEvent {
                at: now,
                sender: msg.sender,
                target: *target,
                entries: entries.iter().map(|e| e.bssid).collect(),
            });
        }
        match dest {
            Dest::Multicast { ttl } => {
                let hop = self.cfg.aps[self.nodes[i].ap.expect("connected")].subnet;
                let stations = self.stations();
                let me = self.nodes[i].node.mac;
                let vis = medium_visibility(&Transmission::Multicast { sender: me, hop, ttl }, &stations);
                for mac in vis.stations {
                    let to = self.by_mac[&mac];
                    self.queue.push(now + latency, Ev::Deliver { to, msg: msg.clone(), ttl: Some(ttl), status });
                }
                if let MessageBody::RelayReq { mn_mac, cn_ip, rn_mac, .. } = msg.body {
                    let subscribed = self
                        .streams
                        .iter()
                        .any(|s| s.direction == Direction::Down && s.cn_ip == cn_ip && self.nodes[s.node].node.mac == mn_mac);
                    if subscribed {
                        let at = now + latency + self.cfg.delays.redirect_latency;
                        self.queue.push(at, Ev::FanOut { mn: mn_mac, rn: rn_mac });
                    }
                }
            }
            Dest::Unicast(to_mac) => match self.by_mac.get(&to_mac) {
                Some(&to) => self.queue.push(now + latency, Ev::Deliver { to, msg, ttl: None, status }),
                None => self.metrics.sends_dropped += 1,
            },
        }
    }

    fn proxy_acquire(&mut self, i: usize, rmn: MacAddress, now: SimTime) {
        let Some(subnet) = self.nodes[i].node.subnet() else { return };
        let d = crate::protocol::DelaySource::sample(&mut self.delays, Component::Dhcp);
        self.xid = self.xid.wrapping_add(1);
        let amn = self.nodes[i].node.mac;
        let result = dhcp::amn_acquire(&mut self.server, amn, rmn, subnet, self.xid, now, d);
        let (broadcast, ok) = match &result {
            Ok((_, transcript)) => (transcript.iter().all(|(_, m)| m.broadcast), true),
            Err(_) => (true, false),
        };
        self.metrics.proxy_exchanges.push(ProxyExchange { at: now, amn, rmn, duration: d, broadcast, ok });
        self.log(now, i, format!("proxy-dhcp rmn={} subnet={subnet} duration={d}", self.name_of(&rmn)));
        self.queue.push(now + d, Ev::ProxyDone { amn: i, rmn, result: result.map(|(l, _)| l) });
    }

    fn on_security(&mut self, i: usize, ev: SecurityEvent, now: SimTime) {
        let me = self.nodes[i].node.mac;
        let text = match &ev {
            SecurityEvent::AlertSent { suspect } => format!("alert-sent suspect={}", self.name_of(suspect)),
            SecurityEvent::AlertReceived { suspect, reporter } => {
                format!("alert-received suspect={} reporter={}", self.name_of(suspect), self.name_of(reporter))
            }
            SecurityEvent::Marked { suspect } => {
                self.metrics.marked.entry((me, *suspect)).or_insert(now);
                format!("marked suspect={}", self.name_of(suspect))
            }
            SecurityEvent::Conflict(c) => format!(
                "cache-conflict bssid={} from={} old=ch{}/{} new=ch{}/{}",
                c.incoming.bssid,
                c.incoming_source.map_or_else(|| "-".into(), |m| self.name_of(&m)),
                c.previous.channel,
                c.previous.subnet_id,
                c.incoming.channel,
                c.incoming.subnet_id
            ),
            SecurityEvent::BadLease { amn, ip, reason } => {
                format!("bad-lease amn={} ip={ip} reason={reason:?}", self.name_of(amn))
            }
            SecurityEvent::RelayRefused { mn, reason } => format!("relay-refused mn={} reason={reason:?}", self.name_of(mn)),
            SecurityEvent::WrongEntry { bssid, source } => format!(
                "wrong-entry bssid={bssid} source={}",
                source.map_or_else(|| "-".into(), |m| self.name_of(&m))
            ),
        };
        let line = format!("{now} {} {text}", self.nodes[i].name);
        self.security.push(line);
    }

    fn on_deliver(&mut self, to: usize, msg: Message, ttl: Option<u8>, status: Option<RequesterStatus>, now: SimTime) {
        if !self.nodes[to].connected() {
            return;
        }
        if let Some(profile) = self.nodes[to].profile.clone() {
            let acts = adversary::respond(&profile, &self.nodes[to].node, &msg);
            self.apply(to, acts, now);
            return;
        }
        if self.nodes[to].node.ledger.is_malicious(&msg.sender) {
            self.metrics.ignored_from_marked += 1;
            return;
        }
        if let (MessageBody::RelayReq { .. }, Some(status)) = (&msg.body, status) {
            self.on_relay_req(to, &msg, ttl, status, now);
        }
        let rt = &mut self.nodes[to];
        let mut acts = rt.node.on_message(&msg, ttl, now, &mut self.rng);
        if rt.prepare == Prepare::Eager {
            acts.extend(rt.node.prepare_l3(now));
        }
        self.apply(to, acts, now);
    }

    fn on_relay_req(&mut self, rn: usize, msg: &Message, ttl: Option<u8>, mut status: RequesterStatus, now: SimTime) {
        let Some(req) = RelayRequest::from_body(&msg.body) else { return };
        if req.rn_mac != self.nodes[rn].node.mac || req.mn_mac != msg.sender {
            return;
        }
        status.marked_malicious = self.nodes[rn].node.ledger.is_malicious(&req.mn_mac);
        let Some(table) = self.nodes[rn].relay.as_mut() else { return };
        let result = table.on_relay_req(&req, status, now).map(|r| r.expires_at);
        self.metrics.relay_decisions.push(RelayDecision { at: now, rn: req.rn_mac, mn: req.mn_mac, refused: result.err() });
        match result {
            Ok(expires_at) => {
                self.log(now, rn, format!("relay-registered mn={} expires={expires_at}", self.name_of(&req.mn_mac)));
                self.queue.push(expires_at, Ev::RelayCheck { rn });
            }
            Err(reason) => {
                let mut acts = vec![Action::Security(SecurityEvent::RelayRefused { mn: req.mn_mac, reason })];
                if reason == crate::relay::RelayRefusal::Cooldown {
                    let ttl = ttl.unwrap_or(self.cfg.max_ttl);
                    acts.extend(self.nodes[rn].node.raise_alert(req.mn_mac, ttl));
                }
                self.apply(rn, acts, now);
            }
        }
    }

    fn on_signal(&mut self, i: usize, ap: usize, dbm: i32, now: SimTime) {
        let bssid = self.cfg.aps[ap].bssid;
        let rt = &mut self.nodes[i];
        rt.node.cache.update_signal(&bssid, dbm, now);
        if rt.prepare == Prepare::Signal && rt.ap == Some(ap) && rt.handoff.is_none() && dbm < self.cfg.prepare_dbm {
            let acts = rt.node.prepare_l3(now);
            self.apply(i, acts, now);
        }
    }

    fn down_stream_of(&self, i: usize) -> Option<&StreamRt> {
        self.streams.iter().find(|s| s.node == i && s.direction == Direction::Down)
    }

    fn start_handoff(&mut self, i: usize, ap: usize, now: SimTime) {
        let rt = &self.nodes[i];
        if rt.handoff.is_some() || rt.ap == Some(ap) || rt.ap.is_none() {
            self.metrics.skipped_moves += 1;
            self.log(now, i, format!("move-skipped ap={}", self.cfg.aps[ap].name));
            return;
        }
        let truth = self.cfg.ap_entry(ap);
        let mech = self.cfg.aps[ap].auth;
        if self.relay_allowed && mech.requires_8021x() && rt.honest() && rt.connected() {
            if let Some(cn_ip) = self.down_stream_of(i).map(|s| s.cn_ip) {
                let rt = &mut self.nodes[i];
                let current = rt.node.attachment.map(|a| a.ip).unwrap_or(Ipv4Addr::UNSPECIFIED);
                let mn_ip = rt.node.leases.valid(&truth.subnet_id, now).map_or(current, |l| l.leased_ip);
                if let Some((req, acts)) = rt.node.request_relay(&truth, mn_ip, cn_ip) {
                    let rn_name = self.name_of(&req.rn_mac);
                    self.log(now, i, format!("relay-request rn={rn_name}"));
                    self.apply(i, acts, now);
                }
            }
        }
        let rt = &mut self.nodes[i];
        let l2 = begin_handoff(&rt.node, truth, &mut self.delays, now);
        rt.node.detach();
        rt.ap = None;
        rt.auth = None;
        rt.configured = false;
        rt.direct_ready_at = None;
        rt.relay_via = None;
        self.hid += 1;
        let hid = self.hid;
        let at = l2.associated_at;
        let how = if l2.used_cache {
            "cache"
        } else if l2.fallback {
            "wrong-channel"
        } else if rt.node.cfg.cr_enabled {
            "selective-scan"
        } else {
            "full-scan"
        };
        rt.handoff = Some(Pending { hid, target: ap, l2, outcome: None });
        self.log(now, i, format!("handoff-start to={} l2={how}", self.cfg.aps[ap].name));
        self.queue.push(at, Ev::Associated { node: i, hid });
    }

    fn live_rn_for(&self, mn: usize, ap: usize, now: SimTime) -> Option<usize> {
        let mac = self.nodes[mn].node.mac;
        self.nodes.iter().position(|rt| {
            rt.ap == Some(ap)
                && rt.connected()
                && rt.relay.as_ref().and_then(|t| t.registration(&mac)).is_some_and(|r| r.is_live(now))
        })
    }

    fn on_associated(&mut self, i: usize, hid: u64, now: SimTime) {
        let Some(p) = self.nodes[i].handoff.as_ref().filter(|p| p.hid == hid) else { return };
        let target = p.target;
        let l2 = p.l2.clone();
        let mech = self.cfg.aps[target].auth;
        let rn = if mech.requires_8021x() { self.live_rn_for(i, target, now) } else { None };
        let ctx = FinishContext { mechanism: mech, relay_active: rn.is_some() };
        self.nodes[i].ap = Some(target);
        let result = finish_handoff(&mut self.nodes[i].node, &l2, ctx, &mut self.server, &mut self.delays);
        let out = match result {
            Ok(out) => out,
            Err(e) => {
                self.metrics.failed_handoffs += 1;
                self.nodes[i].handoff = None;
                self.log(now, i, format!("handoff-failed error={e}"));
                return;
            }
        };
        let total_auth = out.record.auth_time;
        let cred = SimDuration::from_millis_f64(total_auth.as_millis_f64() * self.cfg.delays.auth_split);
        let will_fail = self.nodes[i].profile.as_ref().is_some_and(|p| p.kind == AdversaryKind::RelayAbuser);
        let mac = self.nodes[i].node.mac;
        let session = AuthSession::start(mac, mech, now, cred, total_auth - cred, will_fail);
        if mech.requires_8021x() {
            self.queue.push(session.credentials_done_at, Ev::AuthStep { node: i, hid });
            self.queue.push(session.completes_at, Ev::AuthStep { node: i, hid });
        }
        let complete_at = out.complete_at;
        let rt = &mut self.nodes[i];
        rt.auth = Some(session);
        rt.relay_via = if out.record.used_relay { rn } else { None };
        let via = rt.relay_via.map(|r| format!(" relay={}", self.nodes[r].name)).unwrap_or_default();
        self.nodes[i].handoff.as_mut().expect("checked").outcome = Some(out);
        self.log(now, i, format!("associated ap={} auth={mech}{via}", self.cfg.aps[target].name));
        self.queue.push(complete_at, Ev::Complete { node: i, hid });
    }

    fn on_complete(&mut self, i: usize, hid: u64, now: SimTime) {
        let Some(p) = self.nodes[i].handoff.take_if(|p| p.hid == hid) else { return };
        let out = p.outcome.expect("associated before completion");
        let rt = &mut self.nodes[i];
        rt.configured = true;
        let signal = rt.node.cache.get(&out.attachment.ap.bssid).and_then(|c| c.signal_dbm);
        rt.node.attach(out.attachment, signal, now);
        let mut rec = out.record.clone();
        rec.lost_pkts = 0;
        let honest = rt.honest();
        let mac = rt.node.mac;
        if honest {
            self.records.push((rec.clone(), p.l2.started_at));
            *self.metrics.completed_handoffs.entry(mac).or_default() += 1;
        }
        self.log(now, i, format!("handoff-complete {rec} relay={} cache={} fallback={}", rec.used_relay, rec.used_cache, rec.legacy_fallback));

        let mut acts = Vec::new();
        if let Some((bssid, source)) = p.l2.wrong_entry {
            acts.push(Action::Security(SecurityEvent::WrongEntry { bssid, source }));
            if let Some(src) = source {
                acts.extend(self.nodes[i].node.raise_alert(src, self.cfg.max_ttl));
            }
        }
        if let Some((amn, ip)) = out.bad_lease {
            acts.extend(self.nodes[i].node.on_bad_ip(amn, ip, BadLease::AlreadyLeased, self.cfg.max_ttl, now));
        }
        self.apply(i, acts, now);

        if self.nodes[i].authorized() {
            self.on_connected(i, now);
        } else if let Some(rn) = self.nodes[i].relay_via {
            let rn_mac = self.nodes[rn].node.mac;
            self.redirect(i, vec![Endpoint::ViaRelay { rn: rn_mac }], now);
        }
    }

    fn redirect(&mut self, i: usize, targets: Vec<Endpoint>, now: SimTime) {
        if self.down_stream_of(i).is_none() {
            return;
        }
        let mn = self.nodes[i].node.mac;
        self.queue.push(now + self.cfg.delays.redirect_latency, Ev::Redirect { mn, targets });
    }

    /// The node just gained a working direct path: open it for traffic,
    /// flush anything queued, and resume cooperation.
    fn on_connected(&mut self, i: usize, now: SimTime) {
        let ap = self.nodes[i].ap.expect("associated");
        let bridging = self.cfg.aps[ap].bridging.unwrap_or(self.cfg.delays.bridging);
        let rt = &mut self.nodes[i];
        rt.direct_ready_at = Some(now + bridging);
        let ip = rt.node.attachment.expect("configured").ip;
        let mut targets = vec![Endpoint::Direct { ip }];
        if let Some(rn) = rt.relay_via {
            targets.push(Endpoint::ViaRelay { rn: self.nodes[rn].node.mac });
        }
        self.redirect(i, targets, now);
        let deferred = std::mem::take(&mut self.nodes[i].deferred);
        self.apply(i, deferred, now);
        if !self.nodes[i].honest() {
            return;
        }
        let rt = &mut self.nodes[i];
        let mut acts = Vec::new();
        if rt.node.needs_info() {
            acts.extend(rt.node.request_info(now));
        }
        if rt.prepare == Prepare::Eager {
            acts.extend(rt.node.prepare_l3(now));
        }
        self.apply(i, acts, now);
    }

    fn on_auth_step(&mut self, i: usize, hid: u64, now: SimTime) {
        if self.hid_of(i) != Some(hid) && self.nodes[i].handoff.is_some() {
            return;
        }
        let Some(session) = self.nodes[i].auth.as_mut() else { return };
        let Some(step) = session.auth_progress(now) else { return };
        let mech = session.mechanism;
        match step {
            AuthTransition::CredentialsExchanged => self.log(now, i, format!("auth-credentials-done mech={mech}")),
            AuthTransition::Failed => self.log(now, i, format!("auth-failed mech={mech}")),
            AuthTransition::Authenticated => {
                self.log(now, i, format!("auth-done mech={mech}"));
                if self.nodes[i].configured && self.nodes[i].handoff.is_none() {
                    self.on_connected(i, now);
                }
            }
        }
    }

    fn hid_of(&self, i: usize) -> Option<u64> {
        self.nodes[i].handoff.as_ref().map(|p| p.hid)
    }

    fn on_tick(&mut self, k: usize, now: SimTime) {
        let s = &self.streams[k];
        let (i, interval, size, end) = (s.node, s.interval, s.payload, s.end);
        let seq = s.ledger.next_seq();
        let latency = self.cfg.delays.link_latency;
        let payload = payload_for(seq, size);
        let mut hops = Vec::new();
        match s.direction {
            Direction::Down => {
                let mac = self.nodes[i].node.mac;
                for t in self.sessions.targets(&mac).unwrap_or(&[]) {
                    hops.push(match *t {
                        Endpoint::Direct { ip } => Hop::Direct { ip },
                        Endpoint::ViaRelay { rn } => Hop::CnToRn { rn: self.by_mac[&rn] },
                    });
                }
            }
            Direction::Up => {
                let rt = &self.nodes[i];
                let port_open = rt.ap.is_some_and(|a| port_admits(self.cfg.aps[a].auth, rt.auth.as_ref(), FrameClass::Data));
                if rt.connected() && port_open {
                    hops.push(Hop::ToCn);
                } else if let Some(rn) = rt.relay_via.filter(|&rn| rt.configured && rt.ap == self.nodes[rn].ap) {
                    hops.push(Hop::MnToRn { rn });
                } else if rt.ap.is_some() && rt.configured && !port_open {
                    self.metrics.closed_port_drops += 1;
                }
            }
        }
        let ledger = &mut self.streams[k].ledger;
        ledger.sent(seq, now, hops.len() as u32);
        for hop in hops {
            self.queue.push(now + latency, Ev::Arrive { stream: k, seq, hop, payload: payload.clone() });
        }
        let next = now + interval;
        if next < end {
            self.queue.push(next, Ev::Tick { stream: k });
        }
    }

    fn drop_copy(&mut self, k: usize, seq: u64) {
        self.streams[k].ledger.dropped(seq);
    }

    fn on_arrive(&mut self, k: usize, seq: u64, hop: Hop, payload: Vec<u8>, now: SimTime) {
        let mn = self.streams[k].node;
        let latency = self.cfg.delays.link_latency;
        match hop {
            Hop::Direct { ip } => {
                let rt = &self.nodes[mn];
                let here = rt.configured && rt.handoff.is_none() && rt.node.attachment.is_some_and(|a| a.ip == ip);
                let mech = rt.ap.map(|a| self.cfg.aps[a].auth);
                let admitted = mech.is_some_and(|m| port_admits(m, rt.auth.as_ref(), FrameClass::Data));
                let bridged = rt.direct_ready_at.is_some_and(|t| t <= now);
                if here && !admitted {
                    self.metrics.closed_port_drops += 1;
                }
                if here && admitted && bridged {
                    if rt.auth.as_ref().is_some_and(|a| a.phase == AuthPhase::EapolInProgress) {
                        self.metrics.closed_port_leaks += 1;
                    }
                    self.deliver(k, seq, &payload);
                    if let Some(rn) = self.nodes[mn].relay_via.take() {
                        self.log(now, mn, format!("direct-path-up relay={} released", self.nodes[rn].name));
                        self.redirect(mn, vec![Endpoint::Direct { ip }], now);
                    }
                } else {
                    self.drop_copy(k, seq);
                }
            }
            Hop::CnToRn { rn } => {
                let mn_mac = self.nodes[mn].node.mac;
                let cn_ip = self.streams[k].cn_ip;
                let Some(rn_ap) = self.nodes[rn].ap.filter(|_| self.nodes[rn].connected()) else {
                    return self.drop_copy(k, seq);
                };
                let rn_bssid = self.cfg.aps[rn_ap].bssid;
                let Some(table) = self.nodes[rn].relay.as_mut() else { return self.drop_copy(k, seq) };
                match table.relay_downlink(mn_mac, cn_ip, &payload, rn_bssid, now) {
                    Ok(frame) => {
                        if table.registration(&mn_mac).is_some_and(|r| now >= r.expires_at) {
                            self.metrics.relayed_after_expiry += 1;
                        }
                        let idle = table.config.idle_timeout;
                        self.queue.push(now + idle, Ev::RelayCheck { rn });
                        let channel = self.cfg.aps[rn_ap].channel;
                        let vis = medium_visibility(&Transmission::Frame { header: frame.header, channel }, &self.stations());
                        if vis.stations.contains(&mn_mac) {
                            self.queue.push(now + latency, Ev::Arrive { stream: k, seq, hop: Hop::RnToMn { rn }, payload: frame.payload });
                        } else {
                            self.drop_copy(k, seq);
                        }
                    }
                    Err(_) => {
                        self.metrics.relay_drops += 1;
                        self.drop_copy(k, seq);
                    }
                }
            }
            Hop::RnToMn { rn } => {
                let rt = &self.nodes[mn];
                if rt.configured && rt.handoff.is_none() && rt.ap.is_some() && rt.ap == self.nodes[rn].ap {
                    self.deliver(k, seq, &payload);
                } else {
                    self.drop_copy(k, seq);
                }
            }
            Hop::MnToRn { rn } => {
                let Some(rn_ap) = self.nodes[rn].ap.filter(|_| self.nodes[rn].connected()) else {
                    return self.drop_copy(k, seq);
                };
                let rn_bssid = self.cfg.aps[rn_ap].bssid;
                let mn_mac = self.nodes[mn].node.mac;
                let rn_mac = self.nodes[rn].node.mac;
                let frame = Frame { header: FrameHeader::ad_hoc(rn_mac, mn_mac, rn_bssid), class: FrameClass::Data, payload };
                let Some(table) = self.nodes[rn].relay.as_mut() else { return self.drop_copy(k, seq) };
                match table.relay_uplink(&frame, rn_bssid, now) {
                    Ok(out) => {
                        if table.registration(&mn_mac).is_some_and(|r| now >= r.expires_at) {
                            self.metrics.relayed_after_expiry += 1;
                        }
                        let idle = table.config.idle_timeout;
                        self.queue.push(now + idle, Ev::RelayCheck { rn });
                        self.queue.push(now + latency, Ev::Arrive { stream: k, seq, hop: Hop::ToCn, payload: out.payload });
                    }
                    Err(_) => {
                        self.metrics.relay_drops += 1;
                        self.drop_copy(k, seq);
                    }
                }
            }
            Hop::ToCn => self.deliver(k, seq, &payload),
        }
    }

    fn deliver(&mut self, k: usize, seq: u64, payload: &[u8]) {
        let size = self.streams[k].payload;
        self.streams[k].ledger.arrived(seq, payload, size);
    }

    fn on_relay_check(&mut self, rn: usize, now: SimTime) {
        let Some(table) = self.nodes[rn].relay.as_mut() else { return };
        let before = table.audit().len();
        table.check_idle(now);
        let ended: Vec<String> = table.audit()[before..].iter().map(|a| a.to_string()).collect();
        for line in ended {
            self.log(now, rn, format!("relay-ended {line}"));
        }
    }

    fn on_act(&mut self, i: usize, now: SimTime) {
        let Some(profile) = self.nodes[i].profile.clone() else { return };
        if self.nodes[i].connected() {
            let truth = self.cfg.ap_entries();
            let subnets: Vec<SubnetId> = self.cfg.subnets.iter().map(|s| s.id).collect();
            let rt = &self.nodes[i];
            let on_open_ap = rt.ap.is_some_and(|a| !self.cfg.aps[a].auth.requires_8021x());
            let rn_ip = profile
                .rn
                .and_then(|m| self.by_mac.get(&m))
                .and_then(|&r| self.nodes[r].node.attachment.map(|a| a.ip));
            let cn_ip = self.streams.iter().find(|s| s.node == i).map(|s| s.cn_ip);
            let ctx = ActContext {
                node: &rt.node,
                truth: &truth,
                subnets: &subnets,
                spoofing_allowed: self.cfg.spoofing_allowed,
                on_open_ap,
                rn_ip,
                cn_ip,
                max_ttl: self.cfg.max_ttl,
            };
            let acts = adversary::act(&profile, &ctx);
            if !acts.is_empty() {
                self.metrics.lies.entry(rt.node.mac).or_default().push(now);
                self.log(now, i, format!("adversary-act kind={}", profile.kind));
            }
            self.apply(i, acts, now);
        }
        if let Some(period) = profile.period() {
            let next = now + period;
            if next < self.end {
                self.queue.push(next, Ev::Act { node: i });
            }
        }
    }

    fn finish(mut self) -> RunReport {
        let end = self.end;
        let mut audit = Vec::new();
        for rt in &mut self.nodes {
            if let Some(t) = rt.relay.as_mut() {
                t.expire(end);
                audit.extend(t.audit().iter().cloned());
            }
        }
        audit.sort_by_key(|a| (a.ended, a.rn, a.mn));

        // Charge each lost downlink packet to the handoff in progress when
        // it was sent. Windows start one packet interval early so that
        // packets already on the wire at departure count too.
        let mut records = Vec::with_capacity(self.records.len());
        let mut starts = Vec::with_capacity(self.records.len());
        for idx in 0..self.records.len() {
            let (mut rec, start) = self.records[idx].clone();
            let node = self.by_mac[&rec.node];
            if let Some(s) = self.streams.iter().find(|s| s.node == node && s.direction == Direction::Down) {
                let next = self.records[idx + 1..]
                    .iter()
                    .filter(|(r, _)| r.node == rec.node)
                    .map(|(_, t)| *t)
                    .min()
                    .unwrap_or(SimTime::from_micros(u64::MAX));
                let early = |t: SimTime| t.checked_sub(s.interval).unwrap_or(SimTime::ZERO);
                rec.lost_pkts = s.ledger.lost_between(early(start), early(next));
            }
            records.push(rec);
            starts.push(start);
        }
        let streams = self
            .streams
            .iter()
            .map(|s| StreamSummary { node: self.nodes[s.node].node.mac, direction: s.direction, stats: s.ledger.stats() })
            .collect();
        let lease_table = self.server.lease_table();
        RunReport {
            scenario: self.cfg.name.clone(),
            fingerprint: topology_fingerprint(self.cfg),
            mode: self.mode,
            seed: 0,
            records,
            handoff_starts: starts,
            node_names: self.nodes.iter().map(|rt| (rt.node.mac, rt.name.clone())).collect(),
            ap_names: self.cfg.aps.iter().map(|a| (a.bssid, a.name.clone())).collect(),
            streams,
            metrics: self.metrics,
            trace: self.trace,
            security_log: self.security,
            relay_audit: audit,
            lease_table,
            end,
        }
    }
}
