//! Scenario builders and independent checkers shared by the integration
//! tests and the acceptance target.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use coroam::sim::{load_scenario, parse_scenario, run, Direction, Mode, RunReport, ScenarioConfig};
use coroam::wire::MacAddress;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.cfg"))
}

pub fn scenario(name: &str) -> ScenarioConfig {
    load_scenario(&scenario_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn within(actual: f64, target: f64, rel: f64) -> bool {
    (actual - target).abs() <= rel * target
}

/// One requester that knows nothing and `n` helpers that all know three APs.
/// Zero link latency so every helper hears every answer before its own
/// random wait runs out.
pub fn suppression_config(n: usize) -> ScenarioConfig {
    let mut text = String::from(
        "[scenario] name=suppression duration=3s\n\
         [delays] link_latency=0\n\
         [subnet] id=10.0.1.0 router=10.0.1.1 pool=10.0.1.100-10.0.1.199\n\
         [subnet] id=10.0.2.0 router=10.0.2.1 pool=10.0.2.100-10.0.2.199\n\
         [ap] name=A channel=1 subnet=10.0.1.0\n\
         [ap] name=B channel=6 subnet=10.0.2.0\n\
         [ap] name=C channel=11 subnet=10.0.2.0\n\
         [node] name=rmn ap=A assist=false prepare=off\n",
    );
    for k in 0..n {
        text.push_str(&format!("[node] name=h{k} ap=A knows=A,B,C assist=false prepare=off\n"));
    }
    parse_scenario(&text, None).expect("suppression scenario parses")
}

/// Outcome of one requester query answered by `n` helpers.
#[derive(Debug)]
pub struct SuppressionOutcome {
    pub seed: u64,
    pub responses: usize,
    /// How many INFORESPs carried each entry the requester was missing.
    pub per_entry: BTreeMap<MacAddress, usize>,
    pub missing: usize,
    /// Helpers that planned an answer.
    pub armed: usize,
}

/// Runs the suppression scenario, moving to the next seed whenever two
/// helpers drew the same wait.
pub fn suppression_run(n: usize, mut seed: u64) -> SuppressionOutcome {
    let cfg = suppression_config(n);
    let rmn = cfg.nodes[cfg.node_index("rmn").unwrap()].mac;
    let missing: BTreeSet<MacAddress> =
        cfg.aps.iter().map(|a| a.bssid).filter(|b| *b != cfg.aps[0].bssid).collect();
    loop {
        let report = run(&cfg, Mode::Cr, seed).expect("runs");
        let draws: Vec<_> = report.metrics.suppression_draws.iter().map(|(_, t)| *t).collect();
        let distinct: BTreeSet<_> = draws.iter().collect();
        if distinct.len() != draws.len() {
            seed += 1_000;
            continue;
        }
        let answers: Vec<_> = report.metrics.info_responses.iter().filter(|r| r.target == rmn).collect();
        let mut per_entry: BTreeMap<MacAddress, usize> = missing.iter().map(|b| (*b, 0)).collect();
        for a in &answers {
            for e in &a.entries {
                if let Some(c) = per_entry.get_mut(e) {
                    *c += 1;
                }
            }
        }
        return SuppressionOutcome { seed, responses: answers.len(), per_entry, missing: missing.len(), armed: draws.len() };
    }
}

/// Per-stream conservation: sent = received + lost + in flight.
pub fn conservation(report: &RunReport) -> Result<(), String> {
    for s in &report.streams {
        let st = s.stats;
        if st.sent != st.received + st.lost + st.in_flight {
            return Err(format!("{} {:?}: {:?}", report.node_names[&s.node], s.direction, st));
        }
    }
    Ok(())
}

/// Downlink loss bound per handoff: ceil(total / 20 ms) + 1 packets.
pub fn loss_bound(report: &RunReport) -> Result<(), String> {
    let downlink: BTreeSet<MacAddress> =
        report.streams.iter().filter(|s| s.direction == Direction::Down).map(|s| s.node).collect();
    for r in report.records.iter().filter(|r| downlink.contains(&r.node)) {
        let bound = (r.total().as_millis_f64() / 20.0).ceil() as u64 + 1;
        if r.lost_pkts > bound {
            return Err(format!("{r}: lost {} > bound {bound}", r.lost_pkts));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Relay tables under arbitrary event orderings.

use std::net::Ipv4Addr;

use coroam::relay::{
    port_admits, AuthMechanism, AuthPhase, AuthSession, DropReason, Frame, FrameClass, RelayConfig, RelayRefusal,
    RelayRequest, RelayTable, RequesterStatus,
};
use coroam::time::{SimDuration, SimTime};
use coroam::wire::{FrameHeader, FrameKind};
use rand::seq::SliceRandom;
use rand::Rng;

pub const RN: MacAddress = MacAddress::new([0x02, 0, 0, 0, 0xaa, 0x01]);
pub const RN_BSSID: MacAddress = MacAddress::new([0x02, 0, 0, 0, 0xbb, 0x01]);
pub const OLD_BSSID: MacAddress = MacAddress::new([0x02, 0, 0, 0, 0xbb, 0x02]);
pub const CN_IP: Ipv4Addr = Ipv4Addr::new(192, 168, 0, 5);

pub fn mn(k: u8) -> MacAddress {
    MacAddress::new([0x02, 0, 0, 0, 0x01, k])
}

#[derive(Debug, Clone)]
pub enum RelayOp {
    Req { mn: u8, associated: bool, authenticated: bool, malicious: bool },
    Up { mn: u8, payload: Vec<u8> },
    Down { mn: u8, payload: Vec<u8> },
    Idle,
    Advance { ms: u64 },
}

/// Random operation mix over `mns` stations, in random order.
pub fn random_relay_ops<R: Rng>(rng: &mut R, len: usize, mns: u8) -> Vec<RelayOp> {
    let mut ops: Vec<RelayOp> = (0..len)
        .map(|_| {
            let mn = rng.random_range(0..mns);
            match rng.random_range(0..10) {
                0 | 1 => RelayOp::Req {
                    mn,
                    associated: rng.random_bool(0.85),
                    authenticated: rng.random_bool(0.85),
                    malicious: rng.random_bool(0.05),
                },
                2 | 3 => RelayOp::Up { mn, payload: (0..rng.random_range(0..64)).map(|_| rng.random()).collect() },
                4 | 5 => RelayOp::Down { mn, payload: (0..rng.random_range(0..64)).map(|_| rng.random()).collect() },
                6 => RelayOp::Idle,
                _ => RelayOp::Advance { ms: rng.random_range(0..1500) },
            }
        })
        .collect();
    ops.shuffle(rng);
    ops
}

#[derive(Debug, Default, Clone, Copy)]
pub struct RelayTally {
    pub registered: u64,
    pub refused_unassociated: u64,
    pub refused_cooldown: u64,
    pub forwarded: u64,
    pub dropped_expired: u64,
}

#[derive(Debug, Clone, Copy)]
struct ModelReg {
    at: SimTime,
    expires: SimTime,
    last: Option<SimTime>,
    ended: Option<(SimTime, bool)>, // (when, by expiry)
}

impl ModelReg {
    fn settle(&mut self, now: SimTime) {
        if self.ended.is_none() && now >= self.expires {
            self.ended = Some((self.expires, true));
        }
    }

    fn live(&self, now: SimTime) -> bool {
        self.ended.is_none() && now < self.expires
    }
}

/// Replays `ops` against a relay table and an independent model of the
/// registration rules. Any disagreement, any frame forwarded at or after the
/// deadline, or any payload change is an error.
pub fn check_relay_ops(ops: &[RelayOp], cfg: RelayConfig) -> Result<RelayTally, String> {
    let mut table = RelayTable::new(RN, cfg);
    let mut model: BTreeMap<u8, ModelReg> = BTreeMap::new();
    let mut now = SimTime::from_micros(1_000_000);
    let mut tally = RelayTally::default();
    for (step, op) in ops.iter().enumerate() {
        let ctx = |m: &str| format!("step {step} at {now} ({op:?}): {m}");
        match op {
            RelayOp::Advance { ms } => now += SimDuration::from_millis(*ms),
            RelayOp::Idle => {
                table.check_idle(now);
                for r in model.values_mut() {
                    r.settle(now);
                    if r.ended.is_none() && r.last.is_some_and(|t| now >= t + cfg.idle_timeout) {
                        r.ended = Some((now, false));
                    }
                }
            }
            RelayOp::Req { mn: k, associated, authenticated, malicious } => {
                let req = RelayRequest { mn_mac: mn(*k), mn_ip: Ipv4Addr::new(10, 0, 1, 100 + k), cn_ip: CN_IP, rn_mac: RN, rn_ip: Ipv4Addr::new(10, 0, 2, 7) };
                let status = RequesterStatus {
                    associated_at: associated.then_some(OLD_BSSID),
                    authenticated: *authenticated,
                    marked_malicious: *malicious,
                };
                let expected = if *malicious {
                    Err(RelayRefusal::RefusedMalicious)
                } else if !(*associated && *authenticated) {
                    Err(RelayRefusal::RefusedUnassociated)
                } else {
                    let blocked = model.get_mut(k).is_some_and(|r| {
                        r.settle(now);
                        match r.ended {
                            None => true,
                            Some((at, true)) => now < at + cfg.cooldown,
                            Some((_, false)) => false,
                        }
                    });
                    if blocked {
                        Err(RelayRefusal::Cooldown)
                    } else {
                        Ok(now + cfg.timeout)
                    }
                };
                let got = table.on_relay_req(&req, status, now).map(|r| r.expires_at);
                if got != expected {
                    return Err(ctx(&format!("table {got:?}, model {expected:?}")));
                }
                match got {
                    Ok(expires) => {
                        tally.registered += 1;
                        model.insert(*k, ModelReg { at: now, expires, last: None, ended: None });
                    }
                    Err(RelayRefusal::RefusedUnassociated) => tally.refused_unassociated += 1,
                    Err(RelayRefusal::Cooldown) => tally.refused_cooldown += 1,
                    Err(_) => {}
                }
            }
            RelayOp::Up { mn: k, payload } | RelayOp::Down { mn: k, payload } => {
                let up = matches!(op, RelayOp::Up { .. });
                let live = model.get_mut(k).map(|r| {
                    r.settle(now);
                    r.live(now)
                });
                let result = if up {
                    let f = Frame { header: FrameHeader::ad_hoc(RN, mn(*k), RN_BSSID), class: FrameClass::Data, payload: payload.clone() };
                    table.relay_uplink(&f, RN_BSSID, now)
                } else {
                    table.relay_downlink(mn(*k), CN_IP, payload, RN_BSSID, now)
                };
                match (result, live) {
                    (Ok(out), Some(true)) => {
                        let reg = model.get_mut(k).expect("live");
                        if now >= reg.expires {
                            return Err(ctx("forwarded at or after the registration deadline"));
                        }
                        if out.payload != *payload {
                            return Err(ctx("payload changed on the relay path"));
                        }
                        let want = if up { FrameKind::ToAp } else { FrameKind::DirectAdHoc };
                        if out.header.kind() != want {
                            return Err(ctx(&format!("relayed as {:?}", out.header.kind())));
                        }
                        if !up && out.header.destination() != Some(mn(*k)) {
                            return Err(ctx("downlink not addressed to the station"));
                        }
                        reg.last = Some(now);
                        tally.forwarded += 1;
                    }
                    (Ok(_), _) => return Err(ctx("forwarded without a live registration")),
                    (Err(DropReason::Expired), Some(false)) => tally.dropped_expired += 1,
                    (Err(_), Some(true)) => return Err(ctx("dropped despite a live registration")),
                    (Err(_), _) => {}
                }
            }
        }
    }
    Ok(tally)
}

/// Port filter over a random authentication: data frames pass only once the
/// session has completed successfully, EAPOL always passes meanwhile.
pub fn check_port_filter<R: Rng>(rng: &mut R) -> Result<u64, String> {
    let mech = [AuthMechanism::EapTls1024, AuthMechanism::EapTls2048, AuthMechanism::PeapMschapv2][rng.random_range(0..3)];
    let start = SimTime::from_micros(rng.random_range(0..5_000_000));
    let cred = SimDuration::from_micros(rng.random_range(0..2_000_000));
    let keys = SimDuration::from_micros(rng.random_range(0..500_000));
    let fail = rng.random_bool(0.2);
    let mut s = AuthSession::start(mn(1), mech, start, cred, keys, fail);
    let done = start + cred + keys;
    let mut probes: Vec<u64> = (0..40).map(|_| rng.random_range(0..4_000_000)).collect();
    probes.sort_unstable();
    let mut leaks_checked = 0;
    for p in probes {
        let now = start + SimDuration::from_micros(p);
        s.auth_progress(now);
        let expect_data = now >= done && !fail;
        if port_admits(mech, Some(&s), FrameClass::Data) != expect_data {
            return Err(format!("{mech} at +{p}us: data admitted={} phase={:?}", !expect_data, s.phase));
        }
        if s.phase == AuthPhase::EapolInProgress {
            leaks_checked += 1;
            if !port_admits(mech, Some(&s), FrameClass::Eapol) {
                return Err(format!("{mech}: EAPOL blocked during authentication"));
            }
        }
    }
    if port_admits(mech, None, FrameClass::Data) {
        return Err("data admitted for a station without a session".into());
    }
    Ok(leaks_checked)
}

// ---------------------------------------------------------------------------
// Quorum oracle.

use coroam::security::{SecurityError, SuspicionLedger};

/// Brute force: marked iff at least `threshold` different reporters (the
/// suspect itself excluded) appear among the alerts.
pub fn oracle_marks(alerts: &[usize], suspect: usize, threshold: usize) -> bool {
    let distinct: BTreeSet<usize> = alerts.iter().copied().filter(|r| *r != suspect).collect();
    distinct.len() >= threshold
}

/// Every multiset of alerts from up to `max_reporters` reporters (each
/// reporting 0..=`max_repeats` times), for every threshold in 2..=6, fed in
/// ascending and descending order. Returns the number of cases checked.
pub fn exhaustive_quorum(max_reporters: usize, max_repeats: usize) -> Result<u64, String> {
    let suspect_id = max_reporters; // never a reporter
    let mac_of = |i: usize| MacAddress::local(100 + i as u32);
    let mut cases = 0u64;
    for threshold in 2..=6 {
        for reporters in 0..=max_reporters {
            let combos = (max_repeats + 1).pow(reporters as u32);
            for code in 0..combos {
                let mut c = code;
                let mut alerts = Vec::new();
                for r in 0..reporters {
                    for _ in 0..c % (max_repeats + 1) {
                        alerts.push(r);
                    }
                    c /= max_repeats + 1;
                }
                let expect = oracle_marks(&alerts, suspect_id, threshold);
                for order in [false, true] {
                    let mut seq = alerts.clone();
                    if order {
                        seq.reverse();
                    }
                    let mut ledger = SuspicionLedger::new(threshold).map_err(|e| e.to_string())?;
                    for &r in &seq {
                        ledger.record_alert(mac_of(suspect_id), mac_of(r)).map_err(|e| e.to_string())?;
                        // Self-reports are rejected and never count.
                        if !matches!(ledger.record_alert(mac_of(suspect_id), mac_of(suspect_id)), Err(SecurityError::SelfReport(_))) {
                            return Err("self-report accepted".into());
                        }
                    }
                    let got = ledger.is_malicious(&mac_of(suspect_id));
                    if got != expect {
                        return Err(format!("threshold {threshold}, alerts {seq:?}: marked={got}, oracle={expect}"));
                    }
                    let distinct: BTreeSet<_> = seq.iter().collect();
                    if distinct.len() == 1 && got {
                        return Err(format!("one reporter marked the suspect: {seq:?}"));
                    }
                    cases += 1;
                }
            }
        }
    }
    Ok(cases)
}

// ---------------------------------------------------------------------------
// Post-marking ignorance on a protocol node.

use coroam::protocol::{Attachment, Node, ProtocolConfig};
use coroam::wire::{CacheEntry, Message, MessageBody, SubnetId};

/// Every message kind the suspect could send, carrying plausible content.
pub fn every_message_from(suspect: MacAddress, victim: MacAddress) -> Vec<Message> {
    let s1 = SubnetId::from_network(Ipv4Addr::new(10, 0, 1, 0));
    let s2 = SubnetId::from_network(Ipv4Addr::new(10, 0, 2, 0));
    let e = CacheEntry::new(MacAddress::local(0x2000), 6, s2);
    let bodies = vec![
        MessageBody::InfoReq { entries: vec![e] },
        MessageBody::InfoResp { target: victim, entries: vec![e] },
        MessageBody::AmnDiscover { subnet_id: s1 },
        MessageBody::AmnResp { amn_ip: Ipv4Addr::new(10, 0, 2, 9), router_ip: Ipv4Addr::new(10, 0, 2, 1), ap: e.bssid, can_relay: true },
        MessageBody::IpReq { rmn_mac: MacAddress::local(77) },
        MessageBody::IpResp { rmn_mac: victim, new_ip: Ipv4Addr::new(10, 0, 2, 50), router_ip: Ipv4Addr::new(10, 0, 2, 1) },
        MessageBody::RelayReq { mn_mac: suspect, mn_ip: Ipv4Addr::new(10, 0, 1, 9), cn_ip: CN_IP, rn_mac: victim, rn_ip: Ipv4Addr::new(10, 0, 1, 5) },
        MessageBody::InfoAlert { suspect: MacAddress::local(78) },
    ];
    bodies.into_iter().map(|b| Message::new(suspect, b)).collect()
}

/// Marks `suspect` on a fresh node through `threshold` alerts, then checks
/// that nothing the suspect sends produces an action or changes state.
pub fn check_ignorance(threshold: usize) -> Result<usize, String> {
    use rand::SeedableRng;
    let me = MacAddress::local(1);
    let suspect = MacAddress::local(2);
    let cfg = ProtocolConfig { alert_threshold: threshold, can_relay: true, harvest_inforeq: true, ..ProtocolConfig::default() };
    let mut node = Node::new(me, cfg).map_err(|e| e.to_string())?;
    let s1 = SubnetId::from_network(Ipv4Addr::new(10, 0, 1, 0));
    let ap = CacheEntry::new(MacAddress::local(0x1000), 1, s1);
    node.attach(Attachment { ap, ip: Ipv4Addr::new(10, 0, 1, 100), router: Ipv4Addr::new(10, 0, 1, 1) }, None, SimTime::ZERO);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let now = SimTime::from_micros(1_000_000);
    for r in 0..threshold {
        let alert = Message::new(MacAddress::local(10 + r as u32), MessageBody::InfoAlert { suspect });
        node.on_message(&alert, Some(3), now, &mut rng);
    }
    if !node.ledger.is_malicious(&suspect) {
        return Err(format!("{threshold} distinct alerts did not mark the suspect"));
    }
    let before = format!("{node:?}");
    let msgs = every_message_from(suspect, me);
    for m in &msgs {
        let acts = node.on_message(m, Some(3), now, &mut rng);
        if !acts.is_empty() {
            return Err(format!("{} from a marked node produced {acts:?}", m.body.kind_name()));
        }
    }
    if format!("{node:?}") != before {
        return Err("messages from a marked node changed the receiver's state".into());
    }
    Ok(msgs.len())
}

// ---------------------------------------------------------------------------
// Proxy DHCP.

use coroam::dhcp::{amn_acquire, run_exchange, DhcpExchange, DhcpServer, Pool};

pub fn test_pool() -> Pool {
    Pool {
        subnet: SubnetId::from_network(Ipv4Addr::new(10, 0, 2, 0)),
        prefix: 24,
        router: Ipv4Addr::new(10, 0, 2, 1),
        first: Ipv4Addr::new(10, 0, 2, 100),
        last: Ipv4Addr::new(10, 0, 2, 140),
        lease_duration: SimDuration::from_secs(300),
    }
}

/// Acquires an address for `rmn` through `amn` on one server and directly
/// on an identical copy; the two lease tables must match byte for byte and
/// every proxy message must carry the broadcast flag. `others` are clients
/// bound beforehand.
pub fn check_proxy_identity(rmn: MacAddress, amn: MacAddress, others: &[MacAddress], xid: u32) -> Result<(), String> {
    let pool = test_pool();
    let subnet = pool.subnet;
    let mut base = DhcpServer::new([pool]);
    for (k, o) in others.iter().enumerate() {
        if *o == rmn {
            continue;
        }
        run_exchange(&mut base, DhcpExchange::direct(*o, subnet, 0x9000 + k as u32), SimTime::ZERO, SimDuration::from_millis(800))
            .map_err(|e| e.to_string())?;
    }
    let mut via_proxy = base.clone();
    let mut direct = base;
    let at = SimTime::from_micros(2_000_000);
    let d = SimDuration::from_millis(867);
    let (pl, transcript) = amn_acquire(&mut via_proxy, amn, rmn, subnet, xid, at, d).map_err(|e| e.to_string())?;
    let (dl, _) = run_exchange(&mut direct, DhcpExchange::direct(rmn, subnet, xid), at, d).map_err(|e| e.to_string())?;
    if via_proxy.lease_table() != direct.lease_table() {
        return Err(format!("lease tables differ:\n{}\nvs\n{}", via_proxy.lease_table(), direct.lease_table()));
    }
    let binding = via_proxy.binding(&pl.leased_ip).ok_or("no binding for the proxied address")?;
    if binding.chaddr != rmn {
        return Err(format!("binding records {} instead of the requester", binding.chaddr));
    }
    if (pl.leased_ip, pl.router_ip, pl.expiry) != (dl.leased_ip, dl.router_ip, dl.expiry) {
        return Err(format!("leases differ: {pl:?} vs {dl:?}"));
    }
    if let Some((_, m)) = transcript.iter().find(|(_, m)| !m.broadcast || m.chaddr != rmn) {
        return Err(format!("proxy message without broadcast flag or with foreign chaddr: {m:?}"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Wire messages.

use coroam::wire::{classify_frame, encode, decode, WireError, ENTRY_SIZE, MAX_ENTRIES};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

pub fn arb_unicast() -> impl Strategy<Value = MacAddress> {
    any::<[u8; 6]>().prop_map(|mut o| {
        o[0] &= 0xfe;
        MacAddress::new(o)
    })
}

pub fn arb_ip() -> impl Strategy<Value = Ipv4Addr> {
    any::<u32>().prop_map(Ipv4Addr::from)
}

pub fn arb_entry() -> impl Strategy<Value = CacheEntry> {
    (arb_unicast(), 1u32..=14, arb_ip()).prop_map(|(b, c, s)| CacheEntry::new(b, c, SubnetId::from_network(s)))
}

pub fn arb_entries(max: usize) -> impl Strategy<Value = Vec<CacheEntry>> {
    prop_oneof![
        4 => prop::collection::vec(arb_entry(), 0..8),
        1 => prop::collection::vec(arb_entry(), 0..=max),
    ]
}

pub fn arb_body() -> impl Strategy<Value = MessageBody> {
    prop_oneof![
        arb_entries(MAX_ENTRIES).prop_map(|entries| MessageBody::InfoReq { entries }),
        (arb_unicast(), arb_entries(MAX_ENTRIES)).prop_map(|(target, entries)| MessageBody::InfoResp { target, entries }),
        arb_ip().prop_map(|ip| MessageBody::AmnDiscover { subnet_id: SubnetId::from_network(ip) }),
        (arb_ip(), arb_ip(), arb_unicast(), any::<bool>())
            .prop_map(|(amn_ip, router_ip, ap, can_relay)| MessageBody::AmnResp { amn_ip, router_ip, ap, can_relay }),
        arb_unicast().prop_map(|rmn_mac| MessageBody::IpReq { rmn_mac }),
        (arb_unicast(), arb_ip(), arb_ip()).prop_map(|(rmn_mac, new_ip, router_ip)| MessageBody::IpResp { rmn_mac, new_ip, router_ip }),
        (arb_unicast(), arb_ip(), arb_ip(), arb_unicast(), arb_ip())
            .prop_map(|(mn_mac, mn_ip, cn_ip, rn_mac, rn_ip)| MessageBody::RelayReq { mn_mac, mn_ip, cn_ip, rn_mac, rn_ip }),
        arb_unicast().prop_map(|suspect| MessageBody::InfoAlert { suspect }),
    ]
}

pub fn arb_message() -> impl Strategy<Value = Message> {
    (arb_unicast(), arb_body()).prop_map(|(s, b)| Message::new(s, b))
}

/// Byte layout written out field by field from the format description.
pub fn reference_encode(m: &Message) -> Vec<u8> {
    let mut out = Vec::new();
    let entries = m.body.entries();
    out.push(m.body.tag());
    out.extend(m.sender.octets());
    out.extend((entries.len() as u16).to_be_bytes());
    match &m.body {
        MessageBody::InfoReq { .. } => {}
        MessageBody::InfoResp { target, .. } => out.extend(target.octets()),
        MessageBody::AmnDiscover { subnet_id } => out.extend(subnet_id.network().octets()),
        MessageBody::AmnResp { amn_ip, router_ip, ap, can_relay } => {
            out.extend(amn_ip.octets());
            out.extend(router_ip.octets());
            out.extend(ap.octets());
            out.push(u8::from(*can_relay));
        }
        MessageBody::IpReq { rmn_mac } => out.extend(rmn_mac.octets()),
        MessageBody::IpResp { rmn_mac, new_ip, router_ip } => {
            out.extend(rmn_mac.octets());
            out.extend(new_ip.octets());
            out.extend(router_ip.octets());
        }
        MessageBody::RelayReq { mn_mac, mn_ip, cn_ip, rn_mac, rn_ip } => {
            out.extend(mn_mac.octets());
            out.extend(mn_ip.octets());
            out.extend(cn_ip.octets());
            out.extend(rn_mac.octets());
            out.extend(rn_ip.octets());
        }
        MessageBody::InfoAlert { suspect } => out.extend(suspect.octets()),
    }
    for e in entries {
        out.extend(e.bssid.octets());
        out.extend(e.channel.to_be_bytes());
        out.extend(e.subnet_id.network().octets());
    }
    out
}

/// Size of the fixed part of each kind, from the format table.
pub fn fixed_body_len(b: &MessageBody) -> usize {
    match b {
        MessageBody::InfoReq { .. } => 0,
        MessageBody::InfoResp { .. } => 6,
        MessageBody::AmnDiscover { .. } => 4,
        MessageBody::AmnResp { .. } => 15,
        MessageBody::IpReq { .. } => 6,
        MessageBody::IpResp { .. } => 14,
        MessageBody::RelayReq { .. } => 24,
        MessageBody::InfoAlert { .. } => 6,
    }
}

/// Checks one generated message against every wire property.
pub fn check_message(m: &Message) -> Result<(), String> {
    let bytes = encode(m).map_err(|e| format!("encode failed: {e}"))?;
    if bytes != reference_encode(m) {
        return Err(format!("{} differs from the reference layout", m.body.kind_name()));
    }
    let n = m.body.entries().len();
    if bytes.len() != 9 + fixed_body_len(&m.body) + 14 * n {
        return Err(format!("{} entries encoded in {} bytes", n, bytes.len()));
    }
    if n * ENTRY_SIZE > 1472 {
        return Err(format!("{n} entries exceed 1472 payload bytes"));
    }
    let back = decode(&bytes).map_err(|e| format!("decode failed: {e}"))?;
    if back != *m {
        return Err(format!("round trip changed {}", m.body.kind_name()));
    }
    Ok(())
}

/// Runs the wire property suite over `cases` generated messages plus the
/// capacity boundary and the frame classification table.
pub fn wire_suite(cases: u32) -> Result<u32, String> {
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner
        .run(&arb_message(), |m| check_message(&m).map_err(TestCaseError::fail))
        .map_err(|e| e.to_string())?;

    // Capacity oracle: floor((1500 - 28) / 14).
    let cap = (1500 - 28) / 14;
    if cap != 105 || MAX_ENTRIES != cap {
        return Err(format!("capacity {MAX_ENTRIES}, oracle {cap}"));
    }
    let e = CacheEntry::new(MacAddress::local(0x1000), 6, SubnetId::from_network(Ipv4Addr::new(160, 39, 5, 0)));
    let sender = MacAddress::local(1);
    for n in [cap - 1, cap, cap + 1, cap + 50] {
        let m = Message::new(sender, MessageBody::InfoResp { target: MacAddress::local(2), entries: vec![e; n] });
        match (encode(&m), n <= cap) {
            (Ok(b), true) => {
                let back = decode(&b).map_err(|e| e.to_string())?;
                if back.body.entries().len() != n || back.body.entries().iter().any(|x| *x != e) {
                    return Err(format!("{n}-entry message did not decode entry by entry"));
                }
            }
            (Err(WireError::CapacityExceeded { count }), false) if count == n => {}
            (other, _) => return Err(format!("{n} entries: {other:?}")),
        }
        // A forged count above capacity is rejected on decode as well.
        if n > cap {
            let mut b = reference_encode(&m);
            b.truncate(9 + 6 + 14 * cap);
            if !matches!(decode(&b), Err(WireError::CapacityExceeded { .. })) {
                return Err(format!("decode accepted count {n}"));
            }
        }
    }

    // Frame classification over all four bit combinations.
    let (da, sa, bssid, ra) = (MacAddress::local(1), MacAddress::local(2), MacAddress::local(3), MacAddress::local(4));
    let table = [
        (FrameHeader::ad_hoc(da, sa, bssid), false, false, FrameKind::DirectAdHoc, [Some(da), Some(sa), Some(bssid), None]),
        (FrameHeader::from_ap(da, bssid, sa), false, true, FrameKind::FromAp, [Some(da), Some(bssid), Some(sa), None]),
        (FrameHeader::to_ap(bssid, sa, da), true, false, FrameKind::ToAp, [Some(bssid), Some(sa), Some(da), None]),
        (FrameHeader::ap_to_ap(ra, bssid, da, sa), true, true, FrameKind::ApToAp, [Some(ra), Some(bssid), Some(da), Some(sa)]),
    ];
    let mut seen = BTreeSet::new();
    for (h, to, from, kind, addrs) in table {
        if (h.to_ds, h.from_ds) != (to, from) || classify_frame(&h) != kind || [h.addr1, h.addr2, h.addr3, h.addr4] != addrs {
            return Err(format!("({}, {}) classified as {:?}", to as u8, from as u8, classify_frame(&h)));
        }
        if h.validate().is_err() || h.destination() != Some(da) || h.source() != Some(sa) {
            return Err(format!("{kind:?}: addressing roles wrong"));
        }
        seen.insert(format!("{kind:?}"));
    }
    if seen.len() != 4 {
        return Err("classification is not one-to-one".into());
    }
    Ok(cases)
}

pub fn golden_vectors() -> Vec<(String, Vec<u8>)> {
    let text = include_str!("../data/golden_vectors.txt");
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (name, hex) = l.split_once(' ').expect("name and hex");
            let bytes = (0..hex.len()).step_by(2).map(|i| u8::from_str_radix(&hex[i..i + 2], 16).expect("hex")).collect();
            (name.to_string(), bytes)
        })
        .collect()
}
