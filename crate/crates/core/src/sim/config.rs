//! Scenario files.
//!
//! A scenario is a list of sections. Each starts with a `[kind]` header
//! that may carry `key=value` pairs on the same line; further pairs follow
//! on the next lines until the next header. `#` starts a comment.
//!
//! ```text
//! [scenario] name=corridor duration=60s
//! [subnet] id=10.0.1.0 router=10.0.1.1 pool=10.0.1.100-10.0.1.199
//! [ap] name=AP1 channel=1 subnet=10.0.1.0 auth=open
//! [node] name=mn ap=AP1 cr=true
//! [mobility] node=mn start=2s period=5s count=10 aps=AP2,AP1
//! [stream] node=mn cn_ip=192.168.0.5
//! [delays] full_scan=343 dhcp=lognormal:867:0.25
//! ```
//!
//! Subnets are one hop apart in declaration order.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::path::Path;

use thiserror::Error;

use crate::adversary::{AdversaryKind, MaliciousProfile};
use crate::cache::Cache;
use crate::relay::{AuthMechanism, RelayConfig};
use crate::security::{DEFAULT_THRESHOLD, MIN_THRESHOLD};
use crate::sim::delay::{parse_duration, DelayModel};
use crate::time::{SimDuration, SimTime};
use crate::wire::{CacheEntry, MacAddress, SubnetId, CHANNELS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}", self.describe())]
pub struct ConfigError {
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(line: usize, field: &str, message: impl Into<String>) -> Self {
        ConfigError { line, field: field.to_string(), message: message.into() }
    }

    /// Line 0 means the error is not tied to a line (I/O, cross-section checks).
    fn describe(&self) -> String {
        if self.line == 0 {
            format!("{}: {}", self.field, self.message)
        } else {
            format!("line {}: {}: {}", self.line, self.field, self.message)
        }
    }
}

/// What the comparison mode runs instead of cooperative roaming.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Plain 802.11: full scan and DHCP on every handoff.
    Legacy,
    /// Cooperative roaming without relaying, so authentication runs before
    /// any traffic flows.
    NoRelay,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubnetSpec {
    pub id: SubnetId,
    pub router: Ipv4Addr,
    pub pool_first: Ipv4Addr,
    pub pool_last: Ipv4Addr,
    pub lease: SimDuration,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApSpec {
    pub name: String,
    pub bssid: MacAddress,
    pub channel: u32,
    /// Index into [`ScenarioConfig::subnets`].
    pub subnet: usize,
    pub auth: AuthMechanism,
    pub bridging: Option<SimDuration>,
    pub line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prepare {
    /// Acquire leases for candidate subnets as soon as they are known.
    Eager,
    /// Wait until the current AP's signal drops below the threshold.
    Signal,
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub name: String,
    pub mac: MacAddress,
    /// Index into [`ScenarioConfig::aps`].
    pub ap: usize,
    pub cr: bool,
    pub assist: bool,
    pub relay: bool,
    pub harvest: bool,
    /// APs known first-hand from the start.
    pub knows: Vec<usize>,
    pub cache: Option<Cache>,
    pub malicious: Option<MaliciousProfile>,
    pub prepare: Prepare,
    pub line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MoveSpec {
    pub at: SimTime,
    pub node: usize,
    pub ap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalSpec {
    pub at: SimTime,
    pub node: usize,
    pub ap: usize,
    pub dbm: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Correspondent to mobile node.
    Down,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSpec {
    pub node: usize,
    pub cn_ip: Ipv4Addr,
    pub direction: Direction,
    pub interval: SimDuration,
    pub payload: usize,
    pub start: SimTime,
    pub end: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub prefix: u8,
    /// Run length; defaults to five seconds past the last scripted move.
    pub duration: Option<SimDuration>,
    pub baseline: Baseline,
    pub threshold: usize,
    pub window: SimDuration,
    pub request_deadline: SimDuration,
    pub max_ttl: u8,
    pub amn_timeout: SimDuration,
    pub lease_margin: SimDuration,
    pub spoofing_allowed: bool,
    pub prepare_dbm: i32,
    pub relay: RelayConfig,
    pub subnets: Vec<SubnetSpec>,
    pub aps: Vec<ApSpec>,
    pub nodes: Vec<NodeSpec>,
    pub moves: Vec<MoveSpec>,
    pub signals: Vec<SignalSpec>,
    pub streams: Vec<StreamSpec>,
    pub delays: DelayModel,
}

impl ScenarioConfig {
    pub fn ap_entry(&self, ap: usize) -> CacheEntry {
        let a = &self.aps[ap];
        CacheEntry::new(a.bssid, a.channel, self.subnets[a.subnet].id)
    }

    pub fn ap_entries(&self) -> Vec<CacheEntry> {
        (0..self.aps.len()).map(|i| self.ap_entry(i)).collect()
    }

    pub fn end_time(&self) -> SimTime {
        match self.duration {
            Some(d) => SimTime::ZERO + d,
            None => {
                let last = self.moves.iter().map(|m| m.at).max().unwrap_or(SimTime::ZERO);
                last + SimDuration::from_secs(5)
            }
        }
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn ap_index(&self, name: &str) -> Option<usize> {
        self.aps.iter().position(|a| a.name == name)
    }
}

#[derive(Debug)]
struct Section {
    kind: String,
    line: usize,
    pairs: Vec<(String, String, usize)>,
}

fn split_sections(text: &str) -> Result<Vec<Section>, ConfigError> {
    let mut out: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let rest = if let Some(after) = line.strip_prefix('[') {
            let (kind, rest) = after
                .split_once(']')
                .ok_or_else(|| ConfigError::new(line_no, "section", "missing `]`"))?;
            out.push(Section { kind: kind.trim().to_string(), line: line_no, pairs: Vec::new() });
            rest
        } else {
            line
        };
        for token in rest.split_whitespace() {
            let section = out
                .last_mut()
                .ok_or_else(|| ConfigError::new(line_no, token, "setting outside any section"))?;
            let (k, v) = token
                .split_once('=')
                .ok_or_else(|| ConfigError::new(line_no, token, "expected key=value"))?;
            if k.is_empty() {
                return Err(ConfigError::new(line_no, token, "empty key"));
            }
            section.pairs.push((k.to_string(), v.to_string(), line_no));
        }
    }
    Ok(out)
}

/// Keyed access to one section's settings; rejects unknown and repeated keys.
struct Fields<'a> {
    section: &'a Section,
    map: BTreeMap<&'a str, (&'a str, usize)>,
    used: BTreeSet<&'a str>,
}

impl<'a> Fields<'a> {
    fn new(section: &'a Section) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (k, v, line) in &section.pairs {
            if map.insert(k.as_str(), (v.as_str(), *line)).is_some() {
                return Err(ConfigError::new(*line, k, "set twice"));
            }
        }
        Ok(Fields { section, map, used: BTreeSet::new() })
    }

    fn line_of(&self, key: &str) -> usize {
        self.map.get(key).map_or(self.section.line, |(_, l)| *l)
    }

    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::new(self.line_of(key), key, message)
    }

    fn opt(&mut self, key: &'a str) -> Option<&'a str> {
        self.used.insert(key);
        self.map.get(key).map(|(v, _)| *v)
    }

    fn req(&mut self, key: &'a str) -> Result<&'a str, ConfigError> {
        self.opt(key).ok_or_else(|| self.err(key, format!("missing in [{}]", self.section.kind)))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &'a str, what: &str) -> Result<Option<T>, ConfigError> {
        match self.opt(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| self.err(key, format!("`{v}` is not {what}"))),
        }
    }

    fn duration(&mut self, key: &'a str) -> Result<Option<SimDuration>, ConfigError> {
        match self.opt(key) {
            None => Ok(None),
            Some(v) => parse_duration(v).map(Some).ok_or_else(|| self.err(key, format!("`{v}` is not a duration"))),
        }
    }

    fn flag(&mut self, key: &'a str, default: bool) -> Result<bool, ConfigError> {
        match self.opt(key) {
            None => Ok(default),
            Some("true" | "yes" | "1" | "on") => Ok(true),
            Some("false" | "no" | "0" | "off") => Ok(false),
            Some(v) => Err(self.err(key, format!("`{v}` is not a boolean"))),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        for (k, (_, line)) in &self.map {
            if !self.used.contains(k) {
                return Err(ConfigError::new(*line, k, format!("unknown key in [{}]", self.section.kind)));
            }
        }
        Ok(())
    }
}

fn time_at(d: SimDuration) -> SimTime {
    SimTime::ZERO + d
}

/// Parses a scenario held in memory. `cache=` paths are resolved against
/// `base_dir`; without one they are rejected.
pub fn parse_scenario(text: &str, base_dir: Option<&Path>) -> Result<ScenarioConfig, ConfigError> {
    let sections = split_sections(text)?;
    let mut cfg = ScenarioConfig {
        name: "scenario".into(),
        prefix: 24,
        duration: None,
        baseline: Baseline::Legacy,
        threshold: DEFAULT_THRESHOLD,
        window: SimDuration::from_millis(50),
        request_deadline: SimDuration::from_millis(200),
        max_ttl: 3,
        amn_timeout: SimDuration::from_secs(2),
        lease_margin: SimDuration::from_secs(30),
        spoofing_allowed: false,
        prepare_dbm: -75,
        relay: RelayConfig::default(),
        subnets: Vec::new(),
        aps: Vec::new(),
        nodes: Vec::new(),
        moves: Vec::new(),
        signals: Vec::new(),
        streams: Vec::new(),
        delays: DelayModel::default(),
    };

    for s in &sections {
        if !["scenario", "delays", "subnet", "ap", "node", "mobility", "signal", "stream"].contains(&s.kind.as_str()) {
            return Err(ConfigError::new(s.line, &s.kind, "unknown section"));
        }
    }
    let of = |kind: &'static str| sections.iter().filter(move |s| s.kind == kind);

    let mut seen_scenario = false;
    for s in of("scenario") {
        if seen_scenario {
            return Err(ConfigError::new(s.line, "scenario", "only one [scenario] section is allowed"));
        }
        seen_scenario = true;
        parse_scenario_section(s, &mut cfg)?;
    }
    for s in of("delays") {
        // `mode` and `cv` reset or rescale the others, so they go first.
        let mut pairs: Vec<&(String, String, usize)> = s.pairs.iter().collect();
        pairs.sort_by_key(|(k, _, _)| match k.as_str() {
            "mode" => 0,
            "cv" => 1,
            _ => 2,
        });
        for (k, v, line) in pairs {
            cfg.delays.set(k, v).map_err(|m| ConfigError::new(*line, k, m))?;
        }
    }
    for s in of("subnet") {
        let sub = parse_subnet(s, cfg.prefix)?;
        if cfg.subnets.iter().any(|o| o.id == sub.id) {
            return Err(ConfigError::new(s.line, "id", format!("subnet {} declared twice", sub.id)));
        }
        cfg.subnets.push(sub);
    }
    let mut macs: BTreeMap<MacAddress, String> = BTreeMap::new();
    for (i, s) in of("ap").enumerate() {
        let ap = parse_ap(s, i, &cfg)?;
        if cfg.ap_index(&ap.name).is_some() {
            return Err(ConfigError::new(s.line, "name", format!("AP `{}` declared twice", ap.name)));
        }
        if let Some(other) = macs.insert(ap.bssid, ap.name.clone()) {
            return Err(ConfigError::new(s.line, "bssid", format!("{} already used by `{other}`", ap.bssid)));
        }
        cfg.aps.push(ap);
    }
    let node_sections: Vec<&Section> = of("node").collect();
    let names: Vec<String> = node_sections
        .iter()
        .map(|s| s.pairs.iter().find(|(k, _, _)| k == "name").map(|(_, v, _)| v.clone()).unwrap_or_default())
        .collect();
    let node_macs: Vec<Option<MacAddress>> = node_sections
        .iter()
        .enumerate()
        .map(|(i, s)| match s.pairs.iter().find(|(k, _, _)| k == "mac") {
            Some((_, v, _)) => v.parse().ok(),
            None => Some(MacAddress::local(i as u32 + 1)),
        })
        .collect();
    let lookup_node = |f: &Fields<'_>, key: &str, v: &str| -> Result<MacAddress, ConfigError> {
        names
            .iter()
            .position(|n| n == v)
            .and_then(|i| node_macs[i])
            .or_else(|| v.parse().ok())
            .ok_or_else(|| f.err(key, format!("unknown node `{v}`")))
    };
    for (i, s) in node_sections.iter().enumerate() {
        let node = parse_node(s, i, &cfg, base_dir, &lookup_node)?;
        if cfg.node_index(&node.name).is_some() {
            return Err(ConfigError::new(s.line, "name", format!("node `{}` declared twice", node.name)));
        }
        if let Some(other) = macs.insert(node.mac, node.name.clone()) {
            return Err(ConfigError::new(s.line, "mac", format!("{} already used by `{other}`", node.mac)));
        }
        cfg.nodes.push(node);
    }
    for s in of("mobility") {
        parse_mobility(s, &mut cfg)?;
    }
    for s in of("signal") {
        let mut f = Fields::new(s)?;
        let at = time_at(f.duration("t")?.ok_or_else(|| f.err("t", "missing in [signal]"))?);
        let node = node_ref(&mut f, &cfg, "node")?;
        let ap = ap_ref(&mut f, &cfg, "ap")?;
        let dbm: i32 = f.parse("dbm", "an integer")?.ok_or_else(|| f.err("dbm", "missing in [signal]"))?;
        if !(-120..=0).contains(&dbm) {
            return Err(f.err("dbm", "must lie in [-120, 0]"));
        }
        f.finish()?;
        cfg.signals.push(SignalSpec { at, node, ap, dbm });
    }
    for s in of("stream") {
        let mut f = Fields::new(s)?;
        let node = node_ref(&mut f, &cfg, "node")?;
        let cn_ip: Ipv4Addr = f.parse("cn_ip", "an IPv4 address")?.ok_or_else(|| f.err("cn_ip", "missing in [stream]"))?;
        let direction = match f.opt("direction").unwrap_or("down") {
            "down" => Direction::Down,
            "up" => Direction::Up,
            v => return Err(f.err("direction", format!("`{v}` is not up or down"))),
        };
        let interval = f.duration("interval")?.unwrap_or(SimDuration::from_millis(20));
        if interval == SimDuration::ZERO {
            return Err(f.err("interval", "must be positive"));
        }
        let payload: usize = f.parse("payload", "a byte count")?.unwrap_or(160);
        if !(8..=1472).contains(&payload) {
            return Err(f.err("payload", "must lie in [8, 1472]"));
        }
        let start = time_at(f.duration("start")?.unwrap_or(SimDuration::ZERO));
        let end = f.duration("end")?.map(time_at);
        f.finish()?;
        if cfg.streams.iter().any(|o| o.node == node && o.direction == direction) {
            return Err(ConfigError::new(s.line, "node", "one stream per node and direction"));
        }
        cfg.streams.push(StreamSpec { node, cn_ip, direction, interval, payload, start, end });
    }
    cfg.moves.sort_by_key(|m| (m.at, m.node));
    cfg.signals.sort_by_key(|m| (m.at, m.node));

    // Nodes that roam prepare eagerly unless a signal script drives them.
    for (i, n) in cfg.nodes.iter_mut().enumerate() {
        if n.prepare == Prepare::Off && cfg.moves.iter().any(|m| m.node == i) && n.cr && n.malicious.is_none() {
            let scripted = cfg.signals.iter().any(|s| s.node == i);
            n.prepare = if scripted { Prepare::Signal } else { Prepare::Eager };
        }
    }
    validate(&cfg, &sections)?;
    Ok(cfg)
}

/// Reads and parses a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(0, "read", e.to_string()))?;
    parse_scenario(&text, Some(path.parent().unwrap_or(Path::new("."))))
}

fn parse_scenario_section(s: &Section, cfg: &mut ScenarioConfig) -> Result<(), ConfigError> {
    let mut f = Fields::new(s)?;
    if let Some(n) = f.opt("name") {
        cfg.name = n.to_string();
    }
    let prefix_key = if f.map.contains_key("mask") { "mask" } else { "prefix" };
    if let Some(p) = f.parse::<u8>(prefix_key, "a prefix length")? {
        if !(8..=30).contains(&p) {
            return Err(f.err(prefix_key, "must lie in [8, 30]"));
        }
        cfg.prefix = p;
    }
    cfg.duration = f.duration("duration")?;
    if let Some(b) = f.opt("baseline") {
        cfg.baseline = match b {
            "legacy" => Baseline::Legacy,
            "no_relay" => Baseline::NoRelay,
            _ => return Err(f.err("baseline", format!("`{b}` is not legacy or no_relay"))),
        };
    }
    if let Some(t) = f.parse::<usize>("threshold", "a count")? {
        if t < MIN_THRESHOLD {
            return Err(f.err("threshold", format!("must be at least {MIN_THRESHOLD}")));
        }
        cfg.threshold = t;
    }
    if let Some(w) = f.duration("window")? {
        cfg.window = w;
    }
    if let Some(d) = f.duration("request_deadline")? {
        if d == SimDuration::ZERO {
            return Err(f.err("request_deadline", "must be positive"));
        }
        cfg.request_deadline = d;
    }
    if let Some(t) = f.parse::<u8>("max_ttl", "a hop count")? {
        if t == 0 {
            return Err(f.err("max_ttl", "must be at least 1"));
        }
        cfg.max_ttl = t;
    }
    if let Some(d) = f.duration("amn_timeout")? {
        cfg.amn_timeout = d;
    }
    if let Some(d) = f.duration("lease_margin")? {
        cfg.lease_margin = d;
    }
    cfg.spoofing_allowed = f.flag("spoofing", false)?;
    if let Some(d) = f.parse::<i32>("prepare_dbm", "an integer")? {
        cfg.prepare_dbm = d;
    }
    if let Some(d) = f.duration("relay_timeout")? {
        cfg.relay.timeout = d;
    }
    if let Some(d) = f.duration("relay_cooldown")? {
        cfg.relay.cooldown = d;
    }
    if let Some(d) = f.duration("relay_idle")? {
        cfg.relay.idle_timeout = d;
    }
    f.finish()
}

fn parse_subnet(s: &Section, prefix: u8) -> Result<SubnetSpec, ConfigError> {
    let mut f = Fields::new(s)?;
    let id_raw = f.req("id")?;
    let net: Ipv4Addr = id_raw.parse().map_err(|_| f.err("id", format!("`{id_raw}` is not an IPv4 address")))?;
    let id = SubnetId::new(net, prefix).map_err(|e| f.err("id", e.to_string()))?;
    let router: Ipv4Addr = f.parse("router", "an IPv4 address")?.ok_or_else(|| f.err("router", "missing in [subnet]"))?;
    if !id.contains(router, prefix) {
        return Err(f.err("router", format!("{router} is outside {id}/{prefix}")));
    }
    let pool = f.req("pool")?;
    let (a, b) = pool.split_once('-').ok_or_else(|| f.err("pool", "expected FIRST-LAST"))?;
    let first: Ipv4Addr = a.parse().map_err(|_| f.err("pool", format!("`{a}` is not an IPv4 address")))?;
    let last: Ipv4Addr = b.parse().map_err(|_| f.err("pool", format!("`{b}` is not an IPv4 address")))?;
    if !id.contains(first, prefix) || !id.contains(last, prefix) || u32::from(first) > u32::from(last) {
        return Err(f.err("pool", format!("`{pool}` is not a range inside {id}/{prefix}")));
    }
    let broadcast = u32::from(net) | (u32::MAX >> prefix);
    let (lo, hi) = (u32::from(first), u32::from(last));
    if lo == u32::from(net) || hi == broadcast || (lo..=hi).contains(&u32::from(router)) {
        return Err(f.err("pool", "must exclude the network, broadcast and router addresses"));
    }
    let lease = f.duration("lease")?.unwrap_or(crate::dhcp::DEFAULT_LEASE);
    if lease == SimDuration::ZERO {
        return Err(f.err("lease", "must be positive"));
    }
    f.finish()?;
    Ok(SubnetSpec { id, router, pool_first: first, pool_last: last, lease, line: s.line })
}

fn parse_ap(s: &Section, index: usize, cfg: &ScenarioConfig) -> Result<ApSpec, ConfigError> {
    let mut f = Fields::new(s)?;
    let name = f.req("name")?.to_string();
    let bssid = match f.parse::<MacAddress>("bssid", "a MAC address")? {
        Some(m) => m,
        None => MacAddress::local(0x1000 + index as u32),
    };
    if bssid.is_multicast() {
        return Err(f.err("bssid", "must be a unicast address"));
    }
    let channel: u32 = f.parse("channel", "a channel number")?.ok_or_else(|| f.err("channel", "missing in [ap]"))?;
    if !CHANNELS.contains(&channel) {
        return Err(f.err("channel", format!("{channel} is outside 1..=14")));
    }
    let subnet_raw = f.req("subnet")?;
    let subnet = cfg
        .subnets
        .iter()
        .position(|sn| sn.id.to_string() == subnet_raw || sn.id.network().to_string() == subnet_raw)
        .ok_or_else(|| f.err("subnet", format!("no [subnet] with id {subnet_raw}")))?;
    let auth = match f.opt("auth") {
        None => AuthMechanism::Open,
        Some(a) => a.parse().map_err(|e: String| f.err("auth", e))?,
    };
    let bridging = f.duration("bridging")?;
    f.finish()?;
    Ok(ApSpec { name, bssid, channel, subnet, auth, bridging, line: s.line })
}

fn ap_ref<'a>(f: &mut Fields<'a>, cfg: &ScenarioConfig, key: &'a str) -> Result<usize, ConfigError> {
    let v = f.req(key)?;
    cfg.ap_index(v)
        .or_else(|| v.parse::<MacAddress>().ok().and_then(|m| cfg.aps.iter().position(|a| a.bssid == m)))
        .ok_or_else(|| f.err(key, format!("unknown AP `{v}`")))
}

fn ap_list(f: &Fields<'_>, cfg: &ScenarioConfig, key: &str, v: &str) -> Result<Vec<usize>, ConfigError> {
    if v == "all" {
        return Ok((0..cfg.aps.len()).collect());
    }
    v.split(',')
        .filter(|s| !s.is_empty())
        .map(|name| cfg.ap_index(name).ok_or_else(|| f.err(key, format!("unknown AP `{name}`"))))
        .collect()
}

fn node_ref<'a>(f: &mut Fields<'a>, cfg: &ScenarioConfig, key: &'a str) -> Result<usize, ConfigError> {
    let v = f.req(key)?;
    cfg.node_index(v)
        .or_else(|| v.parse::<MacAddress>().ok().and_then(|m| cfg.nodes.iter().position(|n| n.mac == m)))
        .ok_or_else(|| f.err(key, format!("unknown node `{v}`")))
}

fn parse_node(
    s: &Section,
    index: usize,
    cfg: &ScenarioConfig,
    base_dir: Option<&Path>,
    lookup_node: &dyn Fn(&Fields<'_>, &str, &str) -> Result<MacAddress, ConfigError>,
) -> Result<NodeSpec, ConfigError> {
    let mut f = Fields::new(s)?;
    let name = f.req("name")?.to_string();
    let mac = match f.parse::<MacAddress>("mac", "a MAC address")? {
        Some(m) => m,
        None => MacAddress::local(index as u32 + 1),
    };
    if mac.is_multicast() {
        return Err(f.err("mac", "must be a unicast address"));
    }
    let ap = ap_ref(&mut f, cfg, "ap")?;
    let cr = f.flag("cr", true)?;
    let assist = f.flag("assist", cr)?;
    let relay = f.flag("relay", false)?;
    let harvest = f.flag("harvest", false)?;
    let knows = match f.opt("knows") {
        None => Vec::new(),
        Some(v) => ap_list(&f, cfg, "knows", v)?,
    };
    let cache = match f.opt("cache") {
        None => None,
        Some(p) => {
            let dir = base_dir.ok_or_else(|| f.err("cache", "cache files need a scenario loaded from disk"))?;
            let path = dir.join(p);
            let text = std::fs::read_to_string(&path).map_err(|e| f.err("cache", format!("{}: {e}", path.display())))?;
            Some(Cache::from_snapshot(&text, SimTime::ZERO).map_err(|e| f.err("cache", format!("{}: {e}", path.display())))?)
        }
    };
    let prepare = match f.opt("prepare") {
        None => Prepare::Off,
        Some("eager") => Prepare::Eager,
        Some("signal") => Prepare::Signal,
        Some("off") => Prepare::Off,
        Some(v) => return Err(f.err("prepare", format!("`{v}` is not eager, signal or off"))),
    };
    let malicious = match f.opt("malicious") {
        None => None,
        Some(k) => {
            let kind: AdversaryKind = k.parse().map_err(|e: String| f.err("malicious", e))?;
            let mut p = MaliciousProfile::new(kind);
            if let Some(r) = f.parse::<f64>("rate", "a number")? {
                if !(r.is_finite() && r > 0.0) {
                    return Err(f.err("rate", "must be positive"));
                }
                p.rate = r;
            }
            if let Some(v) = f.opt("target") {
                p.victim = Some(lookup_node(&f, "target", v)?);
            }
            if let Some(v) = f.opt("spoof") {
                p.spoof_as = Some(lookup_node(&f, "spoof", v)?);
            }
            if let Some(v) = f.opt("rn") {
                p.rn = Some(lookup_node(&f, "rn", v)?);
            }
            if let Some(v) = f.opt("lie_about") {
                p.lie_about = ap_list(&f, cfg, "lie_about", v)?.into_iter().map(|i| cfg.aps[i].bssid).collect();
            }
            if kind.forges_info() && p.victim.is_none() {
                return Err(f.err("target", format!("{kind} needs a target node")));
            }
            if kind == AdversaryKind::Spoofer && p.spoof_as.is_none() {
                return Err(f.err("spoof", "spoofer needs a node to impersonate"));
            }
            if kind == AdversaryKind::RelayAbuser && p.rn.is_none() {
                return Err(f.err("rn", "relay_abuser needs an rn"));
            }
            Some(p)
        }
    };
    if malicious.is_none() {
        for key in ["rate", "target", "spoof", "rn", "lie_about"] {
            if f.map.contains_key(key) {
                return Err(f.err(key, "only valid together with malicious="));
            }
        }
    }
    f.finish()?;
    Ok(NodeSpec { name, mac, ap, cr, assist, relay, harvest, knows, cache, malicious, prepare, line: s.line })
}

fn parse_mobility(s: &Section, cfg: &mut ScenarioConfig) -> Result<(), ConfigError> {
    let mut f = Fields::new(s)?;
    let node = node_ref(&mut f, cfg, "node")?;
    if f.map.contains_key("t") {
        let at = time_at(f.duration("t")?.expect("present"));
        let ap = ap_ref(&mut f, cfg, "ap")?;
        f.finish()?;
        cfg.moves.push(MoveSpec { at, node, ap });
        return Ok(());
    }
    let start = f.duration("start")?.ok_or_else(|| f.err("start", "a move needs t= or start=/period=/count="))?;
    let period = f.duration("period")?.ok_or_else(|| f.err("period", "missing in [mobility]"))?;
    if period == SimDuration::ZERO {
        return Err(f.err("period", "must be positive"));
    }
    let count: u32 = f.parse("count", "a count")?.ok_or_else(|| f.err("count", "missing in [mobility]"))?;
    let aps_raw = f.req("aps")?;
    let aps = ap_list(&f, cfg, "aps", aps_raw)?;
    if aps.is_empty() {
        return Err(f.err("aps", "needs at least one AP"));
    }
    f.finish()?;
    let mut at = time_at(start);
    for k in 0..count as usize {
        cfg.moves.push(MoveSpec { at, node, ap: aps[k % aps.len()] });
        at += period;
    }
    Ok(())
}

fn validate(cfg: &ScenarioConfig, sections: &[Section]) -> Result<(), ConfigError> {
    let line0 = sections.first().map_or(1, |s| s.line);
    if cfg.subnets.is_empty() {
        return Err(ConfigError::new(line0, "subnet", "at least one [subnet] is required"));
    }
    if cfg.aps.is_empty() {
        return Err(ConfigError::new(line0, "ap", "at least one [ap] is required"));
    }
    if let Some(d) = cfg.duration {
        if d == SimDuration::ZERO {
            return Err(ConfigError::new(line0, "duration", "must be positive"));
        }
    }
    for n in &cfg.nodes {
        if let Some(p) = &n.malicious {
            if p.victim == Some(n.mac) || p.spoof_as == Some(n.mac) || p.rn == Some(n.mac) {
                return Err(ConfigError::new(n.line, "malicious", "an adversary cannot target itself"));
            }
        }
    }
    for s in &cfg.streams {
        if cfg.nodes[s.node].malicious.is_some() && s.direction == Direction::Down {
            return Err(ConfigError::new(line0, "stream", "malicious nodes may only send"));
        }
    }
    Ok(())
}
