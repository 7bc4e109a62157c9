//! Latency distributions for each handoff component.
//!
//! Every component is drawn from its own distribution. A plain number in a
//! scenario file means a normal distribution truncated at zero with that mean
//! and the model's default coefficient of variation; other forms are
//! `fixed:MS`, `tn:MEAN:CV`, `lognormal:MEAN:CV` and `replay:A,B,C` (samples
//! used verbatim, cycling).

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::protocol::{Component, DelaySource};
use crate::relay::AuthMechanism;
use crate::time::{parse_millis, SimDuration};

/// Per-run L2 handoff samples (ms) for the three L2 strategies, ten runs each.
pub const TABLE_FULL_SCAN: [f64; 10] = [457.8, 236.8, 434.8, 317.0, 566.7, 321.6, 241.0, 364.0, 216.7, 273.9];
pub const TABLE_SELECTIVE_SCAN: [f64; 10] = [140.3, 101.1, 141.7, 141.9, 141.3, 139.7, 143.4, 94.7, 142.9, 101.5];
pub const TABLE_CACHE: [f64; 10] = [2.7, 2.4, 4.2, 3.7, 4.4, 2.6, 2.6, 2.3, 2.7, 2.9];

pub const DEFAULT_CV: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub enum Dist {
    Fixed(f64),
    TruncNormal { mean: f64, cv: f64 },
    LogNormal { mean: f64, cv: f64 },
    Replay(Vec<f64>),
}

impl Dist {
    pub fn mean(&self) -> f64 {
        match self {
            Dist::Fixed(v) => *v,
            Dist::TruncNormal { mean, .. } | Dist::LogNormal { mean, .. } => *mean,
            Dist::Replay(v) => v.iter().sum::<f64>() / v.len() as f64,
        }
    }

    /// Draws one value in ms. `cursor` tracks the position of a replay.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, cursor: &mut usize) -> f64 {
        match self {
            Dist::Fixed(v) => *v,
            Dist::TruncNormal { mean, cv } => {
                let sd = mean * cv;
                if sd <= 0.0 {
                    return *mean;
                }
                let n = Normal::new(*mean, sd).expect("finite parameters");
                for _ in 0..64 {
                    let x = n.sample(rng);
                    if x >= 0.0 {
                        return x;
                    }
                }
                0.0
            }
            Dist::LogNormal { mean, cv } => {
                if *cv <= 0.0 || *mean <= 0.0 {
                    return mean.max(0.0);
                }
                let sigma2 = (1.0 + cv * cv).ln();
                let mu = mean.ln() - sigma2 / 2.0;
                LogNormal::new(mu, sigma2.sqrt()).expect("finite parameters").sample(rng)
            }
            Dist::Replay(v) => {
                let x = v[*cursor % v.len()];
                *cursor += 1;
                x
            }
        }
    }

    pub fn parse(s: &str, default_cv: f64) -> Result<Dist, String> {
        let num = |t: &str| -> Result<f64, String> {
            let v: f64 = t.parse().map_err(|_| format!("`{t}` is not a number"))?;
            if !v.is_finite() || v < 0.0 {
                return Err(format!("`{t}` must be a non-negative number"));
            }
            Ok(v)
        };
        let parts: Vec<&str> = s.split(':').collect();
        let dist = match parts.as_slice() {
            [v] => Dist::TruncNormal { mean: num(v)?, cv: default_cv },
            ["fixed", v] => Dist::Fixed(num(v)?),
            ["tn", m, c] => Dist::TruncNormal { mean: num(m)?, cv: num(c)? },
            ["lognormal", m, c] => Dist::LogNormal { mean: num(m)?, cv: num(c)? },
            ["replay", list] => {
                let v = list.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
                if v.is_empty() {
                    return Err("replay needs at least one sample".into());
                }
                Dist::Replay(v)
            }
            _ => return Err(format!("cannot parse distribution `{s}`")),
        };
        Ok(dist)
    }
}

impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dist::Fixed(v) => write!(f, "fixed:{v}"),
            Dist::TruncNormal { mean, cv } => write!(f, "tn:{mean}:{cv}"),
            Dist::LogNormal { mean, cv } => write!(f, "lognormal:{mean}:{cv}"),
            Dist::Replay(v) => {
                let s: Vec<String> = v.iter().map(f64::to_string).collect();
                write!(f, "replay:{}", s.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayModel {
    components: BTreeMap<Component, Dist>,
    pub default_cv: f64,
    /// Share of authentication spent exchanging credentials; the rest is
    /// the session-key exchange.
    pub auth_split: f64,
    /// Switch learning delay after a station shows up on a new port.
    pub bridging: SimDuration,
    pub link_latency: SimDuration,
    pub redirect_latency: SimDuration,
}

fn tn(mean: f64) -> Dist {
    Dist::TruncNormal { mean, cv: DEFAULT_CV }
}

impl Default for DelayModel {
    fn default() -> Self {
        let mut components = BTreeMap::new();
        components.insert(Component::FullScan, tn(343.0));
        components.insert(Component::SelectiveScan, tn(128.9));
        components.insert(Component::OpenAuthAssoc, tn(4.2));
        components.insert(Component::AssocTimeout, Dist::Fixed(100.0));
        components.insert(Component::Auth(AuthMechanism::Open), Dist::Fixed(0.0));
        // Totals of a full 802.11i handoff minus the 15.6 ms of L2 + L3.
        components.insert(Component::Auth(AuthMechanism::EapTls1024), tn(1564.4));
        components.insert(Component::Auth(AuthMechanism::EapTls2048), tn(1653.4));
        components.insert(Component::Auth(AuthMechanism::PeapMschapv2), tn(1515.4));
        components.insert(Component::Dhcp, Dist::LogNormal { mean: 867.0, cv: DEFAULT_CV });
        components.insert(Component::L3Signaling, tn(6.84));
        components.insert(Component::L3Polling, tn(4.56));
        components.insert(Component::FirstPacket, tn(5.4));
        DelayModel {
            components,
            default_cv: DEFAULT_CV,
            auth_split: 0.8,
            bridging: SimDuration::from_millis(10),
            link_latency: SimDuration::from_millis(1),
            redirect_latency: SimDuration::ZERO,
        }
    }
}

fn component_by_name(name: &str) -> Option<Component> {
    let c = match name {
        "full_scan" => Component::FullScan,
        "selective_scan" => Component::SelectiveScan,
        "open_auth_assoc" => Component::OpenAuthAssoc,
        "assoc_timeout" => Component::AssocTimeout,
        "dhcp" => Component::Dhcp,
        "l3_signaling" => Component::L3Signaling,
        "l3_polling" => Component::L3Polling,
        "first_packet" => Component::FirstPacket,
        _ => {
            let mech = name.strip_prefix("auth.")?;
            Component::Auth(mech.parse().ok()?)
        }
    };
    Some(c)
}

/// `300`, `300ms` or `1.5s`.
pub fn parse_duration(s: &str) -> Option<SimDuration> {
    if let Some(secs) = s.strip_suffix("ms") {
        return parse_millis(secs);
    }
    if let Some(secs) = s.strip_suffix('s') {
        let v: f64 = secs.parse().ok()?;
        if !v.is_finite() || v < 0.0 {
            return None;
        }
        return Some(SimDuration::from_millis_f64(v * 1000.0));
    }
    parse_millis(s)
}

impl DelayModel {
    /// Scan and association times replayed from measured per-run samples.
    pub fn measured_replay() -> Self {
        let mut m = DelayModel::default();
        m.components.insert(Component::FullScan, Dist::Replay(TABLE_FULL_SCAN.to_vec()));
        m.components.insert(Component::SelectiveScan, Dist::Replay(TABLE_SELECTIVE_SCAN.to_vec()));
        m.components.insert(Component::OpenAuthAssoc, Dist::Replay(TABLE_CACHE.to_vec()));
        m
    }

    pub fn dist(&self, c: Component) -> &Dist {
        self.components.get(&c).expect("every component has a distribution")
    }

    pub fn set_dist(&mut self, c: Component, d: Dist) {
        self.components.insert(c, d);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Component, &Dist)> {
        self.components.iter()
    }

    /// Applies one `key=value` setting from a scenario file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let dur = |v: &str| parse_duration(v).ok_or_else(|| format!("`{v}` is not a duration"));
        match key {
            "mode" => match value {
                "model" => {}
                "replay" => {
                    let keep = self.clone();
                    *self = DelayModel::measured_replay();
                    self.default_cv = keep.default_cv;
                    self.auth_split = keep.auth_split;
                    self.bridging = keep.bridging;
                    self.link_latency = keep.link_latency;
                    self.redirect_latency = keep.redirect_latency;
                }
                other => return Err(format!("unknown delay mode `{other}`")),
            },
            "cv" => {
                let cv: f64 = value.parse().map_err(|_| format!("`{value}` is not a number"))?;
                if !cv.is_finite() || cv < 0.0 {
                    return Err("cv must be non-negative".into());
                }
                self.default_cv = cv;
                for d in self.components.values_mut() {
                    if let Dist::TruncNormal { cv: c, .. } | Dist::LogNormal { cv: c, .. } = d {
                        *c = cv;
                    }
                }
            }
            "auth_split" => {
                let v: f64 = value.parse().map_err(|_| format!("`{value}` is not a number"))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err("auth_split must lie in [0, 1]".into());
                }
                self.auth_split = v;
            }
            "bridging" => self.bridging = dur(value)?,
            "link_latency" => self.link_latency = dur(value)?,
            "redirect_latency" => self.redirect_latency = dur(value)?,
            "l3" => {
                // Total L3 time, split 60/40 into signaling and polling.
                let Dist::TruncNormal { mean, cv } = Dist::parse(value, self.default_cv)? else {
                    return Err("l3 takes a plain mean".into());
                };
                self.components.insert(Component::L3Signaling, Dist::TruncNormal { mean: mean * 0.6, cv });
                self.components.insert(Component::L3Polling, Dist::TruncNormal { mean: mean * 0.4, cv });
            }
            _ => {
                let c = component_by_name(key).ok_or_else(|| format!("unknown delay `{key}`"))?;
                self.components.insert(c, Dist::parse(value, self.default_cv)?);
            }
        }
        Ok(())
    }
}

/// A delay model bound to a random stream and replay cursors.
#[derive(Debug, Clone)]
pub struct DelaySampler {
    pub model: DelayModel,
    rng: ChaCha8Rng,
    cursors: BTreeMap<Component, usize>,
}

impl DelaySampler {
    pub fn new(model: DelayModel, rng: ChaCha8Rng) -> Self {
        DelaySampler { model, rng, cursors: BTreeMap::new() }
    }

    pub fn sample_ms(&mut self, c: Component) -> f64 {
        let cursor = self.cursors.entry(c).or_insert(0);
        self.model.dist(c).sample(&mut self.rng, cursor)
    }
}

impl DelaySource for DelaySampler {
    fn sample(&mut self, c: Component) -> SimDuration {
        SimDuration::from_millis_f64(self.sample_ms(c))
    }
}
