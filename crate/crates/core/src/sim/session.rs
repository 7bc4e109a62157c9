//! Correspondent-side session state and per-packet stream accounting.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::time::SimTime;
use crate::wire::MacAddress;

/// Where the correspondent sends a mobile node's packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Endpoint {
    Direct { ip: Ipv4Addr },
    /// Through a relay node, which forwards over the air.
    ViaRelay { rn: MacAddress },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("no stream for {0}")]
    UnknownStream(MacAddress),
    #[error("redirect for {0} names no endpoint")]
    NoEndpoint(MacAddress),
}

/// The correspondent's view: one session per mobile node. A session may
/// fan out to several endpoints while a handoff is in progress.
#[derive(Debug, Clone, Default)]
pub struct SessionController {
    sessions: BTreeMap<MacAddress, Vec<Endpoint>>,
}

impl SessionController {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&mut self, mn: MacAddress, initial: Endpoint) {
        self.sessions.insert(mn, vec![initial]);
    }

    pub fn targets(&self, mn: &MacAddress) -> Option<&[Endpoint]> {
        self.sessions.get(mn).map(Vec::as_slice)
    }

    /// Replaces the endpoints of `mn`'s session.
    pub fn session_redirect(&mut self, mn: MacAddress, targets: &[Endpoint]) -> Result<(), SessionError> {
        let s = self.sessions.get_mut(&mn).ok_or(SessionError::UnknownStream(mn))?;
        if targets.is_empty() {
            return Err(SessionError::NoEndpoint(mn));
        }
        let mut v = targets.to_vec();
        v.sort();
        v.dedup();
        *s = v;
        Ok(())
    }

    /// Adds an endpoint, keeping the existing ones.
    pub fn fan_out(&mut self, mn: MacAddress, extra: Endpoint) -> Result<(), SessionError> {
        let mut v = self.targets(&mn).ok_or(SessionError::UnknownStream(mn))?.to_vec();
        v.push(extra);
        self.session_redirect(mn, &v)
    }
}

/// Payload of packet `seq`: the sequence number followed by a pattern
/// derived from it, so a corrupted copy is detectable.
pub fn payload_for(seq: u64, size: usize) -> Vec<u8> {
    let mut p = Vec::with_capacity(size);
    p.extend_from_slice(&seq.to_be_bytes());
    let mut x = seq as u8;
    while p.len() < size {
        x = x.wrapping_mul(31).wrapping_add(7);
        p.push(x);
    }
    p.truncate(size.max(8));
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PacketState {
    sent_at: SimTime,
    copies: u32,
    delivered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamStats {
    pub sent: u64,
    pub received: u64,
    pub lost: u64,
    pub in_flight: u64,
    pub duplicates: u64,
    pub corrupted: u64,
}

/// Accounting for one constant-bit-rate stream. Every copy of a packet is
/// tracked until it is delivered or dropped; a packet is lost once no copy
/// is left and none arrived.
#[derive(Debug, Clone, Default)]
pub struct StreamLedger {
    packets: Vec<PacketState>,
    duplicates: u64,
    corrupted: u64,
}

impl StreamLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers packet `seq` leaving the source as `copies` copies.
    pub fn sent(&mut self, seq: u64, at: SimTime, copies: u32) {
        debug_assert_eq!(seq as usize, self.packets.len());
        self.packets.push(PacketState { sent_at: at, copies, delivered: false });
    }

    pub fn next_seq(&self) -> u64 {
        self.packets.len() as u64
    }

    pub fn add_copy(&mut self, seq: u64) {
        self.packets[seq as usize].copies += 1;
    }

    pub fn dropped(&mut self, seq: u64) {
        let p = &mut self.packets[seq as usize];
        p.copies = p.copies.saturating_sub(1);
    }

    /// A copy reached the application. Returns `true` for the first copy.
    pub fn arrived(&mut self, seq: u64, payload: &[u8], expected_len: usize) -> bool {
        if payload != payload_for(seq, expected_len).as_slice() {
            self.corrupted += 1;
        }
        let p = &mut self.packets[seq as usize];
        p.copies = p.copies.saturating_sub(1);
        if p.delivered {
            self.duplicates += 1;
            return false;
        }
        p.delivered = true;
        true
    }

    pub fn stats(&self) -> StreamStats {
        let mut s = StreamStats { duplicates: self.duplicates, corrupted: self.corrupted, ..Default::default() };
        for p in &self.packets {
            s.sent += 1;
            if p.delivered {
                s.received += 1;
            } else if p.copies > 0 {
                s.in_flight += 1;
            } else {
                s.lost += 1;
            }
        }
        s
    }

    /// Lost packets sent in `[from, to)`.
    pub fn lost_between(&self, from: SimTime, to: SimTime) -> u64 {
        self.packets.iter().filter(|p| !p.delivered && p.copies == 0 && p.sent_at >= from && p.sent_at < to).count() as u64
    }
}
