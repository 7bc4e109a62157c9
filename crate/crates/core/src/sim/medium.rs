//! Who hears what.
//!
//! Radio frames reach every station tuned to the sender's channel; a ToDS
//! frame is also taken by the AP it names. Multicast datagrams travel
//! through the wired network and reach connected stations whose subnet lies
//! fewer than TTL hops away.

use crate::wire::{FrameHeader, FrameKind, MacAddress};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Station {
    pub mac: MacAddress,
    /// `None` while scanning or unassociated.
    pub channel: Option<u32>,
    /// Subnet position, used as hop index.
    pub hop: Option<usize>,
    /// Holds an address and an authorized port.
    pub connected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transmission {
    Frame { header: FrameHeader, channel: u32 },
    Multicast { sender: MacAddress, hop: usize, ttl: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Visibility {
    pub stations: Vec<MacAddress>,
    /// AP that takes the frame into the distribution system.
    pub ap: Option<MacAddress>,
}

pub fn hop_distance(a: usize, b: usize) -> usize {
    a.abs_diff(b)
}

/// TTL 1 stays inside the sender's subnet; each extra unit reaches one
/// subnet further.
pub fn in_scope(sender_hop: usize, receiver_hop: usize, ttl: u8) -> bool {
    hop_distance(sender_hop, receiver_hop) < ttl as usize
}

pub fn medium_visibility(tx: &Transmission, stations: &[Station]) -> Visibility {
    match *tx {
        Transmission::Frame { header, channel } => {
            let sender = header.source();
            let hearers = stations
                .iter()
                .filter(|s| Some(s.mac) != sender && s.channel == Some(channel))
                .map(|s| s.mac)
                .collect();
            let ap = match header.kind() {
                FrameKind::ToAp => header.bssid(),
                _ => None,
            };
            Visibility { stations: hearers, ap }
        }
        Transmission::Multicast { sender, hop, ttl } => {
            let stations = stations
                .iter()
                .filter(|s| s.mac != sender && s.connected && s.hop.is_some_and(|h| in_scope(hop, h, ttl)))
                .map(|s| s.mac)
                .collect();
            Visibility { stations, ap: None }
        }
    }
}
