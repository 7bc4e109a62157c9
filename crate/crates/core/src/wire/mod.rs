//! Byte-level encoding of cooperative-roaming messages.
//!
//! Every message starts with a fixed 9-byte header followed by the
//! kind-specific fields in declaration order. Integers are big-endian.
//!
//! ```text
//! +--------+-------------------+-------------+------------------------+
//! | tag(1) | sender MAC (6)    | count (2)   | body ...               |
//! +--------+-------------------+-------------+------------------------+
//! ```
//!
//! `count` is the number of 14-byte cache entries at the end of the body and
//! must be zero for kinds that carry no entries. The entry region is bounded
//! by the UDP payload available in a 1500-byte MTU (1472 bytes), which caps a
//! message at [`MAX_ENTRIES`] entries. UDP/IP headers are not produced here.
//!
//! See `docs/wire-format.md` for the full layout of each kind.

mod addr;
mod frame;

use std::net::Ipv4Addr;

use thiserror::Error;

pub use addr::{AddrParseError, MacAddress, SubnetId};
pub use frame::{classify_frame, FrameError, FrameHeader, FrameKind};

/// Serialized size of one cache entry: BSSID (6) + channel (4) + subnet (4).
pub const ENTRY_SIZE: usize = 14;
/// UDP payload available under a 1500-byte MTU after 28 bytes of IP+UDP.
pub const MAX_ENTRY_PAYLOAD: usize = 1500 - 28;
/// Largest number of entries an INFOREQ/INFORESP may carry.
pub const MAX_ENTRIES: usize = MAX_ENTRY_PAYLOAD / ENTRY_SIZE;
/// Tag + sender MAC + entry count.
pub const HEADER_SIZE: usize = 1 + 6 + 2;
/// Valid 2.4 GHz band-plan channels.
pub const CHANNELS: std::ops::RangeInclusive<u32> = 1..=14;

pub mod tag {
    pub const INFO_REQ: u8 = 0x01;
    pub const INFO_RESP: u8 = 0x02;
    pub const AMN_DISCOVER: u8 = 0x03;
    pub const AMN_RESP: u8 = 0x04;
    pub const IP_REQ: u8 = 0x05;
    pub const IP_RESP: u8 = 0x06;
    pub const RELAY_REQ: u8 = 0x07;
    pub const INFO_ALERT: u8 = 0x08;
}

const AMN_FLAG_CAN_RELAY: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("{count} entries exceed the {max}-entry capacity", max = MAX_ENTRIES)]
    CapacityExceeded { count: usize },
    #[error("invalid field: {0}")]
    InvalidField(&'static str),
    #[error("truncated: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
}

/// One AP as carried in INFOREQ/INFORESP: `{BSSID, channel, subnet ID}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheEntry {
    pub bssid: MacAddress,
    pub channel: u32,
    pub subnet_id: SubnetId,
}

impl CacheEntry {
    pub fn new(bssid: MacAddress, channel: u32, subnet_id: SubnetId) -> Self {
        CacheEntry { bssid, channel, subnet_id }
    }

    pub fn validate(&self) -> Result<(), WireError> {
        if self.bssid.is_multicast() {
            return Err(WireError::InvalidField("bssid has the group bit set"));
        }
        if !CHANNELS.contains(&self.channel) {
            return Err(WireError::InvalidField("channel outside band plan"));
        }
        Ok(())
    }
}

/// A cooperative-roaming message with the identity of its sender.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub sender: MacAddress,
    pub body: MessageBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessageBody {
    /// Multicast request carrying the requester's whole cache.
    InfoReq { entries: Vec<CacheEntry> },
    /// Multicast answer to `target`'s INFOREQ with the entries it lacks.
    InfoResp { target: MacAddress, entries: Vec<CacheEntry> },
    /// Looks for assisting nodes inside `subnet_id`.
    AmnDiscover { subnet_id: SubnetId },
    /// Unicast reply from an assisting node; the sender is the A-MN.
    /// `ap` is the responder's current BSSID, used to pick relay nodes.
    AmnResp { amn_ip: Ipv4Addr, router_ip: Ipv4Addr, ap: MacAddress, can_relay: bool },
    /// Unicast request asking an A-MN to acquire an address for `rmn_mac`.
    IpReq { rmn_mac: MacAddress },
    /// Multicast result of a proxy acquisition.
    IpResp { rmn_mac: MacAddress, new_ip: Ipv4Addr, router_ip: Ipv4Addr },
    /// Multicast relay registration, sent while still on the old AP.
    RelayReq {
        mn_mac: MacAddress,
        mn_ip: Ipv4Addr,
        cn_ip: Ipv4Addr,
        rn_mac: MacAddress,
        rn_ip: Ipv4Addr,
    },
    /// Multicast accusation naming a suspect.
    InfoAlert { suspect: MacAddress },
}

impl MessageBody {
    pub fn tag(&self) -> u8 {
        match self {
            MessageBody::InfoReq { .. } => tag::INFO_REQ,
            MessageBody::InfoResp { .. } => tag::INFO_RESP,
            MessageBody::AmnDiscover { .. } => tag::AMN_DISCOVER,
            MessageBody::AmnResp { .. } => tag::AMN_RESP,
            MessageBody::IpReq { .. } => tag::IP_REQ,
            MessageBody::IpResp { .. } => tag::IP_RESP,
            MessageBody::RelayReq { .. } => tag::RELAY_REQ,
            MessageBody::InfoAlert { .. } => tag::INFO_ALERT,
        }
    }

    /// Upper-case protocol name, as used in traces.
    pub fn kind_name(&self) -> &'static str {
        match self {
            MessageBody::InfoReq { .. } => "INFOREQ",
            MessageBody::InfoResp { .. } => "INFORESP",
            MessageBody::AmnDiscover { .. } => "AMN_DISCOVER",
            MessageBody::AmnResp { .. } => "AMN_RESP",
            MessageBody::IpReq { .. } => "IP_REQ",
            MessageBody::IpResp { .. } => "IP_RESP",
            MessageBody::RelayReq { .. } => "RELAY_REQ",
            MessageBody::InfoAlert { .. } => "INFOALERT",
        }
    }

    pub fn entries(&self) -> &[CacheEntry] {
        match self {
            MessageBody::InfoReq { entries } | MessageBody::InfoResp { entries, .. } => entries,
            _ => &[],
        }
    }
}

impl Message {
    pub fn new(sender: MacAddress, body: MessageBody) -> Self {
        Message { sender, body }
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        encode(self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        decode(bytes)
    }
}

fn check_unicast(mac: &MacAddress, what: &'static str) -> Result<(), WireError> {
    if mac.is_multicast() {
        Err(WireError::InvalidField(what))
    } else {
        Ok(())
    }
}

/// Serializes `msg` into its wire form.
pub fn encode(msg: &Message) -> Result<Vec<u8>, WireError> {
    check_unicast(&msg.sender, "sender has the group bit set")?;
    let entries = msg.body.entries();
    if entries.len() > MAX_ENTRIES {
        return Err(WireError::CapacityExceeded { count: entries.len() });
    }
    for e in entries {
        e.validate()?;
    }

    let mut out = Vec::with_capacity(HEADER_SIZE + 6 + entries.len() * ENTRY_SIZE);
    out.push(msg.body.tag());
    out.extend_from_slice(&msg.sender.octets());
    out.extend_from_slice(&(entries.len() as u16).to_be_bytes());

    match &msg.body {
        MessageBody::InfoReq { .. } => {}
        MessageBody::InfoResp { target, .. } => {
            check_unicast(target, "target has the group bit set")?;
            out.extend_from_slice(&target.octets());
        }
        MessageBody::AmnDiscover { subnet_id } => {
            out.extend_from_slice(&subnet_id.network().octets());
        }
        MessageBody::AmnResp { amn_ip, router_ip, ap, can_relay } => {
            check_unicast(ap, "ap has the group bit set")?;
            out.extend_from_slice(&amn_ip.octets());
            out.extend_from_slice(&router_ip.octets());
            out.extend_from_slice(&ap.octets());
            out.push(if *can_relay { AMN_FLAG_CAN_RELAY } else { 0 });
        }
        MessageBody::IpReq { rmn_mac } => {
            check_unicast(rmn_mac, "rmn_mac has the group bit set")?;
            out.extend_from_slice(&rmn_mac.octets());
        }
        MessageBody::IpResp { rmn_mac, new_ip, router_ip } => {
            check_unicast(rmn_mac, "rmn_mac has the group bit set")?;
            out.extend_from_slice(&rmn_mac.octets());
            out.extend_from_slice(&new_ip.octets());
            out.extend_from_slice(&router_ip.octets());
        }
        MessageBody::RelayReq { mn_mac, mn_ip, cn_ip, rn_mac, rn_ip } => {
            check_unicast(mn_mac, "mn_mac has the group bit set")?;
            check_unicast(rn_mac, "rn_mac has the group bit set")?;
            out.extend_from_slice(&mn_mac.octets());
            out.extend_from_slice(&mn_ip.octets());
            out.extend_from_slice(&cn_ip.octets());
            out.extend_from_slice(&rn_mac.octets());
            out.extend_from_slice(&rn_ip.octets());
        }
        MessageBody::InfoAlert { suspect } => {
            check_unicast(suspect, "suspect has the group bit set")?;
            out.extend_from_slice(&suspect.octets());
        }
    }

    for e in entries {
        out.extend_from_slice(&e.bssid.octets());
        out.extend_from_slice(&e.channel.to_be_bytes());
        out.extend_from_slice(&e.subnet_id.network().octets());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated { needed: n - self.buf.len() });
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn mac(&mut self) -> Result<MacAddress, WireError> {
        let b = self.take(6)?;
        Ok(MacAddress::new([b[0], b[1], b[2], b[3], b[4], b[5]]))
    }

    fn unicast(&mut self, what: &'static str) -> Result<MacAddress, WireError> {
        let m = self.mac()?;
        check_unicast(&m, what)?;
        Ok(m)
    }

    fn ipv4(&mut self) -> Result<Ipv4Addr, WireError> {
        Ok(Ipv4Addr::from(self.u32()?))
    }
}

/// Parses one message. Rejects trailing bytes, so for every valid message
/// `decode(&encode(m)?) == Ok(m)`.
pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    let mut r = Reader { buf: bytes };
    let tag = r.u8()?;
    if !(tag::INFO_REQ..=tag::INFO_ALERT).contains(&tag) {
        return Err(WireError::UnknownTag(tag));
    }
    let sender = r.unicast("sender has the group bit set")?;
    let count = r.u16()? as usize;
    let carries_entries = matches!(tag, tag::INFO_REQ | tag::INFO_RESP);
    if count > MAX_ENTRIES {
        return Err(WireError::CapacityExceeded { count });
    }
    if !carries_entries && count != 0 {
        return Err(WireError::InvalidField("entry count on a kind without entries"));
    }

    let body = match tag {
        tag::INFO_REQ => MessageBody::InfoReq { entries: Vec::new() },
        tag::INFO_RESP => MessageBody::InfoResp {
            target: r.unicast("target has the group bit set")?,
            entries: Vec::new(),
        },
        tag::AMN_DISCOVER => MessageBody::AmnDiscover { subnet_id: SubnetId::from_network(r.ipv4()?) },
        tag::AMN_RESP => {
            let amn_ip = r.ipv4()?;
            let router_ip = r.ipv4()?;
            let ap = r.unicast("ap has the group bit set")?;
            let flags = r.u8()?;
            if flags & !AMN_FLAG_CAN_RELAY != 0 {
                return Err(WireError::InvalidField("unknown AMN_RESP flag bits"));
            }
            MessageBody::AmnResp { amn_ip, router_ip, ap, can_relay: flags & AMN_FLAG_CAN_RELAY != 0 }
        }
        tag::IP_REQ => MessageBody::IpReq { rmn_mac: r.unicast("rmn_mac has the group bit set")? },
        tag::IP_RESP => MessageBody::IpResp {
            rmn_mac: r.unicast("rmn_mac has the group bit set")?,
            new_ip: r.ipv4()?,
            router_ip: r.ipv4()?,
        },
        tag::RELAY_REQ => MessageBody::RelayReq {
            mn_mac: r.unicast("mn_mac has the group bit set")?,
            mn_ip: r.ipv4()?,
            cn_ip: r.ipv4()?,
            rn_mac: r.unicast("rn_mac has the group bit set")?,
            rn_ip: r.ipv4()?,
        },
        tag::INFO_ALERT => MessageBody::InfoAlert { suspect: r.unicast("suspect has the group bit set")? },
        _ => unreachable!("tag range checked above"),
    };

    let body = if carries_entries {
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let e = CacheEntry {
                bssid: r.mac()?,
                channel: r.u32()?,
                subnet_id: SubnetId::from_network(r.ipv4()?),
            };
            e.validate()?;
            entries.push(e);
        }
        match body {
            MessageBody::InfoReq { .. } => MessageBody::InfoReq { entries },
            MessageBody::InfoResp { target, .. } => MessageBody::InfoResp { target, entries },
            other => other,
        }
    } else {
        body
    };

    if !r.buf.is_empty() {
        return Err(WireError::TrailingBytes(r.buf.len()));
    }
    Ok(Message { sender, body })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig3_entry() -> CacheEntry {
        CacheEntry::new(MacAddress::local(0xA), 6, "160.39.5.0".parse().unwrap())
    }

    fn entries(n: usize) -> Vec<CacheEntry> {
        (0..n)
            .map(|i| CacheEntry::new(MacAddress::local(i as u32), 1 + (i as u32 % 14), "10.0.0.0".parse().unwrap()))
            .collect()
    }

    #[test]
    fn capacity_constants() {
        assert_eq!(ENTRY_SIZE, 6 + 4 + 4);
        // floor((1500 - 28) / 14)
        assert_eq!(MAX_ENTRIES, 105);
    }

    const _: () = assert!(MAX_ENTRIES * ENTRY_SIZE <= MAX_ENTRY_PAYLOAD);
    const _: () = assert!((MAX_ENTRIES + 1) * ENTRY_SIZE > MAX_ENTRY_PAYLOAD);

    #[test]
    fn single_entry_inforeq_layout() {
        let msg = Message::new(MacAddress::local(1), MessageBody::InfoReq { entries: vec![fig3_entry()] });
        let bytes = msg.encode().unwrap();
        assert_eq!(bytes.len(), HEADER_SIZE + ENTRY_SIZE);
        assert_eq!(&bytes[HEADER_SIZE + 6..HEADER_SIZE + 10], &6u32.to_be_bytes());
        assert_eq!(&bytes[HEADER_SIZE + 10..], &[160, 39, 5, 0]);
        assert_eq!(Message::decode(&bytes).unwrap(), msg);
    }

    #[test]
    fn empty_inforeq_is_header_only() {
        let msg = Message::new(MacAddress::local(1), MessageBody::InfoReq { entries: vec![] });
        let bytes = msg.encode().unwrap();
        assert_eq!(bytes.len(), HEADER_SIZE);
        assert_eq!(Message::decode(&bytes).unwrap().body.entries(), &[]);
    }

    #[test]
    fn over_capacity_rejected() {
        let msg = Message::new(MacAddress::local(1), MessageBody::InfoReq { entries: entries(106) });
        assert_eq!(msg.encode(), Err(WireError::CapacityExceeded { count: 106 }));

        // A forged header claiming 106 entries is rejected before reading them.
        let mut bytes = Message::new(MacAddress::local(1), MessageBody::InfoReq { entries: vec![] })
            .encode()
            .unwrap();
        bytes[7..9].copy_from_slice(&106u16.to_be_bytes());
        assert_eq!(decode(&bytes), Err(WireError::CapacityExceeded { count: 106 }));
    }

    #[test]
    fn full_inforesp_decodes_all_entries() {
        let es = entries(105);
        let msg = Message::new(
            MacAddress::local(1),
            MessageBody::InfoResp { target: MacAddress::local(2), entries: es.clone() },
        );
        let bytes = msg.encode().unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back.body.entries().len(), 105);
        for (a, b) in back.body.entries().iter().zip(&es) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn ipresp_round_trip() {
        let msg = Message::new(
            MacAddress::local(9),
            MessageBody::IpResp {
                rmn_mac: MacAddress::local(0x58),
                new_ip: "10.0.2.17".parse().unwrap(),
                router_ip: "10.0.2.1".parse().unwrap(),
            },
        );
        assert_eq!(decode(&msg.encode().unwrap()).unwrap(), msg);
    }

    #[test]
    fn truncated_mid_entry() {
        let msg = Message::new(MacAddress::local(1), MessageBody::InfoReq { entries: entries(3) });
        let bytes = msg.encode().unwrap();
        let cut = &bytes[..HEADER_SIZE + ENTRY_SIZE + 5];
        assert!(matches!(decode(cut), Err(WireError::Truncated { .. })));
        assert!(matches!(decode(&[]), Err(WireError::Truncated { .. })));
    }

    #[test]
    fn unknown_tag_and_trailing_bytes() {
        assert_eq!(decode(&[0x7f, 0, 0, 0, 0, 0, 0, 0, 0]), Err(WireError::UnknownTag(0x7f)));
        let mut bytes = Message::new(MacAddress::local(1), MessageBody::InfoAlert { suspect: MacAddress::local(3) })
            .encode()
            .unwrap();
        bytes.push(0);
        assert_eq!(decode(&bytes), Err(WireError::TrailingBytes(1)));
    }

    #[test]
    fn invalid_fields_rejected() {
        let bad_channel = CacheEntry::new(MacAddress::local(1), 15, "10.0.0.0".parse().unwrap());
        let msg = Message::new(MacAddress::local(1), MessageBody::InfoReq { entries: vec![bad_channel] });
        assert!(matches!(msg.encode(), Err(WireError::InvalidField(_))));

        let msg = Message::new(MacAddress::BROADCAST, MessageBody::InfoReq { entries: vec![] });
        assert!(matches!(msg.encode(), Err(WireError::InvalidField(_))));

        let mut bytes = Message::new(MacAddress::local(1), MessageBody::IpReq { rmn_mac: MacAddress::local(2) })
            .encode()
            .unwrap();
        bytes[8] = 1; // entry count on IP_REQ
        assert!(matches!(decode(&bytes), Err(WireError::InvalidField(_))));
    }
}
