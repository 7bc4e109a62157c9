use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

/// A 48-bit IEEE 802 MAC address. Also used for BSSIDs.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddress([u8; 6]);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddrParseError {
    #[error("malformed MAC address `{0}`")]
    Mac(String),
    #[error("malformed subnet `{0}`")]
    Subnet(String),
    #[error("subnet {network}/{prefix} has host bits set")]
    HostBits { network: Ipv4Addr, prefix: u8 },
}

impl MacAddress {
    pub const BROADCAST: MacAddress = MacAddress([0xff; 6]);

    pub const fn new(octets: [u8; 6]) -> Self {
        MacAddress(octets)
    }

    pub const fn octets(&self) -> [u8; 6] {
        self.0
    }

    /// Group bit (least-significant bit of the first octet).
    pub const fn is_multicast(&self) -> bool {
        self.0[0] & 0x01 != 0
    }

    /// Locally administered unicast address derived from a small integer;
    /// handy for scenario and test fixtures.
    pub const fn local(n: u32) -> Self {
        let b = n.to_be_bytes();
        MacAddress([0x02, 0x00, b[0], b[1], b[2], b[3]])
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl fmt::Debug for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for MacAddress {
    type Err = AddrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || AddrParseError::Mac(s.to_string());
        let mut out = [0u8; 6];
        let mut parts = s.split([':', '-']);
        for slot in out.iter_mut() {
            let part = parts.next().ok_or_else(err)?;
            if part.len() != 2 {
                return Err(err());
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| err())?;
        }
        if parts.next().is_some() {
            return Err(err());
        }
        Ok(MacAddress(out))
    }
}

/// Identifies a subnet by its IPv4 network address.
///
/// The prefix length lives in the scenario, not in the identifier, matching
/// the 4-byte wire representation.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubnetId(Ipv4Addr);

impl SubnetId {
    /// Wraps a network address without checking host bits.
    pub const fn from_network(network: Ipv4Addr) -> Self {
        SubnetId(network)
    }

    /// Builds the identifier, rejecting addresses with host bits set under
    /// `prefix`.
    pub fn new(network: Ipv4Addr, prefix: u8) -> Result<Self, AddrParseError> {
        if prefix > 32 || mask_bits(network, prefix) != network {
            return Err(AddrParseError::HostBits { network, prefix });
        }
        Ok(SubnetId(network))
    }

    /// Network address of `ip` under `prefix`.
    pub fn of(ip: Ipv4Addr, prefix: u8) -> Self {
        SubnetId(mask_bits(ip, prefix))
    }

    pub const fn network(&self) -> Ipv4Addr {
        self.0
    }

    pub fn contains(&self, ip: Ipv4Addr, prefix: u8) -> bool {
        mask_bits(ip, prefix) == self.0
    }
}

fn mask_bits(ip: Ipv4Addr, prefix: u8) -> Ipv4Addr {
    let mask = match prefix {
        0 => 0,
        p if p >= 32 => u32::MAX,
        p => u32::MAX << (32 - p),
    };
    Ipv4Addr::from(u32::from(ip) & mask)
}

impl fmt::Display for SubnetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl fmt::Debug for SubnetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SubnetId({})", self.0)
    }
}

impl FromStr for SubnetId {
    type Err = AddrParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<Ipv4Addr>()
            .map(SubnetId)
            .map_err(|_| AddrParseError::Subnet(s.to_string()))
    }
}
