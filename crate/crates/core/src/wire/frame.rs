//! 802.11 data-frame addressing.
//!
//! The meaning of the four address fields depends on the ToDS/FromDS bits:
//!
//! | ToDS | FromDS | Addr1 | Addr2 | Addr3 | Addr4 |
//! |------|--------|-------|-------|-------|-------|
//! | 0    | 0      | DA    | SA    | BSSID | -     |
//! | 0    | 1      | DA    | BSSID | SA    | -     |
//! | 1    | 0      | BSSID | SA    | DA    | -     |
//! | 1    | 1      | RA    | TA    | DA    | SA    |
//!
//! Relaying during authentication relies on (0, 0) frames: stations exchange
//! them directly while staying in infrastructure mode.

use thiserror::Error;

use super::MacAddress;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    /// (1, 0): station to its AP.
    ToAp,
    /// (0, 1): AP to a station.
    FromAp,
    /// (1, 1): AP to AP over the wireless distribution system.
    ApToAp,
    /// (0, 0): station to station without the AP.
    DirectAdHoc,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("address {0} missing")]
    MissingAddress(u8),
    #[error("address 4 is only valid when both ToDS and FromDS are set")]
    UnexpectedAddr4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub to_ds: bool,
    pub from_ds: bool,
    pub addr1: Option<MacAddress>,
    pub addr2: Option<MacAddress>,
    pub addr3: Option<MacAddress>,
    pub addr4: Option<MacAddress>,
}

impl FrameHeader {
    pub fn ad_hoc(da: MacAddress, sa: MacAddress, bssid: MacAddress) -> Self {
        Self::build(false, false, da, sa, bssid, None)
    }

    pub fn from_ap(da: MacAddress, bssid: MacAddress, sa: MacAddress) -> Self {
        Self::build(false, true, da, bssid, sa, None)
    }

    pub fn to_ap(bssid: MacAddress, sa: MacAddress, da: MacAddress) -> Self {
        Self::build(true, false, bssid, sa, da, None)
    }

    pub fn ap_to_ap(ra: MacAddress, ta: MacAddress, da: MacAddress, sa: MacAddress) -> Self {
        Self::build(true, true, ra, ta, da, Some(sa))
    }

    fn build(
        to_ds: bool,
        from_ds: bool,
        a1: MacAddress,
        a2: MacAddress,
        a3: MacAddress,
        a4: Option<MacAddress>,
    ) -> Self {
        FrameHeader { to_ds, from_ds, addr1: Some(a1), addr2: Some(a2), addr3: Some(a3), addr4: a4 }
    }

    /// Checks that addresses 1-3 are present and address 4 appears exactly
    /// when both DS bits are set.
    pub fn validate(&self) -> Result<(), FrameError> {
        for (i, a) in [self.addr1, self.addr2, self.addr3].iter().enumerate() {
            if a.is_none() {
                return Err(FrameError::MissingAddress(i as u8 + 1));
            }
        }
        match (self.to_ds && self.from_ds, self.addr4.is_some()) {
            (true, false) => Err(FrameError::MissingAddress(4)),
            (false, true) => Err(FrameError::UnexpectedAddr4),
            _ => Ok(()),
        }
    }

    pub fn kind(&self) -> FrameKind {
        classify_frame(self)
    }

    /// Final destination (DA) for every combination.
    pub fn destination(&self) -> Option<MacAddress> {
        match self.kind() {
            FrameKind::DirectAdHoc | FrameKind::FromAp => self.addr1,
            FrameKind::ToAp | FrameKind::ApToAp => self.addr3,
        }
    }

    /// Original source (SA) for every combination.
    pub fn source(&self) -> Option<MacAddress> {
        match self.kind() {
            FrameKind::DirectAdHoc | FrameKind::ToAp => self.addr2,
            FrameKind::FromAp => self.addr3,
            FrameKind::ApToAp => self.addr4,
        }
    }

    /// The BSSID, where the header carries one.
    pub fn bssid(&self) -> Option<MacAddress> {
        match self.kind() {
            FrameKind::DirectAdHoc => self.addr3,
            FrameKind::FromAp => self.addr2,
            FrameKind::ToAp => self.addr1,
            FrameKind::ApToAp => None,
        }
    }

    /// Receiver and transmitter addresses of a (1, 1) frame.
    pub fn wds_hops(&self) -> Option<(MacAddress, MacAddress)> {
        match self.kind() {
            FrameKind::ApToAp => Some((self.addr1?, self.addr2?)),
            _ => None,
        }
    }
}

/// Maps the (ToDS, FromDS) bits to the frame's direction.
pub fn classify_frame(hdr: &FrameHeader) -> FrameKind {
    match (hdr.to_ds, hdr.from_ds) {
        (true, false) => FrameKind::ToAp,
        (false, true) => FrameKind::FromAp,
        (true, true) => FrameKind::ApToAp,
        (false, false) => FrameKind::DirectAdHoc,
    }
}
