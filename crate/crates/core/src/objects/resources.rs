use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// An IPv4 or IPv6 prefix as carried in RPKI BIT STRINGs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct IpPrefix {
    /// Address family identifier: 1 for IPv4, 2 for IPv6.
    pub afi: u8,
    /// Full-width address with host bits cleared.
    pub addr: Vec<u8>,
    pub len: u8,
}

impl IpPrefix {
    pub fn new(afi: u8, addr: &[u8], len: u8) -> Self {
        let width = if afi == 1 { 4 } else { 16 };
        let mut full = vec![0u8; width];
        let n = addr.len().min(width);
        full[..n].copy_from_slice(&addr[..n]);
        let len = len.min((width * 8) as u8);
        for (i, byte) in full.iter_mut().enumerate() {
            let keep = (len as usize).saturating_sub(i * 8).min(8);
            *byte &= if keep == 0 { 0 } else { 0xFFu8 << (8 - keep) };
        }
        IpPrefix { afi, addr: full, len }
    }

    pub fn max_len(&self) -> u8 {
        if self.afi == 1 {
            32
        } else {
            128
        }
    }

    /// BIT STRING content: unused-bits octet followed by the prefix octets.
    pub fn to_bit_string(&self) -> Vec<u8> {
        let bytes = (self.len as usize).div_ceil(8);
        let unused = (bytes * 8 - self.len as usize) as u8;
        let mut out = Vec::with_capacity(bytes + 1);
        out.push(unused);
        out.extend_from_slice(&self.addr[..bytes]);
        out
    }

    pub fn from_bit_string(afi: u8, content: &[u8]) -> Option<Self> {
        let (&unused, data) = content.split_first()?;
        if unused > 7 || (data.is_empty() && unused != 0) {
            return None;
        }
        let width = if afi == 1 { 4 } else if afi == 2 { 16 } else { return None };
        if data.len() > width {
            return None;
        }
        let len = (data.len() * 8) as u8 - unused;
        Some(IpPrefix::new(afi, data, len))
    }

    /// The `00 01` / `00 02` addressFamily octets.
    pub fn family_octets(afi: u8) -> Vec<u8> {
        vec![0, afi]
    }
}

impl fmt::Display for IpPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.afi == 1 {
            let a: [u8; 4] = self.addr[..4].try_into().expect("ipv4 width");
            write!(f, "{}/{}", Ipv4Addr::from(a), self.len)
        } else {
            let a: [u8; 16] = self.addr[..16].try_into().expect("ipv6 width");
            write!(f, "{}/{}", Ipv6Addr::from(a), self.len)
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("malformed prefix {0:?}")]
pub struct PrefixParseError(String);

impl FromStr for IpPrefix {
    type Err = PrefixParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || PrefixParseError(s.to_string());
        let (addr, len) = s.trim().split_once('/').ok_or_else(err)?;
        let len: u8 = len.parse().map_err(|_| err())?;
        if let Ok(a) = addr.parse::<Ipv4Addr>() {
            if len > 32 {
                return Err(err());
            }
            Ok(IpPrefix::new(1, &a.octets(), len))
        } else if let Ok(a) = addr.parse::<Ipv6Addr>() {
            if len > 128 {
                return Err(err());
            }
            Ok(IpPrefix::new(2, &a.octets(), len))
        } else {
            Err(err())
        }
    }
}

impl From<IpPrefix> for String {
    fn from(p: IpPrefix) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for IpPrefix {
    type Error = PrefixParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// A validated ROA payload: origin AS, prefix and maximum length.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Vrp {
    pub asn: u32,
    pub prefix: IpPrefix,
    pub max_len: u8,
}

impl fmt::Display for Vrp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AS{},{},{}", self.asn, self.prefix, self.max_len)
    }
}

impl FromStr for Vrp {
    type Err = PrefixParseError;

    /// Accepts `AS64496,192.0.2.0/24,24` with an optional `AS` prefix and
    /// trailing columns.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PrefixParseError(s.to_string());
        let mut cols = s.split(',').map(str::trim);
        let asn = cols.next().ok_or_else(bad)?;
        let asn = asn.strip_prefix("AS").unwrap_or(asn).parse().map_err(|_| bad())?;
        let prefix: IpPrefix = cols.next().ok_or_else(bad)?.parse()?;
        let max_len = cols.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        Ok(Vrp { asn, prefix, max_len })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_string_form() {
        let p: IpPrefix = "10.0.0.0/8".parse().unwrap();
        assert_eq!(p.to_bit_string(), [0x00, 0x0A]);
        let p: IpPrefix = "192.168.0.0/23".parse().unwrap();
        assert_eq!(p.to_bit_string(), [0x01, 0xC0, 0xA8, 0x00]);
        assert_eq!(IpPrefix::from_bit_string(1, &[0x01, 0xC0, 0xA8, 0x00]).unwrap(), p);
        let zero: IpPrefix = "0.0.0.0/0".parse().unwrap();
        assert_eq!(zero.to_bit_string(), [0x00]);
        let v6: IpPrefix = "2001:db8::/32".parse().unwrap();
        assert_eq!(v6.to_string(), "2001:db8::/32");
        assert_eq!(IpPrefix::from_bit_string(2, &v6.to_bit_string()).unwrap(), v6);
    }

    #[test]
    fn vrp_text_round_trip() {
        let v: Vrp = "AS64496,192.0.2.0/24,24".parse().unwrap();
        assert_eq!(v.to_string().parse::<Vrp>().unwrap(), v);
        assert_eq!("64496, 192.0.2.0/24, 24, ta".parse::<Vrp>().unwrap(), v);
        assert!("AS1,10.0.0.0/8".parse::<Vrp>().is_err());
    }

    #[test]
    fn host_bits_cleared() {
        assert_eq!(IpPrefix::new(1, &[10, 1, 2, 3], 8).to_string(), "10.0.0.0/8");
    }

    #[test]
    fn rejects_garbage() {
        assert!("10.0.0.0".parse::<IpPrefix>().is_err());
        assert!("10.0.0.0/33".parse::<IpPrefix>().is_err());
        assert!(IpPrefix::from_bit_string(1, &[8]).is_none());
        assert!(IpPrefix::from_bit_string(3, &[0]).is_none());
    }
}
