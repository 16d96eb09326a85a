use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// RPKI object types the fuzzer knows how to label, repair and publish.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Roa,
    Manifest,
    Crl,
    CaCertificate,
    EeCertificate,
    Aspa,
    Gbr,
    Tal,
    Generic,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 9] = [
        ObjectKind::Roa,
        ObjectKind::Manifest,
        ObjectKind::Crl,
        ObjectKind::CaCertificate,
        ObjectKind::EeCertificate,
        ObjectKind::Aspa,
        ObjectKind::Gbr,
        ObjectKind::Tal,
        ObjectKind::Generic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Roa => "roa",
            ObjectKind::Manifest => "manifest",
            ObjectKind::Crl => "crl",
            ObjectKind::CaCertificate => "ca_certificate",
            ObjectKind::EeCertificate => "ee_certificate",
            ObjectKind::Aspa => "aspa",
            ObjectKind::Gbr => "gbr",
            ObjectKind::Tal => "tal",
            ObjectKind::Generic => "generic",
        }
    }

    /// Label prefix used by the kind's schema.
    pub fn label_prefix(self) -> &'static str {
        match self {
            ObjectKind::Roa => "roa",
            ObjectKind::Manifest => "mft",
            ObjectKind::Crl => "crl",
            ObjectKind::CaCertificate => "cer",
            ObjectKind::EeCertificate => "ee",
            ObjectKind::Aspa => "aspa",
            ObjectKind::Gbr => "gbr",
            ObjectKind::Tal => "tal",
            ObjectKind::Generic => "obj",
        }
    }

    /// Repository file extension.
    pub fn extension(self) -> &'static str {
        match self {
            ObjectKind::Roa => "roa",
            ObjectKind::Manifest => "mft",
            ObjectKind::Crl => "crl",
            ObjectKind::CaCertificate | ObjectKind::EeCertificate => "cer",
            ObjectKind::Aspa => "asa",
            ObjectKind::Gbr => "gbr",
            ObjectKind::Tal => "tal",
            ObjectKind::Generic => "der",
        }
    }

    pub fn from_extension(ext: &str) -> Option<Self> {
        Some(match ext.to_ascii_lowercase().as_str() {
            "roa" => ObjectKind::Roa,
            "mft" => ObjectKind::Manifest,
            "crl" => ObjectKind::Crl,
            "cer" => ObjectKind::CaCertificate,
            "asa" => ObjectKind::Aspa,
            "gbr" => ObjectKind::Gbr,
            "tal" => ObjectKind::Tal,
            "der" => ObjectKind::Generic,
            _ => return None,
        })
    }

    /// CMS signed objects carrying an EE certificate.
    pub fn is_signed_object(self) -> bool {
        matches!(self, ObjectKind::Roa | ObjectKind::Manifest | ObjectKind::Aspa | ObjectKind::Gbr)
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown object kind {0:?}")]
pub struct UnknownKind(String);

impl FromStr for ObjectKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.to_ascii_lowercase().replace('-', "_");
        ObjectKind::ALL
            .into_iter()
            .find(|k| k.name() == s || k.label_prefix() == s)
            .ok_or(UnknownKind(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_names() {
        for k in ObjectKind::ALL {
            assert_eq!(k.name().parse::<ObjectKind>().unwrap(), k);
        }
        assert_eq!("ca-certificate".parse::<ObjectKind>().unwrap(), ObjectKind::CaCertificate);
        assert_eq!("mft".parse::<ObjectKind>().unwrap(), ObjectKind::Manifest);
        assert!("bogus".parse::<ObjectKind>().is_err());
    }
}
