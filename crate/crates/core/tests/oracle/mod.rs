//! Independent checks for the integration tests. Nothing here goes through
//! the crate's DER parser, encoder or signing code: DER framing is read by
//! hand and RSA verification uses the `rsa` crate.

#![allow(dead_code)]

use batchfuzz::asn1_tree::{NodeForm, TlvNode};
use rsa::pkcs8::DecodePublicKey;
use rsa::{Pkcs1v15Sign, RsaPublicKey};
use sha2::{Digest, Sha256};

/// One element as read from the wire.
#[derive(Debug)]
pub struct Tlv<'a> {
    pub class: u8,
    pub constructed: bool,
    pub number: u64,
    /// The whole encoding, header included.
    pub raw: &'a [u8],
    pub content: &'a [u8],
    /// Parsed content of constructed elements.
    pub children: Vec<Tlv<'a>>,
}

impl<'a> Tlv<'a> {
    pub fn child(&self, i: usize) -> Result<&Tlv<'a>, String> {
        self.children.get(i).ok_or_else(|| format!("missing child {i} of tag {}", self.number))
    }

    fn is(&self, class: u8, number: u64) -> bool {
        self.class == class && self.number == number
    }
}

const UNIVERSAL: u8 = 0;
const CONTEXT: u8 = 2;

fn read_one(input: &[u8]) -> Result<(Tlv<'_>, &[u8]), String> {
    let mut i = 0;
    let b0 = *input.first().ok_or("empty input")?;
    i += 1;
    let class = b0 >> 6;
    let constructed = b0 & 0x20 != 0;
    let mut number = u64::from(b0 & 0x1f);
    if number == 0x1f {
        number = 0;
        let first = *input.get(i).ok_or("truncated tag")?;
        if first == 0x80 {
            return Err("tag number with leading zero group".into());
        }
        loop {
            let b = *input.get(i).ok_or("truncated tag")?;
            i += 1;
            if number >> 57 != 0 {
                return Err("tag number too large".into());
            }
            number = number << 7 | u64::from(b & 0x7f);
            if b & 0x80 == 0 {
                break;
            }
        }
        if number < 0x1f {
            return Err(format!("tag {number} should use the short form"));
        }
    }
    let l0 = *input.get(i).ok_or("truncated length")?;
    i += 1;
    let len = if l0 < 0x80 {
        usize::from(l0)
    } else if l0 == 0x80 {
        return Err("indefinite length".into());
    } else {
        let n = usize::from(l0 & 0x7f);
        if n > 8 {
            return Err(format!("{n} length octets"));
        }
        let bytes = input.get(i..i + n).ok_or("truncated length")?;
        i += n;
        if bytes[0] == 0 {
            return Err("length with leading zero octet".into());
        }
        let v = bytes.iter().fold(0u64, |a, &b| a << 8 | u64::from(b));
        if v < 0x80 {
            return Err(format!("length {v} should use the short form"));
        }
        usize::try_from(v).map_err(|_| "length overflow")?
    };
    let end = i.checked_add(len).filter(|&e| e <= input.len()).ok_or_else(|| {
        format!("length {len} exceeds the {} available bytes", input.len() - i)
    })?;
    let content = &input[i..end];
    let mut children = Vec::new();
    if constructed {
        let mut rest = content;
        while !rest.is_empty() {
            let (c, r) = read_one(rest)?;
            children.push(c);
            rest = r;
        }
    }
    Ok((Tlv { class, constructed, number, raw: &input[..end], content, children }, &input[end..]))
}

/// Reads exactly one DER element: definite minimal lengths, minimal tag
/// numbers, constructed contents made of whole elements, no trailing bytes.
pub fn parse_strict(input: &[u8]) -> Result<Tlv<'_>, String> {
    let (t, rest) = read_one(input)?;
    if !rest.is_empty() {
        return Err(format!("{} trailing bytes", rest.len()));
    }
    Ok(t)
}

/// Strict check of an encoding, also descending into every element the
/// tree says wraps an embedded DER element.
pub fn check_encoding(tree: &TlvNode, der: &[u8]) -> Result<(), String> {
    fn walk(node: &TlvNode, t: &Tlv<'_>, at: &str) -> Result<(), String> {
        if node.is_opaque() {
            return Ok(());
        }
        if node.constructed {
            if node.children.len() != t.children.len() {
                return Err(format!("{at}: {} children encoded, tree has {}", t.children.len(), node.children.len()));
            }
            for (i, (n, c)) in node.children.iter().zip(&t.children).enumerate() {
                walk(n, c, &format!("{at}/{i}"))?;
            }
        } else if node.form == NodeForm::Encapsulating {
            let prefix = node.value.len();
            let inner = t.content.get(prefix..).ok_or_else(|| format!("{at}: content shorter than prefix"))?;
            let inner = parse_strict(inner).map_err(|e| format!("{at} (embedded): {e}"))?;
            walk(&node.children[0], &inner, &format!("{at}/0"))?;
        }
        Ok(())
    }
    let t = parse_strict(der)?;
    walk(tree, &t, "")
}

/// Why a signed object failed verification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SigFailure {
    Structure(String),
    Digest,
    EeSignature,
    CaSignature,
}

const MESSAGE_DIGEST_OID: &[u8] = &[0x2a, 0x86, 0x48, 0x86, 0xf7, 0x0d, 0x01, 0x09, 0x04];

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

fn rsa_verify(key: &RsaPublicKey, msg: &[u8], sig: &[u8]) -> bool {
    key.verify(Pkcs1v15Sign::new::<Sha256>(), &sha256(msg), sig).is_ok()
}

/// The public key of a certificate's SubjectPublicKeyInfo.
pub fn cert_key(cert: &Tlv<'_>) -> Result<RsaPublicKey, String> {
    let tbs = cert.child(0)?;
    let skip = usize::from(tbs.child(0)?.is(CONTEXT, 0));
    let spki = tbs.child(5 + skip)?;
    RsaPublicKey::from_public_key_der(spki.raw).map_err(|e| format!("subject key: {e}"))
}

pub fn spki_key(spki_der: &[u8]) -> Result<RsaPublicKey, String> {
    RsaPublicKey::from_public_key_der(spki_der).map_err(|e| e.to_string())
}

/// The eContent bytes of a CMS signed object.
pub fn econtent<'a>(root: &'a Tlv<'a>) -> Result<&'a [u8], String> {
    let sd = root.child(1)?.child(0)?;
    Ok(sd.child(2)?.child(1)?.child(0)?.content)
}

/// Verifies a CMS signed object end to end: the message digest attribute
/// against the eContent, the signer signature with the embedded EE key,
/// and the EE certificate signature with `ca`.
pub fn verify_signed_object(der: &[u8], ca: &RsaPublicKey) -> Result<(), SigFailure> {
    let s = SigFailure::Structure;
    let root = parse_strict(der).map_err(s)?;
    let inner = || -> Result<_, String> {
        let sd = root.child(1)?.child(0)?;
        let econ = sd.child(2)?.child(1)?.child(0)?.content;
        let cert = sd.child(3)?.child(0)?;
        let signer = sd.child(4)?.child(0)?;
        let attrs = signer.child(3)?;
        let sig = signer.child(5)?.content;
        let digest = attrs
            .children
            .iter()
            .find(|a| a.children.first().is_some_and(|o| o.content == MESSAGE_DIGEST_OID))
            .ok_or("no message digest attribute")?
            .child(1)?
            .child(0)?
            .content;
        Ok((econ, cert, attrs, sig, digest))
    };
    let (econ, cert, attrs, sig, digest) = inner().map_err(s)?;
    if sha256(econ) != digest {
        return Err(SigFailure::Digest);
    }
    let ee = cert_key(cert).map_err(SigFailure::Structure)?;
    let mut signed = attrs.raw.to_vec();
    signed[0] = 0x31;
    if !rsa_verify(&ee, &signed, sig) {
        return Err(SigFailure::EeSignature);
    }
    let tbs = cert.child(0).map_err(s)?;
    let cert_sig = cert.child(2).map_err(s)?.content;
    let Some((0, cert_sig)) = cert_sig.split_first().map(|(u, r)| (*u, r)) else {
        return Err(SigFailure::Structure("certificate signature has unused bits".into()));
    };
    if !rsa_verify(ca, tbs.raw, cert_sig) {
        return Err(SigFailure::CaSignature);
    }
    Ok(())
}

/// Manifest fileList entries of a signed manifest: (file name, SHA-256).
pub fn manifest_files(der: &[u8]) -> Result<Vec<(String, Vec<u8>)>, String> {
    let root = parse_strict(der)?;
    let payload = parse_strict(econtent(&root)?)?;
    let skip = usize::from(payload.child(0)?.is(CONTEXT, 0));
    let list = payload.child(4 + skip)?;
    list.children
        .iter()
        .map(|e| {
            let name = e.child(0)?;
            let hash = e.child(1)?;
            if !name.is(UNIVERSAL, 22) || !hash.is(UNIVERSAL, 3) {
                return Err("fileList entry shape".to_string());
            }
            let (unused, bits) = hash.content.split_first().ok_or("empty hash")?;
            if *unused != 0 {
                return Err("hash with unused bits".into());
            }
            Ok((String::from_utf8(name.content.to_vec()).map_err(|e| e.to_string())?, bits.to_vec()))
        })
        .collect()
}

/// Value of attribute `name` in the first `<tag ...>` element of `xml`.
pub fn xml_attr<'a>(xml: &'a str, tag: &str, name: &str) -> Option<&'a str> {
    let start = xml.find(&format!("<{tag} "))?;
    let elem = &xml[start..start + xml[start..].find('>')?];
    let key = format!("{name}=\"");
    let v = elem.find(&key)? + key.len();
    Some(&elem[v..v + elem[v..].find('"')?])
}
