//! RRDP notification and snapshot documents (snapshot-only, no deltas).

use base64::Engine;
use quick_xml::events::{BytesDecl, BytesText, Event};
use quick_xml::{Reader, Writer};

use crate::util::sha256;

pub const RRDP_NS: &str = "http://www.ripe.net/rpki/rrdp";

#[derive(Debug, thiserror::Error)]
pub enum RrdpError {
    #[error("xml: {0}")]
    Xml(String),
    #[error("missing attribute {0}")]
    Missing(&'static str),
    #[error("bad base64 in publish element for {0}")]
    Base64(String),
    #[error("unexpected root element {0:?}")]
    Root(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RrdpDocuments {
    pub notification: Vec<u8>,
    pub snapshot: Vec<u8>,
    /// Uppercase hex SHA-256 of `snapshot`.
    pub snapshot_hash: String,
}

fn xml_err(e: impl std::fmt::Display) -> RrdpError {
    RrdpError::Xml(e.to_string())
}

/// Builds both documents. `publishes` pairs an rsync URI with file bytes.
pub fn emit_rrdp(session: &str, serial: u64, snapshot_uri: &str, publishes: &[(String, &[u8])]) -> RrdpDocuments {
    let serial_s = serial.to_string();
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut w = Writer::new_with_indent(Vec::new(), b' ', 2);
    w.write_event(Event::Decl(BytesDecl::new("1.0", Some("US-ASCII"), None))).expect("in-memory write");
    w.create_element("snapshot")
        .with_attributes([
            ("xmlns", RRDP_NS),
            ("version", "1"),
            ("session_id", session),
            ("serial", serial_s.as_str()),
        ])
        .write_inner_content(|w| {
            for (uri, bytes) in publishes {
                w.create_element("publish")
                    .with_attribute(("uri", uri.as_str()))
                    .write_text_content(BytesText::new(&b64.encode(bytes)))?;
            }
            Ok(())
        })
        .expect("in-memory write");
    let snapshot = w.into_inner();
    let snapshot_hash = hex::encode_upper(sha256(&snapshot));

    let mut w = Writer::new_with_indent(Vec::new(), b' ', 2);
    w.write_event(Event::Decl(BytesDecl::new("1.0", Some("US-ASCII"), None))).expect("in-memory write");
    w.create_element("notification")
        .with_attributes([
            ("xmlns", RRDP_NS),
            ("version", "1"),
            ("session_id", session),
            ("serial", serial_s.as_str()),
        ])
        .write_inner_content(|w| {
            w.create_element("snapshot")
                .with_attributes([("uri", snapshot_uri), ("hash", snapshot_hash.as_str())])
                .write_empty()?;
            Ok(())
        })
        .expect("in-memory write");
    RrdpDocuments { notification: w.into_inner(), snapshot, snapshot_hash }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Notification {
    pub session_id: String,
    pub serial: u64,
    pub snapshot_uri: String,
    pub snapshot_hash: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub session_id: String,
    pub serial: u64,
    pub publishes: Vec<(String, Vec<u8>)>,
}

fn attr(e: &quick_xml::events::BytesStart<'_>, name: &'static str) -> Result<String, RrdpError> {
    let a = e.try_get_attribute(name).map_err(xml_err)?.ok_or(RrdpError::Missing(name))?;
    Ok(a.unescape_value().map_err(xml_err)?.into_owned())
}

fn serial_attr(e: &quick_xml::events::BytesStart<'_>) -> Result<u64, RrdpError> {
    attr(e, "serial")?.parse().map_err(|_| RrdpError::Missing("serial"))
}

pub fn parse_notification(xml: &[u8]) -> Result<Notification, RrdpError> {
    let mut r = Reader::from_reader(xml);
    let mut header = None;
    loop {
        match r.read_event().map_err(xml_err)? {
            Event::Start(e) | Event::Empty(e) => match e.name().as_ref() {
                b"notification" => header = Some((attr(&e, "session_id")?, serial_attr(&e)?)),
                b"snapshot" => {
                    let (session_id, serial) = header.clone().ok_or(RrdpError::Missing("notification"))?;
                    return Ok(Notification {
                        session_id,
                        serial,
                        snapshot_uri: attr(&e, "uri")?,
                        snapshot_hash: attr(&e, "hash")?,
                    });
                }
                other => {
                    if header.is_none() {
                        return Err(RrdpError::Root(String::from_utf8_lossy(other).into_owned()));
                    }
                }
            },
            Event::Eof => return Err(RrdpError::Missing("snapshot")),
            _ => {}
        }
    }
}

pub fn parse_snapshot(xml: &[u8]) -> Result<Snapshot, RrdpError> {
    let b64 = base64::engine::general_purpose::STANDARD;
    let mut r = Reader::from_reader(xml);
    let mut snap: Option<Snapshot> = None;
    let mut current: Option<(String, String)> = None;
    loop {
        match r.read_event().map_err(xml_err)? {
            Event::Start(e) if e.name().as_ref() == b"snapshot" => {
                snap = Some(Snapshot { session_id: attr(&e, "session_id")?, serial: serial_attr(&e)?, publishes: Vec::new() });
            }
            Event::Start(e) if e.name().as_ref() == b"publish" => current = Some((attr(&e, "uri")?, String::new())),
            Event::Text(t) => {
                if let Some((_, text)) = current.as_mut() {
                    text.push_str(&t.unescape().map_err(xml_err)?);
                }
            }
            Event::End(e) if e.name().as_ref() == b"publish" => {
                if let (Some((uri, text)), Some(s)) = (current.take(), snap.as_mut()) {
                    let clean: String = text.chars().filter(|c| !c.is_whitespace()).collect();
                    let bytes = b64.decode(clean).map_err(|_| RrdpError::Base64(uri.clone()))?;
                    s.publishes.push((uri, bytes));
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    snap.ok_or(RrdpError::Missing("snapshot"))
}
