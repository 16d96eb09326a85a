//! Trust anchor locator files.

use base64::Engine;

/// URIs one per line, a blank line, then the base64 SubjectPublicKeyInfo in
/// 64-column lines.
pub fn make_tal(spki_der: &[u8], uris: &[&str]) -> String {
    let mut out = String::new();
    for u in uris {
        out.push_str(u);
        out.push('\n');
    }
    out.push('\n');
    let b64 = base64::engine::general_purpose::STANDARD.encode(spki_der);
    for chunk in b64.as_bytes().chunks(64) {
        out.push_str(std::str::from_utf8(chunk).expect("base64 is ascii"));
        out.push('\n');
    }
    out
}

/// Returns the URIs and the decoded key, ignoring `#` comment lines.
pub fn parse_tal(text: &str) -> Option<(Vec<String>, Vec<u8>)> {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.starts_with('#')).collect();
    let split = lines.iter().position(|l| l.is_empty())?;
    let uris = lines[..split].iter().map(|s| s.to_string()).collect();
    let key: String = lines[split..].concat();
    let der = base64::engine::general_purpose::STANDARD.decode(key).ok()?;
    Some((uris, der))
}
