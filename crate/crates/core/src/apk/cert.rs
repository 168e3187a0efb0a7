//! Signing-certificate summary from `META-INF/*.RSA|DSA|EC` blocks.
//!
//! Only enough DER is walked to pull subject, issuer, validity and the
//! signature algorithm out of the first certificate. Nothing is verified.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertSummary {
    pub subject: String,
    pub issuer: String,
    pub not_before: String,
    pub not_after: String,
    pub algorithm: String,
}

impl CertSummary {
    pub fn self_signed(&self) -> bool {
        self.subject == self.issuer
    }

    /// Whole years between `not_before` and `not_after`, if both parse.
    pub fn validity_years(&self) -> Option<i32> {
        Some(year_of(&self.not_after)? - year_of(&self.not_before)?)
    }
}

fn year_of(time: &str) -> Option<i32> {
    let digits: String = time.chars().take_while(char::is_ascii_digit).collect();
    match digits.len() {
        // UTCTime YYMMDDhhmmss
        12 | 10 => {
            let yy: i32 = digits[..2].parse().ok()?;
            Some(if yy < 50 { 2000 + yy } else { 1900 + yy })
        }
        // GeneralizedTime YYYYMMDDhhmmss
        14 => digits[..4].parse().ok(),
        _ => None,
    }
}

pub(crate) struct Tlv<'a> {
    pub tag: u8,
    pub body: &'a [u8],
}

pub(crate) fn read_tlv(input: &[u8]) -> Option<(Tlv<'_>, &[u8])> {
    let tag = *input.first()?;
    let first = *input.get(1)? as usize;
    let (len, header) = if first < 0x80 {
        (first, 2)
    } else {
        let n = first & 0x7f;
        if n == 0 || n > 4 {
            return None;
        }
        let mut len = 0usize;
        for i in 0..n {
            len = (len << 8) | *input.get(2 + i)? as usize;
        }
        (len, 2 + n)
    };
    let end = header.checked_add(len)?;
    let body = input.get(header..end)?;
    Some((Tlv { tag, body }, &input[end..]))
}

fn children(mut body: &[u8]) -> Option<Vec<Tlv<'_>>> {
    let mut out = Vec::new();
    while !body.is_empty() {
        let (tlv, rest) = read_tlv(body)?;
        out.push(tlv);
        body = rest;
    }
    Some(out)
}

pub(crate) fn decode_oid(body: &[u8]) -> String {
    let mut parts: Vec<u64> = Vec::new();
    let mut acc: u64 = 0;
    for &b in body {
        acc = (acc << 7) | (b & 0x7f) as u64;
        if b & 0x80 == 0 {
            if parts.is_empty() {
                let first = (acc / 40).min(2);
                parts.push(first);
                parts.push(acc - first * 40);
            } else {
                parts.push(acc);
            }
            acc = 0;
        }
    }
    parts
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(".")
}

fn algorithm_tag(oid: &str) -> String {
    match oid {
        "1.2.840.113549.1.1.4" => "md5WithRSA",
        "1.2.840.113549.1.1.5" => "sha1WithRSA",
        "1.2.840.113549.1.1.11" => "sha256WithRSA",
        "1.2.840.113549.1.1.12" => "sha384WithRSA",
        "1.2.840.113549.1.1.13" => "sha512WithRSA",
        "1.2.840.10040.4.3" => "dsaWithSHA1",
        "2.16.840.1.101.3.4.3.2" => "dsaWithSHA256",
        "1.2.840.10045.4.1" => "ecdsaWithSHA1",
        "1.2.840.10045.4.3.2" => "ecdsaWithSHA256",
        "1.2.840.10045.4.3.3" => "ecdsaWithSHA384",
        other => other,
    }
    .to_owned()
}

fn attr_label(oid: &str) -> String {
    match oid {
        "2.5.4.3" => "CN".into(),
        "2.5.4.6" => "C".into(),
        "2.5.4.7" => "L".into(),
        "2.5.4.8" => "ST".into(),
        "2.5.4.10" => "O".into(),
        "2.5.4.11" => "OU".into(),
        "1.2.840.113549.1.9.1" => "E".into(),
        other => other.into(),
    }
}

fn render_name(name: &Tlv<'_>) -> Option<String> {
    let mut parts = Vec::new();
    for rdn in children(name.body)? {
        for atv in children(rdn.body)? {
            let kv = children(atv.body)?;
            if kv.len() < 2 || kv[0].tag != 0x06 {
                return None;
            }
            let value = String::from_utf8_lossy(kv[1].body);
            parts.push(format!("{}={}", attr_label(&decode_oid(kv[0].body)), value));
        }
    }
    Some(parts.join(", "))
}

fn summarize_certificate(cert: &Tlv<'_>) -> Option<CertSummary> {
    let top = children(cert.body)?;
    let tbs = children(top.first()?.body)?;
    let mut i = 0;
    if tbs.first()?.tag == 0xa0 {
        i += 1;
    }
    let _serial = tbs.get(i)?;
    let alg = children(tbs.get(i + 1)?.body)?;
    let issuer = render_name(tbs.get(i + 2)?)?;
    let validity = children(tbs.get(i + 3)?.body)?;
    let subject = render_name(tbs.get(i + 4)?)?;
    let algorithm = algorithm_tag(&decode_oid(alg.first().filter(|t| t.tag == 0x06)?.body));
    let time = |t: &Tlv<'_>| String::from_utf8_lossy(t.body).into_owned();
    Some(CertSummary {
        subject,
        issuer,
        not_before: time(validity.first()?),
        not_after: time(validity.get(1)?),
        algorithm,
    })
}

/// Summarize the first certificate of a PKCS#7 signature block or a bare
/// X.509 certificate. `None` when the bytes do not have that shape.
pub fn parse_cert_summary(bytes: &[u8]) -> Option<CertSummary> {
    let (outer, _) = read_tlv(bytes)?;
    if outer.tag != 0x30 {
        return None;
    }
    let items = children(outer.body)?;
    if items.first()?.tag == 0x06 {
        // ContentInfo { signedData OID, [0] SignedData }
        let explicit = items.get(1).filter(|t| t.tag == 0xa0)?;
        let (signed, _) = read_tlv(explicit.body)?;
        let fields = children(signed.body)?;
        let certs = fields.iter().find(|t| t.tag == 0xa0)?;
        let (first, _) = read_tlv(certs.body)?;
        summarize_certificate(&first)
    } else {
        summarize_certificate(&outer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture::cert::{build_cert, CertSpec};

    #[test]
    fn pkcs7_and_bare_certificates() {
        let spec = CertSpec {
            subject_cn: "Dev".into(),
            issuer_cn: "Dev".into(),
            not_before: "200101000000Z".into(),
            not_after: "491231000000Z".into(),
            algorithm_oid: "1.2.840.113549.1.1.11".into(),
        };
        for wrapped in [true, false] {
            let der = build_cert(&spec, wrapped);
            let s = parse_cert_summary(&der).unwrap();
            assert_eq!(s.subject, "CN=Dev, O=Android");
            assert!(s.self_signed());
            assert_eq!(s.algorithm, "sha256WithRSA");
            assert_eq!(s.validity_years(), Some(29));
        }
    }

    #[test]
    fn garbage_is_absent() {
        assert_eq!(parse_cert_summary(b""), None);
        assert_eq!(parse_cert_summary(&[0x30, 0x05, 1, 2]), None);
        assert_eq!(parse_cert_summary(&[0x30, 0x84, 0xff, 0xff, 0xff, 0xff]), None);
    }

    #[test]
    fn oid_decoding() {
        assert_eq!(decode_oid(&[0x2a, 0x86, 0x48, 0x86, 0xf7, 0x0d, 0x01, 0x01, 0x0b]), "1.2.840.113549.1.1.11");
        assert_eq!(decode_oid(&[0x55, 0x04, 0x03]), "2.5.4.3");
    }

    #[test]
    fn generalized_time_years() {
        let s = CertSummary {
            subject: String::new(),
            issuer: String::new(),
            not_before: "20200101000000Z".into(),
            not_after: "20210101000000Z".into(),
            algorithm: String::new(),
        };
        assert_eq!(s.validity_years(), Some(1));
    }
}
