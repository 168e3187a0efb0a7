//! DER builder for fixture signing blocks.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertSpec {
    pub subject_cn: String,
    pub issuer_cn: String,
    /// UTCTime text, e.g. `200101000000Z`.
    pub not_before: String,
    pub not_after: String,
    pub algorithm_oid: String,
}

impl Default for CertSpec {
    fn default() -> Self {
        Self {
            subject_cn: "Android Debug".into(),
            issuer_cn: "Android Debug".into(),
            not_before: "200101000000Z".into(),
            not_after: "491231000000Z".into(),
            algorithm_oid: "1.2.840.113549.1.1.11".into(),
        }
    }
}

fn tlv(tag: u8, body: &[u8]) -> Vec<u8> {
    let mut out = vec![tag];
    let len = body.len();
    if len < 0x80 {
        out.push(len as u8);
    } else {
        let bytes = (len as u32).to_be_bytes();
        let skip = bytes.iter().take_while(|&&b| b == 0).count();
        out.push(0x80 | (4 - skip) as u8);
        out.extend_from_slice(&bytes[skip..]);
    }
    out.extend_from_slice(body);
    out
}

fn seq(parts: &[Vec<u8>]) -> Vec<u8> {
    tlv(0x30, &parts.concat())
}

pub(crate) fn encode_oid(dotted: &str) -> Vec<u8> {
    let arcs: Vec<u64> = dotted.split('.').filter_map(|p| p.parse().ok()).collect();
    let mut body = Vec::new();
    let mut push_arc = |mut v: u64| {
        let mut tmp = vec![(v & 0x7f) as u8];
        v >>= 7;
        while v > 0 {
            tmp.push(0x80 | (v & 0x7f) as u8);
            v >>= 7;
        }
        tmp.reverse();
        body.extend_from_slice(&tmp);
    };
    if arcs.len() >= 2 {
        push_arc(arcs[0] * 40 + arcs[1]);
        for &a in &arcs[2..] {
            push_arc(a);
        }
    }
    tlv(0x06, &body)
}

fn name(cn: &str) -> Vec<u8> {
    let rdn = |oid: &str, value: &str| {
        tlv(0x31, &seq(&[encode_oid(oid), tlv(0x0c, value.as_bytes())]))
    };
    seq(&[rdn("2.5.4.3", cn), rdn("2.5.4.10", "Android")])
}

/// Encode a certificate; `pkcs7` wraps it in a SignedData ContentInfo as
/// found in `META-INF/CERT.RSA`.
pub fn build_cert(spec: &CertSpec, pkcs7: bool) -> Vec<u8> {
    let alg = seq(&[encode_oid(&spec.algorithm_oid), tlv(0x05, &[])]);
    let tbs = seq(&[
        tlv(0xa0, &tlv(0x02, &[2])),
        tlv(0x02, &[0x01, 0x23, 0x45, 0x67]),
        alg.clone(),
        name(&spec.issuer_cn),
        seq(&[
            tlv(0x17, spec.not_before.as_bytes()),
            tlv(0x17, spec.not_after.as_bytes()),
        ]),
        name(&spec.subject_cn),
        seq(&[seq(&[encode_oid("1.2.840.113549.1.1.1"), tlv(0x05, &[])]), tlv(0x03, &[0, 0])]),
    ]);
    let cert = seq(&[tbs, alg, tlv(0x03, &[0, 0xde, 0xad])]);
    if !pkcs7 {
        return cert;
    }
    let signed = seq(&[
        tlv(0x02, &[1]),
        tlv(0x31, &[]),
        seq(&[encode_oid("1.2.840.113549.1.7.1")]),
        tlv(0xa0, &cert),
        tlv(0x31, &[]),
    ]);
    seq(&[encode_oid("1.2.840.113549.1.7.2"), tlv(0xa0, &signed)])
}
