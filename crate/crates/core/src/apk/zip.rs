//! Minimal ZIP container support: central-directory reader and a
//! deterministic writer for stored/deflated entries.

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

const EOCD_SIG: u32 = 0x0605_4b50;
const CDIR_SIG: u32 = 0x0201_4b50;
const LOCAL_SIG: u32 = 0x0403_4b50;
const EOCD_LEN: usize = 22;
const MAX_COMMENT: usize = 0xffff;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ZipError {
    #[error("no valid end-of-central-directory record")]
    NotAZip,
    #[error("entry `{0}` could not be decompressed")]
    Decompression(String),
}

/// A decompressed archive member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZipMember {
    pub name: String,
    pub data: Vec<u8>,
}

fn u16_at(b: &[u8], off: usize) -> Option<u16> {
    b.get(off..off + 2).map(|s| u16::from_le_bytes([s[0], s[1]]))
}

fn u32_at(b: &[u8], off: usize) -> Option<u32> {
    b.get(off..off + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
}

fn find_eocd(bytes: &[u8]) -> Option<usize> {
    if bytes.len() < EOCD_LEN {
        return None;
    }
    let last = bytes.len() - EOCD_LEN;
    let first = last.saturating_sub(MAX_COMMENT);
    (first..=last)
        .rev()
        .find(|&pos| u32_at(bytes, pos) == Some(EOCD_SIG))
}

/// Read every member listed in the central directory, in directory order.
pub fn read_archive(bytes: &[u8]) -> Result<Vec<ZipMember>, ZipError> {
    let eocd = find_eocd(bytes).ok_or(ZipError::NotAZip)?;
    let count = u16_at(bytes, eocd + 10).ok_or(ZipError::NotAZip)? as usize;
    let cd_size = u32_at(bytes, eocd + 12).ok_or(ZipError::NotAZip)? as usize;
    let cd_off = u32_at(bytes, eocd + 16).ok_or(ZipError::NotAZip)? as usize;
    if cd_off.checked_add(cd_size).map_or(true, |end| end > eocd) {
        return Err(ZipError::NotAZip);
    }

    let mut members = Vec::with_capacity(count);
    let mut pos = cd_off;
    for _ in 0..count {
        if u32_at(bytes, pos) != Some(CDIR_SIG) {
            return Err(ZipError::NotAZip);
        }
        let field = |rel: usize| u16_at(bytes, pos + rel).ok_or(ZipError::NotAZip);
        let method = field(10)?;
        let crc = u32_at(bytes, pos + 16).ok_or(ZipError::NotAZip)?;
        let csize = u32_at(bytes, pos + 20).ok_or(ZipError::NotAZip)? as usize;
        let usize_ = u32_at(bytes, pos + 24).ok_or(ZipError::NotAZip)? as usize;
        let name_len = field(28)? as usize;
        let extra_len = field(30)? as usize;
        let comment_len = field(32)? as usize;
        let local_off = u32_at(bytes, pos + 42).ok_or(ZipError::NotAZip)? as usize;
        let name_bytes = bytes
            .get(pos + 46..pos + 46 + name_len)
            .ok_or(ZipError::NotAZip)?;
        let name = String::from_utf8_lossy(name_bytes).into_owned();
        pos += 46 + name_len + extra_len + comment_len;

        let data = read_local(bytes, local_off, method, csize, usize_, crc)
            .ok_or_else(|| ZipError::Decompression(name.clone()))?;
        members.push(ZipMember { name, data });
    }
    Ok(members)
}

fn read_local(
    bytes: &[u8],
    off: usize,
    method: u16,
    csize: usize,
    usize_: usize,
    crc: u32,
) -> Option<Vec<u8>> {
    if u32_at(bytes, off)? != LOCAL_SIG {
        return None;
    }
    let name_len = u16_at(bytes, off + 26)? as usize;
    let extra_len = u16_at(bytes, off + 28)? as usize;
    let start = off.checked_add(30 + name_len + extra_len)?;
    let raw = bytes.get(start..start.checked_add(csize)?)?;
    let data = match method {
        0 => raw.to_vec(),
        8 => {
            let mut out = Vec::with_capacity(usize_.min(1 << 24));
            DeflateDecoder::new(raw)
                .take(usize_ as u64 + 1)
                .read_to_end(&mut out)
                .ok()?;
            out
        }
        _ => return None,
    };
    if data.len() != usize_ || crc32fast::hash(&data) != crc {
        return None;
    }
    Some(data)
}

/// Compression applied to a written entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Stored,
    Deflated,
}

/// Deterministic ZIP writer: fixed timestamps, no extra fields.
#[derive(Debug, Default)]
pub struct ZipWriter {
    out: Vec<u8>,
    central: Vec<u8>,
    count: u16,
}

impl ZipWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, data: &[u8], method: Method) {
        let crc = crc32fast::hash(data);
        let (code, payload) = match method {
            Method::Stored => (0u16, data.to_vec()),
            Method::Deflated => {
                let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
                enc.write_all(data).expect("in-memory write");
                (8u16, enc.finish().expect("in-memory write"))
            }
        };
        let offset = self.out.len() as u32;
        let name = name.as_bytes();

        let put_common = |buf: &mut Vec<u8>| {
            buf.extend_from_slice(&20u16.to_le_bytes()); // version needed
            buf.extend_from_slice(&0u16.to_le_bytes()); // flags
            buf.extend_from_slice(&code.to_le_bytes());
            buf.extend_from_slice(&0u16.to_le_bytes()); // mod time
            buf.extend_from_slice(&0x21u16.to_le_bytes()); // mod date 1980-01-01
            buf.extend_from_slice(&crc.to_le_bytes());
            buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            buf.extend_from_slice(&(data.len() as u32).to_le_bytes());
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(&0u16.to_le_bytes()); // extra len
        };

        self.out.extend_from_slice(&LOCAL_SIG.to_le_bytes());
        put_common(&mut self.out);
        self.out.extend_from_slice(name);
        self.out.extend_from_slice(&payload);

        self.central.extend_from_slice(&CDIR_SIG.to_le_bytes());
        self.central.extend_from_slice(&20u16.to_le_bytes()); // version made by
        put_common(&mut self.central);
        self.central.extend_from_slice(&0u16.to_le_bytes()); // comment len
        self.central.extend_from_slice(&0u16.to_le_bytes()); // disk start
        self.central.extend_from_slice(&0u16.to_le_bytes()); // internal attrs
        self.central.extend_from_slice(&0u32.to_le_bytes()); // external attrs
        self.central.extend_from_slice(&offset.to_le_bytes());
        self.central.extend_from_slice(name);
        self.count += 1;
    }

    pub fn finish(mut self) -> Vec<u8> {
        let cd_off = self.out.len() as u32;
        let cd_size = self.central.len() as u32;
        self.out.append(&mut self.central);
        self.out.extend_from_slice(&EOCD_SIG.to_le_bytes());
        self.out.extend_from_slice(&0u16.to_le_bytes());
        self.out.extend_from_slice(&0u16.to_le_bytes());
        self.out.extend_from_slice(&self.count.to_le_bytes());
        self.out.extend_from_slice(&self.count.to_le_bytes());
        self.out.extend_from_slice(&cd_size.to_le_bytes());
        self.out.extend_from_slice(&cd_off.to_le_bytes());
        self.out.extend_from_slice(&0u16.to_le_bytes());
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stored_and_deflated_round_trip() {
        let mut w = ZipWriter::new();
        w.add("a.txt", b"hello hello hello hello", Method::Deflated);
        w.add("dir/b.bin", &[0, 1, 2, 3], Method::Stored);
        w.add("empty", b"", Method::Deflated);
        let bytes = w.finish();
        let members = read_archive(&bytes).unwrap();
        assert_eq!(members.len(), 3);
        assert_eq!(members[0].name, "a.txt");
        assert_eq!(members[0].data, b"hello hello hello hello");
        assert_eq!(members[1].data, vec![0, 1, 2, 3]);
        assert!(members[2].data.is_empty());
    }

    #[test]
    fn empty_archive_has_no_members() {
        let mut bytes = b"PK\x05\x06".to_vec();
        bytes.extend_from_slice(&[0; 18]);
        assert_eq!(read_archive(&bytes).unwrap(), vec![]);
    }

    #[test]
    fn garbage_is_not_a_zip() {
        assert_eq!(read_archive(b"not a zip at all, definitely"), Err(ZipError::NotAZip));
        assert_eq!(read_archive(b""), Err(ZipError::NotAZip));
    }

    #[test]
    fn corrupted_payload_is_a_decompression_failure() {
        let mut w = ZipWriter::new();
        w.add("x.dat", b"payload", Method::Stored);
        let mut bytes = w.finish();
        // first payload byte lives after the 30-byte local header and the name
        bytes[30 + 5] ^= 0xff;
        assert_eq!(
            read_archive(&bytes),
            Err(ZipError::Decompression("x.dat".into()))
        );
    }
}
