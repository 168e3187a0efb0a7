//! Android binary XML (AXML) decoding into a plain element tree.

use super::manifest::{ManifestError, XmlElement};

pub const AXML_MAGIC: u32 = 0x0008_0003;

const CHUNK_STRING_POOL: u16 = 0x0001;
const CHUNK_RESOURCE_MAP: u16 = 0x0180;
const CHUNK_START_ELEMENT: u16 = 0x0102;
const CHUNK_END_ELEMENT: u16 = 0x0103;
const UTF8_FLAG: u32 = 1 << 8;
const NONE: u32 = 0xffff_ffff;

const TYPE_REFERENCE: u8 = 0x01;
const TYPE_STRING: u8 = 0x03;
const TYPE_INT_DEC: u8 = 0x10;
const TYPE_INT_HEX: u8 = 0x11;
const TYPE_BOOLEAN: u8 = 0x12;

fn bad(what: &'static str) -> ManifestError {
    ManifestError::MalformedAxml(what)
}

fn u16_at(b: &[u8], off: usize) -> Result<u16, ManifestError> {
    b.get(off..off.checked_add(2).ok_or(bad("offset overflow"))?)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or(bad("chunk out of bounds"))
}

fn u32_at(b: &[u8], off: usize) -> Result<u32, ManifestError> {
    b.get(off..off.checked_add(4).ok_or(bad("offset overflow"))?)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or(bad("chunk out of bounds"))
}

/// Attribute names for the framework resource ids that matter to the
/// manifest model, used when the string-pool name is blank.
fn resource_attr_name(id: u32) -> Option<&'static str> {
    match id {
        0x0101_0003 => Some("name"),
        0x0101_028e => Some("required"),
        0x0101_0001 => Some("label"),
        0x0101_0010 => Some("exported"),
        _ => None,
    }
}

fn read_string_pool(b: &[u8], chunk: usize, chunk_end: usize) -> Result<Vec<String>, ManifestError> {
    let header_size = u16_at(b, chunk + 2)? as usize;
    let count = u32_at(b, chunk + 8)? as usize;
    let flags = u32_at(b, chunk + 16)?;
    let strings_start = u32_at(b, chunk + 20)? as usize;
    let offsets_at = chunk + header_size;
    if count.checked_mul(4).and_then(|n| n.checked_add(offsets_at)).map_or(true, |e| e > chunk_end) {
        return Err(bad("string offsets out of bounds"));
    }
    let data = chunk.checked_add(strings_start).ok_or(bad("offset overflow"))?;
    let utf8 = flags & UTF8_FLAG != 0;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let at = data
            .checked_add(u32_at(b, offsets_at + 4 * i)? as usize)
            .filter(|&a| a < chunk_end)
            .ok_or(bad("string out of bounds"))?;
        out.push(if utf8 {
            read_utf8(b, at, chunk_end)?
        } else {
            read_utf16(b, at, chunk_end)?
        });
    }
    Ok(out)
}

fn read_utf8(b: &[u8], mut at: usize, end: usize) -> Result<String, ManifestError> {
    let len = |at: &mut usize| -> Result<usize, ManifestError> {
        let first = *b.get(*at).ok_or(bad("string out of bounds"))? as usize;
        *at += 1;
        if first & 0x80 != 0 {
            let second = *b.get(*at).ok_or(bad("string out of bounds"))? as usize;
            *at += 1;
            Ok(((first & 0x7f) << 8) | second)
        } else {
            Ok(first)
        }
    };
    let _utf16_len = len(&mut at)?;
    let n = len(&mut at)?;
    let bytes = b
        .get(at..at + n)
        .filter(|_| at + n <= end)
        .ok_or(bad("string out of bounds"))?;
    Ok(String::from_utf8_lossy(bytes).into_owned())
}

fn read_utf16(b: &[u8], mut at: usize, end: usize) -> Result<String, ManifestError> {
    let mut n = u16_at(b, at)? as usize;
    at += 2;
    if n & 0x8000 != 0 {
        n = ((n & 0x7fff) << 16) | u16_at(b, at)? as usize;
        at += 2;
    }
    let bytes_end = n
        .checked_mul(2)
        .and_then(|l| l.checked_add(at))
        .filter(|&e| e <= end)
        .ok_or(bad("string out of bounds"))?;
    let units: Vec<u16> = b[at..bytes_end]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(String::from_utf16_lossy(&units))
}

/// Decode an AXML document into its root element.
pub fn decode_axml(b: &[u8]) -> Result<XmlElement, ManifestError> {
    if u32_at(b, 0)? != AXML_MAGIC {
        return Err(bad("bad magic"));
    }
    let total = (u32_at(b, 4)? as usize).min(b.len());
    let mut strings: Vec<String> = Vec::new();
    let mut res_ids: Vec<u32> = Vec::new();
    let mut stack: Vec<XmlElement> = Vec::new();
    let mut root: Option<XmlElement> = None;

    let lookup = |strings: &[String], idx: u32| -> Result<String, ManifestError> {
        if idx == NONE {
            return Ok(String::new());
        }
        strings
            .get(idx as usize)
            .cloned()
            .ok_or(bad("string index out of range"))
    };

    let mut pos = 8;
    while pos + 8 <= total {
        let ty = u16_at(b, pos)?;
        let header_size = u16_at(b, pos + 2)? as usize;
        let size = u32_at(b, pos + 4)? as usize;
        let end = pos.checked_add(size).ok_or(bad("chunk size overflow"))?;
        if size < 8 || header_size < 8 || header_size > size || end > total {
            return Err(bad("chunk bounds"));
        }
        match ty {
            CHUNK_STRING_POOL => strings = read_string_pool(b, pos, end)?,
            CHUNK_RESOURCE_MAP => {
                res_ids = (pos + header_size..end)
                    .step_by(4)
                    .filter(|o| o + 4 <= end)
                    .map(|o| u32_at(b, o))
                    .collect::<Result<_, _>>()?;
            }
            CHUNK_START_ELEMENT => {
                let ext = pos + 16;
                let name = lookup(&strings, u32_at(b, ext + 4)?)?;
                let attr_start = u16_at(b, ext + 8)? as usize;
                let attr_size = u16_at(b, ext + 10)? as usize;
                let attr_count = u16_at(b, ext + 12)? as usize;
                if attr_size < 20 && attr_count > 0 {
                    return Err(bad("attribute size"));
                }
                let mut attrs = Vec::with_capacity(attr_count);
                for i in 0..attr_count {
                    let at = ext + attr_start + i * attr_size;
                    if at + 20 > end {
                        return Err(bad("attribute out of bounds"));
                    }
                    let name_idx = u32_at(b, at + 4)?;
                    let mut attr_name = lookup(&strings, name_idx)?;
                    if attr_name.is_empty() {
                        if let Some(n) = res_ids.get(name_idx as usize).and_then(|&id| resource_attr_name(id)) {
                            attr_name = n.to_owned();
                        }
                    }
                    let raw = u32_at(b, at + 8)?;
                    let data_type = b[at + 15];
                    let data = u32_at(b, at + 16)?;
                    let value = if raw != NONE {
                        lookup(&strings, raw)?
                    } else {
                        match data_type {
                            TYPE_STRING => lookup(&strings, data)?,
                            TYPE_BOOLEAN => (data != 0).to_string(),
                            TYPE_INT_DEC => (data as i32).to_string(),
                            TYPE_INT_HEX => format!("{data:#x}"),
                            TYPE_REFERENCE => format!("@{data:#010x}"),
                            _ => data.to_string(),
                        }
                    };
                    attrs.push((attr_name, value));
                }
                stack.push(XmlElement {
                    name,
                    attrs,
                    children: Vec::new(),
                });
            }
            CHUNK_END_ELEMENT => {
                let el = stack.pop().ok_or(bad("unbalanced end element"))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None => {
                        if root.is_none() {
                            root = Some(el);
                        }
                    }
                }
            }
            _ => {}
        }
        pos = end;
    }
    // tolerate missing end tags
    while let Some(el) = stack.pop() {
        match stack.last_mut() {
            Some(parent) => parent.children.push(el),
            None => root = root.or(Some(el)),
        }
    }
    root.ok_or(bad("no root element"))
}
