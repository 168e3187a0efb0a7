//! Element tree to Android binary XML.

use std::collections::HashMap;

use crate::apk::axml::AXML_MAGIC;
use crate::apk::manifest::XmlElement;

use super::xml::ANDROID_NS;

const NONE: u32 = 0xffff_ffff;

fn known_resource_id(attr: &str) -> u32 {
    match attr {
        "name" => 0x0101_0003,
        "required" => 0x0101_028e,
        "label" => 0x0101_0001,
        "exported" => 0x0101_0010,
        _ => 0,
    }
}

struct Pool {
    strings: Vec<String>,
    index: HashMap<String, u32>,
}

impl Pool {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        let i = self.strings.len() as u32;
        self.strings.push(s.to_owned());
        self.index.insert(s.to_owned(), i);
        i
    }
}

fn split_attr(key: &str) -> (Option<&str>, &str) {
    match key.split_once(':') {
        Some((prefix, local)) => (Some(prefix), local),
        None => (None, key),
    }
}

fn visit_attr_names(el: &XmlElement, pool: &mut Pool) {
    for (k, _) in &el.attrs {
        if k == "xmlns" || k.starts_with("xmlns:") {
            continue;
        }
        pool.intern(split_attr(k).1);
    }
    for c in &el.children {
        visit_attr_names(c, pool);
    }
}

fn chunk(ty: u16, header_size: u16, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + body.len());
    out.extend_from_slice(&ty.to_le_bytes());
    out.extend_from_slice(&header_size.to_le_bytes());
    out.extend_from_slice(&((8 + body.len()) as u32).to_le_bytes());
    out.extend_from_slice(body);
    out
}

fn u32s(vals: &[u32]) -> Vec<u8> {
    vals.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn emit(el: &XmlElement, pool: &mut Pool, ns_uri: u32, out: &mut Vec<u8>) {
    let name = pool.intern(&el.name);
    let attrs: Vec<(u32, u32, u32)> = el
        .attrs
        .iter()
        .filter(|(k, _)| k != "xmlns" && !k.starts_with("xmlns:"))
        .map(|(k, v)| {
            let (prefix, local) = split_attr(k);
            let ns = if prefix.is_some() { ns_uri } else { NONE };
            (ns, pool.intern(local), pool.intern(v))
        })
        .collect();
    let mut body = u32s(&[1, NONE, NONE, name]);
    body.extend_from_slice(&20u16.to_le_bytes());
    body.extend_from_slice(&20u16.to_le_bytes());
    body.extend_from_slice(&(attrs.len() as u16).to_le_bytes());
    body.extend_from_slice(&[0; 6]);
    for (ns, n, v) in attrs {
        body.extend_from_slice(&u32s(&[ns, n, v]));
        body.extend_from_slice(&8u16.to_le_bytes());
        body.push(0);
        body.push(0x03);
        body.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(chunk(0x0102, 16, &body));
    for c in &el.children {
        emit(c, pool, ns_uri, out);
    }
    out.extend(chunk(0x0103, 16, &u32s(&[1, NONE, NONE, name])));
}

fn string_pool_chunk(strings: &[String]) -> Vec<u8> {
    let mut offsets = Vec::with_capacity(strings.len());
    let mut data = Vec::new();
    for s in strings {
        offsets.push(data.len() as u32);
        let units: Vec<u16> = s.encode_utf16().collect();
        if units.len() > 0x7fff {
            let n = units.len() as u32;
            data.extend_from_slice(&((0x8000 | (n >> 16)) as u16).to_le_bytes());
            data.extend_from_slice(&(n as u16).to_le_bytes());
        } else {
            data.extend_from_slice(&(units.len() as u16).to_le_bytes());
        }
        for u in units {
            data.extend_from_slice(&u.to_le_bytes());
        }
        data.extend_from_slice(&[0, 0]);
    }
    while data.len() % 4 != 0 {
        data.push(0);
    }
    let strings_start = 28 + 4 * strings.len() as u32;
    let mut body = u32s(&[strings.len() as u32, 0, 0, strings_start, 0]);
    body.extend(u32s(&offsets));
    body.extend(data);
    chunk(0x0001, 28, &body)
}

pub fn encode_axml(root: &XmlElement) -> Vec<u8> {
    let mut pool = Pool {
        strings: Vec::new(),
        index: HashMap::new(),
    };
    // attribute names lead the pool so the resource map can index them
    visit_attr_names(root, &mut pool);
    let res_ids: Vec<u32> = pool.strings.iter().map(|s| known_resource_id(s)).collect();
    let prefix = pool.intern("android");
    let uri = pool.intern(ANDROID_NS);

    let mut elements = Vec::new();
    elements.extend(chunk(0x0100, 16, &u32s(&[1, NONE, prefix, uri])));
    emit(root, &mut pool, uri, &mut elements);
    elements.extend(chunk(0x0101, 16, &u32s(&[1, NONE, prefix, uri])));

    let mut body = string_pool_chunk(&pool.strings);
    body.extend(chunk(0x0180, 8, &u32s(&res_ids)));
    body.extend(elements);
    let mut out = AXML_MAGIC.to_le_bytes().to_vec();
    out.extend_from_slice(&((8 + body.len()) as u32).to_le_bytes());
    out.extend(body);
    out
}
