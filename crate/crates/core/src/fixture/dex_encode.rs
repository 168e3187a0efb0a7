//! DEX encoder for fixture models.
//!
//! Tables are written in model order (no sorting), so a decode of the output
//! reproduces the model. Checksum and signature fields are recomputed.

use std::collections::HashMap;

use sha1::{Digest, Sha1};

use super::FixtureError;
use crate::apk::dex::{encode_mutf8, DexModel, ENDIAN_TAG, HEADER_SIZE, NO_INDEX};

fn align4(buf: &mut Vec<u8>) {
    while buf.len() % 4 != 0 {
        buf.push(0);
    }
}

fn put_uleb(buf: &mut Vec<u8>, mut v: u32) {
    loop {
        let b = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            buf.push(b);
            return;
        }
        buf.push(b | 0x80);
    }
}

fn put_u32_at(buf: &mut [u8], off: usize, v: u32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn return_descriptor(shorty: &str) -> &str {
    match shorty.chars().next() {
        Some('V') => "V",
        Some('Z') => "Z",
        Some('B') => "B",
        Some('S') => "S",
        Some('C') => "C",
        Some('I') => "I",
        Some('J') => "J",
        Some('F') => "F",
        Some('D') => "D",
        _ => "Ljava/lang/Object;",
    }
}

pub fn encode_dex(model: &DexModel) -> Result<Vec<u8>, FixtureError> {
    let mut model = model.clone();
    model.canonicalize();

    let string_idx: HashMap<&str, u32> = model
        .string_pool
        .iter()
        .enumerate()
        .rev()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let type_idx: HashMap<&str, u32> = model
        .type_names
        .iter()
        .enumerate()
        .rev()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let lookup_string = |s: &str| {
        string_idx
            .get(s)
            .copied()
            .ok_or_else(|| FixtureError::Unresolved(s.to_owned()))
    };
    let lookup_type = |s: &str| {
        type_idx
            .get(s)
            .copied()
            .ok_or_else(|| FixtureError::Unresolved(s.to_owned()))
    };

    if model.type_names.len() > 0xffff || model.method_refs.len() > 0xffff {
        return Err(FixtureError::ModelTooLarge);
    }

    // distinct shorties become proto ids, in first-use order
    let mut protos: Vec<&str> = Vec::new();
    let mut proto_of: HashMap<&str, u16> = HashMap::new();
    for m in &model.method_refs {
        if !proto_of.contains_key(m.shorty.as_str()) {
            proto_of.insert(m.shorty.as_str(), protos.len() as u16);
            protos.push(m.shorty.as_str());
        }
    }
    if protos.len() > 0xffff {
        return Err(FixtureError::ModelTooLarge);
    }

    let n_strings = model.string_pool.len();
    let n_types = model.type_names.len();
    let n_methods = model.method_refs.len();
    let n_classes = model.classes.len();

    let string_ids_off = HEADER_SIZE;
    let type_ids_off = string_ids_off + 4 * n_strings;
    let proto_ids_off = type_ids_off + 4 * n_types;
    let method_ids_off = proto_ids_off + 12 * protos.len();
    let class_defs_off = method_ids_off + 8 * n_methods;
    let data_off = class_defs_off + 32 * n_classes;

    let mut buf = vec![0u8; data_off];

    for (i, s) in model.string_pool.iter().enumerate() {
        let at = buf.len() as u32;
        let (bytes, utf16_len) = encode_mutf8(s);
        put_uleb(&mut buf, utf16_len);
        buf.extend_from_slice(&bytes);
        buf.push(0);
        put_u32_at(&mut buf, string_ids_off + 4 * i, at);
    }
    for (i, t) in model.type_names.iter().enumerate() {
        let idx = lookup_string(t)?;
        put_u32_at(&mut buf, type_ids_off + 4 * i, idx);
    }
    for (i, shorty) in protos.iter().enumerate() {
        let at = proto_ids_off + 12 * i;
        put_u32_at(&mut buf, at, lookup_string(shorty)?);
        let ret = type_idx.get(return_descriptor(shorty)).copied().unwrap_or(0);
        put_u32_at(&mut buf, at + 4, ret);
        put_u32_at(&mut buf, at + 8, 0);
    }
    for (i, m) in model.method_refs.iter().enumerate() {
        let at = method_ids_off + 8 * i;
        let class = lookup_type(&m.class)? as u16;
        buf[at..at + 2].copy_from_slice(&class.to_le_bytes());
        buf[at + 2..at + 4].copy_from_slice(&proto_of[m.shorty.as_str()].to_le_bytes());
        put_u32_at(&mut buf, at + 4, lookup_string(&m.name)?);
    }

    // code items, remembering each one's offset
    let mut code_offsets: Vec<Vec<u32>> = Vec::with_capacity(n_classes);
    for class in &model.classes {
        let mut offs = Vec::with_capacity(class.methods.len());
        for method in &class.methods {
            if method.method_idx as usize >= n_methods {
                return Err(FixtureError::Unresolved(format!("method index {}", method.method_idx)));
            }
            match &method.code {
                None => offs.push(0),
                Some(code) => {
                    align4(&mut buf);
                    offs.push(buf.len() as u32);
                    for insn in &code.insns {
                        if let Some(s) = insn.string_index() {
                            if s as usize >= n_strings {
                                return Err(FixtureError::Unresolved(format!("string index {s}")));
                            }
                        }
                        if let Some(m) = insn.method_index() {
                            if m as usize >= n_methods {
                                return Err(FixtureError::Unresolved(format!("method index {m}")));
                            }
                        }
                    }
                    let units = code.units_len();
                    buf.extend_from_slice(&code.registers.to_le_bytes());
                    buf.extend_from_slice(&code.ins.to_le_bytes());
                    buf.extend_from_slice(&code.outs.to_le_bytes());
                    buf.extend_from_slice(&0u16.to_le_bytes()); // tries
                    buf.extend_from_slice(&0u32.to_le_bytes()); // debug info
                    buf.extend_from_slice(&(units as u32).to_le_bytes());
                    for unit in code.insns.iter().flat_map(|i| i.0.iter()) {
                        buf.extend_from_slice(&unit.to_le_bytes());
                    }
                }
            }
        }
        code_offsets.push(offs);
    }

    for (ci, class) in model.classes.iter().enumerate() {
        let at = class_defs_off + 32 * ci;
        put_u32_at(&mut buf, at, lookup_type(&class.name)?);
        put_u32_at(&mut buf, at + 4, class.access_flags);
        let sup = match &class.superclass {
            Some(s) => lookup_type(s)?,
            None => NO_INDEX,
        };
        put_u32_at(&mut buf, at + 8, sup);
        put_u32_at(&mut buf, at + 16, NO_INDEX); // source file
        if class.methods.is_empty() {
            continue;
        }
        let data_at = buf.len() as u32;
        let direct: Vec<usize> = (0..class.methods.len()).filter(|&i| !class.methods[i].is_virtual).collect();
        let virtual_: Vec<usize> = (0..class.methods.len()).filter(|&i| class.methods[i].is_virtual).collect();
        put_uleb(&mut buf, 0);
        put_uleb(&mut buf, 0);
        put_uleb(&mut buf, direct.len() as u32);
        put_uleb(&mut buf, virtual_.len() as u32);
        for group in [&direct, &virtual_] {
            let mut prev: Option<u32> = None;
            for &mi in group.iter() {
                let m = &class.methods[mi];
                let diff = match prev {
                    None => m.method_idx,
                    Some(p) if m.method_idx > p => m.method_idx - p,
                    Some(_) => return Err(FixtureError::Unresolved(format!(
                        "duplicate method index {} in {}", m.method_idx, class.name
                    ))),
                };
                prev = Some(m.method_idx);
                put_uleb(&mut buf, diff);
                put_uleb(&mut buf, m.access_flags);
                put_uleb(&mut buf, code_offsets[ci][mi]);
            }
        }
        put_u32_at(&mut buf, at + 24, data_at);
    }

    align4(&mut buf);
    let map_off = buf.len();
    let mut map: Vec<(u16, u32, u32)> = vec![(0x0000, 1, 0)];
    for (ty, n, off) in [
        (0x0001u16, n_strings, string_ids_off),
        (0x0002, n_types, type_ids_off),
        (0x0003, protos.len(), proto_ids_off),
        (0x0005, n_methods, method_ids_off),
        (0x0006, n_classes, class_defs_off),
    ] {
        if n > 0 {
            map.push((ty, n as u32, off as u32));
        }
    }
    map.push((0x1000, 1, map_off as u32));
    buf.extend_from_slice(&(map.len() as u32).to_le_bytes());
    for (ty, n, off) in map {
        buf.extend_from_slice(&ty.to_le_bytes());
        buf.extend_from_slice(&0u16.to_le_bytes());
        buf.extend_from_slice(&n.to_le_bytes());
        buf.extend_from_slice(&off.to_le_bytes());
    }

    let file_size = buf.len();
    if file_size > u32::MAX as usize {
        return Err(FixtureError::ModelTooLarge);
    }
    let version = format!("{:03}", model.version);
    buf[..4].copy_from_slice(b"dex\n");
    buf[4..7].copy_from_slice(version.as_bytes());
    buf[7] = 0;
    put_u32_at(&mut buf, 0x20, file_size as u32);
    put_u32_at(&mut buf, 0x24, HEADER_SIZE as u32);
    put_u32_at(&mut buf, 0x28, ENDIAN_TAG);
    put_u32_at(&mut buf, 0x34, map_off as u32);
    let tables = [
        (0x38, n_strings, string_ids_off),
        (0x40, n_types, type_ids_off),
        (0x48, protos.len(), proto_ids_off),
        (0x50, 0, 0),
        (0x58, n_methods, method_ids_off),
        (0x60, n_classes, class_defs_off),
    ];
    for (at, n, off) in tables {
        put_u32_at(&mut buf, at, n as u32);
        put_u32_at(&mut buf, at + 4, if n == 0 { 0 } else { off as u32 });
    }
    put_u32_at(&mut buf, 0x68, (file_size - data_off) as u32);
    put_u32_at(&mut buf, 0x6c, data_off as u32);

    let signature = Sha1::digest(&buf[32..]);
    buf[12..32].copy_from_slice(&signature);
    let mut adler = adler2::Adler32::new();
    adler.write_slice(&buf[12..]);
    put_u32_at(&mut buf, 8, adler.checksum());
    Ok(buf)
}
