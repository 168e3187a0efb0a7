//! DEX container model and decoder.
//!
//! The model keeps the file's own table order and indices, so code units in
//! method bodies reference `string_pool` and `method_refs` positions directly.
//! Method references are resolved to text on decode.

use serde::{Deserialize, Serialize};

use super::opcodes;

pub const NO_INDEX: u32 = 0xffff_ffff;
pub const HEADER_SIZE: usize = 0x70;
pub const ENDIAN_TAG: u32 = 0x1234_5678;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DexError {
    #[error("bad DEX magic or unsupported version")]
    BadDexMagic,
    #[error("DEX data truncated")]
    TruncatedDex,
    #[error("invalid index in {section} at offset {offset:#x}")]
    InvalidIndex { section: &'static str, offset: usize },
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MethodRef {
    pub class: String,
    pub name: String,
    pub shorty: String,
}

impl MethodRef {
    pub fn new(class: &str, name: &str, shorty: &str) -> Self {
        Self {
            class: class.to_owned(),
            name: name.to_owned(),
            shorty: shorty.to_owned(),
        }
    }

    /// `Lpkg/Cls;->name(SHORTY)`
    pub fn signature(&self) -> String {
        format!("{}->{}({})", self.class, self.name, self.shorty)
    }
}

/// One decoded instruction: its raw code units. Payload pseudo-instructions
/// are kept whole so bodies re-encode exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insn(pub Vec<u16>);

impl Insn {
    pub fn opcode(&self) -> u8 {
        (self.0[0] & 0xff) as u8
    }

    pub fn is_payload(&self) -> bool {
        opcodes::is_payload_ident(self.0[0])
    }

    /// String-pool index loaded by `const-string` / `const-string/jumbo`.
    pub fn string_index(&self) -> Option<u32> {
        match self.opcode() {
            opcodes::CONST_STRING if !self.is_payload() => Some(self.0[1] as u32),
            opcodes::CONST_STRING_JUMBO => Some(self.0[1] as u32 | (self.0[2] as u32) << 16),
            _ => None,
        }
    }

    pub fn method_index(&self) -> Option<u32> {
        if !self.is_payload() && opcodes::is_method_invoke(self.opcode()) {
            Some(self.0[1] as u32)
        } else {
            None
        }
    }

    /// Register byte of a single-register format (`vAA`).
    pub fn reg_aa(&self) -> u8 {
        (self.0[0] >> 8) as u8
    }

    pub fn nop() -> Self {
        Insn(vec![0x0000])
    }

    pub fn return_void() -> Self {
        Insn(vec![opcodes::RETURN_VOID as u16])
    }

    pub fn goto(offset: i8) -> Self {
        Insn(vec![opcodes::GOTO as u16 | ((offset as u8 as u16) << 8)])
    }

    pub fn goto16(offset: i16) -> Self {
        Insn(vec![opcodes::GOTO_16 as u16, offset as u16])
    }

    pub fn const4(reg: u8, value: i8) -> Self {
        let nib = (value as u8 & 0x0f) as u16;
        Insn(vec![opcodes::CONST_4 as u16 | ((reg as u16 & 0x0f) << 8) | (nib << 12)])
    }

    pub fn const_string(reg: u8, string_idx: u32) -> Self {
        if string_idx <= 0xffff {
            Insn(vec![opcodes::CONST_STRING as u16 | (reg as u16) << 8, string_idx as u16])
        } else {
            Insn(vec![
                opcodes::CONST_STRING_JUMBO as u16 | (reg as u16) << 8,
                string_idx as u16,
                (string_idx >> 16) as u16,
            ])
        }
    }

    /// 35c invoke with up to five argument registers.
    pub fn invoke(op: u8, method_idx: u16, args: &[u8]) -> Self {
        debug_assert!(args.len() <= 5 && opcodes::width(op) == Some(3));
        let reg = |i: usize| args.get(i).copied().unwrap_or(0) as u16 & 0x0f;
        let count = args.len() as u16;
        let g = if args.len() == 5 { reg(4) } else { 0 };
        Insn(vec![
            op as u16 | (g << 8) | (count << 12),
            method_idx,
            reg(0) | reg(1) << 4 | reg(2) << 8 | reg(3) << 12,
        ])
    }

    pub fn move_result_object(reg: u8) -> Self {
        Insn(vec![opcodes::MOVE_RESULT_OBJECT as u16 | (reg as u16) << 8])
    }

    /// Replace the method index of an invoke instruction.
    pub fn with_method_index(&self, method_idx: u16) -> Self {
        let mut units = self.0.clone();
        units[1] = method_idx;
        Insn(units)
    }

    /// Re-target this invoke's opcode while keeping its operands.
    pub fn with_opcode(&self, op: u8) -> Self {
        let mut units = self.0.clone();
        units[0] = (units[0] & 0xff00) | op as u16;
        Insn(units)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeItem {
    pub registers: u16,
    pub ins: u16,
    pub outs: u16,
    pub insns: Vec<Insn>,
}

impl CodeItem {
    pub fn new(registers: u16, insns: Vec<Insn>) -> Self {
        Self {
            registers,
            ins: 0,
            outs: 5,
            insns,
        }
    }

    /// Opcode byte of every instruction in code order. A payload
    /// pseudo-instruction contributes its `0x00` pseudo-opcode once.
    pub fn opcode_sequence(&self) -> Vec<u8> {
        self.insns.iter().map(Insn::opcode).collect()
    }

    pub fn const_string_uses(&self) -> Vec<u32> {
        self.insns.iter().filter_map(Insn::string_index).collect()
    }

    /// `(instruction position, method index)` of every invoke site.
    pub fn invoke_sites(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.insns
            .iter()
            .enumerate()
            .filter_map(|(i, insn)| insn.method_index().map(|m| (i, m)))
    }

    pub fn units_len(&self) -> usize {
        self.insns.iter().map(|i| i.0.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedMethod {
    pub method_idx: u32,
    pub access_flags: u32,
    pub is_virtual: bool,
    pub code: Option<CodeItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub name: String,
    pub superclass: Option<String>,
    pub access_flags: u32,
    pub methods: Vec<EncodedMethod>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DexModel {
    /// Three-digit format version, 35 through 39.
    pub version: u16,
    pub string_pool: Vec<String>,
    pub type_names: Vec<String>,
    pub method_refs: Vec<MethodRef>,
    pub classes: Vec<ClassDef>,
}

impl Default for DexModel {
    fn default() -> Self {
        Self {
            version: 35,
            string_pool: Vec::new(),
            type_names: Vec::new(),
            method_refs: Vec::new(),
            classes: Vec::new(),
        }
    }
}

impl DexModel {
    pub fn defined_class_names(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.name.as_str())
    }

    pub fn code_items(&self) -> impl Iterator<Item = &CodeItem> {
        self.classes
            .iter()
            .flat_map(|c| c.methods.iter())
            .filter_map(|m| m.code.as_ref())
    }

    /// Index of `s` in the string pool, appending it when absent.
    pub fn intern_string(&mut self, s: &str) -> u32 {
        if let Some(i) = self.string_pool.iter().position(|p| p == s) {
            return i as u32;
        }
        self.string_pool.push(s.to_owned());
        (self.string_pool.len() - 1) as u32
    }

    pub fn intern_type(&mut self, descriptor: &str) -> u32 {
        self.intern_string(descriptor);
        if let Some(i) = self.type_names.iter().position(|p| p == descriptor) {
            return i as u32;
        }
        self.type_names.push(descriptor.to_owned());
        (self.type_names.len() - 1) as u32
    }

    /// Index of the method reference, appending it (and its names) when absent.
    pub fn intern_method(&mut self, r: &MethodRef) -> u32 {
        if let Some(i) = self.method_refs.iter().position(|m| m == r) {
            return i as u32;
        }
        self.intern_type(&r.class);
        self.intern_string(&r.name);
        self.intern_string(&r.shorty);
        self.method_refs.push(r.clone());
        (self.method_refs.len() - 1) as u32
    }

    /// Sort each class's methods into the order the encoder emits: direct
    /// methods then virtual methods, each by ascending method index.
    pub fn canonicalize(&mut self) {
        for class in &mut self.classes {
            class.methods.sort_by_key(|m| (m.is_virtual, m.method_idx));
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn u16(&self, off: usize) -> Result<u16, DexError> {
        self.bytes
            .get(off..off.checked_add(2).ok_or(DexError::TruncatedDex)?)
            .map(|s| u16::from_le_bytes([s[0], s[1]]))
            .ok_or(DexError::TruncatedDex)
    }

    fn u32(&self, off: usize) -> Result<u32, DexError> {
        self.bytes
            .get(off..off.checked_add(4).ok_or(DexError::TruncatedDex)?)
            .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
            .ok_or(DexError::TruncatedDex)
    }

    fn uleb(&self, off: &mut usize) -> Result<u32, DexError> {
        let mut result: u32 = 0;
        for i in 0..5 {
            let b = *self.bytes.get(*off).ok_or(DexError::TruncatedDex)?;
            *off += 1;
            result |= ((b & 0x7f) as u32) << (7 * i);
            if b & 0x80 == 0 {
                return Ok(result);
            }
        }
        Err(DexError::TruncatedDex)
    }

    /// Check that `count` items of `item` bytes at `off` lie inside the file.
    fn section(&self, name: &'static str, off: u32, count: u32, item: usize) -> Result<usize, DexError> {
        let off = off as usize;
        let end = (count as usize)
            .checked_mul(item)
            .and_then(|len| len.checked_add(off));
        match end {
            Some(end) if count == 0 || end <= self.bytes.len() => Ok(off),
            _ => Err(DexError::InvalidIndex { section: name, offset: off }),
        }
    }
}

/// Decode modified UTF-8 (as stored in DEX string data) into a `String`.
pub fn decode_mutf8(bytes: &[u8]) -> String {
    let mut units = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if b & 0x80 == 0 {
            units.push(b as u16);
            i += 1;
        } else if b & 0xe0 == 0xc0 && i + 1 < bytes.len() {
            units.push(((b as u16 & 0x1f) << 6) | (bytes[i + 1] as u16 & 0x3f));
            i += 2;
        } else if b & 0xf0 == 0xe0 && i + 2 < bytes.len() {
            units.push(
                ((b as u16 & 0x0f) << 12)
                    | ((bytes[i + 1] as u16 & 0x3f) << 6)
                    | (bytes[i + 2] as u16 & 0x3f),
            );
            i += 3;
        } else {
            units.push(0xfffd);
            i += 1;
        }
    }
    char::decode_utf16(units)
        .map(|r| r.unwrap_or('\u{fffd}'))
        .collect()
}

/// Encode a string as modified UTF-8; returns the bytes and the UTF-16 length.
pub fn encode_mutf8(s: &str) -> (Vec<u8>, u32) {
    let mut out = Vec::with_capacity(s.len());
    let mut n = 0u32;
    for unit in s.encode_utf16() {
        n += 1;
        match unit {
            0x0001..=0x007f => out.push(unit as u8),
            0x0000 | 0x0080..=0x07ff => {
                out.push(0xc0 | (unit >> 6) as u8);
                out.push(0x80 | (unit & 0x3f) as u8);
            }
            _ => {
                out.push(0xe0 | (unit >> 12) as u8);
                out.push(0x80 | ((unit >> 6) & 0x3f) as u8);
                out.push(0x80 | (unit & 0x3f) as u8);
            }
        }
    }
    (out, n)
}

fn check_magic(bytes: &[u8]) -> Result<u16, DexError> {
    if bytes.len() < 8 || &bytes[..4] != b"dex\n" || bytes[7] != 0 {
        return Err(DexError::BadDexMagic);
    }
    let digits = &bytes[4..7];
    if !digits.iter().all(u8::is_ascii_digit) {
        return Err(DexError::BadDexMagic);
    }
    let version = digits.iter().fold(0u16, |acc, d| acc * 10 + (d - b'0') as u16);
    if !(35..=39).contains(&version) {
        return Err(DexError::BadDexMagic);
    }
    Ok(version)
}

/// Decode a DEX file.
pub fn parse_dex(bytes: &[u8]) -> Result<DexModel, DexError> {
    let version = check_magic(bytes)?;
    if bytes.len() < HEADER_SIZE {
        return Err(DexError::TruncatedDex);
    }
    let r = Reader { bytes };
    if r.u32(0x28)? != ENDIAN_TAG {
        return Err(DexError::BadDexMagic);
    }
    let (string_n, string_off) = (r.u32(0x38)?, r.u32(0x3c)?);
    let (type_n, type_off) = (r.u32(0x40)?, r.u32(0x44)?);
    let (proto_n, proto_off) = (r.u32(0x48)?, r.u32(0x4c)?);
    let (method_n, method_off) = (r.u32(0x58)?, r.u32(0x5c)?);
    let (class_n, class_off) = (r.u32(0x60)?, r.u32(0x64)?);

    let string_off = r.section("string_ids", string_off, string_n, 4)?;
    let mut string_pool = Vec::with_capacity(string_n as usize);
    for i in 0..string_n as usize {
        let data_off = r.u32(string_off + 4 * i)? as usize;
        let mut pos = data_off;
        if pos >= bytes.len() {
            return Err(DexError::InvalidIndex { section: "string_data", offset: data_off });
        }
        r.uleb(&mut pos)?;
        let len = bytes[pos..]
            .iter()
            .position(|&b| b == 0)
            .ok_or(DexError::TruncatedDex)?;
        string_pool.push(decode_mutf8(&bytes[pos..pos + len]));
    }

    let string = |idx: u32, section: &'static str, offset: usize| {
        string_pool
            .get(idx as usize)
            .cloned()
            .ok_or(DexError::InvalidIndex { section, offset })
    };

    let type_off = r.section("type_ids", type_off, type_n, 4)?;
    let mut type_names = Vec::with_capacity(type_n as usize);
    for i in 0..type_n as usize {
        let at = type_off + 4 * i;
        type_names.push(string(r.u32(at)?, "type_ids", at)?);
    }

    let proto_off = r.section("proto_ids", proto_off, proto_n, 12)?;
    let mut shorties = Vec::with_capacity(proto_n as usize);
    for i in 0..proto_n as usize {
        let at = proto_off + 12 * i;
        shorties.push(string(r.u32(at)?, "proto_ids", at)?);
    }

    let method_off = r.section("method_ids", method_off, method_n, 8)?;
    let mut method_refs = Vec::with_capacity(method_n as usize);
    for i in 0..method_n as usize {
        let at = method_off + 8 * i;
        let class = type_names
            .get(r.u16(at)? as usize)
            .cloned()
            .ok_or(DexError::InvalidIndex { section: "method_ids", offset: at })?;
        let shorty = shorties
            .get(r.u16(at + 2)? as usize)
            .cloned()
            .ok_or(DexError::InvalidIndex { section: "method_ids", offset: at })?;
        let name = string(r.u32(at + 4)?, "method_ids", at)?;
        method_refs.push(MethodRef { class, name, shorty });
    }

    let class_off = r.section("class_defs", class_off, class_n, 32)?;
    let mut classes = Vec::with_capacity(class_n as usize);
    for i in 0..class_n as usize {
        let at = class_off + 32 * i;
        let bad = DexError::InvalidIndex { section: "class_defs", offset: at };
        let name = type_names
            .get(r.u32(at)? as usize)
            .cloned()
            .ok_or(bad.clone())?;
        let access_flags = r.u32(at + 4)?;
        let superclass = match r.u32(at + 8)? {
            NO_INDEX => None,
            idx => Some(type_names.get(idx as usize).cloned().ok_or(bad)?),
        };
        let data_off = r.u32(at + 24)? as usize;
        let methods = if data_off == 0 {
            Vec::new()
        } else {
            parse_class_data(&r, data_off, &string_pool, method_refs.len())?
        };
        classes.push(ClassDef {
            name,
            superclass,
            access_flags,
            methods,
        });
    }

    Ok(DexModel {
        version,
        string_pool,
        type_names,
        method_refs,
        classes,
    })
}

fn parse_class_data(
    r: &Reader<'_>,
    off: usize,
    strings: &[String],
    n_methods: usize,
) -> Result<Vec<EncodedMethod>, DexError> {
    if off >= r.bytes.len() {
        return Err(DexError::InvalidIndex { section: "class_data", offset: off });
    }
    let mut pos = off;
    let static_fields = r.uleb(&mut pos)?;
    let instance_fields = r.uleb(&mut pos)?;
    let direct = r.uleb(&mut pos)?;
    let virtual_ = r.uleb(&mut pos)?;
    for _ in 0..(static_fields as u64 + instance_fields as u64) {
        r.uleb(&mut pos)?;
        r.uleb(&mut pos)?;
    }
    let mut methods = Vec::new();
    for (count, is_virtual) in [(direct, false), (virtual_, true)] {
        let mut idx: u64 = 0;
        for _ in 0..count {
            let entry = pos;
            idx += r.uleb(&mut pos)? as u64;
            let access_flags = r.uleb(&mut pos)?;
            let code_off = r.uleb(&mut pos)? as usize;
            if idx >= n_methods as u64 {
                return Err(DexError::InvalidIndex { section: "class_data", offset: entry });
            }
            let code = if code_off == 0 {
                None
            } else {
                Some(parse_code(r, code_off, strings.len(), n_methods)?)
            };
            methods.push(EncodedMethod {
                method_idx: idx as u32,
                access_flags,
                is_virtual,
                code,
            });
        }
    }
    Ok(methods)
}

fn parse_code(r: &Reader<'_>, off: usize, n_strings: usize, n_methods: usize) -> Result<CodeItem, DexError> {
    let registers = r.u16(off)?;
    let ins = r.u16(off + 2)?;
    let outs = r.u16(off + 4)?;
    let insns_size = r.u32(off + 12)? as usize;
    let start = off + 16;
    let end = insns_size
        .checked_mul(2)
        .and_then(|n| n.checked_add(start))
        .filter(|&e| e <= r.bytes.len())
        .ok_or(DexError::TruncatedDex)?;
    let units: Vec<u16> = r.bytes[start..end]
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    let insns = decode_insns(&units)?;
    for (i, insn) in insns.iter().enumerate() {
        let bad = || DexError::InvalidIndex { section: "code", offset: start + 2 * i };
        if let Some(s) = insn.string_index() {
            if s as usize >= n_strings {
                return Err(bad());
            }
        }
        if let Some(m) = insn.method_index() {
            if m as usize >= n_methods {
                return Err(bad());
            }
        }
    }
    Ok(CodeItem {
        registers,
        ins,
        outs,
        insns,
    })
}

/// Split a method's code units into instructions using the Dalvik width table.
pub fn decode_insns(units: &[u16]) -> Result<Vec<Insn>, DexError> {
    let mut out = Vec::new();
    let mut pc = 0;
    while pc < units.len() {
        let unit = units[pc];
        let width = if opcodes::is_payload_ident(unit) {
            opcodes::payload_width(&units[pc..]).ok_or(DexError::TruncatedDex)?
        } else {
            let op = (unit & 0xff) as u8;
            opcodes::width(op).ok_or(DexError::UnknownOpcode(op))?
        };
        let end = pc.checked_add(width).filter(|&e| e <= units.len()).ok_or(DexError::TruncatedDex)?;
        out.push(Insn(units[pc..end].to_vec()));
        pc = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mutf8_round_trip() {
        for s in ["", "plain", "nul\0inside", "é ü", "日本語", "emoji 😀"] {
            let (bytes, n) = encode_mutf8(s);
            assert!(!bytes.contains(&0));
            assert_eq!(n as usize, s.encode_utf16().count());
            assert_eq!(decode_mutf8(&bytes), s);
        }
    }

    #[test]
    fn unsupported_version_rejected() {
        let mut b = b"dex\n999\0".to_vec();
        b.resize(0x70, 0);
        assert_eq!(parse_dex(&b), Err(DexError::BadDexMagic));
        assert_eq!(parse_dex(b"dex\n034\0"), Err(DexError::BadDexMagic));
        assert_eq!(parse_dex(b"zip"), Err(DexError::BadDexMagic));
    }

    #[test]
    fn short_header_is_truncated() {
        assert_eq!(parse_dex(b"dex\n035\0\0\0\0"), Err(DexError::TruncatedDex));
    }

    #[test]
    fn decode_widths_and_payload() {
        // const/4, packed-switch payload (size 1), fill-array payload, return-void
        let units = [0x0012, 0x0100, 1, 0, 0, 0, 0, 0x0300, 2, 1, 0, 0xaaaa, 0x000e];
        let insns = decode_insns(&units).unwrap();
        let ops: Vec<u8> = insns.iter().map(Insn::opcode).collect();
        assert_eq!(ops, vec![0x12, 0x00, 0x00, 0x0e]);
        assert!(insns[1].is_payload() && insns[2].is_payload());
    }

    #[test]
    fn unknown_and_truncated_opcodes() {
        assert_eq!(decode_insns(&[0x003e]), Err(DexError::UnknownOpcode(0x3e)));
        assert_eq!(decode_insns(&[0x001a]), Err(DexError::TruncatedDex));
    }

    #[test]
    fn insn_builders_decode() {
        let insns = [
            Insn::const4(1, -1),
            Insn::const_string(2, 7),
            Insn::const_string(2, 70000),
            Insn::invoke(opcodes::INVOKE_STATIC, 3, &[1, 2]),
            Insn::move_result_object(0),
            Insn::goto(2),
            Insn::goto16(-4),
            Insn::return_void(),
        ];
        let units: Vec<u16> = insns.iter().flat_map(|i| i.0.clone()).collect();
        assert_eq!(decode_insns(&units).unwrap(), insns.to_vec());
        assert_eq!(insns[1].string_index(), Some(7));
        assert_eq!(insns[2].string_index(), Some(70000));
        assert_eq!(insns[3].method_index(), Some(3));
        assert_eq!(insns[3].with_method_index(9).method_index(), Some(9));
    }
}
