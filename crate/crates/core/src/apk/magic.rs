//! File-type identification from leading bytes.

/// Number of leading bytes consulted by [`sniff_magic`].
pub const SNIFF_LEN: usize = 16;

/// Magic types whose content is treated as text by the string extractor.
pub const TEXT_TYPES: &[&str] = &["text", "xml_plain"];

const SIGNATURES: &[(&[u8], &str)] = &[
    (b"dex\n", "dex"),
    (b"PK\x03\x04", "zip"),
    (b"PK\x05\x06", "zip"),
    (b"\x89PNG\r\n\x1a\n", "png"),
    (b"\xff\xd8\xff", "jpeg"),
    (b"GIF87a", "gif"),
    (b"GIF89a", "gif"),
    (b"\x03\x00\x08\x00", "axml"),
    (b"\x02\x00\x0c\x00", "arsc"),
    (b"\x7fELF", "elf"),
    (b"%PDF", "pdf"),
    (b"OggS", "ogg"),
    (b"\x00\x01\x00\x00\x00", "ttf"),
    (b"true", "ttf"),
    (b"OTTO", "otf"),
    (b"ID3", "mp3"),
    (b"\x1f\x8b", "gzip"),
    (b"<?xml", "xml_plain"),
    (b"\x30\x82", "der"),
    (b"\x30\x80", "der"),
];

/// Identify the content type of an entry from its first bytes.
///
/// Returns a tag from a fixed table; anything unmatched that looks like
/// text is `"text"`, everything else `"unknown"`.
pub fn sniff_magic(head: &[u8]) -> &'static str {
    let head = &head[..head.len().min(SNIFF_LEN)];
    if head.is_empty() {
        return "unknown";
    }
    for (sig, tag) in SIGNATURES {
        if head.starts_with(sig) {
            return tag;
        }
    }
    if head.len() >= 12 && &head[..4] == b"RIFF" && &head[8..12] == b"WEBP" {
        return "webp";
    }
    let trimmed = trim_ascii_start(head);
    if trimmed.first() == Some(&b'<') && looks_textual(head) {
        return "xml_plain";
    }
    if looks_textual(head) {
        return "text";
    }
    "unknown"
}

fn trim_ascii_start(bytes: &[u8]) -> &[u8] {
    let skip = bytes
        .iter()
        .take_while(|b| b.is_ascii_whitespace() || **b == 0xef || **b == 0xbb || **b == 0xbf)
        .count();
    &bytes[skip..]
}

// Printable ASCII, whitespace, NUL separators and UTF-8 high bytes; at least
// one printable character.
fn looks_textual(head: &[u8]) -> bool {
    let ok = head.iter().all(|&b| {
        b == 0 || b == b'\t' || b == b'\n' || b == b'\r' || (0x20..0x7f).contains(&b) || b >= 0x80
    });
    ok && head.iter().any(|b| b.is_ascii_graphic())
}

pub fn is_text_type(tag: &str) -> bool {
    TEXT_TYPES.contains(&tag)
}
