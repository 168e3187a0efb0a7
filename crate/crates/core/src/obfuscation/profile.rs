//! Named parameter bundles that make the synthetic tools disagree.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HelperPlacement {
    /// New methods go into the class that contains the rewritten code.
    SameClass,
    /// New methods go into one generated helper class per app.
    SeparateHelper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CipherTag {
    AesLike,
    CaesarLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JunkPattern {
    /// One to three `nop`s.
    NopRun,
    /// `goto +1` twice: each jumps to the next instruction.
    GotoPair,
    /// `goto +2` over a `nop`.
    GotoOverNop,
    /// `goto/16 +2`.
    LongGoto,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolProfile {
    pub name: String,
    pub name_alphabet: String,
    pub name_len: usize,
    pub junk_menu: Vec<JunkPattern>,
    pub helper: HelperPlacement,
    pub cipher: CipherTag,
    /// Whether bundled library code (framework-namespace classes shipped
    /// inside the app) is rewritten too.
    pub include_bundled: bool,
    /// Jitter intensity parameters per app; off by default so a profile
    /// behaves the same on every app.
    pub randomize: bool,
}

impl ToolProfile {
    pub fn builtin(name: &str) -> Option<Self> {
        let p = match name {
            "tool-a" => ToolProfile {
                name: name.into(),
                name_alphabet: "abcdefghijklmnopqrstuvwxyz0123456789".into(),
                name_len: 8,
                junk_menu: vec![JunkPattern::NopRun, JunkPattern::GotoOverNop],
                helper: HelperPlacement::SameClass,
                cipher: CipherTag::AesLike,
                include_bundled: true,
                randomize: false,
            },
            "tool-b" => ToolProfile {
                name: name.into(),
                name_alphabet: "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz".into(),
                name_len: 6,
                junk_menu: vec![JunkPattern::NopRun],
                helper: HelperPlacement::SeparateHelper,
                cipher: CipherTag::CaesarLike,
                include_bundled: false,
                randomize: false,
            },
            "tool-c" => ToolProfile {
                name: name.into(),
                name_alphabet: "Il1O0".into(),
                name_len: 10,
                junk_menu: vec![JunkPattern::GotoPair, JunkPattern::LongGoto, JunkPattern::NopRun],
                helper: HelperPlacement::SameClass,
                cipher: CipherTag::CaesarLike,
                include_bundled: true,
                randomize: false,
            },
            _ => return None,
        };
        Some(p)
    }

    pub fn builtin_names() -> [&'static str; 3] {
        ["tool-a", "tool-b", "tool-c"]
    }
}
