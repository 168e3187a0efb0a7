//! Ad-hoc features: watchlisted API usage, certificate facts and
//! reflective targets resolved from nearby string constants.

use std::time::{Duration, Instant};

use super::{ExtractionBudget, Family, RawFeatureSet};
use crate::apk::dex::{CodeItem, DexModel};
use crate::apk::{opcodes, ApkModel, CertSummary};

const BUILTIN_WATCHLIST: &str = include_str!("../../data/watchlist.txt");

/// Calls whose first string argument names a class or member.
const REFLECTIVE_LOOKUPS: &[&str] = &[
    "Ljava/lang/Class;->forName(",
    "Ljava/lang/Class;->getDeclaredMethod(",
    "Ljava/lang/Class;->getMethod(",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Watchlist {
    /// `(tag, signature prefix)`; a call counts once per matching entry tag.
    pub entries: Vec<(String, String)>,
}

impl Watchlist {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_WATCHLIST)
    }

    /// Lines of `<tag> <prefix>`; `#` starts a comment. Lines with a single
    /// field use `watch` as the tag.
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| match l.split_once(char::is_whitespace) {
                Some((tag, prefix)) => (tag.to_owned(), prefix.trim().to_owned()),
                None => ("watch".to_owned(), l.to_owned()),
            })
            .collect();
        Self { entries }
    }

    fn tags_for<'a>(&'a self, signature: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        let mut seen: Vec<&str> = Vec::new();
        self.entries.iter().filter_map(move |(tag, prefix)| {
            if signature.starts_with(prefix.as_str()) && !seen.contains(&tag.as_str()) {
                seen.push(tag);
                Some(tag.as_str())
            } else {
                None
            }
        })
    }
}

fn validity_bucket(years: Option<i32>) -> &'static str {
    match years {
        None => "unknown",
        Some(y) if y < 1 => "lt1",
        Some(y) if y < 5 => "1to4",
        Some(y) if y < 25 => "5to24",
        Some(_) => "25plus",
    }
}

fn cert_features(set: &mut RawFeatureSet, cert: &CertSummary) {
    if cert.self_signed() {
        set.flag("cert::self_signed");
    }
    set.flag(&format!("cert::validity::{}", validity_bucket(cert.validity_years())));
    set.flag(&format!("cert::alg::{}", cert.algorithm));
}

/// Nearest string constant before `site`, looking back no further than the
/// previous call: a value that went through another call is not a literal.
pub(crate) fn literal_argument<'a>(dex: &'a DexModel, code: &CodeItem, site: usize) -> Option<&'a str> {
    for insn in code.insns[..site].iter().rev() {
        if let Some(idx) = insn.string_index() {
            return dex.string_pool.get(idx as usize).map(String::as_str);
        }
        if opcodes::is_method_invoke(insn.opcode()) {
            return None;
        }
    }
    None
}

fn scan_code(set: &mut RawFeatureSet, dex: &DexModel, code: &CodeItem, watch: &Watchlist) {
    for (pos, insn) in code.insns.iter().enumerate() {
        if !opcodes::is_method_invoke(insn.opcode()) {
            continue;
        }
        let Some(r) = insn.method_index().and_then(|m| dex.method_refs.get(m as usize)) else {
            continue;
        };
        let sig = r.signature();
        for tag in watch.tags_for(&sig) {
            set.add(tag, 1);
        }
        if REFLECTIVE_LOOKUPS.iter().any(|p| sig.starts_with(p)) {
            if let Some(s) = literal_argument(dex, code, pos) {
                set.add(&format!("refl::{s}"), 1);
            }
        }
    }
}

pub fn extract_adhoc(apk: &ApkModel, watch: &Watchlist, budget: ExtractionBudget) -> RawFeatureSet {
    extract_adhoc_until(apk, watch, Instant::now() + budget.adhoc_time_limit.max(Duration::from_nanos(1)))
}

fn extract_adhoc_until(apk: &ApkModel, watch: &Watchlist, deadline: Instant) -> RawFeatureSet {
    let mut set = RawFeatureSet::new(Family::AdHoc);
    if let Some(cert) = &apk.cert {
        cert_features(&mut set, cert);
    }
    for dex in &apk.dex_models {
        for code in dex.code_items() {
            if Instant::now() >= deadline {
                set.flag("truncated");
                return set;
            }
            scan_code(&mut set, dex, code, watch);
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn watchlist_parsing() {
        let w = Watchlist::parse("# c\nuse_x La/b;  # trailing\n\nLc/d;\n");
        assert_eq!(
            w.entries,
            [("use_x".to_owned(), "La/b;".to_owned()), ("watch".to_owned(), "Lc/d;".to_owned())]
        );
        let b = Watchlist::builtin();
        let tags: Vec<_> = b.tags_for("Ljava/lang/reflect/Method;->invoke(LLL)").collect();
        assert_eq!(tags, ["use_reflection"]);
        let tags: Vec<_> = b.tags_for("Ljava/lang/System;->loadLibrary(VL)").collect();
        assert_eq!(tags, ["use_native"]);
    }

    #[test]
    fn buckets() {
        assert_eq!(validity_bucket(Some(0)), "lt1");
        assert_eq!(validity_bucket(Some(3)), "1to4");
        assert_eq!(validity_bucket(Some(29)), "25plus");
        assert_eq!(validity_bucket(None), "unknown");
    }
}
