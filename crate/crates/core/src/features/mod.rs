//! Raw per-app feature observations for the seven families.

mod adhoc;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::apk::dex::{DexModel, MethodRef};
use crate::apk::manifest::ComponentKind;
use crate::apk::{opcodes, ApkModel, ManifestModel};

pub use adhoc::{extract_adhoc, Watchlist};

const BUILTIN_PERMISSIONS: &str = include_str!("../../data/permissions.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    Permissions,
    Components,
    ApiFunctions,
    Opcodes,
    Strings,
    FileRelated,
    AdHoc,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Permissions,
        Family::Components,
        Family::ApiFunctions,
        Family::Opcodes,
        Family::Strings,
        Family::FileRelated,
        Family::AdHoc,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Family::Permissions => "perm::",
            Family::Components => "comp::",
            Family::ApiFunctions => "api::",
            Family::Opcodes => "op2::",
            Family::Strings => "str::",
            Family::FileRelated => "file::",
            Family::AdHoc => "adhoc::",
        }
    }

    pub fn kind(self) -> FeatureKind {
        match self {
            Family::Permissions | Family::ApiFunctions | Family::Strings => FeatureKind::Binary,
            Family::Components => FeatureKind::Mixed,
            Family::Opcodes | Family::FileRelated | Family::AdHoc => FeatureKind::Frequency,
        }
    }

    pub fn index(self) -> usize {
        Family::ALL.iter().position(|&f| f == self).unwrap()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Permissions => "permissions",
            Family::Components => "components",
            Family::ApiFunctions => "api",
            Family::Opcodes => "opcodes",
            Family::Strings => "strings",
            Family::FileRelated => "file",
            Family::AdHoc => "adhoc",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s) || format!("{f:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown feature family `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Binary,
    Frequency,
    /// Binary identifiers alongside counters (the component family).
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFeatureSet {
    pub family: Family,
    pub kind: FeatureKind,
    pub observations: BTreeMap<String, u64>,
}

impl RawFeatureSet {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            kind: family.kind(),
            observations: BTreeMap::new(),
        }
    }

    fn flag(&mut self, name: &str) {
        self.observations.insert(format!("{}{name}", self.family.prefix()), 1);
    }

    fn add(&mut self, name: &str, n: u64) {
        if n > 0 {
            *self.observations.entry(format!("{}{name}", self.family.prefix())).or_insert(0) += n;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionBudget {
    pub adhoc_time_limit: Duration,
}

impl Default for ExtractionBudget {
    fn default() -> Self {
        Self {
            adhoc_time_limit: Duration::from_secs(10),
        }
    }
}

/// Immutable inputs shared by every extraction.
#[derive(Debug, Clone)]
pub struct ExtractionContext {
    pub official_permissions: BTreeSet<String>,
    pub watchlist: Watchlist,
    pub budget: ExtractionBudget,
}

impl Default for ExtractionContext {
    fn default() -> Self {
        Self {
            official_permissions: builtin_permissions(),
            watchlist: Watchlist::builtin(),
            budget: ExtractionBudget::default(),
        }
    }
}

/// One name per line; blank lines and `#` comments skipped.
pub fn parse_name_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

pub fn builtin_permissions() -> BTreeSet<String> {
    parse_name_list(BUILTIN_PERMISSIONS)
}

pub fn extract_permissions(manifest: &ManifestModel, official: &BTreeSet<String>) -> RawFeatureSet {
    let mut set = RawFeatureSet::new(Family::Permissions);
    for p in &manifest.used_permissions {
        if official.contains(p) || manifest.declared_permissions.contains(p) {
            set.flag(p);
        }
    }
    for p in &manifest.declared_permissions {
        set.flag(&format!("declared::{p}"));
    }
    set
}

pub fn extract_components(manifest: &ManifestModel) -> RawFeatureSet {
    let mut set = RawFeatureSet::new(Family::Components);
    for c in &manifest.components {
        set.flag(&format!("{}::{}", c.kind.as_str(), c.name));
    }
    for f in &manifest.intent_filters {
        for a in &f.actions {
            set.flag(&format!("action::{a}"));
        }
        for c in &f.categories {
            set.flag(&format!("category::{c}"));
        }
    }
    for u in &manifest.uses_features {
        set.flag(&format!("feature::{}", u.name));
    }
    for kind in ComponentKind::ALL {
        set.add(&format!("#{}", kind.as_str()), manifest.count(kind) as u64);
    }
    set.add("#intentfilter", manifest.intent_filters.len() as u64);
    let hw = manifest.uses_features.iter().filter(|u| u.hardware).count() as u64;
    set.add("#hwfeature", hw);
    set.add("#swfeature", manifest.uses_features.len() as u64 - hw);
    set
}

/// Class prefixes of platform and well-known bundled library code. A
/// reference into one of these counts as an API call even when the package
/// carries its own copy of the class.
pub const FRAMEWORK_PREFIXES: &[&str] = &[
    "Landroid/",
    "Landroidx/",
    "Ljava/",
    "Ljavax/",
    "Ldalvik/",
    "Lcom/android/",
    "Lcom/google/android/",
    "Lkotlin/",
    "Lorg/apache/",
    "Lorg/json/",
    "Lorg/w3c/",
    "Lorg/xml/",
    "Lorg/xmlpull/",
];

pub fn is_framework_class(descriptor: &str) -> bool {
    FRAMEWORK_PREFIXES.iter().any(|p| descriptor.starts_with(p))
}

/// Method references that are targets of an invoke in `dex`.
pub(crate) fn invoked_refs(dex: &DexModel) -> impl Iterator<Item = &MethodRef> {
    dex.code_items().flat_map(move |c| {
        c.insns
            .iter()
            .filter(|i| opcodes::is_method_invoke(i.opcode()))
            .filter_map(move |i| dex.method_refs.get(i.method_index()? as usize))
    })
}

pub fn extract_api_functions(apk: &ApkModel) -> RawFeatureSet {
    let defined = apk.defined_classes();
    let mut set = RawFeatureSet::new(Family::ApiFunctions);
    for dex in &apk.dex_models {
        for r in invoked_refs(dex) {
            if !defined.contains(r.class.as_str()) || is_framework_class(&r.class) {
                set.flag(&r.signature());
            }
        }
    }
    set
}

pub fn extract_opcode_bigrams(apk: &ApkModel) -> RawFeatureSet {
    let mut counts: BTreeMap<(u8, u8), u64> = BTreeMap::new();
    for code in apk.dex_models.iter().flat_map(|d| d.code_items()) {
        let seq = code.opcode_sequence();
        for w in seq.windows(2) {
            *counts.entry((w[0], w[1])).or_insert(0) += 1;
        }
    }
    let mut set = RawFeatureSet::new(Family::Opcodes);
    for ((a, b), n) in counts {
        set.add(&format!("{a}_{b}"), n);
    }
    set
}

pub const MIN_STRING_RUN: usize = 4;

/// Maximal runs of printable ASCII at least `MIN_STRING_RUN` long.
pub fn printable_runs(data: &[u8]) -> impl Iterator<Item = &str> {
    data.split(|b| !(0x20..=0x7e).contains(b))
        .filter(|r| r.len() >= MIN_STRING_RUN)
        .map(|r| std::str::from_utf8(r).expect("ascii"))
}

pub fn extract_strings(apk: &ApkModel) -> RawFeatureSet {
    let mut set = RawFeatureSet::new(Family::Strings);
    for dex in &apk.dex_models {
        for code in dex.code_items() {
            for idx in code.const_string_uses() {
                if let Some(s) = dex.string_pool.get(idx as usize) {
                    set.flag(s);
                }
            }
        }
    }
    for (_, data) in &apk.text_resources {
        for run in printable_runs(data) {
            set.flag(run);
        }
    }
    set
}

pub fn extract_file_features(apk: &ApkModel) -> RawFeatureSet {
    let mut set = RawFeatureSet::new(Family::FileRelated);
    let mut dex_size = 0;
    for e in &apk.entries {
        set.add(&format!("{}_{}", e.extension, e.magic_type), 1);
        if crate::apk::dex_ordinal(&e.path).is_some() {
            dex_size += e.uncompressed_size;
        }
    }
    set.add("apk.size", apk.apk_size);
    set.add("dex.size", dex_size);
    set
}

/// The seven families in `Family::ALL` order.
pub fn extract_all(apk: &ApkModel, ctx: &ExtractionContext) -> Vec<RawFeatureSet> {
    vec![
        extract_permissions(&apk.manifest, &ctx.official_permissions),
        extract_components(&apk.manifest),
        extract_api_functions(apk),
        extract_opcode_bigrams(apk),
        extract_strings(apk),
        extract_file_features(apk),
        extract_adhoc(apk, &ctx.watchlist, ctx.budget),
    ]
}

/// One JSON-lines record of raw features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub app_id: String,
    #[serde(flatten)]
    pub set: RawFeatureSet,
}
