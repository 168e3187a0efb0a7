//! Seeded obfuscation transforms over editable app models.
//!
//! Transforms are pure: they take an [`AppModel`] and return a rewritten
//! copy plus a [`TransformLog`] that records every planted change. The
//! rewritten models only need to parse back, they are not runnable.

pub mod cipher;
mod encryption;
mod indirection;
mod junk;
pub mod profile;
mod reflection;
mod rename;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apk::dex::DexModel;
use crate::features::is_framework_class;
use crate::fixture::AppModel;

pub use cipher::Cipher;
pub use profile::{CipherTag, HelperPlacement, JunkPattern, ToolProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    Renaming,
    JunkCodeInsertion,
    CallIndirection,
    Reflection,
    Encryption,
}

impl Technique {
    pub const ALL: [Technique; 5] = [
        Technique::Renaming,
        Technique::JunkCodeInsertion,
        Technique::CallIndirection,
        Technique::Reflection,
        Technique::Encryption,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Technique::Renaming => "renaming",
            Technique::JunkCodeInsertion => "junk_code_insertion",
            Technique::CallIndirection => "call_indirection",
            Technique::Reflection => "reflection",
            Technique::Encryption => "encryption",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Technique {
    type Err = ObfError;
    fn from_str(s: &str) -> Result<Self, ObfError> {
        match s {
            "renaming" => Ok(Technique::Renaming),
            "junk_code_insertion" | "jci" => Ok(Technique::JunkCodeInsertion),
            "call_indirection" | "ci" => Ok(Technique::CallIndirection),
            "reflection" => Ok(Technique::Reflection),
            "encryption" => Ok(Technique::Encryption),
            _ => Err(ObfError::UnknownTechnique(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObfError {
    #[error("unknown technique {0:?}")]
    UnknownTechnique(String),
    #[error("unknown tool profile {0:?}")]
    UnknownProfile(String),
    #[error("intensity parameter {0} out of range")]
    BadIntensity(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Intensity {
    /// Insertion points per instruction, in `[0, 1]`.
    pub junk_density: f64,
    /// Share of external call sites made reflective, in `[0, 1]`.
    pub reflection_fraction: f64,
    /// Share of internal call sites routed through a chain, in `[0, 1]`.
    pub indirection_fraction: f64,
    /// Intermediate methods per rewritten call, at least 1.
    pub chain_length: u32,
}

impl Default for Intensity {
    fn default() -> Self {
        Self {
            junk_density: 0.5,
            reflection_fraction: 0.5,
            indirection_fraction: 1.0,
            chain_length: 1,
        }
    }
}

impl Intensity {
    pub fn validate(&self) -> Result<(), ObfError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.junk_density) {
            return Err(ObfError::BadIntensity("junk_density"));
        }
        if !unit(self.reflection_fraction) {
            return Err(ObfError::BadIntensity("reflection_fraction"));
        }
        if !unit(self.indirection_fraction) {
            return Err(ObfError::BadIntensity("indirection_fraction"));
        }
        if self.chain_length == 0 {
            return Err(ObfError::BadIntensity("chain_length"));
        }
        Ok(())
    }

    fn jitter(self, rng: &mut ChaCha8Rng) -> Self {
        let mut f = |v: f64| (v * rng.gen_range(0.5..1.5)).clamp(0.0, 1.0);
        Self {
            junk_density: f(self.junk_density),
            reflection_fraction: f(self.reflection_fraction),
            indirection_fraction: f(self.indirection_fraction),
            chain_length: self.chain_length + rng.gen_range(0..=2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObfSpec {
    pub technique: Technique,
    pub profile: ToolProfile,
    pub seed: u64,
    pub intensity: Intensity,
}

impl ObfSpec {
    pub fn new(technique: Technique, profile: ToolProfile, seed: u64) -> Self {
        Self {
            technique,
            profile,
            seed,
            intensity: Intensity::default(),
        }
    }

    pub fn builtin(technique: Technique, tool: &str, seed: u64) -> Result<Self, ObfError> {
        let p = ToolProfile::builtin(tool).ok_or_else(|| ObfError::UnknownProfile(tool.to_owned()))?;
        Ok(Self::new(technique, p, seed))
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.technique as u64);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JunkRecord {
    pub class: String,
    pub method: String,
    /// Instructions inserted, by opcode byte.
    pub inserted: Vec<(u8, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub caller: String,
    pub position: usize,
    pub target: String,
    /// Signatures of the intermediate methods, first to last. The last one
    /// calls `target`.
    pub chain: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectRecord {
    pub caller: String,
    /// Position of the reflective `Method.invoke` in the rewritten body.
    pub position: usize,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransformLog {
    pub app_id: String,
    pub technique: Option<Technique>,
    pub tool: String,
    pub seed: u64,
    pub renamed_classes: Vec<(String, String)>,
    pub renamed_methods: Vec<(String, String)>,
    pub junk: Vec<JunkRecord>,
    pub chains: Vec<ChainRecord>,
    pub reflected: Vec<ReflectRecord>,
    pub encrypted_strings: Vec<(String, String)>,
    pub encrypted_resources: Vec<String>,
    pub cipher: Option<Cipher>,
}

impl TransformLog {
    fn for_spec(spec: &ObfSpec) -> Self {
        Self {
            technique: Some(spec.technique),
            tool: spec.profile.name.clone(),
            seed: spec.seed,
            ..Self::default()
        }
    }

    /// Whether the transform changed nothing.
    pub fn is_identity(&self) -> bool {
        self.renamed_classes.is_empty()
            && self.renamed_methods.is_empty()
            && self.junk.is_empty()
            && self.chains.is_empty()
            && self.reflected.is_empty()
            && self.encrypted_strings.is_empty()
            && self.encrypted_resources.is_empty()
    }
}

/// Apply the technique named in `spec`.
pub fn apply(app: &AppModel, spec: &ObfSpec) -> Result<(AppModel, TransformLog), ObfError> {
    spec.intensity.validate()?;
    let mut rng = spec.rng();
    let intensity = if spec.profile.randomize {
        spec.intensity.jitter(&mut rng)
    } else {
        spec.intensity
    };
    let mut out = app.clone();
    let mut log = TransformLog::for_spec(spec);
    let ctx = Ctx {
        profile: &spec.profile,
        intensity,
    };
    match spec.technique {
        Technique::Renaming => rename::run(&mut out, &ctx, &mut rng, &mut log),
        Technique::JunkCodeInsertion => junk::run(&mut out, &ctx, &mut rng, &mut log),
        Technique::CallIndirection => indirection::run(&mut out, &ctx, &mut rng, &mut log),
        Technique::Reflection => reflection::run(&mut out, &ctx, &mut rng, &mut log),
        Technique::Encryption => encryption::run(&mut out, &ctx, &mut rng, &mut log),
    }
    if log.is_identity() {
        out = app.clone();
    }
    out.canonicalize();
    Ok((out, log))
}

macro_rules! technique_fn {
    ($name:ident, $t:expr) => {
        pub fn $name(app: &AppModel, spec: &ObfSpec) -> Result<(AppModel, TransformLog), ObfError> {
            apply(app, &ObfSpec { technique: $t, ..spec.clone() })
        }
    };
}

technique_fn!(rename, Technique::Renaming);
technique_fn!(insert_junk, Technique::JunkCodeInsertion);
technique_fn!(indirect_calls, Technique::CallIndirection);
technique_fn!(reflectify, Technique::Reflection);
technique_fn!(encrypt_strings, Technique::Encryption);

pub(crate) struct Ctx<'a> {
    pub profile: &'a ToolProfile,
    pub intensity: Intensity,
}

impl Ctx<'_> {
    /// Classes the tool rewrites: app code, plus bundled library copies
    /// when the profile processes them.
    pub fn rewrites(&self, class: &str) -> bool {
        self.profile.include_bundled || !is_framework_class(class)
    }
}

/// Seeded identifier source that never repeats a name it has handed out
/// or one already present.
pub(crate) struct NameGen {
    alphabet: Vec<char>,
    len: usize,
    taken: HashSet<String>,
}

impl NameGen {
    pub fn new(profile: &ToolProfile, taken: impl IntoIterator<Item = String>) -> Self {
        let mut alphabet: Vec<char> = profile.name_alphabet.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        if alphabet.is_empty() {
            alphabet = ('a'..='z').collect();
        }
        Self {
            alphabet,
            len: profile.name_len.max(1),
            taken: taken.into_iter().collect(),
        }
    }

    pub fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        let letters: Vec<char> = self.alphabet.iter().copied().filter(|c| c.is_ascii_alphabetic()).collect();
        let mut attempts = 0;
        loop {
            let mut s = String::with_capacity(self.len);
            for i in 0..self.len {
                let pool = if i == 0 && !letters.is_empty() { &letters } else { &self.alphabet };
                s.push(pool[rng.gen_range(0..pool.len())]);
            }
            if self.taken.insert(s.clone()) {
                return s;
            }
            attempts += 1;
            if attempts % 8 == 0 {
                self.len += 1;
            }
        }
    }
}

/// `Lcom/ex/Foo;` → `com.ex.Foo`
pub fn descriptor_to_dotted(desc: &str) -> Option<String> {
    let inner = desc.strip_prefix('L')?.strip_suffix(';')?;
    Some(inner.replace('/', "."))
}

pub fn dotted_to_descriptor(name: &str) -> String {
    format!("L{};", name.replace('.', "/"))
}

/// Package path of a class descriptor including the trailing slash, or "".
pub(crate) fn package_path(desc: &str) -> &str {
    let inner = desc.strip_prefix('L').unwrap_or(desc);
    match inner.rfind('/') {
        Some(i) => &inner[..=i],
        None => "",
    }
}

/// Shorty of a static method taking the receiver of `shorty`'s method as an
/// extra first object argument.
pub(crate) fn static_shorty(shorty: &str, has_receiver: bool) -> String {
    if has_receiver {
        let mut s = String::with_capacity(shorty.len() + 1);
        s.push_str(&shorty[..1]);
        s.push('L');
        s.push_str(&shorty[1..]);
        s
    } else {
        shorty.to_owned()
    }
}

/// Every defined class name across the app's dex files.
pub(crate) fn defined_classes(app: &AppModel) -> HashSet<String> {
    app.dexes.iter().flat_map(DexModel::defined_class_names).map(str::to_owned).collect()
}

#[cfg(test)]
pub(crate) mod testkit {
    use super::*;
    use crate::apk::dex::{ClassDef, CodeItem, EncodedMethod, Insn, MethodRef};
    use crate::apk::manifest::{Component, ComponentKind, IntentFilter};
    use crate::apk::opcodes;
    use crate::apk::ManifestModel;

    /// One activity calling `Log.i` with a literal, plus an internal helper.
    pub fn sample_app() -> AppModel {
        let mut d = DexModel::default();
        let log_i = d.intern_method(&MethodRef::new("Landroid/util/Log;", "i", "ILL"));
        let helper = d.intern_method(&MethodRef::new("Lcom/ex/Util;", "compute", "I"));
        let on_create = d.intern_method(&MethodRef::new("Lcom/ex/FooActivity;", "onCreate", "VL"));
        let tag = d.intern_string("FooTag");
        let msg = d.intern_string("http://x.io");
        d.intern_type("Landroid/app/Activity;");
        d.intern_type("Ljava/lang/Object;");
        let body = vec![
            Insn::const_string(0, tag),
            Insn::const_string(1, msg),
            Insn::invoke(opcodes::INVOKE_STATIC, log_i as u16, &[0, 1]),
            Insn::invoke(opcodes::INVOKE_STATIC, helper as u16, &[]),
            Insn::return_void(),
        ];
        d.classes.push(ClassDef {
            name: "Lcom/ex/FooActivity;".into(),
            superclass: Some("Landroid/app/Activity;".into()),
            access_flags: 1,
            methods: vec![EncodedMethod {
                method_idx: on_create,
                access_flags: 1,
                is_virtual: true,
                code: Some(CodeItem::new(3, body)),
            }],
        });
        d.classes.push(ClassDef {
            name: "Lcom/ex/Util;".into(),
            superclass: Some("Ljava/lang/Object;".into()),
            access_flags: 1,
            methods: vec![EncodedMethod {
                method_idx: helper,
                access_flags: 9,
                is_virtual: false,
                code: Some(CodeItem::new(1, vec![Insn::const4(0, 1), Insn(vec![0x000f])])),
            }],
        });
        let mut m = ManifestModel {
            package_name: "com.ex".into(),
            ..Default::default()
        };
        m.used_permissions.insert("android.permission.INTERNET".into());
        m.components.push(Component {
            kind: ComponentKind::Activity,
            name: "com.ex.FooActivity".into(),
        });
        m.intent_filters.push(IntentFilter {
            owner: "com.ex.FooActivity".into(),
            actions: ["android.intent.action.MAIN".to_owned()].into(),
            categories: Default::default(),
        });
        let mut app = AppModel {
            manifest: m,
            dexes: vec![d],
            extras: vec![("assets/cfg.txt".into(), b"server=http://x.io\n".to_vec())],
            cert: None,
        };
        app.canonicalize();
        app
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptors() {
        assert_eq!(descriptor_to_dotted("Lcom/ex/Foo;").as_deref(), Some("com.ex.Foo"));
        assert_eq!(dotted_to_descriptor("com.ex.Foo"), "Lcom/ex/Foo;");
        assert_eq!(package_path("Lcom/ex/Foo;"), "com/ex/");
        assert_eq!(package_path("LFoo;"), "");
        assert_eq!(static_shorty("VI", true), "VLI");
    }

    #[test]
    fn intensity_ranges() {
        let mut i = Intensity::default();
        assert!(i.validate().is_ok());
        i.chain_length = 0;
        assert_eq!(i.validate(), Err(ObfError::BadIntensity("chain_length")));
        let i = Intensity { junk_density: 1.5, ..Default::default() };
        assert!(i.validate().is_err());
    }

    #[test]
    fn every_technique_is_deterministic_and_parses() {
        let app = testkit::sample_app();
        for t in Technique::ALL {
            for tool in ToolProfile::builtin_names() {
                let mut spec = ObfSpec::builtin(t, tool, 11).unwrap();
                spec.intensity.reflection_fraction = 1.0;
                let (a, la) = apply(&app, &spec).unwrap();
                let (b, lb) = apply(&app, &spec).unwrap();
                assert_eq!(a, b);
                assert_eq!(la, lb);
                assert!(!la.is_identity(), "{t} {tool}");
                let bytes = a.to_apk().unwrap();
                let mut back = AppModel::from_apk(&bytes).unwrap();
                back.canonicalize();
                assert_eq!(back.dexes, a.dexes, "{t} {tool}");
            }
        }
    }
}
