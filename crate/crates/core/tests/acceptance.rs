//! Acceptance gate. Each criterion prints one PASS/FAIL line with its
//! measured values; the process exits non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use droidlens::apk::dex::DexModel;
use droidlens::apk::open_apk;
use droidlens::apk::zip::{read_archive, Method, ZipWriter};
use droidlens::features::{extract_all, ExtractionContext, Family, RawFeatureSet};
use droidlens::fixture::{AppModel, ManifestEncoding};
use droidlens::forest::{train_forest_with, TrainConfig};
use droidlens::metrics::{eval_metrics, persistence, Pair, PairedCorpus, RobustnessReport};
use droidlens::obfuscation::{apply, Intensity, ObfSpec, Technique, ToolProfile, TransformLog};
use droidlens::par::Execution;
use droidlens::pipeline::{extract_many, obfuscate_all, vectorize_all, ObfuscationPlan, Variant};
use droidlens::selection::{build_detector, select_families, truncate_family, DetectorInputs, SelectionConfig, DEFAULT_CAP};
use droidlens::synth::{generate_app, generate_corpus, Recipe};
use droidlens::vocab::{build_vocabulary, Block, FeatureMatrix, FeatureVector};
use droidlens::Label;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn run(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Outcome::new(false, format!("panicked: {msg}"))
    });
    let took = t0.elapsed();
    let in_time = took <= budget;
    let pass = out.pass && in_time;
    println!(
        "criterion {id} [{}] {name}: {} ({:.2?}{})",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        took,
        if in_time { String::new() } else { format!(", over budget {budget:?}") }
    );
    pass
}

// ---------------------------------------------------------------- 1

/// Published (TPR, FPR, A_mean) triples.
const PER_FAMILY_RATES: [(&str, f64, f64, f64); 7] = [
    ("permissions", 0.867, 0.156, 0.855),
    ("components", 0.808, 0.157, 0.825),
    ("api", 0.928, 0.081, 0.923),
    ("opcodes", 0.884, 0.252, 0.816),
    ("strings", 0.907, 0.082, 0.912),
    ("file", 0.265, 0.197, 0.534),
    ("adhoc", 0.768, 0.143, 0.812),
];

const ROBUST_RATES: [(&str, f64, f64, f64); 6] = [
    ("clean/A", 0.928, 0.081, 0.923),
    ("clean/PAS", 0.920, 0.065, 0.927),
    ("clean/PACS", 0.930, 0.065, 0.932),
    ("obfuscated/A", 0.858, 0.060, 0.898),
    ("obfuscated/PAS", 0.889, 0.044, 0.922),
    ("obfuscated/PACS", 0.876, 0.035, 0.914),
];

const AMEAN_TOLERANCE: f64 = 0.0005;

/// A prediction set of `n` positives and `n` negatives realizing the rates.
fn predictions_with_rates(tpr: f64, fpr: f64, n: usize) -> (Vec<Label>, Vec<Label>) {
    let tp = (tpr * n as f64).round() as usize;
    let fp = (fpr * n as f64).round() as usize;
    let mut truth = vec![Label::Malware; n];
    truth.extend(vec![Label::Goodware; n]);
    let mut preds: Vec<Label> = (0..n).map(|i| if i < tp { Label::Malware } else { Label::Goodware }).collect();
    preds.extend((0..n).map(|i| if i < fp { Label::Malware } else { Label::Goodware }));
    (preds, truth)
}

fn criterion_1() -> Outcome {
    let mut misses = Vec::new();
    let mut worst = 0.0f64;
    for (name, tpr, fpr, published) in PER_FAMILY_RATES.iter().chain(&ROBUST_RATES) {
        let (preds, truth) = predictions_with_rates(*tpr, *fpr, 1000);
        let m = eval_metrics(&preds, &truth).expect("non-empty classes");
        let err = (m.a_mean - published).abs();
        worst = worst.max(err);
        // 1e-9 absorbs binary representation of the three-decimal inputs
        if err > AMEAN_TOLERANCE + 1e-9 {
            misses.push(format!("{name} computed {:.4} published {published:.3}", m.a_mean));
        }
    }
    let detail = if misses.is_empty() {
        format!("13 rows within ±{AMEAN_TOLERANCE}, worst {worst:.4}")
    } else {
        format!("{} of 13 rows outside ±{AMEAN_TOLERANCE}: {}", misses.len(), misses.join("; "))
    };
    Outcome::new(misses.is_empty(), detail)
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    use Family::*;
    let ameans: BTreeMap<Family, f64> = [
        (Permissions, 0.855),
        (Components, 0.825),
        (ApiFunctions, 0.923),
        (Opcodes, 0.816),
        (Strings, 0.912),
        (FileRelated, 0.534),
        (AdHoc, 0.812),
    ]
    .into();
    let insens: BTreeMap<Family, f64> = [
        (Permissions, 0.968),
        (Components, 0.961),
        (ApiFunctions, 0.939),
        (Opcodes, 0.774),
        (Strings, 0.874),
        (FileRelated, 0.197),
        (AdHoc, 0.540),
    ]
    .into();
    // ranked family sizes: 683 official permissions, large pools elsewhere
    let sizes: BTreeMap<Family, usize> = [
        (Permissions, 683),
        (Components, 85_476),
        (ApiFunctions, 40_000),
        (Opcodes, 40_000),
        (Strings, 40_000),
        (FileRelated, 12),
        (AdHoc, 30),
    ]
    .into();
    let expected: [(f64, Vec<Family>, usize); 3] = [
        (0.9, vec![ApiFunctions], 2000),
        (0.85, vec![Permissions, ApiFunctions, Strings], 4683),
        (0.8, vec![Permissions, Components, ApiFunctions, Strings], 6683),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (t, fams, width) in expected {
        let got = select_families(&ameans, &insens, t).expect("all families present");
        let w: usize = got
            .iter()
            .map(|f| {
                let ranking: Vec<u32> = (0..sizes[f] as u32).collect();
                truncate_family(&ranking, DEFAULT_CAP).len()
            })
            .sum();
        let want: BTreeSet<Family> = fams.into_iter().collect();
        ok &= got == want && w == width;
        parts.push(format!(
            "{t}: {{{}}} width {w}",
            got.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(",")
        ));
    }
    Outcome::new(ok, parts.join("; "))
}

// ---------------------------------------------------------------- 3

fn random_vector(rng: &mut ChaCha8Rng, family: Family, width: u32, binary: bool) -> FeatureVector {
    let density = rng.gen_range(0.0..=1.0);
    let mut entries = Vec::new();
    for i in 0..width {
        if rng.gen_bool(density) {
            entries.push((i, if binary { 1 } else { rng.gen_range(1..=4) }));
        }
    }
    FeatureVector {
        app_id: String::new(),
        family,
        kind: family.kind(),
        entries,
    }
}

/// Dense enumeration over every position below the width.
fn brute_persistence(a: &FeatureVector, b: &FeatureVector, width: u32) -> f64 {
    let (mut union, mut same) = (0u32, 0u32);
    for i in 0..width {
        let (x, y) = (a.get(i), b.get(i));
        if x != 0 || y != 0 {
            union += 1;
            if x == y {
                same += 1;
            }
        }
    }
    if union == 0 {
        1.0
    } else {
        same as f64 / union as f64
    }
}

fn jaccard(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let sa: BTreeSet<u32> = a.entries.iter().map(|e| e.0).collect();
    let sb: BTreeSet<u32> = b.entries.iter().map(|e| e.0).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        1.0
    } else {
        sa.intersection(&sb).count() as f64 / union as f64
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut binary_cases, mut mismatches) = (0, 0);
    for case in 0..10_000 {
        let width = rng.gen_range(0..=64);
        let binary = case % 2 == 0;
        let family = if binary { Family::Strings } else { Family::Opcodes };
        let a = random_vector(&mut rng, family, width, binary);
        let b = if rng.gen_bool(0.2) {
            a.clone()
        } else {
            random_vector(&mut rng, family, width, binary)
        };
        let p = persistence(&a, &b).expect("same family");
        if p != brute_persistence(&a, &b, width) {
            mismatches += 1;
        }
        if binary {
            binary_cases += 1;
            if p != jaccard(&a, &b) {
                mismatches += 1;
            }
        }
    }
    Outcome::new(
        mismatches == 0,
        format!("10000 pairs ({binary_cases} binary), {mismatches} mismatches"),
    )
}

// ---------------------------------------------------------------- 4

fn fixture_recipe(i: usize) -> Recipe {
    let recipes = ["permissions+api;strings", "strings;opcodes", "api;components", "permissions;"];
    recipes[i % recipes.len()].parse().expect("recipe")
}

fn fixture_app(i: usize) -> AppModel {
    let app = generate_app(i, &fixture_recipe(i), 1000 + i as u64).model;
    // a share of fixtures goes through a transform to widen table shapes
    if i % 3 == 0 {
        let t = Technique::ALL[(i / 3) % Technique::ALL.len()];
        let tool = ToolProfile::builtin_names()[i % 3];
        let spec = ObfSpec::builtin(t, tool, i as u64).expect("tool");
        apply(&app, &spec).expect("transform").0
    } else {
        app
    }
}

fn dex_mismatch(want: &DexModel, got: &DexModel) -> Option<&'static str> {
    if want.string_pool != got.string_pool {
        return Some("string pool");
    }
    if want.method_refs != got.method_refs {
        return Some("method refs");
    }
    let seqs = |d: &DexModel| d.code_items().map(|c| c.opcode_sequence()).collect::<Vec<_>>();
    if seqs(want) != seqs(got) {
        return Some("opcode sequences");
    }
    None
}

fn mutate(rng: &mut ChaCha8Rng, mut bytes: Vec<u8>) -> Vec<u8> {
    match rng.gen_range(0..5) {
        0 => {
            for _ in 0..rng.gen_range(1..8) {
                let i = rng.gen_range(0..bytes.len());
                bytes[i] ^= 1 << rng.gen_range(0..8);
            }
        }
        1 => bytes.truncate(rng.gen_range(0..bytes.len())),
        2 => {
            let i = rng.gen_range(0..bytes.len());
            bytes[i] = [0x00, 0xff, 0x7f, 0x80][rng.gen_range(0..4)];
        }
        3 => {
            let i = rng.gen_range(0..bytes.len());
            let n = rng.gen_range(1..32);
            bytes.splice(i..i, (0..n).map(|_| rng.gen::<u8>()));
        }
        _ => {
            let i = rng.gen_range(0..bytes.len().saturating_sub(4).max(1));
            let v: u32 = [0, u32::MAX, 0x7fff_ffff, rng.gen()][rng.gen_range(0..4)];
            let end = (i + 4).min(bytes.len());
            bytes[i..end].copy_from_slice(&v.to_le_bytes()[..end - i]);
        }
    }
    bytes
}

/// Re-zip with one member mutated so the damage reaches the inner parsers.
fn mutate_member(rng: &mut ChaCha8Rng, apk: &[u8]) -> Vec<u8> {
    let members = read_archive(apk).expect("clean fixture");
    let target = rng.gen_range(0..members.len());
    let mut w = ZipWriter::new();
    for (i, m) in members.iter().enumerate() {
        let data = if i == target && !m.data.is_empty() {
            mutate(rng, m.data.clone())
        } else {
            m.data.clone()
        };
        w.add(&m.name, &data, if rng.gen_bool(0.5) { Method::Stored } else { Method::Deflated });
    }
    w.finish()
}

fn criterion_4() -> Outcome {
    let exec = Execution::Parallel;
    let failures: Vec<String> = exec
        .map_range(1000, |i| {
            let app = fixture_app(i);
            let enc = if i % 2 == 0 { ManifestEncoding::Plain } else { ManifestEncoding::Binary };
            let bytes = app.to_apk_with(enc).map_err(|e| format!("fixture {i}: {e}"))?;
            let apk = open_apk(&bytes).map_err(|e| format!("fixture {i}: {e}"))?;
            if apk.manifest.components != app.manifest.components {
                return Err(format!("fixture {i}: components"));
            }
            if apk.dex_models.len() != app.dexes.len() {
                return Err(format!("fixture {i}: dex count"));
            }
            for (want, got) in app.dexes.iter().zip(&apk.dex_models) {
                if let Some(what) = dex_mismatch(want, got) {
                    return Err(format!("fixture {i}: {what}"));
                }
            }
            Ok(())
        })
        .into_iter()
        .filter_map(Result::err)
        .collect();

    let seeds: Vec<Vec<u8>> = (0..16).map(|i| fixture_app(i).to_apk_with(if i % 2 == 0 {
        ManifestEncoding::Plain
    } else {
        ManifestEncoding::Binary
    }).expect("fixture")).collect();
    let ctx = ExtractionContext::default();
    let fuzz: Vec<(bool, bool)> = exec.map_range(10_000, |case| {
        let mut rng = ChaCha8Rng::seed_from_u64(40_000 + case as u64);
        let base = &seeds[case % seeds.len()];
        let bytes = if case % 2 == 0 {
            mutate(&mut rng, base.clone())
        } else {
            mutate_member(&mut rng, base)
        };
        let r = catch_unwind(AssertUnwindSafe(|| match open_apk(&bytes) {
            Ok(apk) => {
                let _ = extract_all(&apk, &ctx);
                true
            }
            Err(_) => false,
        }));
        (r.is_err(), r.unwrap_or(false))
    });
    let crashes = fuzz.iter().filter(|c| c.0).count();
    let opened = fuzz.iter().filter(|c| c.1).count();
    let detail = format!(
        "1000 round-trips, {} lossy{}; 10000 fuzz cases, {crashes} crashes, {opened} parsed, {} declared errors",
        failures.len(),
        failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default(),
        10_000 - crashes - opened
    );
    Outcome::new(failures.is_empty() && crashes == 0, detail)
}

// ---------------------------------------------------------------- 5

struct ObfCorpus {
    apps: Vec<(String, AppModel)>,
    variants: Vec<Variant>,
    report: RobustnessReport,
}

fn paired_of(variants: &[Variant]) -> PairedCorpus {
    PairedCorpus {
        pairs: variants
            .iter()
            .map(|v| Pair {
                clean: v.clean_ref.clone(),
                obf: v.app_id.clone(),
                tool: v.tool.clone(),
                technique: v.technique.as_str().to_owned(),
            })
            .collect(),
    }
}

fn to_items<'a>(models: impl Iterator<Item = (&'a String, &'a AppModel)>) -> Vec<(String, Vec<u8>)> {
    models.map(|(id, m)| (id.clone(), m.to_apk().expect("serializable"))).collect()
}

fn obfuscated_corpus(n: usize, seed: u64, plan: &ObfuscationPlan) -> ObfCorpus {
    let exec = Execution::Parallel;
    let corpus = generate_corpus(n, &Recipe::default(), seed, exec);
    let apps: Vec<(String, AppModel)> = corpus.apps.iter().map(|a| (a.app_id.clone(), a.model.clone())).collect();
    let variants = obfuscate_all(&apps, plan, exec).expect("plan is valid");
    let mut items = to_items(apps.iter().map(|(i, m)| (i, m)));
    items.extend(to_items(variants.iter().map(|v| (&v.app_id, &v.model))));
    let raws = extract_many(&items, &ExtractionContext::default(), exec).expect("fixtures parse");
    let clean: BTreeSet<&str> = apps.iter().map(|a| a.0.as_str()).collect();
    let vocab = build_vocabulary(
        raws.iter().filter(|r| clean.contains(r.0.as_str())).map(|r| r.1.as_slice()),
        "clean",
        0.01,
    )
    .expect("non-empty");
    let store = vectorize_all(&raws, &vocab);
    let report = RobustnessReport::from_pairs(&paired_of(&variants), &store, &vocab, 15);
    ObfCorpus { apps, variants, report }
}

fn per_tool_persistence(report: &RobustnessReport, technique: Technique) -> BTreeMap<String, BTreeMap<Family, f64>> {
    let mut out: BTreeMap<String, BTreeMap<Family, f64>> = BTreeMap::new();
    for c in report.persistence.iter().filter(|c| c.technique == technique.as_str()) {
        out.entry(c.tool.clone()).or_default().insert(c.family, c.value);
    }
    out
}

fn least_persistent(values: &BTreeMap<Family, f64>) -> Vec<Family> {
    let min = values.values().copied().fold(f64::INFINITY, f64::min);
    values.iter().filter(|(_, &v)| v == min).map(|(&f, _)| f).collect()
}

fn defined_methods(app: &AppModel) -> usize {
    app.dexes.iter().flat_map(|d| &d.classes).map(|c| c.methods.len()).sum()
}

const METHOD_INVOKE: &str = "Ljava/lang/reflect/Method;->invoke(LLL)";

/// `(caller, position)` of every call to `target`.
fn invoke_sites(app: &AppModel, target: &str) -> BTreeSet<(String, usize)> {
    let mut out = BTreeSet::new();
    for d in &app.dexes {
        for c in &d.classes {
            for m in &c.methods {
                let Some(code) = &m.code else { continue };
                for (pos, idx) in code.invoke_sites() {
                    if d.method_refs[idx as usize].signature() == target {
                        out.insert((d.method_refs[m.method_idx as usize].signature(), pos));
                    }
                }
            }
        }
    }
    out
}

type Bigrams = BTreeMap<(u8, u8), u32>;

fn method_bigrams(app: &AppModel) -> BTreeMap<String, Bigrams> {
    let mut out = BTreeMap::new();
    for d in &app.dexes {
        for c in &d.classes {
            for m in &c.methods {
                let mut counts = Bigrams::new();
                if let Some(code) = &m.code {
                    for w in code.opcode_sequence().windows(2) {
                        *counts.entry((w[0], w[1])).or_insert(0) += 1;
                    }
                }
                out.insert(d.method_refs[m.method_idx as usize].signature(), counts);
            }
        }
    }
    out
}

/// Signature of a clean method after the logged renaming.
fn renamed_signature(sig: &str, log: &TransformLog) -> String {
    let (class, rest) = sig.split_once("->").expect("signature");
    let (name, shorty) = rest.split_once('(').expect("signature");
    match log.renamed_classes.iter().find(|(o, _)| o == class) {
        Some((_, new_class)) => {
            let new_name = log
                .renamed_methods
                .iter()
                .find(|(o, _)| o == name)
                .map_or(name, |(_, n)| n.as_str());
            format!("{new_class}->{new_name}({shorty}")
        }
        None => sig.to_owned(),
    }
}

fn criterion_5() -> Outcome {
    let n = 200;
    let oc = obfuscated_corpus(n, 5, &ObfuscationPlan::full(55));
    let by_id: BTreeMap<&str, &AppModel> = oc.apps.iter().map(|(i, m)| (i.as_str(), m)).collect();
    let mut failures: Vec<String> = Vec::new();
    let mut notes = Vec::new();

    // encryption
    for (tool, v) in per_tool_persistence(&oc.report, Technique::Encryption) {
        let (s, p) = (v[&Family::Strings], v[&Family::Permissions]);
        if !(s < 0.2) || !(p >= 0.99) {
            failures.push(format!("encryption/{tool}: strings {s:.3} permissions {p:.3}"));
        }
        if least_persistent(&v) != [Family::Strings] {
            failures.push(format!("encryption/{tool}: strings not least persistent"));
        }
        notes.push(format!("enc/{tool} str {s:.3} perm {p:.3}"));
    }
    // junk code insertion
    for (tool, v) in per_tool_persistence(&oc.report, Technique::JunkCodeInsertion) {
        let o = v[&Family::Opcodes];
        if least_persistent(&v) != [Family::Opcodes] {
            failures.push(format!("jci/{tool}: worst family {:?}", least_persistent(&v)));
        }
        notes.push(format!("jci/{tool} opcodes {o:.3}"));
    }
    // renaming: names change, bigrams per method do not
    for (tool, v) in per_tool_persistence(&oc.report, Technique::Renaming) {
        let worst = least_persistent(&v);
        if !worst.iter().all(|f| matches!(f, Family::Components | Family::ApiFunctions)) || v[&worst[0]] >= 1.0 {
            failures.push(format!("renaming/{tool}: worst family {worst:?}"));
        }
    }
    let mut renamed_methods = 0usize;
    for var in oc.variants.iter().filter(|v| v.technique == Technique::Renaming) {
        let before = method_bigrams(by_id[var.clean_ref.as_str()]);
        let after = method_bigrams(&var.model);
        for (sig, counts) in &before {
            let new_sig = renamed_signature(sig, &var.log);
            renamed_methods += usize::from(&new_sig != sig);
            if after.get(&new_sig) != Some(counts) {
                failures.push(format!("renaming: {} bigrams of {sig} changed", var.app_id));
                break;
            }
        }
    }
    notes.push(format!("{renamed_methods} renamed methods with bigrams intact"));
    // call indirection with chain lengths 1 and 3
    let mut sites = 0usize;
    for chain_length in [1u32, 3] {
        let plan = ObfuscationPlan {
            techniques: vec![Technique::CallIndirection],
            intensity: Intensity {
                chain_length,
                ..Intensity::default()
            },
            ..ObfuscationPlan::full(56)
        };
        let apps: Vec<(String, AppModel)> = oc.apps.clone();
        for var in obfuscate_all(&apps, &plan, Execution::Parallel).expect("plan") {
            let added = defined_methods(&var.model) - defined_methods(by_id[var.clean_ref.as_str()]);
            let want = chain_length as usize * var.log.chains.len();
            sites += var.log.chains.len();
            if added != want || var.log.chains.iter().any(|c| c.chain.len() != chain_length as usize) {
                failures.push(format!("ci n={chain_length}: {} added {added}, log says {want}", var.app_id));
            }
        }
    }
    notes.push(format!("ci {sites} rewritten sites"));
    // reflection: reflective refs sit exactly at the logged sites
    let mut reflected = 0usize;
    for var in oc.variants.iter().filter(|v| v.technique == Technique::Reflection) {
        let before = invoke_sites(by_id[var.clean_ref.as_str()], METHOD_INVOKE);
        let after = invoke_sites(&var.model, METHOD_INVOKE);
        reflected += var.log.reflected.len();
        let at_log = var.log.reflected.iter().all(|r| after.contains(&(r.caller.clone(), r.position)));
        if !at_log || after.len() != before.len() + var.log.reflected.len() {
            failures.push(format!("reflection: {} sites differ from log", var.app_id));
        }
    }
    notes.push(format!("reflection {reflected} logged sites"));
    for t in Technique::ALL {
        let mut mean: BTreeMap<Family, f64> = BTreeMap::new();
        for (_, v) in per_tool_persistence(&oc.report, t) {
            for (f, x) in v {
                *mean.entry(f).or_insert(0.0) += x / 3.0;
            }
        }
        notes.push(format!(
            "{} worst {}",
            t.as_str(),
            least_persistent(&mean).iter().map(|f| f.as_str()).collect::<Vec<_>>().join("/")
        ));
    }
    let detail = if failures.is_empty() {
        notes.join("; ")
    } else {
        format!("{} failures, first: {}", failures.len(), failures[0])
    };
    Outcome::new(failures.is_empty(), detail)
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let exec = Execution::Parallel;
    let corpus = generate_corpus(400, &Recipe::default(), 42, exec);
    let labels: BTreeMap<String, Label> = corpus.apps.iter().map(|a| (a.app_id.clone(), a.label)).collect();
    // alternating label pairs: even pairs train, odd pairs evaluate
    let (train, eval): (Vec<_>, Vec<_>) = corpus
        .apps
        .iter()
        .enumerate()
        .map(|(i, a)| (i, (a.app_id.clone(), a.model.clone())))
        .partition(|(i, _)| (i / 2) % 2 == 0);
    let train: Vec<(String, AppModel)> = train.into_iter().map(|p| p.1).collect();
    let eval: Vec<(String, AppModel)> = eval.into_iter().map(|p| p.1).collect();
    let variants = obfuscate_all(&eval, &ObfuscationPlan::full(7), exec).expect("plan");

    let mut items = to_items(train.iter().chain(&eval).map(|(i, m)| (i, m)));
    items.extend(to_items(variants.iter().map(|v| (&v.app_id, &v.model))));
    let raws = extract_many(&items, &ExtractionContext::default(), exec).expect("fixtures parse");
    let vocab = build_vocabulary(raws[..400].iter().map(|r| r.1.as_slice()), "clean", 0.01).expect("non-empty");
    let store = vectorize_all(&raws, &vocab);

    let mut all_labels = labels.clone();
    for v in &variants {
        all_labels.insert(v.app_id.clone(), labels[&v.clean_ref]);
    }
    let paired = paired_of(&variants);
    let train_ids: Vec<String> = train.iter().map(|p| p.0.clone()).collect();
    let eval_ids: Vec<String> = eval.iter().map(|p| p.0.clone()).collect();
    let obf_eval = vec![("obfuscated".to_owned(), variants.iter().map(|v| v.app_id.clone()).collect())];
    let inputs = DetectorInputs {
        store: &store,
        vocab: &vocab,
        labels: &all_labels,
        train: &train_ids,
        clean_eval: &eval_ids,
        obf_eval: &obf_eval,
        paired: &paired,
    };
    let cfg = SelectionConfig {
        threshold: 0.85,
        ..SelectionConfig::default()
    };
    let det = match build_detector(&inputs, &cfg, exec) {
        Ok(d) => d,
        Err(e) => return Outcome::new(false, format!("build_detector failed: {e}")),
    };
    let clean = det.report.eval_of("clean").expect("clean row").a_mean;
    let obf = det.report.eval_of("obfuscated").expect("obfuscated row").a_mean;
    let fams: Vec<&str> = det.features.families.iter().map(|f| f.as_str()).collect();
    Outcome::new(
        clean >= 0.95 && (clean - obf).abs() <= 0.05,
        format!(
            "families {{{}}} width {}, clean A_mean {clean:.4}, obfuscated A_mean {obf:.4} over {} variants",
            fams.join(","),
            det.features.width,
            variants.len()
        ),
    )
}

// ---------------------------------------------------------------- 7

/// Uniform points in the unit cube labeled by one informative column.
fn separable(rng: &mut ChaCha8Rng, n: usize, width: usize, informative: usize) -> (Vec<Vec<f64>>, Vec<Label>) {
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..width).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let ys = xs
        .iter()
        .map(|x| if x[informative] > 0.5 { Label::Malware } else { Label::Goodware })
        .collect();
    (xs, ys)
}

fn dense_matrix(xs: &[Vec<f64>], labels: Option<Vec<Label>>) -> FeatureMatrix {
    let width = xs[0].len() as u32;
    let mut m = FeatureMatrix {
        row_ids: (0..xs.len()).map(|i| format!("r{i}")).collect(),
        blocks: vec![Block {
            family: Family::Opcodes,
            offset: 0,
            columns: (0..width).collect(),
        }],
        width,
        indptr: vec![0],
        indices: Vec::new(),
        values: Vec::new(),
        labels,
    };
    for x in xs {
        for (i, &v) in x.iter().enumerate() {
            m.indices.push(i as u32);
            m.values.push(v);
        }
        m.indptr.push(m.indices.len() as u64);
    }
    m
}

fn accuracy(model: &droidlens::forest::ForestModel, x: &FeatureMatrix, y: &[Label]) -> f64 {
    let p = model.predict_matrix(x, Execution::Parallel);
    p.iter().zip(y).filter(|(a, b)| a.0 == **b).count() as f64 / y.len() as f64
}

fn criterion_7() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(70 + seed);
        let informative = rng.gen_range(0..10);
        let (xs, ys) = separable(&mut rng, 400, 10, informative);
        let train = dense_matrix(&xs[..200], Some(ys[..200].to_vec()));
        let test = dense_matrix(&xs[200..], None);
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let a = train_forest_with(&train, &cfg, [0; 32], Execution::Parallel).expect("trainable");
        let b = train_forest_with(&train, &cfg, [0; 32], Execution::Sequential).expect("trainable");
        let same_bytes = a.to_bytes() == b.to_bytes();
        let sum: f64 = a.importances.iter().sum();
        let imp_ok = a.importances.iter().all(|&v| v >= 0.0) && a.n_splits() > 0 && (sum - 1.0).abs() < 1e-9;
        let train_acc = accuracy(&a, &train, &ys[..200]);
        let test_acc = accuracy(&a, &test, &ys[200..]);
        ok &= same_bytes && imp_ok && train_acc == 1.0 && test_acc >= 0.95;
        notes.push(format!("seed {seed}: train {train_acc:.3} held-out {test_acc:.3}{}", if same_bytes { "" } else { " bytes differ" }));
    }
    Outcome::new(ok, notes.join("; "))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut mismatches, mut boundary_kept) = (0, 0);
    for case in 0..200 {
        // every fourth corpus has a size divisible by 100 so exact 1% exists
        let n = if case % 4 == 0 { 100 * rng.gen_range(1..=5) } else { rng.gen_range(1..=500) };
        let pool: Vec<String> = (0..60).map(|i| format!("s{i}")).collect();
        let mut apps: Vec<Vec<RawFeatureSet>> = Vec::with_capacity(n);
        let mut rates: Vec<f64> = pool.iter().map(|_| rng.gen_range(0.0..0.05)).collect();
        rates.shuffle(&mut rng);
        let planted = n / 100;
        for a in 0..n {
            let mut set = RawFeatureSet::new(Family::Strings);
            for (s, &r) in pool.iter().zip(&rates) {
                if rng.gen_bool(r) {
                    set.observations.insert(format!("str::{s}"), 1);
                }
            }
            // a name present in exactly n/100 apps
            if a < planted {
                set.observations.insert("str::boundary".into(), 1);
            }
            apps.push(vec![set]);
        }
        let vocab = build_vocabulary(apps.iter().map(Vec::as_slice), "t", 0.01).expect("non-empty");
        let got: BTreeSet<&str> = vocab.family(Family::Strings).features.iter().map(|f| f.0.as_str()).collect();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for app in &apps {
            for name in app[0].observations.keys() {
                *counts.entry(name.as_str()).or_insert(0) += 1;
            }
        }
        // kept iff count / n >= 1/100, in integers
        let want: BTreeSet<&str> = counts.iter().filter(|(_, &k)| 100 * k >= n).map(|(&s, _)| s).collect();
        if got != want {
            mismatches += 1;
        }
        if planted > 0 && n % 100 == 0 {
            boundary_kept += usize::from(got.contains("str::boundary"));
        }
    }
    Outcome::new(
        mismatches == 0 && boundary_kept > 0,
        format!("200 corpora, {mismatches} mismatches, exact-1% name kept in {boundary_kept} boundary corpora"),
    )
}

fn main() {
    let results = [
        run(1, "metric arithmetic parity", Duration::from_secs(1), criterion_1),
        run(2, "selection parity", Duration::from_secs(1), criterion_2),
        run(3, "persistence oracle equivalence", Duration::from_secs(10), criterion_3),
        run(4, "parser round-trip and fuzz", Duration::from_secs(120), criterion_4),
        run(5, "technique signatures", Duration::from_secs(300), criterion_5),
        run(6, "end-to-end robust detector", Duration::from_secs(600), criterion_6),
        run(7, "classifier properties", Duration::from_secs(60), criterion_7),
        run(8, "rare-string pruning", Duration::from_secs(10), criterion_8),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
