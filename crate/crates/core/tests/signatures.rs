//! Directional effect of each technique on a small generated corpus.

use std::collections::{BTreeMap, BTreeSet};

use droidlens::features::{ExtractionContext, Family};
use droidlens::fixture::AppModel;
use droidlens::metrics::{Pair, PairedCorpus, RobustnessReport};
use droidlens::obfuscation::{Intensity, Technique};
use droidlens::par::Execution;
use droidlens::pipeline::{extract_many, obfuscate_all, vectorize_all, ObfuscationPlan, Variant};
use droidlens::synth::{generate_corpus, Recipe};
use droidlens::vocab::build_vocabulary;

struct Fixture {
    apps: BTreeMap<String, AppModel>,
    variants: Vec<Variant>,
    report: RobustnessReport,
}

fn fixture(plan: &ObfuscationPlan) -> Fixture {
    let corpus = generate_corpus(40, &Recipe::default(), 8, Execution::Parallel);
    let apps: Vec<(String, AppModel)> = corpus.apps.into_iter().map(|a| (a.app_id, a.model)).collect();
    let variants = obfuscate_all(&apps, plan, Execution::Parallel).unwrap();
    let items: Vec<(String, Vec<u8>)> = apps
        .iter()
        .map(|(id, m)| (id.clone(), m.to_apk().unwrap()))
        .chain(variants.iter().map(|v| (v.app_id.clone(), v.model.to_apk().unwrap())))
        .collect();
    let raws = extract_many(&items, &ExtractionContext::default(), Execution::Parallel).unwrap();
    let vocab = build_vocabulary(raws[..apps.len()].iter().map(|r| r.1.as_slice()), "clean", 0.01).unwrap();
    let store = vectorize_all(&raws, &vocab);
    let paired = PairedCorpus {
        pairs: variants
            .iter()
            .map(|v| Pair {
                clean: v.clean_ref.clone(),
                obf: v.app_id.clone(),
                tool: v.tool.clone(),
                technique: v.technique.as_str().to_owned(),
            })
            .collect(),
    };
    let report = RobustnessReport::from_pairs(&paired, &store, &vocab, 10);
    Fixture {
        apps: apps.into_iter().collect(),
        variants,
        report,
    }
}

fn least_persistent(report: &RobustnessReport, tool: &str, t: Technique) -> BTreeSet<Family> {
    let cells: Vec<_> = report
        .persistence
        .iter()
        .filter(|c| c.tool == tool && c.technique == t.as_str())
        .collect();
    let min = cells.iter().map(|c| c.value).fold(f64::INFINITY, f64::min);
    cells.iter().filter(|c| c.value == min).map(|c| c.family).collect()
}

const TOOLS: [&str; 3] = ["tool-a", "tool-b", "tool-c"];

#[test]
fn encryption_and_junk_hit_their_families() {
    let f = fixture(&ObfuscationPlan {
        techniques: vec![Technique::Encryption, Technique::JunkCodeInsertion],
        ..ObfuscationPlan::full(3)
    });
    for tool in TOOLS {
        assert_eq!(least_persistent(&f.report, tool, Technique::Encryption), [Family::Strings].into());
        assert_eq!(least_persistent(&f.report, tool, Technique::JunkCodeInsertion), [Family::Opcodes].into());
        let perm = f.report.persistence_of(Family::Permissions, tool, "encryption").unwrap();
        assert!(perm >= 0.99, "{tool}: {perm}");
    }
}

#[test]
fn renaming_touches_names_only() {
    let f = fixture(&ObfuscationPlan {
        techniques: vec![Technique::Renaming],
        ..ObfuscationPlan::full(4)
    });
    for tool in TOOLS {
        let worst = least_persistent(&f.report, tool, Technique::Renaming);
        assert!(worst.iter().all(|w| matches!(w, Family::Components | Family::ApiFunctions)), "{tool}: {worst:?}");
    }
    // bigram multiset over all methods is unchanged
    let bigrams = |m: &AppModel| {
        let mut all: Vec<Vec<u8>> = m.dexes.iter().flat_map(|d| d.code_items()).map(|c| c.opcode_sequence()).collect();
        all.sort();
        all
    };
    for v in &f.variants {
        assert_eq!(bigrams(&v.model), bigrams(&f.apps[&v.clean_ref]), "{}", v.app_id);
    }
}

#[test]
fn indirection_adds_one_method_per_chain_link() {
    let methods = |m: &AppModel| -> usize { m.dexes.iter().flat_map(|d| &d.classes).map(|c| c.methods.len()).sum() };
    for chain_length in [1, 2, 4] {
        let f = fixture(&ObfuscationPlan {
            techniques: vec![Technique::CallIndirection],
            intensity: Intensity {
                chain_length,
                ..Intensity::default()
            },
            ..ObfuscationPlan::full(5)
        });
        let mut sites = 0;
        for v in &f.variants {
            let added = methods(&v.model) - methods(&f.apps[&v.clean_ref]);
            assert_eq!(added, chain_length as usize * v.log.chains.len(), "{}", v.app_id);
            sites += v.log.chains.len();
        }
        assert!(sites > 0);
    }
}

#[test]
fn reflection_calls_sit_at_logged_sites() {
    let f = fixture(&ObfuscationPlan {
        techniques: vec![Technique::Reflection],
        ..ObfuscationPlan::full(6)
    });
    let invoke_sites = |m: &AppModel| -> BTreeSet<(String, usize)> {
        let mut out = BTreeSet::new();
        for d in &m.dexes {
            for c in &d.classes {
                for meth in &c.methods {
                    let Some(code) = &meth.code else { continue };
                    for (pos, idx) in code.invoke_sites() {
                        if d.method_refs[idx as usize].signature().starts_with("Ljava/lang/reflect/Method;->invoke(") {
                            out.insert((d.method_refs[meth.method_idx as usize].signature(), pos));
                        }
                    }
                }
            }
        }
        out
    };
    let mut logged = 0;
    for v in &f.variants {
        let before = invoke_sites(&f.apps[&v.clean_ref]);
        let after = invoke_sites(&v.model);
        assert_eq!(after.len(), before.len() + v.log.reflected.len(), "{}", v.app_id);
        for r in &v.log.reflected {
            assert!(after.contains(&(r.caller.clone(), r.position)), "{}: {r:?}", v.app_id);
        }
        logged += v.log.reflected.len();
    }
    assert!(logged > 0);
}
