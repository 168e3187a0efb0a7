use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;

use super::{defined_classes, descriptor_to_dotted, package_path, Ctx, NameGen, TransformLog};
use crate::fixture::AppModel;

/// Framework callbacks and `Object` overrides keep their names.
const KEEP: &[&str] = &[
    "<init>", "<clinit>", "run", "call", "main", "query", "insert", "update", "delete", "getType",
    "doInBackground", "handleMessage", "toString", "equals", "hashCode", "finalize", "clone",
];

pub(crate) fn is_lifecycle(name: &str) -> bool {
    if KEEP.contains(&name) {
        return true;
    }
    let mut c = name.chars();
    matches!((c.next(), c.next(), c.next()), (Some('o'), Some('n'), Some(u)) if u.is_ascii_uppercase())
}

fn map_type(t: &str, classes: &BTreeMap<String, String>) -> Option<String> {
    let dims = t.len() - t.trim_start_matches('[').len();
    classes.get(&t[dims..]).map(|n| format!("{}{}", &t[..dims], n))
}

pub(super) fn run(app: &mut AppModel, ctx: &Ctx, rng: &mut ChaCha8Rng, log: &mut TransformLog) {
    let defined = defined_classes(app);
    let targets: BTreeSet<&String> = defined.iter().filter(|c| ctx.rewrites(c)).collect();
    if targets.is_empty() {
        return;
    }

    let simple = |d: &str| d.trim_start_matches('L').trim_end_matches(';')[package_path(d).len()..].to_owned();
    let mut class_names = NameGen::new(ctx.profile, defined.iter().map(|d| simple(d)));
    let mut class_map = BTreeMap::new();
    for &old in &targets {
        let new = format!("L{}{};", package_path(old), class_names.fresh(rng));
        class_map.insert(old.clone(), new);
    }

    let mut method_names = BTreeSet::new();
    let mut all_names = BTreeSet::new();
    for d in &app.dexes {
        all_names.extend(d.method_refs.iter().map(|r| r.name.clone()));
        for c in d.classes.iter().filter(|c| class_map.contains_key(&c.name)) {
            for m in &c.methods {
                if let Some(r) = d.method_refs.get(m.method_idx as usize) {
                    if !is_lifecycle(&r.name) {
                        method_names.insert(r.name.clone());
                    }
                }
            }
        }
    }
    let mut gen = NameGen::new(ctx.profile, all_names);
    let method_map: BTreeMap<String, String> = method_names.into_iter().map(|n| (n, gen.fresh(rng))).collect();

    for d in &mut app.dexes {
        let mut fresh = Vec::new();
        for r in &mut d.method_refs {
            if let Some(new_class) = class_map.get(&r.class) {
                if let Some(n) = method_map.get(&r.name) {
                    r.name = n.clone();
                    fresh.push(n.clone());
                }
                r.class = new_class.clone();
            }
        }
        for t in &mut d.type_names {
            if let Some(n) = map_type(t, &class_map) {
                *t = n;
                fresh.push(t.clone());
            }
        }
        for c in &mut d.classes {
            if let Some(n) = class_map.get(&c.name) {
                c.name = n.clone();
            }
            if let Some(s) = c.superclass.as_mut() {
                if let Some(n) = class_map.get(s.as_str()) {
                    *s = n.clone();
                }
            }
        }
        for s in fresh {
            d.intern_string(&s);
        }
    }

    let dotted: BTreeMap<String, String> = class_map
        .iter()
        .filter_map(|(o, n)| Some((descriptor_to_dotted(o)?, descriptor_to_dotted(n)?)))
        .collect();
    let m = &mut app.manifest;
    for c in &mut m.components {
        if let Some(n) = dotted.get(&c.name) {
            c.name = n.clone();
        }
    }
    for f in &mut m.intent_filters {
        if let Some(n) = dotted.get(&f.owner) {
            f.owner = n.clone();
        }
    }

    log.renamed_classes = class_map.into_iter().collect();
    log.renamed_methods = method_map.into_iter().collect();
}

#[cfg(test)]
mod tests {
    use super::super::testkit::sample_app;
    use super::super::*;
    use crate::apk::open_apk;
    use crate::features::{extract_api_functions, extract_components, extract_opcode_bigrams};

    #[test]
    fn renames_classes_everywhere() {
        let app = sample_app();
        let spec = ObfSpec::builtin(Technique::Renaming, "tool-b", 5).unwrap();
        let (out, log) = rename(&app, &spec).unwrap();
        let new_foo = &log
            .renamed_classes
            .iter()
            .find(|(o, _)| o == "Lcom/ex/FooActivity;")
            .unwrap()
            .1;
        assert!(new_foo.starts_with("Lcom/ex/"));
        let dotted = descriptor_to_dotted(new_foo).unwrap();
        assert_eq!(out.manifest.components[0].name, dotted);
        assert_eq!(out.manifest.intent_filters[0].owner, dotted);
        let d = &out.dexes[0];
        assert!(d.classes.iter().any(|c| &c.name == new_foo));
        // lifecycle kept, helper renamed, external ref untouched
        assert!(d.method_refs.iter().any(|r| &r.class == new_foo && r.name == "onCreate"));
        assert!(!d.method_refs.iter().any(|r| r.name == "compute"));
        assert!(d.method_refs.iter().any(|r| r.signature() == "Landroid/util/Log;->i(ILL)"));
        assert_eq!(log.renamed_methods.len(), 1);

        let before = open_apk(&app.to_apk().unwrap()).unwrap();
        let after = open_apk(&out.to_apk().unwrap()).unwrap();
        assert_eq!(extract_opcode_bigrams(&before), extract_opcode_bigrams(&after));
        assert_eq!(extract_api_functions(&before), extract_api_functions(&after));
        assert_ne!(extract_components(&before.manifest), extract_components(&after.manifest));
    }

    #[test]
    fn seeds_change_names() {
        let app = sample_app();
        let a = rename(&app, &ObfSpec::builtin(Technique::Renaming, "tool-a", 1).unwrap()).unwrap().1;
        let b = rename(&app, &ObfSpec::builtin(Technique::Renaming, "tool-a", 2).unwrap()).unwrap().1;
        assert_ne!(a.renamed_classes, b.renamed_classes);
    }

    #[test]
    fn external_only_is_identity() {
        let mut app = sample_app();
        app.dexes[0].classes.clear();
        let (out, log) = rename(&app, &ObfSpec::builtin(Technique::Renaming, "tool-a", 1).unwrap()).unwrap();
        assert!(log.is_identity());
        assert_eq!(out, app);
    }

    #[test]
    fn lifecycle_names() {
        assert!(super::is_lifecycle("onCreate"));
        assert!(super::is_lifecycle("<init>"));
        assert!(!super::is_lifecycle("once"));
        assert!(!super::is_lifecycle("compute"));
    }
}
