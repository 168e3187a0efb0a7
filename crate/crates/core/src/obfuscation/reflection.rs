use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{defined_classes, descriptor_to_dotted, Ctx, ReflectRecord, TransformLog};
use crate::apk::dex::{Insn, MethodRef};
use crate::apk::opcodes;
use crate::fixture::AppModel;

pub(crate) const FOR_NAME: (&str, &str, &str) = ("Ljava/lang/Class;", "forName", "LL");
pub(crate) const GET_DECLARED_METHOD: (&str, &str, &str) = ("Ljava/lang/Class;", "getDeclaredMethod", "LLL");
pub(crate) const METHOD_INVOKE: (&str, &str, &str) = ("Ljava/lang/reflect/Method;", "invoke", "LLL");

fn mref(t: (&str, &str, &str)) -> MethodRef {
    MethodRef::new(t.0, t.1, t.2)
}

fn reflectable(op: u8) -> bool {
    matches!(
        op,
        opcodes::INVOKE_VIRTUAL | opcodes::INVOKE_DIRECT | opcodes::INVOKE_STATIC | opcodes::INVOKE_INTERFACE
    )
}

fn first_arg(insn: &Insn) -> Option<u8> {
    ((insn.0[0] >> 12) > 0).then(|| (insn.0[2] & 0x0f) as u8)
}

pub(super) fn run(app: &mut AppModel, ctx: &Ctx, rng: &mut ChaCha8Rng, log: &mut TransformLog) {
    let defined = defined_classes(app);
    let fraction = ctx.intensity.reflection_fraction;
    if fraction <= 0.0 {
        return;
    }
    for d in &mut app.dexes {
        // positions per (class, method), chosen before the tables grow
        let mut plan: Vec<(usize, usize, Vec<usize>)> = Vec::new();
        for (ci, c) in d.classes.iter().enumerate().filter(|(_, c)| ctx.rewrites(&c.name)) {
            for (mi, m) in c.methods.iter().enumerate() {
                let Some(code) = &m.code else { continue };
                if code.registers > 14 {
                    continue;
                }
                let mut chosen = Vec::new();
                for (pos, midx) in code.invoke_sites() {
                    let Some(t) = d.method_refs.get(midx as usize) else { continue };
                    let external = !defined.contains(&t.class)
                        && !t.class.starts_with("Ljava/lang/Class;")
                        && !t.class.starts_with("Ljava/lang/reflect/")
                        && t.name != "<init>"
                        && t.class.starts_with('L');
                    if external && reflectable(code.insns[pos].opcode()) && midx <= 0xffff && rng.gen_bool(fraction) {
                        chosen.push(pos);
                    }
                }
                if !chosen.is_empty() {
                    plan.push((ci, mi, chosen));
                }
            }
        }
        if plan.is_empty() {
            continue;
        }
        let for_name = d.intern_method(&mref(FOR_NAME));
        let get_method = d.intern_method(&mref(GET_DECLARED_METHOD));
        let invoke = d.intern_method(&mref(METHOD_INVOKE));
        if invoke > 0xffff {
            continue;
        }

        for (ci, mi, chosen) in plan {
            let caller_idx = d.classes[ci].methods[mi].method_idx;
            let old = d.classes[ci].methods[mi].code.clone().unwrap();
            let (va, vb) = (old.registers as u8, old.registers as u8 + 1);
            let mut out = Vec::with_capacity(old.insns.len() + 6 * chosen.len());
            for (pos, insn) in old.insns.iter().enumerate() {
                if !chosen.contains(&pos) {
                    out.push(insn.clone());
                    continue;
                }
                let target = d.method_refs[insn.method_index().unwrap() as usize].clone();
                let class = descriptor_to_dotted(&target.class).unwrap_or_else(|| target.class.clone());
                let cs = d.intern_string(&class);
                let ms = d.intern_string(&target.name);
                out.push(Insn::const_string(va, cs));
                out.push(Insn::invoke(opcodes::INVOKE_STATIC, for_name as u16, &[va]));
                out.push(Insn::move_result_object(va));
                out.push(Insn::const_string(vb, ms));
                out.push(Insn::invoke(opcodes::INVOKE_VIRTUAL, get_method as u16, &[va, vb]));
                out.push(Insn::move_result_object(va));
                log.reflected.push(ReflectRecord {
                    caller: d.method_refs[caller_idx as usize].signature(),
                    position: out.len(),
                    target: target.signature(),
                });
                out.push(Insn::invoke(opcodes::INVOKE_VIRTUAL, invoke as u16, &[va, first_arg(insn).unwrap_or(vb)]));
            }
            let code = d.classes[ci].methods[mi].code.as_mut().unwrap();
            code.registers += 2;
            code.insns = out;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::testkit::sample_app;
    use super::super::*;
    use crate::apk::open_apk;
    use crate::features::{extract_adhoc, extract_api_functions, extract_strings, ExtractionBudget, Watchlist};

    fn spec(fraction: f64) -> ObfSpec {
        let mut s = ObfSpec::builtin(Technique::Reflection, "tool-a", 4).unwrap();
        s.intensity.reflection_fraction = fraction;
        s
    }

    #[test]
    fn full_fraction_hides_the_call() {
        let app = sample_app();
        let (out, log) = reflectify(&app, &spec(1.0)).unwrap();
        assert_eq!(log.reflected.len(), 1);
        let apk = open_apk(&out.to_apk().unwrap()).unwrap();
        let api = extract_api_functions(&apk);
        assert!(!api.observations.contains_key("api::Landroid/util/Log;->i(ILL)"));
        for s in ["api::Ljava/lang/Class;->forName(LL)", "api::Ljava/lang/reflect/Method;->invoke(LLL)"] {
            assert!(api.observations.contains_key(s), "{s}");
        }
        let strings = extract_strings(&apk);
        assert!(strings.observations.contains_key("str::android.util.Log"));
        let adhoc = extract_adhoc(&apk, &Watchlist::builtin(), ExtractionBudget::default());
        assert!(adhoc.observations.contains_key("adhoc::refl::android.util.Log"));

        // the logged position holds the reflective invoke
        let d = &out.dexes[0];
        let rec = &log.reflected[0];
        let code = d.classes[0].methods[0].code.as_ref().unwrap();
        let m = code.insns[rec.position].method_index().unwrap();
        assert_eq!(d.method_refs[m as usize].signature(), "Ljava/lang/reflect/Method;->invoke(LLL)");
    }

    #[test]
    fn zero_fraction_is_identity() {
        let app = sample_app();
        let (out, log) = reflectify(&app, &spec(0.0)).unwrap();
        assert!(log.is_identity());
        assert_eq!(out, app);
    }

    #[test]
    fn encryption_afterwards_defeats_resolution() {
        let app = sample_app();
        let (r, _) = reflectify(&app, &spec(1.0)).unwrap();
        let (e, _) = encrypt_strings(&r, &ObfSpec::builtin(Technique::Encryption, "tool-b", 4).unwrap()).unwrap();
        let apk = open_apk(&e.to_apk().unwrap()).unwrap();
        let adhoc = extract_adhoc(&apk, &Watchlist::builtin(), ExtractionBudget::default());
        assert!(!adhoc.observations.keys().any(|k| k.starts_with("adhoc::refl::")));
    }
}
