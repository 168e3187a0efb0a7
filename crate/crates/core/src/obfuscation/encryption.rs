use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use super::{package_path, Cipher, Ctx, HelperPlacement, NameGen, TransformLog};
use crate::apk::dex::{ClassDef, CodeItem, DexModel, EncodedMethod, Insn, MethodRef};
use crate::apk::{magic, opcodes};
use crate::fixture::AppModel;

const DECRYPT_SHORTY: &str = "LL";

fn helper_body(d: &mut DexModel, cipher: &Cipher) -> CodeItem {
    match cipher {
        Cipher::AesLike { key } => {
            let k = d.intern_string(&hex::encode(key));
            let get = d.intern_method(&MethodRef::new("Ljavax/crypto/Cipher;", "getInstance", "LL"));
            let fin = d.intern_method(&MethodRef::new("Ljavax/crypto/Cipher;", "doFinal", "LL"));
            CodeItem {
                registers: 2,
                ins: 1,
                outs: 2,
                insns: vec![
                    Insn::const_string(0, k),
                    Insn::invoke(opcodes::INVOKE_STATIC, get as u16, &[0]),
                    Insn::move_result_object(0),
                    Insn::invoke(opcodes::INVOKE_VIRTUAL, fin as u16, &[0, 1]),
                    Insn::move_result_object(0),
                    Insn(vec![opcodes::RETURN_OBJECT as u16]),
                ],
            }
        }
        Cipher::CaesarLike { shift } => {
            let chars = d.intern_method(&MethodRef::new("Ljava/lang/String;", "toCharArray", "L"));
            let value_of = d.intern_method(&MethodRef::new("Ljava/lang/String;", "valueOf", "LL"));
            let neg = (-(*shift as i8)) as u8 as u16;
            CodeItem {
                registers: 3,
                ins: 1,
                outs: 1,
                insns: vec![
                    Insn::const4(0, 0),
                    Insn(vec![opcodes::ADD_INT_LIT8 as u16, neg << 8]),
                    Insn::invoke(opcodes::INVOKE_VIRTUAL, chars as u16, &[2]),
                    Insn::move_result_object(1),
                    Insn::invoke(opcodes::INVOKE_STATIC, value_of as u16, &[1]),
                    Insn::move_result_object(1),
                    Insn(vec![opcodes::RETURN_OBJECT as u16 | 1 << 8]),
                ],
            }
        }
    }
}

fn encrypt_resources(app: &mut AppModel, cipher: &Cipher, log: &mut TransformLog) {
    for (path, data) in &mut app.extras {
        let head = &data[..data.len().min(magic::SNIFF_LEN)];
        if path.starts_with("assets/") && magic::is_text_type(magic::sniff_magic(head)) {
            *data = cipher.encrypt_bytes(data);
            log.encrypted_resources.push(path.clone());
        }
    }
}

pub(super) fn run(app: &mut AppModel, ctx: &Ctx, rng: &mut ChaCha8Rng, log: &mut TransformLog) {
    let cipher = Cipher::generate(ctx.profile.cipher, rng);
    let mut names = NameGen::new(ctx.profile, app.dexes.iter().flat_map(|d| d.method_refs.iter().map(|r| r.name.clone())));
    let mut class_names = NameGen::new(ctx.profile, app.dexes.iter().flat_map(|d| d.defined_class_names().map(str::to_owned)).collect::<Vec<_>>());
    let mut pairs: BTreeMap<String, String> = BTreeMap::new();

    for d in &mut app.dexes {
        // (class, method) -> const-string positions with a 4-bit register
        let mut plan: Vec<(usize, usize)> = Vec::new();
        for (ci, c) in d.classes.iter().enumerate().filter(|(_, c)| ctx.rewrites(&c.name)) {
            for (mi, m) in c.methods.iter().enumerate() {
                if let Some(code) = &m.code {
                    if code.insns.iter().any(|i| i.string_index().is_some() && i.reg_aa() < 16) {
                        plan.push((ci, mi));
                    }
                }
            }
        }
        if plan.is_empty() {
            continue;
        }

        let mut helper_of: BTreeMap<String, u32> = BTreeMap::new();
        let mut separate: Option<usize> = None;
        for (ci, mi) in plan {
            let host = match ctx.profile.helper {
                HelperPlacement::SameClass => ci,
                HelperPlacement::SeparateHelper => *separate.get_or_insert_with(|| {
                    let name = format!("L{}{};", package_path(&d.classes[ci].name), class_names.fresh(rng));
                    d.intern_type(&name);
                    d.intern_type("Ljava/lang/Object;");
                    d.classes.push(ClassDef {
                        name,
                        superclass: Some("Ljava/lang/Object;".into()),
                        access_flags: 0x0001,
                        methods: Vec::new(),
                    });
                    d.classes.len() - 1
                }),
            };
            let host_name = d.classes[host].name.clone();
            let decrypt = match helper_of.get(&host_name) {
                Some(&m) => m,
                None => {
                    let r = MethodRef::new(&host_name, &names.fresh(rng), DECRYPT_SHORTY);
                    let idx = d.intern_method(&r);
                    let body = helper_body(d, &cipher);
                    d.classes[host].methods.push(EncodedMethod {
                        method_idx: idx,
                        access_flags: 0x0009,
                        is_virtual: false,
                        code: Some(body),
                    });
                    helper_of.insert(host_name.clone(), idx);
                    idx
                }
            };
            if decrypt > 0xffff {
                break;
            }

            let old = d.classes[ci].methods[mi].code.as_ref().unwrap().insns.clone();
            let mut out = Vec::with_capacity(old.len() * 2);
            for insn in old {
                let reg = insn.reg_aa();
                match insn.string_index() {
                    Some(s) if reg < 16 && (s as usize) < d.string_pool.len() => {
                        let plain = d.string_pool[s as usize].clone();
                        let ct = pairs.entry(plain.clone()).or_insert_with(|| cipher.encrypt(&plain)).clone();
                        let idx = d.intern_string(&ct);
                        out.push(Insn::const_string(reg, idx));
                        out.push(Insn::invoke(opcodes::INVOKE_STATIC, decrypt as u16, &[reg]));
                        out.push(Insn::move_result_object(reg));
                    }
                    _ => out.push(insn),
                }
            }
            d.classes[ci].methods[mi].code.as_mut().unwrap().insns = out;
        }
    }

    encrypt_resources(app, &cipher, log);
    log.encrypted_strings = pairs.into_iter().collect();
    if !log.is_identity() {
        log.cipher = Some(cipher);
    }
}

#[cfg(test)]
mod tests {
    use super::super::testkit::sample_app;
    use super::super::*;
    use crate::apk::open_apk;
    use crate::features::{extract_components, extract_strings};

    #[test]
    fn log_inverts_ciphertext() {
        let app = sample_app();
        for tool in ToolProfile::builtin_names() {
            let (out, log) = encrypt_strings(&app, &ObfSpec::builtin(Technique::Encryption, tool, 8).unwrap()).unwrap();
            let cipher = log.cipher.clone().unwrap();
            let (pt, ct) = log.encrypted_strings.iter().find(|p| p.0 == "http://x.io").unwrap();
            assert_ne!(pt, ct);
            assert_eq!(cipher.decrypt(ct).as_deref(), Some(pt.as_str()));
            assert_eq!(log.encrypted_resources, ["assets/cfg.txt"]);

            let before = open_apk(&app.to_apk().unwrap()).unwrap();
            let after = open_apk(&out.to_apk().unwrap()).unwrap();
            let s = extract_strings(&after);
            assert!(!s.observations.contains_key("str::http://x.io"));
            assert!(!s.observations.contains_key("str::server=http://x.io"));
            assert!(s.observations.contains_key(&format!("str::{ct}")));
            assert_eq!(extract_components(&before.manifest), extract_components(&after.manifest));
        }
    }

    #[test]
    fn nothing_to_encrypt_is_identity() {
        let mut app = sample_app();
        app.extras.clear();
        for c in &mut app.dexes[0].classes {
            for m in &mut c.methods {
                if let Some(code) = m.code.as_mut() {
                    code.insns.retain(|i| i.string_index().is_none());
                }
            }
        }
        let (out, log) = encrypt_strings(&app, &ObfSpec::builtin(Technique::Encryption, "tool-a", 8).unwrap()).unwrap();
        assert!(log.is_identity());
        assert_eq!(out, app);
    }
}
