use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{defined_classes, package_path, static_shorty, ChainRecord, Ctx, HelperPlacement, NameGen, TransformLog};
use crate::apk::dex::{ClassDef, CodeItem, EncodedMethod, Insn, MethodRef};
use crate::apk::opcodes;
use crate::fixture::AppModel;

const ACC_PUBLIC_STATIC: u32 = 0x0009;
const ACC_PRIVATE_STATIC: u32 = 0x000a;

/// Invoke opcodes whose call can be moved into a static forwarder.
fn forwardable(op: u8) -> bool {
    matches!(
        op,
        opcodes::INVOKE_VIRTUAL | opcodes::INVOKE_DIRECT | opcodes::INVOKE_STATIC | opcodes::INVOKE_INTERFACE
    )
}

fn arg_count(insn: &Insn) -> usize {
    (insn.0[0] >> 12) as usize
}

/// `move-result*` and `return*` pair for a return type character.
pub(crate) fn result_and_return(ret: char, reg: u8) -> Vec<Insn> {
    let r = (reg as u16) << 8;
    match ret {
        'V' => vec![Insn::return_void()],
        'J' | 'D' => vec![Insn(vec![0x0b | r]), Insn(vec![0x10 | r])],
        'L' | '[' => vec![Insn(vec![0x0c | r]), Insn(vec![0x11 | r])],
        _ => vec![Insn(vec![0x0a | r]), Insn(vec![0x0f | r])],
    }
}

/// Body of a static forwarder taking `argc` arguments.
fn forwarder(op: u8, callee: u16, argc: usize, ret: char) -> CodeItem {
    let scratch = match ret {
        'V' => 0,
        'J' | 'D' => 2,
        _ => 1,
    };
    let registers = argc.max(scratch);
    let args: Vec<u8> = (registers - argc..registers).map(|r| r as u8).collect();
    let mut insns = vec![Insn::invoke(op, callee, &args)];
    insns.extend(result_and_return(ret, 0));
    CodeItem {
        registers: registers as u16,
        ins: argc as u16,
        outs: argc as u16,
        insns,
    }
}

struct Site {
    class: usize,
    method: usize,
    pos: usize,
}

pub(super) fn run(app: &mut AppModel, ctx: &Ctx, rng: &mut ChaCha8Rng, log: &mut TransformLog) {
    let defined = defined_classes(app);
    let n = ctx.intensity.chain_length.max(1) as usize;
    let mut names = NameGen::new(ctx.profile, app.dexes.iter().flat_map(|d| d.method_refs.iter().map(|r| r.name.clone())));
    let mut class_names = NameGen::new(ctx.profile, defined.iter().cloned());

    for d in &mut app.dexes {
        let mut sites = Vec::new();
        for (ci, c) in d.classes.iter().enumerate().filter(|(_, c)| ctx.rewrites(&c.name)) {
            for (mi, m) in c.methods.iter().enumerate() {
                let Some(code) = &m.code else { continue };
                for (pos, midx) in code.invoke_sites() {
                    let insn = &code.insns[pos];
                    let Some(target) = d.method_refs.get(midx as usize) else { continue };
                    if !forwardable(insn.opcode()) || !defined.contains(&target.class) || target.name == "<init>" {
                        continue;
                    }
                    if rng.gen_bool(ctx.intensity.indirection_fraction) {
                        sites.push(Site { class: ci, method: mi, pos });
                    }
                }
            }
        }
        if sites.is_empty() {
            continue;
        }

        let mut helper: Option<usize> = None;
        for s in sites {
            let caller_class = d.classes[s.class].name.clone();
            let caller_idx = d.classes[s.class].methods[s.method].method_idx;
            let insn = d.classes[s.class].methods[s.method].code.as_ref().unwrap().insns[s.pos].clone();
            let target_idx = insn.method_index().unwrap();
            let target = d.method_refs[target_idx as usize].clone();
            let has_receiver = insn.opcode() != opcodes::INVOKE_STATIC;
            let shorty = static_shorty(&target.shorty, has_receiver);
            let ret = target.shorty.chars().next().unwrap_or('V');
            let argc = arg_count(&insn);

            let (host, flags) = match ctx.profile.helper {
                HelperPlacement::SameClass => (s.class, ACC_PRIVATE_STATIC),
                HelperPlacement::SeparateHelper => {
                    let h = *helper.get_or_insert_with(|| {
                        let name = format!("L{}{};", package_path(&caller_class), class_names.fresh(rng));
                        d.intern_type(&name);
                        d.intern_type("Ljava/lang/Object;");
                        d.classes.push(ClassDef {
                            name,
                            superclass: Some("Ljava/lang/Object;".into()),
                            access_flags: 0x0001,
                            methods: Vec::new(),
                        });
                        d.classes.len() - 1
                    });
                    (h, ACC_PUBLIC_STATIC)
                }
            };
            let host_name = d.classes[host].name.clone();

            let refs: Vec<MethodRef> = (0..n).map(|_| MethodRef::new(&host_name, &names.fresh(rng), &shorty)).collect();
            let idx: Vec<u32> = refs.iter().map(|r| d.intern_method(r)).collect();
            if idx.iter().any(|&i| i > 0xffff) || target_idx > 0xffff {
                break;
            }
            for k in 0..n {
                let (op, callee) = if k + 1 < n {
                    (opcodes::INVOKE_STATIC, idx[k + 1])
                } else {
                    (insn.opcode(), target_idx)
                };
                d.classes[host].methods.push(EncodedMethod {
                    method_idx: idx[k],
                    access_flags: flags,
                    is_virtual: false,
                    code: Some(forwarder(op, callee as u16, argc, ret)),
                });
            }
            let code = d.classes[s.class].methods[s.method].code.as_mut().unwrap();
            code.insns[s.pos] = insn.with_opcode(opcodes::INVOKE_STATIC).with_method_index(idx[0] as u16);

            log.chains.push(ChainRecord {
                caller: d.method_refs[caller_idx as usize].signature(),
                position: s.pos,
                target: target.signature(),
                chain: refs.iter().map(MethodRef::signature).collect(),
            });
        }
    }
}
