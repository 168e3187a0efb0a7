use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Ctx, JunkPattern, JunkRecord, TransformLog};
use crate::apk::dex::Insn;
use crate::fixture::AppModel;

fn pattern(p: JunkPattern, rng: &mut ChaCha8Rng) -> Vec<Insn> {
    match p {
        JunkPattern::NopRun => vec![Insn::nop(); rng.gen_range(1..=3)],
        JunkPattern::GotoPair => vec![Insn::goto(1), Insn::goto(1)],
        JunkPattern::GotoOverNop => vec![Insn::goto(2), Insn::nop()],
        JunkPattern::LongGoto => vec![Insn::goto16(2)],
    }
}

/// `move-result*` must stay right after its invoke.
fn is_move_result(i: &Insn) -> bool {
    !i.is_payload() && (0x0a..=0x0d).contains(&i.opcode())
}

pub(super) fn run(app: &mut AppModel, ctx: &Ctx, rng: &mut ChaCha8Rng, log: &mut TransformLog) {
    let density = ctx.intensity.junk_density;
    let menu = if ctx.profile.junk_menu.is_empty() {
        &[JunkPattern::NopRun][..]
    } else {
        &ctx.profile.junk_menu[..]
    };
    if density <= 0.0 {
        return;
    }
    for d in &mut app.dexes {
        for c in d.classes.iter_mut().filter(|c| ctx.rewrites(&c.name)) {
            for m in &mut c.methods {
                let Some(code) = m.code.as_mut() else { continue };
                let slots: Vec<usize> = (0..code.insns.len()).filter(|&i| !is_move_result(&code.insns[i])).collect();
                if slots.is_empty() {
                    continue;
                }
                let n = ((density * code.insns.len() as f64).round() as usize).max(1);
                let mut at: Vec<usize> = (0..n).map(|_| slots[rng.gen_range(0..slots.len())]).collect();
                at.sort_unstable();
                let mut counts: BTreeMap<u8, u32> = BTreeMap::new();
                let mut out = Vec::with_capacity(code.insns.len() + 2 * n);
                let mut next = at.iter().peekable();
                for (i, insn) in code.insns.drain(..).enumerate() {
                    while next.peek() == Some(&&i) {
                        next.next();
                        for j in pattern(menu[rng.gen_range(0..menu.len())], rng) {
                            *counts.entry(j.opcode()).or_insert(0) += 1;
                            out.push(j);
                        }
                    }
                    out.push(insn);
                }
                code.insns = out;
                let method = d.method_refs.get(m.method_idx as usize).map(|r| r.name.clone()).unwrap_or_default();
                log.junk.push(JunkRecord {
                    class: c.name.clone(),
                    method,
                    inserted: counts.into_iter().collect(),
                });
            }
        }
    }
}
