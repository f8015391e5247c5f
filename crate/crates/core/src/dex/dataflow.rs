//! Intraprocedural forward constant propagation over string-typed values.
//!
//! The lattice tracks string constants, `Uri` objects parsed from
//! constants, and `StringBuilder` allocations whose contents are known.
//! Joins that disagree fall to [`Val::NotConst`]; builder contents that
//! disagree fall to unknown.

use std::collections::{BTreeMap, HashMap, VecDeque};

use super::insn::{switch_targets, written_register, Insn};
use super::parser::{DexFile, TryBlock};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Val {
    NotConst,
    Null,
    Str(String),
    Uri(String),
    /// A builder object, keyed by its allocation offset.
    Builder(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct State {
    pub regs: Vec<Val>,
    /// Builder contents by allocation site; `None` when not constant.
    pub heap: BTreeMap<u32, Option<String>>,
    pending: Option<Val>,
}

impl State {
    fn entry(registers: usize) -> Self {
        State {
            regs: vec![Val::NotConst; registers],
            heap: BTreeMap::new(),
            pending: None,
        }
    }

    pub fn reg(&self, r: u32) -> &Val {
        self.regs.get(r as usize).unwrap_or(&Val::NotConst)
    }

    fn set(&mut self, r: u32, v: Val) {
        if let Some(slot) = self.regs.get_mut(r as usize) {
            *slot = v;
        }
    }

    /// Resolved string value of a register, reading builders through the heap.
    pub fn string_of(&self, r: u32) -> Option<String> {
        match self.reg(r) {
            Val::Str(s) => Some(s.clone()),
            Val::Builder(site) => self.heap.get(site).cloned().flatten(),
            _ => None,
        }
    }

    fn join(&mut self, other: &State) -> bool {
        let mut changed = false;
        for (mine, theirs) in self.regs.iter_mut().zip(&other.regs) {
            if mine != theirs && *mine != Val::NotConst {
                *mine = Val::NotConst;
                changed = true;
            }
        }
        for (site, theirs) in &other.heap {
            match self.heap.get_mut(site) {
                None => {
                    self.heap.insert(*site, theirs.clone());
                    changed = true;
                }
                Some(mine) if mine != theirs && mine.is_some() => {
                    *mine = None;
                    changed = true;
                }
                _ => {}
            }
        }
        if self.pending != other.pending && self.pending.is_some() {
            self.pending = None;
            changed = true;
        }
        changed
    }

    fn forget_builders_in(&mut self, args: &[u32]) {
        for &a in args {
            if let Val::Builder(site) = self.reg(a).clone() {
                self.heap.insert(site, None);
            }
        }
    }
}

const STRING: &str = "Ljava/lang/String;";
const URI: &str = "Landroid/net/Uri;";

fn is_builder_type(desc: &str) -> bool {
    desc == "Ljava/lang/StringBuilder;" || desc == "Ljava/lang/StringBuffer;"
}

/// Successor instruction indices of `i`, normal and exceptional.
pub fn successors(insns: &[Insn], code: &[u16], tries: &[TryBlock], index_of: &HashMap<u32, usize>, i: usize) -> Vec<usize> {
    let insn = &insns[i];
    let mut out = Vec::new();
    if !insn.ends_flow() && i + 1 < insns.len() {
        out.push(i + 1);
    }
    if let Some(t) = insn.branch_target() {
        out.extend(index_of.get(&t));
    }
    if matches!(insn.opcode, 0x2b | 0x2c) {
        let payload = (insn.offset as i64 + insn.target as i64) as usize;
        for rel in switch_targets(code, payload) {
            let t = (insn.offset as i64 + rel as i64) as u32;
            out.extend(index_of.get(&t));
        }
    }
    for t in tries {
        if insn.offset >= t.start && insn.offset < t.start + t.count {
            out.extend(t.handlers.iter().filter_map(|h| index_of.get(h)));
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Per-instruction entry states; `None` for unreachable instructions.
pub struct Propagation {
    pub states: Vec<Option<State>>,
}

pub fn propagate(dex: &DexFile, insns: &[Insn], code: &[u16], tries: &[TryBlock], registers: usize) -> Propagation {
    let index_of: HashMap<u32, usize> = insns.iter().enumerate().map(|(i, n)| (n.offset, i)).collect();
    let succ: Vec<Vec<usize>> = (0..insns.len())
        .map(|i| successors(insns, code, tries, &index_of, i))
        .collect();
    let mut states: Vec<Option<State>> = vec![None; insns.len()];
    if insns.is_empty() {
        return Propagation { states };
    }
    states[0] = Some(State::entry(registers));
    let mut work: VecDeque<usize> = VecDeque::from([0]);
    let mut queued = vec![false; insns.len()];
    queued[0] = true;
    while let Some(i) = work.pop_front() {
        queued[i] = false;
        let Some(input) = states[i].clone() else { continue };
        let out = transfer(dex, &insns[i], input);
        for &s in &succ[i] {
            let changed = match &mut states[s] {
                Some(existing) => existing.join(&out),
                slot @ None => {
                    *slot = Some(out.clone());
                    true
                }
            };
            if changed && !queued[s] {
                queued[s] = true;
                work.push_back(s);
            }
        }
    }
    Propagation { states }
}

fn transfer(dex: &DexFile, insn: &Insn, mut st: State) -> State {
    let pending = st.pending.take();
    match insn.opcode {
        // const-string, const-string/jumbo
        0x1a | 0x1b => {
            let v = dex.string(insn.index).map_or(Val::NotConst, |s| Val::Str(s.to_string()));
            st.set(insn.a, v);
        }
        // const/4, const/16, const, const/high16 with zero is null
        0x12..=0x15 => {
            st.set(insn.a, if insn.literal == 0 { Val::Null } else { Val::NotConst });
        }
        // move-object variants
        0x07..=0x09 => {
            let v = st.reg(insn.b).clone();
            st.set(insn.a, v);
        }
        0x0c => st.set(insn.a, pending.unwrap_or(Val::NotConst)),
        0x22 => {
            let ty = dex.types.get(insn.index as usize).map(|_| dex.type_name(insn.index));
            if ty.is_some_and(is_builder_type) {
                st.heap.insert(insn.offset, None);
                st.set(insn.a, Val::Builder(insn.offset));
            } else {
                st.set(insn.a, Val::NotConst);
            }
        }
        // check-cast leaves the reference untouched
        0x1f => {}
        _ if insn.is_invoke() => {
            st.pending = Some(invoke(dex, insn, &mut st));
        }
        _ => {
            if let Some((r, wide)) = written_register(insn) {
                st.set(r, Val::NotConst);
                if wide {
                    st.set(r + 1, Val::NotConst);
                }
            }
        }
    }
    st
}

/// Models string-building calls; returns the call's result value.
fn invoke(dex: &DexFile, insn: &Insn, st: &mut State) -> Val {
    let Some(m) = dex.method_ref(insn.index) else {
        st.forget_builders_in(&insn.args);
        return Val::NotConst;
    };
    let args = &insn.args;
    let arg = |i: usize| args.get(i).copied().unwrap_or(u32::MAX);
    let one_string_param = m.params.len() == 1 && m.params[0] == STRING;
    let appendable = m.params.len() == 1
        && matches!(m.params[0], "Ljava/lang/String;" | "Ljava/lang/CharSequence;" | "Ljava/lang/Object;");

    if is_builder_type(m.class) {
        if let Val::Builder(site) = st.reg(arg(0)).clone() {
            match m.name {
                "<init>" if m.params.is_empty() => {
                    st.heap.insert(site, Some(String::new()));
                    return Val::NotConst;
                }
                "<init>" if appendable => {
                    let init = st.string_of(arg(1));
                    st.heap.insert(site, init);
                    return Val::NotConst;
                }
                "append" if appendable => {
                    let tail = st.string_of(arg(1));
                    let head = st.heap.get(&site).cloned().flatten();
                    let joined = head.zip(tail).map(|(h, t)| h + &t);
                    st.heap.insert(site, joined);
                    return Val::Builder(site);
                }
                "toString" if m.params.is_empty() => {
                    return st.heap.get(&site).cloned().flatten().map_or(Val::NotConst, Val::Str);
                }
                _ => {}
            }
        }
    } else if m.class == STRING {
        match m.name {
            "concat" if one_string_param => {
                if let (Some(a), Some(b)) = (st.string_of(arg(0)), st.string_of(arg(1))) {
                    return Val::Str(a + &b);
                }
            }
            "valueOf" if appendable => {
                if let Some(s) = st.string_of(arg(0)) {
                    return Val::Str(s);
                }
            }
            "toString" | "trim" if m.params.is_empty() && args.len() == 1 => {
                if let Val::Str(s) = st.reg(arg(0)) {
                    return Val::Str(if m.name == "trim" { s.trim().to_string() } else { s.clone() });
                }
            }
            _ => {}
        }
    } else if m.class == URI {
        match m.name {
            "parse" if one_string_param && args.len() == 1 => {
                if let Some(s) = st.string_of(arg(0)) {
                    return Val::Uri(s);
                }
            }
            "withAppendedPath" if m.params == [URI, STRING] => {
                if let (Val::Uri(base), Some(seg)) = (st.reg(arg(0)).clone(), st.string_of(arg(1))) {
                    let base = base.trim_end_matches('/');
                    return Val::Uri(format!("{base}/{seg}"));
                }
            }
            _ => {}
        }
    }
    // anything else may retain and mutate builders it receives
    st.forget_builders_in(args);
    Val::NotConst
}
