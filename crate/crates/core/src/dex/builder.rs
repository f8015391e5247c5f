//! A small DEX assembler for building analysis fixtures.
//!
//! Methods are written as symbolic instruction lists; pool indices, branch
//! offsets and the file layout are resolved when [`DexBuilder::build`] runs.
//! The output follows the canonical section order and sort rules, with a
//! valid checksum and signature.
//!
//! ```
//! use permwatch::dex::builder::{Asm, DexBuilder, MethodSig};
//!
//! let mut dex = DexBuilder::new();
//! let parse = MethodSig::new("Landroid/net/Uri;", "parse", "Landroid/net/Uri;", &["Ljava/lang/String;"]);
//! dex.class("Lcom/x/Main;").method(
//!     "run",
//!     "V",
//!     &[],
//!     Asm::new(2)
//!         .const_string(0, "content://com.x.data")
//!         .invoke_static(&[0], &parse)
//!         .move_result_object(1)
//!         .return_void(),
//! );
//! let bytes = dex.build();
//! assert!(bytes.starts_with(b"dex\n035\0"));
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};

use sha1::{Digest, Sha1};

use super::parser::{encode_mutf8, NO_INDEX};

pub const ACC_PUBLIC: u32 = 0x1;
pub const ACC_PRIVATE: u32 = 0x2;
pub const ACC_STATIC: u32 = 0x8;
pub const ACC_CONSTRUCTOR: u32 = 0x10000;

/// A method reference by descriptor parts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MethodSig {
    pub class: String,
    pub name: String,
    pub return_type: String,
    pub params: Vec<String>,
}

impl MethodSig {
    pub fn new(class: &str, name: &str, return_type: &str, params: &[&str]) -> Self {
        MethodSig {
            class: class.to_string(),
            name: name.to_string(),
            return_type: return_type.to_string(),
            params: params.iter().map(|p| p.to_string()).collect(),
        }
    }

    fn proto(&self) -> (String, Vec<String>) {
        (self.return_type.clone(), self.params.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvokeKind {
    Virtual,
    Super,
    Direct,
    Static,
    Interface,
}

impl InvokeKind {
    fn opcode(self) -> u8 {
        match self {
            InvokeKind::Virtual => 0x6e,
            InvokeKind::Super => 0x6f,
            InvokeKind::Direct => 0x70,
            InvokeKind::Static => 0x71,
            InvokeKind::Interface => 0x72,
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    ConstString(u16, String),
    Const4(u8, i8),
    Const16(u8, i16),
    MoveObject(u16, u16),
    MoveResultObject(u8),
    MoveException(u8),
    NewInstance(u8, String),
    NewArray(u8, u8, String),
    AputObject(u8, u8, u8),
    Invoke(InvokeKind, Vec<u16>, MethodSig),
    IfEqz(u8, String),
    IfNez(u8, String),
    Goto(String),
    Label(String),
    ReturnVoid,
    ReturnObject(u8),
    Throw(u8),
    Nop,
}

/// Symbolic method body.
#[derive(Debug, Clone)]
pub struct Asm {
    registers: u16,
    ops: Vec<Op>,
    tries: Vec<(String, String, String)>,
}

impl Asm {
    pub fn new(registers: u16) -> Self {
        Asm {
            registers,
            ops: Vec::new(),
            tries: Vec::new(),
        }
    }

    fn push(mut self, op: Op) -> Self {
        self.ops.push(op);
        self
    }

    pub fn const_string(self, dst: u16, value: &str) -> Self {
        self.push(Op::ConstString(dst, value.to_string()))
    }
    pub fn const4(self, dst: u8, value: i8) -> Self {
        self.push(Op::Const4(dst, value))
    }
    pub fn const16(self, dst: u8, value: i16) -> Self {
        self.push(Op::Const16(dst, value))
    }
    pub fn move_object(self, dst: u16, src: u16) -> Self {
        self.push(Op::MoveObject(dst, src))
    }
    pub fn move_result_object(self, dst: u8) -> Self {
        self.push(Op::MoveResultObject(dst))
    }
    pub fn move_exception(self, dst: u8) -> Self {
        self.push(Op::MoveException(dst))
    }
    pub fn new_instance(self, dst: u8, ty: &str) -> Self {
        self.push(Op::NewInstance(dst, ty.to_string()))
    }
    pub fn new_array(self, dst: u8, size_reg: u8, ty: &str) -> Self {
        self.push(Op::NewArray(dst, size_reg, ty.to_string()))
    }
    pub fn aput_object(self, src: u8, array: u8, index: u8) -> Self {
        self.push(Op::AputObject(src, array, index))
    }
    pub fn invoke(self, kind: InvokeKind, args: &[u16], method: &MethodSig) -> Self {
        self.push(Op::Invoke(kind, args.to_vec(), method.clone()))
    }
    pub fn invoke_virtual(self, args: &[u16], method: &MethodSig) -> Self {
        self.invoke(InvokeKind::Virtual, args, method)
    }
    pub fn invoke_direct(self, args: &[u16], method: &MethodSig) -> Self {
        self.invoke(InvokeKind::Direct, args, method)
    }
    pub fn invoke_static(self, args: &[u16], method: &MethodSig) -> Self {
        self.invoke(InvokeKind::Static, args, method)
    }
    pub fn if_eqz(self, reg: u8, label: &str) -> Self {
        self.push(Op::IfEqz(reg, label.to_string()))
    }
    pub fn if_nez(self, reg: u8, label: &str) -> Self {
        self.push(Op::IfNez(reg, label.to_string()))
    }
    pub fn goto(self, label: &str) -> Self {
        self.push(Op::Goto(label.to_string()))
    }
    pub fn label(self, name: &str) -> Self {
        self.push(Op::Label(name.to_string()))
    }
    pub fn return_void(self) -> Self {
        self.push(Op::ReturnVoid)
    }
    pub fn return_object(self, reg: u8) -> Self {
        self.push(Op::ReturnObject(reg))
    }
    pub fn throw(self, reg: u8) -> Self {
        self.push(Op::Throw(reg))
    }
    pub fn nop(self) -> Self {
        self.push(Op::Nop)
    }
    /// Catch-all handler at `handler` covering `[start, end)`.
    pub fn try_catch_all(mut self, start: &str, end: &str, handler: &str) -> Self {
        self.tries.push((start.to_string(), end.to_string(), handler.to_string()));
        self
    }
}

#[derive(Debug, Clone)]
struct MethodDef {
    sig: MethodSig,
    access: u32,
    code: Option<Asm>,
}

#[derive(Debug, Clone)]
pub struct ClassBuilder {
    descriptor: String,
    superclass: Option<String>,
    access: u32,
    methods: Vec<MethodDef>,
}

impl ClassBuilder {
    pub fn superclass(&mut self, desc: &str) -> &mut Self {
        self.superclass = Some(desc.to_string());
        self
    }

    /// Adds a public virtual method.
    pub fn method(&mut self, name: &str, return_type: &str, params: &[&str], code: Asm) -> &mut Self {
        self.method_with(name, return_type, params, ACC_PUBLIC, code)
    }

    pub fn method_with(&mut self, name: &str, return_type: &str, params: &[&str], access: u32, code: Asm) -> &mut Self {
        self.methods.push(MethodDef {
            sig: MethodSig::new(&self.descriptor, name, return_type, params),
            access,
            code: Some(code),
        });
        self
    }
}

#[derive(Debug, Default)]
pub struct DexBuilder {
    classes: Vec<ClassBuilder>,
}

fn shorty_char(desc: &str) -> char {
    match desc.as_bytes()[0] {
        b'[' | b'L' => 'L',
        c => c as char,
    }
}

fn shorty(ret: &str, params: &[String]) -> String {
    std::iter::once(shorty_char(ret))
        .chain(params.iter().map(|p| shorty_char(p)))
        .collect()
}

fn param_units(params: &[String]) -> u16 {
    params.iter().map(|p| if p == "J" || p == "D" { 2 } else { 1 }).sum()
}

fn uleb(out: &mut Vec<u8>, mut v: u32) {
    loop {
        let b = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(b);
            return;
        }
        out.push(b | 0x80);
    }
}

fn align4(out: &mut Vec<u8>) {
    while out.len() % 4 != 0 {
        out.push(0);
    }
}

fn utf16_key(s: &str) -> Vec<u16> {
    s.encode_utf16().collect()
}

fn adler32(data: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for chunk in data.chunks(5552) {
        for &x in chunk {
            a += u32::from(x);
            b += a;
        }
        a %= 65521;
        b %= 65521;
    }
    (b << 16) | a
}

struct Pools {
    strings: Vec<String>,
    string_idx: HashMap<String, u32>,
    types: Vec<String>,
    type_idx: HashMap<String, u32>,
    protos: Vec<(String, Vec<String>)>,
    proto_idx: HashMap<(String, Vec<String>), u32>,
    methods: Vec<MethodSig>,
    method_idx: HashMap<MethodSig, u32>,
}

impl DexBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds (or reopens) a class extending `java.lang.Object`.
    pub fn class(&mut self, descriptor: &str) -> &mut ClassBuilder {
        if let Some(i) = self.classes.iter().position(|c| c.descriptor == descriptor) {
            return &mut self.classes[i];
        }
        self.classes.push(ClassBuilder {
            descriptor: descriptor.to_string(),
            superclass: Some("Ljava/lang/Object;".to_string()),
            access: ACC_PUBLIC,
            methods: Vec::new(),
        });
        self.classes.last_mut().unwrap()
    }

    fn collect(&self) -> Pools {
        let mut strings = BTreeSet::new();
        let mut types = BTreeSet::new();
        let mut protos = BTreeSet::new();
        let mut methods = BTreeSet::new();
        let mut add_sig = |sig: &MethodSig, strings: &mut BTreeSet<String>, types: &mut BTreeSet<String>| {
            types.insert(sig.class.clone());
            types.insert(sig.return_type.clone());
            types.extend(sig.params.iter().cloned());
            strings.insert(sig.name.clone());
            strings.insert(shorty(&sig.return_type, &sig.params));
            protos.insert(sig.proto());
            methods.insert(sig.clone());
        };
        for c in &self.classes {
            types.insert(c.descriptor.clone());
            if let Some(s) = &c.superclass {
                types.insert(s.clone());
            }
            for m in &c.methods {
                add_sig(&m.sig, &mut strings, &mut types);
                for op in m.code.iter().flat_map(|a| a.ops.iter()) {
                    match op {
                        Op::ConstString(_, s) => {
                            strings.insert(s.clone());
                        }
                        Op::NewInstance(_, t) | Op::NewArray(_, _, t) => {
                            types.insert(t.clone());
                        }
                        Op::Invoke(_, _, sig) => add_sig(sig, &mut strings, &mut types),
                        _ => {}
                    }
                }
            }
        }
        strings.extend(types.iter().cloned());

        let mut strings: Vec<String> = strings.into_iter().collect();
        strings.sort_by_key(|s| utf16_key(s));
        let string_idx: HashMap<String, u32> =
            strings.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
        // type ids sort by string index, which follows string order
        let mut types: Vec<String> = types.into_iter().collect();
        types.sort_by_key(|t| string_idx[t]);
        let type_idx: HashMap<String, u32> = types.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let mut protos: Vec<(String, Vec<String>)> = protos.into_iter().collect();
        protos.sort_by_key(|(ret, params)| (type_idx[ret], params.iter().map(|p| type_idx[p]).collect::<Vec<_>>()));
        let proto_idx: HashMap<_, _> = protos.iter().enumerate().map(|(i, p)| (p.clone(), i as u32)).collect();
        let mut methods: Vec<MethodSig> = methods.into_iter().collect();
        methods.sort_by_key(|m| (type_idx[&m.class], string_idx[&m.name], proto_idx[&m.proto()]));
        let method_idx: HashMap<_, _> = methods.iter().enumerate().map(|(i, m)| (m.clone(), i as u32)).collect();
        Pools {
            strings,
            string_idx,
            types,
            type_idx,
            protos,
            proto_idx,
            methods,
            method_idx,
        }
    }

    /// Serializes the classes into a DEX 035 file.
    pub fn build(&self) -> Vec<u8> {
        let pools = self.collect();

        // superclasses before subclasses, otherwise by type index
        let depth = |desc: &str| {
            let mut d = 0;
            let mut cur = desc.to_string();
            while let Some(c) = self.classes.iter().find(|c| c.descriptor == cur) {
                match &c.superclass {
                    Some(s) if d < 64 => {
                        cur = s.clone();
                        d += 1;
                    }
                    _ => break,
                }
            }
            d
        };
        let mut classes: Vec<&ClassBuilder> = self.classes.iter().collect();
        classes.sort_by_key(|c| (depth(&c.descriptor), pools.type_idx[&c.descriptor]));

        let header_size = 0x70usize;
        let string_ids_off = header_size;
        let type_ids_off = string_ids_off + 4 * pools.strings.len();
        let proto_ids_off = type_ids_off + 4 * pools.types.len();
        let method_ids_off = proto_ids_off + 12 * pools.protos.len();
        let class_defs_off = method_ids_off + 8 * pools.methods.len();
        let data_off = class_defs_off + 32 * classes.len();

        let mut data: Vec<u8> = Vec::new();
        let pos = |data: &Vec<u8>| data_off + data.len();
        let mut map: Vec<(u16, u32, u32)> = vec![(0x0000, 1, 0)];
        if !pools.strings.is_empty() {
            map.push((0x0001, pools.strings.len() as u32, string_ids_off as u32));
        }
        if !pools.types.is_empty() {
            map.push((0x0002, pools.types.len() as u32, type_ids_off as u32));
        }
        if !pools.protos.is_empty() {
            map.push((0x0003, pools.protos.len() as u32, proto_ids_off as u32));
        }
        if !pools.methods.is_empty() {
            map.push((0x0005, pools.methods.len() as u32, method_ids_off as u32));
        }
        if !classes.is_empty() {
            map.push((0x0006, classes.len() as u32, class_defs_off as u32));
        }

        // code items
        let mut code_offsets: HashMap<MethodSig, u32> = HashMap::new();
        let mut code_count = 0;
        let code_start = pos(&data);
        for c in &classes {
            for m in &c.methods {
                if let Some(asm) = &m.code {
                    align4(&mut data);
                    code_offsets.insert(m.sig.clone(), pos(&data) as u32);
                    let ins = param_units(&m.sig.params) + u16::from(m.access & ACC_STATIC == 0);
                    write_code_item(&mut data, asm, ins, &pools);
                    code_count += 1;
                }
            }
        }
        if code_count > 0 {
            map.push((0x2001, code_count, code_start as u32));
        }

        // type lists for protos
        align4(&mut data);
        let mut type_list_offsets: HashMap<Vec<String>, u32> = HashMap::new();
        let lists: BTreeSet<&Vec<String>> = pools.protos.iter().map(|(_, p)| p).filter(|p| !p.is_empty()).collect();
        let lists_start = pos(&data);
        for params in &lists {
            align4(&mut data);
            type_list_offsets.insert((*params).clone(), pos(&data) as u32);
            data.extend_from_slice(&(params.len() as u32).to_le_bytes());
            for p in params.iter() {
                data.extend_from_slice(&(pools.type_idx[p] as u16).to_le_bytes());
            }
        }
        if !lists.is_empty() {
            map.push((0x1001, lists.len() as u32, lists_start as u32));
        }

        // string data
        let strings_start = pos(&data);
        let mut string_data_offsets = Vec::with_capacity(pools.strings.len());
        for s in &pools.strings {
            string_data_offsets.push(pos(&data) as u32);
            uleb(&mut data, s.encode_utf16().count() as u32);
            data.extend_from_slice(&encode_mutf8(s));
            data.push(0);
        }
        if !pools.strings.is_empty() {
            map.push((0x2002, pools.strings.len() as u32, strings_start as u32));
        }

        // class data
        let class_data_start = pos(&data);
        let mut class_data_offsets = Vec::with_capacity(classes.len());
        for c in &classes {
            if c.methods.is_empty() {
                class_data_offsets.push(0);
                continue;
            }
            class_data_offsets.push(pos(&data) as u32);
            let is_direct = |m: &&MethodDef| m.access & (ACC_STATIC | ACC_PRIVATE | ACC_CONSTRUCTOR) != 0;
            let mut direct: Vec<&MethodDef> = c.methods.iter().filter(is_direct).collect();
            let mut virtual_: Vec<&MethodDef> = c.methods.iter().filter(|m| !is_direct(m)).collect();
            direct.sort_by_key(|m| pools.method_idx[&m.sig]);
            virtual_.sort_by_key(|m| pools.method_idx[&m.sig]);
            uleb(&mut data, 0);
            uleb(&mut data, 0);
            uleb(&mut data, direct.len() as u32);
            uleb(&mut data, virtual_.len() as u32);
            for list in [&direct, &virtual_] {
                let mut prev = 0;
                for m in list.iter() {
                    let idx = pools.method_idx[&m.sig];
                    uleb(&mut data, idx - prev);
                    prev = idx;
                    uleb(&mut data, m.access);
                    uleb(&mut data, code_offsets.get(&m.sig).copied().unwrap_or(0));
                }
            }
        }
        let class_data_count = class_data_offsets.iter().filter(|&&o| o != 0).count();
        if class_data_count > 0 {
            map.push((0x2000, class_data_count as u32, class_data_start as u32));
        }

        align4(&mut data);
        let map_off = pos(&data);
        map.push((0x1000, 1, map_off as u32));
        map.sort_by_key(|&(_, _, off)| off);
        data.extend_from_slice(&(map.len() as u32).to_le_bytes());
        for (kind, size, off) in &map {
            data.extend_from_slice(&kind.to_le_bytes());
            data.extend_from_slice(&0u16.to_le_bytes());
            data.extend_from_slice(&size.to_le_bytes());
            data.extend_from_slice(&off.to_le_bytes());
        }

        let file_size = data_off + data.len();
        let mut out = Vec::with_capacity(file_size);
        out.extend_from_slice(b"dex\n035\0");
        out.extend_from_slice(&[0; 4 + 20]); // checksum + signature, patched below
        let words: [u32; 22] = [
            file_size as u32,
            header_size as u32,
            0x1234_5678,
            0,
            0,
            map_off as u32,
            pools.strings.len() as u32,
            if pools.strings.is_empty() { 0 } else { string_ids_off as u32 },
            pools.types.len() as u32,
            if pools.types.is_empty() { 0 } else { type_ids_off as u32 },
            pools.protos.len() as u32,
            if pools.protos.is_empty() { 0 } else { proto_ids_off as u32 },
            0,
            0,
            pools.methods.len() as u32,
            if pools.methods.is_empty() { 0 } else { method_ids_off as u32 },
            classes.len() as u32,
            if classes.is_empty() { 0 } else { class_defs_off as u32 },
            data.len() as u32,
            data_off as u32,
            0,
            0,
        ];
        for w in &words[..20] {
            out.extend_from_slice(&w.to_le_bytes());
        }
        debug_assert_eq!(out.len(), header_size);

        for off in &string_data_offsets {
            out.extend_from_slice(&off.to_le_bytes());
        }
        for t in &pools.types {
            out.extend_from_slice(&pools.string_idx[t].to_le_bytes());
        }
        for (ret, params) in &pools.protos {
            out.extend_from_slice(&pools.string_idx[&shorty(ret, params)].to_le_bytes());
            out.extend_from_slice(&pools.type_idx[ret].to_le_bytes());
            let off = if params.is_empty() { 0 } else { type_list_offsets[params] };
            out.extend_from_slice(&off.to_le_bytes());
        }
        for m in &pools.methods {
            out.extend_from_slice(&(pools.type_idx[&m.class] as u16).to_le_bytes());
            out.extend_from_slice(&(pools.proto_idx[&m.proto()] as u16).to_le_bytes());
            out.extend_from_slice(&pools.string_idx[&m.name].to_le_bytes());
        }
        for (c, data_off) in classes.iter().zip(&class_data_offsets) {
            out.extend_from_slice(&pools.type_idx[&c.descriptor].to_le_bytes());
            out.extend_from_slice(&c.access.to_le_bytes());
            let sup = c.superclass.as_ref().map_or(NO_INDEX, |s| pools.type_idx[s]);
            out.extend_from_slice(&sup.to_le_bytes());
            out.extend_from_slice(&0u32.to_le_bytes()); // interfaces
            out.extend_from_slice(&NO_INDEX.to_le_bytes()); // source file
            out.extend_from_slice(&0u32.to_le_bytes()); // annotations
            out.extend_from_slice(&data_off.to_le_bytes());
            out.extend_from_slice(&0u32.to_le_bytes()); // static values
        }
        debug_assert_eq!(out.len(), data_off_value(&words));
        out.extend_from_slice(&data);

        let signature = Sha1::digest(&out[32..]);
        out[12..32].copy_from_slice(&signature);
        let checksum = adler32(&out[12..]);
        out[8..12].copy_from_slice(&checksum.to_le_bytes());
        out
    }
}

fn data_off_value(words: &[u32; 22]) -> usize {
    words[19] as usize
}

fn op_units(op: &Op, pools: &Pools) -> u32 {
    match op {
        Op::Label(_) => 0,
        Op::ConstString(_, s) => {
            if pools.string_idx[s] > 0xffff {
                3
            } else {
                2
            }
        }
        Op::Const4(..) | Op::MoveResultObject(_) | Op::MoveException(_) | Op::ReturnVoid | Op::ReturnObject(_) | Op::Throw(_) | Op::Nop => 1,
        Op::MoveObject(dst, src) => {
            if *dst < 16 && *src < 16 {
                1
            } else if *dst < 256 {
                2
            } else {
                3
            }
        }
        Op::Const16(..) | Op::NewInstance(..) | Op::NewArray(..) | Op::AputObject(..) | Op::IfEqz(..) | Op::IfNez(..) => 2,
        Op::Goto(_) => 3,
        Op::Invoke(..) => 3,
    }
}

fn write_code_item(out: &mut Vec<u8>, asm: &Asm, ins: u16, pools: &Pools) {
    let mut labels: BTreeMap<&str, u32> = BTreeMap::new();
    let mut pc = 0u32;
    for op in &asm.ops {
        if let Op::Label(name) = op {
            labels.insert(name, pc);
        }
        pc += op_units(op, pools);
    }
    let label = |name: &str| -> u32 { *labels.get(name).unwrap_or_else(|| panic!("undefined label {name}")) };

    let mut code: Vec<u16> = Vec::with_capacity(pc as usize);
    let mut outs = 0u16;
    for op in &asm.ops {
        let here = code.len() as u32;
        let rel = |target: u32| -> i32 { target as i32 - here as i32 };
        match op {
            Op::Label(_) => {}
            Op::Nop => code.push(0x0000),
            Op::ConstString(dst, s) => {
                let idx = pools.string_idx[s];
                assert!(*dst < 256, "const-string destination must be v0..v255");
                if idx > 0xffff {
                    code.extend_from_slice(&[0x1b | (dst << 8), idx as u16, (idx >> 16) as u16]);
                } else {
                    code.extend_from_slice(&[0x1a | (dst << 8), idx as u16]);
                }
            }
            Op::Const4(dst, v) => code.push(0x12 | (u16::from(*dst & 0xf) << 8) | (((*v as u16) & 0xf) << 12)),
            Op::Const16(dst, v) => code.extend_from_slice(&[0x13 | (u16::from(*dst) << 8), *v as u16]),
            Op::MoveObject(dst, src) => {
                if *dst < 16 && *src < 16 {
                    code.push(0x07 | (dst << 8) | (src << 12));
                } else if *dst < 256 {
                    code.extend_from_slice(&[0x08 | (dst << 8), *src]);
                } else {
                    code.extend_from_slice(&[0x09, *dst, *src]);
                }
            }
            Op::MoveResultObject(dst) => code.push(0x0c | (u16::from(*dst) << 8)),
            Op::MoveException(dst) => code.push(0x0d | (u16::from(*dst) << 8)),
            Op::NewInstance(dst, t) => code.extend_from_slice(&[0x22 | (u16::from(*dst) << 8), pools.type_idx[t] as u16]),
            Op::NewArray(dst, size, t) => code.extend_from_slice(&[
                0x23 | (u16::from(*dst & 0xf) << 8) | (u16::from(*size & 0xf) << 12),
                pools.type_idx[t] as u16,
            ]),
            Op::AputObject(src, arr, idx) => {
                code.extend_from_slice(&[0x4d | (u16::from(*src) << 8), u16::from(*arr) | (u16::from(*idx) << 8)])
            }
            Op::Invoke(kind, args, sig) => {
                let midx = pools.method_idx[sig] as u16;
                outs = outs.max(args.len() as u16);
                if args.len() <= 5 && args.iter().all(|&r| r < 16) {
                    let mut regs = [0u16; 5];
                    regs[..args.len()].copy_from_slice(args);
                    code.extend_from_slice(&[
                        u16::from(kind.opcode()) | ((args.len() as u16) << 12) | (regs[4] << 8),
                        midx,
                        regs[0] | (regs[1] << 4) | (regs[2] << 8) | (regs[3] << 12),
                    ]);
                } else {
                    assert!(
                        args.windows(2).all(|w| w[1] == w[0] + 1),
                        "range invoke needs contiguous registers"
                    );
                    code.extend_from_slice(&[
                        u16::from(kind.opcode() + 6) | ((args.len() as u16) << 8),
                        midx,
                        args[0],
                    ]);
                }
            }
            Op::IfEqz(reg, l) => code.extend_from_slice(&[0x38 | (u16::from(*reg) << 8), rel(label(l)) as i16 as u16]),
            Op::IfNez(reg, l) => code.extend_from_slice(&[0x39 | (u16::from(*reg) << 8), rel(label(l)) as i16 as u16]),
            Op::Goto(l) => {
                let r = rel(label(l)) as u32;
                code.extend_from_slice(&[0x2a, r as u16, (r >> 16) as u16]);
            }
            Op::ReturnVoid => code.push(0x0e),
            Op::ReturnObject(reg) => code.push(0x11 | (u16::from(*reg) << 8)),
            Op::Throw(reg) => code.push(0x27 | (u16::from(*reg) << 8)),
        }
    }

    out.extend_from_slice(&asm.registers.to_le_bytes());
    out.extend_from_slice(&ins.to_le_bytes());
    out.extend_from_slice(&outs.to_le_bytes());
    out.extend_from_slice(&(asm.tries.len() as u16).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes()); // debug info
    out.extend_from_slice(&(code.len() as u32).to_le_bytes());
    code.iter().for_each(|u| out.extend_from_slice(&u.to_le_bytes()));
    if asm.tries.is_empty() {
        return;
    }
    if code.len() % 2 == 1 {
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    // one catch-all handler list per try
    let mut handlers = Vec::new();
    uleb(&mut handlers, asm.tries.len() as u32);
    let mut handler_offsets = Vec::new();
    for (_, _, h) in &asm.tries {
        handler_offsets.push(handlers.len() as u16);
        handlers.push(0x00); // sleb128 0: catch-all only
        uleb(&mut handlers, label(h));
    }
    for ((start, end, _), hoff) in asm.tries.iter().zip(handler_offsets) {
        let s = label(start);
        out.extend_from_slice(&s.to_le_bytes());
        out.extend_from_slice(&((label(end) - s) as u16).to_le_bytes());
        out.extend_from_slice(&hoff.to_le_bytes());
    }
    out.extend_from_slice(&handlers);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dex::parser::DexFile;

    #[test]
    fn built_file_parses_back() {
        let mut b = DexBuilder::new();
        let to_string = MethodSig::new("Ljava/lang/Object;", "toString", "Ljava/lang/String;", &[]);
        b.class("Lcom/x/A;").method(
            "f",
            "Ljava/lang/String;",
            &["I"],
            Asm::new(3)
                .const_string(0, "hello")
                .invoke_virtual(&[0], &to_string)
                .move_result_object(1)
                .return_object(1),
        );
        b.class("Lcom/x/B;").superclass("Lcom/x/A;");
        let bytes = b.build();
        let dex = DexFile::parse(&bytes).unwrap();
        assert_eq!(dex.version, "035");
        assert_eq!(dex.classes.len(), 2);
        let a = dex.classes.iter().find(|c| dex.class_name(c) == "Lcom/x/A;").unwrap();
        let code = a.methods[0].code.as_ref().unwrap();
        assert_eq!((code.registers, code.ins, code.outs), (3, 2, 1));
        let m = dex.method_ref(a.methods[0].method_idx).unwrap();
        assert_eq!((m.name, m.return_type, m.params.clone()), ("f", "Ljava/lang/String;", vec!["I"]));
        let b_def = dex.classes.iter().find(|c| dex.class_name(c) == "Lcom/x/B;").unwrap();
        assert_eq!(dex.superclass_name(b_def), Some("Lcom/x/A;"));
        // checksum covers everything after the checksum field
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), adler32(&bytes[12..]));
    }

    #[test]
    fn strings_are_sorted() {
        let mut b = DexBuilder::new();
        b.class("Lz/Z;").method("m", "V", &[], Asm::new(1).const_string(0, "b").const_string(0, "a").return_void());
        let dex = DexFile::parse(&b.build()).unwrap();
        let mut sorted = dex.strings.clone();
        sorted.sort_by_key(|s| utf16_key(s));
        assert_eq!(dex.strings, sorted);
    }

    #[test]
    fn tries_round_trip() {
        let mut b = DexBuilder::new();
        b.class("La/T;").method(
            "m",
            "V",
            &[],
            Asm::new(1)
                .label("start")
                .const_string(0, "x")
                .label("end")
                .return_void()
                .label("handler")
                .move_exception(0)
                .return_void()
                .try_catch_all("start", "end", "handler"),
        );
        let dex = DexFile::parse(&b.build()).unwrap();
        let code = dex.classes[0].methods[0].code.as_ref().unwrap();
        assert_eq!(code.tries.len(), 1);
        assert_eq!((code.tries[0].start, code.tries[0].count), (0, 2));
        assert_eq!(code.tries[0].handlers, vec![3]);
    }
}
