//! DEX inspection: ContentResolver call sites with constant-propagated
//! authorities, provider column constants, and SDK attribution.

pub mod builder;
pub mod dataflow;
pub mod insn;
pub mod parser;

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parser::{descriptor_to_java, java_to_descriptor, DexFile};

use dataflow::{propagate, successors, Val};
use insn::{decode, Insn};
use parser::{ClassDef, CodeItem};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DexError {
    #[error("malformed dex: {0}")]
    Malformed(String),
    #[error("class not found: {0}")]
    ClassNotFound(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Query,
    Insert,
    Update,
    Delete,
    Call,
}

impl OpKind {
    pub fn from_method(name: &str) -> Option<OpKind> {
        Some(match name {
            "query" => OpKind::Query,
            "insert" => OpKind::Insert,
            "update" => OpKind::Update,
            "delete" => OpKind::Delete,
            "call" => OpKind::Call,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribution {
    AppCore,
    ThirdParty,
    Unclassified,
}

impl Attribution {
    pub fn as_str(self) -> &'static str {
        match self {
            Attribution::AppCore => "app_core",
            Attribution::ThirdParty => "third_party",
            Attribution::Unclassified => "unclassified",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSite {
    pub declaring_class: String,
    pub method_name: String,
    pub op_kind: OpKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub resolved_authority: Option<String>,
    pub attribution: Attribution,
    /// Code-unit offset of the invoke within its method.
    pub offset: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoreKind {
    #[serde(rename = "sqlite")]
    Sqlite,
    #[serde(rename = "file")]
    File,
    #[serde(rename = "none-detected")]
    NoneDetected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderSensitivity {
    pub provider_class: String,
    pub column_constants: BTreeSet<String>,
    pub store_kind: StoreKind,
}

/// Result of scanning a DEX set. Files that fail to parse are reported
/// by index and contribute no call sites.
#[derive(Debug, Clone, Default)]
pub struct CallSiteScan {
    pub call_sites: Vec<CallSite>,
    pub failures: Vec<(usize, DexError)>,
}

const RESOLVER: &str = "Landroid/content/ContentResolver;";

/// Superclass links across every parsed file of the set.
fn hierarchy<'a>(dexes: impl IntoIterator<Item = &'a DexFile>) -> HashMap<String, String> {
    let mut map = HashMap::new();
    for dex in dexes {
        for class in &dex.classes {
            if let Some(sup) = dex.superclass_name(class) {
                map.insert(dex.class_name(class).to_string(), sup.to_string());
            }
        }
    }
    map
}

fn is_resolver(desc: &str, supers: &HashMap<String, String>) -> bool {
    let mut cur = desc;
    for _ in 0..64 {
        if cur == RESOLVER || cur.ends_with("ContentResolver;") {
            return true;
        }
        match supers.get(cur) {
            Some(s) => cur = s,
            None => return false,
        }
    }
    false
}

/// Authority part of a `content://` URI string.
pub fn authority_from_uri(uri: &str) -> Option<String> {
    let rest = uri.trim();
    let rest = rest.get(..10).filter(|p| p.eq_ignore_ascii_case("content://")).map(|_| &rest[10..])?;
    normalize_authority(rest)
}

fn normalize_authority(text: &str) -> Option<String> {
    let text = text.strip_prefix("content://").unwrap_or(text);
    let end = text.find(['/', '?', '#']).unwrap_or(text.len());
    let auth = text[..end].trim();
    (!auth.is_empty()).then(|| auth.to_string())
}

/// Authority reaching the URI argument of a resolver invocation, when
/// every contributing value is a local constant.
pub fn resolve_authority(dex: &DexFile, code: &CodeItem, insns: &[Insn], site: usize) -> Option<String> {
    let insn = insns.get(site)?;
    let prop = propagate(dex, insns, &code.insns, &code.tries, usize::from(code.registers));
    site_authority(dex, insn, prop.states.get(site)?.as_ref()?)
}

fn site_authority(dex: &DexFile, insn: &Insn, state: &dataflow::State) -> Option<String> {
    let m = dex.method_ref(insn.index)?;
    let is_static = matches!(insn.opcode, 0x71 | 0x77);
    let uri_arg = *insn.args.get(if is_static { 0 } else { 1 })?;
    match (m.params.first().copied(), state.reg(uri_arg)) {
        (Some("Landroid/net/Uri;"), Val::Uri(u)) => authority_from_uri(u),
        (Some("Ljava/lang/String;"), _) if m.name == "call" => state.string_of(uri_arg).and_then(|s| normalize_authority(&s)),
        _ => None,
    }
}

fn scan_one(dex: &DexFile, supers: &HashMap<String, String>, out: &mut Vec<CallSite>) -> Result<(), DexError> {
    for class in &dex.classes {
        let class_name = descriptor_to_java(dex.class_name(class));
        for method in &class.methods {
            let Some(code) = &method.code else { continue };
            let insns = decode(&code.insns)?;
            let sites: Vec<(usize, OpKind)> = insns
                .iter()
                .enumerate()
                .filter(|(_, n)| n.is_invoke())
                .filter_map(|(i, n)| {
                    let m = dex.method_ref(n.index)?;
                    let kind = OpKind::from_method(m.name)?;
                    is_resolver(m.class, supers).then_some((i, kind))
                })
                .collect();
            if sites.is_empty() {
                continue;
            }
            let method_name = dex
                .method_ref(method.method_idx)
                .map(|m| m.name.to_string())
                .unwrap_or_default();
            let prop = propagate(dex, &insns, &code.insns, &code.tries, usize::from(code.registers));
            for (i, kind) in sites {
                let insn = &insns[i];
                let authority = prop.states[i].as_ref().and_then(|st| site_authority(dex, insn, st));
                out.push(CallSite {
                    declaring_class: class_name.clone(),
                    method_name: method_name.clone(),
                    op_kind: kind,
                    resolved_authority: authority,
                    attribution: Attribution::Unclassified,
                    offset: insn.offset,
                });
            }
        }
    }
    Ok(())
}

/// Finds ContentResolver query/insert/update/delete/call invocations.
/// Sites come back sorted by (class, method, offset) with attribution
/// left unclassified; see [`attribute_call_site`].
pub fn scan_call_sites<B: AsRef<[u8]>>(dex_files: &[B]) -> CallSiteScan {
    let mut scan = CallSiteScan::default();
    let mut parsed = Vec::new();
    for (i, bytes) in dex_files.iter().enumerate() {
        match DexFile::parse(bytes.as_ref()) {
            Ok(d) => parsed.push((i, d)),
            Err(e) => scan.failures.push((i, e)),
        }
    }
    let supers = hierarchy(parsed.iter().map(|(_, d)| d));
    for (i, dex) in &parsed {
        let mut sites = Vec::new();
        match scan_one(dex, &supers, &mut sites) {
            Ok(()) => scan.call_sites.extend(sites),
            Err(e) => scan.failures.push((*i, e)),
        }
    }
    scan.failures.sort_by_key(|(i, _)| *i);
    scan.call_sites.sort_by(|a, b| {
        (&a.declaring_class, &a.method_name, a.offset).cmp(&(&b.declaring_class, &b.method_name, b.offset))
    });
    scan
}

/// Labels a declaring class as app code, a listed SDK, or neither.
pub fn attribute_call_site<S: AsRef<str>>(declaring_class: &str, app_package: &str, sdk_prefixes: &[S]) -> Attribution {
    if !app_package.is_empty() && declaring_class.starts_with(&format!("{app_package}.")) {
        return Attribution::AppCore;
    }
    let under = |prefix: &str| {
        let prefix = prefix.trim_end_matches('.');
        !prefix.is_empty()
            && declaring_class.starts_with(prefix)
            && matches!(declaring_class.as_bytes().get(prefix.len()), None | Some(b'.') | Some(b'$'))
    };
    if sdk_prefixes.iter().any(|p| under(p.as_ref())) {
        Attribution::ThirdParty
    } else {
        Attribution::Unclassified
    }
}

pub const DEFAULT_SDK_PREFIXES: &str = include_str!("../../data/sdk_prefixes.txt");

/// Parses a prefix list: one package prefix per line, `#` comments.
pub fn parse_sdk_prefixes(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn default_sdk_prefixes() -> Vec<String> {
    parse_sdk_prefixes(DEFAULT_SDK_PREFIXES)
}

fn is_sqlite_call(class: &str, name: &str) -> bool {
    class.starts_with("Landroid/database/sqlite/")
        || class.starts_with("Landroidx/sqlite/")
        || class.starts_with("Lnet/sqlcipher/")
        || matches!(name, "getReadableDatabase" | "getWritableDatabase" | "rawQuery")
}

fn is_file_call(class: &str, name: &str) -> bool {
    matches!(
        class,
        "Ljava/io/FileInputStream;"
            | "Ljava/io/FileReader;"
            | "Ljava/io/File;"
            | "Ljava/io/BufferedReader;"
            | "Ljava/io/RandomAccessFile;"
            | "Landroid/os/ParcelFileDescriptor;"
            | "Ljava/nio/file/Files;"
            | "Landroid/content/SharedPreferences;"
    ) || matches!(name, "openFileInput" | "getSharedPreferences")
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Default)]
struct Evidence {
    strings: BTreeSet<String>,
    sqlite: bool,
    file: bool,
}

impl Evidence {
    fn note(&mut self, dex: &DexFile, insn: &Insn) {
        match insn.opcode {
            0x1a | 0x1b => {
                if let Some(s) = dex.string(insn.index).filter(|s| is_identifier(s)) {
                    self.strings.insert(s.to_string());
                }
            }
            0x22 => {
                let ty = dex.type_name(insn.index);
                self.sqlite |= is_sqlite_call(ty, "");
                self.file |= is_file_call(ty, "");
            }
            _ if insn.is_invoke() => {
                if let Some(m) = dex.method_ref(insn.index) {
                    self.sqlite |= is_sqlite_call(m.class, m.name);
                    self.file |= is_file_call(m.class, m.name);
                }
            }
            _ => {}
        }
    }
}

/// Indices of instructions from which a non-null `return-object` is reachable.
fn return_path(dex: &DexFile, code: &CodeItem, insns: &[Insn]) -> Vec<usize> {
    let prop = propagate(dex, insns, &code.insns, &code.tries, usize::from(code.registers));
    let index_of: HashMap<u32, usize> = insns.iter().enumerate().map(|(i, n)| (n.offset, i)).collect();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); insns.len()];
    for i in 0..insns.len() {
        if prop.states[i].is_none() {
            continue;
        }
        for s in successors(insns, &code.insns, &code.tries, &index_of, i) {
            preds[s].push(i);
        }
    }
    let mut seen = vec![false; insns.len()];
    let mut stack: Vec<usize> = insns
        .iter()
        .enumerate()
        .filter(|(i, n)| {
            n.opcode == 0x11 && prop.states[*i].as_ref().is_some_and(|st| *st.reg(n.a) != Val::Null)
        })
        .map(|(i, _)| i)
        .collect();
    while let Some(i) = stack.pop() {
        if std::mem::replace(&mut seen[i], true) {
            continue;
        }
        stack.extend(preds[i].iter().copied().filter(|&p| !seen[p]));
    }
    (0..insns.len()).filter(|&i| seen[i]).collect()
}

fn find_class<'a>(dexes: &'a [DexFile], desc: &str) -> Option<(&'a DexFile, &'a ClassDef)> {
    dexes
        .iter()
        .find_map(|d| d.classes.iter().find(|c| d.class_name(c) == desc).map(|c| (d, c)))
}

/// Column-like string constants on the return paths of a provider's
/// `query` implementation, following calls into the same class.
pub fn extract_provider_columns<B: AsRef<[u8]>>(dex_files: &[B], provider_class: &str) -> Result<ProviderSensitivity, DexError> {
    let dexes: Vec<DexFile> = dex_files
        .iter()
        .filter_map(|b| DexFile::parse(b.as_ref()).ok())
        .collect();
    let desc = java_to_descriptor(provider_class);
    let (dex, class) = find_class(&dexes, &desc).ok_or_else(|| DexError::ClassNotFound(provider_class.to_string()))?;

    let mut ev = Evidence::default();
    let mut visited: HashSet<u32> = HashSet::new();
    let mut callees: Vec<u32> = Vec::new();
    for method in &class.methods {
        let Some(m) = dex.method_ref(method.method_idx) else { continue };
        if m.name != "query" || m.return_type != "Landroid/database/Cursor;" {
            continue;
        }
        let Some(code) = &method.code else { continue };
        visited.insert(method.method_idx);
        let insns = decode(&code.insns)?;
        for i in return_path(dex, code, &insns) {
            ev.note(dex, &insns[i]);
            if insns[i].is_invoke() {
                callees.push(insns[i].index);
            }
        }
    }
    while let Some(idx) = callees.pop() {
        if !visited.insert(idx) {
            continue;
        }
        let Some(target) = dex.method_ref(idx) else { continue };
        if target.class != desc {
            continue;
        }
        let body = class.methods.iter().find(|em| {
            dex.method_ref(em.method_idx)
                .is_some_and(|r| r.name == target.name && r.params == target.params && r.return_type == target.return_type)
        });
        let Some(code) = body.and_then(|em| em.code.as_ref()) else { continue };
        for insn in decode(&code.insns)? {
            ev.note(dex, &insn);
            if insn.is_invoke() {
                callees.push(insn.index);
            }
        }
    }

    let store_kind = if ev.sqlite {
        StoreKind::Sqlite
    } else if ev.file {
        StoreKind::File
    } else {
        StoreKind::NoneDetected
    };
    Ok(ProviderSensitivity {
        provider_class: provider_class.to_string(),
        column_constants: ev.strings,
        store_kind,
    })
}
