//! Binary XML (AXML) chunk reader and writer.
//!
//! Layout: a file chunk (type 0x0003) wrapping a string pool (0x0001), an
//! optional resource-id map (0x0180) and a flat stream of namespace and
//! element start/end nodes. Every chunk starts with
//! `type: u16, header_size: u16, size: u32`, little-endian.

use std::collections::HashMap;

use super::xml::{name_for_resource_id, resource_id_for, AttrValue, Attribute, Element, ANDROID_NS};
use super::ManifestError;

const RES_STRING_POOL: u16 = 0x0001;
const RES_XML: u16 = 0x0003;
const RES_XML_START_NAMESPACE: u16 = 0x0100;
const RES_XML_END_NAMESPACE: u16 = 0x0101;
const RES_XML_START_ELEMENT: u16 = 0x0102;
const RES_XML_END_ELEMENT: u16 = 0x0103;
const RES_XML_CDATA: u16 = 0x0104;
const RES_XML_RESOURCE_MAP: u16 = 0x0180;

const UTF8_FLAG: u32 = 0x100;
const NO_INDEX: u32 = 0xffff_ffff;

const TYPE_NULL: u8 = 0x00;
const TYPE_REFERENCE: u8 = 0x01;
const TYPE_STRING: u8 = 0x03;
const TYPE_FLOAT: u8 = 0x04;
const TYPE_INT_DEC: u8 = 0x10;
const TYPE_INT_HEX: u8 = 0x11;
const TYPE_INT_BOOLEAN: u8 = 0x12;

fn malformed(msg: impl Into<String>) -> ManifestError {
    ManifestError::MalformedManifest(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn u8(&self, at: usize) -> Result<u8, ManifestError> {
        self.buf
            .get(at)
            .copied()
            .ok_or_else(|| malformed(format!("truncated at offset {at}")))
    }

    fn u16(&self, at: usize) -> Result<u16, ManifestError> {
        let b = self
            .buf
            .get(at..at + 2)
            .ok_or_else(|| malformed(format!("truncated at offset {at}")))?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&self, at: usize) -> Result<u32, ManifestError> {
        let b = self
            .buf
            .get(at..at + 4)
            .ok_or_else(|| malformed(format!("truncated at offset {at}")))?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[derive(Debug, Clone, Copy)]
struct ChunkHeader {
    kind: u16,
    header_size: u16,
    size: u32,
}

fn chunk_header(r: &Reader<'_>, at: usize) -> Result<ChunkHeader, ManifestError> {
    let h = ChunkHeader {
        kind: r.u16(at)?,
        header_size: r.u16(at + 2)?,
        size: r.u32(at + 4)?,
    };
    if h.header_size < 8 || h.size < u32::from(h.header_size) {
        return Err(malformed(format!(
            "bad chunk header at offset {at}: header {} size {}",
            h.header_size, h.size
        )));
    }
    if at + h.size as usize > r.buf.len() {
        return Err(malformed(format!("chunk at offset {at} runs past end of input")));
    }
    Ok(h)
}

/// True when `bytes` begins with a plausible AXML file chunk header.
pub fn looks_like_axml(bytes: &[u8]) -> bool {
    if bytes.len() < 8 {
        return false;
    }
    let r = Reader { buf: bytes };
    matches!(
        (r.u16(0), r.u16(2), r.u32(4)),
        (Ok(RES_XML), Ok(8), Ok(size)) if size as usize >= 8 && size as usize <= bytes.len()
    )
}

fn read_string_pool(r: &Reader<'_>, at: usize, h: ChunkHeader) -> Result<Vec<String>, ManifestError> {
    if h.header_size < 28 {
        return Err(malformed("string pool header too short"));
    }
    let count = r.u32(at + 8)? as usize;
    let flags = r.u32(at + 16)?;
    let strings_start = r.u32(at + 20)? as usize;
    let end = at + h.size as usize;
    let offsets_at = at + h.header_size as usize;
    if offsets_at + count * 4 > end {
        return Err(malformed("string pool offsets run past chunk"));
    }
    let data = at + strings_start;
    let utf8 = flags & UTF8_FLAG != 0;
    (0..count)
        .map(|i| {
            let start = data + r.u32(offsets_at + i * 4)? as usize;
            if start >= end {
                return Err(malformed(format!("string {i} offset outside pool")));
            }
            let pool = Reader { buf: &r.buf[..end] };
            if utf8 {
                read_utf8(&pool, start)
            } else {
                read_utf16(&pool, start)
            }
        })
        .collect()
}

fn read_utf8(r: &Reader<'_>, mut at: usize) -> Result<String, ManifestError> {
    // utf-16 length first (skipped), then byte length; both 1 or 2 byte varints
    at += if r.u8(at)? & 0x80 != 0 { 2 } else { 1 };
    let b = r.u8(at)?;
    let len = if b & 0x80 != 0 {
        let len = (usize::from(b & 0x7f) << 8) | usize::from(r.u8(at + 1)?);
        at += 2;
        len
    } else {
        at += 1;
        usize::from(b)
    };
    let bytes = r
        .buf
        .get(at..at + len)
        .ok_or_else(|| malformed("utf-8 string runs past pool"))?;
    Ok(String::from_utf8_lossy(bytes).into_owned())
}

fn read_utf16(r: &Reader<'_>, mut at: usize) -> Result<String, ManifestError> {
    let first = r.u16(at)?;
    at += 2;
    let len = if first & 0x8000 != 0 {
        let len = (usize::from(first & 0x7fff) << 16) | usize::from(r.u16(at)?);
        at += 2;
        len
    } else {
        usize::from(first)
    };
    let units = (0..len)
        .map(|i| r.u16(at + i * 2))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(String::from_utf16_lossy(&units))
}

/// Decodes a binary manifest into an element tree.
pub fn decode_axml(bytes: &[u8]) -> Result<Element, ManifestError> {
    if bytes.is_empty() {
        return Err(malformed("empty input"));
    }
    let r = Reader { buf: bytes };
    let file = chunk_header(&r, 0)?;
    if file.kind != RES_XML {
        return Err(malformed(format!("expected xml chunk, found type {:#06x}", file.kind)));
    }

    let mut strings: Vec<String> = Vec::new();
    let mut resource_ids: Vec<u32> = Vec::new();
    let mut stack: Vec<Element> = Vec::new();
    let mut root: Option<Element> = None;

    let string_at = |strings: &[String], idx: u32| -> Result<String, ManifestError> {
        strings
            .get(idx as usize)
            .cloned()
            .ok_or_else(|| malformed(format!("string index {idx} out of range")))
    };
    let opt_string_at = |strings: &[String], idx: u32| -> Result<Option<String>, ManifestError> {
        if idx == NO_INDEX {
            Ok(None)
        } else {
            string_at(strings, idx).map(Some)
        }
    };

    let end = file.size as usize;
    let mut at = usize::from(file.header_size);
    while at < end {
        let h = chunk_header(&Reader { buf: &bytes[..end] }, at)?;
        let ext = at + usize::from(h.header_size);
        match h.kind {
            RES_STRING_POOL => strings = read_string_pool(&r, at, h)?,
            RES_XML_RESOURCE_MAP => {
                let n = (h.size as usize - usize::from(h.header_size)) / 4;
                resource_ids = (0..n).map(|i| r.u32(ext + i * 4)).collect::<Result<_, _>>()?;
            }
            RES_XML_START_NAMESPACE | RES_XML_END_NAMESPACE | RES_XML_CDATA => {}
            RES_XML_START_ELEMENT => {
                if root.is_some() {
                    return Err(malformed("content after root element closed"));
                }
                let namespace = opt_string_at(&strings, r.u32(ext)?)?;
                let tag = string_at(&strings, r.u32(ext + 4)?)?;
                let attr_start = usize::from(r.u16(ext + 8)?);
                let attr_size = usize::from(r.u16(ext + 10)?);
                let attr_count = usize::from(r.u16(ext + 12)?);
                if attr_size < 20 {
                    return Err(malformed("attribute record shorter than 20 bytes"));
                }
                if ext + attr_start + attr_count * attr_size > at + h.size as usize {
                    return Err(malformed("attributes run past element chunk"));
                }
                let mut attributes = Vec::with_capacity(attr_count);
                for i in 0..attr_count {
                    let a = ext + attr_start + i * attr_size;
                    let ns = opt_string_at(&strings, r.u32(a)?)?;
                    let name_idx = r.u32(a + 4)?;
                    let mut name = string_at(&strings, name_idx)?;
                    let resource_id = resource_ids.get(name_idx as usize).copied();
                    if name.is_empty() {
                        if let Some(known) = resource_id.and_then(name_for_resource_id) {
                            name = known.to_string();
                        }
                    }
                    let raw = r.u32(a + 8)?;
                    let data_type = r.u8(a + 15)?;
                    let data = r.u32(a + 16)?;
                    let value = match data_type {
                        TYPE_STRING => {
                            let idx = if raw != NO_INDEX { raw } else { data };
                            AttrValue::String(string_at(&strings, idx)?)
                        }
                        TYPE_INT_BOOLEAN => AttrValue::Bool(data != 0),
                        TYPE_INT_DEC => AttrValue::Int(data as i32),
                        TYPE_INT_HEX => AttrValue::Hex(data),
                        TYPE_REFERENCE => AttrValue::Reference(data),
                        TYPE_FLOAT => AttrValue::Float(f32::from_bits(data)),
                        TYPE_NULL if raw != NO_INDEX => AttrValue::String(string_at(&strings, raw)?),
                        other => AttrValue::Other { data_type: other, data },
                    };
                    attributes.push(Attribute {
                        namespace: ns,
                        name,
                        resource_id,
                        value,
                    });
                }
                stack.push(Element {
                    namespace,
                    tag,
                    attributes,
                    children: Vec::new(),
                });
            }
            RES_XML_END_ELEMENT => {
                let tag = string_at(&strings, r.u32(ext + 4)?)?;
                let done = stack.pop().ok_or_else(|| malformed(format!("unmatched end tag {tag}")))?;
                if done.tag != tag {
                    return Err(malformed(format!("end tag {tag} closes {}", done.tag)));
                }
                match stack.last_mut() {
                    Some(parent) => parent.children.push(done),
                    None => root = Some(done),
                }
            }
            // unknown chunk types are skipped by size, as the platform does
            _ => {}
        }
        at += h.size as usize;
    }
    if !stack.is_empty() {
        return Err(malformed(format!("{} element(s) left open", stack.len())));
    }
    root.ok_or_else(|| malformed("no root element"))
}

/// Interns strings in first-use order, with resource-id-bearing attribute
/// names placed first so the resource map lines up with the pool.
struct Pool {
    strings: Vec<String>,
    index: HashMap<String, u32>,
}

impl Pool {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        let i = self.strings.len() as u32;
        self.strings.push(s.to_string());
        self.index.insert(s.to_string(), i);
        i
    }
}

fn collect_resource_names(e: &Element, out: &mut Vec<(String, u32)>) {
    for a in &e.attributes {
        let id = a.resource_id.or_else(|| {
            (a.namespace.as_deref() == Some(ANDROID_NS))
                .then(|| resource_id_for(&a.name))
                .flatten()
        });
        if let Some(id) = id {
            if !out.iter().any(|(n, _)| *n == a.name) {
                out.push((a.name.clone(), id));
            }
        }
    }
    e.children.iter().for_each(|c| collect_resource_names(c, out));
}

fn collect_namespaces(e: &Element, out: &mut Vec<String>) {
    for ns in e
        .attributes
        .iter()
        .filter_map(|a| a.namespace.as_ref())
        .chain(e.namespace.as_ref())
    {
        if !out.contains(ns) {
            out.push(ns.clone());
        }
    }
    e.children.iter().for_each(|c| collect_namespaces(c, out));
}

fn push_header(out: &mut Vec<u8>, kind: u16, header_size: u16, size: u32) {
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&header_size.to_le_bytes());
    out.extend_from_slice(&size.to_le_bytes());
}

fn encode_value(pool: &mut Pool, value: &AttrValue) -> (u32, u8, u32) {
    match value {
        AttrValue::String(s) => {
            let i = pool.intern(s);
            (i, TYPE_STRING, i)
        }
        AttrValue::Bool(b) => (NO_INDEX, TYPE_INT_BOOLEAN, if *b { 0xffff_ffff } else { 0 }),
        AttrValue::Int(i) => (NO_INDEX, TYPE_INT_DEC, *i as u32),
        AttrValue::Hex(h) => (NO_INDEX, TYPE_INT_HEX, *h),
        AttrValue::Reference(r) => (NO_INDEX, TYPE_REFERENCE, *r),
        AttrValue::Float(f) => (NO_INDEX, TYPE_FLOAT, f.to_bits()),
        AttrValue::Other { data_type, data } => (NO_INDEX, *data_type, *data),
    }
}

fn intern_tree(pool: &mut Pool, e: &Element) {
    if let Some(ns) = &e.namespace {
        pool.intern(ns);
    }
    pool.intern(&e.tag);
    for a in &e.attributes {
        pool.intern(&a.name);
        if let AttrValue::String(s) = &a.value {
            pool.intern(s);
        }
    }
    e.children.iter().for_each(|c| intern_tree(pool, c));
}

fn write_element(pool: &mut Pool, e: &Element, line: &mut u32, out: &mut Vec<u8>) {
    let ns = e.namespace.as_deref().map_or(NO_INDEX, |n| pool.intern(n));
    let name = pool.intern(&e.tag);
    let attr_count = e.attributes.len();
    let size = 16 + 20 + 20 * attr_count as u32;
    *line += 1;
    push_header(out, RES_XML_START_ELEMENT, 16, size);
    out.extend_from_slice(&line.to_le_bytes());
    out.extend_from_slice(&NO_INDEX.to_le_bytes());
    out.extend_from_slice(&ns.to_le_bytes());
    out.extend_from_slice(&name.to_le_bytes());
    out.extend_from_slice(&20u16.to_le_bytes()); // attribute start
    out.extend_from_slice(&20u16.to_le_bytes()); // attribute size
    out.extend_from_slice(&(attr_count as u16).to_le_bytes());
    out.extend_from_slice(&[0; 6]); // id, class, style indices
    for a in &e.attributes {
        let ans = a.namespace.as_deref().map_or(NO_INDEX, |n| pool.intern(n));
        let aname = pool.intern(&a.name);
        let (raw, data_type, data) = encode_value(pool, &a.value);
        out.extend_from_slice(&ans.to_le_bytes());
        out.extend_from_slice(&aname.to_le_bytes());
        out.extend_from_slice(&raw.to_le_bytes());
        out.extend_from_slice(&8u16.to_le_bytes());
        out.push(0);
        out.push(data_type);
        out.extend_from_slice(&data.to_le_bytes());
    }
    for c in &e.children {
        write_element(pool, c, line, out);
    }
    *line += 1;
    push_header(out, RES_XML_END_ELEMENT, 16, 24);
    out.extend_from_slice(&line.to_le_bytes());
    out.extend_from_slice(&NO_INDEX.to_le_bytes());
    out.extend_from_slice(&ns.to_le_bytes());
    out.extend_from_slice(&name.to_le_bytes());
}

fn string_pool_chunk(strings: &[String]) -> Vec<u8> {
    let mut offsets = Vec::with_capacity(strings.len());
    let mut data = Vec::new();
    for s in strings {
        offsets.push(data.len() as u32);
        let units: Vec<u16> = s.encode_utf16().collect();
        if units.len() > 0x7fff {
            let len = units.len() as u32;
            data.extend_from_slice(&(((len >> 16) as u16) | 0x8000).to_le_bytes());
            data.extend_from_slice(&(len as u16).to_le_bytes());
        } else {
            data.extend_from_slice(&(units.len() as u16).to_le_bytes());
        }
        units.iter().for_each(|u| data.extend_from_slice(&u.to_le_bytes()));
        data.extend_from_slice(&[0, 0]);
    }
    while data.len() % 4 != 0 {
        data.push(0);
    }
    let header_size = 28u32;
    let strings_start = header_size + 4 * strings.len() as u32;
    let size = strings_start + data.len() as u32;
    let mut out = Vec::with_capacity(size as usize);
    push_header(&mut out, RES_STRING_POOL, header_size as u16, size);
    out.extend_from_slice(&(strings.len() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes()); // style count
    out.extend_from_slice(&0u32.to_le_bytes()); // flags: utf-16, unsorted
    out.extend_from_slice(&strings_start.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes()); // styles start
    offsets.iter().for_each(|o| out.extend_from_slice(&o.to_le_bytes()));
    out.extend_from_slice(&data);
    out
}

fn ns_prefix(uri: &str, n: usize) -> String {
    if uri == ANDROID_NS {
        "android".to_string()
    } else {
        format!("ns{n}")
    }
}

/// Encodes an element tree the way aapt lays out a compiled manifest.
pub fn encode_axml(root: &Element) -> Vec<u8> {
    let mut pool = Pool {
        strings: Vec::new(),
        index: HashMap::new(),
    };
    let mut res_names = Vec::new();
    collect_resource_names(root, &mut res_names);
    for (name, _) in &res_names {
        pool.intern(name);
    }
    let mut namespaces = Vec::new();
    collect_namespaces(root, &mut namespaces);
    let prefixes: Vec<(u32, u32)> = namespaces
        .iter()
        .enumerate()
        .map(|(n, uri)| (pool.intern(&ns_prefix(uri, n)), pool.intern(uri)))
        .collect();
    intern_tree(&mut pool, root);

    let mut body = Vec::new();
    let mut line = 0u32;
    for &(prefix, uri) in &prefixes {
        push_header(&mut body, RES_XML_START_NAMESPACE, 16, 24);
        body.extend_from_slice(&1u32.to_le_bytes());
        body.extend_from_slice(&NO_INDEX.to_le_bytes());
        body.extend_from_slice(&prefix.to_le_bytes());
        body.extend_from_slice(&uri.to_le_bytes());
    }
    write_element(&mut pool, root, &mut line, &mut body);
    for &(prefix, uri) in prefixes.iter().rev() {
        push_header(&mut body, RES_XML_END_NAMESPACE, 16, 24);
        body.extend_from_slice(&line.to_le_bytes());
        body.extend_from_slice(&NO_INDEX.to_le_bytes());
        body.extend_from_slice(&prefix.to_le_bytes());
        body.extend_from_slice(&uri.to_le_bytes());
    }

    let pool_chunk = string_pool_chunk(&pool.strings);
    let mut resmap = Vec::new();
    if !res_names.is_empty() {
        push_header(&mut resmap, RES_XML_RESOURCE_MAP, 8, 8 + 4 * res_names.len() as u32);
        res_names.iter().for_each(|(_, id)| resmap.extend_from_slice(&id.to_le_bytes()));
    }

    let total = 8 + pool_chunk.len() + resmap.len() + body.len();
    let mut out = Vec::with_capacity(total);
    push_header(&mut out, RES_XML, 8, total as u32);
    out.extend_from_slice(&pool_chunk);
    out.extend_from_slice(&resmap);
    out.extend_from_slice(&body);
    out
}
