//! DEX container parsing: id tables, class definitions and code items.

use super::DexError;

pub const NO_INDEX: u32 = 0xffff_ffff;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtoId {
    pub shorty: u32,
    pub return_type: u32,
    pub params: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodId {
    pub class_idx: u32,
    pub proto_idx: u32,
    pub name_idx: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TryBlock {
    pub start: u32,
    pub count: u32,
    /// Handler addresses, typed handlers first, catch-all last.
    pub handlers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeItem {
    pub registers: u16,
    pub ins: u16,
    pub outs: u16,
    pub insns: Vec<u16>,
    pub tries: Vec<TryBlock>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedMethod {
    pub method_idx: u32,
    pub access_flags: u32,
    pub code: Option<CodeItem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDef {
    pub class_idx: u32,
    pub access_flags: u32,
    pub superclass_idx: Option<u32>,
    pub methods: Vec<EncodedMethod>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DexFile {
    pub version: String,
    pub strings: Vec<String>,
    pub types: Vec<u32>,
    pub protos: Vec<ProtoId>,
    pub methods: Vec<MethodId>,
    pub classes: Vec<ClassDef>,
}

/// Resolved view of a method reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodRef<'a> {
    pub class: &'a str,
    pub name: &'a str,
    pub return_type: &'a str,
    pub params: Vec<&'a str>,
}

struct Bytes<'a> {
    buf: &'a [u8],
}

impl<'a> Bytes<'a> {
    fn slice(&self, at: usize, len: usize) -> Result<&'a [u8], DexError> {
        at.checked_add(len)
            .and_then(|end| self.buf.get(at..end))
            .ok_or_else(|| DexError::Malformed(format!("read of {len} bytes at {at:#x} out of bounds")))
    }

    fn u16(&self, at: usize) -> Result<u16, DexError> {
        let b = self.slice(at, 2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&self, at: usize) -> Result<u32, DexError> {
        let b = self.slice(at, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn uleb(&self, at: &mut usize) -> Result<u32, DexError> {
        let mut result = 0u32;
        for i in 0..5 {
            let b = *self
                .buf
                .get(*at)
                .ok_or_else(|| DexError::Malformed("uleb128 runs past end".into()))?;
            *at += 1;
            result |= u32::from(b & 0x7f) << (7 * i);
            if b & 0x80 == 0 {
                return Ok(result);
            }
        }
        Err(DexError::Malformed("uleb128 longer than 5 bytes".into()))
    }

    fn sleb(&self, at: &mut usize) -> Result<i32, DexError> {
        let mut result = 0i32;
        let mut shift = 0;
        for _ in 0..5 {
            let b = *self
                .buf
                .get(*at)
                .ok_or_else(|| DexError::Malformed("sleb128 runs past end".into()))?;
            *at += 1;
            result |= i32::from(b & 0x7f) << shift;
            shift += 7;
            if b & 0x80 == 0 {
                if shift < 32 && b & 0x40 != 0 {
                    result |= -1 << shift;
                }
                return Ok(result);
            }
        }
        Err(DexError::Malformed("sleb128 longer than 5 bytes".into()))
    }
}

/// Decodes modified UTF-8 as used by DEX string data.
pub fn decode_mutf8(bytes: &[u8]) -> Result<String, DexError> {
    let mut units: Vec<u16> = Vec::with_capacity(bytes.len());
    let mut i = 0;
    let bad = || DexError::Malformed("invalid MUTF-8 sequence".into());
    while i < bytes.len() {
        let b = bytes[i];
        if b & 0x80 == 0 {
            units.push(u16::from(b));
            i += 1;
        } else if b & 0xe0 == 0xc0 {
            let b2 = *bytes.get(i + 1).ok_or_else(bad)?;
            units.push((u16::from(b & 0x1f) << 6) | u16::from(b2 & 0x3f));
            i += 2;
        } else if b & 0xf0 == 0xe0 {
            let b2 = *bytes.get(i + 1).ok_or_else(bad)?;
            let b3 = *bytes.get(i + 2).ok_or_else(bad)?;
            units.push((u16::from(b & 0x0f) << 12) | (u16::from(b2 & 0x3f) << 6) | u16::from(b3 & 0x3f));
            i += 3;
        } else {
            return Err(bad());
        }
    }
    Ok(String::from_utf16_lossy(&units))
}

/// Encodes a string as modified UTF-8 (no terminator).
pub fn encode_mutf8(s: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(s.len());
    for u in s.encode_utf16() {
        match u {
            0x0001..=0x007f => out.push(u as u8),
            0x0000 | 0x0080..=0x07ff => {
                out.push(0xc0 | ((u >> 6) & 0x1f) as u8);
                out.push(0x80 | (u & 0x3f) as u8);
            }
            _ => {
                out.push(0xe0 | (u >> 12) as u8);
                out.push(0x80 | ((u >> 6) & 0x3f) as u8);
                out.push(0x80 | (u & 0x3f) as u8);
            }
        }
    }
    out
}

pub fn is_dex_magic(bytes: &[u8]) -> bool {
    bytes.len() >= 8
        && &bytes[..4] == b"dex\n"
        && bytes[4..7].iter().all(u8::is_ascii_digit)
        && bytes[7] == 0
}

impl DexFile {
    pub fn parse(buf: &[u8]) -> Result<DexFile, DexError> {
        if buf.len() < 0x70 || !is_dex_magic(buf) {
            return Err(DexError::Malformed("missing dex magic".into()));
        }
        let r = Bytes { buf };
        let version = String::from_utf8_lossy(&buf[4..7]).into_owned();
        let file_size = r.u32(0x20)? as usize;
        if file_size > buf.len() {
            return Err(DexError::Malformed(format!(
                "header file_size {file_size} exceeds {} bytes",
                buf.len()
            )));
        }
        let table = |at: usize| -> Result<(usize, usize), DexError> {
            Ok((r.u32(at)? as usize, r.u32(at + 4)? as usize))
        };
        let (string_n, string_off) = table(0x38)?;
        let (type_n, type_off) = table(0x40)?;
        let (proto_n, proto_off) = table(0x48)?;
        let (method_n, method_off) = table(0x58)?;
        let (class_n, class_off) = table(0x60)?;

        let strings = (0..string_n)
            .map(|i| {
                let mut at = r.u32(string_off + i * 4)? as usize;
                let _utf16_len = r.uleb(&mut at)?;
                let rest = buf
                    .get(at..)
                    .ok_or_else(|| DexError::Malformed(format!("string {i} data out of bounds")))?;
                let end = rest
                    .iter()
                    .position(|&b| b == 0)
                    .ok_or_else(|| DexError::Malformed(format!("string {i} unterminated")))?;
                decode_mutf8(&rest[..end])
            })
            .collect::<Result<Vec<_>, _>>()?;

        let check = |idx: u32, limit: usize, what: &str| -> Result<u32, DexError> {
            if (idx as usize) < limit {
                Ok(idx)
            } else {
                Err(DexError::Malformed(format!("{what} index {idx} out of range")))
            }
        };

        let types = (0..type_n)
            .map(|i| check(r.u32(type_off + i * 4)?, strings.len(), "string"))
            .collect::<Result<Vec<_>, _>>()?;

        let type_list = |off: u32| -> Result<Vec<u32>, DexError> {
            if off == 0 {
                return Ok(Vec::new());
            }
            let at = off as usize;
            let n = r.u32(at)? as usize;
            (0..n)
                .map(|j| check(u32::from(r.u16(at + 4 + j * 2)?), types.len(), "type"))
                .collect()
        };

        let protos = (0..proto_n)
            .map(|i| {
                let at = proto_off + i * 12;
                Ok(ProtoId {
                    shorty: check(r.u32(at)?, strings.len(), "string")?,
                    return_type: check(r.u32(at + 4)?, types.len(), "type")?,
                    params: type_list(r.u32(at + 8)?)?,
                })
            })
            .collect::<Result<Vec<_>, DexError>>()?;

        let methods = (0..method_n)
            .map(|i| {
                let at = method_off + i * 8;
                Ok(MethodId {
                    class_idx: check(u32::from(r.u16(at)?), types.len(), "type")?,
                    proto_idx: check(u32::from(r.u16(at + 2)?), protos.len(), "proto")?,
                    name_idx: check(r.u32(at + 4)?, strings.len(), "string")?,
                })
            })
            .collect::<Result<Vec<_>, DexError>>()?;

        let mut classes = Vec::with_capacity(class_n);
        for i in 0..class_n {
            let at = class_off + i * 32;
            let class_idx = check(r.u32(at)?, types.len(), "type")?;
            let access_flags = r.u32(at + 4)?;
            let superclass = r.u32(at + 8)?;
            let superclass_idx = if superclass == NO_INDEX {
                None
            } else {
                Some(check(superclass, types.len(), "type")?)
            };
            let class_data_off = r.u32(at + 24)? as usize;
            let methods = if class_data_off == 0 {
                Vec::new()
            } else {
                parse_class_data(&r, class_data_off, methods.len())?
            };
            classes.push(ClassDef {
                class_idx,
                access_flags,
                superclass_idx,
                methods,
            });
        }

        Ok(DexFile {
            version,
            strings,
            types,
            protos,
            methods,
            classes,
        })
    }

    pub fn type_name(&self, type_idx: u32) -> &str {
        &self.strings[self.types[type_idx as usize] as usize]
    }

    pub fn method_ref(&self, method_idx: u32) -> Option<MethodRef<'_>> {
        let m = self.methods.get(method_idx as usize)?;
        let proto = &self.protos[m.proto_idx as usize];
        Some(MethodRef {
            class: self.type_name(m.class_idx),
            name: &self.strings[m.name_idx as usize],
            return_type: self.type_name(proto.return_type),
            params: proto.params.iter().map(|&t| self.type_name(t)).collect(),
        })
    }

    pub fn string(&self, idx: u32) -> Option<&str> {
        self.strings.get(idx as usize).map(String::as_str)
    }

    pub fn class_name(&self, class: &ClassDef) -> &str {
        self.type_name(class.class_idx)
    }

    pub fn superclass_name(&self, class: &ClassDef) -> Option<&str> {
        class.superclass_idx.map(|s| self.type_name(s))
    }
}

fn parse_class_data(r: &Bytes<'_>, off: usize, method_count: usize) -> Result<Vec<EncodedMethod>, DexError> {
    let mut at = off;
    let static_fields = r.uleb(&mut at)?;
    let instance_fields = r.uleb(&mut at)?;
    let direct = r.uleb(&mut at)?;
    let virtual_ = r.uleb(&mut at)?;
    for _ in 0..(static_fields + instance_fields) {
        r.uleb(&mut at)?;
        r.uleb(&mut at)?;
    }
    let mut out = Vec::with_capacity((direct + virtual_) as usize);
    for count in [direct, virtual_] {
        let mut idx = 0u32;
        for _ in 0..count {
            idx = idx
                .checked_add(r.uleb(&mut at)?)
                .ok_or_else(|| DexError::Malformed("method index overflow".into()))?;
            if idx as usize >= method_count {
                return Err(DexError::Malformed(format!("method index {idx} out of range")));
            }
            let access_flags = r.uleb(&mut at)?;
            let code_off = r.uleb(&mut at)? as usize;
            let code = if code_off == 0 {
                None
            } else {
                Some(parse_code(r, code_off)?)
            };
            out.push(EncodedMethod {
                method_idx: idx,
                access_flags,
                code,
            });
        }
    }
    Ok(out)
}

fn parse_code(r: &Bytes<'_>, off: usize) -> Result<CodeItem, DexError> {
    let registers = r.u16(off)?;
    let ins = r.u16(off + 2)?;
    let outs = r.u16(off + 4)?;
    let tries_size = usize::from(r.u16(off + 6)?);
    let insns_size = r.u32(off + 12)? as usize;
    let raw = r.slice(off + 16, insns_size * 2)?;
    let insns: Vec<u16> = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    let mut tries = Vec::with_capacity(tries_size);
    if tries_size > 0 {
        let mut tries_at = off + 16 + insns_size * 2;
        if insns_size % 2 == 1 {
            tries_at += 2;
        }
        let handlers_at = tries_at + tries_size * 8;
        for i in 0..tries_size {
            let at = tries_at + i * 8;
            let start = r.u32(at)?;
            let count = u32::from(r.u16(at + 4)?);
            let mut h = handlers_at + usize::from(r.u16(at + 6)?);
            let size = r.sleb(&mut h)?;
            let mut handlers = Vec::new();
            for _ in 0..size.unsigned_abs() {
                r.uleb(&mut h)?; // type_idx
                handlers.push(r.uleb(&mut h)?);
            }
            if size <= 0 {
                handlers.push(r.uleb(&mut h)?);
            }
            tries.push(TryBlock { start, count, handlers });
        }
    }
    Ok(CodeItem {
        registers,
        ins,
        outs,
        insns,
        tries,
    })
}

/// `Lcom/foo/Bar;` to `com.foo.Bar`; other descriptors are returned as is.
pub fn descriptor_to_java(desc: &str) -> String {
    match desc.strip_prefix('L').and_then(|d| d.strip_suffix(';')) {
        Some(inner) => inner.replace('/', "."),
        None => desc.to_string(),
    }
}

/// `com.foo.Bar` to `Lcom/foo/Bar;`.
pub fn java_to_descriptor(name: &str) -> String {
    format!("L{};", name.replace('.', "/"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mutf8_round_trip() {
        for s in ["plain", "nul\0inside", "é", "日本", "😀"] {
            assert_eq!(decode_mutf8(&encode_mutf8(s)).unwrap(), s);
        }
        assert_eq!(encode_mutf8("\0"), vec![0xc0, 0x80]);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(DexFile::parse(&[0u8; 0x70]).is_err());
        assert!(DexFile::parse(b"dex\n035\0").is_err());
    }

    #[test]
    fn descriptor_conversion() {
        assert_eq!(descriptor_to_java("Lcom/foo/Bar;"), "com.foo.Bar");
        assert_eq!(java_to_descriptor("com.foo.Bar"), "Lcom/foo/Bar;");
        assert_eq!(descriptor_to_java("I"), "I");
    }
}
