//! Signing-certificate digest from the APK Signing Block, with a fallback
//! to the PKCS#7 signature file of v1 (JAR) signing.

use std::io::{Cursor, Read};

use sha2::{Digest, Sha256};

pub const SIG_BLOCK_MAGIC: &[u8; 16] = b"APK Sig Block 42";
pub const V2_BLOCK_ID: u32 = 0x7109_871a;
pub const V3_BLOCK_ID: u32 = 0xf053_68c0;
pub const V31_BLOCK_ID: u32 = 0x1b93_ad61;

const EOCD_MAGIC: u32 = 0x0605_4b50;

fn le_u32(b: &[u8], at: usize) -> Option<u32> {
    b.get(at..at + 4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
}

fn le_u64(b: &[u8], at: usize) -> Option<u64> {
    b.get(at..at + 8).map(|s| u64::from_le_bytes(s.try_into().unwrap()))
}

/// Offset of the end-of-central-directory record.
pub(crate) fn find_eocd(apk: &[u8]) -> Option<usize> {
    if apk.len() < 22 {
        return None;
    }
    let lowest = apk.len().saturating_sub(22 + 0xffff);
    (lowest..=apk.len() - 22).rev().find(|&i| {
        le_u32(apk, i) == Some(EOCD_MAGIC)
            && usize::from(u16::from_le_bytes([apk[i + 20], apk[i + 21]])) == apk.len() - i - 22
    })
}

/// Returns `(id, value)` pairs of the signing block, if one precedes the
/// central directory.
pub fn signing_block_pairs(apk: &[u8]) -> Option<Vec<(u32, &[u8])>> {
    let eocd = find_eocd(apk)?;
    let cd_offset = le_u32(apk, eocd + 16)? as usize;
    if cd_offset < 32 || cd_offset > apk.len() {
        return None;
    }
    if &apk[cd_offset - 16..cd_offset] != SIG_BLOCK_MAGIC {
        return None;
    }
    let block_size = usize::try_from(le_u64(apk, cd_offset - 24)?).ok()?;
    let start = cd_offset.checked_sub(block_size.checked_add(8)?)?;
    if le_u64(apk, start)? as usize != block_size {
        return None;
    }
    let mut pairs = Vec::new();
    let mut at = start + 8;
    let end = cd_offset - 24;
    while at + 12 <= end {
        let len = usize::try_from(le_u64(apk, at)?).ok()?;
        if len < 4 || at + 8 + len > end {
            return None;
        }
        let id = le_u32(apk, at + 8)?;
        pairs.push((id, &apk[at + 12..at + 8 + len]));
        at += 8 + len;
    }
    Some(pairs)
}

/// Reads one u32-length-prefixed item, returning it and the remainder.
fn prefixed(b: &[u8]) -> Option<(&[u8], &[u8])> {
    let len = le_u32(b, 0)? as usize;
    let item = b.get(4..4 + len)?;
    Some((item, &b[4 + len..]))
}

/// First certificate of the first signer in a v2/v3 signature scheme block.
pub fn first_signer_certificate(scheme_block: &[u8]) -> Option<&[u8]> {
    let (signers, _) = prefixed(scheme_block)?;
    let (signer, _) = prefixed(signers)?;
    let (signed_data, _) = prefixed(signer)?;
    let (_digests, rest) = prefixed(signed_data)?;
    let (certificates, _) = prefixed(rest)?;
    let (cert, _) = prefixed(certificates)?;
    (!cert.is_empty()).then_some(cert)
}

/// A DER tag-length-value item: `(tag, whole encoding, content)`.
fn der_item(b: &[u8]) -> Option<(u8, &[u8], &[u8])> {
    let tag = *b.first()?;
    let first = *b.get(1)?;
    let (len, header) = if first & 0x80 == 0 {
        (usize::from(first), 2)
    } else {
        let n = usize::from(first & 0x7f);
        if n == 0 || n > 4 {
            return None;
        }
        let len = b
            .get(2..2 + n)?
            .iter()
            .fold(0usize, |acc, &x| (acc << 8) | usize::from(x));
        (len, 2 + n)
    };
    let whole = b.get(..header + len)?;
    Some((tag, whole, &whole[header..]))
}

fn der_children(mut content: &[u8]) -> Option<Vec<(u8, &[u8], &[u8])>> {
    let mut out = Vec::new();
    while !content.is_empty() {
        let item = der_item(content)?;
        content = &content[item.1.len()..];
        out.push(item);
    }
    Some(out)
}

/// First certificate inside a PKCS#7 SignedData blob, or the blob itself
/// when it is a bare X.509 certificate.
pub fn pkcs7_first_certificate(der: &[u8]) -> Option<&[u8]> {
    let (tag, _, content) = der_item(der)?;
    if tag != 0x30 {
        return None;
    }
    let top = der_children(content)?;
    match top.first() {
        // ContentInfo: OID then [0] EXPLICIT SignedData
        Some((0x06, _, _)) => {
            let (_, _, explicit) = top.iter().find(|(t, _, _)| *t == 0xa0).copied()?;
            let (stag, _, signed) = der_item(explicit)?;
            if stag != 0x30 {
                return None;
            }
            let fields = der_children(signed)?;
            let (_, _, certs) = fields.iter().find(|(t, _, _)| *t == 0xa0).copied()?;
            let (ctag, cert, _) = der_item(certs)?;
            (ctag == 0x30).then_some(cert)
        }
        // Certificate: TBSCertificate SEQUENCE first
        Some((0x30, _, _)) => Some(der.get(..der_item(der)?.1.len())?),
        _ => None,
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn meta_inf_certificate(apk: &[u8]) -> Option<Vec<u8>> {
    let mut archive = zip::ZipArchive::new(Cursor::new(apk)).ok()?;
    let mut names: Vec<String> = archive
        .file_names()
        .filter(|n| {
            let upper = n.to_ascii_uppercase();
            upper.starts_with("META-INF/")
                && [".RSA", ".DSA", ".EC"].iter().any(|ext| upper.ends_with(ext))
        })
        .map(str::to_string)
        .collect();
    names.sort();
    names.into_iter().find_map(|name| {
        let mut buf = Vec::new();
        archive.by_name(&name).ok()?.read_to_end(&mut buf).ok()?;
        pkcs7_first_certificate(&buf).map(<[u8]>::to_vec)
    })
}

/// Hex SHA-256 of the signing certificate; `None` for unsigned input.
pub fn cert_digest(apk: &[u8]) -> Option<String> {
    if let Some(pairs) = signing_block_pairs(apk) {
        for id in [V2_BLOCK_ID, V3_BLOCK_ID, V31_BLOCK_ID] {
            if let Some(cert) = pairs
                .iter()
                .find(|(pid, _)| *pid == id)
                .and_then(|(_, v)| first_signer_certificate(v))
            {
                return Some(hex_sha256(cert));
            }
        }
    }
    meta_inf_certificate(apk).map(|c| hex_sha256(&c))
}
