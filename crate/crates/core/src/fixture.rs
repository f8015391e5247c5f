//! Synthetic APK containers for tests and demo corpora.

use std::io::{Cursor, Write};

use zip::write::SimpleFileOptions;

use crate::catalog::canonical_permission;
use crate::manifest::cert::{SIG_BLOCK_MAGIC, V2_BLOCK_ID};
use crate::manifest::{encode_axml, parse_plaintext, ComponentKind, ProtectionLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestEncoding {
    Binary,
    Plaintext,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Signature {
    Unsigned,
    /// Certificate carried in a v2 signature scheme block.
    V2(Vec<u8>),
    /// Certificate carried in `META-INF/CERT.RSA`.
    Pkcs7(Vec<u8>),
}

#[derive(Debug, Clone)]
struct Component {
    kind: ComponentKind,
    class_name: String,
    exported: Option<bool>,
    permission: Option<String>,
    authorities: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ApkBuilder {
    package: String,
    version_code: u64,
    target_sdk: Option<u32>,
    uses: Vec<String>,
    defs: Vec<(String, Option<ProtectionLevel>)>,
    components: Vec<Component>,
    dex: Vec<Vec<u8>>,
    encoding: ManifestEncoding,
    signature: Signature,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('"', "&quot;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A DER blob shaped like a certificate whose digest depends only on `seed`.
pub fn fake_certificate(seed: &str) -> Vec<u8> {
    let body = seed.as_bytes();
    assert!(body.len() < 120, "seed too long");
    let mut inner = vec![0x30, (body.len() + 2) as u8, 0x04, body.len() as u8];
    inner.extend_from_slice(body);
    let mut out = vec![0x30, inner.len() as u8];
    out.extend(inner);
    out
}

/// PKCS#7 SignedData wrapping one certificate.
pub fn pkcs7_wrap(cert: &[u8]) -> Vec<u8> {
    fn tlv(tag: u8, content: &[u8]) -> Vec<u8> {
        let mut out = vec![tag];
        let n = content.len();
        if n < 0x80 {
            out.push(n as u8);
        } else {
            let bytes: Vec<u8> = n.to_be_bytes().into_iter().skip_while(|b| *b == 0).collect();
            out.push(0x80 | bytes.len() as u8);
            out.extend(bytes);
        }
        out.extend_from_slice(content);
        out
    }
    let signed_data_oid = [0x06, 0x09, 0x2a, 0x86, 0x48, 0x86, 0xf7, 0x0d, 0x01, 0x07, 0x02];
    let mut signed = tlv(0x02, &[1]);
    signed.extend(tlv(0x31, &[]));
    signed.extend(tlv(0x30, &signed_data_oid[..]));
    signed.extend(tlv(0xa0, cert));
    signed.extend(tlv(0x31, &[]));
    let mut info = signed_data_oid.to_vec();
    info.extend(tlv(0xa0, &tlv(0x30, &signed)));
    tlv(0x30, &info)
}

fn prefixed(parts: &[&[u8]]) -> Vec<u8> {
    let body: Vec<u8> = parts.concat();
    let mut out = (body.len() as u32).to_le_bytes().to_vec();
    out.extend(body);
    out
}

fn v2_scheme_block(cert: &[u8]) -> Vec<u8> {
    let certificates = prefixed(&[&prefixed(&[cert])]);
    let digests = prefixed(&[]);
    let attrs = prefixed(&[]);
    let signed_data = prefixed(&[&digests, &certificates, &attrs]);
    let signer = prefixed(&[&signed_data, &prefixed(&[]), &prefixed(&[])]);
    prefixed(&[&signer])
}

/// Inserts an APK Signing Block with one pair before the central directory.
pub fn insert_signing_block(zip: &[u8], id: u32, value: &[u8]) -> Vec<u8> {
    let eocd = (0..=zip.len() - 22)
        .rev()
        .find(|&i| zip[i..i + 4] == [0x50, 0x4b, 0x05, 0x06])
        .expect("zip has an end record");
    let cd = u32::from_le_bytes(zip[eocd + 16..eocd + 20].try_into().unwrap()) as usize;
    let mut pair = ((value.len() + 4) as u64).to_le_bytes().to_vec();
    pair.extend(id.to_le_bytes());
    pair.extend_from_slice(value);
    let size = (pair.len() + 24) as u64;
    let mut block = size.to_le_bytes().to_vec();
    block.extend(pair);
    block.extend(size.to_le_bytes());
    block.extend_from_slice(SIG_BLOCK_MAGIC);

    let mut out = zip[..cd].to_vec();
    out.extend(&block);
    out.extend(&zip[cd..]);
    let new_eocd = eocd + block.len();
    out[new_eocd + 16..new_eocd + 20].copy_from_slice(&((cd + block.len()) as u32).to_le_bytes());
    out
}

impl ApkBuilder {
    pub fn new(package: &str, version_code: u64) -> Self {
        ApkBuilder {
            package: package.to_string(),
            version_code,
            target_sdk: Some(30),
            uses: Vec::new(),
            defs: Vec::new(),
            components: Vec::new(),
            dex: Vec::new(),
            encoding: ManifestEncoding::Binary,
            signature: Signature::Unsigned,
        }
    }

    pub fn target_sdk(mut self, sdk: Option<u32>) -> Self {
        self.target_sdk = sdk;
        self
    }

    /// Bare names are taken as `android.permission.*`.
    pub fn uses(mut self, permission: &str) -> Self {
        self.uses.push(canonical_permission(permission));
        self
    }

    pub fn uses_all(mut self, permissions: &[&str]) -> Self {
        self.uses.extend(permissions.iter().map(|p| canonical_permission(p)));
        self
    }

    /// `None` omits `protectionLevel`.
    pub fn defines(mut self, permission: &str, level: Option<ProtectionLevel>) -> Self {
        self.defs.push((permission.to_string(), level));
        self
    }

    pub fn provider(mut self, class_name: &str, authorities: &[&str], exported: Option<bool>, permission: Option<&str>) -> Self {
        self.components.push(Component {
            kind: ComponentKind::Provider,
            class_name: class_name.to_string(),
            exported,
            permission: permission.map(str::to_string),
            authorities: authorities.iter().map(|a| a.to_string()).collect(),
        });
        self
    }

    pub fn component(mut self, kind: ComponentKind, class_name: &str, exported: Option<bool>, permission: Option<&str>) -> Self {
        self.components.push(Component {
            kind,
            class_name: class_name.to_string(),
            exported,
            permission: permission.map(str::to_string),
            authorities: Vec::new(),
        });
        self
    }

    pub fn dex(mut self, bytes: Vec<u8>) -> Self {
        self.dex.push(bytes);
        self
    }

    pub fn encoding(mut self, encoding: ManifestEncoding) -> Self {
        self.encoding = encoding;
        self
    }

    pub fn signature(mut self, signature: Signature) -> Self {
        self.signature = signature;
        self
    }

    /// Signs with a v2 block carrying `fake_certificate(seed)`.
    pub fn signed_by(self, seed: &str) -> Self {
        self.signature(Signature::V2(fake_certificate(seed)))
    }

    pub fn manifest_xml(&self) -> String {
        let mut s = format!(
            "<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<manifest xmlns:android=\"http://schemas.android.com/apk/res/android\" package=\"{}\" android:versionCode=\"{}\">\n",
            escape(&self.package),
            self.version_code
        );
        if let Some(sdk) = self.target_sdk {
            s += &format!("  <uses-sdk android:minSdkVersion=\"21\" android:targetSdkVersion=\"{sdk}\"/>\n");
        }
        for (name, level) in &self.defs {
            s += &format!("  <permission android:name=\"{}\"", escape(name));
            if let Some(l) = level {
                s += &format!(" android:protectionLevel=\"{}\"", l.as_str());
            }
            s += "/>\n";
        }
        for p in &self.uses {
            s += &format!("  <uses-permission android:name=\"{}\"/>\n", escape(p));
        }
        s += "  <application>\n";
        for c in &self.components {
            let tag = match c.kind {
                ComponentKind::Provider => "provider",
                ComponentKind::Activity => "activity",
                ComponentKind::Service => "service",
                ComponentKind::Receiver => "receiver",
            };
            s += &format!("    <{tag} android:name=\"{}\"", escape(&c.class_name));
            if !c.authorities.is_empty() {
                s += &format!(" android:authorities=\"{}\"", escape(&c.authorities.join(";")));
            }
            if let Some(e) = c.exported {
                s += &format!(" android:exported=\"{e}\"");
            }
            if let Some(p) = &c.permission {
                s += &format!(" android:permission=\"{}\"", escape(p));
            }
            s += "/>\n";
        }
        s += "  </application>\n</manifest>\n";
        s
    }

    pub fn manifest_bytes(&self) -> Vec<u8> {
        let xml = self.manifest_xml();
        match self.encoding {
            ManifestEncoding::Plaintext => xml.into_bytes(),
            ManifestEncoding::Binary => encode_axml(&parse_plaintext(&xml).expect("generated manifest parses")),
        }
    }

    pub fn build(&self) -> Vec<u8> {
        let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
        let opts = SimpleFileOptions::default()
            .compression_method(zip::CompressionMethod::Deflated)
            .last_modified_time(zip::DateTime::default());
        zip.start_file("AndroidManifest.xml", opts).expect("zip write");
        zip.write_all(&self.manifest_bytes()).expect("zip write");
        for (i, d) in self.dex.iter().enumerate() {
            let name = if i == 0 { "classes.dex".to_string() } else { format!("classes{}.dex", i + 1) };
            zip.start_file(name, opts).expect("zip write");
            zip.write_all(d).expect("zip write");
        }
        if let Signature::Pkcs7(cert) = &self.signature {
            zip.start_file("META-INF/CERT.RSA", opts).expect("zip write");
            zip.write_all(&pkcs7_wrap(cert)).expect("zip write");
        }
        let bytes = zip.finish().expect("zip finish").into_inner();
        match &self.signature {
            Signature::V2(cert) => insert_signing_block(&bytes, V2_BLOCK_ID, &v2_scheme_block(cert)),
            _ => bytes,
        }
    }
}
