//! APK manifest extraction: container, binary/plaintext manifest, signing
//! certificate and corpus metadata merged into one [`ApkFacts`] record.

pub mod axml;
pub mod cert;
pub mod metadata;
pub mod xml;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Cursor, Read};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use axml::{decode_axml, encode_axml};
pub use cert::cert_digest;
pub use metadata::{load_metadata, MetadataRow};
pub use xml::{parse_plaintext, AttrValue, Attribute, Element};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ManifestError {
    #[error("malformed container: {0}")]
    MalformedContainer(String),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtectionLevel {
    Normal,
    Dangerous,
    Signature,
    Other,
}

impl ProtectionLevel {
    /// Base level from aapt protection flags; `signatureOrSystem` counts as
    /// signature.
    pub fn from_flags(flags: u32) -> Self {
        match flags & 0xf {
            0 => ProtectionLevel::Normal,
            1 => ProtectionLevel::Dangerous,
            2 | 3 => ProtectionLevel::Signature,
            _ => ProtectionLevel::Other,
        }
    }

    pub fn from_attr(value: &AttrValue) -> Self {
        match value {
            AttrValue::Int(i) => Self::from_flags(*i as u32),
            AttrValue::Hex(h) => Self::from_flags(*h),
            AttrValue::String(s) => xml::protection_flags(s).map_or(ProtectionLevel::Other, Self::from_flags),
            _ => ProtectionLevel::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProtectionLevel::Normal => "normal",
            ProtectionLevel::Dangerous => "dangerous",
            ProtectionLevel::Signature => "signature",
            ProtectionLevel::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionDef {
    pub name: String,
    pub protection_level: ProtectionLevel,
    /// False when the manifest omitted `protectionLevel`.
    pub explicit_level: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Provider,
    Activity,
    Service,
    Receiver,
}

impl ComponentKind {
    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "provider" => Some(ComponentKind::Provider),
            "activity" | "activity-alias" => Some(ComponentKind::Activity),
            "service" => Some(ComponentKind::Service),
            "receiver" => Some(ComponentKind::Receiver),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentKind::Provider => "provider",
            ComponentKind::Activity => "activity",
            ComponentKind::Service => "service",
            ComponentKind::Receiver => "receiver",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentDecl {
    pub kind: ComponentKind,
    pub class_name: String,
    pub exported: bool,
    pub guard_permission: Option<String>,
    /// Provider authorities; always empty for other kinds.
    #[serde(default)]
    pub authorities: Vec<String>,
}

/// Everything extracted from one APK plus its corpus metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApkFacts {
    pub sha256: String,
    pub package_name: String,
    pub version_code: u64,
    pub cert_digest: Option<String>,
    pub requested_permissions: BTreeSet<String>,
    #[serde(default)]
    pub permission_defs: Vec<PermissionDef>,
    #[serde(default)]
    pub components: Vec<ComponentDecl>,
    /// `None` when the APK had no metadata row.
    pub dex_year: Option<i32>,
    #[serde(default)]
    pub markets: BTreeSet<String>,
    pub vt_detections: Option<u32>,
    /// `maxSdkVersion` of `<uses-permission>` entries that carry one.
    /// Recorded only; the permission still counts as requested.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub permission_max_sdk: BTreeMap<String, u32>,
}

impl ApkFacts {
    /// A bare record, mostly useful for synthetic corpora and scenarios.
    pub fn new(package_name: impl Into<String>, version_code: u64) -> Self {
        ApkFacts {
            sha256: String::new(),
            package_name: package_name.into(),
            version_code,
            cert_digest: None,
            requested_permissions: BTreeSet::new(),
            permission_defs: Vec::new(),
            components: Vec::new(),
            dex_year: None,
            markets: BTreeSet::new(),
            vt_detections: None,
            permission_max_sdk: BTreeMap::new(),
        }
    }

    pub fn has_metadata(&self) -> bool {
        self.dex_year.is_some()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("ApkFacts serializes")
    }

    pub fn apply_metadata(&mut self, row: &MetadataRow) {
        self.dex_year = row.dex_year;
        self.markets = row.markets.clone();
        self.vt_detections = row.vt_detection;
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads a manifest entry, binary or plaintext.
pub fn decode_manifest(bytes: &[u8]) -> Result<Element, ManifestError> {
    if axml::looks_like_axml(bytes) {
        return decode_axml(bytes);
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|_| ManifestError::MalformedManifest("neither AXML nor UTF-8 XML".into()))?;
    if !text.trim_start().starts_with('<') {
        return Err(ManifestError::MalformedManifest("neither AXML nor XML".into()));
    }
    parse_plaintext(text)
}

fn read_entry(archive: &mut zip::ZipArchive<Cursor<&[u8]>>, name: &str) -> Result<Vec<u8>, ManifestError> {
    let mut entry = archive
        .by_name(name)
        .map_err(|e| ManifestError::MalformedContainer(format!("{name}: {e}")))?;
    let mut buf = Vec::new();
    entry
        .read_to_end(&mut buf)
        .map_err(|e| ManifestError::MalformedContainer(format!("{name}: {e}")))?;
    Ok(buf)
}

/// The `classes.dex`, `classes2.dex`, ... entries in load order.
pub fn dex_entries(apk: &[u8]) -> Result<Vec<Vec<u8>>, ManifestError> {
    let mut archive = zip::ZipArchive::new(Cursor::new(apk))
        .map_err(|e| ManifestError::MalformedContainer(e.to_string()))?;
    let mut out = Vec::new();
    if archive.index_for_name("classes.dex").is_some() {
        out.push(read_entry(&mut archive, "classes.dex")?);
    }
    for n in 2.. {
        let name = format!("classes{n}.dex");
        if archive.index_for_name(&name).is_none() {
            break;
        }
        out.push(read_entry(&mut archive, &name)?);
    }
    Ok(out)
}

/// Parses an APK container into facts; metadata fields come from `metadata`
/// when a row is supplied.
pub fn parse_apk(apk: &[u8], metadata: Option<&MetadataRow>) -> Result<ApkFacts, ManifestError> {
    let mut archive = zip::ZipArchive::new(Cursor::new(apk))
        .map_err(|e| ManifestError::MalformedContainer(e.to_string()))?;
    let manifest = read_entry(&mut archive, "AndroidManifest.xml")?;
    let tree = decode_manifest(&manifest)?;
    let mut facts = facts_from_manifest(&tree)?;
    facts.sha256 = sha256_hex(apk);
    facts.cert_digest = cert_digest(apk);
    if let Some(row) = metadata {
        facts.apply_metadata(row);
    }
    Ok(facts)
}

fn qualify(package: &str, class: &str) -> String {
    if class.starts_with('.') {
        format!("{package}{class}")
    } else if !class.contains('.') {
        format!("{package}.{class}")
    } else {
        class.to_string()
    }
}

fn sdk_level(root: &Element) -> i64 {
    root.children_named("uses-sdk")
        .next()
        .and_then(|sdk| {
            sdk.attr("targetSdkVersion")
                .or_else(|| sdk.attr("minSdkVersion"))
                .and_then(AttrValue::as_int)
        })
        .unwrap_or(1)
}

/// Manifest-derived fields of [`ApkFacts`]; identity and metadata are left
/// for the caller.
pub fn facts_from_manifest(root: &Element) -> Result<ApkFacts, ManifestError> {
    if root.tag != "manifest" {
        return Err(ManifestError::MalformedManifest(format!("root element is <{}>", root.tag)));
    }
    let package = root
        .attr_text("package")
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty())
        .ok_or_else(|| ManifestError::MalformedManifest("missing package attribute".into()))?;
    let version_code = match root.attr("versionCode") {
        None => 0,
        Some(v) => v
            .as_int()
            .and_then(|n| u64::try_from(n).ok())
            .ok_or_else(|| ManifestError::MalformedManifest(format!("bad versionCode {}", v.as_text())))?,
    };

    let mut facts = ApkFacts::new(package.clone(), version_code);
    for up in root
        .children
        .iter()
        .filter(|c| matches!(c.tag.as_str(), "uses-permission" | "uses-permission-sdk-23" | "uses-permission-sdk-m"))
    {
        let Some(name) = up.attr_text("name").map(|n| n.trim().to_string()) else {
            continue;
        };
        if name.is_empty() {
            continue;
        }
        if let Some(max) = up.attr("maxSdkVersion").and_then(AttrValue::as_int) {
            facts.permission_max_sdk.insert(name.clone(), max.max(0) as u32);
        }
        facts.requested_permissions.insert(name);
    }

    for p in root.children_named("permission") {
        let Some(name) = p.attr_text("name").map(|n| n.trim().to_string()).filter(|n| !n.is_empty()) else {
            continue;
        };
        let (protection_level, explicit_level) = match p.attr("protectionLevel") {
            Some(v) => (ProtectionLevel::from_attr(v), true),
            None => (ProtectionLevel::Normal, false),
        };
        facts.permission_defs.push(PermissionDef {
            name,
            protection_level,
            explicit_level,
        });
    }

    let legacy_provider_export = sdk_level(root) < 17;
    for app in root.children_named("application") {
        for c in &app.children {
            let Some(kind) = ComponentKind::from_tag(&c.tag) else {
                continue;
            };
            let class_attr = if c.tag == "activity-alias" { "targetActivity" } else { "name" };
            let class_name = c
                .attr_text("name")
                .or_else(|| c.attr_text(class_attr))
                .map(|n| qualify(&package, n.trim()))
                .unwrap_or_default();
            let exported = match c.attr("exported").and_then(AttrValue::as_bool) {
                Some(e) => e,
                None if kind == ComponentKind::Provider => legacy_provider_export,
                None => c.children_named("intent-filter").next().is_some(),
            };
            let guard_permission = c
                .attr_text("permission")
                .or_else(|| (kind == ComponentKind::Provider).then(|| c.attr_text("readPermission")).flatten())
                .map(|g| g.trim().to_string())
                .filter(|g| !g.is_empty());
            let authorities = if kind == ComponentKind::Provider {
                c.attr_text("authorities")
                    .map(|a| {
                        a.split(';')
                            .map(str::trim)
                            .filter(|s| !s.is_empty())
                            .map(str::to_string)
                            .collect()
                    })
                    .unwrap_or_default()
            } else {
                Vec::new()
            };
            facts.components.push(ComponentDecl {
                kind,
                class_name,
                exported,
                guard_permission,
                authorities,
            });
        }
    }
    Ok(facts)
}
