//! Namespace-resolved element tree shared by the binary and plaintext
//! manifest readers.

use super::ManifestError;

pub const ANDROID_NS: &str = "http://schemas.android.com/apk/res/android";

/// Typed attribute value. Binary manifests carry the type tag directly;
/// plaintext manifests are typed through [`typed_value`].
#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    String(String),
    Bool(bool),
    Int(i32),
    Hex(u32),
    Reference(u32),
    Float(f32),
    Other { data_type: u8, data: u32 },
}

impl AttrValue {
    /// Text rendering used by fact extraction.
    pub fn as_text(&self) -> String {
        match self {
            AttrValue::String(s) => s.clone(),
            AttrValue::Bool(b) => b.to_string(),
            AttrValue::Int(i) => i.to_string(),
            AttrValue::Hex(h) => format!("0x{h:x}"),
            AttrValue::Reference(r) => format!("@0x{r:08x}"),
            AttrValue::Float(f) => f.to_string(),
            AttrValue::Other { data_type, data } => format!("({data_type:#x}){data:#x}"),
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            AttrValue::Bool(b) => Some(*b),
            AttrValue::String(s) => match s.trim() {
                "true" => Some(true),
                "false" => Some(false),
                _ => None,
            },
            AttrValue::Int(i) => Some(*i != 0),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(i) => Some(i64::from(*i)),
            AttrValue::Hex(h) => Some(i64::from(*h)),
            AttrValue::String(s) => {
                let s = s.trim();
                match s.strip_prefix("0x") {
                    Some(hex) => i64::from_str_radix(hex, 16).ok(),
                    None => s.parse().ok(),
                }
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    pub namespace: Option<String>,
    pub name: String,
    pub resource_id: Option<u32>,
    pub value: AttrValue,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Element {
    pub namespace: Option<String>,
    pub tag: String,
    pub attributes: Vec<Attribute>,
    pub children: Vec<Element>,
}

impl Element {
    pub fn new(tag: impl Into<String>) -> Self {
        Element {
            tag: tag.into(),
            ..Default::default()
        }
    }

    /// Looks up an attribute by local name, preferring the android namespace.
    pub fn attr(&self, name: &str) -> Option<&AttrValue> {
        self.attributes
            .iter()
            .find(|a| a.name == name && a.namespace.as_deref() == Some(ANDROID_NS))
            .or_else(|| self.attributes.iter().find(|a| a.name == name))
            .map(|a| &a.value)
    }

    pub fn attr_text(&self, name: &str) -> Option<String> {
        self.attr(name).map(AttrValue::as_text)
    }

    pub fn children_named<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a Element> + 'a {
        self.children.iter().filter(move |c| c.tag == tag)
    }
}

/// Framework resource ids of the manifest attributes this crate reads or
/// writes. Obfuscated binary manifests sometimes blank the attribute name
/// string and keep only the id.
pub(crate) const KNOWN_ATTRS: &[(&str, u32)] = &[
    ("label", 0x0101_0001),
    ("icon", 0x0101_0002),
    ("name", 0x0101_0003),
    ("permission", 0x0101_0006),
    ("readPermission", 0x0101_0007),
    ("writePermission", 0x0101_0008),
    ("protectionLevel", 0x0101_0009),
    ("permissionGroup", 0x0101_000a),
    ("enabled", 0x0101_000e),
    ("exported", 0x0101_0010),
    ("authorities", 0x0101_0018),
    ("grantUriPermissions", 0x0101_001b),
    ("minSdkVersion", 0x0101_020c),
    ("versionCode", 0x0101_021b),
    ("versionName", 0x0101_021c),
    ("targetSdkVersion", 0x0101_0270),
    ("maxSdkVersion", 0x0101_0271),
];

pub(crate) fn resource_id_for(name: &str) -> Option<u32> {
    KNOWN_ATTRS.iter().find(|(n, _)| *n == name).map(|(_, id)| *id)
}

pub(crate) fn name_for_resource_id(id: u32) -> Option<&'static str> {
    KNOWN_ATTRS.iter().find(|(_, i)| *i == id).map(|(n, _)| *n)
}

/// Protection-level flag values as stored by aapt in binary manifests.
const PROTECTION_NAMES: &[(&str, u32)] = &[
    ("normal", 0x0),
    ("dangerous", 0x1),
    ("signature", 0x2),
    ("signatureOrSystem", 0x3),
    ("internal", 0x4),
    ("privileged", 0x10),
    ("system", 0x10),
    ("development", 0x20),
    ("appop", 0x40),
    ("pre23", 0x80),
    ("installer", 0x100),
    ("verifier", 0x200),
    ("preinstalled", 0x400),
    ("setup", 0x800),
    ("instant", 0x1000),
    ("runtime", 0x2000),
    ("oem", 0x4000),
    ("vendorPrivileged", 0x8000),
    ("textClassifier", 0x10000),
    ("role", 0x4000000),
];

pub(crate) fn protection_flags(text: &str) -> Option<u32> {
    text.split('|').try_fold(0u32, |acc, part| {
        PROTECTION_NAMES
            .iter()
            .find(|(n, _)| *n == part.trim())
            .map(|(_, v)| acc | v)
    })
}

/// Applies the aapt typing rules to a plaintext attribute so that the
/// plaintext and binary readers agree on value types.
pub fn typed_value(namespace: Option<&str>, name: &str, text: &str) -> AttrValue {
    if namespace != Some(ANDROID_NS) {
        return AttrValue::String(text.to_string());
    }
    match name {
        "exported" | "enabled" | "grantUriPermissions" | "required" => match text {
            "true" => AttrValue::Bool(true),
            "false" => AttrValue::Bool(false),
            _ => AttrValue::String(text.to_string()),
        },
        "versionCode" | "minSdkVersion" | "targetSdkVersion" | "maxSdkVersion" => {
            match text.parse::<i32>() {
                Ok(v) => AttrValue::Int(v),
                Err(_) => AttrValue::String(text.to_string()),
            }
        }
        "protectionLevel" => match protection_flags(text) {
            Some(flags) => AttrValue::Hex(flags),
            None => AttrValue::String(text.to_string()),
        },
        _ => AttrValue::String(text.to_string()),
    }
}

/// Parses a plaintext manifest into the same tree shape the binary
/// decoder produces.
pub fn parse_plaintext(text: &str) -> Result<Element, ManifestError> {
    let doc = roxmltree::Document::parse(text)
        .map_err(|e| ManifestError::MalformedManifest(format!("plaintext xml: {e}")))?;
    Ok(convert(doc.root_element()))
}

fn convert(node: roxmltree::Node<'_, '_>) -> Element {
    let tag = node.tag_name();
    let attributes = node
        .attributes()
        .map(|a| {
            let ns = a.namespace();
            Attribute {
                namespace: ns.map(str::to_string),
                name: a.name().to_string(),
                resource_id: if ns == Some(ANDROID_NS) {
                    resource_id_for(a.name())
                } else {
                    None
                },
                value: typed_value(ns, a.name(), a.value()),
            }
        })
        .collect();
    Element {
        namespace: tag.namespace().map(str::to_string),
        tag: tag.name().to_string(),
        attributes,
        children: node.children().filter(|c| c.is_element()).map(convert).collect(),
    }
}
