//! Custom permission classification, guarded-provider eligibility,
//! cross-developer pair linking and sensitivity categorisation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aosp::AospList;
use crate::dex::{CallSite, ProviderSensitivity, StoreKind};
use crate::manifest::{ApkFacts, ComponentDecl, ComponentKind, ProtectionLevel};

pub const DEFAULT_KEYWORDS: &str = include_str!("../data/category_keywords.tsv");

#[derive(Debug, Error)]
pub enum CustomError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid keyword map:\n{}", .0.join("\n"))]
    InvalidKeywords(Vec<String>),
    #[error("no keyword matches the exposed columns")]
    Uncategorized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomPermissionRecord {
    pub name: String,
    pub protection_level: ProtectionLevel,
    pub defining_package: String,
    pub version_code: u64,
    pub cert_digest: Option<String>,
    pub guarded_components: Vec<ComponentDecl>,
    pub attached: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelHistogram {
    pub signature: u64,
    pub normal: u64,
    pub dangerous: u64,
    pub other: u64,
}

impl LevelHistogram {
    pub fn total(&self) -> u64 {
        self.signature + self.normal + self.dangerous + self.other
    }

    fn add(&mut self, level: ProtectionLevel) {
        match level {
            ProtectionLevel::Signature => self.signature += 1,
            ProtectionLevel::Normal => self.normal += 1,
            ProtectionLevel::Dangerous => self.dangerous += 1,
            ProtectionLevel::Other => self.other += 1,
        }
    }
}

/// Normal-level records by the kind of component they guard; a record
/// guarding several kinds counts once, under the first of provider,
/// activity, service, receiver.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentBreakdown {
    pub provider: u64,
    pub activity: u64,
    pub service: u64,
    pub receiver: u64,
    pub unattached: u64,
}

impl ComponentBreakdown {
    pub fn total(&self) -> u64 {
        self.provider + self.activity + self.service + self.receiver + self.unattached
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomClassification {
    pub records: Vec<CustomPermissionRecord>,
    pub histogram: LevelHistogram,
    pub normal_breakdown: ComponentBreakdown,
}

/// One record per (defining package, permission), taken from the
/// package's highest version that defines it.
pub fn classify_custom<'a, I: IntoIterator<Item = &'a ApkFacts>>(records: I, aosp: &AospList) -> CustomClassification {
    let mut latest: BTreeMap<(String, String), &ApkFacts> = BTreeMap::new();
    for facts in records {
        for def in &facts.permission_defs {
            if aosp.contains(&def.name) {
                continue;
            }
            let key = (facts.package_name.clone(), def.name.clone());
            match latest.get(&key) {
                Some(prev) if (prev.version_code, &prev.sha256) >= (facts.version_code, &facts.sha256) => {}
                _ => {
                    latest.insert(key, facts);
                }
            }
        }
    }
    let mut out = CustomClassification::default();
    for ((pkg, name), facts) in latest {
        let def = facts.permission_defs.iter().find(|d| d.name == name).expect("keyed by definition");
        let guarded: Vec<ComponentDecl> = facts
            .components
            .iter()
            .filter(|c| c.guard_permission.as_deref() == Some(name.as_str()))
            .cloned()
            .collect();
        out.histogram.add(def.protection_level);
        if def.protection_level == ProtectionLevel::Normal {
            let has = |k: ComponentKind| guarded.iter().any(|c| c.kind == k);
            let b = &mut out.normal_breakdown;
            if has(ComponentKind::Provider) {
                b.provider += 1;
            } else if has(ComponentKind::Activity) {
                b.activity += 1;
            } else if has(ComponentKind::Service) {
                b.service += 1;
            } else if has(ComponentKind::Receiver) {
                b.receiver += 1;
            } else {
                b.unattached += 1;
            }
        }
        out.records.push(CustomPermissionRecord {
            name,
            protection_level: def.protection_level,
            defining_package: pkg,
            version_code: facts.version_code,
            cert_digest: facts.cert_digest.clone(),
            attached: !guarded.is_empty(),
            guarded_components: guarded,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibleProvider {
    pub permission: String,
    pub package: String,
    pub cert_digest: Option<String>,
    pub provider: ComponentDecl,
}

/// Exported providers guarded by a normal-level custom permission.
pub fn eligible_providers(records: &[CustomPermissionRecord]) -> Vec<EligibleProvider> {
    records
        .iter()
        .filter(|r| r.protection_level == ProtectionLevel::Normal)
        .flat_map(|r| {
            r.guarded_components
                .iter()
                .filter(|c| c.kind == ComponentKind::Provider && c.exported)
                .map(move |c| EligibleProvider {
                    permission: r.name.clone(),
                    package: r.defining_package.clone(),
                    cert_digest: r.cert_digest.clone(),
                    provider: c.clone(),
                })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Medical,
    Financial,
    AuthCredentials,
    Messages,
    Contacts,
    Location,
    UserIdentity,
    FilePaths,
    Settings,
    Uncategorized,
}

impl Category {
    /// Highest priority first.
    pub const PRIORITY: [Category; 9] = [
        Category::Medical,
        Category::Financial,
        Category::AuthCredentials,
        Category::Messages,
        Category::Contacts,
        Category::Location,
        Category::UserIdentity,
        Category::FilePaths,
        Category::Settings,
    ];

    pub fn parse(s: &str) -> Option<Category> {
        Some(match s {
            "medical" => Category::Medical,
            "financial" => Category::Financial,
            "auth_credentials" => Category::AuthCredentials,
            "messages" => Category::Messages,
            "contacts" => Category::Contacts,
            "location" => Category::Location,
            "user_identity" => Category::UserIdentity,
            "file_paths" => Category::FilePaths,
            "settings" => Category::Settings,
            "uncategorized" => Category::Uncategorized,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Medical => "medical",
            Category::Financial => "financial",
            Category::AuthCredentials => "auth_credentials",
            Category::Messages => "messages",
            Category::Contacts => "contacts",
            Category::Location => "location",
            Category::UserIdentity => "user_identity",
            Category::FilePaths => "file_paths",
            Category::Settings => "settings",
            Category::Uncategorized => "uncategorized",
        }
    }

    /// Platform permission that guards the same data, for Type A categories.
    pub fn aosp_gate(self) -> Option<&'static str> {
        match self {
            Category::Contacts => Some("android.permission.READ_CONTACTS"),
            Category::AuthCredentials => Some("android.permission.GET_ACCOUNTS"),
            Category::UserIdentity => Some("android.permission.READ_PHONE_STATE"),
            Category::Location => Some("android.permission.ACCESS_FINE_LOCATION"),
            Category::Messages => Some("android.permission.READ_SMS"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PairType {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Categorization {
    pub category: Category,
    pub pair_type: PairType,
    pub aosp_gate: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeywordMap {
    entries: Vec<(String, Category)>,
}

impl KeywordMap {
    pub fn parse(text: &str) -> Result<Self, CustomError> {
        let mut problems = Vec::new();
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("");
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t').map(str::trim);
            match (cols.next().filter(|s| !s.is_empty()), cols.next().and_then(Category::parse)) {
                (Some(k), Some(c)) if c != Category::Uncategorized => entries.push((k.to_ascii_lowercase(), c)),
                _ => problems.push(format!("line {}: expected `substring<TAB>category`", i + 1)),
            }
        }
        if problems.is_empty() {
            Ok(KeywordMap { entries })
        } else {
            Err(CustomError::InvalidKeywords(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self, CustomError> {
        let text = std::fs::read_to_string(path).map_err(|source| CustomError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn default_map() -> Self {
        Self::parse(DEFAULT_KEYWORDS).expect("shipped keyword map is valid")
    }

    /// Every category with a keyword occurring in `column`.
    pub fn matches(&self, column: &str) -> BTreeSet<Category> {
        let lower = column.to_ascii_lowercase();
        self.entries
            .iter()
            .filter(|(k, _)| lower.contains(k.as_str()))
            .map(|(_, c)| *c)
            .collect()
    }
}

/// Primary category of a provider's exposed columns.
pub fn categorize(sensitivity: &ProviderSensitivity, keywords: &KeywordMap) -> Result<Categorization, CustomError> {
    let found: BTreeSet<Category> = sensitivity
        .column_constants
        .iter()
        .flat_map(|c| keywords.matches(c))
        .collect();
    let category = Category::PRIORITY
        .into_iter()
        .find(|c| found.contains(c))
        .ok_or(CustomError::Uncategorized)?;
    let gate = category.aosp_gate();
    Ok(Categorization {
        category,
        pair_type: if gate.is_some() { PairType::A } else { PairType::B },
        aosp_gate: gate.map(str::to_string),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploitableSide {
    pub package: String,
    pub cert_digest: String,
    pub authority: String,
    pub sensitivity: ProviderSensitivity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploitingSide {
    pub package: String,
    pub cert_digest: String,
    pub call_sites: Vec<CallSite>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossDevPair {
    pub permission_name: String,
    pub exploitable: ExploitableSide,
    pub exploiting: ExploitingSide,
    pub category: Category,
    /// Absent when the pair is uncategorized.
    #[serde(rename = "type")]
    pub pair_type: Option<PairType>,
    pub aosp_gate: Option<String>,
}

/// A requesting app: its latest manifest and attributed call sites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Requester {
    pub facts: ApkFacts,
    pub call_sites: Vec<CallSite>,
}

/// Joins eligible providers with requesters holding the same permission
/// name, a different certificate, and a call site resolving to one of the
/// provider's authorities. One pair per matched authority.
pub fn link_pairs(
    eligible: &[EligibleProvider],
    requesters: &[Requester],
    sensitivities: &HashMap<(String, String), ProviderSensitivity>,
    keywords: &KeywordMap,
) -> Vec<CrossDevPair> {
    let mut by_perm: HashMap<&str, Vec<&Requester>> = HashMap::new();
    for r in requesters {
        for p in &r.facts.requested_permissions {
            by_perm.entry(p.as_str()).or_default().push(r);
        }
    }
    let mut pairs = Vec::new();
    for e in eligible {
        let Some(def_cert) = e.cert_digest.as_deref() else { continue };
        let Some(candidates) = by_perm.get(e.permission.as_str()) else { continue };
        let sensitivity = sensitivities
            .get(&(e.package.clone(), e.provider.class_name.clone()))
            .cloned()
            .unwrap_or_else(|| ProviderSensitivity {
                provider_class: e.provider.class_name.clone(),
                column_constants: BTreeSet::new(),
                store_kind: StoreKind::NoneDetected,
            });
        let cat = categorize(&sensitivity, keywords).ok();
        for r in candidates {
            let Some(req_cert) = r.facts.cert_digest.as_deref() else { continue };
            if req_cert == def_cert || r.facts.package_name == e.package {
                continue;
            }
            let authorities: BTreeSet<&str> = e.provider.authorities.iter().map(String::as_str).collect();
            for auth in authorities {
                let sites: Vec<CallSite> = r
                    .call_sites
                    .iter()
                    .filter(|s| s.resolved_authority.as_deref() == Some(auth))
                    .cloned()
                    .collect();
                if sites.is_empty() {
                    continue;
                }
                pairs.push(CrossDevPair {
                    permission_name: e.permission.clone(),
                    exploitable: ExploitableSide {
                        package: e.package.clone(),
                        cert_digest: def_cert.to_string(),
                        authority: auth.to_string(),
                        sensitivity: sensitivity.clone(),
                    },
                    exploiting: ExploitingSide {
                        package: r.facts.package_name.clone(),
                        cert_digest: req_cert.to_string(),
                        call_sites: sites,
                    },
                    category: cat.as_ref().map_or(Category::Uncategorized, |c| c.category),
                    pair_type: cat.as_ref().map(|c| c.pair_type),
                    aosp_gate: cat.as_ref().and_then(|c| c.aosp_gate.clone()),
                });
            }
        }
    }
    pairs.sort_by(|a, b| {
        (&a.permission_name, &a.exploitable.package, &a.exploitable.authority, &a.exploiting.package).cmp(&(
            &b.permission_name,
            &b.exploitable.package,
            &b.exploitable.authority,
            &b.exploiting.package,
        ))
    });
    pairs
}

/// Keeps the highest version of each package.
pub fn latest_versions<'a, I: IntoIterator<Item = &'a ApkFacts>>(records: I) -> Vec<&'a ApkFacts> {
    let mut best: BTreeMap<&str, &ApkFacts> = BTreeMap::new();
    for f in records {
        match best.get(f.package_name.as_str()) {
            Some(prev) if (prev.version_code, &prev.sha256) >= (f.version_code, &f.sha256) => {}
            _ => {
                best.insert(&f.package_name, f);
            }
        }
    }
    best.into_values().collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSplit {
    pub exploitable_only: u64,
    pub exploiting_only: u64,
    pub both: u64,
}

pub fn role_split(pairs: &[CrossDevPair]) -> RoleSplit {
    let exploitable: BTreeSet<&str> = pairs.iter().map(|p| p.exploitable.package.as_str()).collect();
    let exploiting: BTreeSet<&str> = pairs.iter().map(|p| p.exploiting.package.as_str()).collect();
    let both = exploitable.intersection(&exploiting).count() as u64;
    RoleSplit {
        exploitable_only: exploitable.len() as u64 - both,
        exploiting_only: exploiting.len() as u64 - both,
        both,
    }
}

/// Pair counts per category, in priority order, uncategorized last.
pub fn category_counts(pairs: &[CrossDevPair]) -> Vec<(Category, Option<PairType>, u64)> {
    let mut counts: BTreeMap<Category, u64> = BTreeMap::new();
    for p in pairs {
        *counts.entry(p.category).or_default() += 1;
    }
    Category::PRIORITY
        .into_iter()
        .chain([Category::Uncategorized])
        .filter_map(|c| {
            let t = match c {
                Category::Uncategorized => None,
                c if c.aosp_gate().is_some() => Some(PairType::A),
                _ => Some(PairType::B),
            };
            counts.get(&c).map(|&n| (c, t, n))
        })
        .collect()
}

/// Parsed manifest plus the raw DEX files of one APK.
#[derive(Debug, Clone)]
pub struct AppBinary {
    pub facts: ApkFacts,
    pub dex: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, Default)]
pub struct PairRun {
    pub classification: CustomClassification,
    pub eligible: Vec<EligibleProvider>,
    pub pairs: Vec<CrossDevPair>,
    /// Providers whose class was not found in the defining app's DEX.
    pub missing_providers: Vec<(String, String)>,
}

/// Classification, eligibility, provider sensitivity, requester call sites
/// and linking over a set of APKs.
pub fn pair_pipeline<S: AsRef<str> + Sync>(apps: &[AppBinary], aosp: &AospList, keywords: &KeywordMap, sdk_prefixes: &[S]) -> PairRun {
    let classification = classify_custom(apps.iter().map(|a| &a.facts), aosp);
    let eligible = eligible_providers(&classification.records);

    let mut latest: BTreeMap<&str, &AppBinary> = BTreeMap::new();
    for a in apps {
        match latest.get(a.facts.package_name.as_str()) {
            Some(prev) if (prev.facts.version_code, &prev.facts.sha256) >= (a.facts.version_code, &a.facts.sha256) => {}
            _ => {
                latest.insert(&a.facts.package_name, a);
            }
        }
    }
    let defining: HashMap<(&str, u64), &AppBinary> = apps
        .iter()
        .map(|a| ((a.facts.package_name.as_str(), a.facts.version_code), a))
        .collect();

    let mut sensitivities = HashMap::new();
    let mut missing_providers = Vec::new();
    for r in classification.records.iter().filter(|r| r.protection_level == ProtectionLevel::Normal) {
        let Some(app) = defining.get(&(r.defining_package.as_str(), r.version_code)) else { continue };
        for c in r.guarded_components.iter().filter(|c| c.kind == ComponentKind::Provider && c.exported) {
            let key = (r.defining_package.clone(), c.class_name.clone());
            if sensitivities.contains_key(&key) {
                continue;
            }
            match crate::dex::extract_provider_columns(&app.dex, &c.class_name) {
                Ok(s) => {
                    sensitivities.insert(key, s);
                }
                Err(_) => missing_providers.push(key),
            }
        }
    }

    let wanted: BTreeSet<&str> = eligible.iter().map(|e| e.permission.as_str()).collect();
    let requesters: Vec<Requester> = latest
        .values()
        .filter(|a| a.facts.requested_permissions.iter().any(|p| wanted.contains(p.as_str())))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|a| {
            let mut call_sites = crate::dex::scan_call_sites(&a.dex).call_sites;
            for s in &mut call_sites {
                s.attribution = crate::dex::attribute_call_site(&s.declaring_class, &a.facts.package_name, sdk_prefixes);
            }
            Requester {
                facts: a.facts.clone(),
                call_sites,
            }
        })
        .collect();

    let pairs = link_pairs(&eligible, &requesters, &sensitivities, keywords);
    PairRun {
        classification,
        eligible,
        pairs,
        missing_providers,
    }
}
