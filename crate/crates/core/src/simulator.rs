//! Install/update grant semantics as a deterministic state machine.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aosp::AospList;
use crate::catalog::GroupCatalog;
use crate::manifest::{ApkFacts, PermissionDef, ProtectionLevel};

pub const DEFAULT_YEAR: i32 = 2025;

/// Dangerous permissions that sit outside the nine tracked groups.
const UNGROUPED_DANGEROUS: [&str; 3] = [
    "android.permission.CAMERA",
    "android.permission.RECORD_AUDIO",
    "android.permission.ACTIVITY_RECOGNITION",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("{0} is already installed")]
    AlreadyInstalled(String),
    #[error("{0} is not installed")]
    NotInstalled(String),
    #[error("{package} does not request {permission}")]
    NotRequested { package: String, permission: String },
    #[error("{0} is not a dangerous permission")]
    NotDangerous(String),
    #[error("{package}: version {new} is lower than installed {installed}")]
    DowngradeRejected { package: String, installed: u64, new: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ShownGranted,
    ShownDenied,
    AutoGranted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEvent {
    pub package: String,
    pub permission: String,
    pub outcome: Outcome,
    /// Group that justified an auto-grant.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub group: Option<String>,
}

/// Minimal app description used by scenarios.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppSpec {
    pub package_name: String,
    pub version_code: u64,
    #[serde(default)]
    pub requested_permissions: BTreeSet<String>,
    #[serde(default)]
    pub permission_defs: Vec<PermissionDef>,
    #[serde(default)]
    pub cert_digest: Option<String>,
}

impl AppSpec {
    pub fn new(package: &str, version_code: u64, permissions: &[&str]) -> Self {
        AppSpec {
            package_name: package.to_string(),
            version_code,
            requested_permissions: permissions.iter().map(|p| crate::catalog::canonical_permission(p)).collect(),
            permission_defs: Vec::new(),
            cert_digest: None,
        }
    }
}

impl From<&ApkFacts> for AppSpec {
    fn from(f: &ApkFacts) -> Self {
        AppSpec {
            package_name: f.package_name.clone(),
            version_code: f.version_code,
            requested_permissions: f.requested_permissions.clone(),
            permission_defs: f.permission_defs.clone(),
            cert_digest: f.cert_digest.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstalledApp {
    pub version_code: u64,
    pub requested_permissions: BTreeSet<String>,
    pub permission_defs: Vec<PermissionDef>,
    pub cert_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceState {
    pub installed: BTreeMap<String, InstalledApp>,
    /// package → permission → granted
    pub grants: BTreeMap<String, BTreeMap<String, bool>>,
    pub prompt_log: Vec<PromptEvent>,
    pub year: i32,
}

impl DeviceState {
    pub fn new(year: i32) -> Self {
        DeviceState {
            installed: BTreeMap::new(),
            grants: BTreeMap::new(),
            prompt_log: Vec::new(),
            year,
        }
    }

    pub fn is_granted(&self, package: &str, permission: &str) -> bool {
        self.grants
            .get(package)
            .and_then(|g| g.get(permission))
            .copied()
            .unwrap_or(false)
    }

    /// Groups with at least one granted member for `package`.
    pub fn granted_groups(&self, package: &str, catalog: &GroupCatalog) -> BTreeSet<String> {
        self.grants
            .get(package)
            .into_iter()
            .flatten()
            .filter(|(_, &g)| g)
            .filter_map(|(p, _)| catalog.group_of(p, self.year))
            .map(str::to_string)
            .collect()
    }
}

pub struct Simulator {
    pub catalog: GroupCatalog,
    pub aosp: AospList,
    pub state: DeviceState,
}

impl Simulator {
    pub fn new(catalog: GroupCatalog, aosp: AospList, year: i32) -> Self {
        Simulator {
            catalog,
            aosp,
            state: DeviceState::new(year),
        }
    }

    pub fn with_defaults() -> Self {
        Self::new(GroupCatalog::default_catalog(), AospList::default_list(), DEFAULT_YEAR)
    }

    fn group_of(&self, permission: &str) -> Option<&str> {
        self.catalog.group_of(permission, self.state.year)
    }

    /// First custom definition of `permission` among installed apps, in
    /// package order.
    fn custom_definition(&self, permission: &str) -> Option<(&str, &InstalledApp, ProtectionLevel)> {
        self.state.installed.iter().find_map(|(pkg, app)| {
            app.permission_defs
                .iter()
                .find(|d| d.name == permission)
                .map(|d| (pkg.as_str(), app, d.protection_level))
        })
    }

    pub fn level_of(&self, permission: &str) -> Option<ProtectionLevel> {
        if self.group_of(permission).is_some() || UNGROUPED_DANGEROUS.contains(&permission) {
            return Some(ProtectionLevel::Dangerous);
        }
        if let Some(l) = self.aosp.level(permission) {
            return Some(l);
        }
        self.custom_definition(permission).map(|(_, _, l)| l)
    }

    /// Grant decided without user interaction; false for anything that
    /// needs a prompt or cannot be held.
    fn install_time_grant(&self, app: &AppSpec, permission: &str) -> bool {
        match self.level_of(permission) {
            Some(ProtectionLevel::Normal) => true,
            Some(ProtectionLevel::Signature) => {
                if let Some(def) = app.permission_defs.iter().find(|d| d.name == permission) {
                    return def.protection_level == ProtectionLevel::Signature;
                }
                match self.custom_definition(permission) {
                    Some((_, definer, _)) => definer.cert_digest.is_some() && definer.cert_digest == app.cert_digest,
                    None => false,
                }
            }
            _ => false,
        }
    }

    pub fn install(&mut self, app: &AppSpec) -> Result<(), SimError> {
        if self.state.installed.contains_key(&app.package_name) {
            return Err(SimError::AlreadyInstalled(app.package_name.clone()));
        }
        // own definitions count when resolving the app's own requests
        self.state.installed.insert(app.package_name.clone(), installed(app));
        let grants = app
            .requested_permissions
            .iter()
            .map(|p| (p.clone(), self.install_time_grant(app, p)))
            .collect();
        self.state.grants.insert(app.package_name.clone(), grants);
        Ok(())
    }

    fn check_dangerous_request(&self, package: &str, permission: &str) -> Result<(), SimError> {
        let app = self
            .state
            .installed
            .get(package)
            .ok_or_else(|| SimError::NotInstalled(package.to_string()))?;
        if !app.requested_permissions.contains(permission) {
            return Err(SimError::NotRequested {
                package: package.to_string(),
                permission: permission.to_string(),
            });
        }
        if self.level_of(permission) != Some(ProtectionLevel::Dangerous) {
            return Err(SimError::NotDangerous(permission.to_string()));
        }
        Ok(())
    }

    fn answer(&mut self, package: &str, permission: &str, granted: bool) -> Result<(), SimError> {
        self.check_dangerous_request(package, permission)?;
        self.state
            .grants
            .entry(package.to_string())
            .or_default()
            .insert(permission.to_string(), granted);
        self.state.prompt_log.push(PromptEvent {
            package: package.to_string(),
            permission: permission.to_string(),
            outcome: if granted { Outcome::ShownGranted } else { Outcome::ShownDenied },
            group: None,
        });
        Ok(())
    }

    pub fn user_grant(&mut self, package: &str, permission: &str) -> Result<(), SimError> {
        self.answer(package, permission, true)
    }

    pub fn user_deny(&mut self, package: &str, permission: &str) -> Result<(), SimError> {
        self.answer(package, permission, false)
    }

    pub fn update(&mut self, app: &AppSpec) -> Result<(), SimError> {
        let old = self
            .state
            .installed
            .get(&app.package_name)
            .ok_or_else(|| SimError::NotInstalled(app.package_name.clone()))?
            .clone();
        if app.version_code < old.version_code {
            return Err(SimError::DowngradeRejected {
                package: app.package_name.clone(),
                installed: old.version_code,
                new: app.version_code,
            });
        }
        let before = self.state.grants.get(&app.package_name).cloned().unwrap_or_default();
        let granted_groups: BTreeSet<String> = before
            .iter()
            .filter(|(_, &g)| g)
            .filter_map(|(p, _)| self.group_of(p))
            .map(str::to_string)
            .collect();

        self.state.installed.insert(app.package_name.clone(), installed(app));
        let mut grants = BTreeMap::new();
        let mut events = Vec::new();
        for p in &app.requested_permissions {
            if let Some(&g) = before.get(p) {
                grants.insert(p.clone(), g);
                continue;
            }
            let level = self.level_of(p);
            let granted = if level == Some(ProtectionLevel::Dangerous) {
                match self.group_of(p) {
                    Some(g) if granted_groups.contains(g) => {
                        events.push(PromptEvent {
                            package: app.package_name.clone(),
                            permission: p.clone(),
                            outcome: Outcome::AutoGranted,
                            group: Some(g.to_string()),
                        });
                        true
                    }
                    _ => false,
                }
            } else {
                self.install_time_grant(app, p)
            };
            grants.insert(p.clone(), granted);
        }
        self.state.grants.insert(app.package_name.clone(), grants);
        self.state.prompt_log.extend(events);
        Ok(())
    }

    /// Revokes every granted member of `group` at once.
    pub fn revoke_group(&mut self, package: &str, group: &str) -> Result<(), SimError> {
        if !self.state.installed.contains_key(package) {
            return Err(SimError::NotInstalled(package.to_string()));
        }
        let year = self.state.year;
        if let Some(grants) = self.state.grants.get_mut(package) {
            for (p, g) in grants.iter_mut() {
                if self.catalog.group_of(p, year) == Some(group) {
                    *g = false;
                }
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, event: &ScenarioEvent) -> Result<(), SimError> {
        match event {
            ScenarioEvent::Install { app } => self.install(app),
            ScenarioEvent::UserGrant { package, permission } => self.user_grant(package, permission),
            ScenarioEvent::UserDeny { package, permission } => self.user_deny(package, permission),
            ScenarioEvent::Update { app } => self.update(app),
            ScenarioEvent::RevokeGroup { package, group } => self.revoke_group(package, group),
        }
    }
}

fn installed(app: &AppSpec) -> InstalledApp {
    InstalledApp {
        version_code: app.version_code,
        requested_permissions: app.requested_permissions.clone(),
        permission_defs: app.permission_defs.clone(),
        cert_digest: app.cert_digest.clone(),
    }
}

/// One line of a scenario file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ScenarioEvent {
    Install { app: AppSpec },
    UserGrant { package: String, permission: String },
    UserDeny { package: String, permission: String },
    Update { app: AppSpec },
    RevokeGroup { package: String, group: String },
}

/// Baseline and added permission per group for the paired scenario.
pub const NINE_GROUP_PAIRS: [(&str, &str, &str); 9] = [
    ("STORAGE", "READ_MEDIA_IMAGES", "READ_MEDIA_VIDEO"),
    ("LOCATION", "ACCESS_COARSE_LOCATION", "ACCESS_FINE_LOCATION"),
    ("PHONE", "READ_PHONE_STATE", "CALL_PHONE"),
    ("CONTACTS", "READ_CONTACTS", "WRITE_CONTACTS"),
    ("SMS", "READ_SMS", "SEND_SMS"),
    ("NEARBY_DEVICES", "BLUETOOTH_SCAN", "BLUETOOTH_CONNECT"),
    ("CALENDAR", "READ_CALENDAR", "WRITE_CALENDAR"),
    ("CALL_LOG", "READ_CALL_LOG", "WRITE_CALL_LOG"),
    ("SENSORS", "BODY_SENSORS", "BODY_SENSORS_BACKGROUND"),
];

/// Baseline phase (install and grant one member per group) and update
/// phase (each app adds a second member of the same group).
pub fn nine_group_scenario() -> (Vec<ScenarioEvent>, Vec<ScenarioEvent>) {
    let mut baseline = Vec::new();
    let mut updates = Vec::new();
    for (group, first, second) in NINE_GROUP_PAIRS {
        let pkg = format!("test.{}", group.to_ascii_lowercase());
        let v1 = AppSpec::new(&pkg, 1, &[first]);
        let v2 = AppSpec::new(&pkg, 2, &[first, second]);
        baseline.push(ScenarioEvent::Install { app: v1 });
        baseline.push(ScenarioEvent::UserGrant {
            package: pkg.clone(),
            permission: crate::catalog::canonical_permission(first),
        });
        updates.push(ScenarioEvent::Update { app: v2 });
    }
    (baseline, updates)
}

/// Applies events in order, stopping at the first failure.
pub fn run_scenario(sim: &mut Simulator, events: &[ScenarioEvent]) -> Result<(), (usize, SimError)> {
    for (i, e) in events.iter().enumerate() {
        sim.apply(e).map_err(|err| (i, err))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P: &str = "android.permission.";

    fn perm(s: &str) -> String {
        format!("{P}{s}")
    }

    #[test]
    fn install_time_rules() {
        let mut sim = Simulator::with_defaults();
        sim.install(&AppSpec::new("a", 1, &["INTERNET", "READ_CONTACTS"])).unwrap();
        assert!(sim.state.is_granted("a", &perm("INTERNET")));
        assert!(!sim.state.is_granted("a", &perm("READ_CONTACTS")));
        assert!(sim.state.prompt_log.is_empty());
        assert_eq!(sim.install(&AppSpec::new("a", 1, &[])), Err(SimError::AlreadyInstalled("a".into())));
    }

    #[test]
    fn custom_normal_is_granted_silently() {
        let mut sim = Simulator::with_defaults();
        let mut def = AppSpec::new("def", 1, &[]);
        def.permission_defs.push(PermissionDef {
            name: "com.x.P".into(),
            protection_level: ProtectionLevel::Normal,
            explicit_level: false,
        });
        sim.install(&def).unwrap();
        sim.install(&AppSpec::new("req", 1, &["com.x.P"])).unwrap();
        assert!(sim.state.is_granted("req", "com.x.P"));
        assert!(sim.state.prompt_log.is_empty());
    }

    #[test]
    fn custom_signature_needs_matching_cert() {
        let mut sim = Simulator::with_defaults();
        let mut def = AppSpec::new("def", 1, &[]);
        def.cert_digest = Some("k1".into());
        def.permission_defs.push(PermissionDef {
            name: "com.x.S".into(),
            protection_level: ProtectionLevel::Signature,
            explicit_level: true,
        });
        sim.install(&def).unwrap();
        let mut same = AppSpec::new("same", 1, &["com.x.S"]);
        same.cert_digest = Some("k1".into());
        let mut other = AppSpec::new("other", 1, &["com.x.S"]);
        other.cert_digest = Some("k2".into());
        sim.install(&same).unwrap();
        sim.install(&other).unwrap();
        assert!(sim.state.is_granted("same", "com.x.S"));
        assert!(!sim.state.is_granted("other", "com.x.S"));
    }

    #[test]
    fn user_grant_errors() {
        let mut sim = Simulator::with_defaults();
        sim.install(&AppSpec::new("a", 1, &["INTERNET", "READ_CONTACTS"])).unwrap();
        sim.user_grant("a", &perm("READ_CONTACTS")).unwrap();
        assert_eq!(sim.state.prompt_log.len(), 1);
        assert_eq!(sim.state.prompt_log[0].outcome, Outcome::ShownGranted);
        assert!(matches!(sim.user_grant("a", &perm("READ_SMS")), Err(SimError::NotRequested { .. })));
        assert!(matches!(sim.user_grant("a", &perm("INTERNET")), Err(SimError::NotDangerous(_))));
    }

    #[test]
    fn update_auto_grants_within_granted_group() {
        let mut sim = Simulator::with_defaults();
        sim.install(&AppSpec::new("a", 1, &["READ_MEDIA_IMAGES"])).unwrap();
        sim.user_grant("a", &perm("READ_MEDIA_IMAGES")).unwrap();
        let before = sim.state.prompt_log.len();
        sim.update(&AppSpec::new("a", 2, &["READ_MEDIA_IMAGES", "READ_MEDIA_VIDEO"])).unwrap();
        let new = &sim.state.prompt_log[before..];
        assert_eq!(new.len(), 1);
        assert_eq!(new[0].outcome, Outcome::AutoGranted);
        assert_eq!(new[0].group.as_deref(), Some("STORAGE"));
        assert!(sim.state.is_granted("a", &perm("READ_MEDIA_VIDEO")));
    }

    #[test]
    fn update_without_granted_group_stays_silent_and_ungranted() {
        let mut sim = Simulator::with_defaults();
        sim.install(&AppSpec::new("a", 1, &["INTERNET"])).unwrap();
        sim.update(&AppSpec::new("a", 2, &["INTERNET", "READ_CONTACTS"])).unwrap();
        assert!(!sim.state.is_granted("a", &perm("READ_CONTACTS")));
        assert!(sim.state.prompt_log.is_empty());
        assert!(matches!(sim.update(&AppSpec::new("a", 1, &[])), Err(SimError::DowngradeRejected { .. })));
    }

    #[test]
    fn revoke_group_is_all_or_nothing() {
        let mut sim = Simulator::with_defaults();
        sim.install(&AppSpec::new("a", 1, &["READ_MEDIA_IMAGES"])).unwrap();
        sim.user_grant("a", &perm("READ_MEDIA_IMAGES")).unwrap();
        sim.update(&AppSpec::new("a", 2, &["READ_MEDIA_IMAGES", "READ_MEDIA_VIDEO"])).unwrap();
        sim.revoke_group("a", "STORAGE").unwrap();
        assert!(!sim.state.is_granted("a", &perm("READ_MEDIA_IMAGES")));
        assert!(!sim.state.is_granted("a", &perm("READ_MEDIA_VIDEO")));
        sim.revoke_group("a", "CALENDAR").unwrap();
        let before = sim.state.prompt_log.len();
        sim.update(&AppSpec::new("a", 3, &["READ_MEDIA_IMAGES", "READ_MEDIA_VIDEO", "READ_MEDIA_AUDIO"])).unwrap();
        assert_eq!(sim.state.prompt_log.len(), before);
        assert!(!sim.state.is_granted("a", &perm("READ_MEDIA_AUDIO")));
    }

    #[test]
    fn nine_groups() {
        let mut sim = Simulator::with_defaults();
        let (baseline, updates) = nine_group_scenario();
        run_scenario(&mut sim, &baseline).unwrap();
        let mark = sim.state.prompt_log.len();
        run_scenario(&mut sim, &updates).unwrap();
        let phase = &sim.state.prompt_log[mark..];
        assert_eq!(phase.iter().filter(|e| e.outcome == Outcome::AutoGranted).count(), 9);
        assert_eq!(phase.iter().filter(|e| e.outcome != Outcome::AutoGranted).count(), 0);
        let groups: BTreeSet<_> = phase.iter().filter_map(|e| e.group.clone()).collect();
        assert_eq!(groups.len(), 9);
    }

    #[test]
    fn scenario_events_round_trip_json() {
        let (b, u) = nine_group_scenario();
        for e in b.iter().chain(&u) {
            let line = serde_json::to_string(e).unwrap();
            assert_eq!(&serde_json::from_str::<ScenarioEvent>(&line).unwrap(), e);
        }
    }

    const POOL: [&str; 6] = ["READ_SMS", "SEND_SMS", "READ_CONTACTS", "WRITE_CONTACTS", "INTERNET", "CAMERA"];

    fn spec_from_mask(v: u64, mask: u8) -> AppSpec {
        let perms: Vec<&str> = POOL.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, p)| *p).collect();
        AppSpec::new("p", v, &perms)
    }

    proptest! {
        // replaying the prompt log reproduces every dangerous grant
        #[test]
        fn grants_are_explained_by_the_log(steps in proptest::collection::vec((0u8..64, 0usize..6, proptest::bool::ANY, 0u8..3), 1..12)) {
            let mut sim = Simulator::with_defaults();
            sim.install(&spec_from_mask(0, 0)).unwrap();
            let mut v = 0;
            for (mask, pick, grant, revoke) in steps {
                v += 1;
                sim.update(&spec_from_mask(v, mask)).unwrap();
                let p = perm(POOL[pick]);
                if grant {
                    let _ = sim.user_grant("p", &p);
                }
                if revoke == 0 {
                    sim.revoke_group("p", "SMS").unwrap();
                }
            }
            for e in sim.state.prompt_log.iter().filter(|e| e.outcome == Outcome::AutoGranted) {
                prop_assert!(e.group.is_some());
            }
            let explained: BTreeSet<&str> = sim.state.prompt_log.iter()
                .filter(|e| e.outcome != Outcome::ShownDenied)
                .map(|e| e.permission.as_str())
                .collect();
            for (p, &g) in &sim.state.grants["p"] {
                if g && sim.level_of(p) == Some(ProtectionLevel::Dangerous) {
                    prop_assert!(explained.contains(p.as_str()), "{} granted without a prompt record", p);
                }
            }
        }
    }
}
