//! Canonical platform permission names with protection levels, keyed by
//! the year each permission appeared.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::catalog::canonical_permission;
use crate::manifest::ProtectionLevel;

pub const DEFAULT_AOSP_LIST: &str = include_str!("../data/aosp_permissions.tsv");

#[derive(Debug, Error)]
pub enum AospListError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid permission list:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AospEntry {
    pub permission: String,
    pub level: ProtectionLevel,
    pub year_added: i32,
    pub year_removed: Option<i32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AospList {
    entries: BTreeMap<String, AospEntry>,
}

fn parse_level(s: &str) -> Option<ProtectionLevel> {
    Some(match s {
        "normal" => ProtectionLevel::Normal,
        "dangerous" => ProtectionLevel::Dangerous,
        "signature" => ProtectionLevel::Signature,
        "other" => ProtectionLevel::Other,
        _ => return None,
    })
}

impl AospList {
    pub fn parse(text: &str) -> Result<Self, AospListError> {
        let mut problems = Vec::new();
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("");
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            let n = i + 1;
            let (Some(name), Some(level)) = (cols.first(), cols.get(1)) else {
                problems.push(format!("line {n}: expected name and level"));
                continue;
            };
            let Some(level) = parse_level(level) else {
                problems.push(format!("line {n}: unknown protection level {level:?}"));
                continue;
            };
            let year = |k: usize| cols.get(k).filter(|s| !s.is_empty()).map(|s| s.parse::<i32>());
            let added = match year(2) {
                None => 0,
                Some(Ok(y)) => y,
                Some(Err(_)) => {
                    problems.push(format!("line {n}: bad year_added"));
                    continue;
                }
            };
            let removed = match year(3) {
                None => None,
                Some(Ok(y)) if y > added => Some(y),
                Some(_) => {
                    problems.push(format!("line {n}: bad year_removed"));
                    continue;
                }
            };
            let permission = canonical_permission(name);
            entries.insert(
                permission.clone(),
                AospEntry {
                    permission,
                    level,
                    year_added: added,
                    year_removed: removed,
                },
            );
        }
        if problems.is_empty() {
            Ok(AospList { entries })
        } else {
            Err(AospListError::Invalid(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self, AospListError> {
        let text = std::fs::read_to_string(path).map_err(|source| AospListError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn default_list() -> Self {
        Self::parse(DEFAULT_AOSP_LIST).expect("shipped list is valid")
    }

    /// True when the name appears in the list for any release.
    pub fn contains(&self, permission: &str) -> bool {
        self.entries.contains_key(permission)
    }

    pub fn level(&self, permission: &str) -> Option<ProtectionLevel> {
        self.entries.get(permission).map(|e| e.level)
    }

    /// Level of a permission that exists in `year`.
    pub fn level_in(&self, permission: &str, year: i32) -> Option<ProtectionLevel> {
        self.entries
            .get(permission)
            .filter(|e| e.year_added <= year && e.year_removed.map_or(true, |r| year < r))
            .map(|e| e.level)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
