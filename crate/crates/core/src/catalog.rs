//! Year-keyed mapping from platform permissions to dangerous permission
//! groups.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use thiserror::Error;

/// The nine dangerous groups tracked by the catalog.
pub const GROUPS: [&str; 9] = [
    "STORAGE",
    "LOCATION",
    "PHONE",
    "CONTACTS",
    "SMS",
    "NEARBY_DEVICES",
    "CALENDAR",
    "CALL_LOG",
    "SENSORS",
];

pub const DEFAULT_CATALOG: &str = include_str!("../data/groups.tsv");

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid catalog:\n{}", .0.join("\n"))]
    CatalogInvalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CatalogEntry {
    pub permission: String,
    pub group: String,
    pub year_added: i32,
    pub year_removed: Option<i32>,
}

impl CatalogEntry {
    pub fn active_in(&self, year: i32) -> bool {
        self.year_added <= year && self.year_removed.map_or(true, |r| year < r)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupCatalog {
    entries: Vec<CatalogEntry>,
    by_permission: BTreeMap<String, Vec<usize>>,
}

/// Expands bare names such as `READ_SMS` to `android.permission.READ_SMS`.
pub fn canonical_permission(name: &str) -> String {
    let name = name.trim();
    if name.contains('.') {
        name.to_string()
    } else {
        format!("android.permission.{name}")
    }
}

/// Last dotted segment of a permission name.
pub fn short_name(name: &str) -> &str {
    name.rsplit('.').next().unwrap_or(name)
}

impl GroupCatalog {
    pub fn parse(text: &str) -> Result<Self, CatalogError> {
        let mut problems = Vec::new();
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("");
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() < 3 {
                problems.push(format!("line {line_no}: expected at least 3 tab-separated columns"));
                continue;
            }
            let Ok(added) = cols[2].parse::<i32>() else {
                problems.push(format!("line {line_no}: year_added {:?} is not a year", cols[2]));
                continue;
            };
            let removed = match cols.get(3).copied().filter(|s| !s.is_empty()) {
                None => None,
                Some(s) => match s.parse::<i32>() {
                    Ok(y) => Some(y),
                    Err(_) => {
                        problems.push(format!("line {line_no}: year_removed {s:?} is not a year"));
                        continue;
                    }
                },
            };
            if cols[0].is_empty() {
                problems.push(format!("line {line_no}: empty permission name"));
                continue;
            }
            if !GROUPS.contains(&cols[1]) {
                problems.push(format!("line {line_no}: unknown group {:?}", cols[1]));
                continue;
            }
            if let Some(r) = removed {
                if r <= added {
                    problems.push(format!("line {line_no}: year_removed {r} is not after year_added {added}"));
                    continue;
                }
            }
            entries.push((
                line_no,
                CatalogEntry {
                    permission: canonical_permission(cols[0]),
                    group: cols[1].to_string(),
                    year_added: added,
                    year_removed: removed,
                },
            ));
        }

        let mut by_permission: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (idx, (_, e)) in entries.iter().enumerate() {
            by_permission.entry(e.permission.clone()).or_default().push(idx);
        }
        for idxs in by_permission.values() {
            for (n, &i) in idxs.iter().enumerate() {
                for &j in &idxs[n + 1..] {
                    let (li, a) = &entries[i];
                    let (lj, b) = &entries[j];
                    let a_end = a.year_removed.unwrap_or(i32::MAX);
                    let b_end = b.year_removed.unwrap_or(i32::MAX);
                    if a.year_added < b_end && b.year_added < a_end {
                        problems.push(format!("lines {li} and {lj}: overlapping intervals for {}", a.permission));
                    }
                }
            }
        }
        if !problems.is_empty() {
            return Err(CatalogError::CatalogInvalid(problems));
        }
        Ok(GroupCatalog {
            entries: entries.into_iter().map(|(_, e)| e).collect(),
            by_permission,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The shipped catalog.
    pub fn default_catalog() -> Self {
        Self::parse(DEFAULT_CATALOG).expect("shipped catalog is valid")
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn group_of(&self, permission: &str, year: i32) -> Option<&str> {
        let idxs = self.by_permission.get(permission)?;
        idxs.iter()
            .map(|&i| &self.entries[i])
            .find(|e| e.active_in(year))
            .map(|e| e.group.as_str())
    }

    /// Permissions belonging to `group` in `year`.
    pub fn members(&self, group: &str, year: i32) -> BTreeSet<&str> {
        self.entries
            .iter()
            .filter(|e| e.group == group && e.active_in(year))
            .map(|e| e.permission.as_str())
            .collect()
    }

    /// Every permission that is grouped in at least one year.
    pub fn grouped_permissions(&self) -> impl Iterator<Item = &str> {
        self.by_permission.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_examples() {
        let c = GroupCatalog::default_catalog();
        for p in ["READ_CONTACTS", "WRITE_CONTACTS", "GET_ACCOUNTS"] {
            assert_eq!(c.group_of(&canonical_permission(p), 2020), Some("CONTACTS"));
        }
        let rcl = "android.permission.READ_CALL_LOG";
        assert_eq!(c.group_of(rcl, 2017), Some("PHONE"));
        assert_eq!(c.group_of(rcl, 2019), Some("CALL_LOG"));
        assert_eq!(c.group_of("android.permission.INTERNET", 2020), None);
        assert_eq!(c.group_of("android.permission.READ_MEDIA_IMAGES", 2023), Some("STORAGE"));
        assert_eq!(c.group_of("android.permission.READ_MEDIA_IMAGES", 2021), None);
        assert_eq!(c.group_of("android.permission.READ_EXTERNAL_STORAGE", 2023), Some("STORAGE"));
        assert_eq!(c.group_of("android.permission.BODY_SENSORS_BACKGROUND", 2022), Some("SENSORS"));
    }

    #[test]
    fn every_group_has_members_in_2025() {
        let c = GroupCatalog::default_catalog();
        for g in GROUPS {
            assert!(!c.members(g, 2025).is_empty(), "{g}");
        }
    }

    #[test]
    fn empty_file_is_empty_catalog() {
        let c = GroupCatalog::parse("").unwrap();
        assert!(c.is_empty());
        assert_eq!(c.group_of("android.permission.READ_SMS", 2020), None);
    }

    #[test]
    fn invalid_rows_are_all_listed() {
        let text = "READ_SMS\tSMS\t2010\t2005\nX\tCAMERA\t2010\t\nY\tSMS\t2010\t\nY\tPHONE\t2012\t\n";
        let Err(CatalogError::CatalogInvalid(rows)) = GroupCatalog::parse(text) else {
            panic!("expected CatalogInvalid")
        };
        assert_eq!(rows.len(), 3, "{rows:?}");
        assert!(rows[0].contains("line 1"));
        assert!(rows[1].contains("CAMERA"));
        assert!(rows[2].contains("overlapping"));
    }

    #[test]
    fn adjacent_intervals_do_not_overlap() {
        let text = "A\tPHONE\t2010\t2018\nA\tCALL_LOG\t2018\t\n";
        let c = GroupCatalog::parse(text).unwrap();
        assert_eq!(c.group_of("android.permission.A", 2017), Some("PHONE"));
        assert_eq!(c.group_of("android.permission.A", 2018), Some("CALL_LOG"));
    }
}
