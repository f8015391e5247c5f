//! Human-readable permission labels.

use std::collections::BTreeMap;
use std::path::Path;

use crate::catalog::{canonical_permission, short_name};

pub const DEFAULT_LABELS: &str = include_str!("../data/permission_labels.tsv");

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PermissionLabels {
    labels: BTreeMap<String, String>,
}

impl PermissionLabels {
    /// Parses `permission<TAB>label` lines; malformed lines are skipped.
    pub fn parse(text: &str) -> Self {
        let labels = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .filter_map(|l| {
                let (p, label) = l.split_once('\t')?;
                let label = label.trim();
                (!p.trim().is_empty() && !label.is_empty()).then(|| (canonical_permission(p), label.to_string()))
            })
            .collect();
        PermissionLabels { labels }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn default_labels() -> Self {
        Self::parse(DEFAULT_LABELS)
    }

    /// Shipped label, or the title-cased short name.
    pub fn label(&self, permission: &str) -> String {
        if let Some(l) = self.labels.get(permission) {
            return l.clone();
        }
        short_name(permission)
            .split('_')
            .filter(|w| !w.is_empty())
            .map(|w| {
                let mut c = w.chars();
                let first = c.next().map(|f| f.to_ascii_uppercase()).into_iter();
                first.chain(c.flat_map(char::to_lowercase)).collect::<String>()
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}
