//! Update-time transparency monitor: permission snapshots per package and
//! a notification whenever an update adds a permission to a group the
//! user already allowed.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::GroupCatalog;
use crate::labels::PermissionLabels;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error("replaced event for unknown package {0}")]
    UnknownPackage(String),
    #[error("event {index} at {timestamp} is earlier than its predecessor")]
    OutOfOrder { index: usize, timestamp: String },
    #[error("bad timestamp {0:?}")]
    BadTimestamp(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Added,
    Replaced,
}

/// One line of a package lifecycle log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageEvent {
    pub timestamp: String,
    pub event: EventKind,
    pub package: String,
    pub version_code: u64,
    #[serde(default)]
    pub permissions: BTreeSet<String>,
    #[serde(default)]
    pub granted_groups: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version_code: u64,
    pub requested_permissions: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationRecord {
    pub package: String,
    pub version_code: u64,
    pub permission: String,
    pub group: String,
    pub human_label: String,
    pub settings_link_hint: String,
    pub timestamp: String,
}

impl NotificationRecord {
    pub fn text(&self) -> String {
        format!(
            "{} added {} under the already-allowed {} access. Open {} to review.",
            self.package, self.human_label, self.group, self.settings_link_hint
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorState {
    pub snapshots: BTreeMap<String, Snapshot>,
    pub seen: BTreeSet<(String, u64)>,
    pub notifications: Vec<NotificationRecord>,
    /// Replaced events that arrived without a snapshot; treated as added.
    pub unknown_packages: Vec<String>,
}

/// Parses RFC 3339, `YYYY-MM-DDTHH:MM:SS` (UTC) or a bare date.
pub fn parse_timestamp(ts: &str) -> Result<DateTime<Utc>, MonitorError> {
    let ts = ts.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(ts) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(ts, fmt) {
            return Ok(t.and_utc());
        }
    }
    NaiveDate::parse_from_str(ts, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
        .map_err(|_| MonitorError::BadTimestamp(ts.to_string()))
}

pub struct Monitor<'a> {
    pub catalog: &'a GroupCatalog,
    pub labels: &'a PermissionLabels,
    /// Catalog year; the event's own year when unset.
    pub year: Option<i32>,
}

impl Monitor<'_> {
    /// Applies one lifecycle event and returns the notifications it raised.
    pub fn on_package_event(&self, state: &mut MonitorState, ev: &PackageEvent) -> Result<Vec<NotificationRecord>, MonitorError> {
        let key = (ev.package.clone(), ev.version_code);
        if state.seen.contains(&key) {
            return Ok(Vec::new());
        }
        let year = match self.year {
            Some(y) => y,
            None => parse_timestamp(&ev.timestamp)?.year(),
        };
        state.seen.insert(key);
        let snapshot = Snapshot {
            version_code: ev.version_code,
            requested_permissions: ev.permissions.clone(),
        };
        let previous = state.snapshots.insert(ev.package.clone(), snapshot);
        let previous = match (ev.event, previous) {
            (EventKind::Added, _) => return Ok(Vec::new()),
            (EventKind::Replaced, None) => {
                state.unknown_packages.push(ev.package.clone());
                return Ok(Vec::new());
            }
            (EventKind::Replaced, Some(p)) => p,
        };
        let prior_groups: BTreeSet<&str> = previous
            .requested_permissions
            .iter()
            .filter_map(|p| self.catalog.group_of(p, year))
            .collect();
        let mut out = Vec::new();
        for p in ev.permissions.difference(&previous.requested_permissions) {
            let Some(g) = self.catalog.group_of(p, year) else { continue };
            if !ev.granted_groups.contains(g) || !prior_groups.contains(g) {
                continue;
            }
            out.push(NotificationRecord {
                package: ev.package.clone(),
                version_code: ev.version_code,
                permission: p.clone(),
                group: g.to_string(),
                human_label: self.labels.label(p),
                settings_link_hint: format!("Settings > Apps > {} > Permissions", ev.package),
                timestamp: ev.timestamp.clone(),
            });
        }
        state.notifications.extend(out.iter().cloned());
        Ok(out)
    }

    /// Replays a time-ordered log and summarises the notifications.
    pub fn replay_log(&self, state: &mut MonitorState, events: &[PackageEvent]) -> Result<DeploymentSummary, MonitorError> {
        let mut times = Vec::with_capacity(events.len());
        for (i, e) in events.iter().enumerate() {
            let t = parse_timestamp(&e.timestamp)?;
            if times.last().is_some_and(|&prev| t < prev) {
                return Err(MonitorError::OutOfOrder {
                    index: i,
                    timestamp: e.timestamp.clone(),
                });
            }
            times.push(t);
        }
        let mut notified = Vec::new();
        for e in events {
            notified.extend(self.on_package_event(state, e)?);
        }
        let span_days = match (times.first(), times.last()) {
            (Some(a), Some(b)) => (*b - *a).num_seconds() as f64 / 86_400.0,
            _ => 0.0,
        };
        Ok(DeploymentSummary::new(&notified, span_days))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentSummary {
    pub events: u64,
    pub apps: u64,
    pub span_days: f64,
    /// span_days / events, undefined below two events.
    pub mean_gap_days: Option<f64>,
}

impl DeploymentSummary {
    pub fn new(notifications: &[NotificationRecord], span_days: f64) -> Self {
        let apps: BTreeSet<&str> = notifications.iter().map(|n| n.package.as_str()).collect();
        let n = notifications.len() as u64;
        DeploymentSummary {
            events: n,
            apps: apps.len() as u64,
            span_days,
            mean_gap_days: (n >= 2).then(|| span_days / n as f64),
        }
    }
}

/// Expected notifications per week.
pub fn estimate_burden(app_count: f64, additions_per_app_per_year: f64) -> f64 {
    app_count * additions_per_app_per_year / 52.0
}
