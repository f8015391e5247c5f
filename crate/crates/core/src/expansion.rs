//! Version chains, silent within-group expansion events, and their
//! aggregation into flows, per-group volumes, yearly trends and market
//! strata.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::GroupCatalog;
use crate::manifest::ApkFacts;

pub const PLAY_MARKET: &str = "play.google.com";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionChain {
    pub package_name: String,
    pub versions: Vec<ApkFacts>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChainSet {
    pub chains: Vec<VersionChain>,
    /// Packages left with a single version.
    pub single_version_dropped: usize,
    /// Records skipped because no metadata row was attached.
    pub missing_metadata: usize,
    /// Records repeating an APK digest already seen.
    pub duplicate_records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExpansionEvent {
    pub package_name: String,
    pub from_version: u64,
    pub to_version: u64,
    pub group: String,
    pub added_permission: String,
    pub prior_members: BTreeSet<String>,
    pub year: i32,
    pub cross_market: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub group: String,
    pub from_permission: String,
    pub to_permission: String,
    pub count: u64,
}

fn version_key(v: &ApkFacts) -> (u64, i32, &str) {
    (v.version_code, v.dex_year.unwrap_or(i32::MIN), v.sha256.as_str())
}

/// Groups records by package and orders each package's versions.
pub fn build_chains<I: IntoIterator<Item = ApkFacts>>(records: I) -> ChainSet {
    let mut out = ChainSet::default();
    let mut by_pkg: BTreeMap<String, Vec<ApkFacts>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in records {
        if !r.has_metadata() {
            out.missing_metadata += 1;
            continue;
        }
        if !r.sha256.is_empty() && !seen.insert(r.sha256.clone()) {
            out.duplicate_records += 1;
            continue;
        }
        by_pkg.entry(r.package_name.clone()).or_default().push(r);
    }
    for (pkg, mut versions) in by_pkg {
        if versions.len() < 2 {
            out.single_version_dropped += 1;
            continue;
        }
        versions.sort_by(|a, b| version_key(a).cmp(&version_key(b)));
        out.chains.push(VersionChain {
            package_name: pkg,
            versions,
        });
    }
    out
}

fn cross_market(a: &ApkFacts, b: &ApkFacts) -> bool {
    !a.markets.is_empty() && !b.markets.is_empty() && a.markets.is_disjoint(&b.markets)
}

/// Expansion events of one adjacent version pair.
pub fn diff_pair(package: &str, earlier: &ApkFacts, later: &ApkFacts, year: i32, catalog: &GroupCatalog) -> Vec<ExpansionEvent> {
    let mut events = Vec::new();
    for added in later.requested_permissions.difference(&earlier.requested_permissions) {
        let Some(group) = catalog.group_of(added, year) else { continue };
        let prior: BTreeSet<String> = earlier
            .requested_permissions
            .iter()
            .filter(|p| catalog.group_of(p, year) == Some(group))
            .cloned()
            .collect();
        if prior.is_empty() {
            continue;
        }
        events.push(ExpansionEvent {
            package_name: package.to_string(),
            from_version: earlier.version_code,
            to_version: later.version_code,
            group: group.to_string(),
            added_permission: added.clone(),
            prior_members: prior,
            year,
            cross_market: cross_market(earlier, later),
        });
    }
    events
}

/// Events for every adjacent pair of the chain, with the catalog
/// evaluated at the later version's year.
pub fn detect_expansions(chain: &VersionChain, catalog: &GroupCatalog) -> Vec<ExpansionEvent> {
    chain
        .versions
        .windows(2)
        .flat_map(|w| {
            let year = w[1].dex_year.or(w[0].dex_year).unwrap_or_default();
            diff_pair(&chain.package_name, &w[0], &w[1], year, catalog)
        })
        .collect()
}

/// Directed (prior member, added permission) counts.
pub fn flow_table(events: &[ExpansionEvent]) -> Vec<FlowEntry> {
    let mut counts: BTreeMap<(&str, &str, &str), u64> = BTreeMap::new();
    for e in events {
        for m in &e.prior_members {
            *counts.entry((&e.group, m, &e.added_permission)).or_default() += 1;
        }
    }
    let mut out: Vec<FlowEntry> = counts
        .into_iter()
        .map(|((g, from, to), count)| FlowEntry {
            group: g.to_string(),
            from_permission: from.to_string(),
            to_permission: to.to_string(),
            count,
        })
        .collect();
    out.sort_by(|a, b| {
        a.group
            .cmp(&b.group)
            .then(b.count.cmp(&a.count))
            .then_with(|| a.from_permission.cmp(&b.from_permission))
            .then_with(|| a.to_permission.cmp(&b.to_permission))
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupVolume {
    pub group: String,
    pub expanding_apps: u64,
    pub events: u64,
    pub percent_of_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearTrend {
    pub year: i32,
    pub expanding_apps: u64,
    pub events: u64,
    pub mean_per_app: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketStratum {
    PlayOnly,
    NonPlayOnly,
    Mixed,
    Unknown,
}

impl MarketStratum {
    pub fn of(chain: &VersionChain) -> Self {
        let markets: BTreeSet<&str> = chain
            .versions
            .iter()
            .flat_map(|v| v.markets.iter().map(String::as_str))
            .collect();
        if markets.is_empty() {
            MarketStratum::Unknown
        } else if markets.iter().all(|&m| m == PLAY_MARKET) {
            MarketStratum::PlayOnly
        } else if markets.contains(PLAY_MARKET) {
            MarketStratum::Mixed
        } else {
            MarketStratum::NonPlayOnly
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MarketStratum::PlayOnly => "play_only",
            MarketStratum::NonPlayOnly => "non_play_only",
            MarketStratum::Mixed => "mixed",
            MarketStratum::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketShare {
    pub stratum: MarketStratum,
    pub apps: u64,
    pub expanding_apps: u64,
    pub events: u64,
    /// expanding_apps / apps, 0 when the stratum is empty.
    pub expanding_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionSummary {
    pub chains: u64,
    pub expanding_apps: u64,
    pub total_events: u64,
    pub mean_events_per_expanding_app: f64,
    pub groups: Vec<GroupVolume>,
    pub years: Vec<YearTrend>,
    pub markets: Vec<MarketShare>,
    /// Events whose two versions come from disjoint markets.
    pub cross_market_events: u64,
    /// Expanding apps with at least one cross-market event.
    pub cross_market_apps: u64,
}

/// Partial counts that merge by addition, one per worker.
#[derive(Debug, Clone, Default)]
pub struct Accumulator {
    chains: u64,
    expanding_apps: u64,
    events: u64,
    group_apps: BTreeMap<String, u64>,
    group_events: BTreeMap<String, u64>,
    year_apps: BTreeMap<i32, u64>,
    year_events: BTreeMap<i32, u64>,
    market: BTreeMap<MarketStratum, (u64, u64, u64)>,
    cross_events: u64,
    cross_apps: u64,
}

impl Accumulator {
    pub fn add_chain(&mut self, chain: &VersionChain, events: &[ExpansionEvent]) {
        self.chains += 1;
        let m = self.market.entry(MarketStratum::of(chain)).or_default();
        m.0 += 1;
        if events.is_empty() {
            return;
        }
        m.1 += 1;
        m.2 += events.len() as u64;
        self.expanding_apps += 1;
        self.events += events.len() as u64;
        let groups: BTreeSet<&str> = events.iter().map(|e| e.group.as_str()).collect();
        for g in groups {
            *self.group_apps.entry(g.to_string()).or_default() += 1;
        }
        let years: BTreeSet<i32> = events.iter().map(|e| e.year).collect();
        for y in years {
            *self.year_apps.entry(y).or_default() += 1;
        }
        for e in events {
            *self.group_events.entry(e.group.clone()).or_default() += 1;
            *self.year_events.entry(e.year).or_default() += 1;
        }
        let cross = events.iter().filter(|e| e.cross_market).count() as u64;
        self.cross_events += cross;
        self.cross_apps += u64::from(cross > 0);
    }

    pub fn merge(mut self, other: Accumulator) -> Accumulator {
        self.chains += other.chains;
        self.expanding_apps += other.expanding_apps;
        self.events += other.events;
        for (k, v) in other.group_apps {
            *self.group_apps.entry(k).or_default() += v;
        }
        for (k, v) in other.group_events {
            *self.group_events.entry(k).or_default() += v;
        }
        for (k, v) in other.year_apps {
            *self.year_apps.entry(k).or_default() += v;
        }
        for (k, v) in other.year_events {
            *self.year_events.entry(k).or_default() += v;
        }
        for (k, (a, b, c)) in other.market {
            let m = self.market.entry(k).or_default();
            m.0 += a;
            m.1 += b;
            m.2 += c;
        }
        self.cross_events += other.cross_events;
        self.cross_apps += other.cross_apps;
        self
    }

    pub fn finish(self) -> ExpansionSummary {
        let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let mut groups: Vec<GroupVolume> = self
            .group_events
            .iter()
            .map(|(g, &n)| GroupVolume {
                group: g.clone(),
                expanding_apps: self.group_apps.get(g).copied().unwrap_or(0),
                events: n,
                percent_of_total: 100.0 * ratio(n, self.events),
            })
            .collect();
        groups.sort_by(|a, b| b.events.cmp(&a.events).then_with(|| a.group.cmp(&b.group)));
        let years = self
            .year_events
            .iter()
            .map(|(&y, &n)| {
                let apps = self.year_apps.get(&y).copied().unwrap_or(0);
                YearTrend {
                    year: y,
                    expanding_apps: apps,
                    events: n,
                    mean_per_app: ratio(n, apps),
                }
            })
            .collect();
        let markets = self
            .market
            .iter()
            .map(|(&stratum, &(apps, exp, ev))| MarketShare {
                stratum,
                apps,
                expanding_apps: exp,
                events: ev,
                expanding_share: ratio(exp, apps),
            })
            .collect();
        ExpansionSummary {
            chains: self.chains,
            expanding_apps: self.expanding_apps,
            total_events: self.events,
            mean_events_per_expanding_app: ratio(self.events, self.expanding_apps),
            groups,
            years,
            markets,
            cross_market_events: self.cross_events,
            cross_market_apps: self.cross_apps,
        }
    }
}

/// Summary of already-detected events, looked up per chain.
pub fn aggregate(events: &[ExpansionEvent], chains: &[VersionChain]) -> ExpansionSummary {
    let mut by_pkg: BTreeMap<&str, Vec<ExpansionEvent>> = BTreeMap::new();
    for e in events {
        by_pkg.entry(&e.package_name).or_default().push(e.clone());
    }
    let mut acc = Accumulator::default();
    for c in chains {
        acc.add_chain(c, by_pkg.get(c.package_name.as_str()).map_or(&[], Vec::as_slice));
    }
    acc.finish()
}

/// Detects and aggregates across chains in parallel. Events come back
/// in chain order.
pub fn analyze(chains: &[VersionChain], catalog: &GroupCatalog) -> (Vec<ExpansionEvent>, ExpansionSummary) {
    let per_chain: Vec<Vec<ExpansionEvent>> = chains.par_iter().map(|c| detect_expansions(c, catalog)).collect();
    let acc = chains
        .par_iter()
        .zip(per_chain.par_iter())
        .fold(Accumulator::default, |mut acc, (c, ev)| {
            acc.add_chain(c, ev);
            acc
        })
        .reduce(Accumulator::default, Accumulator::merge);
    (per_chain.into_iter().flatten().collect(), acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn facts(pkg: &str, vc: u64, year: i32, perms: &[&str]) -> ApkFacts {
        let mut f = ApkFacts::new(pkg, vc);
        f.sha256 = format!("{pkg}-{vc}-{year}");
        f.dex_year = Some(year);
        f.requested_permissions = perms.iter().map(|p| format!("android.permission.{p}")).collect();
        f
    }

    fn chain(versions: Vec<ApkFacts>) -> VersionChain {
        VersionChain {
            package_name: versions[0].package_name.clone(),
            versions,
        }
    }

    #[test]
    fn chains_sort_by_version_code() {
        let set = build_chains(vec![facts("a", 3, 2020, &[]), facts("a", 1, 2020, &[]), facts("a", 2, 2020, &[])]);
        let codes: Vec<u64> = set.chains[0].versions.iter().map(|v| v.version_code).collect();
        assert_eq!(codes, vec![1, 2, 3]);
    }

    #[test]
    fn version_code_ties_break_on_sha() {
        let mut x = facts("a", 1, 2020, &[]);
        x.sha256 = "bb".into();
        let mut y = facts("a", 1, 2020, &[]);
        y.sha256 = "aa".into();
        let set = build_chains(vec![x, y]);
        assert_eq!(set.chains[0].versions[0].sha256, "aa");
    }

    #[test]
    fn single_versions_are_dropped_and_counted() {
        let mut recs = vec![facts("a", 1, 2020, &[]), facts("a", 2, 2020, &[]), facts("b", 1, 2020, &[])];
        recs.extend([facts("b", 2, 2020, &[]), facts("c", 1, 2020, &[]), facts("d", 1, 2020, &[]), facts("e", 1, 2020, &[])]);
        let set = build_chains(recs);
        assert_eq!((set.chains.len(), set.single_version_dropped), (2, 3));
    }

    #[test]
    fn records_without_metadata_are_skipped() {
        let mut bare = facts("a", 3, 2020, &[]);
        bare.dex_year = None;
        let set = build_chains(vec![facts("a", 1, 2020, &[]), facts("a", 2, 2020, &[]), bare]);
        assert_eq!(set.missing_metadata, 1);
        assert_eq!(set.chains[0].versions.len(), 2);
    }

    #[test]
    fn sms_read_to_send() {
        let c = GroupCatalog::default_catalog();
        let ev = detect_expansions(&chain(vec![facts("p", 1, 2020, &["READ_SMS"]), facts("p", 2, 2020, &["READ_SMS", "SEND_SMS"])]), &c);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].group, "SMS");
        assert_eq!(ev[0].added_permission, "android.permission.SEND_SMS");
        assert_eq!(ev[0].prior_members, BTreeSet::from(["android.permission.READ_SMS".to_string()]));
        let flows = flow_table(&ev);
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].count, 1);
    }

    #[test]
    fn first_time_group_is_not_an_expansion() {
        let c = GroupCatalog::default_catalog();
        let ev = detect_expansions(&chain(vec![facts("p", 1, 2020, &["INTERNET"]), facts("p", 2, 2020, &["INTERNET", "READ_CONTACTS"])]), &c);
        assert!(ev.is_empty());
    }

    #[test]
    fn reverse_media_path() {
        let c = GroupCatalog::default_catalog();
        let ev = detect_expansions(
            &chain(vec![facts("p", 1, 2023, &["READ_MEDIA_IMAGES"]), facts("p", 2, 2023, &["READ_MEDIA_IMAGES", "READ_EXTERNAL_STORAGE"])]),
            &c,
        );
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].group, "STORAGE");
    }

    #[test]
    fn later_year_governs_membership() {
        let c = GroupCatalog::default_catalog();
        // PHONE in 2017, CALL_LOG from 2018: READ_PHONE_STATE no longer shares a group
        let ev = detect_expansions(
            &chain(vec![facts("p", 1, 2017, &["READ_PHONE_STATE"]), facts("p", 2, 2018, &["READ_PHONE_STATE", "READ_CALL_LOG"])]),
            &c,
        );
        assert!(ev.is_empty());
        let ev = detect_expansions(
            &chain(vec![facts("p", 1, 2016, &["READ_PHONE_STATE"]), facts("p", 2, 2017, &["READ_PHONE_STATE", "READ_CALL_LOG"])]),
            &c,
        );
        assert_eq!(ev.len(), 1);
    }

    #[test]
    fn two_prior_members_give_two_flows() {
        let c = GroupCatalog::default_catalog();
        let ev = detect_expansions(
            &chain(vec![
                facts("p", 1, 2020, &["READ_CONTACTS", "GET_ACCOUNTS"]),
                facts("p", 2, 2020, &["READ_CONTACTS", "GET_ACCOUNTS", "WRITE_CONTACTS"]),
            ]),
            &c,
        );
        let flows = flow_table(&ev);
        assert_eq!(flows.len(), 2);
        assert!(flows.iter().all(|f| f.count == 1 && f.to_permission.ends_with("WRITE_CONTACTS")));
        assert!(flow_table(&[]).is_empty());
    }

    #[test]
    fn cross_market_needs_disjoint_nonempty_sets() {
        let c = GroupCatalog::default_catalog();
        let mut a = facts("p", 1, 2020, &["READ_SMS"]);
        let mut b = facts("p", 2, 2020, &["READ_SMS", "SEND_SMS"]);
        a.markets.insert(PLAY_MARKET.into());
        b.markets.insert("anzhi".into());
        let ev = detect_expansions(&chain(vec![a.clone(), b.clone()]), &c);
        assert!(ev[0].cross_market);
        b.markets.insert(PLAY_MARKET.into());
        assert!(!detect_expansions(&chain(vec![a, b]), &c)[0].cross_market);
    }

    #[test]
    fn empty_summary_is_all_zero() {
        let s = aggregate(&[], &[]);
        assert_eq!((s.expanding_apps, s.total_events), (0, 0));
        assert_eq!(s.mean_events_per_expanding_app, 0.0);
        assert!(s.groups.is_empty());
    }

    #[test]
    fn summary_counts() {
        let c = GroupCatalog::default_catalog();
        let mut chains = Vec::new();
        for i in 0..8 {
            chains.push(chain(vec![facts(&format!("q{i}"), 1, 2020, &["INTERNET"]), facts(&format!("q{i}"), 2, 2020, &["INTERNET"])]));
        }
        chains.push(chain(vec![
            facts("x", 1, 2020, &["READ_SMS"]),
            facts("x", 2, 2021, &["READ_SMS", "SEND_SMS", "RECEIVE_SMS"]),
        ]));
        chains.push(chain(vec![
            facts("y", 1, 2020, &["READ_CONTACTS", "ACCESS_COARSE_LOCATION"]),
            facts("y", 2, 2022, &["READ_CONTACTS", "WRITE_CONTACTS", "ACCESS_COARSE_LOCATION", "ACCESS_FINE_LOCATION"]),
            facts("y", 3, 2022, &["READ_CONTACTS", "WRITE_CONTACTS", "GET_ACCOUNTS", "ACCESS_COARSE_LOCATION", "ACCESS_FINE_LOCATION"]),
        ]));
        let (events, s) = analyze(&chains, &c);
        assert_eq!(events.len(), 5);
        assert_eq!((s.chains, s.expanding_apps, s.total_events), (10, 2, 5));
        assert!((s.mean_events_per_expanding_app - 2.5).abs() < 1e-12);
        let pct: f64 = s.groups.iter().map(|g| g.percent_of_total).sum();
        assert!((pct - 100.0).abs() < 1e-9);
        assert_eq!(s, aggregate(&events, &chains));
    }

    const POOL: [&str; 8] = [
        "READ_SMS",
        "SEND_SMS",
        "READ_CONTACTS",
        "WRITE_CONTACTS",
        "ACCESS_FINE_LOCATION",
        "ACCESS_COARSE_LOCATION",
        "INTERNET",
        "CAMERA",
    ];

    proptest! {
        #[test]
        fn events_match_set_arithmetic(masks in proptest::collection::vec(0u8..=255, 2..6)) {
            let c = GroupCatalog::default_catalog();
            let versions: Vec<ApkFacts> = masks
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let perms: Vec<&str> = POOL.iter().enumerate().filter(|(b, _)| m & (1 << b) != 0).map(|(_, p)| *p).collect();
                    facts("p", i as u64, 2020, &perms)
                })
                .collect();
            let ev = detect_expansions(&chain(versions.clone()), &c);
            let mut expected = 0;
            for w in versions.windows(2) {
                for p in w[1].requested_permissions.difference(&w[0].requested_permissions) {
                    if let Some(g) = c.group_of(p, 2020) {
                        if w[0].requested_permissions.iter().any(|q| c.group_of(q, 2020) == Some(g)) {
                            expected += 1;
                        }
                    }
                }
            }
            prop_assert_eq!(ev.len(), expected);
            for e in &ev {
                prop_assert!(!e.prior_members.is_empty());
                prop_assert!(crate::catalog::GROUPS.contains(&e.group.as_str()));
            }
        }
    }
}
