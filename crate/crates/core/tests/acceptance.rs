//! Acceptance criteria, one line per criterion. Exits non-zero when any
//! criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};

use permwatch::aosp::AospList;
use permwatch::catalog::{canonical_permission, GroupCatalog, GROUPS};
use permwatch::custom::{pair_pipeline, KeywordMap};
use permwatch::dex::{default_sdk_prefixes, scan_call_sites};
use permwatch::expansion::{analyze, build_chains, flow_table, VersionChain};
use permwatch::labels::PermissionLabels;
use permwatch::manifest::{decode_axml, encode_axml, facts_from_manifest, parse_plaintext, ApkFacts};
use permwatch::monitor::{estimate_burden, EventKind, Monitor, MonitorState, PackageEvent};
use permwatch::simulator::{nine_group_scenario, run_scenario, Outcome, Simulator};
use permwatch::stats::{chi_squared, mantel_haenszel, odds_ratio, ContingencyTable};

type Verdict = Result<String, String>;

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(x: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&x)
}

// 1
fn statistics_reconstruction() -> Verdict {
    let t = ContingencyTable::new(6_225, 374_801, 22_690, 1_840_859);
    let or = odds_ratio(&t).map_err(|e| e.to_string())?;
    let (chi, p) = chi_squared(&t).map_err(|e| e.to_string())?;
    let expanding = t.a + t.b;
    let flagged_rate = (t.a + t.c) as f64 / t.n() as f64;
    check(
        expanding == 381_026 && t.n() == 2_244_575 && within(or, 1.34, 1.36) && (chi - 430.9).abs() <= 2.0 && (flagged_rate - 0.0129).abs() < 0.0001,
        format!("OR={or:.4} chi2={chi:.2} p={p:.1e} flagged rate={:.4}", flagged_rate),
    )
}

// 2
const TABLE5_CELLS: [(u64, u64, u64, u64); 4] = [
    (224, 59_325, 2_521, 620_423),
    (372, 51_857, 3_631, 395_169),
    (2_652, 136_374, 11_820, 425_501),
    (3_046, 127_176, 4_649, 399_835),
];
const TABLE5_ORS: [f64; 4] = [0.93, 0.78, 0.70, 2.06];
const TABLE5_SIZES: [u64; 4] = [682_493, 451_029, 576_347, 534_706];

fn mantel_haenszel_properties() -> Verdict {
    let single = ContingencyTable::new(6_225, 374_801, 22_690, 1_840_859);
    let mh1 = mantel_haenszel(&[single]).map_err(|e| e.to_string())?;
    let crude = odds_ratio(&single).map_err(|e| e.to_string())?;
    let single_ok = (mh1.odds_ratio - crude).abs() < 1e-12;

    let strata: Vec<ContingencyTable> = TABLE5_CELLS.iter().map(|&(a, b, c, d)| ContingencyTable::new(a, b, c, d)).collect();
    let mut per_stratum = Vec::new();
    for (t, (want, size)) in strata.iter().zip(TABLE5_ORS.iter().zip(TABLE5_SIZES)) {
        let or = odds_ratio(t).map_err(|e| e.to_string())?;
        if (or - want).abs() > 0.005 || t.n() != size {
            return Err(format!("stratum OR {or:.3} (want {want}) n={}", t.n()));
        }
        per_stratum.push(format!("{or:.2}"));
    }
    let pooled = mantel_haenszel(&strata).map_err(|e| e.to_string())?;
    check(
        single_ok && within(pooled.odds_ratio, 1.02, 1.08),
        format!(
            "single-stratum |MH-OR|<1e-12: {single_ok}; strata ORs [{}] pooled={:.3} CI [{:.3}, {:.3}]",
            per_stratum.join(", "),
            pooled.odds_ratio,
            pooled.ci_low,
            pooled.ci_high
        ),
    )
}

// 3
fn nine_group_auto_grant() -> Verdict {
    let mut sim = Simulator::with_defaults();
    let (baseline, updates) = nine_group_scenario();
    run_scenario(&mut sim, &baseline).map_err(|(i, e)| format!("baseline event {i}: {e}"))?;
    let mark = sim.state.prompt_log.len();
    run_scenario(&mut sim, &updates).map_err(|(i, e)| format!("update event {i}: {e}"))?;
    let phase = &sim.state.prompt_log[mark..];
    let auto = phase.iter().filter(|e| e.outcome == Outcome::AutoGranted).count();
    let shown = phase.len() - auto;
    let groups: BTreeSet<&str> = phase.iter().filter_map(|e| e.group.as_deref()).collect();
    check(
        auto == 9 && shown == 0 && groups.len() == 9,
        format!("auto_granted={auto} shown={shown} groups={}", groups.len()),
    )
}

// 4
struct Injected {
    chains: Vec<ApkFacts>,
    expansions: BTreeSet<(String, u64, String)>,
    flows: BTreeMap<(String, String, String), u64>,
}

fn generate_corpus(catalog: &GroupCatalog, seed: u64) -> Injected {
    let mut rng = StdRng::seed_from_u64(seed);
    let grouped: Vec<&str> = catalog.grouped_permissions().into_iter().collect();
    let normal = ["android.permission.INTERNET", "android.permission.VIBRATE", "android.permission.WAKE_LOCK"];
    let mut out = Injected {
        chains: Vec::new(),
        expansions: BTreeSet::new(),
        flows: BTreeMap::new(),
    };
    for p in 0..200 {
        let pkg = format!("gen.app{p:03}");
        let versions = rng.gen_range(2..=6);
        let mut year = rng.gen_range(2014..=2020);
        let mut perms: BTreeSet<String> = grouped.choose_multiple(&mut rng, 2).map(|s| s.to_string()).collect();
        perms.insert(normal[p % normal.len()].to_string());
        for v in 0..versions {
            let vc = 10 * (v as u64 + 1);
            if v > 0 {
                year += rng.gen_range(0..=1);
                let earlier = perms.clone();
                let present: BTreeSet<&str> = earlier.iter().filter_map(|q| catalog.group_of(q, year)).collect();
                if rng.gen_bool(0.2) && perms.len() > 1 {
                    let victim = perms.iter().choose(&mut rng).cloned().unwrap();
                    perms.remove(&victim);
                }
                if rng.gen_bool(0.6) {
                    for _ in 0..rng.gen_range(1..=2) {
                        let Some(&g) = present.iter().choose(&mut rng) else { break };
                        let Some(add) = catalog.members(g, year).into_iter().filter(|m| !earlier.contains(*m) && !perms.contains(*m)).choose(&mut rng) else {
                            continue;
                        };
                        perms.insert(add.to_string());
                        out.expansions.insert((pkg.clone(), vc, add.to_string()));
                        for prior in earlier.iter().filter(|q| catalog.group_of(q, year) == Some(g)) {
                            *out.flows.entry((g.to_string(), prior.clone(), add.to_string())).or_default() += 1;
                        }
                    }
                }
                if rng.gen_bool(0.4) {
                    let fresh = grouped
                        .iter()
                        .filter(|q| catalog.group_of(q, year).is_some_and(|g| !present.contains(g)) && !perms.contains(**q))
                        .choose(&mut rng);
                    if let Some(q) = fresh {
                        perms.insert(q.to_string());
                    }
                }
                if rng.gen_bool(0.3) {
                    perms.insert(normal.choose(&mut rng).unwrap().to_string());
                }
            }
            let mut f = ApkFacts::new(pkg.clone(), vc);
            f.sha256 = format!("{pkg}:{vc}");
            f.dex_year = Some(year);
            f.requested_permissions = perms.clone();
            out.chains.push(f);
        }
    }
    out
}

/// Set arithmetic over adjacent versions, independent of the analyzer.
fn brute_force(chains: &[VersionChain], catalog: &GroupCatalog) -> BTreeSet<(String, u64, String)> {
    let mut out = BTreeSet::new();
    for c in chains {
        for w in c.versions.windows(2) {
            let year = w[1].dex_year.unwrap();
            for g in GROUPS {
                let members: BTreeSet<&str> = catalog.members(g, year).into_iter().collect();
                let before: BTreeSet<&str> = w[0].requested_permissions.iter().map(String::as_str).filter(|p| members.contains(p)).collect();
                let after: BTreeSet<&str> = w[1].requested_permissions.iter().map(String::as_str).filter(|p| members.contains(p)).collect();
                if before.is_empty() {
                    continue;
                }
                for added in after.difference(&before) {
                    out.insert((c.package_name.clone(), w[1].version_code, added.to_string()));
                }
            }
        }
    }
    out
}

fn desk_scale_oracle() -> Verdict {
    let catalog = GroupCatalog::default_catalog();
    let corpus = generate_corpus(&catalog, 0x5eed);
    let set = build_chains(corpus.chains);
    let (events, summary) = analyze(&set.chains, &catalog);
    let detected: BTreeSet<(String, u64, String)> = events.iter().map(|e| (e.package_name.clone(), e.to_version, e.added_permission.clone())).collect();
    let oracle = brute_force(&set.chains, &catalog);
    let tp = detected.intersection(&corpus.expansions).count() as f64;
    let precision = if detected.is_empty() { 1.0 } else { tp / detected.len() as f64 };
    let recall = if corpus.expansions.is_empty() { 1.0 } else { tp / corpus.expansions.len() as f64 };
    let flows: BTreeMap<(String, String, String), u64> = flow_table(&events)
        .into_iter()
        .map(|f| ((f.group, f.from_permission, f.to_permission), f.count))
        .collect();
    check(
        set.chains.len() == 200 && precision == 1.0 && recall == 1.0 && oracle == detected && flows == corpus.flows && !events.is_empty(),
        format!(
            "packages={} injected={} detected={} precision={precision:.3} recall={recall:.3} oracle-equal={} flow cells={} (match={}) expanding={}",
            set.chains.len(),
            corpus.expansions.len(),
            detected.len(),
            oracle == detected,
            flows.len(),
            flows == corpus.flows,
            summary.expanding_apps
        ),
    )
}

// 5
fn scaled_replica() -> Verdict {
    let catalog = GroupCatalog::default_catalog();
    let mut records = Vec::new();
    let version = |pkg: &str, vc: u64, perms: &[&str]| {
        let mut f = ApkFacts::new(pkg, vc);
        f.sha256 = format!("{pkg}:{vc}");
        f.dex_year = Some(2020);
        f.requested_permissions = perms.iter().map(|p| canonical_permission(p)).collect();
        f
    };
    for i in 0..1_000 {
        let pkg = format!("rep.exp{i:04}");
        records.push(version(&pkg, 1, &["READ_CONTACTS", "READ_SMS", "INTERNET"]));
        if i < 560 {
            records.push(version(&pkg, 2, &["READ_CONTACTS", "WRITE_CONTACTS", "GET_ACCOUNTS", "READ_SMS", "INTERNET"]));
        } else {
            records.push(version(&pkg, 2, &["READ_CONTACTS", "WRITE_CONTACTS", "READ_SMS", "INTERNET"]));
            records.push(version(&pkg, 3, &["READ_CONTACTS", "WRITE_CONTACTS", "READ_SMS", "SEND_SMS", "RECEIVE_SMS", "INTERNET"]));
        }
    }
    for i in 0..4_882 {
        let pkg = format!("rep.flat{i:04}");
        records.push(version(&pkg, 1, &["CAMERA", "INTERNET"]));
        records.push(version(&pkg, 2, &["CAMERA", "INTERNET", "READ_CALENDAR"]));
    }
    let set = build_chains(records);
    let (_, s) = analyze(&set.chains, &catalog);
    check(
        s.expanding_apps == 1_000 && s.total_events == 2_440 && (s.mean_events_per_expanding_app - 2.44).abs() <= 0.01,
        format!(
            "chains={} expanding={} ({:.1}%) events={} mean={:.3}",
            s.chains,
            s.expanding_apps,
            100.0 * s.expanding_apps as f64 / s.chains as f64,
            s.total_events,
            s.mean_events_per_expanding_app
        ),
    )
}

// 6
fn day(d: f64) -> String {
    let base = chrono::DateTime::parse_from_rfc3339("2025-01-06T09:00:00Z").unwrap();
    (base + chrono::Duration::seconds((d * 86_400.0) as i64)).to_rfc3339()
}

fn log_event(ts: String, kind: EventKind, pkg: &str, vc: u64, perms: &[&str], groups: &[&str]) -> PackageEvent {
    PackageEvent {
        timestamp: ts,
        event: kind,
        package: pkg.into(),
        version_code: vc,
        permissions: perms.iter().map(|p| canonical_permission(p)).collect(),
        granted_groups: groups.iter().map(|g| g.to_string()).collect(),
    }
}

/// 96 days of package events from 13 apps with 23 silent additions, plus
/// updates that must stay silent.
fn deployment_log() -> Vec<PackageEvent> {
    let pairs: [(&str, [&str; 3]); 5] = [
        ("STORAGE", ["READ_MEDIA_IMAGES", "READ_MEDIA_VIDEO", "READ_MEDIA_AUDIO"]),
        ("LOCATION", ["ACCESS_COARSE_LOCATION", "ACCESS_FINE_LOCATION", "ACCESS_BACKGROUND_LOCATION"]),
        ("CONTACTS", ["READ_CONTACTS", "WRITE_CONTACTS", "GET_ACCOUNTS"]),
        ("SMS", ["READ_SMS", "SEND_SMS", "RECEIVE_SMS"]),
        ("PHONE", ["READ_PHONE_STATE", "CALL_PHONE", "READ_PHONE_NUMBERS"]),
    ];
    let mut log = Vec::new();
    let mut expansions = Vec::new();
    for a in 0..13 {
        let pkg = format!("dev.app{a:02}");
        let (group, members) = pairs[a % pairs.len()];
        log.push((0.0 + a as f64 * 0.01, log_event(String::new(), EventKind::Added, &pkg, 1, &[members[0], "INTERNET"], &[group])));
        let notifications = if a < 10 { 2 } else { 1 };
        expansions.push((pkg, group, members, notifications));
    }
    let mut slot = 0usize;
    let total_slots = 23.0;
    for (pkg, group, members, n) in &expansions {
        let mut perms = vec![members[0], "INTERNET"];
        for k in 0..*n {
            slot += 1;
            perms.push(members[k + 1]);
            let t = 96.0 * slot as f64 / total_slots;
            log.push((t, log_event(String::new(), EventKind::Replaced, pkg, 2 + k as u64, &perms, &[group])));
        }
    }
    log.push((12.5, log_event(String::new(), EventKind::Replaced, "dev.app00", 50, &["READ_MEDIA_IMAGES", "INTERNET", "READ_CALENDAR"], &["STORAGE"])));
    log.push((40.0, log_event(String::new(), EventKind::Added, "dev.quiet", 1, &["CAMERA"], &["CAMERA"])));
    log.push((41.0, log_event(String::new(), EventKind::Replaced, "dev.quiet", 2, &["CAMERA", "RECORD_AUDIO"], &["CAMERA"])));
    log.push((60.0, log_event(String::new(), EventKind::Replaced, "dev.app04", 9, &["READ_PHONE_STATE", "INTERNET", "CALL_PHONE"], &[])));
    log.sort_by(|a, b| a.0.total_cmp(&b.0));
    log.into_iter()
        .map(|(t, mut e)| {
            e.timestamp = day(t);
            e
        })
        .collect()
}

fn monitor_replay() -> Verdict {
    let catalog = GroupCatalog::default_catalog();
    let labels = PermissionLabels::default_labels();
    let m = Monitor { catalog: &catalog, labels: &labels, year: None };
    let log = deployment_log();
    let mut state = MonitorState::default();
    let s = m.replay_log(&mut state, &log).map_err(|e| e.to_string())?;

    let doubled: Vec<PackageEvent> = log.iter().flat_map(|e| [e.clone(), e.clone()]).collect();
    let mut again = MonitorState::default();
    let s2 = m.replay_log(&mut again, &doubled).map_err(|e| e.to_string())?;
    let exactly_once = s2 == s && again.notifications == state.notifications;

    let gap = s.mean_gap_days.unwrap_or(f64::NAN);
    let burden = estimate_burden(80.0, 1.0);
    check(
        s.events == 23 && s.apps == 13 && (gap - 4.17).abs() <= 0.1 && exactly_once && (burden - 1.54).abs() <= 0.01,
        format!(
            "events={} apps={} span={:.1}d mean gap={gap:.2}d duplicates-invariant={exactly_once} burden(80,1.0)={burden:.3}/week",
            s.events, s.apps, s.span_days
        ),
    )
}

// 7
fn constant_propagation_suite() -> Verdict {
    let fixtures = common::cprop_fixtures();
    let mut exact = 0;
    let mut false_resolutions = 0;
    let mut misses = Vec::new();
    for f in &fixtures {
        let got: Vec<Option<String>> = scan_call_sites(&[&f.dex]).call_sites.into_iter().map(|c| c.resolved_authority).collect();
        let want: Vec<Option<String>> = f.expected.iter().map(|o| o.map(str::to_string)).collect();
        false_resolutions += got.iter().zip(&want).filter(|(g, w)| g.is_some() && g != w).count();
        if got == want {
            exact += 1;
        } else {
            misses.push(f.name);
        }
    }
    check(
        fixtures.len() == 12 && exact == 12 && false_resolutions == 0,
        format!("fixtures={} exact={exact} false resolutions={false_resolutions} mismatched={misses:?}", fixtures.len()),
    )
}

// 8
fn pair_linking_oracle() -> Verdict {
    let (defs, reqs) = common::pairs::corpus();
    let apps: Vec<_> = defs
        .iter()
        .map(|d| d.apk())
        .chain(reqs.iter().map(|r| r.apk()))
        .map(|apk| common::app_binary(&apk))
        .collect();
    let run = pair_pipeline(&apps, &AospList::default_list(), &KeywordMap::default_map(), &default_sdk_prefixes());
    let mut got: Vec<_> = run
        .pairs
        .iter()
        .map(|p| (p.permission_name.clone(), p.exploitable.package.clone(), p.exploitable.authority.clone(), p.exploiting.package.clone()))
        .collect();
    got.sort();
    let want = common::pairs::oracle(&defs, &reqs);
    let same_cert = run.pairs.iter().filter(|p| p.exploitable.cert_digest == p.exploiting.cert_digest).count();
    let no_call = run.pairs.iter().filter(|p| p.exploiting.call_sites.is_empty()).count();
    check(
        apps.len() == 30 && got == want && same_cert == 0 && no_call == 0,
        format!("apps={} pairs={} oracle={} same-cert={same_cert} without call site={no_call}", apps.len(), got.len(), want.len()),
    )
}

// 9
fn axml_round_trip() -> Verdict {
    let fixtures = common::manifest_fixtures();
    let mut equal = 0;
    let mut bad = Vec::new();
    for (name, text) in &fixtures {
        let tree = parse_plaintext(text).map_err(|e| format!("{name}: {e}"))?;
        let plain = facts_from_manifest(&tree);
        let binary = decode_axml(&encode_axml(&tree)).and_then(|t| facts_from_manifest(&t));
        match (plain, binary) {
            (Ok(p), Ok(b)) if p == b => equal += 1,
            _ => bad.push(name.clone()),
        }
    }
    check(
        !fixtures.is_empty() && equal == fixtures.len(),
        format!("manifests={} field-equal={equal} ({:.0}%) mismatched={bad:?}", fixtures.len(), 100.0 * equal as f64 / fixtures.len().max(1) as f64),
    )
}

// 10
fn cross_module_equivalence() -> Verdict {
    let catalog = GroupCatalog::default_catalog();
    let labels = PermissionLabels::default_labels();
    let corpus = generate_corpus(&catalog, 0xc0ffee);
    let set = build_chains(corpus.chains);
    let (events, _) = analyze(&set.chains, &catalog);
    let expansion: BTreeSet<(String, u64, String)> = events.iter().map(|e| (e.package_name.clone(), e.to_version, e.added_permission.clone())).collect();

    let log_for = |granted: &dyn Fn(&str) -> BTreeSet<String>| -> Vec<PackageEvent> {
        let mut log: Vec<PackageEvent> = set
            .chains
            .iter()
            .flat_map(|c| {
                c.versions.iter().enumerate().map(move |(i, v)| PackageEvent {
                    timestamp: format!("{}-06-01T00:00:00Z", v.dex_year.unwrap()),
                    event: if i == 0 { EventKind::Added } else { EventKind::Replaced },
                    package: c.package_name.clone(),
                    version_code: v.version_code,
                    permissions: v.requested_permissions.clone(),
                    granted_groups: granted(&c.package_name),
                })
            })
            .collect();
        log.sort_by(|a, b| a.timestamp.cmp(&b.timestamp));
        log
    };
    let notified = |log: &[PackageEvent]| -> Result<BTreeSet<(String, u64, String)>, String> {
        let m = Monitor { catalog: &catalog, labels: &labels, year: None };
        let mut st = MonitorState::default();
        m.replay_log(&mut st, log).map_err(|e| e.to_string())?;
        Ok(st.notifications.into_iter().map(|n| (n.package, n.version_code, n.permission)).collect())
    };

    let all: BTreeSet<String> = GROUPS.iter().map(|g| g.to_string()).collect();
    let full = notified(&log_for(&|_| all.clone()))?;
    let mut rng = StdRng::seed_from_u64(11);
    let partial_groups: BTreeMap<String, BTreeSet<String>> = set
        .chains
        .iter()
        .map(|c| (c.package_name.clone(), GROUPS.iter().filter(|_| rng.gen_bool(0.5)).map(|g| g.to_string()).collect()))
        .collect();
    let partial = notified(&log_for(&|p| partial_groups[p].clone()))?;
    check(
        full == expansion && partial.is_subset(&expansion) && partial.len() < full.len(),
        format!(
            "expansion events={} notifications (all groups granted)={} equal={} notifications (random grants)={} subset={}",
            expansion.len(),
            full.len(),
            full == expansion,
            partial.len(),
            partial.is_subset(&expansion)
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict, Option<Duration>); 10] = [
        ("statistics reconstruction", statistics_reconstruction, Some(Duration::from_millis(1))),
        ("Mantel-Haenszel properties", mantel_haenszel_properties, Some(Duration::from_secs(1))),
        ("nine-group auto-grant", nine_group_auto_grant, Some(Duration::from_secs(1))),
        ("desk-scale expansion oracle", desk_scale_oracle, Some(Duration::from_secs(10))),
        ("scaled aggregate replica", scaled_replica, Some(Duration::from_secs(10))),
        ("monitor replay", monitor_replay, Some(Duration::from_secs(1))),
        ("constant-propagation suite", constant_propagation_suite, Some(Duration::from_secs(5))),
        ("pair-linking oracle", pair_linking_oracle, Some(Duration::from_secs(10))),
        ("AXML round-trip", axml_round_trip, Some(Duration::from_secs(5))),
        ("cross-module equivalence", cross_module_equivalence, None),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let slow = budget.is_some_and(|b| elapsed > b);
        let (status, detail) = match &result {
            Ok(d) if !slow => ("PASS", d.clone()),
            Ok(d) => ("FAIL", format!("{d}; over time budget {:?}", budget.unwrap())),
            Err(d) => ("FAIL", d.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("[{status}] {:>2}. {name}: {detail} ({:.3} ms)", i + 1, elapsed.as_secs_f64() * 1e3);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
