use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use permwatch::aosp::AospList;
use permwatch::catalog::GroupCatalog;
use permwatch::custom::{classify_custom, pair_pipeline, AppBinary, CrossDevPair, CustomClassification, KeywordMap};
use permwatch::dex::{default_sdk_prefixes, parse_sdk_prefixes};
use permwatch::expansion::{analyze, build_chains, flow_table, ExpansionEvent, ExpansionSummary};
use permwatch::labels::PermissionLabels;
use permwatch::manifest::metadata::{load_metadata, MetadataRow};
use permwatch::manifest::{dex_entries, parse_apk, sha256_hex};
use permwatch::monitor::{DeploymentSummary, Monitor, MonitorState, PackageEvent};
use permwatch::report::{write_reports, ReportInputs};
use permwatch::simulator::{ScenarioEvent, Simulator, DEFAULT_YEAR};
use permwatch::stats::{compute, label_apps, threshold_sweep, StatsResult, StratificationConfig, VtLabelConfig, DEFAULT_SWEEP};
use permwatch::ApkFacts;

use crate::error::{CliError, Result};
use crate::io::{apk_paths, read_input, read_json_opt, read_jsonl, write_json, write_jsonl, write_text};
use crate::Options;

pub const FACTS: &str = "facts.jsonl";
pub const SCAN_ERRORS: &str = "scan_errors.jsonl";
pub const EVENTS: &str = "events.jsonl";
pub const EXPANSION_SUMMARY: &str = "expansion_summary.json";
pub const STATS: &str = "stats.json";
pub const SWEEP: &str = "sweep.json";
pub const CUSTOM: &str = "custom.json";
pub const PAIRS: &str = "pairs.jsonl";
pub const PROMPTS: &str = "prompts.jsonl";
pub const DEVICE_STATE: &str = "device_state.json";
pub const NOTIFICATIONS: &str = "notifications.jsonl";
pub const NOTIFICATION_TEXT: &str = "notifications.txt";
pub const DEPLOYMENT: &str = "deployment.json";

fn existing(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

fn catalog(opts: &Options) -> Result<GroupCatalog> {
    match &opts.catalog {
        Some(p) => GroupCatalog::load(existing(p)?).map_err(CliError::invalid),
        None => Ok(GroupCatalog::default_catalog()),
    }
}

fn aosp(opts: &Options) -> Result<AospList> {
    match &opts.aosp_list {
        Some(p) => AospList::load(existing(p)?).map_err(CliError::invalid),
        None => Ok(AospList::default_list()),
    }
}

fn keywords(opts: &Options) -> Result<KeywordMap> {
    match &opts.keywords {
        Some(p) => KeywordMap::load(existing(p)?).map_err(CliError::invalid),
        None => Ok(KeywordMap::default_map()),
    }
}

fn sdk_prefixes(opts: &Options) -> Result<Vec<String>> {
    match &opts.sdk_prefixes {
        Some(p) => Ok(parse_sdk_prefixes(&read_input(p)?)),
        None => Ok(default_sdk_prefixes()),
    }
}

fn required_input(opts: &Options, what: &str) -> Result<PathBuf> {
    opts.input
        .clone()
        .ok_or_else(|| CliError::invalid(format!("--input <{what}> is required")))
}

/// Directory holding the intermediates of earlier stages.
fn work_dir(opts: &Options) -> &Path {
    opts.input.as_deref().unwrap_or(&opts.out)
}

fn read_facts(dir: &Path) -> Result<Vec<ApkFacts>> {
    let path = dir.join(FACTS);
    let facts: Vec<ApkFacts> = read_jsonl(&path)?;
    if facts.is_empty() {
        return Err(CliError::EmptyInput(format!("{} has no records", path.display())));
    }
    Ok(facts)
}

#[derive(Debug, Serialize)]
struct ScanFailure {
    path: String,
    error: String,
}

fn sort_facts(facts: &mut [ApkFacts]) {
    facts.sort_by(|a, b| {
        (&a.package_name, a.version_code, &a.sha256).cmp(&(&b.package_name, b.version_code, &b.sha256))
    });
}

fn display_rel(path: &Path, root: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).display().to_string()
}

fn load_apks(dir: &Path) -> Result<(Vec<(PathBuf, Vec<u8>)>, Vec<ScanFailure>)> {
    let paths = apk_paths(dir)?;
    if paths.is_empty() {
        return Err(CliError::EmptyInput(format!("no .apk files under {}", dir.display())));
    }
    let read: Vec<_> = paths
        .par_iter()
        .map(|p| (p.clone(), std::fs::read(p)))
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (p, r) in read {
        match r {
            Ok(bytes) => ok.push((p, bytes)),
            Err(e) => failed.push(ScanFailure {
                path: display_rel(&p, dir),
                error: e.to_string(),
            }),
        }
    }
    Ok((ok, failed))
}

pub fn scan(opts: &Options) -> Result<()> {
    let input = required_input(opts, "apk-dir")?;
    let metadata: HashMap<String, MetadataRow> = match &opts.metadata {
        Some(p) => load_metadata(existing(p)?).map_err(CliError::invalid)?,
        None => HashMap::new(),
    };
    let (apks, mut failures) = load_apks(&input)?;
    let parsed: Vec<_> = apks
        .par_iter()
        .map(|(p, bytes)| {
            let sha = sha256_hex(bytes);
            (p, parse_apk(bytes, metadata.get(&sha)))
        })
        .collect();
    let mut facts = Vec::new();
    for (p, r) in parsed {
        match r {
            Ok(f) => facts.push(f),
            Err(e) => failures.push(ScanFailure {
                path: display_rel(p, &input),
                error: e.to_string(),
            }),
        }
    }
    failures.sort_by(|a, b| a.path.cmp(&b.path));
    sort_facts(&mut facts);
    write_jsonl(&opts.out.join(FACTS), &facts)?;
    write_jsonl(&opts.out.join(SCAN_ERRORS), &failures)?;
    eprintln!("scan: {} parsed, {} failed", facts.len(), failures.len());
    if facts.is_empty() {
        return Err(CliError::EmptyInput(format!("no APK under {} could be parsed", input.display())));
    }
    Ok(())
}

pub fn expand(opts: &Options) -> Result<()> {
    let facts = read_facts(work_dir(opts))?;
    let catalog = catalog(opts)?;
    let set = build_chains(facts);
    let (events, summary) = analyze(&set.chains, &catalog);
    write_jsonl(&opts.out.join(EVENTS), &events)?;
    write_json(&opts.out.join(EXPANSION_SUMMARY), &summary)?;
    eprintln!(
        "expand: {} chains, {} events ({} single-version packages, {} records without metadata, {} duplicates)",
        set.chains.len(),
        events.len(),
        set.single_version_dropped,
        set.missing_metadata,
        set.duplicate_records
    );
    Ok(())
}

pub fn stats(opts: &Options) -> Result<()> {
    let dir = work_dir(opts);
    let events: Vec<ExpansionEvent> = read_jsonl(&dir.join(EVENTS))?;
    let facts = read_facts(dir)?;
    let cfg = VtLabelConfig {
        threshold: opts.threshold,
        sweep: opts.sweep.clone().unwrap_or_else(|| DEFAULT_SWEEP.to_vec()),
    };
    cfg.validate().map_err(CliError::invalid)?;
    let strata = StratificationConfig::default();
    let expanding: BTreeSet<String> = events.iter().map(|e| e.package_name.clone()).collect();
    let set = build_chains(facts);
    let labels = label_apps(&set.chains, &expanding, cfg.threshold);
    if labels.is_empty() {
        return Err(CliError::EmptyInput("no version chain carries a detection count".into()));
    }
    let primary = compute(&labels, cfg.threshold, &strata);
    let sweep = threshold_sweep(&labels, &cfg.sweep, &strata);
    write_json(&opts.out.join(STATS), &primary)?;
    write_json(&opts.out.join(SWEEP), &sweep)?;
    eprintln!("stats: {} labelled apps at threshold {}", labels.len(), cfg.threshold);
    Ok(())
}

pub fn custom(opts: &Options) -> Result<()> {
    let facts = read_facts(work_dir(opts))?;
    let classification = classify_custom(&facts, &aosp(opts)?);
    write_json(&opts.out.join(CUSTOM), &classification)?;
    eprintln!("custom: {} custom permissions", classification.histogram.total());
    Ok(())
}

#[derive(Debug, Serialize)]
struct MissingProvider<'a> {
    package: &'a str,
    class: &'a str,
}

pub fn pairs(opts: &Options) -> Result<()> {
    let input = required_input(opts, "apk-dir")?;
    let aosp = aosp(opts)?;
    let keywords = keywords(opts)?;
    let prefixes = sdk_prefixes(opts)?;
    let (apks, mut failures) = load_apks(&input)?;
    let parsed: Vec<_> = apks
        .par_iter()
        .map(|(p, bytes)| {
            let r = parse_apk(bytes, None).and_then(|facts| Ok(AppBinary { facts, dex: dex_entries(bytes)? }));
            (p, r)
        })
        .collect();
    let mut apps = Vec::new();
    for (p, r) in parsed {
        match r {
            Ok(a) => apps.push(a),
            Err(e) => failures.push(ScanFailure {
                path: display_rel(p, &input),
                error: e.to_string(),
            }),
        }
    }
    if apps.is_empty() {
        return Err(CliError::EmptyInput(format!("no APK under {} could be parsed", input.display())));
    }
    apps.sort_by(|a, b| (&a.facts.package_name, a.facts.version_code).cmp(&(&b.facts.package_name, b.facts.version_code)));
    let run = pair_pipeline(&apps, &aosp, &keywords, &prefixes);
    failures.sort_by(|a, b| a.path.cmp(&b.path));
    let missing: Vec<_> = run
        .missing_providers
        .iter()
        .map(|(package, class)| MissingProvider { package, class })
        .collect();
    write_jsonl(&opts.out.join(PAIRS), &run.pairs)?;
    write_json(&opts.out.join(CUSTOM), &run.classification)?;
    write_jsonl(&opts.out.join("eligible_providers.jsonl"), &run.eligible)?;
    write_jsonl(&opts.out.join("missing_providers.jsonl"), &missing)?;
    write_jsonl(&opts.out.join("pair_errors.jsonl"), &failures)?;
    eprintln!(
        "pairs: {} apps, {} eligible providers, {} pairs",
        apps.len(),
        run.eligible.len(),
        run.pairs.len()
    );
    Ok(())
}

pub fn simulate(opts: &Options) -> Result<()> {
    let input = required_input(opts, "scenario.jsonl")?;
    let events: Vec<ScenarioEvent> = read_jsonl(&input)?;
    if events.is_empty() {
        return Err(CliError::EmptyInput(format!("{} has no events", input.display())));
    }
    let mut sim = Simulator::new(catalog(opts)?, aosp(opts)?, DEFAULT_YEAR);
    permwatch::simulator::run_scenario(&mut sim, &events)
        .map_err(|(i, e)| CliError::invalid(format!("{} event {}: {e}", input.display(), i + 1)))?;
    write_jsonl(&opts.out.join(PROMPTS), &sim.state.prompt_log)?;
    write_json(&opts.out.join(DEVICE_STATE), &sim.state)?;
    eprintln!("simulate: {} events, {} prompts logged", events.len(), sim.state.prompt_log.len());
    Ok(())
}

pub fn monitor(opts: &Options) -> Result<()> {
    let input = required_input(opts, "events.jsonl")?;
    let events: Vec<PackageEvent> = read_jsonl(&input)?;
    if events.is_empty() {
        return Err(CliError::EmptyInput(format!("{} has no events", input.display())));
    }
    let catalog = catalog(opts)?;
    let labels = PermissionLabels::default_labels();
    let monitor = Monitor {
        catalog: &catalog,
        labels: &labels,
        year: None,
    };
    let mut state = MonitorState::default();
    let summary = monitor.replay_log(&mut state, &events).map_err(CliError::invalid)?;
    let text: String = state.notifications.iter().map(|n| n.text() + "\n").collect();
    write_jsonl(&opts.out.join(NOTIFICATIONS), &state.notifications)?;
    write_text(&opts.out.join(NOTIFICATION_TEXT), &text)?;
    write_json(&opts.out.join(DEPLOYMENT), &summary)?;
    for pkg in &state.unknown_packages {
        eprintln!("monitor: update for {pkg} without a prior install, treated as an install");
    }
    eprintln!("monitor: {} notifications across {} apps", summary.events, summary.apps);
    Ok(())
}

pub fn report(opts: &Options) -> Result<()> {
    let dir = work_dir(opts);
    let events: Vec<ExpansionEvent> = read_jsonl(&dir.join(EVENTS))?;
    let pairs: Vec<CrossDevPair> = if dir.join(PAIRS).exists() {
        read_jsonl(&dir.join(PAIRS))?
    } else {
        Vec::new()
    };
    let inputs = ReportInputs {
        flows: flow_table(&events),
        summary: read_json_opt::<ExpansionSummary>(&dir.join(EXPANSION_SUMMARY))?,
        stats: read_json_opt::<StatsResult>(&dir.join(STATS))?,
        sweep: read_json_opt::<Vec<StatsResult>>(&dir.join(SWEEP))?.unwrap_or_default(),
        strata: StratificationConfig::default(),
        custom: read_json_opt::<CustomClassification>(&dir.join(CUSTOM))?,
        pairs,
        monitor: read_json_opt::<DeploymentSummary>(&dir.join(DEPLOYMENT))?,
    };
    let written = write_reports(&opts.out, &inputs).map_err(|source| CliError::Io {
        path: opts.out.clone(),
        source,
    })?;
    eprintln!("report: {} files written to {}", written.len(), opts.out.display());
    Ok(())
}

