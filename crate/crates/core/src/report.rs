//! Report rendering: CSV/JSON artifacts plus an aligned-text overview.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::catalog::short_name;
use crate::custom::{category_counts, CrossDevPair, CustomClassification, PairType};
use crate::expansion::{ExpansionSummary, FlowEntry};
use crate::monitor::DeploymentSummary;
use crate::stats::{odds_ratio, StatsResult, StratificationConfig};

/// Groups shown in the primary flow table; the rest go to the appendix one.
pub const PRIMARY_FLOW_GROUPS: [&str; 4] = ["CONTACTS", "SMS", "PHONE", "CALL_LOG"];
pub const TOP_FLOWS: usize = 6;

pub const ARTIFACTS: [&str; 8] = [
    "flows.csv",
    "group_volume.csv",
    "yearly_trend.csv",
    "threshold_sweep.csv",
    "stratified_or.csv",
    "custom_levels.csv",
    "pair_categories.csv",
    "monitor_summary.json",
];

#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub flows: Vec<FlowEntry>,
    pub summary: Option<ExpansionSummary>,
    /// Statistics at the primary threshold.
    pub stats: Option<StatsResult>,
    pub sweep: Vec<StatsResult>,
    pub strata: StratificationConfig,
    pub custom: Option<CustomClassification>,
    pub pairs: Vec<CrossDevPair>,
    pub monitor: Option<DeploymentSummary>,
}

fn csv_string<R: Serialize>(rows: impl IntoIterator<Item = R>, header: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

fn num(x: Option<f64>, digits: usize) -> String {
    x.filter(|v| v.is_finite()).map_or_else(String::new, |v| format!("{v:.digits$}"))
}

fn pct(part: u64, total: u64) -> String {
    if total == 0 {
        String::new()
    } else {
        format!("{:.1}", 100.0 * part as f64 / total as f64)
    }
}

/// Top flows per group, primary groups first.
pub fn top_flows(flows: &[FlowEntry], k: usize) -> Vec<(&'static str, usize, &FlowEntry)> {
    let mut by_group: BTreeMap<&str, Vec<&FlowEntry>> = BTreeMap::new();
    for f in flows {
        by_group.entry(f.group.as_str()).or_default().push(f);
    }
    let order = PRIMARY_FLOW_GROUPS
        .iter()
        .copied()
        .chain(crate::catalog::GROUPS.iter().copied().filter(|g| !PRIMARY_FLOW_GROUPS.contains(g)));
    let mut out = Vec::new();
    for g in order {
        let table = if PRIMARY_FLOW_GROUPS.contains(&g) { "primary" } else { "appendix" };
        let Some(list) = by_group.get_mut(g) else { continue };
        list.sort_by(|a, b| {
            b.count
                .cmp(&a.count)
                .then_with(|| a.from_permission.cmp(&b.from_permission))
                .then_with(|| a.to_permission.cmp(&b.to_permission))
        });
        out.extend(list.iter().take(k).enumerate().map(|(i, f)| (table, i + 1, *f)));
    }
    out
}

pub fn render_flows(flows: &[FlowEntry]) -> String {
    csv_string(
        top_flows(flows, TOP_FLOWS).into_iter().map(|(t, rank, f)| {
            (
                t,
                &f.group,
                rank,
                format!("{} -> {}", short_name(&f.from_permission), short_name(&f.to_permission)),
                &f.from_permission,
                &f.to_permission,
                f.count,
            )
        }),
        &["table", "group", "rank", "flow", "from_permission", "to_permission", "count"],
    )
}

pub fn render_group_volume(summary: Option<&ExpansionSummary>) -> String {
    let rows = summary.map(|s| s.groups.as_slice()).unwrap_or_default();
    csv_string(
        rows.iter().map(|g| (&g.group, g.expanding_apps, g.events, format!("{:.1}", g.percent_of_total))),
        &["group", "expanding_apps", "expansions", "percent_of_total"],
    )
}

pub fn render_yearly_trend(summary: Option<&ExpansionSummary>) -> String {
    let rows = summary.map(|s| s.years.as_slice()).unwrap_or_default();
    csv_string(
        rows.iter().map(|y| (y.year, y.expanding_apps, y.events, format!("{:.3}", y.mean_per_app))),
        &["year", "expanding_apps", "expansions", "mean_per_app"],
    )
}

pub fn render_threshold_sweep(sweep: &[StatsResult]) -> String {
    csv_string(
        sweep.iter().map(|s| {
            (
                s.threshold,
                s.a,
                s.b,
                s.c,
                s.d,
                num(s.odds_ratio, 4),
                num(s.chi_squared, 3),
                s.p_value.map_or_else(String::new, |p| format!("{p:.3e}")),
                num(s.mh_or, 4),
                num(s.mh_ci.map(|c| c.0), 4),
                num(s.mh_ci.map(|c| c.1), 4),
            )
        }),
        &["threshold", "a", "b", "c", "d", "or", "chi2", "p", "mh_or", "mh_ci_low", "mh_ci_high"],
    )
}

pub fn render_stratified(stats: Option<&StatsResult>, cfg: &StratificationConfig) -> String {
    let mut rows = Vec::new();
    if let Some(s) = stats {
        for (label, t) in cfg.labels().into_iter().zip(&s.strata) {
            rows.push((label, t.a, t.b, t.c, t.d, num(odds_ratio(t).ok(), 2), String::new(), String::new()));
        }
        rows.push((
            "Pooled Mantel-Haenszel".to_string(),
            s.a,
            s.b,
            s.c,
            s.d,
            num(s.mh_or, 2),
            num(s.mh_ci.map(|c| c.0), 2),
            num(s.mh_ci.map(|c| c.1), 2),
        ));
    }
    csv_string(rows, &["stratum", "a", "b", "c", "d", "or", "ci_low", "ci_high"])
}

pub fn render_custom_levels(custom: Option<&CustomClassification>) -> String {
    let mut rows = Vec::new();
    if let Some(c) = custom {
        let h = &c.histogram;
        let total = h.total();
        for (name, n) in [("signature", h.signature), ("normal", h.normal), ("dangerous", h.dangerous), ("other", h.other)] {
            rows.push(("protection_level", name, n, pct(n, total)));
        }
        let b = &c.normal_breakdown;
        let total = b.total();
        for (name, n) in [
            ("provider", b.provider),
            ("activity", b.activity),
            ("service", b.service),
            ("receiver", b.receiver),
            ("unattached", b.unattached),
        ] {
            rows.push(("normal_component", name, n, pct(n, total)));
        }
    }
    csv_string(rows, &["panel", "row", "count", "percent"])
}

pub fn render_pair_categories(pairs: &[CrossDevPair]) -> String {
    csv_string(
        category_counts(pairs).into_iter().map(|(c, t, n)| {
            let t = match t {
                Some(PairType::A) => "A",
                Some(PairType::B) => "B",
                None => "",
            };
            (t, c.as_str(), n, c.aosp_gate().unwrap_or(""))
        }),
        &["type", "category", "pairs", "aosp_gate"],
    )
}

pub fn render_monitor(monitor: Option<&DeploymentSummary>) -> String {
    let empty = DeploymentSummary::new(&[], 0.0);
    let mut s = serde_json::to_string_pretty(monitor.unwrap_or(&empty)).expect("summary serializes");
    s.push('\n');
    s
}

/// Column-aligned text of a CSV document.
pub fn align(csv_text: &str) -> String {
    let rows: Vec<Vec<String>> = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(csv_text.as_bytes())
        .records()
        .filter_map(Result::ok)
        .map(|r| r.iter().map(str::to_string).collect())
        .collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|i| rows.iter().filter_map(|r| r.get(i)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let line: Vec<String> = r.iter().enumerate().map(|(i, c)| format!("{c:<w$}", w = widths[i])).collect();
        out += line.join("  ").trim_end();
        out.push('\n');
    }
    out
}

/// Every artifact as `(file name, contents)`, in [`ARTIFACTS`] order.
pub fn render_all(inputs: &ReportInputs) -> Vec<(&'static str, String)> {
    let summary = inputs.summary.as_ref();
    let bodies = [
        render_flows(&inputs.flows),
        render_group_volume(summary),
        render_yearly_trend(summary),
        render_threshold_sweep(&inputs.sweep),
        render_stratified(inputs.stats.as_ref(), &inputs.strata),
        render_custom_levels(inputs.custom.as_ref()),
        render_pair_categories(&inputs.pairs),
        render_monitor(inputs.monitor.as_ref()),
    ];
    ARTIFACTS.into_iter().zip(bodies).collect()
}

pub fn render_text(inputs: &ReportInputs) -> String {
    let mut out = String::new();
    if let Some(s) = &inputs.summary {
        let _ = writeln!(
            out,
            "apps with version chains: {}\nexpanding apps: {} ({}%)\nexpansion events: {}\nmean per expanding app: {:.2}\ncross-market events: {}\n",
            s.chains,
            s.expanding_apps,
            pct(s.expanding_apps, s.chains),
            s.total_events,
            s.mean_events_per_expanding_app,
            s.cross_market_events
        );
    }
    for (name, body) in render_all(inputs) {
        let _ = writeln!(out, "== {name}");
        if name.ends_with(".csv") {
            out += &align(&body);
        } else {
            out += &body;
        }
        out.push('\n');
    }
    out
}

/// Writes the artifacts and `report.txt` into `dir`.
pub fn write_reports(dir: &Path, inputs: &ReportInputs) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, body) in render_all(inputs) {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    let path = dir.join("report.txt");
    std::fs::write(&path, render_text(inputs))?;
    written.push(path);
    Ok(written)
}
