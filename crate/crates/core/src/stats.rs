//! Detection-count labelling and 2×2 association statistics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::expansion::VersionChain;

/// Two-sided 95% normal quantile.
const Z_95: f64 = 1.959_963_984_540_054;

pub const DEFAULT_THRESHOLD: u32 = 20;
pub const DEFAULT_SWEEP: [u32; 5] = [2, 5, 10, 20, 39];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("degenerate table: {0}")]
    DegenerateTable(String),
    #[error("degenerate strata: {0}")]
    DegenerateStratum(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VtLabelConfig {
    pub threshold: u32,
    pub sweep: Vec<u32>,
}

impl Default for VtLabelConfig {
    fn default() -> Self {
        VtLabelConfig {
            threshold: DEFAULT_THRESHOLD,
            sweep: DEFAULT_SWEEP.to_vec(),
        }
    }
}

impl VtLabelConfig {
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.threshold < 1 {
            return Err(StatsError::InvalidConfig("threshold must be at least 1".into()));
        }
        if let Some(t) = self.sweep.iter().find(|t| !(2..=39).contains(*t)) {
            return Err(StatsError::InvalidConfig(format!("sweep value {t} outside [2, 39]")));
        }
        Ok(())
    }
}

/// Lower bounds of permission-count strata; counts below the first
/// bound fall into the first stratum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratificationConfig {
    pub lower_bounds: Vec<u32>,
}

impl Default for StratificationConfig {
    fn default() -> Self {
        StratificationConfig {
            lower_bounds: vec![1, 9, 13, 24],
        }
    }
}

impl StratificationConfig {
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.lower_bounds.first() != Some(&1) {
            return Err(StatsError::InvalidConfig("first stratum must start at 1".into()));
        }
        if !self.lower_bounds.windows(2).all(|w| w[0] < w[1]) {
            return Err(StatsError::InvalidConfig("stratum bounds must increase".into()));
        }
        Ok(())
    }

    pub fn stratum_of(&self, count: u32) -> usize {
        self.lower_bounds.iter().rposition(|&b| count >= b).unwrap_or(0)
    }

    pub fn labels(&self) -> Vec<String> {
        self.lower_bounds
            .iter()
            .enumerate()
            .map(|(i, &lo)| match self.lower_bounds.get(i + 1) {
                Some(&next) => format!("Q{} ({}-{})", i + 1, lo, next - 1),
                None => format!("Q{} ({}+)", i + 1, lo),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppLabel {
    pub package_name: String,
    pub max_detections: u32,
    pub flagged: bool,
    pub expanding: bool,
    pub max_permissions: u32,
}

/// Labels each chain with detection data; chains whose versions carry no
/// detection count at all are left out.
pub fn label_apps(chains: &[VersionChain], expanding: &BTreeSet<String>, threshold: u32) -> Vec<AppLabel> {
    chains
        .iter()
        .filter_map(|c| {
            let max_det = c.versions.iter().filter_map(|v| v.vt_detections).max()?;
            Some(AppLabel {
                package_name: c.package_name.clone(),
                max_detections: max_det,
                flagged: max_det >= threshold,
                expanding: expanding.contains(&c.package_name),
                max_permissions: c.versions.iter().map(|v| v.requested_permissions.len() as u32).max().unwrap_or(0),
            })
        })
        .collect()
}

/// Re-labels at another threshold without revisiting the chains.
pub fn relabel(labels: &[AppLabel], threshold: u32) -> Vec<AppLabel> {
    labels
        .iter()
        .map(|l| AppLabel {
            flagged: l.max_detections >= threshold,
            ..l.clone()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    /// flagged and expanding
    pub a: u64,
    /// benign and expanding
    pub b: u64,
    /// flagged and non-expanding
    pub c: u64,
    /// benign and non-expanding
    pub d: u64,
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        ContingencyTable { a, b, c, d }
    }

    pub fn n(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn add(&mut self, label: &AppLabel) {
        match (label.flagged, label.expanding) {
            (true, true) => self.a += 1,
            (false, true) => self.b += 1,
            (true, false) => self.c += 1,
            (false, false) => self.d += 1,
        }
    }

    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a AppLabel>) -> Self {
        let mut t = ContingencyTable::default();
        for l in labels {
            t.add(l);
        }
        t
    }
}

pub fn odds_ratio(t: &ContingencyTable) -> Result<f64, StatsError> {
    let bc = t.b as f64 * t.c as f64;
    if bc == 0.0 {
        return Err(StatsError::DegenerateTable("b*c = 0, odds ratio undefined".into()));
    }
    Ok(t.a as f64 * t.d as f64 / bc)
}

/// Pearson statistic on one degree of freedom, no continuity correction,
/// with its survival-function p-value.
pub fn chi_squared(t: &ContingencyTable) -> Result<(f64, f64), StatsError> {
    let (a, b, c, d) = (t.a as f64, t.b as f64, t.c as f64, t.d as f64);
    let margins = [a + b, c + d, a + c, b + d];
    if margins.iter().any(|&m| m == 0.0) {
        return Err(StatsError::DegenerateTable("a marginal total is zero".into()));
    }
    let n = a + b + c + d;
    let diff = a * d - b * c;
    let stat = n * diff * diff / margins.iter().product::<f64>();
    let dist = ChiSquared::new(1.0).expect("one degree of freedom");
    Ok((stat, dist.sf(stat)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhEstimate {
    pub odds_ratio: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Pooled odds ratio across strata with a Robins–Breslow–Greenland 95% CI.
pub fn mantel_haenszel(strata: &[ContingencyTable]) -> Result<MhEstimate, StatsError> {
    if strata.is_empty() {
        return Err(StatsError::DegenerateStratum("no strata".into()));
    }
    let (mut sr, mut ss, mut spr, mut sps_qr, mut sqs) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for t in strata.iter().filter(|t| t.n() > 0) {
        let n = t.n() as f64;
        let (a, b, c, d) = (t.a as f64, t.b as f64, t.c as f64, t.d as f64);
        let r = a * d / n;
        let s = b * c / n;
        let p = (a + d) / n;
        let q = (b + c) / n;
        sr += r;
        ss += s;
        spr += p * r;
        sps_qr += p * s + q * r;
        sqs += q * s;
    }
    if ss == 0.0 {
        return Err(StatsError::DegenerateStratum("sum of b*c/n is zero".into()));
    }
    if sr == 0.0 {
        return Err(StatsError::DegenerateStratum("sum of a*d/n is zero".into()));
    }
    let or = sr / ss;
    let var = spr / (2.0 * sr * sr) + sps_qr / (2.0 * sr * ss) + sqs / (2.0 * ss * ss);
    let half = Z_95 * var.sqrt();
    Ok(MhEstimate {
        odds_ratio: or,
        ci_low: (or.ln() - half).exp(),
        ci_high: (or.ln() + half).exp(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsResult {
    pub threshold: u32,
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
    #[serde(rename = "or")]
    pub odds_ratio: Option<f64>,
    #[serde(rename = "chi2")]
    pub chi_squared: Option<f64>,
    #[serde(rename = "p")]
    pub p_value: Option<f64>,
    pub mh_or: Option<f64>,
    pub mh_ci: Option<(f64, f64)>,
    pub strata: Vec<ContingencyTable>,
    /// Reasons a statistic could not be computed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

pub fn stratify(labels: &[AppLabel], cfg: &StratificationConfig) -> Vec<ContingencyTable> {
    let mut strata = vec![ContingencyTable::default(); cfg.lower_bounds.len().max(1)];
    for l in labels {
        strata[cfg.stratum_of(l.max_permissions)].add(l);
    }
    strata
}

/// Every statistic at one threshold; failures are recorded, not raised.
pub fn compute(labels: &[AppLabel], threshold: u32, cfg: &StratificationConfig) -> StatsResult {
    let labels = relabel(labels, threshold);
    let t = ContingencyTable::from_labels(&labels);
    let strata = stratify(&labels, cfg);
    let mut degenerate = Vec::new();
    let odds = odds_ratio(&t).map_err(|e| degenerate.push(e.to_string())).ok();
    let chi = chi_squared(&t).map_err(|e| degenerate.push(e.to_string())).ok();
    let mh = mantel_haenszel(&strata).map_err(|e| degenerate.push(e.to_string())).ok();
    degenerate.dedup();
    StatsResult {
        threshold,
        a: t.a,
        b: t.b,
        c: t.c,
        d: t.d,
        odds_ratio: odds,
        chi_squared: chi.map(|c| c.0),
        p_value: chi.map(|c| c.1),
        mh_or: mh.map(|m| m.odds_ratio),
        mh_ci: mh.map(|m| (m.ci_low, m.ci_high)),
        strata,
        degenerate,
    }
}

/// Statistics at each sweep threshold, ascending and de-duplicated.
pub fn threshold_sweep(labels: &[AppLabel], sweep: &[u32], cfg: &StratificationConfig) -> Vec<StatsResult> {
    let ts: BTreeSet<u32> = sweep.iter().copied().collect();
    ts.into_iter().map(|t| compute(labels, t, cfg)).collect()
}
