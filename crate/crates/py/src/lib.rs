//! Python bindings for `permwatch`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use permwatch::catalog::GroupCatalog as CoreCatalog;
use permwatch::fixture::ApkBuilder;
use permwatch::labels::PermissionLabels;
use permwatch::monitor::{Monitor as CoreMonitor, MonitorState, PackageEvent};
use permwatch::simulator::{AppSpec, Simulator as CoreSimulator, DEFAULT_YEAR};
use permwatch::stats::{self, ContingencyTable};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    Ok(py.import_bound("json")?.call_method1("loads", (text,))?.unbind())
}

/// Facts extracted from one APK.
#[pyclass(module = "permwatch_py")]
#[derive(Clone)]
pub struct ApkFacts {
    inner: permwatch::ApkFacts,
}

#[pymethods]
impl ApkFacts {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(|inner| ApkFacts { inner }).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json_line()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.inner)
    }

    #[getter]
    fn package_name(&self) -> &str {
        &self.inner.package_name
    }

    #[getter]
    fn version_code(&self) -> u64 {
        self.inner.version_code
    }

    #[getter]
    fn sha256(&self) -> &str {
        &self.inner.sha256
    }

    #[getter]
    fn cert_digest(&self) -> Option<&str> {
        self.inner.cert_digest.as_deref()
    }

    #[getter]
    fn requested_permissions(&self) -> Vec<String> {
        self.inner.requested_permissions.iter().cloned().collect()
    }

    #[getter]
    fn dex_year(&self) -> Option<i32> {
        self.inner.dex_year
    }

    #[setter]
    fn set_dex_year(&mut self, year: Option<i32>) {
        self.inner.dex_year = year;
    }

    #[getter]
    fn vt_detections(&self) -> Option<u32> {
        self.inner.vt_detections
    }

    #[setter]
    fn set_vt_detections(&mut self, n: Option<u32>) {
        self.inner.vt_detections = n;
    }

    fn __repr__(&self) -> String {
        format!(
            "ApkFacts(package_name={:?}, version_code={}, permissions={})",
            self.inner.package_name,
            self.inner.version_code,
            self.inner.requested_permissions.len()
        )
    }
}

#[pyclass(module = "permwatch_py")]
pub struct GroupCatalog {
    inner: CoreCatalog,
}

#[pymethods]
impl GroupCatalog {
    #[new]
    #[pyo3(signature = (path=None))]
    fn new(path: Option<&str>) -> PyResult<Self> {
        let inner = match path {
            Some(p) => CoreCatalog::load(p.as_ref()).map_err(value_err)?,
            None => CoreCatalog::default_catalog(),
        };
        Ok(GroupCatalog { inner })
    }

    fn group_of(&self, permission: &str, year: i32) -> Option<String> {
        self.inner.group_of(permission, year).map(str::to_string)
    }

    fn members(&self, group: &str, year: i32) -> Vec<String> {
        self.inner.members(group, year).into_iter().map(str::to_string).collect()
    }
}

#[pyfunction]
fn parse_apk(data: &[u8]) -> PyResult<ApkFacts> {
    permwatch::manifest::parse_apk(data, None)
        .map(|inner| ApkFacts { inner })
        .map_err(value_err)
}

/// Synthetic APK bytes requesting `permissions`.
#[pyfunction]
#[pyo3(signature = (package, version_code, permissions, signer=None))]
fn build_apk<'py>(py: Python<'py>, package: &str, version_code: u64, permissions: Vec<String>, signer: Option<&str>) -> Bound<'py, PyBytes> {
    let refs: Vec<&str> = permissions.iter().map(String::as_str).collect();
    let mut b = ApkBuilder::new(package, version_code).uses_all(&refs);
    if let Some(s) = signer {
        b = b.signed_by(s);
    }
    PyBytes::new_bound(py, &b.build())
}

/// Expansion events and summary over a set of records.
#[pyfunction]
#[pyo3(signature = (records, catalog=None))]
fn detect_expansions(py: Python<'_>, records: Vec<ApkFacts>, catalog: Option<&GroupCatalog>) -> PyResult<(PyObject, PyObject)> {
    let default;
    let catalog = match catalog {
        Some(c) => &c.inner,
        None => {
            default = CoreCatalog::default_catalog();
            &default
        }
    };
    let set = permwatch::expansion::build_chains(records.into_iter().map(|r| r.inner));
    let (events, summary) = permwatch::expansion::analyze(&set.chains, catalog);
    Ok((to_py(py, &events)?, to_py(py, &summary)?))
}

#[pyfunction]
fn odds_ratio(a: u64, b: u64, c: u64, d: u64) -> PyResult<f64> {
    stats::odds_ratio(&ContingencyTable::new(a, b, c, d)).map_err(value_err)
}

/// `(chi2, p)` without continuity correction.
#[pyfunction]
fn chi_squared(a: u64, b: u64, c: u64, d: u64) -> PyResult<(f64, f64)> {
    stats::chi_squared(&ContingencyTable::new(a, b, c, d)).map_err(value_err)
}

/// `(pooled_or, ci_low, ci_high)` over `(a, b, c, d)` strata.
#[pyfunction]
fn mantel_haenszel(strata: Vec<(u64, u64, u64, u64)>) -> PyResult<(f64, f64, f64)> {
    let tables: Vec<_> = strata.into_iter().map(|(a, b, c, d)| ContingencyTable::new(a, b, c, d)).collect();
    let m = stats::mantel_haenszel(&tables).map_err(value_err)?;
    Ok((m.odds_ratio, m.ci_low, m.ci_high))
}

#[pyclass(module = "permwatch_py")]
pub struct Simulator {
    inner: CoreSimulator,
}

#[pymethods]
impl Simulator {
    #[new]
    #[pyo3(signature = (year=DEFAULT_YEAR))]
    fn new(year: i32) -> Self {
        let mut inner = CoreSimulator::with_defaults();
        inner.state.year = year;
        Simulator { inner }
    }

    fn install(&mut self, package: &str, version_code: u64, permissions: Vec<String>) -> PyResult<()> {
        let refs: Vec<&str> = permissions.iter().map(String::as_str).collect();
        self.inner.install(&AppSpec::new(package, version_code, &refs)).map_err(value_err)
    }

    fn update(&mut self, package: &str, version_code: u64, permissions: Vec<String>) -> PyResult<()> {
        let refs: Vec<&str> = permissions.iter().map(String::as_str).collect();
        self.inner.update(&AppSpec::new(package, version_code, &refs)).map_err(value_err)
    }

    fn user_grant(&mut self, package: &str, permission: &str) -> PyResult<()> {
        self.inner.user_grant(package, permission).map_err(value_err)
    }

    fn user_deny(&mut self, package: &str, permission: &str) -> PyResult<()> {
        self.inner.user_deny(package, permission).map_err(value_err)
    }

    fn revoke_group(&mut self, package: &str, group: &str) -> PyResult<()> {
        self.inner.revoke_group(package, group).map_err(value_err)
    }

    fn is_granted(&self, package: &str, permission: &str) -> bool {
        self.inner.state.is_granted(package, permission)
    }

    fn prompt_log(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.inner.state.prompt_log)
    }
}

#[pyclass(module = "permwatch_py")]
pub struct Monitor {
    catalog: CoreCatalog,
    labels: PermissionLabels,
    state: MonitorState,
}

#[pymethods]
impl Monitor {
    #[new]
    fn new() -> Self {
        Monitor {
            catalog: CoreCatalog::default_catalog(),
            labels: PermissionLabels::default_labels(),
            state: MonitorState::default(),
        }
    }

    /// Feeds one package event (JSON text); returns notification texts.
    fn on_event(&mut self, event_json: &str) -> PyResult<Vec<String>> {
        let ev: PackageEvent = serde_json::from_str(event_json).map_err(value_err)?;
        let m = CoreMonitor {
            catalog: &self.catalog,
            labels: &self.labels,
            year: None,
        };
        let out = m.on_package_event(&mut self.state, &ev).map_err(value_err)?;
        Ok(out.iter().map(|n| n.text()).collect())
    }

    fn notifications(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.state.notifications)
    }
}

#[pymodule]
fn permwatch_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ApkFacts>()?;
    m.add_class::<GroupCatalog>()?;
    m.add_class::<Simulator>()?;
    m.add_class::<Monitor>()?;
    m.add_function(wrap_pyfunction!(parse_apk, m)?)?;
    m.add_function(wrap_pyfunction!(build_apk, m)?)?;
    m.add_function(wrap_pyfunction!(detect_expansions, m)?)?;
    m.add_function(wrap_pyfunction!(odds_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(chi_squared, m)?)?;
    m.add_function(wrap_pyfunction!(mantel_haenszel, m)?)?;
    Ok(())
}
