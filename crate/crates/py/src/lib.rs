//! Python bindings. Structured results cross over as plain dicts and lists.

use std::path::PathBuf;

use cascade_core::config::Config;
use cascade_core::orchestrator::{smart_run, RunLog, Variant};
use cascade_core::sim::{realized_agreement, run_sweep};
use cascade_core::snapshot::Snapshot;
use cascade_core::stats::binom_ci;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn load(config: PathBuf, seed: Option<u64>, delta: Option<f64>, variant: Option<&str>) -> PyResult<Config> {
    let variant = variant.map(str::parse::<Variant>).transpose().map_err(err)?;
    let mut cfg = Config::load(&config).map_err(err)?;
    cfg.apply_overrides(seed, delta, variant).map_err(err)?;
    Ok(cfg)
}

fn parse_snapshot(text: &str) -> PyResult<Snapshot> {
    let snap: Snapshot = serde_json::from_str(text).map_err(err)?;
    snap.spec().map_err(err)?;
    Ok(snap)
}

/// Two-sided Clopper-Pearson interval for `e` successes in `n` trials.
#[pyfunction]
#[pyo3(signature = (n, e, gamma = 0.95))]
fn clopper_pearson(n: u64, e: u64, gamma: f64) -> PyResult<(f64, f64)> {
    let ci = binom_ci(n, e, gamma).map_err(err)?;
    Ok((ci.lower, ci.upper))
}

/// Runs one workload from a config file. Returns `(log, snapshot_json)`.
#[pyfunction]
#[pyo3(signature = (config, seed = None, delta = None, variant = None))]
fn run<'py>(
    py: Python<'py>,
    config: PathBuf,
    seed: Option<u64>,
    delta: Option<f64>,
    variant: Option<&str>,
) -> PyResult<(Bound<'py, PyAny>, String)> {
    let cfg = load(config, seed, delta, variant)?;
    let (log, snap) = py
        .detach(|| -> cascade_core::Result<_> {
            let setup = cfg.run_setup()?;
            let result = smart_run(&setup.pool, &setup.config, &cfg.question, &setup.items)?;
            let echo = serde_json::to_value(&cfg).map_err(|e| cascade_core::Error::Config(e.to_string()))?;
            let mut log = RunLog::new(echo, &setup.config, &result);
            if let Some(labels) = setup.label_count {
                let a = realized_agreement(&result, labels);
                log.agreement = Some(a);
                log.violation = Some(a < 1.0 - setup.config.spec.delta);
            }
            Ok((log, Snapshot::from_run(&setup.config, &result)))
        })
        .map_err(err)?;
    Ok((to_py(py, &log)?, serde_json::to_string(&snap).map_err(err)?))
}

/// Every sweep cell of a config, as a list of dicts in a fixed order.
#[pyfunction]
#[pyo3(signature = (config, parallel = 1, seed = None, delta = None, variant = None))]
fn sweep<'py>(
    py: Python<'py>,
    config: PathBuf,
    parallel: usize,
    seed: Option<u64>,
    delta: Option<f64>,
    variant: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = load(config, seed, delta, variant)?;
    let result = py.detach(|| run_sweep(&cfg.sweep_scenarios()?, parallel)).map_err(err)?;
    to_py(py, &result.cells)
}

/// Mix plan for the items a snapshot has left.
#[pyfunction]
fn plan<'py>(py: Python<'py>, snapshot: &str) -> PyResult<Bound<'py, PyAny>> {
    let plan = parse_snapshot(snapshot)?.plan().map_err(err)?;
    to_py(py, &plan)
}

/// Expected total cost of profiling `k` more items, for `k = 0, 1, 2, 4, ...`.
#[pyfunction]
fn expected_cost_trace<'py>(py: Python<'py>, snapshot: &str) -> PyResult<Bound<'py, PyAny>> {
    let rows = parse_snapshot(snapshot)?.expected_cost_trace(Default::default()).map_err(err)?;
    to_py(py, &rows)
}

#[pymodule]
fn pycascade(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(clopper_pearson, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(expected_cost_trace, m)?)?;
    Ok(())
}
