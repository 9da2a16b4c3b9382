//! Python bindings: skill documents and edits, the budget schedule, dataset
//! splitting, simbench generation, evaluation and training.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use skilltune::cli::{self, CliError, EvaluateArgs};
use skilltune::dataset::{self, SplitSpec};
use skilltune::schedule::{self, ScheduleKind, ScheduleSpec};
use skilltune::skilldoc::{self, EditOp};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn cli_err(e: CliError) -> PyErr {
    match e {
        CliError::Config(m) => PyValueError::new_err(m),
        CliError::Runtime(m) => PyRuntimeError::new_err(m),
    }
}

#[pyclass(name = "SkillDocument", module = "skilltune_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PySkillDocument {
    inner: skilldoc::SkillDocument,
}

#[pymethods]
impl PySkillDocument {
    /// Parses a full document, including any protected region.
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        skilldoc::SkillDocument::parse(text).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn from_body(body: &str) -> PyResult<Self> {
        skilldoc::SkillDocument::from_body(body).map(|inner| Self { inner }).map_err(value_err)
    }

    #[getter]
    fn text(&self) -> String {
        self.inner.serialize().to_owned()
    }

    #[getter]
    fn body(&self) -> String {
        self.inner.body()
    }

    #[getter]
    fn protected(&self) -> Option<String> {
        self.inner.protected().map(str::to_owned)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn set_protected(&self, guidance: &str) -> PyResult<Self> {
        self.inner.set_protected(guidance).map(|inner| Self { inner }).map_err(value_err)
    }

    /// Applies a JSON list of edits under `budget`; returns the new document
    /// and the apply report as JSON.
    fn apply_edits(&self, edits_json: &str, budget: usize) -> PyResult<(Self, String)> {
        let edits: Vec<EditOp> = serde_json::from_str(edits_json).map_err(value_err)?;
        let (inner, report) = skilldoc::apply_edits(&self.inner, &edits, budget).map_err(value_err)?;
        Ok((Self { inner }, report.to_json()))
    }

    fn __eq__(&self, other: PyRef<'_, Self>) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("SkillDocument(hash={:?}, bytes={})", self.inner.hash(), self.inner.serialize().len())
    }
}

#[pyfunction]
#[pyo3(signature = (kind, initial_budget, floor, total_steps, step, autonomous_max = 8))]
fn budget_at(kind: &str, initial_budget: usize, floor: usize, total_steps: usize, step: usize, autonomous_max: usize) -> PyResult<usize> {
    let kind: ScheduleKind = serde_json::from_value(serde_json::Value::String(kind.to_owned())).map_err(value_err)?;
    let spec = ScheduleSpec { kind, initial_budget, floor, total_steps, autonomous_max };
    schedule::budget_at(&spec, step).map_err(value_err)
}

/// Splits a JSONL dataset; returns task ids per split.
#[pyfunction]
#[pyo3(signature = (dataset, ratios = (2.0, 1.0, 7.0), seed = 42))]
fn split(dataset: PathBuf, ratios: (f64, f64, f64), seed: u64) -> PyResult<(Vec<String>, Vec<String>, Vec<String>)> {
    let tasks = dataset::load_jsonl(&dataset).map_err(value_err)?;
    let spec = SplitSpec { ratios: [ratios.0, ratios.1, ratios.2], seed };
    let s = dataset::split(&tasks, &spec).map_err(value_err)?;
    let ids = |v: &[dataset::Task]| v.iter().map(|t| t.task_id.clone()).collect();
    Ok((ids(&s.train), ids(&s.selection), ids(&s.test)))
}

/// Writes a simbench dataset and returns the number of tasks written.
#[pyfunction]
#[pyo3(signature = (out, tasks = 100, rules = 5, base_rate = 0.3, seed = 42))]
fn simbench_generate(out: PathBuf, tasks: usize, rules: usize, base_rate: f64, seed: u64) -> PyResult<usize> {
    cli::cmd_generate(&out, tasks, rules, base_rate, seed).map(|d| d.tasks.len()).map_err(cli_err)
}

/// Scores a skill file; returns the mean and per-task scores.
#[pyfunction]
#[pyo3(signature = (skill, dataset, split = "test", harness = "simbench", seed = 42, ratios = (2.0, 1.0, 7.0), workers = 8))]
fn evaluate(
    skill: PathBuf,
    dataset: PathBuf,
    split: &str,
    harness: &str,
    seed: u64,
    ratios: (f64, f64, f64),
    workers: usize,
) -> PyResult<(f64, Vec<(String, f64)>)> {
    let args = EvaluateArgs {
        skill,
        dataset,
        split: split.parse().map_err(PyValueError::new_err)?,
        harness: harness.to_owned(),
        split_spec: SplitSpec { ratios: [ratios.0, ratios.1, ratios.2], seed },
        workers,
        success_threshold: 1.0,
    };
    let eval = cli::cmd_evaluate(&args).map_err(cli_err)?;
    Ok((eval.mean, eval.per_task))
}

/// Runs training from a config file and returns the run report as JSON.
#[pyfunction]
#[pyo3(signature = (config, resume = false))]
fn train(py: Python<'_>, config: PathBuf, resume: bool) -> PyResult<String> {
    let summary = py.detach(|| cli::cmd_train(&config, resume)).map_err(cli_err)?;
    serde_json::to_string(&summary.report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn skilltune_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySkillDocument>()?;
    m.add_function(wrap_pyfunction!(budget_at, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(simbench_generate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
