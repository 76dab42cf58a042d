//! Python module `orbench`: task taxonomy, scoring, the pipeline stages and
//! the distillation kernel.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use orbench_core::cli::{self, RunConfig};
use orbench_core::distill::{self, LogitMatrix, Matrix};
use orbench_core::domain::{self, TaskKind};
use orbench_core::io::read_qa_file;
use orbench_core::scorer::{self, ScoreContext};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn task(name: &str) -> PyResult<TaskKind> {
    name.parse().map_err(value_err)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(value_err)
}

fn logits(rows: Vec<Vec<f64>>) -> PyResult<LogitMatrix> {
    LogitMatrix::new(matrix(rows)?).map_err(value_err)
}

fn config(seed: u64, config_json: Option<&str>) -> PyResult<RunConfig> {
    let mut cfg: RunConfig = match config_json {
        Some(text) => serde_json::from_str(text).map_err(value_err)?,
        None => RunConfig::default(),
    };
    cfg.seed = seed;
    Ok(cfg.seeded())
}

/// One benchmark item.
#[pyclass(name = "QAPair", frozen, get_all, from_py_object)]
#[derive(Clone)]
struct PyQAPair {
    id: String,
    dataset: String,
    clip_id: String,
    timepoint_id: String,
    task: String,
    question: String,
    answer: String,
    context: Option<String>,
}

impl From<domain::QAPair> for PyQAPair {
    fn from(q: domain::QAPair) -> Self {
        Self {
            id: q.id,
            dataset: q.dataset,
            clip_id: q.clip_id,
            timepoint_id: q.timepoint_id,
            task: q.task.name().to_string(),
            question: q.question,
            answer: q.answer,
            context: q.context,
        }
    }
}

impl PyQAPair {
    fn to_core(&self) -> PyResult<domain::QAPair> {
        Ok(domain::QAPair {
            id: self.id.clone(),
            dataset: self.dataset.clone(),
            clip_id: self.clip_id.clone(),
            timepoint_id: self.timepoint_id.clone(),
            task: task(&self.task)?,
            question: self.question.clone(),
            answer: self.answer.clone(),
            context: self.context.clone(),
        })
    }
}

#[pymethods]
impl PyQAPair {
    fn __repr__(&self) -> String {
        format!("QAPair(id={:?}, task={:?}, question={:?}, answer={:?})", self.id, self.task, self.question, self.answer)
    }
}

/// Most-frequent-answer baseline.
#[pyclass(name = "BaselinePredictor", frozen)]
struct PyBaseline(scorer::BaselinePredictor);

#[pymethods]
impl PyBaseline {
    #[new]
    fn new(train: Vec<PyQAPair>) -> PyResult<Self> {
        let pairs = train.iter().map(PyQAPair::to_core).collect::<PyResult<Vec<_>>>()?;
        Ok(Self(scorer::BaselinePredictor::fit(&pairs)))
    }

    fn predict(&self, qa: &PyQAPair) -> PyResult<String> {
        Ok(self.0.predict(&qa.to_core()?))
    }
}

#[pyfunction]
fn task_kinds() -> Vec<&'static str> {
    TaskKind::ALL.iter().map(|t| t.name()).collect()
}

#[pyfunction]
fn normalize_label(raw: &str) -> PyResult<String> {
    domain::normalize_label(raw).map_err(value_err)
}

/// Score of `pred` against `truth` for a task, in [0, 1].
#[pyfunction]
#[pyo3(signature = (task_name, pred, truth, image_diag=None))]
fn score_answer(task_name: &str, pred: &str, truth: &str, image_diag: Option<f64>) -> PyResult<f64> {
    let ctx = ScoreContext { image_diag };
    scorer::score_answer(task(task_name)?, pred, truth, &ctx)
        .map(|s| s.score)
        .map_err(value_err)
}

/// Write a synthetic annotation file; returns the record count.
#[pyfunction]
#[pyo3(signature = (out, seed=0, config_json=None))]
fn simulate(out: PathBuf, seed: u64, config_json: Option<&str>) -> PyResult<usize> {
    let cfg = config(seed, config_json)?;
    cli::cmd_simulate(&cfg.simulator, &out).map_err(io_err)
}

/// Generate QA pairs from annotation files; returns the pair count.
#[pyfunction]
#[pyo3(signature = (annotations, out, seed=0, memory_k=None))]
fn generate(annotations: Vec<PathBuf>, out: PathBuf, seed: u64, memory_k: Option<usize>) -> PyResult<usize> {
    let cfg = config(seed, None)?;
    cli::cmd_generate(&annotations, &out, &cfg.generation, memory_k).map_err(io_err)
}

/// Diversity-sample a QA file into `out_dir/{train,val,test}.jsonl`.
#[pyfunction]
#[pyo3(signature = (pairs, out_dir, train, val, test, seed=0, alpha=1.0, beta=1.0))]
#[allow(clippy::too_many_arguments)]
fn sample(pairs: PathBuf, out_dir: PathBuf, train: u64, val: u64, test: u64, seed: u64, alpha: f64, beta: f64) -> PyResult<()> {
    let mut spec = config(seed, None)?.sampling;
    spec.train = train;
    spec.val = val;
    spec.test = test;
    spec.alpha = alpha;
    spec.beta = beta;
    cli::cmd_sample(&pairs, &out_dir, &spec).map(|_| ()).map_err(io_err)
}

#[pyfunction]
fn read_qa(path: PathBuf) -> PyResult<Vec<PyQAPair>> {
    let (_, pairs) = read_qa_file(&path).map_err(io_err)?;
    Ok(pairs.into_iter().map(Into::into).collect())
}

/// Score a predictions file; returns the report as a JSON string.
#[pyfunction]
#[pyo3(signature = (benchmark, predictions, out, seed=0))]
fn score_file(benchmark: PathBuf, predictions: PathBuf, out: PathBuf, seed: u64) -> PyResult<String> {
    let opts = config(seed, None)?.score_options();
    let report = cli::cmd_score(&benchmark, &predictions, &out, &opts).map_err(io_err)?;
    serde_json::to_string(&report).map_err(value_err)
}

/// Full pipeline; returns the score report as a JSON string.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=0, config_json=None))]
fn run(out_dir: PathBuf, seed: u64, config_json: Option<&str>) -> PyResult<String> {
    let cfg = config(seed, config_json)?;
    let out = cli::cmd_run(&cfg, Path::new(&out_dir)).map_err(io_err)?;
    serde_json::to_string(&out.report).map_err(value_err)
}

#[pyfunction]
fn softmax_t(z: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    distill::softmax_t(&z, temperature).map_err(value_err)
}

#[pyfunction]
fn kl_div(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    distill::kl_div(&p, &q).map_err(value_err)
}

#[pyfunction]
fn distill_loss(teacher: Vec<Vec<f64>>, student: Vec<Vec<f64>>, temperature: f64) -> PyResult<f64> {
    distill::distill_loss(&logits(teacher)?, &logits(student)?, temperature).map_err(value_err)
}

#[pyfunction]
fn distill_loss_grad(teacher: Vec<Vec<f64>>, student: Vec<Vec<f64>>, temperature: f64) -> PyResult<Vec<Vec<f64>>> {
    distill::distill_loss_grad(&logits(teacher)?, &logits(student)?, temperature)
        .map(|g| g.to_rows())
        .map_err(value_err)
}

#[pyfunction]
fn crop_weights(w: Vec<Vec<f64>>, rows: usize, cols: usize) -> PyResult<Vec<Vec<f64>>> {
    distill::crop_weights(&matrix(w)?, rows, cols)
        .map(|m| m.to_rows())
        .map_err(value_err)
}

#[pymodule]
fn orbench(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQAPair>()?;
    m.add_class::<PyBaseline>()?;
    m.add_function(wrap_pyfunction!(task_kinds, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_label, m)?)?;
    m.add_function(wrap_pyfunction!(score_answer, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(read_qa, m)?)?;
    m.add_function(wrap_pyfunction!(score_file, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_t, m)?)?;
    m.add_function(wrap_pyfunction!(kl_div, m)?)?;
    m.add_function(wrap_pyfunction!(distill_loss, m)?)?;
    m.add_function(wrap_pyfunction!(distill_loss_grad, m)?)?;
    m.add_function(wrap_pyfunction!(crop_weights, m)?)?;
    m.add("TEMPLATE_VERSION", orbench_core::qagen::TEMPLATE_VERSION)?;
    m.add("RULES_VERSION", scorer::RULES_VERSION)?;
    Ok(())
}
