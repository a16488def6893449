//! Python module `pysimdistill`. Matrices cross the boundary as lists of rows.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use simdistill::config::ExperimentConfig;
use simdistill::distill::{self, StudentHead};
use simdistill::eval::{self, RetrievalTask};
use simdistill::fusion::{self, StrategyName};
use simdistill::similarity::{self, SimilarityMatrix};
use simdistill::whitening::{self, WhiteningTransform, DEFAULT_EPS_REL};
use simdistill::{experiment, io, synthgen, tensor, Matrix};

create_exception!(pysimdistill, SimdistillError, PyException);

type Rows = Vec<Vec<f64>>;

fn err(e: simdistill::Error) -> PyErr {
    SimdistillError::new_err(e.to_string())
}

pub fn to_matrix(rows: &[Vec<f64>]) -> simdistill::Result<Matrix> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, 0));
    }
    Matrix::from_rows(rows)
}

pub fn to_rows(m: &Matrix) -> Rows {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

fn matrix(rows: Rows) -> PyResult<Matrix> {
    to_matrix(&rows).map_err(err)
}

fn config(json: Option<&str>) -> PyResult<ExperimentConfig> {
    match json {
        Some(text) => ExperimentConfig::from_json(text).map_err(err),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Fitted PCA whitening (L2 → whiten → L2 pipeline).
#[pyclass(name = "WhiteningTransform", module = "pysimdistill")]
pub struct PyWhitening {
    inner: WhiteningTransform,
}

#[pymethods]
impl PyWhitening {
    /// Fits on the L2-normalized rows of `x`.
    #[staticmethod]
    #[pyo3(signature = (x, n_c, eps_rel = DEFAULT_EPS_REL))]
    fn fit(x: Rows, n_c: usize, eps_rel: f64) -> PyResult<Self> {
        let inner = whitening::fit_normalized(&matrix(x)?, n_c, eps_rel).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn identity(n: usize) -> Self {
        Self {
            inner: WhiteningTransform::identity(n),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_transform(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::write_transform(path, &self.inner).map_err(err)
    }

    /// L2-normalize, whiten, L2-normalize.
    fn apply(&self, x: Rows) -> PyResult<Rows> {
        Ok(to_rows(&whitening::whiten_pipeline(&self.inner, &matrix(x)?).map_err(err)?))
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    #[getter]
    fn significant(&self) -> usize {
        self.inner.significant_count()
    }

    #[getter]
    fn warning(&self) -> bool {
        self.inner.warning()
    }

    #[getter]
    fn spectrum(&self) -> Vec<f64> {
        self.inner.spectrum().to_vec()
    }

    fn __repr__(&self) -> String {
        format!(
            "WhiteningTransform(input_dim={}, output_dim={}, significant={})",
            self.inner.input_dim(),
            self.inner.output_dim(),
            self.inner.significant_count()
        )
    }
}

/// Linear student head `normalize(x · Wᵀ + b)`.
#[pyclass(name = "StudentHead", module = "pysimdistill")]
pub struct PyStudentHead {
    inner: StudentHead,
}

#[pymethods]
impl PyStudentHead {
    #[staticmethod]
    #[pyo3(signature = (n_s, n_base, seed = 0))]
    fn init(n_s: usize, n_base: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: StudentHead::init(n_s, n_base, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_student(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::write_student(path, &self.inner).map_err(err)
    }

    fn forward(&self, base: Rows) -> PyResult<Rows> {
        Ok(to_rows(&distill::student_forward(&self.inner, &matrix(base)?).map_err(err)?))
    }

    #[getter]
    fn weights(&self) -> Rows {
        to_rows(&self.inner.w)
    }

    #[getter]
    fn bias(&self) -> Vec<f64> {
        self.inner.b.clone()
    }

    #[getter]
    fn n_s(&self) -> usize {
        self.inner.n_s()
    }

    #[getter]
    fn n_base(&self) -> usize {
        self.inner.n_base()
    }
}

/// Synthetic benchmark: `(base, labels, teachers)`.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn generate(config_json: Option<&str>) -> PyResult<(Rows, Vec<usize>, Vec<Rows>)> {
    let d = synthgen::generate(&config(config_json)?.synth).map_err(err)?;
    Ok((to_rows(&d.base), d.labels, d.teachers.iter().map(to_rows).collect()))
}

#[pyfunction]
fn l2_normalize_rows(x: Rows) -> PyResult<Rows> {
    Ok(to_rows(&tensor::l2_normalize_rows(&matrix(x)?).map_err(err)?))
}

#[pyfunction]
fn cosine_similarity_matrix(a: Rows, b: Rows) -> PyResult<Rows> {
    let s = similarity::cosine_similarity_matrix(&matrix(a)?, &matrix(b)?).map_err(err)?;
    Ok(to_rows(s.matrix()))
}

#[pyfunction]
fn row_softmax(s: Rows, tau: f64) -> PyResult<Rows> {
    Ok(to_rows(&similarity::softmax_rows(&matrix(s)?, tau).map_err(err)?))
}

/// Element-wise fusion of teacher similarity matrices by strategy name
/// (`mean`, `rand`, `max-min`, `max-mean`, `max-rand`).
#[pyfunction]
#[pyo3(signature = (strategy, sims, seed = 0))]
fn fuse(strategy: &str, sims: Vec<Rows>, seed: u64) -> PyResult<Rows> {
    let name: StrategyName = strategy.parse().map_err(err)?;
    let sims = sims
        .into_iter()
        .map(|s| SimilarityMatrix::new(matrix(s)?).map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    Ok(to_rows(fusion::fuse(name.with_seed(seed), &sims).map_err(err)?.matrix()))
}

#[pyfunction]
fn angle_density(n: usize, theta: f64) -> PyResult<f64> {
    similarity::angle_density(n, theta).map_err(err)
}

#[pyfunction]
fn angle_cdf(n: usize, theta: f64) -> PyResult<f64> {
    similarity::angle_cdf(n, theta).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (x, pairs, seed = 0))]
fn pairwise_angle_sample(x: Rows, pairs: usize, seed: u64) -> PyResult<Vec<f64>> {
    similarity::pairwise_angle_sample(&matrix(x)?, pairs, seed).map_err(err)
}

#[pyfunction]
fn ks_distance_to_theory(angles: Vec<f64>, n: usize) -> PyResult<f64> {
    similarity::ks_distance_to_theory(&angles, n).map_err(err)
}

#[pyfunction]
fn ks_two_sample(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    similarity::ks_two_sample(&a, &b).map_err(err)
}

fn task_for(scores: &Matrix, relevant: Vec<Vec<usize>>) -> PyResult<RetrievalTask> {
    RetrievalTask::new(
        Matrix::zeros(scores.rows(), 1),
        Matrix::zeros(scores.cols(), 1),
        relevant,
    )
    .map_err(err)
}

/// mAP of a query × gallery score matrix; `relevant[q]` lists gallery indices.
#[pyfunction]
fn mean_ap(scores: Rows, relevant: Vec<Vec<usize>>) -> PyResult<f64> {
    let s = matrix(scores)?;
    eval::mean_ap(&task_for(&s, relevant)?, &s).map_err(err)
}

#[pyfunction]
fn map_at_k(scores: Rows, relevant: Vec<Vec<usize>>, k: usize) -> PyResult<f64> {
    let s = matrix(scores)?;
    eval::map_at_k(&task_for(&s, relevant)?, &s, k).map_err(err)
}

#[pyfunction]
fn mrr(m: Rows) -> PyResult<f64> {
    eval::mrr(&matrix(m)?).map_err(err)
}

#[pyfunction]
fn chamfer_similarity(m: Rows) -> PyResult<f64> {
    eval::chamfer_similarity(&matrix(m)?).map_err(err)
}

#[pyfunction]
fn cosine_lr(step: usize, total: usize, lr0: f64, lr_min: f64) -> PyResult<f64> {
    distill::cosine_lr(step, total, lr0, lr_min).map_err(err)
}

/// Trains a student; returns the head and `(step, lr, loss)` rows.
#[pyfunction]
#[pyo3(signature = (base, labels, teachers, transforms, config_json = None))]
fn train(
    base: Rows,
    labels: Vec<usize>,
    teachers: Vec<Rows>,
    transforms: Vec<PyRef<'_, PyWhitening>>,
    config_json: Option<&str>,
) -> PyResult<(PyStudentHead, Vec<(usize, f64, f64)>)> {
    let cfg = config(config_json)?;
    let teachers = teachers.into_iter().map(matrix).collect::<PyResult<Vec<_>>>()?;
    let transforms: Vec<WhiteningTransform> = transforms.iter().map(|t| t.inner.clone()).collect();
    let (head, history) =
        distill::train(&cfg.train_config(), &matrix(base)?, &labels, &teachers, &transforms).map_err(err)?;
    let rows = history.steps.iter().map(|r| (r.step, r.lr, r.loss)).collect();
    Ok((PyStudentHead { inner: head }, rows))
}

/// `(loss_kind, max_rel_err, passed)` for the KL, ED and CL gradients.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn gradcheck(config_json: Option<&str>) -> PyResult<Vec<(String, f64, bool)>> {
    let cfg = config(config_json)?;
    let reports =
        distill::gradcheck_all(&cfg.train_config(), cfg.gradcheck.points, cfg.gradcheck.seed, false).map_err(err)?;
    Ok(reports
        .iter()
        .map(|r| (r.loss_kind.to_string(), r.max_rel_err, r.passed()))
        .collect())
}

/// Held-out mAP of every variant in the reference comparison.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn run_reference(config_json: Option<&str>) -> PyResult<Vec<(String, f64)>> {
    let report = experiment::run_reference(&config(config_json)?).map_err(err)?;
    Ok(report
        .summary_tsv()
        .lines()
        .skip(1)
        .filter_map(|l| l.split_once('\t'))
        .map(|(n, v)| (n.to_string(), v.parse().unwrap_or(f64::NAN)))
        .collect())
}

#[pyfunction]
fn read_emb(path: &str) -> PyResult<Rows> {
    Ok(to_rows(&io::read_emb(path).map_err(err)?))
}

#[pyfunction]
fn write_emb(path: &str, x: Rows) -> PyResult<()> {
    io::write_emb(path, &matrix(x)?).map_err(err)
}

#[pymodule]
fn pysimdistill(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SimdistillError", m.py().get_type::<SimdistillError>())?;
    m.add_class::<PyWhitening>()?;
    m.add_class::<PyStudentHead>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(l2_normalize_rows, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(row_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(angle_density, m)?)?;
    m.add_function(wrap_pyfunction!(angle_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_angle_sample, m)?)?;
    m.add_function(wrap_pyfunction!(ks_distance_to_theory, m)?)?;
    m.add_function(wrap_pyfunction!(ks_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(mean_ap, m)?)?;
    m.add_function(wrap_pyfunction!(map_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mrr, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_lr, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(run_reference, m)?)?;
    m.add_function(wrap_pyfunction!(read_emb, m)?)?;
    m.add_function(wrap_pyfunction!(write_emb, m)?)?;
    Ok(())
}
