//! Python bindings. Results that are records on the Rust side (detection
//! results, condition reports, novel-word groups) are returned as plain
//! dicts and lists.

use std::path::Path;

use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::{json, Value};

use novelwords::conditions::{check_conditions, SIMPLICIAL_TOL};
use novelwords::detect::{detect_novel_words, DPolicy, DetectorConfig, D_QUANTILE};
use novelwords::dist::{run_distributed, Mode};
use novelwords::io::{load_model, load_uci, save_model, save_uci, ModelFile};
use novelwords::model::{novel_words_of, population_cooc, CountMatrix, PriorKind, PriorModel, TopicMatrix};
use novelwords::oracle::{oracle_novel_words, ORACLE_TOL};
use novelwords::synth::{
    adversarial_pair, figure1_models, generate_corpus, max_scale, random_nonsimplicial_prior, random_separable,
    RandomModelSpec,
};

create_exception!(pynovelwords, IncompleteRecoveryError, PyRuntimeError);

fn to_py_err(e: novelwords::Error) -> PyErr {
    match &e {
        novelwords::Error::IncompleteRecovery { .. } => IncompleteRecoveryError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_python<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err("rows have different lengths".into());
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn parse_prior(json: &str) -> novelwords::Result<PriorModel> {
    let kind: PriorKind = serde_json::from_str(json)?;
    PriorModel::new(kind)
}

/// A separable topic matrix together with its topic prior.
#[pyclass(module = "pynovelwords", skip_from_py_object)]
#[derive(Clone)]
struct TopicModel {
    beta: TopicMatrix,
    prior: PriorModel,
}

#[pymethods]
impl TopicModel {
    /// `beta` is a list of W rows of K entries with stochastic columns;
    /// `prior` a JSON prior (`{"kind": "dirichlet", ...}`) or, when absent,
    /// a symmetric Dirichlet with concentration `alpha`.
    #[new]
    #[pyo3(signature = (beta, prior=None, alpha=1.0))]
    fn new(beta: Vec<Vec<f64>>, prior: Option<&str>, alpha: f64) -> PyResult<Self> {
        let beta = TopicMatrix::new(matrix_from_rows(&beta).map_err(PyValueError::new_err)?).map_err(to_py_err)?;
        let prior = match prior {
            Some(p) => parse_prior(p),
            None => PriorModel::symmetric_dirichlet(beta.num_topics(), alpha),
        }
        .map_err(to_py_err)?;
        if prior.num_topics() != beta.num_topics() {
            return Err(PyValueError::new_err("prior and beta disagree on the number of topics"));
        }
        Ok(Self { beta, prior })
    }

    /// Random separable model with a symmetric Dirichlet prior.
    #[staticmethod]
    #[pyo3(signature = (vocab_size, num_topics, novel_per_topic=1, alpha=1.0, seed=0))]
    fn random(vocab_size: usize, num_topics: usize, novel_per_topic: usize, alpha: f64, seed: u64) -> PyResult<Self> {
        let spec = RandomModelSpec {
            vocab_size,
            num_topics,
            novel_per_topic,
        };
        Ok(Self {
            beta: random_separable(spec, seed).map_err(to_py_err)?,
            prior: PriorModel::symmetric_dirichlet(num_topics, alpha).map_err(to_py_err)?,
        })
    }

    /// One of the two matrices of the non-uniqueness counterexample
    /// (`which` is 1 or 2) with its degenerate prior, or a Dirichlet prior
    /// when `alpha` is given.
    #[staticmethod]
    #[pyo3(signature = (which=1, vocab_size=20, alpha=None))]
    fn figure1(which: u8, vocab_size: usize, alpha: Option<f64>) -> PyResult<Self> {
        let fig = figure1_models(vocab_size).map_err(to_py_err)?;
        let beta = match which {
            1 => fig.beta1,
            2 => fig.beta2,
            _ => return Err(PyValueError::new_err("which must be 1 or 2")),
        };
        let prior = match alpha {
            Some(a) => PriorModel::symmetric_dirichlet(3, a).map_err(to_py_err)?,
            None => fig.prior,
        };
        Ok(Self { beta, prior })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (beta, prior) = load_model(Path::new(path)).map_err(to_py_err)?;
        Ok(Self { beta, prior })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_model(Path::new(path), &ModelFile::new(&self.beta, &self.prior)).map_err(to_py_err)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.beta.vocab_size()
    }

    #[getter]
    fn num_topics(&self) -> usize {
        self.beta.num_topics()
    }

    #[getter]
    fn beta(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(self.beta.entries())
    }

    /// Normalized topic correlation `R'`.
    fn normalized_correlation(&self) -> Vec<Vec<f64>> {
        matrix_to_rows(&self.prior.normalized_correlation())
    }

    /// Ground-truth novel-word groups, one list per topic.
    fn novel_words(&self) -> PyResult<Vec<Vec<usize>>> {
        Ok(novel_words_of(&self.beta, 0.0).map_err(to_py_err)?.groups)
    }

    /// Infinite-corpus limit of the co-occurrence statistic.
    fn population_cooc(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_to_rows(&population_cooc(&self.beta, &self.prior).map_err(to_py_err)?))
    }

    /// Novel-word groups read off the extreme rows of the population statistic.
    #[pyo3(signature = (tol=ORACLE_TOL))]
    fn oracle(&self, tol: f64) -> PyResult<Vec<Vec<usize>>> {
        Ok(oracle_novel_words(&self.beta, &self.prior, tol).map_err(to_py_err)?.canonical())
    }

    /// Samples `docs` documents of `doc_len` words.
    #[pyo3(signature = (docs, doc_len, seed=0))]
    fn generate(&self, docs: usize, doc_len: u64, seed: u64) -> PyResult<Corpus> {
        let (_, corpus) = generate_corpus(&self.beta, &self.prior, docs, doc_len, seed).map_err(to_py_err)?;
        Ok(Corpus { inner: corpus })
    }

    fn __repr__(&self) -> String {
        format!("TopicModel(W={}, K={})", self.beta.vocab_size(), self.beta.num_topics())
    }
}

/// Bag-of-words corpus.
#[pyclass(module = "pynovelwords", skip_from_py_object)]
#[derive(Clone)]
struct Corpus {
    inner: novelwords::model::Corpus,
}

#[pymethods]
impl Corpus {
    /// Builds a corpus from `(word, count)` lists, one per document.
    #[new]
    fn new(vocab_size: usize, docs: Vec<Vec<(usize, u32)>>) -> PyResult<Self> {
        let counts = CountMatrix::from_docs(vocab_size, docs).map_err(to_py_err)?;
        Ok(Self {
            inner: novelwords::model::Corpus::new(counts),
        })
    }

    /// Reads the bag-of-words text format.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_uci(Path::new(path)).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_uci(Path::new(path), &self.inner).map_err(to_py_err)
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    #[getter]
    fn num_docs(&self) -> usize {
        self.inner.num_docs()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.counts().nnz()
    }

    /// `(word, count)` pairs of document `m`.
    fn doc(&self, m: usize) -> PyResult<Vec<(u32, u32)>> {
        if m >= self.inner.num_docs() {
            return Err(PyValueError::new_err("document index out of range"));
        }
        let (w, c) = self.inner.counts().doc(m);
        Ok(w.iter().copied().zip(c.iter().copied()).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.num_docs()
    }

    fn __repr__(&self) -> String {
        format!("Corpus(W={}, M={})", self.inner.vocab_size(), self.inner.num_docs())
    }
}

/// Runs the detector and returns a dict with `selected`, `phat`, `d_used`,
/// `nbd_sizes` and `diagnostics`. With `shards > 1` or `light` the
/// coordinator/shard protocol is used and `bytes` is added.
#[pyfunction]
#[pyo3(signature = (corpus, k, p=500, d=None, quantile=D_QUANTILE, seed=0, split_seed=None, shards=1, light=false))]
#[allow(clippy::too_many_arguments)]
fn detect<'py>(
    py: Python<'py>,
    corpus: &Corpus,
    k: usize,
    p: usize,
    d: Option<f64>,
    quantile: f64,
    seed: u64,
    split_seed: Option<u64>,
    shards: usize,
    light: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let config = DetectorConfig {
        k,
        projections: p,
        d: match d {
            Some(d) => DPolicy::Given { d },
            None => DPolicy::Estimated { quantile },
        },
        seed,
        split_seed,
        exclude: Vec::new(),
    };
    let corpus = &corpus.inner;
    let (result, bytes) = py
        .detach(|| {
            if shards == 1 && !light {
                detect_novel_words(corpus, &config).map(|r| (r, None))
            } else {
                let mode = if light { Mode::Light } else { Mode::Faithful };
                run_distributed(corpus, &config, shards, mode).map(|r| (r.result, Some(r.bytes)))
            }
        })
        .map_err(to_py_err)?;
    let mut doc = serde_json::to_value(&result).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    doc["bytes"] = json!(bytes);
    to_python(py, &doc)
}

/// Simplicial, diagonal-dominance and full-rank report for a square matrix.
#[pyfunction]
#[pyo3(signature = (matrix, tol=SIMPLICIAL_TOL))]
fn check<'py>(py: Python<'py>, matrix: Vec<Vec<f64>>, tol: f64) -> PyResult<Bound<'py, PyAny>> {
    let a = matrix_from_rows(&matrix).map_err(PyValueError::new_err)?;
    let report = check_conditions(&a, tol).map_err(to_py_err)?;
    to_python(py, &serde_json::to_value(report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?)
}

/// Two models with the same observations but different novel words, built
/// from a random non-simplicial prior on `k` topics.
#[pyfunction]
#[pyo3(signature = (k=3, vocab_size=10, alpha=0.5, b=None, seed=0))]
fn adversarial(k: usize, vocab_size: usize, alpha: f64, b: Option<f64>, seed: u64) -> PyResult<(TopicModel, TopicModel)> {
    if vocab_size < k + 2 {
        return Err(PyValueError::new_err("vocab_size must be at least k + 2"));
    }
    let prior = random_nonsimplicial_prior(k, seed).map_err(to_py_err)?;
    let filler = random_separable(
        RandomModelSpec {
            vocab_size: vocab_size - 2,
            num_topics: k,
            novel_per_topic: 1,
        },
        seed,
    )
    .map_err(to_py_err)?;
    let b = match b {
        Some(b) => b,
        None => 0.5 * max_scale(&prior, alpha).map_err(to_py_err)?,
    };
    let pair = adversarial_pair(&prior, &filler, b, alpha).map_err(to_py_err)?;
    Ok((
        TopicModel {
            beta: pair.beta1,
            prior: prior.clone(),
        },
        TopicModel {
            beta: pair.beta2,
            prior,
        },
    ))
}

#[pymodule]
fn pynovelwords(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<TopicModel>()?;
    m.add_class::<Corpus>()?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(adversarial, m)?)?;
    m.add("IncompleteRecoveryError", m.py().get_type::<IncompleteRecoveryError>())?;
    Ok(())
}
