//! Python bindings: `import fslab`.
//!
//! Matrices cross the boundary as lists of rows. Library errors become
//! `OSError` for file problems, `ArithmeticError` for numerical failures and
//! `ValueError` for everything else.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use fslab::checkpoint::{self, Checkpoint};
use fslab::config::RunConfig;
use fslab::eval::{evaluate, fuse_features};
use fslab::pipeline;
use fslab::protocol::{load_dataset, save_dataset, synth_generate, DatasetTable, SettingKind, Split};
use fslab::supervised::FeatureLayer;
use fslab::{Error, Matrix};

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        _ if matches!(e, Error::File { .. } | Error::Io(_)) => PyOSError::new_err(e.to_string()),
        3 => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(py_err)
}

/// Run configuration. Keys and values are the same as in config files.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (overrides=None, seed=None))]
    fn new(overrides: Option<BTreeMap<String, String>>, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in overrides.unwrap_or_default() {
            cfg.set(&k, &v).map_err(py_err)?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(Self { inner: cfg.resolved() })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let cfg = RunConfig::from_file(&path).map_err(py_err)?;
        Ok(Self { inner: cfg.resolved() })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)?;
        self.inner = self.inner.resolved();
        Ok(())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn to_dict(&self) -> BTreeMap<String, String> {
        self.inner.to_pairs().into_iter().collect()
    }

    fn __repr__(&self) -> String {
        format!("Config(seed={})", self.inner.seed)
    }
}

fn config_or_default(cfg: Option<&PyConfig>) -> RunConfig {
    cfg.map(|c| c.inner.clone()).unwrap_or_else(|| RunConfig::default().resolved())
}

#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: DatasetTable,
}

#[pymethods]
impl PyDataset {
    /// `split` entries are "base", "val" or "novel".
    #[new]
    fn new(features: Vec<Vec<f64>>, labels: Vec<u32>, split: Vec<String>) -> PyResult<Self> {
        let split = split
            .iter()
            .map(|s| s.parse::<Split>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(py_err)?;
        let inner = DatasetTable::new(to_matrix(features)?, labels, split).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Reads `PREFIX.meta.csv` and `PREFIX.fslf`.
    #[staticmethod]
    fn load(prefix: PathBuf) -> PyResult<Self> {
        let inner = load_dataset(
            &fslab::cli::meta_path(&prefix),
            &fslab::cli::features_path(&prefix),
        )
        .map_err(py_err)?;
        Ok(Self { inner })
    }

    fn save(&self, prefix: PathBuf) -> PyResult<()> {
        save_dataset(
            &self.inner,
            &fslab::cli::meta_path(&prefix),
            &fslab::cli::features_path(&prefix),
        )
        .map_err(py_err)
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features().to_rows()
    }

    #[getter]
    fn labels(&self) -> Vec<u32> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn split(&self) -> Vec<&'static str> {
        self.inner.split().iter().map(|s| s.as_str()).collect()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let (b, v, n) = self.inner.split_counts();
        format!("Dataset(rows={}, base={b}, val={v}, novel={n})", self.inner.len())
    }
}

#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    ck: Checkpoint,
    losses: Vec<f64>,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = checkpoint::load(&path).map_err(py_err)?;
        Ok(Self { ck, losses: Vec::new() })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&path, &self.ck).map_err(py_err)
    }

    /// "ssl" or "sup".
    #[getter]
    fn kind(&self) -> &'static str {
        self.ck.model.kind()
    }

    /// Per-step training losses; empty for a loaded checkpoint.
    #[getter]
    fn losses(&self) -> Vec<f64> {
        self.losses.clone()
    }

    #[getter]
    fn meta(&self) -> BTreeMap<String, String> {
        self.ck.meta.iter().cloned().collect()
    }

    /// Features of every row; `layer` is "logits" or "penultimate".
    #[pyo3(signature = (dataset, layer=None))]
    fn embed(&self, dataset: &PyDataset, layer: Option<&str>) -> PyResult<Vec<Vec<f64>>> {
        let layer = match layer.or(self.ck.meta_value("sup.feature_layer")) {
            None | Some("logits") => FeatureLayer::Logits,
            Some("penultimate") => FeatureLayer::Penultimate,
            Some(other) => return Err(PyValueError::new_err(format!("unknown feature layer {other:?}"))),
        };
        let m = pipeline::embed(&self.ck.model, dataset.inner.features(), layer).map_err(py_err)?;
        Ok(m.to_rows())
    }

    fn __repr__(&self) -> String {
        format!("Model(kind={:?}, input_dim={})", self.kind(), self.ck.model.input_dim())
    }
}

/// Generates the synthetic base/val/novel dataset.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn synth(config: Option<&PyConfig>) -> PyResult<PyDataset> {
    let cfg = config_or_default(config);
    let inner = synth_generate(&cfg.synth).map_err(py_err)?;
    Ok(PyDataset { inner })
}

/// Trains under "fsl", "ubc-fsl" or "ubc-tfsl".
#[pyfunction]
#[pyo3(signature = (dataset, setting, config=None))]
fn train(py: Python<'_>, dataset: &PyDataset, setting: &str, config: Option<&PyConfig>) -> PyResult<PyModel> {
    let kind: SettingKind = setting.parse().map_err(py_err)?;
    let cfg = config_or_default(config);
    let table = dataset.inner.clone();
    let trained = py
        .detach(|| pipeline::train_setting(&table, kind, &cfg))
        .map_err(py_err)?;
    Ok(PyModel {
        ck: pipeline::checkpoint(&trained, kind, &cfg),
        losses: trained.trace.iter().map(|p| p.loss).collect(),
    })
}

/// Concatenates two feature sets row by row and renormalizes.
#[pyfunction]
fn fuse(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(fuse_features(&to_matrix(a)?, &to_matrix(b)?).map_err(py_err)?.to_rows())
}

/// Episodic linear-probe accuracy of `features` on the dataset's novel classes.
#[pyfunction]
#[pyo3(signature = (features, dataset, config=None, shots=None))]
fn evaluate_features<'py>(
    py: Python<'py>,
    features: Vec<Vec<f64>>,
    dataset: &PyDataset,
    config: Option<&PyConfig>,
    shots: Option<usize>,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let cfg = config_or_default(config);
    let mut spec = cfg.episodes;
    spec.shots = shots.unwrap_or(spec.shots);
    let x = to_matrix(features)?;
    let table = &dataset.inner;
    let r = py
        .detach(|| evaluate(&x, table, &spec, &cfg.probe, cfg.normalize))
        .map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("ways", r.ways)?;
    d.set_item("shots", r.shots)?;
    d.set_item("queries", r.queries)?;
    d.set_item("episodes", r.episodes)?;
    d.set_item("mean_acc", r.mean_acc)?;
    d.set_item("ci95", r.ci95)?;
    d.set_item("summary", r.summary())?;
    d.set_item("per_episode_acc", r.per_episode_acc)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "fslab")]
fn fslab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add("evaluate", wrap_pyfunction!(evaluate_features, m)?)?;
    Ok(())
}
