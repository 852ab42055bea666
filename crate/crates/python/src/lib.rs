//! Python module `qi2`.
//!
//! ```python
//! import qi2
//! ds = qi2.Dataset([[0.0], [1.0], [2.0]], [[0.0], [2.0], [4.0]])
//! res = qi2.compute(ds, k_max=2)
//! res.trajectory(0)
//! ```

use std::sync::OnceLock;

use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use qi2_core::analysis::{self, DetectorConfig};
use qi2_core::container::{self, Results as CoreResults};
use qi2_core::dataset::{self, Dataset as CoreDataset, Labels};
use qi2_core::error::{Error, ErrorKind};
use qi2_core::knn::{build_index, NeighborIndex};
use qi2_core::metrics::{Metric, Metrics};
use qi2_core::pipeline::{self, ComputeOptions};
use qi2_core::qi2::{qi2r_direct, Stabilizer, DEFAULT_EPSILON};

create_exception!(qi2, DataError, PyException, "Malformed, inconsistent or unreadable data.");

fn py_err(e: Error) -> PyErr {
    match e.kind() {
        ErrorKind::Config => PyValueError::new_err(e.to_string()),
        _ => DataError::new_err(e.to_string()),
    }
}

fn metrics(input: &str, output: &str) -> PyResult<Metrics> {
    let parse = |s: &str| s.parse::<Metric>().map_err(py_err);
    Ok(Metrics::new(parse(input)?, parse(output)?))
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> PyResult<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err(format!("{what} rows must all have the same length")));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, width), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_py_json<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn detector_config(py: Python<'_>, base: &DetectorConfig, config: Option<&Bound<'_, PyDict>>) -> PyResult<DetectorConfig> {
    let Some(config) = config else {
        return Ok(base.clone());
    };
    let text: String = py.import("json")?.call_method1("dumps", (config,))?.extract()?;
    let overrides: serde_json::Value = serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let mut merged = serde_json::to_value(base).map_err(|e| PyValueError::new_err(e.to_string()))?;
    match (merged.as_object_mut(), overrides) {
        (Some(m), serde_json::Value::Object(o)) => m.extend(o),
        _ => return Err(PyValueError::new_err("config must be a dict")),
    }
    let cfg: DetectorConfig = serde_json::from_value(merged).map_err(|e| PyValueError::new_err(e.to_string()))?;
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Points with input and output vectors and optional class labels.
#[pyclass(frozen, module = "qi2")]
pub struct Dataset {
    inner: CoreDataset,
}

#[pymethods]
impl Dataset {
    #[new]
    #[pyo3(signature = (inputs, outputs, labels=None))]
    fn new(inputs: Vec<Vec<f64>>, outputs: Vec<Vec<f64>>, labels: Option<Vec<String>>) -> PyResult<Self> {
        let mut ds = CoreDataset::from_parts(matrix(inputs, "input")?, matrix(outputs, "output")?).map_err(py_err)?;
        if let Some(l) = labels {
            ds = ds.with_labels(Labels::from_strings(l)).map_err(py_err)?;
        }
        Ok(Self { inner: ds })
    }

    /// Column specs as on the command line, e.g. `"0,2-4"` or header names.
    #[staticmethod]
    #[pyo3(signature = (path, input_cols, output_cols, label_col=None))]
    fn from_csv(path: &str, input_cols: &str, output_cols: &str, label_col: Option<&str>) -> PyResult<Self> {
        let cols = |s| dataset::parse_column_list(s).map_err(py_err);
        let label = match label_col {
            Some(l) => cols(l)?.into_iter().next(),
            None => None,
        };
        let ds = dataset::load_csv(path, &cols(input_cols)?, &cols(output_cols)?, label.as_ref()).map_err(py_err)?;
        Ok(Self { inner: ds })
    }

    #[staticmethod]
    fn from_mnist(images: &str, labels: &str) -> PyResult<Self> {
        Ok(Self {
            inner: dataset::load_idx_mnist(images, labels).map_err(py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
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
    fn labels(&self) -> Option<Vec<String>> {
        self.inner
            .labels()
            .map(|l| (0..l.len()).map(|i| l.name(i).to_string()).collect())
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.inner.write_csv(path).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, input_dim={}, output_dim={}, labeled={})",
            self.inner.len(),
            self.inner.input_dim(),
            self.inner.output_dim(),
            self.inner.labels().is_some()
        )
    }
}

/// Local scores, histogram grid and header of one computation.
#[pyclass(frozen, module = "qi2")]
pub struct Results {
    inner: CoreResults,
    index: OnceLock<NeighborIndex>,
}

impl Results {
    fn wrap(inner: CoreResults, index: Option<NeighborIndex>) -> Self {
        let cell = OnceLock::new();
        if let Some(i) = index {
            let _ = cell.set(i);
        }
        Self { inner, index: cell }
    }

    fn check(&self, i: usize, k: usize) -> PyResult<()> {
        let m = &self.inner.matrix;
        if i >= m.len() || k == 0 || k > m.k_max() {
            return Err(PyIndexError::new_err(format!("({i}, {k}) outside {} points x k=1..={}", m.len(), m.k_max())));
        }
        Ok(())
    }

    fn index_for(&self, ds: &CoreDataset) -> PyResult<&NeighborIndex> {
        if let Some(i) = self.index.get() {
            return Ok(i);
        }
        let h = &self.inner.header;
        let idx = build_index(ds, h.metrics.input, h.k_max).map_err(py_err)?;
        Ok(self.index.get_or_init(|| idx))
    }
}

#[pymethods]
impl Results {
    #[getter]
    fn n(&self) -> usize {
        self.inner.header.n
    }

    #[getter]
    fn k_max(&self) -> usize {
        self.inner.header.k_max
    }

    #[getter]
    fn global_qi2r(&self) -> Option<f64> {
        self.inner.header.global_qi2r
    }

    /// Container header as a dict.
    fn header<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(&self.inner.header).map_err(|e| PyValueError::new_err(e.to_string()))?;
        to_py_json(py, &text)
    }

    fn value(&self, i: usize, k: usize) -> PyResult<f64> {
        self.check(i, k)?;
        Ok(self.inner.matrix.value(i, k))
    }

    fn is_valid(&self, i: usize, k: usize) -> PyResult<bool> {
        self.check(i, k)?;
        Ok(self.inner.matrix.is_valid(i, k))
    }

    /// `(k, value)` pairs of the valid entries for point `i`.
    fn trajectory(&self, i: usize) -> PyResult<Vec<(usize, f64)>> {
        self.check(i, 1)?;
        Ok(self.inner.matrix.trajectory(i))
    }

    /// Scores as `n` rows of `k_max` values.
    fn matrix(&self) -> Vec<Vec<f64>> {
        let m = &self.inner.matrix;
        (0..m.len()).map(|i| m.row(i).to_vec()).collect()
    }

    /// Histogram grid as `bins` rows (bottom first) of `k_max` values.
    fn grid(&self) -> Vec<Vec<f64>> {
        self.inner.grid.grid.chunks(self.inner.grid.k_max).map(<[f64]>::to_vec).collect()
    }

    fn select(&self, k_range: (usize, usize), value_range: (f64, f64)) -> PyResult<Vec<usize>> {
        analysis::select_region(&self.inner.matrix, k_range, value_range).map_err(py_err)
    }

    /// Runs a detector and returns its report as a dict. Neighbor-based
    /// detectors need the dataset the results were computed from.
    #[pyo3(signature = (name, dataset=None, config=None))]
    fn detect<'py>(
        &self,
        py: Python<'py>,
        name: &str,
        dataset: Option<&Dataset>,
        config: Option<&Bound<'py, PyDict>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cfg = detector_config(py, &self.inner.header.detector_defaults, config)?;
        let m = &self.inner.matrix;
        let need = |what: &str| {
            dataset.ok_or_else(|| PyValueError::new_err(format!("the {what} detector needs the dataset")))
        };
        let report = match name {
            "homogeneous" => analysis::detect_homogeneous(m, &cfg),
            "simple-subsets" => analysis::detect_simple_subsets(m, &cfg),
            "ood" | "outliers" => {
                let ds = &need(name)?.inner;
                self.check_dataset(ds)?;
                let idx = self.index_for(ds)?;
                if name == "ood" {
                    analysis::detect_ood(m, ds.labels(), idx, &cfg)
                } else {
                    analysis::detect_outliers(m, ds.labels(), idx, &cfg)
                }
            }
            _ => return Err(PyValueError::new_err(format!("unknown detector '{name}'"))),
        }
        .map_err(py_err)?;
        to_py_json(py, &report.to_json().map_err(py_err)?)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        container::save_results(&self.inner, path).map_err(py_err)
    }

    /// Loads a container, checking it against `dataset` when given.
    #[staticmethod]
    #[pyo3(signature = (path, dataset=None))]
    fn load(path: &str, dataset: Option<&Dataset>) -> PyResult<Self> {
        let fp = dataset.map(|d| d.inner.fingerprint());
        let inner = container::load_results(path, fp.as_deref()).map_err(py_err)?;
        Ok(Self::wrap(inner, None))
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, pyo3::types::PyBytes>> {
        Ok(pyo3::types::PyBytes::new(py, &self.inner.to_bytes().map_err(py_err)?))
    }

    fn render(&self, path: &str, scale: u32) -> PyResult<()> {
        qi2_core::export::render_heatmap(&self.inner.grid, path, scale).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Results(n={}, k_max={})", self.inner.header.n, self.inner.header.k_max)
    }
}

impl Results {
    fn check_dataset(&self, ds: &CoreDataset) -> PyResult<()> {
        if ds.fingerprint() != self.inner.header.dataset_fingerprint {
            return Err(DataError::new_err("dataset does not match the results fingerprint"));
        }
        Ok(())
    }
}

/// Full pipeline: neighbor index, local scores, histogram, header.
#[pyfunction]
#[pyo3(signature = (dataset, k_max=100, input_metric="euclidean", output_metric="euclidean", epsilon=DEFAULT_EPSILON, bins=100, gamma=0.5, global_score=true))]
#[allow(clippy::too_many_arguments)]
fn compute(
    py: Python<'_>,
    dataset: &Dataset,
    k_max: usize,
    input_metric: &str,
    output_metric: &str,
    epsilon: f64,
    bins: usize,
    gamma: f64,
    global_score: bool,
) -> PyResult<Results> {
    let opts = ComputeOptions {
        metrics: metrics(input_metric, output_metric)?,
        k_max,
        epsilon,
        bins,
        gamma,
        global: global_score,
        ..ComputeOptions::default()
    };
    let ds = &dataset.inner;
    let c = py.detach(|| pipeline::compute(ds, &opts, None)).map_err(py_err)?;
    Ok(Results::wrap(c.results, Some(c.index)))
}

/// Score of the whole dataset.
#[pyfunction]
#[pyo3(signature = (dataset, input_metric="euclidean", output_metric="euclidean", epsilon=DEFAULT_EPSILON))]
fn global_qi2r(py: Python<'_>, dataset: &Dataset, input_metric: &str, output_metric: &str, epsilon: f64) -> PyResult<f64> {
    let m = metrics(input_metric, output_metric)?;
    let ds = &dataset.inner;
    py.detach(|| analysis::global_qi2r(ds, m, epsilon)).map_err(py_err)
}

/// Score of an arbitrary subset by direct pair enumeration.
#[pyfunction]
#[pyo3(signature = (dataset, ids, input_metric="euclidean", output_metric="euclidean", epsilon=DEFAULT_EPSILON))]
fn subset_qi2r(dataset: &Dataset, ids: Vec<usize>, input_metric: &str, output_metric: &str, epsilon: f64) -> PyResult<f64> {
    let m = metrics(input_metric, output_metric)?;
    let stab = Stabilizer::from_dataset(&dataset.inner, m, epsilon).map_err(py_err)?;
    qi2r_direct(&ids, &dataset.inner, m, &stab).map_err(py_err)
}

/// `(k, count)` of points whose first `k` neighbors share their label.
#[pyfunction]
#[pyo3(signature = (dataset, ks, metric="euclidean"))]
fn cluster_counts(py: Python<'_>, dataset: &Dataset, ks: Vec<usize>, metric: &str) -> PyResult<Vec<(usize, usize)>> {
    let ds = &dataset.inner;
    let labels = ds
        .labels()
        .ok_or_else(|| PyValueError::new_err("cluster counts need a labeled dataset"))?;
    let metric = metric.parse::<Metric>().map_err(py_err)?;
    let k = ks.iter().copied().max().unwrap_or(1);
    py.detach(|| {
        let idx = build_index(ds, metric, k)?;
        analysis::homogeneous_cluster_counts(labels, &idx, &ks)
    })
    .map_err(py_err)
}

#[pymodule]
pub fn qi2(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Results>()?;
    m.add_function(wrap_pyfunction!(compute, m)?)?;
    m.add_function(wrap_pyfunction!(global_qi2r, m)?)?;
    m.add_function(wrap_pyfunction!(subset_qi2r, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_counts, m)?)?;
    m.add("DataError", m.py().get_type::<DataError>())?;
    m.add("DEFAULT_EPSILON", DEFAULT_EPSILON)?;
    Ok(())
}
