//! Python bindings: network constructions, evaluation, Monte Carlo error and
//! the spectral helpers.

use maxnet::construct;
use maxnet::lowerbound::{build_weight_graph, find_triangle, parallelotope_floor};
use maxnet::net::Scratch;
use maxnet::sampling::{self, DistributionSpec};
use maxnet::spectral;
use maxnet::FeedForwardNet;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyComplex, PyDict};

fn to_py(e: maxnet::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Net", module = "maxnet_py", frozen)]
struct PyNet {
    inner: FeedForwardNet,
}

#[pymethods]
impl PyNet {
    #[staticmethod]
    fn depth3_max(d: usize, alpha: f64) -> PyResult<Self> {
        Ok(Self {
            inner: construct::depth3_max(d, alpha).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (d, alpha, k=2))]
    fn deep_max(d: usize, alpha: f64, k: u32) -> PyResult<Self> {
        Ok(Self {
            inner: construct::deep_max(d, alpha, k).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn exact_max_tree(d: usize) -> PyResult<Self> {
        Ok(Self {
            inner: construct::exact_max_tree(d).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: FeedForwardNet::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Net computing `R * N((x - a) / R) + a`.
    #[pyo3(signature = (a, r))]
    fn rescale(&self, a: f64, r: f64) -> PyResult<Self> {
        Ok(Self {
            inner: construct::rescale_to_box(&self.inner, a, r).map_err(to_py)?,
        })
    }

    fn evaluate(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.evaluate(&x).map_err(to_py)
    }

    fn evaluate_batch(&self, py: Python<'_>, xs: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        py.detach(|| {
            let mut scratch = Scratch::default();
            xs.iter()
                .map(|x| self.inner.evaluate_with(x, &mut scratch))
                .collect::<maxnet::Result<Vec<f64>>>()
        })
        .map_err(to_py)
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.stats();
        let d = PyDict::new(py);
        d.set_item("depth", s.depth)?;
        d.set_item("width", s.width)?;
        d.set_item("size", s.size)?;
        d.set_item("max_abs_weight", s.max_abs_weight)?;
        Ok(d)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn metadata(&self) -> String {
        self.inner.metadata().to_string()
    }

    /// Edges of the first-layer weight graph (0-based) and a triangle if any.
    fn weight_graph<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let g = build_weight_graph(&self.inner.layers()[0]);
        let d = PyDict::new(py);
        d.set_item("edges", g.edges())?;
        d.set_item("triangle", find_triangle(&g))?;
        Ok(d)
    }

    fn kernel_floor<'py>(&self, py: Python<'py>, n: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
        let r = py
            .detach(|| parallelotope_floor(&self.inner, n, seed))
            .map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("kernel", r.kernel.v.clone())?;
        d.set_item("floor", r.floor)?;
        d.set_item("mse", r.empirical.mean_sq_error)?;
        d.set_item("std_error", r.empirical.std_error)?;
        d.set_item("constancy_deviation", r.constancy_deviation)?;
        d.set_item("floor_holds", r.floor_holds())?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        let s = self.inner.stats();
        format!(
            "Net(d={}, depth={}, width={}, size={})",
            self.inner.input_dim(),
            s.depth,
            s.width,
            s.size
        )
    }
}

fn dist_spec(kind: &str, d: usize, a: f64, r: f64, seed: u64) -> PyResult<DistributionSpec> {
    let spec = match kind {
        "uniform" => DistributionSpec::uniform(a, r, d, seed),
        "gauss" => DistributionSpec::gaussian(d, seed),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown distribution {other:?}; expected 'uniform' or 'gauss'"
            )))
        }
    };
    spec.validate().map_err(to_py)?;
    Ok(spec)
}

/// Monte Carlo estimate of `E[(net(x) - max(x))^2]`.
#[pyfunction]
#[pyo3(signature = (net, n, seed, dist="uniform", a=0.0, r=1.0))]
fn mc_l2_error<'py>(
    py: Python<'py>,
    net: &PyNet,
    n: usize,
    seed: u64,
    dist: &str,
    a: f64,
    r: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = dist_spec(dist, net.inner.input_dim(), a, r, seed)?;
    let est = py
        .detach(|| sampling::mc_max_error(&net.inner, &spec, n))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("mse", est.mean_sq_error)?;
    out.set_item("std_error", est.std_error)?;
    out.set_item("n", est.n_samples)?;
    out.set_item("ci95", est.ci95)?;
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (d, r, epsilon))]
fn alpha_for_accuracy(d: usize, r: f64, epsilon: f64) -> PyResult<f64> {
    construct::alpha_for_accuracy(d, r, epsilon).map_err(to_py)
}

#[pyfunction]
fn beta(k: u32) -> PyResult<f64> {
    construct::beta(k).map_err(to_py)
}

#[pyfunction]
fn is_delta_separated(x: Vec<f64>, delta: f64) -> bool {
    sampling::is_delta_separated(&x, delta)
}

#[pyfunction]
fn dawson(x: f64) -> f64 {
    spectral::dawson(x)
}

#[pyfunction]
fn q1_transform(py: Python<'_>, xi: Vec<f64>) -> PyResult<Bound<'_, PyComplex>> {
    let v = spectral::q1_transform(&xi).map_err(to_py)?.value;
    Ok(PyComplex::from_doubles(py, v.re, v.im))
}

#[pyfunction]
fn magnitude_bound(d: usize) -> f64 {
    spectral::magnitude_bound(d)
}

#[pymodule]
fn maxnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNet>()?;
    m.add_function(wrap_pyfunction!(mc_l2_error, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_for_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(beta, m)?)?;
    m.add_function(wrap_pyfunction!(is_delta_separated, m)?)?;
    m.add_function(wrap_pyfunction!(dawson, m)?)?;
    m.add_function(wrap_pyfunction!(q1_transform, m)?)?;
    m.add_function(wrap_pyfunction!(magnitude_bound, m)?)?;
    Ok(())
}
