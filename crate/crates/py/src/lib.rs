//! Python bindings. Complex vectors cross the boundary as lists of `complex`,
//! matrices as lists of rows, and reports as plain dicts.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

use stochloc::gaussian::{self, CircledNormSpec, DiscSpec, TestFunctional};
use stochloc::linalg::{ComplexMatrix, ComplexVec, HermitianMatrix};
use stochloc::localization::{self, ComplexGaussian, PathOptions};
use stochloc::montecarlo::{self, HitBudget, NormTag};
use stochloc::rng::StreamId;
use stochloc::variety::{self, catalog};

fn to_py_err(e: stochloc::Error) -> PyErr {
    match e {
        stochloc::Error::Validation { .. } | stochloc::Error::Domain(_) | stochloc::Error::Unsupported(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn vec_in(z: Vec<Complex64>) -> ComplexVec {
    ComplexVec::from_vec(z)
}

fn vec_out(z: &ComplexVec) -> Vec<Complex64> {
    z.iter().copied().collect()
}

fn matrix_out(m: &ComplexMatrix) -> Vec<Vec<Complex64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn hermitian_in(rows: Vec<Vec<Complex64>>) -> PyResult<HermitianMatrix> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    let m = ComplexMatrix::from_fn(n, n, |i, j| rows[i][j]);
    HermitianMatrix::new(m).map_err(to_py_err)
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_pyobject(py)?.into_any(),
            (None, Some(i)) => i.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(fields) => {
            let dict = PyDict::new(py);
            for (k, item) in fields {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

/// A polynomial map `f: C^n -> C^k` with a regular base point on its zero fiber.
#[pyclass(name = "PolynomialMap", module = "stochloc", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPolynomialMap {
    inner: variety::PolynomialMap,
}

#[pymethods]
impl PyPolynomialMap {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: variety::PolynomialMap::from_json_str(text).map_err(to_py_err)? })
    }

    #[staticmethod]
    fn hyperbola() -> Self {
        Self { inner: catalog::hyperbola() }
    }

    #[staticmethod]
    fn parabola() -> Self {
        Self { inner: catalog::parabola() }
    }

    #[staticmethod]
    fn paraboloid3() -> Self {
        Self { inner: catalog::paraboloid3() }
    }

    /// `z_j - c` on `C^n` (0-based `j`).
    #[staticmethod]
    fn coordinate(n: usize, j: usize, c: Complex64) -> PyResult<Self> {
        if j >= n {
            return Err(PyValueError::new_err("coordinate index out of range"));
        }
        Ok(Self { inner: catalog::coordinate(n, j, c) })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner.to_json()).expect("map serializes")
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.ambient_dim()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.codim()
    }

    #[getter]
    fn base_point(&self) -> Vec<Complex64> {
        vec_out(self.inner.base_point())
    }

    fn eval(&self, z: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
        Ok(vec_out(&self.inner.eval(&vec_in(z)).map_err(to_py_err)?))
    }

    fn jacobian(&self, z: Vec<Complex64>) -> PyResult<Vec<Vec<Complex64>>> {
        Ok(matrix_out(&self.inner.jacobian(&vec_in(z)).map_err(to_py_err)?))
    }

    /// Gauss-Newton projection; returns `(point, residual, iterations)`.
    #[pyo3(signature = (z, tol = variety::FIBER_TOL, max_iter = variety::DEFAULT_PROJECTION_ITERS))]
    fn project(&self, z: Vec<Complex64>, tol: f64, max_iter: usize) -> PyResult<(Vec<Complex64>, f64, usize)> {
        let fp = self.inner.project_to_fiber(&vec_in(z), tol, max_iter).map_err(to_py_err)?;
        Ok((vec_out(&fp.point), fp.residual, fp.iterations))
    }

    /// Multi-start upper bound on the distance from the origin to the fiber.
    #[pyo3(signature = (starts = variety::DEFAULT_DISTANCE_STARTS, seed = 0))]
    fn distance_to_origin(&self, starts: usize, seed: u64) -> PyResult<f64> {
        let s = self.inner.default_starts(starts, seed);
        Ok(self.inner.distance_to_origin(&s).map_err(to_py_err)?.distance)
    }

    fn __repr__(&self) -> String {
        format!("PolynomialMap(n={}, k={})", self.inner.ambient_dim(), self.inner.codim())
    }
}

/// Terminal state of one localization path.
#[pyclass(name = "LocalizationState", module = "stochloc", frozen)]
struct PyLocalizationState {
    inner: localization::LocalizationState,
}

#[pymethods]
impl PyLocalizationState {
    #[getter]
    fn t(&self) -> f64 {
        self.inner.t
    }

    #[getter]
    fn center(&self) -> Vec<Complex64> {
        vec_out(&self.inner.center)
    }

    #[getter]
    fn precision(&self) -> Vec<Vec<Complex64>> {
        matrix_out(self.inner.precision.as_matrix())
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.inner.residual
    }

    /// `e^{-p_t(z)}` for the current quadratic potential.
    fn weight(&self, z: Vec<Complex64>) -> PyResult<f64> {
        self.inner.potential().and_then(|p| p.weight(&vec_in(z))).map_err(to_py_err)
    }

    /// Center, covariance `2 B^{-1}` (truncated below `rank_tol`) and support dimension.
    #[pyo3(signature = (rank_tol = localization::DEFAULT_RANK_TOL))]
    fn terminal_gaussian<'py>(&self, py: Python<'py>, rank_tol: f64) -> PyResult<Bound<'py, PyDict>> {
        let g = localization::terminal_gaussian(&self.inner, rank_tol).map_err(to_py_err)?;
        let d = PyDict::new(py);
        d.set_item("center", vec_out(&g.center))?;
        d.set_item("covariance", matrix_out(g.covariance.as_matrix()))?;
        d.set_item("support_dim", g.support_dim)?;
        Ok(d)
    }
}

/// Runs one path and returns `(state, diagnostics)`; diagnostics are dicts per recorded time.
#[pyfunction]
#[pyo3(signature = (map, horizon, h = localization::DEFAULT_STEP, seed = 0, index = 0, record_every = 1))]
fn run_path<'py>(
    py: Python<'py>,
    map: &PyPolynomialMap,
    horizon: f64,
    h: f64,
    seed: u64,
    index: u64,
    record_every: usize,
) -> PyResult<(PyLocalizationState, Bound<'py, PyAny>)> {
    let opts = PathOptions { record_every, ..Default::default() };
    let result = py
        .detach(|| localization::run_path(&map.inner, horizon, h, StreamId::path(seed, index), &opts))
        .map_err(|a| PyRuntimeError::new_err(a.to_string()))?;
    let rows = to_py(py, &result.rows)?;
    Ok((PyLocalizationState { inner: result.state }, rows))
}

#[pyfunction]
fn disc_measure(k: usize, center_norm: f64, radius: f64) -> PyResult<f64> {
    Ok(gaussian::disc_measure(&DiscSpec::new(k, center_norm, radius).map_err(to_py_err)?))
}

#[pyfunction]
fn affine_tube_measure(n: usize, k: usize, d: f64, r: f64) -> PyResult<f64> {
    gaussian::affine_tube_measure(n, k, d, r).map_err(to_py_err)
}

/// `∫ φ dμ` for the complex Gaussian `(center, covariance)`; `functional` is a JSON object
/// such as `{"kind": "half_space", "u": [[1, 0], [0, 0]], "c": 0}`.
#[pyfunction]
fn gaussian_expectation(center: Vec<Complex64>, covariance: Vec<Vec<Complex64>>, functional: &str) -> PyResult<f64> {
    let mu = ComplexGaussian::new(vec_in(center), hermitian_in(covariance)?, 0.0).map_err(to_py_err)?;
    let v: Value = serde_json::from_str(functional).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let phi = TestFunctional::from_json(&v).map_err(to_py_err)?;
    gaussian::gaussian_expectation(&mu, &phi).map_err(to_py_err)
}

/// Both sides of the tilt inequality for precision `b` (k <= 2), tilt `v` and radius.
#[pyfunction]
fn tilt_check<'py>(py: Python<'py>, b: Vec<Vec<Complex64>>, v: Vec<Complex64>, radius: f64) -> PyResult<Bound<'py, PyAny>> {
    let t = gaussian::tilt_inequality_check(&hermitian_in(b)?, &vec_in(v), radius).map_err(to_py_err)?;
    to_py(py, &t)
}

/// `(r_K, touch_point, axis)` for the norm `|diag(weights) z|`.
#[pyfunction]
fn circled_norm_geometry(weights: Vec<f64>) -> PyResult<(f64, Vec<Complex64>, usize)> {
    let g = gaussian::circled_norm_geometry(&CircledNormSpec::new(weights).map_err(to_py_err)?);
    Ok((g.inradius, vec_out(&g.touch_point), g.axis))
}

#[pyfunction]
fn confidence_interval(hits: usize, n: usize) -> PyResult<(f64, f64, f64, f64)> {
    let ci = montecarlo::confidence_interval(hits, n).map_err(to_py_err)?;
    Ok((ci.p_hat, ci.stderr, ci.wilson_low, ci.wilson_high))
}

/// Tube estimates on common samples for each radius; circled norm when `weights` is given.
#[pyfunction]
#[pyo3(signature = (map, r_grid, n_samples, seed = 0, weights = None))]
fn estimate_tube<'py>(
    py: Python<'py>,
    map: &PyPolynomialMap,
    r_grid: Vec<f64>,
    n_samples: usize,
    seed: u64,
    weights: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let norm = weights.map_or(NormTag::Euclidean, NormTag::Circled);
    let profile = py
        .detach(|| montecarlo::estimate_tube_profile(&map.inner, &r_grid, &norm, n_samples, seed, &HitBudget::default()))
        .map_err(to_py_err)?;
    to_py(py, &profile)
}

#[pyfunction]
#[pyo3(signature = (map, r_grid, n_samples, seed = 0, distance = None))]
fn waist_check<'py>(
    py: Python<'py>,
    map: &PyPolynomialMap,
    r_grid: Vec<f64>,
    n_samples: usize,
    seed: u64,
    distance: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .detach(|| montecarlo::waist_check(&map.inner, &r_grid, n_samples, seed, distance, &HitBudget::default()))
        .map_err(to_py_err)?;
    to_py(py, &report)
}

#[pymodule]
#[pyo3(name = "stochloc")]
fn stochloc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPolynomialMap>()?;
    m.add_class::<PyLocalizationState>()?;
    m.add_function(wrap_pyfunction!(run_path, m)?)?;
    m.add_function(wrap_pyfunction!(disc_measure, m)?)?;
    m.add_function(wrap_pyfunction!(affine_tube_measure, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_expectation, m)?)?;
    m.add_function(wrap_pyfunction!(tilt_check, m)?)?;
    m.add_function(wrap_pyfunction!(circled_norm_geometry, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_interval, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_tube, m)?)?;
    m.add_function(wrap_pyfunction!(waist_check, m)?)?;
    Ok(())
}
