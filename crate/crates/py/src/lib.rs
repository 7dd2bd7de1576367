//! Python bindings for `hmvp`.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

use hmvp::mvp::{counterexample_report as ce_report, expansion_study as exp_study};
use hmvp::{Error, GridSpec, PValue, Resolution, SolverConfig, SpaceTimeGrid};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Convergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for hmvp::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        // Non-finite floats are serialized as strings.
        Value::String(s) => match s.as_str() {
            "inf" => f64::INFINITY.into_pyobject(py)?.into_any(),
            "-inf" => f64::NEG_INFINITY.into_pyobject(py)?.into_any(),
            "nan" => f64::NAN.into_pyobject(py)?.into_any(),
            _ => s.into_pyobject(py)?.into_any(),
        },
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Accepts a float or a string such as `"inf"`.
fn p_value(p: &Bound<'_, PyAny>) -> PyResult<PValue> {
    if let Ok(x) = p.extract::<f64>() {
        return PValue::finite(x).py();
    }
    let s: String = p.extract()?;
    s.parse().py()
}

/// A point of the Heisenberg group `H^n`.
#[pyclass(name = "HPoint", module = "hmvp_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHPoint(hmvp::HPoint);

#[pymethods]
impl PyHPoint {
    #[new]
    fn new(coords: Vec<f64>) -> PyResult<Self> {
        if coords.len() < 3 || coords.len().is_multiple_of(2) {
            return Err(PyValueError::new_err(format!(
                "a point of H^n has 2n+1 coordinates, got {}",
                coords.len()
            )));
        }
        let n = (coords.len() - 1) / 2;
        Ok(Self(hmvp::HPoint::new(n, &coords).py()?))
    }

    #[staticmethod]
    fn origin(n: usize) -> Self {
        Self(hmvp::HPoint::origin(n))
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn coords(&self) -> Vec<f64> {
        self.0.coords().to_vec()
    }

    fn compose(&self, other: &PyHPoint) -> PyResult<Self> {
        Ok(Self(self.0.compose(&other.0).py()?))
    }

    fn __mul__(&self, other: &PyHPoint) -> PyResult<Self> {
        self.compose(other)
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    fn dilate(&self, factor: f64) -> PyResult<Self> {
        Ok(Self(hmvp::dilate(factor, &self.0).py()?))
    }

    fn gauge(&self) -> f64 {
        self.0.gauge()
    }

    fn psi(&self) -> f64 {
        self.0.psi()
    }

    fn __repr__(&self) -> String {
        format!("HPoint({:?})", self.0.coords())
    }
}

/// Parameters of the mean-value operators.
#[pyclass(name = "MvpParams", module = "hmvp_py", frozen)]
struct PyParams(hmvp::MvpParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (n, p, eps, window_scale=None))]
    fn new(n: usize, p: &Bound<'_, PyAny>, eps: f64, window_scale: Option<f64>) -> PyResult<Self> {
        let mut params = hmvp::MvpParams::new(n, p_value(p)?, eps).py()?;
        if let Some(s) = window_scale {
            params = params.with_window_scale(s).py()?;
        }
        Ok(Self(params))
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.0.epsilon
    }

    #[getter(M)]
    fn m(&self) -> f64 {
        self.0.m
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta
    }

    #[getter]
    fn window_length(&self) -> f64 {
        self.0.window_length()
    }

    fn __repr__(&self) -> String {
        format!(
            "MvpParams(n={}, p={}, eps={}, alpha={}, beta={})",
            self.0.n, self.0.p, self.0.epsilon, self.0.alpha, self.0.beta
        )
    }
}

fn field(spec: &str, n: usize) -> PyResult<hmvp::ScalarField> {
    hmvp::resolve_field(spec, n).py()
}

#[pyfunction]
fn m_constant(n: usize) -> PyResult<f64> {
    hmvp::m_constant(n).py()
}

#[pyfunction]
fn alpha_beta(p: &Bound<'_, PyAny>, n: usize) -> PyResult<(f64, f64)> {
    hmvp::alpha_beta(p_value(p)?, n).py()
}

/// Normalized moments of the weighted ball rule; `resolution` is
/// `(n_rho, n_phi, n_theta...)`.
#[pyfunction]
#[pyo3(signature = (n, eps, resolution=None))]
fn moment_check<'py>(py: Python<'py>, n: usize, eps: f64, resolution: Option<Vec<usize>>) -> PyResult<Bound<'py, PyAny>> {
    let res = match resolution {
        None => Resolution::default_for(n),
        Some(v) if v.len() == 3 => Resolution::new(v[0], v[1], v[2]),
        Some(v) if v.len() > 3 => Resolution::per_angle(v[0], v[1], v[2..].to_vec()),
        Some(_) => return Err(PyValueError::new_err("resolution needs at least three counts")),
    };
    let report = py.detach(|| -> hmvp::Result<_> {
        let rule = hmvp::build_rule(n, eps, res)?;
        hmvp::moment_check(n, eps, &rule)
    });
    to_dict(py, &report.py()?)
}

/// Weighted ball mean of a field (built-in id or polynomial) at time `t`.
#[pyfunction]
#[pyo3(signature = (spec, x, eps, t=0.0))]
fn weighted_mean(py: Python<'_>, spec: &str, x: &PyHPoint, eps: f64, t: f64) -> PyResult<f64> {
    let n = x.0.n();
    let u = field(spec, n)?;
    py.detach(|| {
        let rule = hmvp::build_rule(n, eps, Resolution::default_for(n))?;
        hmvp::weighted_ball_average(&|y| u.eval_raw(t, y), &x.0, &rule)
    })
    .py()
}

#[pyfunction]
fn spacetime_weighted_mean(py: Python<'_>, spec: &str, t: f64, x: &PyHPoint, params: &PyParams) -> PyResult<f64> {
    let u = field(spec, x.0.n())?;
    py.detach(|| hmvp::spacetime_weighted_mean(&u, t, &x.0, &params.0)).py()
}

#[pyfunction]
fn spacetime_midrange(py: Python<'_>, spec: &str, t: f64, x: &PyHPoint, params: &PyParams) -> PyResult<f64> {
    let u = field(spec, x.0.n())?;
    py.detach(|| hmvp::spacetime_midrange(&u, t, &x.0, &params.0)).py()
}

#[pyfunction]
fn mvp_blend(py: Python<'_>, spec: &str, t: f64, x: &PyHPoint, params: &PyParams) -> PyResult<f64> {
    let u = field(spec, x.0.n())?;
    py.detach(|| hmvp::mvp_blend(&u, t, &x.0, &params.0)).py()
}

/// Expansion residuals along `eps` and their fitted order.
#[pyfunction]
#[pyo3(signature = (spec, p, t, x, eps=vec![0.4, 0.2, 0.1, 0.05], window_scale=None))]
fn expansion_study<'py>(
    py: Python<'py>,
    spec: &str,
    p: &Bound<'_, PyAny>,
    t: f64,
    x: &PyHPoint,
    eps: Vec<f64>,
    window_scale: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let n = x.0.n();
    let u = field(spec, n)?;
    let p = p_value(p)?;
    let first = *eps.first().ok_or_else(|| PyValueError::new_err("empty radius ladder"))?;
    let study = py.detach(|| -> hmvp::Result<_> {
        let mut base = hmvp::MvpParams::new(n, p, first)?;
        if let Some(s) = window_scale {
            base = base.with_window_scale(s)?;
        }
        exp_study(&u, t, &x.0, &base, &eps)
    });
    to_dict(py, &study.py()?)
}

#[pyfunction]
#[pyo3(signature = (eps=vec![0.4, 0.2, 0.1, 0.05]))]
fn counterexample_report<'py>(py: Python<'py>, eps: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    let report = py.detach(|| ce_report(&eps)).py()?;
    let d = to_dict(py, &report)?;
    d.set_item("passed", report.passed())?;
    Ok(d)
}

/// Runs the slab solver on `(0, T) × B_R` and returns the final slab, the
/// per-slab diagnostics and, with `reference`, the per-slab errors.
#[pyfunction]
#[pyo3(signature = (
    n, p, eps, domain_radius, data, collar=None, t_final=None, delta_t=None,
    lattice_ratio=None, reference=None, lateral=None
))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    n: usize,
    p: &Bound<'_, PyAny>,
    eps: f64,
    domain_radius: f64,
    data: &str,
    collar: Option<f64>,
    t_final: Option<f64>,
    delta_t: Option<f64>,
    lattice_ratio: Option<usize>,
    reference: Option<&str>,
    lateral: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let desk = GridSpec::desk(n, eps);
    let spec = GridSpec {
        domain_radius,
        collar: collar.unwrap_or(desk.collar),
        t_final: t_final.unwrap_or(desk.t_final),
        delta_t: delta_t.unwrap_or(desk.delta_t),
        lattice_ratio: lattice_ratio.unwrap_or(desk.lattice_ratio),
        ..desk
    };
    let p = p_value(p)?;
    let initial = field(data, n)?;
    let lateral = field(lateral.unwrap_or(data), n)?;
    let reference = reference.map(|r| field(r, n)).transpose()?;
    let (out, errors) = py
        .detach(|| -> hmvp::Result<_> {
            let grid = Arc::new(SpaceTimeGrid::new(spec)?);
            let config = SolverConfig::new(hmvp::MvpParams::new(n, p, eps)?);
            let out = hmvp::solve(&grid, &config, &initial, &lateral)?;
            let errors = reference.as_ref().map(|r| hmvp::error_report(&out, r)).transpose()?;
            Ok((out, errors))
        })
        .py()?;
    let grid = out.grid();
    let last = grid.times.len() - 1;
    let d = PyDict::new(py);
    d.set_item("times", grid.times.clone())?;
    d.set_item("h", grid.h)?;
    let coords: Vec<Vec<f64>> = grid.interior.iter().map(|&i| grid.nodes[i as usize].coords().to_vec()).collect();
    d.set_item("interior_coords", coords)?;
    d.set_item("final_values", out.interior_values(last))?;
    d.set_item("diagnostics", to_dict(py, &out.diagnostics)?)?;
    d.set_item("calibration", to_dict(py, &out.calibration)?)?;
    if let Some(e) = errors {
        d.set_item("max_error", e.iter().map(|s| s.max_error).fold(0.0, f64::max))?;
        d.set_item("errors", to_dict(py, &e)?)?;
    }
    Ok(d.into_any())
}

#[pymodule]
fn hmvp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHPoint>()?;
    m.add_class::<PyParams>()?;
    m.add_function(wrap_pyfunction!(m_constant, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_beta, m)?)?;
    m.add_function(wrap_pyfunction!(moment_check, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_mean, m)?)?;
    m.add_function(wrap_pyfunction!(spacetime_weighted_mean, m)?)?;
    m.add_function(wrap_pyfunction!(spacetime_midrange, m)?)?;
    m.add_function(wrap_pyfunction!(mvp_blend, m)?)?;
    m.add_function(wrap_pyfunction!(expansion_study, m)?)?;
    m.add_function(wrap_pyfunction!(counterexample_report, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add("BUILTIN_FIELDS", hmvp::fields::BUILTIN_IDS.to_vec())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
