//! Python bindings: MCD fits, spherical-model constants, influence
//! functions, plug-in variances and simulation checks.

use mcd_core::density::{EllipticalDensity, ModelSpec};
use mcd_core::elliptical::{alpha_gamma, r_gamma, EllipticalConstants};
use mcd_core::estimator::{self, SampleSet};
use mcd_core::functional::{plug_in_lambda_prime, sandwich_covariance, Bandwidth, PlugInDensity};
use mcd_core::linalg::tangent_labels;
use mcd_core::montecarlo::{self, EstimatorChoice, PluginMode, SimConfig};
use mcd_core::quadrature::SphereRule;
use mcd_core::McdError;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

create_exception!(mcd, McdException, PyValueError, "Raised for estimation and theory failures.");

fn err(e: McdError) -> PyErr {
    McdException::new_err(e.to_string())
}

fn samples(data: Vec<Vec<f64>>) -> PyResult<SampleSet> {
    SampleSet::new(data).map_err(err)
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| McdException::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Result of an MCD fit.
#[pyclass(name = "McdFit", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMcdFit {
    inner: estimator::McdFit,
}

#[pymethods]
impl PyMcdFit {
    #[getter]
    fn location(&self) -> Vec<f64> {
        self.inner.location.iter().copied().collect()
    }

    #[getter]
    fn scatter(&self) -> Vec<Vec<f64>> {
        rows(self.inner.scatter.as_matrix())
    }

    /// Symmetric square root of the scatter.
    #[getter]
    fn shape(&self) -> Vec<Vec<f64>> {
        rows(self.inner.shape.as_matrix())
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.inner.radius
    }

    #[getter]
    fn det(&self) -> f64 {
        self.inner.det
    }

    #[getter]
    fn subset(&self) -> Vec<usize> {
        self.inner.subset.clone()
    }

    #[getter]
    fn exact(&self) -> bool {
        self.inner.exact
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    fn __repr__(&self) -> String {
        format!(
            "McdFit(h={}, det={:.6e}, radius={:.6}, exact={})",
            self.inner.h(),
            self.inner.det,
            self.inner.radius,
            self.inner.exact
        )
    }
}

/// Exhaustive MCD over all subsets of size `ceil(n * gamma)`.
#[pyfunction]
#[pyo3(signature = (data, gamma=0.75))]
fn mcd_exact(data: Vec<Vec<f64>>, gamma: f64) -> PyResult<PyMcdFit> {
    let inner = estimator::mcd_exact(&samples(data)?, gamma).map_err(err)?;
    Ok(PyMcdFit { inner })
}

/// Concentration-step MCD from random starts.
#[pyfunction]
#[pyo3(signature = (data, gamma=0.75, restarts=50, seed=0))]
fn mcd_cstep(data: Vec<Vec<f64>>, gamma: f64, restarts: usize, seed: u64) -> PyResult<PyMcdFit> {
    let inner = estimator::mcd_cstep(&samples(data)?, gamma, restarts, seed).map_err(err)?;
    Ok(PyMcdFit { inner })
}

fn constants(model: &str, k: usize, gamma: f64, nu: Option<f64>) -> PyResult<EllipticalConstants> {
    let spec = ModelSpec::parse(model, nu).map_err(err)?;
    let radial = spec.radial(k).map_err(err)?;
    EllipticalConstants::new(&radial, gamma).map_err(err)
}

/// Closed-form constants of a spherical model as a dict.
#[pyfunction]
#[pyo3(signature = (model="gaussian", k=2, gamma=0.75, nu=None))]
fn theory<'py>(py: Python<'py>, model: &str, k: usize, gamma: f64, nu: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
    serialize(py, &constants(model, k, gamma, nu)?)
}

/// Influence functions `(mu, sigma, rho)` at the point `x`.
#[pyfunction]
#[pyo3(signature = (x, model="gaussian", gamma=0.75, nu=None))]
fn influence(x: Vec<f64>, model: &str, gamma: f64, nu: Option<f64>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>, f64)> {
    let c = constants(model, x.len(), gamma, nu)?;
    let v = c.influence(&x).map_err(err)?;
    Ok((v.mu.iter().copied().collect(), rows(v.sigma.as_matrix()), v.rho))
}

/// Plug-in sandwich covariance of the fitted parameters.
///
/// `density` is `"kde"` or a model name evaluated at the fitted location
/// and scatter. Returns a dict with `labels`, `derivative` and `covariance`.
#[pyfunction]
#[pyo3(signature = (data, gamma=0.75, density="kde", bandwidth=None, nu=None, restarts=50, seed=0))]
#[allow(clippy::too_many_arguments)]
fn sandwich<'py>(
    py: Python<'py>,
    data: Vec<Vec<f64>>,
    gamma: f64,
    density: &str,
    bandwidth: Option<f64>,
    nu: Option<f64>,
    restarts: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let s = samples(data)?;
    let fit = estimator::mcd_cstep(&s, gamma, restarts, seed).map_err(err)?;
    let rule = SphereRule::new(s.dim());
    let map = if density == "kde" {
        let bw = bandwidth.map_or(Bandwidth::Auto, Bandwidth::Fixed);
        plug_in_lambda_prime(&s, &fit, PlugInDensity::Kde(bw), &rule).map_err(err)?
    } else {
        let radial = ModelSpec::parse(density, nu).and_then(|m| m.radial(s.dim())).map_err(err)?;
        let r = r_gamma(&radial, gamma).map_err(err)?;
        let alpha = alpha_gamma(&radial, gamma, r).map_err(err)?;
        let scatter = fit.scatter.scale(1.0 / (alpha * alpha)).map_err(err)?;
        let model = EllipticalDensity::new(radial, fit.location.clone(), scatter).map_err(err)?;
        plug_in_lambda_prime(&s, &fit, PlugInDensity::Oracle(&model), &rule).map_err(err)?
    };
    let cov = sandwich_covariance(&s, &fit, &map).map_err(err)?;
    let out = serde_json::json!({
        "labels": tangent_labels(s.dim()),
        "derivative": rows(&map.matrix),
        "condition_number": map.condition_number(),
        "covariance": rows(&cov),
    });
    to_py(py, &out)
}

/// Runs a simulation check (`"clt"`, `"expansion"` or `"plugin"`) and
/// returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (check, n=2000, reps=1000, k=2, gamma=0.75, seed=0, model="gaussian", nu=None, restarts=10, ladder=None, oracle=false))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    check: &str,
    n: usize,
    reps: usize,
    k: usize,
    gamma: f64,
    seed: u64,
    model: &str,
    nu: Option<f64>,
    restarts: usize,
    ladder: Option<Vec<usize>>,
    oracle: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let config = SimConfig {
        model: ModelSpec::parse(model, nu).map_err(err)?,
        k,
        n,
        reps,
        gamma,
        seed,
        estimator: EstimatorChoice::Cstep { restarts },
    };
    let report = py
        .detach(|| match check {
            "clt" => montecarlo::clt_check(&config),
            "expansion" => montecarlo::expansion_remainder(&config, &ladder.unwrap_or_else(|| vec![200, 800, 3200])),
            "plugin" => {
                let mode = if oracle { PluginMode::Oracle } else { PluginMode::Kde(Bandwidth::Auto) };
                montecarlo::plugin_check(&config, mode)
            }
            other => Err(McdError::InvalidInput(format!("unknown check `{other}`"))),
        })
        .map_err(err)?;
    serialize(py, &report)
}

#[pymodule]
fn mcd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMcdFit>()?;
    m.add("McdError", m.py().get_type::<McdException>())?;
    m.add_function(wrap_pyfunction!(mcd_exact, m)?)?;
    m.add_function(wrap_pyfunction!(mcd_cstep, m)?)?;
    m.add_function(wrap_pyfunction!(theory, m)?)?;
    m.add_function(wrap_pyfunction!(influence, m)?)?;
    m.add_function(wrap_pyfunction!(sandwich, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
