//! Python bindings for `carleman-core`.
//!
//! Axes are 1-based on this side, matching the `x1, x2, ...` variable names.
//! Reports come back as plain dictionaries decoded from the JSON reports.

#![allow(clippy::useless_conversion)]

use std::collections::HashMap;

use carleman_core::coeff::CoefficientField as CoreField;
use carleman_core::condition::WeightFunction;
use carleman_core::curvature::{self, Probe};
use carleman_core::domain::Region as CoreRegion;
use carleman_core::expr::{ConstantTable, Expression as CoreExpression};
use carleman_core::rays::{self, FanSummary, RayState};
use carleman_core::report::to_json;
use carleman_core::weight::{self, Admissible, SearchOptions, SignCase, DEFAULT_LAMBDA_MAX};
use carleman_core::{cli, Config};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = to_json(value);
    let json = py.import_bound("json")?;
    Ok(json.call_method1("loads", (text,))?.unbind())
}

fn constants(table: Option<HashMap<String, f64>>) -> ConstantTable {
    let mut out = ConstantTable::new();
    for (k, v) in table.unwrap_or_default() {
        out.insert(&k, v);
    }
    out
}

fn zero_based(axis: usize, dim: usize) -> PyResult<usize> {
    if axis == 0 || axis > dim {
        return Err(PyValueError::new_err(format!("axis must lie in 1..={dim}, got {axis}")));
    }
    Ok(axis - 1)
}

/// A parsed expression in `x1, ..., xn`.
#[pyclass(module = "carleman", frozen)]
#[derive(Clone)]
struct Expression {
    inner: CoreExpression,
}

#[pymethods]
impl Expression {
    #[new]
    #[pyo3(signature = (text, dim, constants=None))]
    fn new(text: &str, dim: usize, constants: Option<HashMap<String, f64>>) -> PyResult<Self> {
        let inner = CoreExpression::parse(text, dim)
            .map_err(value_error)?
            .bind(&self::constants(constants));
        Ok(Expression { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __call__(&self, point: Vec<f64>) -> PyResult<f64> {
        self.inner.eval(&point).map_err(value_error)
    }

    /// Symbolic partial derivative along a 1-based axis.
    fn differentiate(&self, axis: usize) -> PyResult<Expression> {
        let k = zero_based(axis, self.inner.dim())?;
        Ok(Expression {
            inner: self.inner.differentiate(k),
        })
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Expression({:?}, dim={})", self.inner.to_string(), self.inner.dim())
    }
}

#[pyclass(module = "carleman", frozen)]
#[derive(Clone)]
struct CoefficientField {
    inner: CoreField,
}

#[pymethods]
impl CoefficientField {
    /// `entries` lists the diagonal when `diagonal` is true, otherwise the
    /// full matrix in row-major order.
    #[new]
    #[pyo3(signature = (entries, dim, diagonal=true, constants=None))]
    fn new(
        entries: Vec<String>,
        dim: usize,
        diagonal: bool,
        constants: Option<HashMap<String, f64>>,
    ) -> PyResult<Self> {
        let texts: Vec<&str> = entries.iter().map(String::as_str).collect();
        let inner = CoreField::parse(&texts, dim, diagonal, &self::constants(constants)).map_err(value_error)?;
        Ok(CoefficientField { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn diagonal(&self) -> bool {
        self.inner.is_diagonal()
    }

    fn __call__(&self, point: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.eval(&point).map_err(value_error)?.rows())
    }
}

#[pyclass(module = "carleman", frozen)]
#[derive(Clone)]
struct Region {
    inner: CoreRegion,
}

#[pymethods]
impl Region {
    /// A box intersected with `{g <= 0}` for every constraint `g`.
    #[new]
    #[pyo3(signature = (bounds, constraints=Vec::new(), constants=None))]
    fn new(
        bounds: Vec<(f64, f64)>,
        constraints: Vec<String>,
        constants: Option<HashMap<String, f64>>,
    ) -> PyResult<Self> {
        let dim = bounds.len();
        let table = self::constants(constants);
        let constraints = constraints
            .iter()
            .map(|t| CoreExpression::parse(t, dim).map(|e| e.bind(&table)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_error)?;
        let inner = CoreRegion::new(bounds, constraints).map_err(value_error)?;
        Ok(Region { inner })
    }

    #[staticmethod]
    fn ball(center: Vec<f64>, radius: f64) -> PyResult<Region> {
        if center.is_empty() || radius.is_nan() || radius <= 0.0 {
            return Err(PyValueError::new_err("ball needs a center and a positive radius"));
        }
        Ok(Region {
            inner: CoreRegion::ball(&center, radius),
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn contains(&self, point: Vec<f64>) -> PyResult<bool> {
        self.inner.contains(&point).map_err(value_error)
    }

    fn sample(&self, resolution: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.sample(resolution).map_err(value_error)?.points)
    }
}

/// Checks the weight condition for `weight` on the sampled region.
#[pyfunction]
#[pyo3(signature = (field, weight, region, resolution=33))]
fn check_condition(
    py: Python<'_>,
    field: &CoefficientField,
    weight: &Expression,
    region: &Region,
    resolution: usize,
) -> PyResult<PyObject> {
    let w = WeightFunction::new(weight.inner.clone());
    let report = py
        .allow_threads(|| carleman_core::check_condition(&field.inner, &w, &region.inner, resolution))
        .map_err(value_error)?;
    to_py(py, &report)
}

#[derive(Serialize)]
struct Construction {
    admissible: Vec<Admissible>,
    certificate: weight::WeightCertificate,
    reverification: carleman_core::ConditionReport,
}

/// Builds and certifies an exponential weight. `j` is 1-based; `case` is
/// "negative" or "positive". Both default to the best admissible choice.
#[pyfunction]
#[pyo3(signature = (field, region, resolution=33, j=None, case=None, lambda_max=DEFAULT_LAMBDA_MAX, target_margin=0.0))]
#[allow(clippy::too_many_arguments)]
fn construct(
    py: Python<'_>,
    field: &CoefficientField,
    region: &Region,
    resolution: usize,
    j: Option<usize>,
    case: Option<&str>,
    lambda_max: f64,
    target_margin: f64,
) -> PyResult<PyObject> {
    let field = &field.inner;
    let region = &region.inner;
    let grid = region.sample(resolution).map_err(value_error)?;
    let admissible = weight::detect_index(field, &grid).map_err(value_error)?;
    let case = case.map(|c| c.parse::<SignCase>().map_err(value_error)).transpose()?;
    let chosen = match (j, case) {
        (None, None) => admissible
            .first()
            .cloned()
            .ok_or_else(|| PyValueError::new_err("no admissible index; pass j and case to force one"))?,
        (j, case) => {
            let j = match j {
                Some(j) => zero_based(j, field.dim())?,
                None => admissible.first().map_or(0, |a| a.j),
            };
            let found = admissible
                .iter()
                .find(|a| a.j == j && case.is_none_or(|c| c == a.sign_case));
            found.cloned().unwrap_or(Admissible {
                j,
                sign_case: case.unwrap_or(SignCase::Negative),
                sign_margin: 0.0,
            })
        }
    };
    let c = weight::compute_c(&grid, chosen.j, chosen.sign_case);
    let options = SearchOptions {
        lambda_max,
        target_margin,
    };
    let result = py.allow_threads(|| {
        let certificate = weight::find_lambda(field, &grid, &chosen, c, options)?;
        let reverification = certificate.reverify(field, region, 2 * resolution - 1)?;
        Ok::<_, weight::WeightError>((certificate, reverification))
    });
    match result {
        Ok((certificate, reverification)) => to_py(
            py,
            &Construction {
                admissible,
                certificate,
                reverification,
            },
        ),
        Err(e @ weight::WeightError::Overflow { .. }) => Err(PyArithmeticError::new_err(e.to_string())),
        Err(e) => Err(value_error(e)),
    }
}

/// Gaussian curvature of `diag(a1, a2)` at a point, by the direct formula,
/// by the closed form, and for the inverse metric.
#[pyfunction]
fn curvature_at(py: Python<'_>, a1: &Expression, a2: &Expression, point: Vec<f64>) -> PyResult<PyObject> {
    let f = curvature::CurvatureField::new(&a1.inner, &a2.inner).map_err(value_error)?;
    let values = HashMap::from([
        ("gauss", f.gauss(&point).map_err(value_error)?),
        ("wang", f.wang(&point).map_err(value_error)?),
        ("inverse_metric", f.inverse(&point).map_err(value_error)?),
    ]);
    Ok(values.into_py(py))
}

/// Curvature sign over the region. Probes are `(axis, value)` pairs with a
/// 1-based axis.
#[pyfunction]
#[pyo3(signature = (field, region, resolution=33, probes=Vec::new()))]
fn classify_curvature(
    py: Python<'_>,
    field: &CoefficientField,
    region: &Region,
    resolution: usize,
    probes: Vec<(usize, f64)>,
) -> PyResult<PyObject> {
    let field = &field.inner;
    if field.dim() != 2 || !field.is_diagonal() {
        return Err(PyValueError::new_err(
            "curvature needs a diagonal two-dimensional field",
        ));
    }
    let probes = probes
        .into_iter()
        .map(|(axis, value)| {
            Ok(Probe {
                axis: zero_based(axis, 2)?,
                value,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let e = field.entries();
    let report = py
        .allow_threads(|| curvature::classify_sign(&e[0], &e[1], &region.inner, resolution, &probes))
        .map_err(value_error)?;
    to_py(py, &report)
}

#[pyfunction]
fn check_w32(py: Python<'_>, mu1: f64, mu2: f64) -> PyResult<PyObject> {
    to_py(py, &curvature::check_w32(mu1, mu2))
}

#[pyfunction]
#[pyo3(signature = (field, region, start, direction, horizon=20.0, step=0.05))]
fn trace_ray(
    py: Python<'_>,
    field: &CoefficientField,
    region: &Region,
    start: Vec<f64>,
    direction: Vec<f64>,
    horizon: f64,
    step: f64,
) -> PyResult<PyObject> {
    let state = RayState::new(start, direction);
    let outcome = py
        .allow_threads(|| rays::trace(&field.inner, &region.inner, &state, horizon, step))
        .map_err(value_error)?;
    to_py(py, &outcome)
}

#[derive(Serialize)]
struct Fan {
    summary: FanSummary,
    rays: Vec<rays::RayOutcome>,
}

#[pyfunction]
#[pyo3(signature = (field, region, center, count=32, horizon=20.0, step=0.05))]
fn ray_fan(
    py: Python<'_>,
    field: &CoefficientField,
    region: &Region,
    center: Vec<f64>,
    count: usize,
    horizon: f64,
    step: f64,
) -> PyResult<PyObject> {
    let rays = py
        .allow_threads(|| rays::fan(&field.inner, &region.inner, &center, count, horizon, step))
        .map_err(value_error)?;
    to_py(
        py,
        &Fan {
            summary: FanSummary::of(&rays),
            rays,
        },
    )
}

/// Runs `verify`, `construct`, `curvature` or `rays` on a TOML problem, as
/// the command-line tool would, and returns the full report.
#[pyfunction]
fn run(py: Python<'_>, command: &str, config_toml: &str) -> PyResult<PyObject> {
    let config = Config::from_toml(config_toml).map_err(value_error)?;
    let report = py
        .allow_threads(|| cli::run_command(command, &config))
        .map_err(value_error)?;
    to_py(py, &report)
}

#[pymodule]
fn carleman(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Expression>()?;
    m.add_class::<CoefficientField>()?;
    m.add_class::<Region>()?;
    m.add_function(wrap_pyfunction!(check_condition, m)?)?;
    m.add_function(wrap_pyfunction!(construct, m)?)?;
    m.add_function(wrap_pyfunction!(curvature_at, m)?)?;
    m.add_function(wrap_pyfunction!(classify_curvature, m)?)?;
    m.add_function(wrap_pyfunction!(check_w32, m)?)?;
    m.add_function(wrap_pyfunction!(trace_ray, m)?)?;
    m.add_function(wrap_pyfunction!(ray_fan, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
