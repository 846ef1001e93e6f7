//! Python bindings for the space-time spline upwind solver.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spline_upwind::metrics;
use spline_upwind::problems::{benchmark_by_name, Discretization, ProblemKind, SolutionField};
use spline_upwind::solver::{solve_problem, Method, SolveOptions};
use spline_upwind::stabilization::tables_for_space;
use spline_upwind::{Error, KnotVector, SplineSpace};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Expression(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Open B-spline knot vector on an interval.
#[pyclass(name = "KnotVector")]
struct PyKnotVector {
    inner: KnotVector,
}

#[pymethods]
impl PyKnotVector {
    /// Uniform open knot vector of the given degree on [a, b].
    #[staticmethod]
    #[pyo3(signature = (degree, elements, a=0.0, b=1.0))]
    fn open_uniform(degree: usize, elements: usize, a: f64, b: f64) -> PyResult<Self> {
        Ok(Self {
            inner: KnotVector::open_uniform(degree, elements, a, b).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn knots(&self) -> Vec<f64> {
        self.inner.knots().to_vec()
    }

    #[getter]
    fn degree(&self) -> usize {
        self.inner.degree()
    }

    #[getter]
    fn num_basis(&self) -> usize {
        self.inner.num_basis()
    }

    #[getter]
    fn mesh_size(&self) -> f64 {
        self.inner.mesh_size()
    }

    fn greville(&self) -> Vec<f64> {
        self.inner.greville()
    }

    /// Nonzero basis values and derivatives at `t`: returns
    /// `(first_active_index, values)` with `values[k][local]` the k-th
    /// derivative.
    #[pyo3(signature = (t, max_deriv=0))]
    fn eval_basis(&self, t: f64, max_deriv: usize) -> PyResult<(usize, Vec<Vec<f64>>)> {
        let b = self.inner.eval_basis(t, max_deriv).map_err(to_py_err)?;
        Ok((b.first, b.values))
    }
}

/// Upwind parameter tables for a uniform time mesh: returns a dict with
/// per-row `tau`, `sigma`, Greville abscissae and condition estimates.
#[pyfunction]
#[pyo3(signature = (degree, elements, t_final=1.0, drop_last=false))]
fn stabilization_table(
    py: Python<'_>,
    degree: usize,
    elements: usize,
    t_final: f64,
    drop_last: bool,
) -> PyResult<Py<PyDict>> {
    let kv = KnotVector::open_uniform(degree, elements, 0.0, t_final).map_err(to_py_err)?;
    let space = SplineSpace::new(kv, true, drop_last).map_err(to_py_err)?;
    let table = tables_for_space(&space).map_err(to_py_err)?;
    let dict = PyDict::new(py);
    dict.set_item("greville", space.greville())?;
    dict.set_item("tau", table.tau.clone())?;
    dict.set_item("sigma", table.sigma.clone())?;
    dict.set_item("cond", table.cond.clone())?;
    dict.set_item("h", table.ht)?;
    Ok(dict.into())
}

/// Solves one benchmark problem and returns a summary dict with the
/// coefficients, iteration report, theta statistics and (when an exact
/// solution exists) the relative L2 error and overshoot indicator.
#[pyfunction]
#[pyo3(signature = (problem, method, degree, elements, fp_tolerance=1e-3, fp_max_iter=20, fp_damping=1.0))]
#[allow(clippy::too_many_arguments)]
fn solve_benchmark(
    py: Python<'_>,
    problem: &str,
    method: &str,
    degree: usize,
    elements: usize,
    fp_tolerance: f64,
    fp_max_iter: usize,
    fp_damping: f64,
) -> PyResult<Py<PyDict>> {
    let problem = benchmark_by_name(problem).map_err(to_py_err)?;
    let method = Method::parse(method).map_err(to_py_err)?;
    let disc = Discretization::uniform(&problem, degree, elements).map_err(to_py_err)?;
    let opts = SolveOptions {
        fp_tolerance,
        fp_max_iter,
        damping: fp_damping,
    };
    let outcome = solve_problem(&problem, &disc, &method, &opts).map_err(to_py_err)?;

    let dict = PyDict::new(py);
    dict.set_item("n_dof", disc.num_dof())?;
    dict.set_item("h", disc.ht())?;
    dict.set_item("iterations", outcome.report.iterations)?;
    dict.set_item("converged", outcome.report.converged)?;
    dict.set_item("coefficients", outcome.coefficients.clone())?;
    if let Some(theta) = &outcome.theta {
        dict.set_item("theta_mean", theta.mean())?;
    }
    if let (Some(exact), ProblemKind::Advection | ProblemKind::AdvectionDiffusion { .. }) =
        (&problem.exact, &problem.kind)
    {
        let err = metrics::relative_l2_error_time(
            &disc,
            &outcome.coefficients,
            exact.as_ref(),
            (0.0, problem.final_time),
        )
        .map_err(to_py_err)?;
        dict.set_item("relative_l2_error", err)?;
        let overshoot = metrics::overshoot_indicator(
            &disc,
            &outcome.coefficients,
            exact.as_ref(),
            (0.0, problem.final_time),
        )
        .map_err(to_py_err)?;
        dict.set_item("overshoot", overshoot)?;
    }
    // Sampled solution for quick plotting (time-only problems).
    if problem.kind != ProblemKind::Heat {
        let field = SolutionField::new(&disc, &outcome.coefficients);
        let n = 8 * elements;
        let mut ts = Vec::with_capacity(n + 1);
        let mut us = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let t = problem.final_time * i as f64 / n as f64;
            ts.push(t);
            us.push(field.value(&[], t).map_err(to_py_err)?);
        }
        dict.set_item("t", ts)?;
        dict.set_item("u", us)?;
    }
    Ok(dict.into())
}

/// Evaluates a discrete solution (from `solve_benchmark` coefficients) at a
/// parametric point.
#[pyfunction]
fn evaluate_solution(
    problem: &str,
    degree: usize,
    elements: usize,
    coefficients: Vec<f64>,
    eta: Vec<f64>,
    t: f64,
) -> PyResult<f64> {
    let problem = benchmark_by_name(problem).map_err(to_py_err)?;
    let disc = Discretization::uniform(&problem, degree, elements).map_err(to_py_err)?;
    if coefficients.len() != disc.num_dof() {
        return Err(PyValueError::new_err(format!(
            "expected {} coefficients, got {}",
            disc.num_dof(),
            coefficients.len()
        )));
    }
    let field = SolutionField::new(&disc, &coefficients);
    field.value(&eta, t).map_err(to_py_err)
}

/// Runs a full experiment from a JSON configuration string (same schema as
/// the CLI) and returns the output directory.
#[pyfunction]
fn run_experiment(config_json: &str) -> PyResult<String> {
    let config =
        spline_upwind::cli::ExperimentConfig::from_json_str(config_json).map_err(to_py_err)?;
    let dir = spline_upwind::cli::run(&config).map_err(to_py_err)?;
    Ok(dir.display().to_string())
}

#[pymodule]
fn spline_upwind_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKnotVector>()?;
    m.add_function(wrap_pyfunction!(stabilization_table, m)?)?;
    m.add_function(wrap_pyfunction!(solve_benchmark, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_solution, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
