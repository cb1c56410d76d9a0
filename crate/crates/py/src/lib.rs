//! Python bindings for `hgt_core`.
//!
//! Kernels, ESS computation and verification, the principal eigenvalue,
//! the mass solve and full simulations. Structured results come back as
//! dicts; configuration errors raise `ValueError`, numerical failures
//! `RuntimeError`.

use std::sync::OnceLock;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hgt_core::ess::{self, DiscreteEss, EssOutcome, KernelConstants as CoreConstants, VerifyReport};
use hgt_core::kernels::{self, ModelParams};
use hgt_core::pde::{self, Grid1D, SimConfig};
use hgt_core::spectral;
use hgt_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Domain(_) | Error::Precondition(_) | Error::Kernel(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Transfer kernel `H` with its derivatives.
#[pyclass(frozen, module = "hgt_py")]
pub struct Kernel {
    inner: kernels::TransferKernel,
    constants: OnceLock<CoreConstants>,
}

impl Kernel {
    fn constants(&self) -> PyResult<&CoreConstants> {
        if let Some(c) = self.constants.get() {
            return Ok(c);
        }
        let c = ess::compute_constants(&self.inner).map_err(to_py)?;
        Ok(self.constants.get_or_init(|| c))
    }
}

#[pymethods]
impl Kernel {
    #[new]
    #[pyo3(signature = (name = "tanh-kernel"))]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: kernels::make_kernel(name).map_err(to_py)?,
            constants: OnceLock::new(),
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn z_h(&self) -> f64 {
        self.inner.z_h()
    }

    fn h(&self, z: f64) -> f64 {
        self.inner.h(z)
    }

    fn dh(&self, z: f64) -> f64 {
        self.inner.dh(z)
    }

    fn d2h(&self, z: f64) -> f64 {
        self.inner.d2h(z)
    }

    fn d3h(&self, z: f64) -> f64 {
        self.inner.d3h(z)
    }

    /// Shape-hypothesis report on the default sample grid.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = kernels::validate_h1(&self.inner, &kernels::default_sample_grid());
        let d = PyDict::new(py);
        d.set_item("kernel", r.kernel)?;
        d.set_item("z_h", r.z_h)?;
        d.set_item("clause_1", r.clause_1)?;
        d.set_item("clause_2", r.clause_2)?;
        d.set_item("clause_3", r.clause_3)?;
        d.set_item("all_pass", r.all_pass)?;
        Ok(d)
    }

    /// `d1`, `C1`, `C2`, `mu1`, `mu2` and `z3`; computed once per kernel.
    fn constants_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = self.constants()?;
        let d = PyDict::new(py);
        d.set_item("d1", c.d1)?;
        d.set_item("c1", c.c1)?;
        d.set_item("c2", c.c2)?;
        d.set_item("mu1", c.mu1)?;
        d.set_item("mu2", c.mu2)?;
        d.set_item("z3", c.z3)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Kernel('{}')", self.inner.name())
    }
}

/// Discrete equilibrium: points (descending), masses and total mass.
#[pyclass(frozen, skip_from_py_object, module = "hgt_py")]
#[derive(Clone)]
pub struct Ess {
    inner: DiscreteEss,
}

#[pymethods]
impl Ess {
    #[new]
    fn new(points: Vec<f64>, weights: Vec<f64>) -> PyResult<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(PyValueError::new_err("points and weights must be non-empty and of equal length"));
        }
        Ok(Self {
            inner: DiscreteEss::from_pairs(points.into_iter().zip(weights).collect()),
        })
    }

    #[getter]
    fn points(&self) -> Vec<f64> {
        self.inner.points.clone()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.clone()
    }

    #[getter]
    fn fractions(&self) -> Vec<f64> {
        self.inner.fractions()
    }

    #[getter]
    fn rho0(&self) -> f64 {
        self.inner.rho0
    }

    /// `F(z)` at each of `z`.
    fn fitness(&self, kernel: &Kernel, tau: f64, g: f64, z: Vec<f64>) -> PyResult<Vec<f64>> {
        let params = ModelParams::new(tau, g, 1.0).map_err(to_py)?;
        let profile = ess::fitness(&self.inner, &params, &kernel.inner, &z).map_err(to_py)?;
        Ok(profile.values)
    }

    fn __repr__(&self) -> String {
        format!(
            "Ess(points={:?}, weights={:?}, rho0={})",
            self.inner.points, self.inner.weights, self.inner.rho0
        )
    }
}

fn params(tau: f64, g: f64) -> PyResult<ModelParams> {
    ModelParams::new(tau, g, 1.0).map_err(to_py)
}

fn outcome<'py>(py: Python<'py>, out: EssOutcome) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("valid", out.is_valid())?;
    d.set_item("reason", out.reason())?;
    d.set_item("ess", Ess { inner: out.candidate().clone() })?;
    Ok(d)
}

fn verify_dict<'py>(py: Python<'py>, r: &VerifyReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("valid", r.valid)?;
    d.set_item("violated_condition", r.violated_condition.clone())?;
    d.set_item("max_fitness_excursion", r.max_fitness_excursion)?;
    d.set_item("argmax", r.argmax)?;
    d.set_item("support_values", r.support_values.clone())?;
    d.set_item("support_slopes", r.support_slopes.clone())?;
    d.set_item("extra_near_zeros", r.extra_near_zeros.clone())?;
    Ok(d)
}

/// Single-point equilibrium at `z0 = mu`; `valid` is False outside its regime.
#[pyfunction]
fn monomorphic_ess<'py>(py: Python<'py>, kernel: &Kernel, tau: f64, g: f64) -> PyResult<Bound<'py, PyDict>> {
    let c = kernel.constants()?;
    outcome(py, ess::monomorphic_ess(&params(tau, g)?, c))
}

/// Two-point equilibrium; `valid` is False outside its regime.
#[pyfunction]
fn dimorphic_ess<'py>(py: Python<'py>, kernel: &Kernel, tau: f64, g: f64) -> PyResult<Bound<'py, PyDict>> {
    let c = kernel.constants()?;
    outcome(py, ess::dimorphic_ess(&params(tau, g)?, &kernel.inner, c))
}

/// Three-point root of the stationarity system, by continuation from `mu2`.
#[pyfunction]
fn trimorphic_ess(kernel: &Kernel, tau: f64, g: f64) -> PyResult<Ess> {
    let c = kernel.constants()?;
    let inner = ess::trimorphic_ess(&params(tau, g)?, &kernel.inner, c, None).map_err(to_py)?;
    Ok(Ess { inner })
}

/// Check that `F` vanishes on the support and is non-positive elsewhere.
#[pyfunction]
fn verify_ess<'py>(py: Python<'py>, ess: &Ess, kernel: &Kernel, tau: f64, g: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = ess::verify_ess(&ess.inner, &params(tau, g)?, &kernel.inner);
    verify_dict(py, &r)
}

/// Regime for `(tau, g)` with its candidate and verification.
#[pyfunction]
fn classify<'py>(py: Python<'py>, kernel: &Kernel, tau: f64, g: f64) -> PyResult<Bound<'py, PyDict>> {
    let c = kernel.constants()?;
    let class = ess::classify(&params(tau, g)?, &kernel.inner, c, None);
    let d = PyDict::new(py);
    d.set_item("regime", class.regime.as_str())?;
    d.set_item("reason", class.reason.clone())?;
    d.set_item("ess", class.candidate.map(|inner| Ess { inner }))?;
    match &class.verification {
        Some(v) => d.set_item("verification", verify_dict(py, v)?)?,
        None => d.set_item("verification", py.None())?,
    }
    Ok(d)
}

/// Principal eigenvalue of `-eps^2 d_zz - (1 - g z^2)` on `[z_min, z_max]`.
#[pyfunction]
#[pyo3(signature = (epsilon, g, z_min, z_max, n_points = 2001))]
fn principal_eigen<'py>(
    py: Python<'py>,
    epsilon: f64,
    g: f64,
    z_min: f64,
    z_max: f64,
    n_points: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let r = spectral::principal_eigen(epsilon, g, (z_min, z_max), n_points).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("lambda", r.lambda)?;
    d.set_item("residual", r.residual)?;
    d.set_item("eigenvector", r.eigenvector)?;
    Ok(d)
}

/// Root of `y exp(y dt/eps) = dz sum exp(a_j/eps)`.
#[pyfunction]
#[pyo3(signature = (a, dt, epsilon, dz, prev_rho = None))]
fn solve_rho(a: Vec<f64>, dt: f64, epsilon: f64, dz: f64, prev_rho: Option<f64>) -> PyResult<f64> {
    pde::solve_rho(&a, dt, epsilon, dz, prev_rho).map_err(to_py)
}

/// Run the time-dependent solver until steady or `t_max`.
#[pyfunction]
#[pyo3(signature = (
    tau, g, epsilon,
    z_min = -2.0, z_max = 6.0, dz = 0.01, dt = 1e-4, t_max = 1000.0,
    z_init = 0.0, curvature = 1.0, steady_tol = 1e-7, kernel = None,
))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    tau: f64,
    g: f64,
    epsilon: f64,
    z_min: f64,
    z_max: f64,
    dz: f64,
    dt: f64,
    t_max: f64,
    z_init: f64,
    curvature: f64,
    steady_tol: f64,
    kernel: Option<&Kernel>,
) -> PyResult<Bound<'py, PyDict>> {
    let params = ModelParams::new(tau, g, epsilon).map_err(to_py)?;
    let kernel = match kernel {
        Some(k) => k.inner.clone(),
        None => kernels::make_kernel("tanh-kernel").map_err(to_py)?,
    };
    let grid = Grid1D::new(z_min, z_max, dz).map_err(to_py)?;
    let mut cfg = SimConfig::new(params, kernel, grid, dt, t_max).map_err(to_py)?;
    cfg.z_init = z_init;
    cfg.curvature = curvature;
    cfg.steady_tol = steady_tol;
    let report = py.detach(|| pde::run(&cfg)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("steady", report.steady)?;
    d.set_item("steps_taken", report.steps_taken)?;
    d.set_item("rho", report.final_rho)?;
    d.set_item("support", report.support_points.clone())?;
    d.set_item("z", grid.nodes())?;
    d.set_item("u", report.final_u.clone())?;
    d.set_item("n_rescaled", report.n_rescaled.clone())?;
    d.set_item("rho_history", report.rho_history.clone())?;
    Ok(d)
}

#[pymodule]
fn hgt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Kernel>()?;
    m.add_class::<Ess>()?;
    m.add_function(wrap_pyfunction!(monomorphic_ess, m)?)?;
    m.add_function(wrap_pyfunction!(dimorphic_ess, m)?)?;
    m.add_function(wrap_pyfunction!(trimorphic_ess, m)?)?;
    m.add_function(wrap_pyfunction!(verify_ess, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(principal_eigen, m)?)?;
    m.add_function(wrap_pyfunction!(solve_rho, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
