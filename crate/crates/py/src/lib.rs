//! Python bindings: potentials, the distorted metric, transport distances,
//! rate fits and whole experiments driven by JSON configs.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mvcn_core::harness::{self, presets, ExperimentConfig};
use mvcn_core::metric::{self as core_metric, DistortedMetric};
use mvcn_core::model::{InteractionSpec, PotentialSpec, DEFAULT_BOX};
use mvcn_core::ot::{self, EmpiricalMeasure};
use mvcn_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Config { .. } | Error::Json(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

#[pyclass(name = "Potential", frozen)]
struct PyPotential(PotentialSpec);

#[pymethods]
impl PyPotential {
    #[staticmethod]
    #[pyo3(signature = (center, curvature=1.0, box_half_width=DEFAULT_BOX))]
    fn quadratic(center: Vec<f64>, curvature: f64, box_half_width: f64) -> PyResult<Self> {
        PotentialSpec::quadratic(center, curvature, box_half_width).map(Self).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (box_half_width=DEFAULT_BOX))]
    fn double_well(box_half_width: f64) -> PyResult<Self> {
        PotentialSpec::double_well_1d(box_half_width).map(Self).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (dim, box_half_width=DEFAULT_BOX))]
    fn radial_double_well(dim: usize, box_half_width: f64) -> PyResult<Self> {
        PotentialSpec::radial_double_well(dim, box_half_width).map(Self).map_err(to_py)
    }

    /// `coefficients[k]` holds the power coefficients of coordinate k.
    #[staticmethod]
    #[pyo3(signature = (coefficients, box_half_width=DEFAULT_BOX))]
    fn polynomial(coefficients: Vec<Vec<f64>>, box_half_width: f64) -> PyResult<Self> {
        PotentialSpec::custom_polynomial(coefficients, box_half_width)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn lipschitz(&self) -> f64 {
        self.0.lipschitz()
    }

    fn kappa(&self, r: f64) -> f64 {
        self.0.kappa(r)
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        if x.len() != self.0.dim() {
            return Err(PyValueError::new_err("point has the wrong dimension"));
        }
        Ok(self.0.value(&x))
    }

    fn grad(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.0.dim() {
            return Err(PyValueError::new_err("point has the wrong dimension"));
        }
        let mut g = vec![0.0; x.len()];
        self.0.grad(&x, &mut g);
        Ok(g)
    }

    fn __repr__(&self) -> String {
        format!("Potential({:?}, dim={})", self.0.kind(), self.0.dim())
    }
}

#[pyclass(name = "Metric", frozen)]
struct PyMetric(DistortedMetric);

#[pymethods]
impl PyMetric {
    #[new]
    #[pyo3(signature = (potential, sigma0, quad_step=1e-2))]
    fn new(potential: &PyPotential, sigma0: f64, quad_step: f64) -> PyResult<Self> {
        core_metric::build_metric(&potential.0, sigma0, quad_step)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn r0(&self) -> f64 {
        self.0.r0()
    }

    #[getter]
    fn r1(&self) -> f64 {
        self.0.r1()
    }

    #[getter]
    fn ell(&self) -> f64 {
        self.0.ell()
    }

    #[getter]
    fn phi_r0(&self) -> f64 {
        self.0.phi_r0()
    }

    #[getter]
    fn r_max(&self) -> f64 {
        self.0.r_max()
    }

    fn f(&self, r: f64) -> PyResult<f64> {
        self.0.eval_f(r).map_err(to_py)
    }

    fn fprime(&self, r: f64) -> PyResult<f64> {
        self.0.eval_fprime(r).map_err(to_py)
    }

    /// Contraction rate for a quadratic interaction of strength `alpha`.
    #[pyo3(signature = (alpha=0.0))]
    fn rate_c(&self, alpha: f64) -> PyResult<f64> {
        let w = if alpha == 0.0 {
            InteractionSpec::None
        } else {
            InteractionSpec::quadratic(alpha).map_err(to_py)?
        };
        core_metric::rate_c(&self.0, &w, self.0.sigma0()).map_err(to_py)
    }

    /// Rows of `(r, f, f', phi, Phi, g)` at every table node.
    fn table(&self) -> Vec<[f64; 6]> {
        self.0.table_rows().collect()
    }
}

fn measure(points: Vec<f64>, dim: usize) -> PyResult<EmpiricalMeasure> {
    EmpiricalMeasure::new(points, dim).map_err(to_py)
}

/// Order-p Wasserstein distance between two 1-D samples of equal size.
#[pyfunction]
#[pyo3(signature = (a, b, p=2))]
fn wasserstein_1d(a: Vec<f64>, b: Vec<f64>, p: u32) -> PyResult<f64> {
    ot::w_p_1d(&measure(a, 1)?, &measure(b, 1)?, p).map_err(to_py)
}

/// Exact W2 between two point clouds given as flat row-major arrays.
#[pyfunction]
#[pyo3(signature = (a, b, dim=1))]
fn w2(a: Vec<f64>, b: Vec<f64>, dim: usize) -> PyResult<f64> {
    ot::w2_exact(&measure(a, dim)?, &measure(b, dim)?).map_err(to_py)
}

/// Mean of f(|a_i - b_i|) over index-aligned pairs.
#[pyfunction]
#[pyo3(signature = (a, b, metric, dim=1))]
fn df_paired(a: Vec<f64>, b: Vec<f64>, metric: &PyMetric, dim: usize) -> PyResult<f64> {
    ot::df_paired(&measure(a, dim)?, &measure(b, dim)?, &metric.0).map_err(to_py)
}

/// Minimum-cost assignment for a square cost matrix, row to column.
#[pyfunction]
fn assignment(cost: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    let n = cost.len();
    if cost.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("cost matrix must be square"));
    }
    let flat: Vec<f64> = cost.into_iter().flatten().collect();
    if flat.iter().any(|c| !c.is_finite()) {
        return Err(PyValueError::new_err("costs must be finite"));
    }
    Ok(mvcn_core::assignment::solve(&flat, n))
}

/// Exponential rate fit; returns the fit as a JSON string.
#[pyfunction]
#[pyo3(signature = (times, values, floor=None))]
fn fit_rate(times: Vec<f64>, values: Vec<f64>, floor: Option<f64>) -> PyResult<String> {
    let f = harness::fit_rate(&times, &values, floor).map_err(to_py)?;
    serde_json::to_string(&f).map_err(json_err)
}

/// Smallest sigma0 in `[lo, hi]` with a positive contraction rate.
#[pyfunction]
#[pyo3(signature = (potential, alpha, lo, hi, quad_step=1e-2))]
fn sigma0_threshold(potential: &PyPotential, alpha: f64, lo: f64, hi: f64, quad_step: f64) -> PyResult<Option<f64>> {
    let w = InteractionSpec::quadratic(alpha).map_err(to_py)?;
    let rep = core_metric::sigma0_threshold(&potential.0, &w, lo, hi, quad_step).map_err(to_py)?;
    Ok(rep.threshold)
}

/// Runs an experiment from a JSON config; returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir=None))]
fn run_config(py: Python<'_>, config_json: &str, out_dir: Option<std::path::PathBuf>) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(to_py)?;
    let outcome = py.detach(|| harness::run_experiment(&cfg)).map_err(to_py)?;
    if let Some(dir) = out_dir {
        harness::write_outputs(&outcome, &dir).map_err(to_py)?;
    }
    serde_json::to_string(&outcome).map_err(json_err)
}

/// JSON config of a named simulation preset.
#[pyfunction]
fn preset_config(name: &str) -> PyResult<String> {
    presets::preset_config(name).map(|c| c.to_json()).map_err(to_py)
}

#[pymodule]
fn mvcn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPotential>()?;
    m.add_class::<PyMetric>()?;
    m.add_function(wrap_pyfunction!(wasserstein_1d, m)?)?;
    m.add_function(wrap_pyfunction!(w2, m)?)?;
    m.add_function(wrap_pyfunction!(df_paired, m)?)?;
    m.add_function(wrap_pyfunction!(assignment, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    m.add_function(wrap_pyfunction!(sigma0_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(preset_config, m)?)?;
    m.add("PRESETS", presets::PRESETS.to_vec())?;
    Ok(())
}
