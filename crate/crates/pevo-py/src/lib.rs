//! Python bindings for `pevo`.
//!
//! Fields cross the boundary as lists of Python `complex`; reports cross as
//! plain dictionaries (the same JSON the command-line pipeline writes).
//! Input errors raise `ValueError`; numerical failures (instability, failed
//! certification, Newton nonconvergence, …) raise `pevo_py.PevoError`.

use pevo::coefficients::{check_conditions, CoefficientSet, SampleSpec};
use pevo::lambda::{
    build_pack, estimate_neumann_norm, invert_exp_lambda, tune_constants, CutoffPair, InverseMode, TransformPack,
    TuneSettings,
};
use pevo::linear::{solve_linear, solve_transformed, AbsorbingLayer, FrozenState, LinearProblem, Trajectory};
use pevo::scenarios::{
    config_schema as schema, list_presets as presets, run_pipeline as run, stages_for, RunConfig, Scenario,
};
use pevo::semilinear::{newton_solve as newton, Seed, SemilinearProblem, TargetKind};
use pevo::{Field, Grid, C64};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use std::path::PathBuf;

create_exception!(pevo_py, PevoError, PyRuntimeError, "Numerical failure reported by pevo.");

/// Maps a core error onto a Python exception.
pub fn to_py_err(e: pevo::PevoError) -> PyErr {
    use pevo::PevoError as E;
    match e {
        E::Config(_) | E::ParameterDomain(_) | E::Input(_) | E::Structural(_) => PyValueError::new_err(e.to_string()),
        other => PevoError::new_err(other.to_string()),
    }
}

fn to_dict<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn field(grid: &Grid, values: Vec<C64>) -> PyResult<Field> {
    Field::new(grid, values).map_err(to_py_err)
}

fn layer(spec: Option<(f64, f64, f64)>) -> Option<AbsorbingLayer> {
    spec.map(|(strength, start, end)| AbsorbingLayer { strength, start, end })
}

/// Periodic grid `x_j = −L + 2Lj/N` with its FFT-ordered frequencies.
#[pyclass(name = "Grid", module = "pevo_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyGrid {
    /// Core grid.
    pub inner: Grid,
}

#[pymethods]
impl PyGrid {
    #[new]
    fn new(n: usize, l: f64) -> PyResult<Self> {
        Ok(PyGrid { inner: Grid::new(n, l).map_err(to_py_err)? })
    }

    /// Number of points.
    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    /// Half-length `L`.
    #[getter]
    fn l(&self) -> f64 {
        self.inner.l()
    }

    /// Largest resolved `|ξ|`.
    #[getter]
    fn xi_max(&self) -> f64 {
        self.inner.xi_max()
    }

    /// Grid points.
    fn x(&self) -> Vec<f64> {
        self.inner.x().to_vec()
    }

    /// Frequencies in FFT order.
    fn xi(&self) -> Vec<f64> {
        self.inner.xi().to_vec()
    }

    /// Unnormalized forward DFT.
    fn forward(&self, values: Vec<C64>) -> PyResult<Vec<C64>> {
        Ok(self.inner.forward(field(&self.inner, values)?.values()))
    }

    /// Inverse DFT (carries the `1/N`).
    fn inverse(&self, modes: Vec<C64>) -> PyResult<Vec<C64>> {
        let f = field(&self.inner, modes)?;
        Ok(self.inner.inverse(f.values()))
    }

    /// Spectral derivative `D^j = (−i∂_x)^j`.
    fn derivative(&self, values: Vec<C64>, order: u32) -> PyResult<Vec<C64>> {
        Ok(self.inner.derivative_of(field(&self.inner, values)?.values(), order))
    }

    /// Discrete `L²` norm.
    fn l2_norm(&self, values: Vec<C64>) -> PyResult<f64> {
        Ok(self.inner.l2_norm(field(&self.inner, values)?.values()))
    }

    /// Discrete Sobolev norm `‖u‖_{s,h}`.
    #[pyo3(signature = (values, s, h = 1.0))]
    fn sobolev_norm(&self, values: Vec<C64>, s: f64, h: f64) -> PyResult<f64> {
        Ok(self.inner.sobolev_norm_of(field(&self.inner, values)?.values(), s, h))
    }

    fn __repr__(&self) -> String {
        format!("Grid(n={}, l={})", self.inner.n(), self.inner.l())
    }
}

/// Coefficient set of a scenario preset.
#[pyclass(name = "Coefficients", module = "pevo_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyCoefficients {
    /// Core coefficient set.
    pub inner: CoefficientSet,
    name: String,
}

#[pymethods]
impl PyCoefficients {
    /// Builds a preset by name; `params` is a JSON object of preset
    /// parameters (missing: the preset defaults).
    #[staticmethod]
    #[pyo3(signature = (name, grid, params = None))]
    fn preset(name: &str, grid: &PyGrid, params: Option<&str>) -> PyResult<Self> {
        let scenario: Scenario = match params {
            Some(p) => {
                let block = format!(r#"{{"preset": {}, "params": {p}}}"#, serde_json::Value::from(name));
                serde_json::from_str(&block).map_err(|e| PyValueError::new_err(e.to_string()))?
            }
            None => presets()
                .into_iter()
                .find(|p| p.name == name)
                .map(|p| p.default)
                .ok_or_else(|| PyValueError::new_err(format!("unknown preset {name}")))?,
        };
        let inner = scenario.coefficients(&grid.inner).map_err(to_py_err)?;
        Ok(PyCoefficients { inner, name: scenario.name().to_string() })
    }

    /// Order `p`.
    #[getter]
    fn p(&self) -> u32 {
        self.inner.p
    }

    /// Lower bound `C_p` of the principal coefficient.
    #[getter]
    fn c_p(&self) -> f64 {
        self.inner.c_p
    }

    /// Preset name.
    #[getter]
    fn name(&self) -> String {
        self.name.clone()
    }

    /// Whether the coefficients depend on the solution.
    #[getter]
    fn is_semilinear(&self) -> bool {
        !self.inner.is_w_independent()
    }

    /// Decay-condition report on `[−extent, extent]`.
    #[pyo3(signature = (extent, nx = 201, real_w = false))]
    fn check(&self, py: Python<'_>, extent: f64, nx: usize, real_w: bool) -> PyResult<Py<PyAny>> {
        let spec = SampleSpec::standard(extent, nx, self.inner.p);
        let spec = if real_w { spec.real_w() } else { spec };
        to_dict(py, &check_conditions(&self.inner, &spec).map_err(to_py_err)?)
    }

    fn __repr__(&self) -> String {
        format!("Coefficients({}, p={})", self.name, self.inner.p)
    }
}

/// Transform `e^{Λ}` with its truncated Neumann inverse.
#[pyclass(name = "TransformPack", module = "pevo_py", frozen)]
pub struct PyPack {
    /// Core pack.
    pub inner: TransformPack,
}

#[pymethods]
impl PyPack {
    /// Pack with explicit constants `M = (M_{p-1}, …, M_1)`.
    #[staticmethod]
    #[pyo3(signature = (p, m, h, grid, neumann_order = 8))]
    fn build(p: u32, m: Vec<f64>, h: f64, grid: &PyGrid, neumann_order: usize) -> PyResult<Self> {
        let inner = build_pack(p, &m, h, &grid.inner, &CutoffPair::new(p), neumann_order).map_err(to_py_err)?;
        Ok(PyPack { inner })
    }

    /// Constants `M`.
    #[getter]
    fn m(&self) -> Vec<f64> {
        self.inner.m().to_vec()
    }

    /// Frequency threshold `h`.
    #[getter]
    fn h(&self) -> f64 {
        self.inner.h()
    }

    /// Fitted logarithmic order `δ` of `Λ`.
    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta()
    }

    /// Loss of derivatives `σ = 2δ`.
    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    /// Estimated `‖r‖` of the Neumann remainder.
    fn neumann_norm(&self) -> f64 {
        estimate_neumann_norm(&self.inner)
    }

    /// `e^{Λ}(x,D) u`.
    fn apply(&self, values: Vec<C64>) -> PyResult<Vec<C64>> {
        let u = field(self.inner.grid(), values)?;
        Ok(self.inner.apply_exp_lambda(&u).map_err(to_py_err)?.into_values())
    }

    /// `(e^{Λ})^{-1} u` by the certified Neumann series, or by a dense solve.
    #[pyo3(signature = (values, dense = false))]
    fn invert(&self, values: Vec<C64>, dense: bool) -> PyResult<Vec<C64>> {
        let u = field(self.inner.grid(), values)?;
        let mode = if dense { InverseMode::Dense } else { InverseMode::Neumann };
        Ok(invert_exp_lambda(&self.inner, &u, mode).map_err(to_py_err)?.into_values())
    }

    fn __repr__(&self) -> String {
        format!("TransformPack(m={:?}, h={}, sigma={:.4})", self.inner.m(), self.inner.h(), self.inner.sigma())
    }
}

/// Time-sampled trajectory.
#[pyclass(name = "Trajectory", module = "pevo_py", frozen)]
pub struct PyTrajectory {
    /// Core trajectory.
    pub inner: Trajectory,
}

#[pymethods]
impl PyTrajectory {
    /// Sample times.
    fn times(&self) -> Vec<f64> {
        self.inner.times().to_vec()
    }

    /// Frame `k`.
    fn frame(&self, k: usize) -> PyResult<Vec<C64>> {
        self.inner
            .frames()
            .get(k)
            .map(|f| f.values().to_vec())
            .ok_or_else(|| PyValueError::new_err(format!("frame {k} out of range")))
    }

    /// All frames.
    fn frames(&self) -> Vec<Vec<C64>> {
        self.inner.frames().iter().map(|f| f.values().to_vec()).collect()
    }

    /// `‖u(t_k)‖₀` for every frame.
    fn l2_norms(&self) -> Vec<f64> {
        self.inner.frames().iter().map(|f| f.l2_norm()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn linear_problem(
    coeffs: &PyCoefficients,
    grid: &PyGrid,
    u0: Vec<C64>,
    horizon: f64,
    dt: Option<f64>,
    save_every: usize,
    sponge: Option<(f64, f64, f64)>,
) -> PyResult<LinearProblem> {
    let u0 = field(&grid.inner, u0)?;
    let mut lp = LinearProblem::new(coeffs.inner.clone(), u0.clone(), horizon);
    if !coeffs.inner.is_w_independent() {
        lp.frozen = FrozenState::Static(u0);
    }
    lp.dt = dt;
    lp.save_every = save_every;
    lp.layer = layer(sponge);
    Ok(lp)
}

/// Tunes the transform constants for `coeffs` (coefficients frozen at `u`,
/// default zero). Returns the pack and the tuning report.
#[pyfunction]
#[pyo3(signature = (coeffs, grid, u = None, layer = None))]
fn tune(
    py: Python<'_>,
    coeffs: &PyCoefficients,
    grid: &PyGrid,
    u: Option<Vec<C64>>,
    layer: Option<(f64, f64, f64)>,
) -> PyResult<(PyPack, Py<PyAny>)> {
    let u = match u {
        Some(v) => field(&grid.inner, v)?,
        None => Field::zeros(&grid.inner),
    };
    let samples = self::layer(layer).map(|l| l.samples(&grid.inner));
    let p = coeffs.inner.p;
    let (pack, report) = tune_constants(
        &coeffs.inner,
        &u,
        &grid.inner,
        &CutoffPair::new(p),
        &TuneSettings::default(),
        samples.as_deref(),
    )
    .map_err(to_py_err)?;
    Ok((PyPack { inner: pack }, to_dict(py, &report)?))
}

/// Solves `∂_t v = i f − A v` with coefficients frozen at `u0`. `layer` is
/// an optional absorbing layer `(strength, start, end)`.
#[pyfunction(name = "solve_linear")]
#[pyo3(signature = (coeffs, grid, u0, horizon, dt = None, save_every = 1, layer = None))]
#[allow(clippy::too_many_arguments)]
fn solve_linear_py(
    coeffs: &PyCoefficients,
    grid: &PyGrid,
    u0: Vec<C64>,
    horizon: f64,
    dt: Option<f64>,
    save_every: usize,
    layer: Option<(f64, f64, f64)>,
) -> PyResult<PyTrajectory> {
    let lp = linear_problem(coeffs, grid, u0, horizon, dt, save_every, layer)?;
    Ok(PyTrajectory { inner: solve_linear(&lp).map_err(to_py_err)? })
}

/// Transformed solve: evolves `w = e^{Λ}v` and reconstructs `v`.
/// Returns `(v, w)`.
#[pyfunction(name = "solve_transformed")]
#[pyo3(signature = (coeffs, grid, pack, u0, horizon, dt = None, save_every = 1, layer = None))]
#[allow(clippy::too_many_arguments)]
fn solve_transformed_py(
    coeffs: &PyCoefficients,
    grid: &PyGrid,
    pack: &PyPack,
    u0: Vec<C64>,
    horizon: f64,
    dt: Option<f64>,
    save_every: usize,
    layer: Option<(f64, f64, f64)>,
) -> PyResult<(PyTrajectory, PyTrajectory)> {
    let lp = linear_problem(coeffs, grid, u0, horizon, dt, save_every, layer)?;
    let sol = solve_transformed(&lp, &pack.inner).map_err(to_py_err)?;
    Ok((PyTrajectory { inner: sol.v }, PyTrajectory { inner: sol.w }))
}

/// Newton solve of the semilinear problem. `target` is `"mollified"` or
/// `"zero"`; `seed` is `"taylor"`, `"zero"` or `"initial"`. Returns the
/// last iterate and the Newton report (raises on nonconvergence).
#[pyfunction]
#[pyo3(signature = (coeffs, grid, u0, horizon, dt, target = "mollified", seed = "taylor", tol = 1e-6, max_iter = 10, epsilon = None))]
#[allow(clippy::too_many_arguments)]
fn newton_solve(
    py: Python<'_>,
    coeffs: &PyCoefficients,
    grid: &PyGrid,
    u0: Vec<C64>,
    horizon: f64,
    dt: f64,
    target: &str,
    seed: &str,
    tol: f64,
    max_iter: usize,
    epsilon: Option<f64>,
) -> PyResult<(PyTrajectory, Py<PyAny>)> {
    let u0 = field(&grid.inner, u0)?;
    let mut sp = SemilinearProblem::new(coeffs.inner.clone(), u0, horizon, dt);
    sp.target = match target {
        "mollified" => TargetKind::Mollified,
        "zero" => TargetKind::Zero,
        other => return Err(PyValueError::new_err(format!("unknown target {other}"))),
    };
    sp.seed = match seed {
        "taylor" => Seed::Taylor,
        "zero" => Seed::Zero,
        "initial" => Seed::Initial,
        other => return Err(PyValueError::new_err(format!("unknown seed {other}"))),
    };
    sp.tol = tol;
    sp.max_iter = max_iter;
    sp.epsilon = epsilon;
    let (u, report) = newton(&sp).and_then(|o| o.into_result()).map_err(to_py_err)?;
    Ok((PyTrajectory { inner: u }, to_dict(py, &report)?))
}

/// Runs a CLI subcommand (`check`, `tune`, `solve-linear`, `solve`,
/// `audit`, `pipeline`) on a JSON configuration. Returns the exit code and
/// the failure record (or `None`).
#[pyfunction]
#[pyo3(signature = (config_json, command = "pipeline", out = None))]
fn run_pipeline(
    py: Python<'_>,
    config_json: &str,
    command: &str,
    out: Option<PathBuf>,
) -> PyResult<(i32, Option<Py<PyAny>>)> {
    let config = RunConfig::from_json(config_json).map_err(to_py_err)?;
    let stages = stages_for(command, &config).map_err(to_py_err)?;
    let outcome = py.detach(|| run(&config, &stages, out.as_deref()));
    let failure = outcome.failure.as_ref().map(|f| to_dict(py, f)).transpose()?;
    Ok((outcome.exit_code, failure))
}

/// The known-good configuration as JSON.
#[pyfunction]
fn golden_config() -> PyResult<String> {
    serde_json::to_string_pretty(&RunConfig::golden()).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// JSON Schema of run configurations.
#[pyfunction]
fn config_schema(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_dict(py, &schema())
}

/// Scenario presets with their default parameter blocks.
#[pyfunction]
fn list_presets(py: Python<'_>) -> PyResult<Py<PyAny>> {
    to_dict(py, &presets())
}

/// The `pevo_py` module.
#[pymodule]
pub fn pevo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PevoError", m.py().get_type::<PevoError>())?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyCoefficients>()?;
    m.add_class::<PyPack>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    m.add_function(wrap_pyfunction!(solve_linear_py, m)?)?;
    m.add_function(wrap_pyfunction!(solve_transformed_py, m)?)?;
    m.add_function(wrap_pyfunction!(newton_solve, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(golden_config, m)?)?;
    m.add_function(wrap_pyfunction!(config_schema, m)?)?;
    m.add_function(wrap_pyfunction!(list_presets, m)?)?;
    Ok(())
}
