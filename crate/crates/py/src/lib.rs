//! Python bindings for `mixnash`.
//!
//! ```python
//! import pymixnash as mx
//! sc = mx.Scenario.builtin("vehicles5").with_overrides(variant="disturbance_free")
//! res = sc.run()
//! print(res.summary["final_err_2"])
//! ```

use mixnash::config::{self, Overrides, ScenarioConfig};
use mixnash::controller::Variant;
use mixnash::game::{self, GameDefinition, QuadraticGame};
use mixnash::graph::{self, CommGraph};
use mixnash::rbfnn;
use mixnash::sim::{self, Summary, Trajectory};
use nalgebra::DMatrix;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(pymixnash, MixnashError, PyException);

fn to_py(e: mixnash::Error) -> PyErr {
    MixnashError::new_err(e.to_string())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Undirected communication graph; player indices are 1-based.
#[pyclass(name = "Graph", frozen)]
struct PyGraph {
    inner: CommGraph,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new(n: usize, edges: Vec<[usize; 2]>) -> PyResult<Self> {
        let inner = CommGraph::from_edges_one_based(n, &edges).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn ring(n: usize) -> PyResult<Self> {
        if n < 2 {
            return Err(PyValueError::new_err("a ring needs at least two players"));
        }
        Ok(Self { inner: CommGraph::ring(n) })
    }

    #[staticmethod]
    fn path(n: usize) -> PyResult<Self> {
        if n < 1 {
            return Err(PyValueError::new_err("a path needs at least one player"));
        }
        Ok(Self { inner: CommGraph::path(n) })
    }

    #[staticmethod]
    fn complete(n: usize) -> PyResult<Self> {
        if n < 1 {
            return Err(PyValueError::new_err("a graph needs at least one player"));
        }
        Ok(Self { inner: CommGraph::complete(n) })
    }

    #[getter]
    fn n_players(&self) -> usize {
        self.inner.n_players()
    }

    fn edges(&self) -> Vec<[usize; 2]> {
        self.inner.edges_one_based()
    }

    fn is_connected(&self) -> bool {
        self.inner.is_connected()
    }

    fn adjacency(&self) -> Vec<Vec<f64>> {
        rows(self.inner.adjacency())
    }

    fn laplacian(&self) -> Vec<Vec<f64>> {
        rows(&graph::laplacian(&self.inner))
    }

    /// `(M, eigenvalues)` for `M = (L ⊗ I_N + A₀) ⊗ I_d`, eigenvalues ascending.
    fn estimator_matrix(&self, action_dim: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let m = graph::estimator_matrix(&self.inner, action_dim).map_err(to_py)?;
        Ok((rows(m.matrix()), m.eigenvalues()))
    }

    fn __repr__(&self) -> String {
        format!("Graph(n={}, edges={:?})", self.inner.n_players(), self.inner.edges_one_based())
    }
}

/// Quadratic game with pseudo-gradient `Bx + c`.
#[pyclass(name = "QuadraticGame", frozen)]
struct PyGame {
    inner: QuadraticGame,
}

#[pymethods]
impl PyGame {
    #[staticmethod]
    fn vehicles5() -> Self {
        Self { inner: game::vehicles5_game() }
    }

    /// Game section of a scenario JSON document (see `Scenario.from_json`).
    #[staticmethod]
    fn from_scenario_json(text: &str) -> PyResult<Self> {
        let cfg = config::parse_config(text).map_err(to_py)?;
        Ok(Self { inner: cfg.build_game().map_err(to_py)? })
    }

    #[getter]
    fn n_players(&self) -> usize {
        self.inner.n_players()
    }

    #[getter]
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn orders(&self) -> Vec<&'static str> {
        self.inner.orders().iter().map(|o| o.as_str()).collect()
    }

    /// Cost of 1-based player `player` at the flat profile `x`.
    fn cost(&self, player: usize, x: Vec<f64>) -> PyResult<f64> {
        self.check(player, &x)?;
        Ok(self.inner.cost(player - 1, &x))
    }

    fn pseudo_gradient(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let g = game::pseudo_gradient(&self.inner, &x).map_err(to_py)?;
        Ok(g.as_slice().to_vec())
    }

    fn jacobian(&self) -> Vec<Vec<f64>> {
        rows(self.inner.jacobian())
    }

    fn nash(&self) -> PyResult<Vec<f64>> {
        Ok(game::nash_oracle(&self.inner).map_err(to_py)?.as_slice().to_vec())
    }

    fn monotonicity(&self) -> PyResult<f64> {
        game::monotonicity_constant(&self.inner).map_err(to_py)
    }

    fn lipschitz(&self) -> Vec<f64> {
        game::lipschitz_constants(&self.inner)
    }
}

impl PyGame {
    fn check(&self, player: usize, x: &[f64]) -> PyResult<()> {
        if player == 0 || player > self.inner.n_players() {
            return Err(PyValueError::new_err(format!("player {player} out of range")));
        }
        if x.len() != self.inner.dim() {
            return Err(PyValueError::new_err(format!(
                "profile has length {}, expected {}",
                x.len(),
                self.inner.dim()
            )));
        }
        Ok(())
    }
}

/// A scenario configuration; build and integrate it with `run()`.
#[pyclass(name = "Scenario", frozen)]
struct PyScenario {
    config: ScenarioConfig,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        config::builtin(name)
            .map(|config| Self { config })
            .ok_or_else(|| PyValueError::new_err(format!("unknown scenario `{name}`")))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { config: config::parse_config(text).map_err(to_py)? })
    }

    fn to_json(&self) -> String {
        self.config.to_json_pretty()
    }

    #[getter]
    fn name(&self) -> String {
        self.config.name.clone()
    }

    /// Copy with gains, step size, horizon or variant replaced.
    #[pyo3(signature = (*, k1=None, k2=None, k3=None, k4=None, beta=None, dt=None, t_final=None, stride=None, variant=None))]
    #[allow(clippy::too_many_arguments)]
    fn with_overrides(
        &self,
        k1: Option<f64>,
        k2: Option<f64>,
        k3: Option<f64>,
        k4: Option<f64>,
        beta: Option<f64>,
        dt: Option<f64>,
        t_final: Option<f64>,
        stride: Option<usize>,
        variant: Option<&str>,
    ) -> PyResult<Self> {
        let variant = variant
            .map(|v| v.parse::<Variant>())
            .transpose()
            .map_err(PyValueError::new_err)?;
        let ov = Overrides {
            k1,
            k2,
            k3,
            k4,
            beta,
            dt,
            t_final,
            stride,
            variant,
            y_init: None,
        };
        let mut config = self.config.clone();
        ov.apply(&mut config);
        Ok(Self { config })
    }

    /// Nash equilibrium certificate of the scenario's game.
    fn verify_nash<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let g = self.config.build_game().map_err(to_py)?;
        let x = game::nash_oracle(&g).map_err(to_py)?;
        let residual = game::pseudo_gradient(&g, x.as_slice()).map_err(to_py)?.norm();
        let d = PyDict::new(py);
        d.set_item("x_star", x.as_slice().to_vec())?;
        d.set_item("residual", residual)?;
        d.set_item("monotonicity", game::monotonicity_constant(&g).map_err(to_py)?)?;
        d.set_item("lipschitz", game::lipschitz_constants(&g))?;
        Ok(d)
    }

    /// Integrate the closed loop. Runs without holding the GIL.
    fn run(&self, py: Python<'_>) -> PyResult<PyRunResult> {
        let cfg = self.config.clone();
        let (traj, summary) = py
            .detach(move || -> mixnash::Result<(Option<Trajectory>, Summary)> {
                let scenario = cfg.build()?;
                Ok(sim::run_scenario(&scenario))
            })
            .map_err(to_py)?;
        Ok(PyRunResult { traj, summary })
    }

    fn __repr__(&self) -> String {
        format!("Scenario(name={:?}, variant={})", self.config.name, self.config.variant.as_str())
    }
}

/// Outcome of `Scenario.run()`.
#[pyclass(name = "RunResult", frozen)]
struct PyRunResult {
    traj: Option<Trajectory>,
    summary: Summary,
}

impl PyRunResult {
    fn traj(&self) -> PyResult<&Trajectory> {
        self.traj
            .as_ref()
            .ok_or_else(|| MixnashError::new_err("run blew up; no trajectory recorded"))
    }
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn blown_up(&self) -> bool {
        self.summary.blown_up
    }

    /// Metrics as a dict with the same keys as `summary.json`.
    #[getter]
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(&self.summary).map_err(|e| MixnashError::new_err(e.to_string()))?;
        json_to_py(py, &text)
    }

    #[getter]
    fn times(&self) -> PyResult<Vec<f64>> {
        Ok(self.traj()?.times.clone())
    }

    /// Action profile `x` at each recorded time.
    #[getter]
    fn actions(&self) -> PyResult<Vec<Vec<f64>>> {
        let t = self.traj()?;
        let p = t.layout.profile_dim();
        Ok(t.states.iter().map(|s| s[..p].to_vec()).collect())
    }

    #[getter]
    fn err_x(&self) -> PyResult<Vec<f64>> {
        Ok(self.traj()?.err_x.clone())
    }

    #[getter]
    fn err_v(&self) -> PyResult<Vec<f64>> {
        Ok(self.traj()?.err_v.clone())
    }

    #[getter]
    fn lyapunov(&self) -> PyResult<Vec<f64>> {
        Ok(self.traj()?.lyapunov.clone())
    }

    #[getter]
    fn weight_norms(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.traj()?.weight_norms.clone())
    }

    /// Trajectory in the CLI's `trajectory.csv` format.
    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.traj()?
            .write_csv(&mut buf)
            .map_err(|e| MixnashError::new_err(e.to_string()))?;
        String::from_utf8(buf).map_err(|e| MixnashError::new_err(e.to_string()))
    }
}

/// Fixed point of `κ = e^{−(κ+1)}`.
#[pyfunction]
fn tanh_kappa() -> f64 {
    rbfnn::tanh_kappa().value()
}

/// `δ·tanh(κδe/ε)` applied component-wise.
#[pyfunction]
fn damping_phi(e: Vec<f64>, delta: f64, epsilon: f64) -> Vec<f64> {
    rbfnn::damping_phi(&e, delta, epsilon, rbfnn::tanh_kappa())
}

#[pyfunction]
fn list_scenarios() -> Vec<(&'static str, &'static str)> {
    config::BUILTIN_SCENARIOS.to_vec()
}

/// Run the command-line front end in-process; returns `(exit_code, stdout, stderr)`.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> (i32, String, String) {
    py.detach(move || {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("mixnash".to_string()).chain(args);
        let code = mixnash::cli::run_cli(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8_lossy(&out).into_owned(),
            String::from_utf8_lossy(&err).into_owned(),
        )
    })
}

#[pymodule]
fn pymixnash(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MixnashError", m.py().get_type::<MixnashError>())?;
    m.add("SCHEMA_VERSION", sim::SCHEMA_VERSION)?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyGame>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(tanh_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(damping_phi, m)?)?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
