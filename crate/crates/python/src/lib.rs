//! Python bindings: Hamiltonian evaluation, forward simulation, shape files
//! and the command-line runs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use bridgemark::cli::{self, io, Mode};
use bridgemark::geometry::{self, KernelParams, LandmarkConfig, PhaseState};
use bridgemark::inference::rng::{stream, Purpose};
use bridgemark::inference::WienerPath;
use bridgemark::models::ModelSpec;
use bridgemark::Error;

/// Configuration errors become `ValueError`, numerical failures `ArithmeticError`.
fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        1 => PyValueError::new_err(e.to_string()),
        2 => PyArithmeticError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    match mode {
        "simulate" => Ok(Mode::Simulate),
        "match" => Ok(Mode::Match),
        "template" => Ok(Mode::Template),
        other => Err(PyValueError::new_err(format!("unknown mode '{other}'"))),
    }
}

/// Kinetic energy `1/2 sum_ij <p_i, p_j> k_a(q_i - q_j)` of flat, landmark-major `q`, `p`.
#[pyfunction]
fn hamiltonian(q: Vec<f64>, p: Vec<f64>, d: usize, a: f64) -> PyResult<f64> {
    let kernel = KernelParams::new(a, 1.0).map_err(to_py)?;
    let x = PhaseState::new(LandmarkConfig::new(d, q).map_err(to_py)?, p).map_err(to_py)?;
    Ok(geometry::hamiltonian(&kernel, &x))
}

/// Euler–Maruyama trajectory of the Lagrangian (`lam` unset) or Langevin
/// (`lam` set) model on a uniform grid; returns one `[q; p]` row per knot.
#[pyfunction]
#[pyo3(signature = (q0, p0, d, a, gamma, seed, t_end=1.0, h=0.01, lam=None))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    q0: Vec<f64>,
    p0: Vec<f64>,
    d: usize,
    a: f64,
    gamma: f64,
    seed: u64,
    t_end: f64,
    h: f64,
    lam: Option<f64>,
) -> PyResult<Vec<Vec<f64>>> {
    let q = LandmarkConfig::new(d, q0).map_err(to_py)?;
    let n = q.n();
    if p0.len() != n * d {
        return Err(PyValueError::new_err(format!("p0 must have {} entries, got {}", n * d, p0.len())));
    }
    let kernel = KernelParams::new(a, 1.0).map_err(to_py)?;
    let spec = match lam {
        None => ModelSpec::lagrangian(n, d, kernel, gamma),
        Some(l) => ModelSpec::langevin(n, d, kernel, gamma, Some(l)),
    }
    .map_err(to_py)?;
    let grid = cli::uniform_grid(t_end, h).map_err(to_py)?;
    let mut x0 = q.into_vec();
    x0.extend_from_slice(&p0);
    let states = py
        .detach(|| {
            let w = WienerPath::sample(&mut stream(seed, Purpose::Simulate, 0, 0), &grid, spec.wiener_dim());
            cli::simulate_path(&spec, &x0, &grid, &w)
        })
        .map_err(to_py)?;
    Ok(states.chunks(spec.state_dim()).map(<[f64]>::to_vec).collect())
}

/// Reads a shape file into `{shape id: [[coordinates of landmark 0], ...]}`.
#[pyfunction]
fn read_shapes(path: PathBuf) -> PyResult<BTreeMap<u64, Vec<Vec<f64>>>> {
    let shapes = io::read_shapes(&path).map_err(to_py)?;
    Ok(shapes
        .into_iter()
        .map(|s| {
            let d = s.config.d();
            (s.id, s.config.as_slice().chunks(d).map(<[f64]>::to_vec).collect())
        })
        .collect())
}

/// Runs `simulate`, `match` or `template` exactly as the command-line tool does.
#[pyfunction]
#[pyo3(signature = (mode, config, out, seed=None))]
fn run(py: Python<'_>, mode: &str, config: PathBuf, out: PathBuf, seed: Option<u64>) -> PyResult<()> {
    let mode = parse_mode(mode)?;
    py.detach(|| cli::run(mode, &config, seed, &out)).map_err(to_py)
}

#[pymodule]
fn bridgemark_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(hamiltonian, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(read_shapes, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
