//! Python bindings: MERA states of the transverse-field Ising ring, their
//! evolution and measurements, checkpoints and the exact reference
//! energies.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;

use tmera::driver::{evolve, EvolveConfig};
use tmera::evolution::{TiEnvironment, UpdatePolicy};
use tmera::model::{EvolutionKind, SweepStyle, TransverseIsing};
use tmera::observables::{measure, Measurement, Reference};
use tmera::{MeraGeometry, MeraState, C64};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn ising(h: f64) -> PyResult<TransverseIsing> {
    TransverseIsing::new(h).map_err(value_err)
}

fn row<'py>(py: Python<'py>, m: &Measurement) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("step", m.step)?;
    d.set_item("tau", m.tau)?;
    d.set_item("energy_total", m.energy_total)?;
    d.set_item("energy_per_site", m.energy_per_site)?;
    d.set_item("err_vs_ff", m.err_vs_ff)?;
    d.set_item("err_vs_ed", m.err_vs_ed)?;
    d.set_item("sz", m.sz.clone())?;
    d.set_item("sxsx", m.sxsx.clone())?;
    d.set_item("lambda_entropy", m.lambda_entropy)?;
    Ok(d)
}

/// Binary MERA on `2^(levels + 1)` sites with bond dimension `m`.
#[pyclass(name = "State", module = "pytmera", skip_from_py_object)]
#[derive(Clone)]
struct PyState {
    inner: MeraState,
}

#[pymethods]
impl PyState {
    /// All spins up (`sigma^z = +1`).
    #[staticmethod]
    #[pyo3(signature = (levels, m, ti = false))]
    fn product(levels: usize, m: usize, ti: bool) -> PyResult<Self> {
        let g = MeraGeometry::new(levels, 2, m).map_err(value_err)?;
        let up = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        let s = MeraState::init_product(g, &up).map_err(value_err)?;
        Ok(Self {
            inner: if ti { s.ti_promote() } else { s },
        })
    }

    #[staticmethod]
    #[pyo3(signature = (levels, m, seed = 0, ti = false))]
    fn random(levels: usize, m: usize, seed: u64, ti: bool) -> PyResult<Self> {
        let g = MeraGeometry::new(levels, 2, m).map_err(value_err)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            inner: MeraState::random(g, ti, &mut rng),
        })
    }

    /// Loads a checkpoint; returns `(state, step, tau)`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<(Self, u64, f64)> {
        let c = tmera::checkpoint::load(&path).map_err(value_err)?;
        Ok((Self { inner: c.state }, c.step, c.tau))
    }

    #[pyo3(signature = (path, step = 0, tau = 0.0))]
    fn save(&self, path: PathBuf, step: u64, tau: f64) -> PyResult<()> {
        tmera::checkpoint::save(&path, &self.inner, step, tau).map_err(runtime_err)
    }

    #[getter]
    fn sites(&self) -> usize {
        self.inner.geometry().sites()
    }

    #[getter]
    fn levels(&self) -> usize {
        self.inner.geometry().levels()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.geometry().m()
    }

    #[getter]
    fn translation_invariant(&self) -> bool {
        self.inner.is_ti()
    }

    #[getter]
    fn top_weights(&self) -> Vec<f64> {
        self.inner.lambda().to_vec()
    }

    fn bond_dim(&self, level: usize) -> PyResult<usize> {
        if level > self.inner.geometry().levels() {
            return Err(value_err(format!("level {level} out of range")));
        }
        Ok(self.inner.geometry().bond_dim(level))
    }

    /// Largest deviation from unitarity, isometry or unit norm.
    fn max_deviation(&self) -> f64 {
        self.inner.validate().max_deviation()
    }

    fn copy(&self) -> Self {
        self.clone()
    }

    /// Dense wave function (at most 16 sites), site 0 most significant.
    fn expand_dense(&self) -> PyResult<Vec<Complex64>> {
        self.inner.expand_dense().map_err(value_err)
    }

    #[pyo3(signature = (h = 1.0))]
    fn energy(&self, h: f64) -> PyResult<f64> {
        tmera::observables::energy(&self.inner, &ising(h)?).map_err(runtime_err)
    }

    /// Energy, magnetizations and correlations as a dictionary.
    #[pyo3(signature = (h = 1.0))]
    fn measure<'py>(&self, py: Python<'py>, h: f64) -> PyResult<Bound<'py, PyDict>> {
        let model = ising(h)?;
        let reference = Reference::for_model(&model, self.sites());
        let m = measure(&self.inner, &model, 0, 0.0, &reference).map_err(runtime_err)?;
        row(py, &m)
    }

    /// Two-site density matrix of the bond `(left, left + 1)` as a 4x4
    /// nested list, rows indexed by the ket.
    fn bond_density(&self, left: usize) -> PyResult<Vec<Vec<Complex64>>> {
        let rho = tmera::cone::bond_density(&self.inner, left).map_err(value_err)?;
        Ok(rho.data().chunks(4).map(|r| r.to_vec()).collect())
    }

    /// Evolves in place and returns the measurement rows.
    #[pyo3(signature = (
        t_final,
        h = 1.0,
        dt = 0.1,
        kind = "euclidean",
        order = 2,
        sweep_style = "odd-even",
        measure_every = 10,
        inner_sweeps = 2,
        ti_environment = "single",
    ))]
    #[allow(clippy::too_many_arguments)]
    fn evolve<'py>(
        &mut self,
        py: Python<'py>,
        t_final: f64,
        h: f64,
        dt: f64,
        kind: &str,
        order: u32,
        sweep_style: &str,
        measure_every: usize,
        inner_sweeps: usize,
        ti_environment: &str,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let model = ising(h)?;
        let config = EvolveConfig {
            dt,
            t_final,
            kind: kind.parse::<EvolutionKind>().map_err(value_err)?,
            order,
            style: sweep_style.parse::<SweepStyle>().map_err(value_err)?,
            policy: UpdatePolicy {
                inner_sweeps,
                ti_environment: ti_environment.parse::<TiEnvironment>().map_err(value_err)?,
                ..Default::default()
            },
            measure_every,
            ..Default::default()
        };
        config.validate().map_err(value_err)?;
        let state = &mut self.inner;
        let log = py
            .detach(|| evolve(state, &model, &config, &mut ()))
            .map_err(runtime_err)?;
        log.rows.iter().map(|m| row(py, m)).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "State(sites={}, m={}, translation_invariant={})",
            self.sites(),
            self.m(),
            self.translation_invariant()
        )
    }
}

/// Closed-form ground-state energy of the periodic ring.
#[pyfunction]
#[pyo3(signature = (sites, h = 1.0))]
fn free_fermion_energy(sites: usize, h: f64) -> PyResult<f64> {
    tmera::exact::free_fermion_energy(sites, h)
        .map(|r| r.energy)
        .map_err(value_err)
}

/// Exact-diagonalization ground-state energy (at most 14 sites).
#[pyfunction]
#[pyo3(signature = (sites, h = 1.0))]
fn ed_ground_energy(sites: usize, h: f64) -> PyResult<f64> {
    tmera::exact::ed_ground_energy(sites, h)
        .map(|r| r.energy)
        .map_err(value_err)
}

#[pymodule]
fn pytmera(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyState>()?;
    m.add_function(wrap_pyfunction!(free_fermion_energy, m)?)?;
    m.add_function(wrap_pyfunction!(ed_ground_energy, m)?)?;
    m.add("CRITICAL_ENERGY_PER_SITE", tmera::exact::CRITICAL_ENERGY_PER_SITE)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
