//! Python bindings: bound states, decomposition, the virial identity and the
//! experiment runners. Fields cross the boundary as lists of complex numbers
//! sampled on the family's grid; configs and reports as JSON strings.

use nls_core::bound_states::BoundStateFamily as CoreFamily;
use nls_core::config::RunConfig;
use nls_core::evolution::{evolve as core_evolve, Tracker};
use nls_core::experiments::{self, initial_data, trajectory_csv};
use nls_core::grid::{ComplexField, Grid};
use nls_core::modulation::{continuous_part, Convention, Modulator};
use nls_core::nonlinearity::{Family, Nonlinearity};
use nls_core::operator::{build_operator, SpectralData};
use nls_core::virial::{commutator_identity, make_weights};
use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(nls_py, NlsError, PyException);

fn err(e: nls_core::Error) -> PyErr {
    NlsError::new_err(e.to_string())
}

fn convention(name: &str) -> PyResult<Convention> {
    match name {
        "pc" => Ok(Convention::Pc),
        "hc" => Ok(Convention::Hc),
        other => Err(PyValueError::new_err(format!("convention must be 'pc' or 'hc', got {other:?}"))),
    }
}

fn family_tag(name: &str) -> PyResult<Family> {
    match name {
        "power" => Ok(Family::Power),
        "saturating" => Ok(Family::Saturating),
        other => Err(PyValueError::new_err(format!("unknown family {other:?}"))),
    }
}

/// Standing waves `Q[z]` of `H_q Q + g(|Q|²)Q = EQ` on a uniform grid.
#[pyclass(name = "BoundStateFamily")]
struct PyFamily {
    inner: CoreFamily,
}

impl PyFamily {
    fn field(&self, values: Vec<Complex64>) -> PyResult<ComplexField> {
        ComplexField::from_values(*self.inner.grid(), values).map_err(err)
    }
}

#[pymethods]
impl PyFamily {
    #[new]
    #[pyo3(signature = (p, lam, q=1.0, half_width=40.0, nodes=1601, family="power"))]
    fn new(p: f64, lam: f64, q: f64, half_width: f64, nodes: usize, family: &str) -> PyResult<Self> {
        let nl = Nonlinearity::new(family_tag(family)?, p, lam).map_err(err)?;
        let grid = Grid::new(half_width, nodes).map_err(err)?;
        Ok(Self {
            inner: CoreFamily::new(nl, q, grid).map_err(err)?,
        })
    }

    fn nodes(&self) -> Vec<f64> {
        self.inner.grid().nodes()
    }

    fn spacing(&self) -> f64 {
        self.inner.grid().spacing()
    }

    /// Discrete ground state `φ` and its eigenvalue.
    fn ground_state(&self) -> (Vec<f64>, f64) {
        let sd = self.inner.spectral();
        (sd.phi.values().to_vec(), sd.eigenvalue)
    }

    /// `(Q[z], E(|z|²))`.
    fn bound_state(&self, z: Complex64) -> PyResult<(Vec<Complex64>, f64)> {
        let (q, e) = self.inner.bound_state(z).map_err(err)?;
        Ok((q.into_values(), e))
    }

    fn frequency(&self, rho: f64) -> PyResult<f64> {
        self.inner.frequency(rho).map_err(err)
    }

    fn standing_wave_residual(&self, z: Complex64) -> PyResult<f64> {
        self.inner.standing_wave_residual(z).map_err(err)
    }

    /// Largest `ρ` at which the profile iteration contracts by `max_factor`.
    #[pyo3(signature = (max_factor=0.5, hi=1.0))]
    fn rho0(&self, max_factor: f64, hi: f64) -> f64 {
        self.inner.empirical_rho0(max_factor, hi)
    }

    fn continuous_part(&self, u: Vec<Complex64>) -> PyResult<Vec<Complex64>> {
        Ok(continuous_part(&self.inner, &self.field(u)?).map_err(err)?.into_values())
    }

    /// `u = Q[z] + remainder`; returns `(z, remainder)`.
    #[pyo3(signature = (u, conv="pc"))]
    fn decompose(&self, u: Vec<Complex64>, conv: &str) -> PyResult<(Complex64, Vec<Complex64>)> {
        let s = Modulator::new(&self.inner)
            .decompose(&self.field(u)?, convention(conv)?)
            .map_err(err)?;
        Ok((s.z, s.remainder.into_values()))
    }

    /// `Q[z] + ξ` (`pc`) or `Q[z] + R[z]ξ` (`hc`), with `ξ` in the continuous part.
    #[pyo3(signature = (z, xi, conv="pc"))]
    fn compose(&self, z: Complex64, xi: Vec<Complex64>, conv: &str) -> PyResult<Vec<Complex64>> {
        Ok(Modulator::new(&self.inner)
            .compose(z, &self.field(xi)?, convention(conv)?)
            .map_err(err)?
            .into_values())
    }

    fn __repr__(&self) -> String {
        let nl = self.inner.nonlinearity();
        format!(
            "BoundStateFamily(p={}, lam={}, q={}, half_width={}, nodes={})",
            nl.p,
            nl.lambda,
            self.inner.operator().coupling(),
            self.inner.grid().half_width(),
            self.inner.grid().len()
        )
    }
}

/// `(numerical, exact)` ground eigenvalue of `H_q`.
#[pyfunction]
#[pyo3(signature = (q=1.0, half_width=40.0, nodes=8001))]
fn spectrum(q: f64, half_width: f64, nodes: usize) -> PyResult<(f64, f64)> {
    let grid = Grid::new(half_width, nodes).map_err(err)?;
    let sd = SpectralData::numeric(&build_operator(q, grid).map_err(err)?).map_err(err)?;
    Ok((sd.eigenvalue, -q * q / 4.0))
}

/// Relative gap of the commutator identity for the field `u` with weight scale `a`.
#[pyfunction]
#[pyo3(signature = (u, a=16.0, half_width=40.0))]
fn commutator_gap(u: Vec<Complex64>, a: f64, half_width: f64) -> PyResult<f64> {
    let grid = Grid::new(half_width, u.len()).map_err(err)?;
    let wts = make_weights(a, grid).map_err(err)?;
    let xi = ComplexField::from_values(grid, u).map_err(err)?;
    Ok(commutator_identity(&xi, &wts).map_err(err)?.gap)
}

/// Default run configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_json()
}

fn parse(config: &str) -> PyResult<RunConfig> {
    RunConfig::from_json(config).map_err(err)
}

/// Runs one experiment and returns its report as JSON. `name` is one of
/// `small-en`, `selection`, `dispersion`, `residuals`, `virial-check`.
#[pyfunction]
#[pyo3(signature = (name, config="{}"))]
fn run_experiment(py: Python<'_>, name: &str, config: &str) -> PyResult<String> {
    let cfg = parse(config)?;
    let runner = match name {
        "small-en" => experiments::run_small_en,
        "selection" => experiments::run_selection,
        "dispersion" => experiments::run_dispersion,
        "residuals" => experiments::run_modulation_residuals,
        "virial-check" => experiments::run_virial_check,
        other => return Err(PyValueError::new_err(format!("unknown experiment {other:?}"))),
    };
    let report = py.detach(|| runner(&cfg)).map_err(err)?;
    Ok(report.to_json())
}

/// Tracked trajectory from data of `H¹` size `eps`; returns the CSV text.
#[pyfunction]
#[pyo3(signature = (eps, config="{}", conv="pc"))]
fn evolve(py: Python<'_>, eps: f64, config: &str, conv: &str) -> PyResult<String> {
    let cfg = parse(config)?;
    let conv = convention(conv)?;
    py.detach(|| {
        let grid = cfg.grid()?;
        let fam = CoreFamily::new(cfg.nl, cfg.op.q, grid)?;
        let u0 = initial_data(&fam, &cfg, eps)?;
        let wts = make_weights(cfg.virial.a, grid)?;
        let tracker = Tracker {
            family: &fam,
            convention: conv,
            weights: &wts,
            gamma: cfg.virial.gamma,
        };
        let rec = core_evolve(&u0, &cfg.evolution(cfg.op.q, cfg.nl)?, Some(&tracker), &mut [])?;
        Ok(trajectory_csv(&rec, &cfg.canonical()))
    })
    .map_err(err)
}

#[pymodule]
pub fn nls_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFamily>()?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(commutator_gap, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add("NlsError", m.py().get_type::<NlsError>())?;
    Ok(())
}
