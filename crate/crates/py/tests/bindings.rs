use num_complex::Complex64;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<F: FnOnce(&Bound<'_, PyModule>) -> PyResult<()>>(f: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = pyo3::wrap_pymodule!(nls_py::nls_py)(py);
        f(m.bind(py).cast::<PyModule>().unwrap()).unwrap();
    });
}

#[test]
fn spectrum_and_bound_state_through_python() {
    with_module(|m| {
        let (ev, exact): (f64, f64) = m.getattr("spectrum")?.call1((1.0, 40.0, 8001))?.extract()?;
        assert!((ev - exact).abs() < 5e-3);

        let kw = PyDict::new(m.py());
        kw.set_item("half_width", 30.0)?;
        kw.set_item("nodes", 601)?;
        let fam = m.getattr("BoundStateFamily")?.call((1.0, -1.0), Some(&kw))?;
        let z = Complex64::new(0.1, 0.02);
        let res: f64 = fam.call_method1("standing_wave_residual", (z,))?.extract()?;
        assert!(res < 1e-9);
        let (q, _e): (Vec<Complex64>, f64) = fam.call_method1("bound_state", (z,))?.extract()?;
        let (back, rem): (Complex64, Vec<Complex64>) = fam.call_method1("decompose", (q, "hc"))?.extract()?;
        assert!((back - z).norm() < 1e-10);
        assert!(rem.iter().all(|v| v.norm() < 1e-9));
        Ok(())
    });
}

#[test]
fn errors_become_python_exceptions() {
    with_module(|m| {
        let e = m.getattr("BoundStateFamily")?.call1((1.0, -1.0, 1.0, 30.0, 600)).unwrap_err();
        assert!(e.is_instance(m.py(), &m.getattr("NlsError")?));
        let e = m.getattr("run_experiment")?.call1(("nope", "{}")).unwrap_err();
        assert!(e.is_instance_of::<pyo3::exceptions::PyValueError>(m.py()));
        let e = m.getattr("run_experiment")?.call1(("residuals", r#"{"bogus": 1}"#)).unwrap_err();
        assert!(e.to_string().contains("bogus"));
        Ok(())
    });
}
