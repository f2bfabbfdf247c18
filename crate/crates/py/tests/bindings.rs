use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

fn with_module<T>(f: impl FnOnce(Python<'_>, &Bound<'_, PyModule>) -> PyResult<T>) -> T {
    Python::initialize();
    Python::attach(|py| {
        let m = wrap_pymodule!(collapse_lab_py::collapse_lab_py)(py);
        f(py, m.bind(py).cast::<PyModule>().unwrap()).unwrap()
    })
}

#[test]
fn worked_matrices() {
    with_module(|_py, m| {
        let e1 = m.getattr("Matrix")?.call1((vec![
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ],))?;
        let e2 = m.getattr("Matrix")?.call1((vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ],))?;
        let ia: f64 = m
            .getattr("information_abundance")?
            .call1((&e1,))?
            .extract()?;
        assert!((ia - 2.0).abs() < 1e-12);
        let div: f64 = m.getattr("diversity")?.call1((&e1, &e2))?.extract()?;
        assert!((div - 0.5).abs() < 1e-12);
        let shape: (usize, usize) = e1.getattr("shape")?.extract()?;
        assert_eq!(shape, (4, 2));
        Ok(())
    })
}

#[test]
fn errors_map_to_python_exceptions() {
    with_module(|py, m| {
        let err = m
            .getattr("auc")?
            .call1((vec![0.1, 0.2], vec![1.0, 1.0]))
            .unwrap_err();
        assert!(
            err.is_instance_of::<pyo3::exceptions::PyValueError>(py),
            "{err}"
        );
        let err = m
            .getattr("Matrix")?
            .call1((vec![vec![1.0], vec![1.0, 2.0]],))
            .unwrap_err();
        assert!(
            err.is_instance_of::<pyo3::exceptions::PyValueError>(py),
            "{err}"
        );
        Ok(())
    })
}

#[test]
fn toy_run_and_dataset() {
    with_module(|_py, m| {
        let traj: Vec<(u64, f64)> = m
            .getattr("run_toy")?
            .call1((3usize, 20usize, 0u64))?
            .extract()?;
        assert_eq!(traj.first().unwrap().0, 0);
        assert_eq!(traj.last().unwrap().0, 20);
        let ds = m.getattr("gen_toy")?.call1((3usize, 1u64))?;
        let ds = ds.cast::<PyDict>()?;
        let cards: Vec<usize> = ds.get_item("cardinalities")?.unwrap().extract()?;
        assert_eq!(cards, vec![100, 100, 3]);
        Ok(())
    })
}
