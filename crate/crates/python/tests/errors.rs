use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

#[test]
fn ragged_rows_raise_value_error() {
    Python::initialize();
    Python::attach(|py| {
        let err = bae_py::matrix(&[vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert!(err.is_instance_of::<PyValueError>(py));
        assert!(bae_py::matrix(&[vec![1.0, 2.0], vec![3.0, 4.0]]).is_ok());
    });
}
