//! Python bindings for the gazeadapt toolkit.

use pyo3::prelude::*;

/// Placeholder module definition; the full API lands with the core crate.
#[pymodule]
fn gazeadapt_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
