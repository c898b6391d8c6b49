//! Python module `twostream`: a thin layer over the core library for
//! scripting data generation, evaluation and the numerical building blocks.

use std::io::ErrorKind;
use std::path::Path;

use pyo3::exceptions::{PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;

use twostream_core::data::{generate_synthetic, load_dataset, write_dataset, SyntheticConfig};
use twostream_core::fusion::{learn_weights as learn, FusionWeights, StreamScores};
use twostream_core::gradsuite::gradient_suite;
use twostream_core::pipeline::{evaluate as eval, Checkpoint, TrainedModels, TwoStream};
use twostream_core::Error;

fn py_err(e: Error) -> PyErr {
    match &e {
        Error::ManifestNotFound(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::Io(io) if io.kind() == ErrorKind::NotFound => PyFileNotFoundError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Numerically stable softmax.
#[pyfunction]
fn softmax(values: Vec<f64>) -> PyResult<Vec<f64>> {
    twostream_core::tensor::softmax(&values).map_err(py_err)
}

/// Normalized spatial attention; sums to the number of cells.
#[pyfunction]
fn normalize_attention(map: Vec<f64>) -> PyResult<Vec<f64>> {
    twostream_core::spatial::normalize_attention(&map, 0)
        .map(|a| a.values)
        .map_err(py_err)
}

/// Per-category `[w_static, w_motion]` learned from labelled training scores.
#[pyfunction]
#[pyo3(signature = (static_scores, motion_scores, labels, lambda_=0.005, epsilon=0.0))]
fn learn_weights(
    static_scores: Vec<Vec<f64>>,
    motion_scores: Vec<Vec<f64>>,
    labels: Vec<usize>,
    lambda_: f64,
    epsilon: f64,
) -> PyResult<Vec<[f64; 2]>> {
    if static_scores.len() != motion_scores.len() || static_scores.len() != labels.len() {
        return Err(PyValueError::new_err(
            "shape-mismatch: one score row per label in each stream",
        ));
    }
    let scores = static_scores
        .into_iter()
        .zip(motion_scores)
        .zip(labels)
        .enumerate()
        .map(|(i, ((s, m), y))| StreamScores::new(i.to_string(), Some(y), s, m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    learn(&scores, lambda_, epsilon).map(|w| w.weights).map_err(py_err)
}

/// Writes a synthetic dataset; `config` is the JSON form of the generator
/// settings (missing keys take defaults). Returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, config=None))]
fn generate_dataset(out_dir: &str, config: Option<&str>) -> PyResult<String> {
    let cfg: SyntheticConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| py_err(e.into()))?,
        None => SyntheticConfig::default(),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| py_err(e.into()))?;
    let data = generate_synthetic(&cfg).map_err(py_err)?;
    let path = write_dataset(Path::new(out_dir), &data).map_err(py_err)?;
    Ok(path.display().to_string())
}

/// Test-split accuracy and MAP of checkpoints written by the command-line
/// tool, averaging the two streams.
#[pyfunction]
fn evaluate(manifest: &str, checkpoints: &str) -> PyResult<(f64, f64)> {
    let dir = Path::new(checkpoints);
    let data = load_dataset(Path::new(manifest)).map_err(py_err)?;
    let stream = |name: &str| Checkpoint::read(&dir.join(name)).and_then(|c| c.to_stream());
    let streams = TwoStream {
        static_model: stream("static.ckpt").map_err(py_err)?,
        motion_model: stream("motion.ckpt").map_err(py_err)?,
    };
    let weights = FusionWeights::uniform(streams.static_model.classes());
    let models = TrainedModels { streams, collab: None };
    let report = eval(&data.test, &models, &weights).map_err(py_err)?;
    Ok((report.accuracy, report.map_score))
}

/// `(case, max relative error)` for every finite-difference check.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(seed: u64) -> PyResult<Vec<(String, f64)>> {
    let cases = gradient_suite(seed).map_err(py_err)?;
    Ok(cases.into_iter().map(|c| (c.name, c.max_error)).collect())
}

#[pymodule]
fn twostream(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_attention, m)?)?;
    m.add_function(wrap_pyfunction!(learn_weights, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
