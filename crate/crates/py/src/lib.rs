//! Python bindings for the gesture recognition toolkit.
//!
//! Exposes the dense tensor, the deterministic generator, the bidirectional
//! IndRNN sequence model with SGD training, the synthetic sequence
//! generator, and the evaluation metrics.
//!
//! Build: `cargo build -p gestrec-py --release`, then rename/copy
//! `libgestrec_py.so` to `gestrec_py.so` somewhere on `sys.path`
//! (`python/smoke_test.py` shows the full flow).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gestrec_core::data::{generate_synthetic_sequences, SequenceSample, SyntheticTaskSpec};
use gestrec_core::indrnn::{model_forward, predict_labels, BmlIndRnnModel, ModelConfig};
use gestrec_core::io::Checkpoint;
use gestrec_core::metrics::EvaluationReport;
use gestrec_core::rng::Rng;
use gestrec_core::tensor::{self, Activation, Tensor};
use gestrec_core::train::{train, TrainConfig};

fn to_py_err(e: gestrec_core::Error) -> PyErr {
    match e {
        gestrec_core::Error::Io { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Dense f64 tensor (row-major).
#[pyclass(name = "Tensor", from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: Tensor::new(shape, data).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        PyTensor {
            inner: Tensor::zeros(shape),
        }
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn matmul(&self, other: &PyTensor) -> PyResult<PyTensor> {
        Ok(PyTensor {
            inner: tensor::matmul(&self.inner, &other.inner).map_err(to_py_err)?,
        })
    }

    fn hadamard(&self, other: &PyTensor) -> PyResult<PyTensor> {
        Ok(PyTensor {
            inner: tensor::hadamard(&self.inner, &other.inner).map_err(to_py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

/// Deterministic seeded generator (xoshiro256++ seeded via SplitMix64).
#[pyclass(name = "Rng")]
struct PyRng {
    inner: Rng,
}

#[pymethods]
impl PyRng {
    #[new]
    fn new(seed: u64) -> Self {
        PyRng {
            inner: Rng::new(seed),
        }
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn next_f64(&mut self) -> f64 {
        self.inner.next_f64()
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.uniform(lo, hi)
    }

    fn gaussian(&mut self, mu: f64, sigma: f64) -> f64 {
        self.inner.gaussian(mu, sigma)
    }
}

fn activation_from(name: &str) -> PyResult<Activation> {
    Activation::from_name(name).map_err(to_py_err)
}

/// Stacked bidirectional IndRNN with a per-frame linear head.
#[pyclass(name = "SequenceModel")]
struct PySequenceModel {
    inner: BmlIndRnnModel,
}

#[pymethods]
impl PySequenceModel {
    #[new]
    #[pyo3(signature = (input_dim, num_classes, layers=None, activation="relu",
                        bidirectional=true, u_max=1.0, seed=0))]
    fn new(
        input_dim: usize,
        num_classes: usize,
        layers: Option<Vec<usize>>,
        activation: &str,
        bidirectional: bool,
        u_max: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = ModelConfig {
            layer_widths: layers.unwrap_or_else(|| vec![64, 64, 64]),
            activation: activation_from(activation)?,
            bidirectional,
            u_max,
            ..ModelConfig::new(input_dim, num_classes)
        };
        Ok(PySequenceModel {
            inner: BmlIndRnnModel::init(&cfg, &mut Rng::new(seed)),
        })
    }

    /// Raw per-frame scores for a `T x D` feature tensor.
    fn logits(&self, features: &PyTensor) -> PyResult<PyTensor> {
        let trace = model_forward(&self.inner, &features.inner).map_err(to_py_err)?;
        Ok(PyTensor {
            inner: trace.logits,
        })
    }

    /// Per-frame argmax labels (ties to the lowest class).
    fn predict(&self, features: &PyTensor) -> PyResult<Vec<usize>> {
        predict_labels(&self.inner, &features.inner).map_err(to_py_err)
    }

    /// SGD over whole-sequence mini-batches; returns per-epoch
    /// `(epoch, mean_loss, frame_accuracy, lr)` rows.
    #[pyo3(signature = (samples, epochs=30, lr0=0.1, decay=0.95, batch_size=10,
                        seed=0, clip_norm=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        samples: Vec<(PyTensor, Vec<usize>)>,
        epochs: usize,
        lr0: f64,
        decay: f64,
        batch_size: usize,
        seed: u64,
        clip_norm: Option<f64>,
    ) -> PyResult<Vec<(usize, f64, f64, f64)>> {
        let dataset: Vec<SequenceSample> = samples
            .into_iter()
            .enumerate()
            .map(|(i, (features, labels))| {
                let frames = (0..labels.len()).collect();
                SequenceSample::new(format!("sample{i:03}"), features.inner, labels, frames)
                    .map_err(to_py_err)
            })
            .collect::<PyResult<_>>()?;
        let cfg = TrainConfig {
            lr0,
            decay,
            batch_size,
            epochs,
            seed,
            clip_norm,
            ..TrainConfig::default()
        };
        let log = train(&mut self.inner, &dataset, &cfg).map_err(to_py_err)?;
        Ok(log
            .epochs
            .iter()
            .map(|e| (e.epoch, e.mean_loss, e.frame_accuracy, e.lr))
            .collect())
    }

    fn summary(&self) -> String {
        self.inner.summary()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.to_checkpoint().save(path).map_err(to_py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = Checkpoint::load(path).map_err(to_py_err)?;
        Ok(PySequenceModel {
            inner: BmlIndRnnModel::from_checkpoint(&ck).map_err(to_py_err)?,
        })
    }
}

/// Semi-Markov synthetic sequences: one-hot anchors plus Gaussian noise,
/// optional future-dependency labels. Returns `(features, labels)` pairs.
#[pyfunction]
#[pyo3(signature = (trials, num_classes=10, feature_dim=16, frames=120,
                    duration_mean=5.0, noise=0.1, offset=0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn generate_sequences(
    trials: usize,
    num_classes: usize,
    feature_dim: usize,
    frames: usize,
    duration_mean: f64,
    noise: f64,
    offset: usize,
    seed: u64,
) -> PyResult<Vec<(PyTensor, Vec<usize>)>> {
    let mut spec = SyntheticTaskSpec::with_classes(num_classes);
    spec.feature_dim = feature_dim;
    spec.frames_per_trial = frames;
    spec.duration_mean = vec![duration_mean; num_classes];
    spec.emission_noise_sigma = noise;
    spec.future_dependency_offset = offset;
    let samples =
        generate_synthetic_sequences(&spec, trials, &mut Rng::new(seed)).map_err(to_py_err)?;
    Ok(samples
        .into_iter()
        .map(|s| (PyTensor { inner: s.features }, s.labels))
        .collect())
}

/// Confusion-matrix statistics for a prediction run: micro/macro averages,
/// macro F1, per-class precision/recall/F1, and undefined-class flags.
#[pyfunction]
fn evaluate(
    py: Python<'_>,
    y_true: Vec<usize>,
    y_pred: Vec<usize>,
    num_classes: usize,
) -> PyResult<Py<PyDict>> {
    let report =
        EvaluationReport::from_labels(&y_true, &y_pred, num_classes).map_err(to_py_err)?;
    let dict = PyDict::new(py);
    dict.set_item("micro", report.micro)?;
    dict.set_item("macro", report.macro_)?;
    dict.set_item("macro_std", report.macro_std)?;
    dict.set_item("macro_precision", report.macro_precision)?;
    dict.set_item("macro_precision_std", report.macro_precision_std)?;
    dict.set_item("macro_recall", report.macro_recall)?;
    dict.set_item("macro_f1", report.macro_f1)?;
    dict.set_item(
        "precision",
        report
            .per_class
            .iter()
            .map(|s| s.precision)
            .collect::<Vec<_>>(),
    )?;
    dict.set_item(
        "recall",
        report
            .per_class
            .iter()
            .map(|s| s.recall)
            .collect::<Vec<_>>(),
    )?;
    dict.set_item(
        "f1",
        report.per_class.iter().map(|s| s.f1).collect::<Vec<_>>(),
    )?;
    dict.set_item("undefined", report.undefined_flags)?;
    Ok(dict.into())
}

#[pymodule]
fn gestrec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyRng>()?;
    m.add_class::<PySequenceModel>()?;
    m.add_function(wrap_pyfunction!(generate_sequences, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
