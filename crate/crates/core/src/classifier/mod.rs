//! Classifier abstraction: softmax outputs, per-layer features and optional
//! input gradients, backed either by an in-process linear model or by an
//! external model served over a line-delimited JSON protocol.

mod linear;
mod sidecar;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::Image;

pub use linear::LinearModel;
pub use sidecar::{Hello, InputShape, SidecarClient, SidecarSpec};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("image shape {actual:?} does not match classifier input {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },
    #[error("layer {layer} out of range ({count} layers)")]
    LayerIndex { layer: usize, count: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("backend does not provide input gradients")]
    GradUnsupported,
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid softmax vector: {0}")]
    NotNormalized(String),
    #[error("sidecar protocol violation: {0}")]
    Protocol(String),
    #[error("sidecar reported error for request {id}: {message}")]
    Remote { id: u64, message: String },
    #[error("sidecar i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ClassifierError> = std::result::Result<T, E>;

/// Probability vector over the label set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SoftmaxVector(Vec<f64>);

impl SoftmaxVector {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    /// Validates an externally produced probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(ClassifierError::NotNormalized("empty vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(ClassifierError::NotNormalized(format!(
                "entry {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(ClassifierError::NotNormalized(format!(
                "entries sum to {sum}"
            )));
        }
        Ok(Self(probs))
    }

    /// Numerically stable softmax of a logit vector.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self(exps.into_iter().map(|e| e / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Predicted label index; the first maximum wins on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Outputs of the exposed layers, in layer order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureStack(pub Vec<Vec<f64>>);

impl FeatureStack {
    pub fn layers(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn layer(&self, index: usize) -> Option<&[f64]> {
        self.0.get(index).map(Vec::as_slice)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.0.iter().map(Vec::len).collect()
    }
}

pub enum Backend {
    Linear(LinearModel),
    Sidecar(SidecarClient),
}

/// A classifier as seen by the detectors.
pub struct ClassifierHandle {
    backend: Backend,
    labels: Vec<String>,
    fingerprint: String,
}

impl ClassifierHandle {
    pub fn linear(model: LinearModel) -> Self {
        let labels = model.labels().to_vec();
        let fingerprint = model.fingerprint();
        Self {
            backend: Backend::Linear(model),
            labels,
            fingerprint,
        }
    }

    pub fn sidecar(client: SidecarClient) -> Self {
        let labels = client.hello().labels.clone();
        let fingerprint = fingerprint_of(&client.hello().canonical_json());
        Self {
            backend: Backend::Sidecar(client),
            labels,
            fingerprint,
        }
    }

    /// Opens a classifier from a command-line style locator: `tcp:HOST:PORT`,
    /// `exec:PROGRAM [ARGS...]`, or a path to a linear-model JSON file.
    pub fn open(locator: &str) -> Result<Self> {
        match SidecarSpec::parse(locator) {
            Some(spec) => Ok(Self::sidecar(SidecarClient::connect(&spec)?)),
            None => Ok(Self::linear(LinearModel::load(Path::new(locator))?)),
        }
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Hash identifying the classifier topology (and, for the linear
    /// backend, its parameters).
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        match &self.backend {
            Backend::Linear(m) => m.input_shape(),
            Backend::Sidecar(c) => c.hello().input.as_tuple(),
        }
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        match &self.backend {
            Backend::Linear(m) => vec![m.input_len(), m.num_classes()],
            Backend::Sidecar(c) => c.hello().layers.clone(),
        }
    }

    pub fn supports_grad(&self) -> bool {
        match &self.backend {
            Backend::Linear(_) => true,
            Backend::Sidecar(c) => c.hello().grad,
        }
    }

    fn check_shape(&self, img: &Image) -> Result<()> {
        let expected = self.input_shape();
        if img.shape() != expected {
            return Err(ClassifierError::ShapeMismatch {
                expected,
                actual: img.shape(),
            });
        }
        Ok(())
    }

    pub fn softmax_of(&self, img: &Image) -> Result<SoftmaxVector> {
        self.check_shape(img)?;
        match &self.backend {
            Backend::Linear(m) => Ok(SoftmaxVector::from_logits(&m.logits(&img.normalized()))),
            Backend::Sidecar(c) => c.softmax(img),
        }
    }

    pub fn features_of(&self, img: &Image) -> Result<FeatureStack> {
        self.check_shape(img)?;
        match &self.backend {
            Backend::Linear(m) => Ok(m.features(&img.normalized())),
            Backend::Sidecar(c) => c.features(img),
        }
    }

    /// Features of a normalized (data / 255) input that need not lie on the
    /// 8-bit grid. The sidecar transport carries raw bytes, so its inputs are
    /// re-quantized first.
    pub fn features_of_normalized(&self, values: &[f64]) -> Result<FeatureStack> {
        let (h, w, c) = self.input_shape();
        if values.len() != h * w * c {
            return Err(ClassifierError::Dimension(format!(
                "normalized input has {} values, expected {}",
                values.len(),
                h * w * c
            )));
        }
        match &self.backend {
            Backend::Linear(m) => Ok(m.features(values)),
            Backend::Sidecar(client) => {
                let img = Image::from_normalized(h, w, c, values)
                    .map_err(|e| ClassifierError::Dimension(e.to_string()))?;
                client.features(&img)
            }
        }
    }

    /// Gradient, with respect to the normalized input, of the squared
    /// Mahalanobis distance between layer `layer`'s output and `mean`.
    pub fn grad_mahalanobis(
        &self,
        img: &Image,
        layer: usize,
        mean: &[f64],
        inv_cov: &DMatrix<f64>,
    ) -> Result<Vec<f64>> {
        self.check_shape(img)?;
        let dims = self.layer_dims();
        let dim = *dims.get(layer).ok_or(ClassifierError::LayerIndex {
            layer,
            count: dims.len(),
        })?;
        if mean.len() != dim || inv_cov.nrows() != dim || inv_cov.ncols() != dim {
            return Err(ClassifierError::Dimension(format!(
                "layer {layer} has dimension {dim}, got mean {} and inverse covariance {}x{}",
                mean.len(),
                inv_cov.nrows(),
                inv_cov.ncols()
            )));
        }
        match &self.backend {
            Backend::Linear(m) => Ok(m.grad_mahalanobis(&img.normalized(), layer, mean, inv_cov)),
            Backend::Sidecar(c) => {
                if !c.hello().grad {
                    return Err(ClassifierError::GradUnsupported);
                }
                c.grad(img, layer, mean, inv_cov)
            }
        }
    }
}

pub(crate) fn fingerprint_of(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
