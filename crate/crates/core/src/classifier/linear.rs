use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{fingerprint_of, ClassifierError, FeatureStack, Hello, InputShape, Result};

/// Affine classifier `z = W x + b` over the normalized, flattened input.
///
/// Exposes two layers: the input itself and the logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearModelFile", into = "LinearModelFile")]
pub struct LinearModel {
    labels: Vec<String>,
    shape: (usize, usize, usize),
    // row-major |C| x m
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LinearModelFile {
    labels: Vec<String>,
    h: usize,
    w: usize,
    c: usize,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl TryFrom<LinearModelFile> for LinearModel {
    type Error = ClassifierError;

    fn try_from(f: LinearModelFile) -> Result<Self> {
        LinearModel::new(f.labels, (f.h, f.w, f.c), f.weights, f.bias)
    }
}

impl From<LinearModel> for LinearModelFile {
    fn from(m: LinearModel) -> Self {
        let m_len = m.input_len();
        LinearModelFile {
            h: m.shape.0,
            w: m.shape.1,
            c: m.shape.2,
            weights: m.weights.chunks(m_len).map(<[f64]>::to_vec).collect(),
            bias: m.bias,
            labels: m.labels,
        }
    }
}

impl LinearModel {
    pub fn new(
        labels: Vec<String>,
        shape: (usize, usize, usize),
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        let (h, w, c) = shape;
        let m = h * w * c;
        if m == 0 || (c != 1 && c != 3) {
            return Err(ClassifierError::Model(format!(
                "invalid input shape {h}x{w}x{c}"
            )));
        }
        if labels.is_empty() {
            return Err(ClassifierError::Model("need at least one label".into()));
        }
        if weights.len() != labels.len() || bias.len() != labels.len() {
            return Err(ClassifierError::Model(format!(
                "{} labels but {} weight rows and {} biases",
                labels.len(),
                weights.len(),
                bias.len()
            )));
        }
        if let Some(row) = weights.iter().find(|r| r.len() != m) {
            return Err(ClassifierError::Model(format!(
                "weight row has {} entries, expected {m}",
                row.len()
            )));
        }
        let flat: Vec<f64> = weights.into_iter().flatten().collect();
        if !flat.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(ClassifierError::Model("non-finite parameter".into()));
        }
        Ok(Self {
            labels,
            shape,
            weights: flat,
            bias,
        })
    }

    /// All-zero weights and biases: a constant, uniform classifier.
    pub fn zeros(labels: Vec<String>, shape: (usize, usize, usize)) -> Self {
        let m = shape.0 * shape.1 * shape.2;
        let k = labels.len();
        Self::new(labels, shape, vec![vec![0.0; m]; k], vec![0.0; k]).expect("valid zero model")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            ClassifierError::Model(format!("cannot read model {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| ClassifierError::Model(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string(self).expect("linear model serializes");
        fs::write(path, text)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn input_len(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        let m = self.input_len();
        &self.weights[class * m..(class + 1) * m]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.num_classes())
            .map(|k| {
                self.weight_row(k)
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
                    + self.bias[k]
            })
            .collect()
    }

    pub fn features(&self, x: &[f64]) -> FeatureStack {
        FeatureStack(vec![x.to_vec(), self.logits(x)])
    }

    /// Analytic gradient of `(f_l(x) - mean)^T inv_cov (f_l(x) - mean)`.
    pub(super) fn grad_mahalanobis(
        &self,
        x: &[f64],
        layer: usize,
        mean: &[f64],
        inv_cov: &DMatrix<f64>,
    ) -> Vec<f64> {
        let feature = if layer == 0 {
            x.to_vec()
        } else {
            self.logits(x)
        };
        let diff = DVector::from_iterator(mean.len(), feature.iter().zip(mean).map(|(f, m)| f - m));
        let g = 2.0 * inv_cov * diff;
        if layer == 0 {
            return g.iter().copied().collect();
        }
        // chain rule through z = W x + b: W^T g
        let m = self.input_len();
        let mut out = vec![0.0; m];
        for (k, gk) in g.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.weight_row(k)) {
                *o += w * gk;
            }
        }
        out
    }

    pub(super) fn fingerprint(&self) -> String {
        let hello = Hello {
            kind: "hello".into(),
            labels: self.labels.clone(),
            input: InputShape {
                h: self.shape.0,
                w: self.shape.1,
                c: self.shape.2,
            },
            layers: vec![self.input_len(), self.num_classes()],
            grad: true,
        };
        let mut bytes = hello.canonical_json();
        bytes.extend(serde_json::to_vec(self).expect("linear model serializes"));
        fingerprint_of(&bytes)
    }
}
