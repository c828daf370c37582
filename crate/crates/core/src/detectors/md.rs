//! Mahalanobis confidence score over per-layer class-conditional Gaussians
//! with a shared covariance.

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{DetectorError, Result};
use crate::classifier::{ClassifierError, ClassifierHandle, FeatureStack};
use crate::imaging::Image;

pub const DEFAULT_EPS: f64 = 0.001;
pub const DEFAULT_RIDGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct MdOptions {
    /// Classifier layers to model; `None` uses every exposed layer.
    pub layers: Option<Vec<usize>>,
    /// Per-layer weights (normalized to sum to one); `None` is uniform.
    pub alpha: Option<Vec<f64>>,
    /// Input perturbation magnitude in normalized units.
    pub eps: f64,
    /// Ridge coefficient relative to the mean covariance diagonal.
    pub ridge: f64,
}

impl Default for MdOptions {
    fn default() -> Self {
        Self {
            layers: None,
            alpha: None,
            eps: DEFAULT_EPS,
            ridge: DEFAULT_RIDGE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    /// Index of the classifier layer these statistics describe.
    pub index: usize,
    pub dim: usize,
    pub means: IndexMap<String, Vec<f64>>,
    #[serde(with = "matrix_rows")]
    pub cov: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub inv_cov: DMatrix<f64>,
    /// Absolute ridge added to the diagonal before inversion.
    pub ridge: f64,
}

impl LayerStats {
    fn distance(&self, feature: &DVector<f64>, mean: &[f64]) -> f64 {
        let diff = feature - DVector::from_column_slice(mean);
        (&self.inv_cov * &diff).dot(&diff)
    }

    /// Squared Mahalanobis distance to every class mean, in label order.
    pub fn distances(&self, feature: &[f64]) -> Vec<f64> {
        let f = DVector::from_column_slice(feature);
        self.means.values().map(|m| self.distance(&f, m)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MahalanobisStats {
    pub layers: Vec<LayerStats>,
    pub alpha: Vec<f64>,
    pub eps: f64,
    /// Relative ridge coefficient used at fit time.
    pub ridge: f64,
    pub counts: IndexMap<String, usize>,
    pub classifier_fingerprint: String,
}

mod matrix_rows {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("matrix must be square"));
        }
        Ok(DMatrix::from_row_iterator(n, n, rows.into_iter().flatten()))
    }
}

impl MahalanobisStats {
    /// Fits class means and a shared covariance per layer.
    ///
    /// `samples` pairs each feature stack with a label index into `labels`;
    /// every label must occur at least twice.
    pub fn fit_features(
        labels: &[String],
        samples: &[(FeatureStack, usize)],
        opts: &MdOptions,
        fingerprint: &str,
    ) -> Result<Self> {
        let first = samples.first().ok_or(DetectorError::EmptySet)?;
        let available = first.0.layers().len();
        let layer_ids = opts
            .layers
            .clone()
            .unwrap_or_else(|| (0..available).collect());
        if layer_ids.is_empty() {
            return Err(DetectorError::Config("no layers selected".into()));
        }
        if let Some(&bad) = layer_ids.iter().find(|&&l| l >= available) {
            return Err(DetectorError::Topology(format!(
                "layer {bad} requested, classifier exposes {available}"
            )));
        }

        let mut counts = vec![0usize; labels.len()];
        for (_, y) in samples {
            *counts.get_mut(*y).ok_or(DetectorError::UnknownLabel(*y))? += 1;
        }
        if let Some((i, _)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
            return Err(DetectorError::MissingClass(labels[i].clone()));
        }

        let alpha = match &opts.alpha {
            None => vec![1.0 / layer_ids.len() as f64; layer_ids.len()],
            Some(a) => {
                if a.len() != layer_ids.len() || a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(DetectorError::Config(format!(
                        "alpha must hold {} non-negative weights",
                        layer_ids.len()
                    )));
                }
                let total: f64 = a.iter().sum();
                if total <= 0.0 {
                    return Err(DetectorError::Config("alpha weights sum to zero".into()));
                }
                a.iter().map(|v| v / total).collect()
            }
        };

        let n = samples.len() as f64;
        let mut layers = Vec::with_capacity(layer_ids.len());
        for &li in &layer_ids {
            let dim = first.0.layers()[li].len();
            let mut sums = vec![DVector::<f64>::zeros(dim); labels.len()];
            for (stack, y) in samples {
                let f = stack.layer(li).filter(|f| f.len() == dim).ok_or_else(|| {
                    DetectorError::Topology(format!("inconsistent dimension in layer {li}"))
                })?;
                sums[*y] += DVector::from_column_slice(f);
            }
            let means: Vec<DVector<f64>> = sums
                .into_iter()
                .zip(&counts)
                .map(|(s, &c)| s / c as f64)
                .collect();

            // shared scatter over all classes, divided by the total count
            let mut cov = DMatrix::<f64>::zeros(dim, dim);
            for (stack, y) in samples {
                let d = DVector::from_column_slice(&stack.layers()[li]) - &means[*y];
                cov.ger(1.0, &d, &d, 1.0);
            }
            cov /= n;

            let trace = cov.trace();
            let ridge = if trace > 0.0 {
                opts.ridge * trace / dim as f64
            } else {
                opts.ridge
            };
            let regularized = &cov + DMatrix::identity(dim, dim) * ridge;
            let inv_cov = regularized
                .cholesky()
                .map(|c| c.inverse())
                .ok_or(DetectorError::SingularCovariance(li))?;
            if !inv_cov.iter().all(|v| v.is_finite()) {
                return Err(DetectorError::SingularCovariance(li));
            }

            layers.push(LayerStats {
                index: li,
                dim,
                means: labels
                    .iter()
                    .cloned()
                    .zip(means.iter().map(|m| m.iter().copied().collect()))
                    .collect(),
                cov,
                inv_cov,
                ridge,
            });
        }

        Ok(Self {
            layers,
            alpha,
            eps: opts.eps,
            ridge: opts.ridge,
            counts: labels.iter().cloned().zip(counts).collect(),
            classifier_fingerprint: fingerprint.to_string(),
        })
    }

    fn check_topology(&self, clf: &ClassifierHandle) -> Result<()> {
        let dims = clf.layer_dims();
        for layer in &self.layers {
            match dims.get(layer.index) {
                Some(&d) if d == layer.dim => {}
                other => {
                    return Err(DetectorError::Topology(format!(
                        "layer {} fitted with dimension {}, classifier has {:?}",
                        layer.index, layer.dim, other
                    )))
                }
            }
            if !layer.means.keys().eq(clf.labels().iter()) {
                return Err(DetectorError::Topology("label set differs".into()));
            }
        }
        Ok(())
    }
}

/// Extracts features for each image and fits the statistics.
pub fn md_fit(
    clf: &ClassifierHandle,
    labeled: &[(Image, usize)],
    opts: &MdOptions,
) -> Result<MahalanobisStats> {
    let samples = labeled
        .iter()
        .map(|(img, y)| Ok((clf.features_of(img)?, *y)))
        .collect::<Result<Vec<_>>>()?;
    MahalanobisStats::fit_features(clf.labels(), &samples, opts, clf.fingerprint())
}

fn layer_confidence(layer: &LayerStats, feature: &[f64]) -> f64 {
    // max over classes of the negated distance
    layer
        .distances(feature)
        .into_iter()
        .map(|d| -d)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Score without input perturbation, as a function of the features alone.
pub fn md_score_features(stats: &MahalanobisStats, features: &FeatureStack) -> Result<f64> {
    let mut confidence = 0.0;
    for (layer, alpha) in stats.layers.iter().zip(&stats.alpha) {
        let f = features
            .layer(layer.index)
            .filter(|f| f.len() == layer.dim)
            .ok_or_else(|| DetectorError::Topology(format!("missing layer {}", layer.index)))?;
        confidence += alpha * layer_confidence(layer, f);
    }
    Ok(-confidence)
}

/// Adversarial score `-M`, where `M` is the alpha-weighted sum of per-layer
/// confidences evaluated at the perturbed input.
pub fn md_score(clf: &ClassifierHandle, stats: &MahalanobisStats, img: &Image) -> Result<f64> {
    stats.check_topology(clf)?;
    let features = clf.features_of(img)?;
    if stats.eps == 0.0 || !clf.supports_grad() {
        return md_score_features(stats, &features);
    }
    let x = img.normalized();
    let mut confidence = 0.0;
    for (layer, alpha) in stats.layers.iter().zip(&stats.alpha) {
        let f = &features.layers()[layer.index];
        let distances = layer.distances(f);
        let closest =
            distances.iter().enumerate().fold(
                0,
                |best, (i, d)| if *d < distances[best] { i } else { best },
            );
        let mean = &layer.means[closest];
        let perturbed_feature = match clf.grad_mahalanobis(img, layer.index, mean, &layer.inv_cov) {
            Ok(grad) => {
                let x_hat: Vec<f64> = x
                    .iter()
                    .zip(&grad)
                    .map(|(v, g)| v - stats.eps * g)
                    .collect();
                clf.features_of_normalized(&x_hat)?
                    .0
                    .swap_remove(layer.index)
            }
            Err(ClassifierError::GradUnsupported) => f.clone(),
            Err(e) => return Err(e.into()),
        };
        confidence += alpha * layer_confidence(layer, &perturbed_feature);
    }
    Ok(-confidence)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn one_d(values: &[(f64, usize)]) -> Vec<(FeatureStack, usize)> {
        values
            .iter()
            .map(|&(v, y)| (FeatureStack(vec![vec![v]]), y))
            .collect()
    }

    #[test]
    fn hand_computed_fit() {
        let samples = one_d(&[(0.0, 0), (2.0, 0), (10.0, 1), (12.0, 1)]);
        let stats = MahalanobisStats::fit_features(
            &labels(&["A", "B"]),
            &samples,
            &MdOptions::default(),
            "fp",
        )
        .unwrap();
        let layer = &stats.layers[0];
        assert_eq!(layer.means["A"], vec![1.0]);
        assert_eq!(layer.means["B"], vec![11.0]);
        assert_eq!(layer.cov[(0, 0)], 1.0);
        assert!((layer.ridge - 1e-6).abs() < 1e-18);
        assert_eq!(stats.counts["B"], 2);
        assert_eq!(stats.alpha, vec![1.0]);
    }

    #[test]
    fn zero_scatter_gives_pure_ridge() {
        let samples: Vec<_> = [
            (0usize, [1.0, 2.0]),
            (0, [1.0, 2.0]),
            (1, [5.0, 5.0]),
            (1, [5.0, 5.0]),
        ]
        .iter()
        .map(|(y, f)| (FeatureStack(vec![f.to_vec()]), *y))
        .collect();
        let stats = MahalanobisStats::fit_features(
            &labels(&["a", "b"]),
            &samples,
            &MdOptions::default(),
            "",
        )
        .unwrap();
        let layer = &stats.layers[0];
        let regularized = &layer.cov + DMatrix::identity(2, 2) * layer.ridge;
        assert_eq!(regularized, DMatrix::identity(2, 2) * layer.ridge);
        assert!((layer.inv_cov[(0, 0)] - 1.0 / layer.ridge).abs() < 1e-3);
    }

    #[test]
    fn missing_or_singleton_class() {
        let samples = one_d(&[(0.0, 0), (2.0, 0), (10.0, 1)]);
        let err = MahalanobisStats::fit_features(
            &labels(&["A", "B"]),
            &samples,
            &MdOptions::default(),
            "",
        )
        .unwrap_err();
        assert!(matches!(err, DetectorError::MissingClass(ref c) if c == "B"));
        let err = MahalanobisStats::fit_features(&labels(&["A"]), &[], &MdOptions::default(), "")
            .unwrap_err();
        assert!(matches!(err, DetectorError::EmptySet));
    }

    fn stats_with_means(means: &[f64]) -> MahalanobisStats {
        let names: Vec<String> = (0..means.len()).map(|i| format!("c{i}")).collect();
        MahalanobisStats {
            layers: vec![LayerStats {
                index: 0,
                dim: 1,
                means: names
                    .iter()
                    .cloned()
                    .zip(means.iter().map(|m| vec![*m]))
                    .collect(),
                cov: DMatrix::identity(1, 1),
                inv_cov: DMatrix::identity(1, 1),
                ridge: 0.0,
            }],
            alpha: vec![1.0],
            eps: 0.0,
            ridge: 0.0,
            counts: names.into_iter().map(|n| (n, 2)).collect(),
            classifier_fingerprint: String::new(),
        }
    }

    #[test]
    fn hand_evaluated_scores() {
        let stats = stats_with_means(&[0.0, 10.0]);
        let score = md_score_features(&stats, &FeatureStack(vec![vec![0.5]])).unwrap();
        assert!((score - 0.25).abs() < 1e-15);
        assert_eq!(
            md_score_features(&stats, &FeatureStack(vec![vec![10.0]])).unwrap(),
            0.0
        );
        let near = md_score_features(&stats, &FeatureStack(vec![vec![1.0]])).unwrap();
        let far = md_score_features(&stats, &FeatureStack(vec![vec![3.0]])).unwrap();
        assert!(near < far);
    }

    #[test]
    fn json_round_trip() {
        let samples = one_d(&[(0.0, 0), (2.0, 0), (10.0, 1), (12.0, 1)]);
        let stats = MahalanobisStats::fit_features(
            &labels(&["A", "B"]),
            &samples,
            &MdOptions::default(),
            "fp",
        )
        .unwrap();
        let text = serde_json::to_string(&stats).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["layers", "alpha", "eps", "ridge", "classifier_fingerprint"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        for key in ["dim", "means", "cov", "inv_cov"] {
            assert!(v["layers"][0].get(key).is_some(), "{key}");
        }
        let back: MahalanobisStats = serde_json::from_str(&text).unwrap();
        assert_eq!(back, stats);
    }
}
