use serde::{Deserialize, Serialize};

use super::{DetectorError, Result, Verdict};
use crate::classifier::{ClassifierHandle, SoftmaxVector};
use crate::imaging::{brightness_transform, BrightnessSpec, Image};

/// Probabilities are clamped to this floor (then renormalized) before KL.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    #[default]
    Min,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VgConfig {
    pub transform: BrightnessSpec,
    #[serde(default)]
    pub combiner: Combiner,
    /// Detection threshold in nats.
    pub threshold: f64,
}

impl Default for VgConfig {
    fn default() -> Self {
        Self {
            transform: BrightnessSpec::default(),
            combiner: Combiner::Min,
            threshold: 0.0,
        }
    }
}

fn floored(p: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = p.iter().map(|&v| v.max(PROB_FLOOR)).collect();
    let total: f64 = clamped.iter().sum();
    clamped.into_iter().map(|v| v / total).collect()
}

/// `D_KL(p || q)` in nats, after flooring both arguments.
pub fn kl_divergence(p: &SoftmaxVector, q: &SoftmaxVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(DetectorError::LengthMismatch(p.len(), q.len()));
    }
    let (p, q) = (floored(p.probs()), floored(q.probs()));
    let d: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
    // rounding can leave tiny negatives for p == q
    Ok(d.max(0.0))
}

/// Combines the two directed divergences between the softmax outputs.
pub fn vg_score_from(p: &SoftmaxVector, q: &SoftmaxVector, combiner: Combiner) -> Result<f64> {
    let forward = kl_divergence(p, q)?;
    let backward = kl_divergence(q, p)?;
    Ok(match combiner {
        Combiner::Min => forward.min(backward),
        Combiner::Max => forward.max(backward),
    })
}

pub fn vg_score(clf: &ClassifierHandle, img: &Image, cfg: &VgConfig) -> Result<f64> {
    let original = clf.softmax_of(img)?;
    let squeezed = brightness_transform(img, cfg.transform)?;
    let transformed = clf.softmax_of(&squeezed)?;
    vg_score_from(&original, &transformed, cfg.combiner)
}

/// Adversarial iff the score strictly exceeds the threshold.
pub fn vg_detect(score: f64, threshold: f64) -> Verdict {
    Verdict::from_flag(score > threshold)
}
