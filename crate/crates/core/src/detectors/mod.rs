//! Single-image detectors. Every detector orients its score so that higher
//! means more likely adversarial.

mod ed;
mod md;
mod vg;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, ClassifierHandle};
use crate::imaging::{Image, ImageError};

pub use ed::{denoise, ed_detect, EdConfig, EntropyBand};
pub use md::{md_fit, md_score, md_score_features, LayerStats, MahalanobisStats, MdOptions};
pub use vg::{kl_divergence, vg_detect, vg_score, vg_score_from, Combiner, VgConfig, PROB_FLOOR};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("softmax length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("class {0:?} has fewer than two samples")]
    MissingClass(String),
    #[error("label index {0} out of range")]
    UnknownLabel(usize),
    #[error("empty labeled set")]
    EmptySet,
    #[error("covariance of layer {0} is singular after ridge regularization")]
    SingularCovariance(usize),
    #[error("statistics do not match classifier topology: {0}")]
    Topology(String),
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

pub type Result<T, E = DetectorError> = std::result::Result<T, E>;

/// Binary single-image decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Verdict {
    Clean,
    Adversarial,
}

impl Verdict {
    pub fn from_flag(adversarial: bool) -> Self {
        if adversarial {
            Self::Adversarial
        } else {
            Self::Clean
        }
    }

    pub fn is_adversarial(self) -> bool {
        self == Self::Adversarial
    }

    pub fn as_u8(self) -> u8 {
        u8::from(self)
    }
}

impl From<Verdict> for u8 {
    fn from(v: Verdict) -> u8 {
        match v {
            Verdict::Clean => 0,
            Verdict::Adversarial => 1,
        }
    }
}

impl TryFrom<u8> for Verdict {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Self::Clean),
            1 => Ok(Self::Adversarial),
            other => Err(format!("verdict must be 0 or 1, got {other}")),
        }
    }
}

/// Output of one single-image detection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub score: f64,
    pub verdict: Verdict,
}

/// A configured single-image detector.
#[derive(Clone, Debug)]
pub enum SingleImageDetector {
    Vg(VgConfig),
    Md {
        stats: MahalanobisStats,
        threshold: f64,
    },
    /// ED has no continuous score; its score is the verdict as 0 or 1.
    Ed(EdConfig),
}

impl SingleImageDetector {
    pub fn detect(&self, clf: &ClassifierHandle, img: &Image) -> Result<Detection> {
        match self {
            Self::Vg(cfg) => {
                let score = vg_score(clf, img, cfg)?;
                Ok(Detection {
                    score,
                    verdict: vg_detect(score, cfg.threshold),
                })
            }
            Self::Md { stats, threshold } => {
                let score = md_score(clf, stats, img)?;
                Ok(Detection {
                    score,
                    verdict: Verdict::from_flag(score > *threshold),
                })
            }
            Self::Ed(cfg) => {
                let (verdict, _) = ed_detect(clf, img, cfg)?;
                Ok(Detection {
                    score: f64::from(verdict.as_u8()),
                    verdict,
                })
            }
        }
    }
}
