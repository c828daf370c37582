use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_text, write_text, PipelineError, Result};
use crate::detectors::{EdConfig, MahalanobisStats, SingleImageDetector, VgConfig};

pub const PROFILE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DetectorSettings {
    Vg {
        config: VgConfig,
    },
    /// Statistics live in a separate JSON file, relative to the profile.
    Md {
        stats: String,
        threshold: f64,
    },
    Ed {
        config: EdConfig,
    },
}

impl DetectorSettings {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Vg { .. } => "vg",
            Self::Md { .. } => "md",
            Self::Ed { .. } => "ed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub policy: String,
    pub tpr: f64,
    pub fpr: f64,
    pub auroc: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub version: u32,
    pub detector: DetectorSettings,
    pub classifier_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operating_point: Option<OperatingPoint>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl CalibrationProfile {
    pub fn new(detector: DetectorSettings, classifier_fingerprint: impl Into<String>) -> Self {
        Self {
            version: PROFILE_VERSION,
            detector,
            classifier_fingerprint: classifier_fingerprint.into(),
            operating_point: None,
            provenance: Provenance::default(),
        }
    }

    pub fn check_fingerprint(&self, actual: &str) -> Result<()> {
        if self.classifier_fingerprint != actual {
            return Err(PipelineError::FingerprintMismatch {
                expected: self.classifier_fingerprint.clone(),
                actual: actual.to_string(),
            });
        }
        Ok(())
    }
}

/// A profile together with the detector it describes.
#[derive(Clone, Debug)]
pub struct LoadedProfile {
    pub profile: CalibrationProfile,
    pub detector: SingleImageDetector,
    pub path: PathBuf,
}

pub fn save_profile(profile: &CalibrationProfile, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(profile).expect("profile serializes");
    text.push('\n');
    write_text(path, &text)
}

/// Reads a profile and everything it references. Fingerprints are checked
/// later, against the classifier used for a run.
pub fn load_profile(path: &Path) -> Result<LoadedProfile> {
    let text = read_text(path)?;
    let parse_err = |message: String| PipelineError::Parse {
        path: path.to_path_buf(),
        message,
    };
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
    let version = raw
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| parse_err("missing version".into()))?;
    if version != u64::from(PROFILE_VERSION) {
        return Err(PipelineError::Version {
            found: version as u32,
            expected: PROFILE_VERSION,
        });
    }
    let profile: CalibrationProfile =
        serde_json::from_value(raw).map_err(|e| parse_err(e.to_string()))?;

    let detector = match &profile.detector {
        DetectorSettings::Vg { config } => SingleImageDetector::Vg(*config),
        DetectorSettings::Ed { config } => {
            config.validate()?;
            SingleImageDetector::Ed(config.clone())
        }
        DetectorSettings::Md { stats, threshold } => {
            let stats_path = path.parent().unwrap_or(Path::new("")).join(stats);
            let text = read_text(&stats_path)?;
            let stats: MahalanobisStats =
                serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
                    path: stats_path.clone(),
                    message: e.to_string(),
                })?;
            SingleImageDetector::Md {
                stats,
                threshold: *threshold,
            }
        }
    };
    Ok(LoadedProfile {
        profile,
        detector,
        path: path.to_path_buf(),
    })
}
