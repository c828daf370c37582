use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_text, write_text, PipelineError, Result};
use crate::detectors::Verdict;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruth {
    Clean,
    Adversarial,
    Unknown,
}

impl GroundTruth {
    pub fn as_verdict(self) -> Option<Verdict> {
        match self {
            Self::Clean => Some(Verdict::Clean),
            Self::Adversarial => Some(Verdict::Adversarial),
            Self::Unknown => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub path: String,
    /// Whether the tracked object is visible in this frame.
    pub present: bool,
    /// Class label, used when fitting Mahalanobis statistics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// A time-ordered frame sequence of one tracked object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub object_id: String,
    pub ground_truth: GroundTruth,
    pub frames: Vec<FrameEntry>,
    /// Directory relative frame paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl SequenceManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let mut manifest: Self = serde_json::from_str(&text).map_err(|e| PipelineError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if manifest.frames.is_empty() {
            return Err(PipelineError::EmptyManifest);
        }
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_text(path, &text)
    }

    pub fn frame_path(&self, index: usize) -> PathBuf {
        self.base_dir.join(&self.frames[index].path)
    }
}
