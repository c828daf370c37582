//! End-to-end runs over frame sequences, calibration-profile persistence and
//! synthetic sequence generation.

mod manifest;
mod profile;
mod run;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::calibration::CalibrationError;
use crate::classifier::ClassifierError;
use crate::detectors::DetectorError;
use crate::imaging::ImageError;

pub use manifest::{FrameEntry, GroundTruth, SequenceManifest};
pub use profile::{
    load_profile, save_profile, CalibrationProfile, DetectorSettings, LoadedProfile,
    OperatingPoint, Provenance, PROFILE_VERSION,
};
pub use run::{run_sequence, run_sequences, run_verdicts, ReportRow, RunReport};
pub use synth::{
    generate_synthetic, synthesize, PatchSpec, ScaleSchedule, SynthSpec, SyntheticFrame,
    SyntheticPair,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("profile version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("classifier fingerprint {actual} does not match profile fingerprint {expected}")]
    FingerprintMismatch { expected: String, actual: String },
    #[error("manifest has no frames")]
    EmptyManifest,
    #[error("invalid synthetic spec: {0}")]
    Synth(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub(crate) fn read_text(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_text(path: &std::path::Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}
