use rayon::prelude::*;
use serde_json::json;

use super::{LoadedProfile, PipelineError, Result, SequenceManifest};
use crate::calibration::accuracy;
use crate::classifier::ClassifierHandle;
use crate::detectors::{Detection, SingleImageDetector, Verdict};
use crate::imaging::load_ppm;
use crate::timeseries::{Capacity, StreamVerdict, WindowState};

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub frame: usize,
    pub present: bool,
    /// Single-image output; `None` on absent frames, which are not scored.
    pub detection: Option<Detection>,
    pub stream: StreamVerdict,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
    /// Stream accuracy over present frames, when ground truth is known.
    pub accuracy: Option<f64>,
}

impl RunReport {
    pub fn stream_verdicts(&self) -> Vec<StreamVerdict> {
        self.rows.iter().map(|r| r.stream).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,present,score,verdict,s,stream_verdict\n");
        for r in &self.rows {
            let (score, verdict) = match r.detection {
                Some(d) => (d.score.to_string(), d.verdict.as_u8().to_string()),
                None => (String::new(), String::new()),
            };
            let s = r.stream.s().map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.frame,
                r.present,
                score,
                verdict,
                s,
                r.stream.label()
            ));
        }
        if let Some(acc) = self.accuracy {
            out.push_str(&format!("# acc={acc}\n"));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|r| {
                json!({
                    "frame": r.frame,
                    "present": r.present,
                    "score": r.detection.map(|d| d.score),
                    "verdict": r.detection.map(|d| d.verdict.as_u8()),
                    "s": r.stream.s(),
                    "stream_verdict": r.stream.label(),
                })
            })
            .collect();
        json!({ "rows": rows, "acc": self.accuracy })
    }
}

/// Feeds precomputed single-image detections (`None` = object absent)
/// through the majority-vote window.
pub fn run_verdicts(
    detections: &[Option<Detection>],
    capacity: Capacity,
    truth: Option<Verdict>,
) -> RunReport {
    let mut window = WindowState::new(capacity);
    let rows: Vec<ReportRow> = detections
        .iter()
        .enumerate()
        .map(|(frame, d)| ReportRow {
            frame,
            present: d.is_some(),
            detection: *d,
            stream: window
                .step(d.map(|d| d.verdict), None)
                .expect("unit weights are valid"),
        })
        .collect();
    let streams: Vec<StreamVerdict> = rows.iter().map(|r| r.stream).collect();
    let accuracy = truth.and_then(|t| accuracy(&streams, t).ok());
    RunReport { rows, accuracy }
}

fn check_fingerprints(loaded: &LoadedProfile, clf: &ClassifierHandle) -> Result<()> {
    loaded.profile.check_fingerprint(clf.fingerprint())?;
    if let SingleImageDetector::Md { stats, .. } = &loaded.detector {
        if stats.classifier_fingerprint != clf.fingerprint() {
            return Err(PipelineError::FingerprintMismatch {
                expected: stats.classifier_fingerprint.clone(),
                actual: clf.fingerprint().to_string(),
            });
        }
    }
    Ok(())
}

/// Runs the single-image detector on every present frame, in order, and
/// composes the verdicts with a window of the given capacity.
pub fn run_sequence(
    manifest: &SequenceManifest,
    loaded: &LoadedProfile,
    clf: &ClassifierHandle,
    capacity: Capacity,
) -> Result<RunReport> {
    check_fingerprints(loaded, clf)?;
    if manifest.frames.is_empty() {
        return Err(PipelineError::EmptyManifest);
    }
    let detections = manifest
        .frames
        .iter()
        .enumerate()
        .map(|(i, frame)| {
            if !frame.present {
                return Ok(None);
            }
            let img = load_ppm(manifest.frame_path(i))?;
            Ok(Some(loaded.detector.detect(clf, &img)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(run_verdicts(
        &detections,
        capacity,
        manifest.ground_truth.as_verdict(),
    ))
}

/// Independent sequences run concurrently; results keep the input order.
pub fn run_sequences(
    manifests: &[SequenceManifest],
    loaded: &LoadedProfile,
    clf: &ClassifierHandle,
    capacity: Capacity,
) -> Vec<Result<RunReport>> {
    manifests
        .par_iter()
        .map(|m| run_sequence(m, loaded, clf, capacity))
        .collect()
}
