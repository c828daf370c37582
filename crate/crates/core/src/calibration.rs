//! ROC construction, threshold selection, and stream accuracy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::Verdict;
use crate::timeseries::StreamVerdict;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("no {0} scores")]
    EmptyClass(&'static str),
    #[error("score is NaN")]
    NanScore,
    #[error("invalid threshold policy {0:?}")]
    Policy(String),
    #[error("every frame is absent")]
    AllAbsent,
}

pub type Result<T, E = CalibrationError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    /// Frames are flagged when their score is strictly above this value.
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// Sorted by threshold, descending, from `+inf` to `-inf`.
    pub points: Vec<RocPoint>,
    pub auroc: f64,
    pub n_clean: usize,
    pub n_adversarial: usize,
}

fn sorted(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CalibrationError::NanScore);
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// `scores` must be ascending; counts entries strictly above `t`.
fn count_above(scores: &[f64], t: f64) -> usize {
    scores.len() - scores.partition_point(|&s| s <= t)
}

/// Sweeps every distinct score (plus infinite sentinels) as a threshold.
/// Scores are oriented so that higher means more adversarial.
pub fn roc_curve(clean: &[f64], adversarial: &[f64]) -> Result<RocCurve> {
    if clean.is_empty() {
        return Err(CalibrationError::EmptyClass("clean"));
    }
    if adversarial.is_empty() {
        return Err(CalibrationError::EmptyClass("adversarial"));
    }
    let clean = sorted(clean)?;
    let adv = sorted(adversarial)?;

    let mut thresholds: Vec<f64> = clean.iter().chain(&adv).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut sweep = Vec::with_capacity(thresholds.len() + 2);
    sweep.push(f64::INFINITY);
    sweep.extend(thresholds.into_iter().filter(|t| t.is_finite()));
    sweep.push(f64::NEG_INFINITY);

    let (nc, na) = (clean.len(), adv.len());
    let points: Vec<RocPoint> = sweep
        .into_iter()
        .map(|t| {
            let (tp, fp) = if t == f64::NEG_INFINITY {
                (na, nc)
            } else {
                (count_above(&adv, t), count_above(&clean, t))
            };
            RocPoint {
                threshold: t,
                tpr: tp as f64 / na as f64,
                fpr: fp as f64 / nc as f64,
                true_positives: tp,
                false_positives: fp,
            }
        })
        .collect();

    // trapezoids in integer units, normalized once
    let area2: u128 = points
        .windows(2)
        .map(|w| {
            let dx = (w[1].false_positives - w[0].false_positives) as u128;
            dx * (w[0].true_positives + w[1].true_positives) as u128
        })
        .sum();
    let auroc = area2 as f64 / (2.0 * nc as f64 * na as f64);

    Ok(RocCurve {
        points,
        auroc,
        n_clean: nc,
        n_adversarial: na,
    })
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,tpr,fpr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.tpr, p.fpr));
        }
        out.push_str(&format!("# auroc={}\n", self.auroc));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Highest TPR among points with FPR at most the cap.
    MaxTprAtFpr(f64),
    /// Lowest FPR among points with TPR at least the floor.
    MinFprAtTpr(f64),
    /// Largest TPR - FPR.
    Youden,
}

impl FromStr for ThresholdPolicy {
    type Err = CalibrationError;

    /// Accepts `youden`, `fpr<=X` and `tpr>=X`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || CalibrationError::Policy(s.to_string());
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let compact = compact.to_ascii_lowercase();
        let parse = |v: &str| {
            v.parse::<f64>()
                .ok()
                .filter(|x| (0.0..=1.0).contains(x))
                .ok_or_else(bad)
        };
        if compact == "youden" {
            Ok(Self::Youden)
        } else if let Some(v) = compact.strip_prefix("fpr<=") {
            Ok(Self::MaxTprAtFpr(parse(v)?))
        } else if let Some(v) = compact.strip_prefix("tpr>=") {
            Ok(Self::MinFprAtTpr(parse(v)?))
        } else {
            Err(bad())
        }
    }
}

impl fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MaxTprAtFpr(v) => write!(f, "fpr<={v}"),
            Self::MinFprAtTpr(v) => write!(f, "tpr>={v}"),
            Self::Youden => f.write_str("youden"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub point: RocPoint,
    /// False when the optimum is one of the infinite sentinels, i.e. no
    /// finite threshold does better than flagging nothing or everything.
    pub feasible: bool,
}

/// Picks the policy optimum; ties go to lower FPR, then higher threshold.
pub fn select_threshold(curve: &RocCurve, policy: ThresholdPolicy) -> Selection {
    let qualifies = |p: &RocPoint| match policy {
        ThresholdPolicy::MaxTprAtFpr(cap) => p.fpr <= cap,
        ThresholdPolicy::MinFprAtTpr(floor) => p.tpr >= floor,
        ThresholdPolicy::Youden => true,
    };
    // larger key is better; points are in descending threshold order, so
    // keeping the first of equal keys prefers the higher threshold
    let key = |p: &RocPoint| -> (i128, i128) {
        let (tp, fp) = (p.true_positives as i128, p.false_positives as i128);
        let (na, nc) = (curve.n_adversarial as i128, curve.n_clean as i128);
        match policy {
            ThresholdPolicy::MaxTprAtFpr(_) => (tp, -fp),
            ThresholdPolicy::MinFprAtTpr(_) => (-fp, 0),
            // tpr - fpr scaled by na * nc stays exact
            ThresholdPolicy::Youden => (tp * nc - fp * na, -fp),
        }
    };
    let mut best: Option<&RocPoint> = None;
    for p in curve.points.iter().filter(|p| qualifies(p)) {
        if best.is_none_or(|b| key(p) > key(b)) {
            best = Some(p);
        }
    }
    let point = *best.unwrap_or(&curve.points[0]);
    Selection {
        point,
        feasible: point.threshold.is_finite(),
    }
}

/// Fraction of present frames whose stream verdict matches the truth.
pub fn accuracy(verdicts: &[StreamVerdict], truth: Verdict) -> Result<f64> {
    let present: Vec<Verdict> = verdicts.iter().filter_map(StreamVerdict::verdict).collect();
    if present.is_empty() {
        return Err(CalibrationError::AllAbsent);
    }
    let correct = present.iter().filter(|&&v| v == truth).count();
    Ok(correct as f64 / present.len() as f64)
}
