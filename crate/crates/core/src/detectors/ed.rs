//! Entropy-adaptive denoising: quantize with an entropy-dependent codebook,
//! optionally smooth, then compare predicted labels.

use serde::{Deserialize, Serialize};

use super::{DetectorError, Result, Verdict};
use crate::classifier::ClassifierHandle;
use crate::imaging::{pixel_entropy, quantize, spatial_smooth, FilterSpec, Image};

/// Images with entropy up to `up_to` bits (unbounded when `None`) are
/// quantized into `intervals` codewords.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyBand {
    pub up_to: Option<f64>,
    pub intervals: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdConfig {
    pub interval_map: Vec<EntropyBand>,
    /// Bits; smoothing applies only when the quantized entropy exceeds it.
    pub smoothing_threshold: f64,
    pub filter: FilterSpec,
}

impl Default for EdConfig {
    fn default() -> Self {
        let band = |up_to, intervals| EntropyBand { up_to, intervals };
        Self {
            interval_map: vec![
                band(Some(1.0), 2),
                band(Some(4.0), 8),
                band(Some(6.0), 32),
                band(None, 128),
            ],
            smoothing_threshold: 4.0,
            filter: FilterSpec::default(),
        }
    }
}

impl EdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DetectorError::Config(msg));
        let Some(last) = self.interval_map.last() else {
            return bad("empty interval map".into());
        };
        if last.up_to.is_some() {
            return bad("last entropy band must be unbounded".into());
        }
        for pair in self.interval_map.windows(2) {
            match (pair[0].up_to, pair[1].up_to) {
                (Some(a), Some(b)) if a < b => {}
                (Some(_), None) => {}
                _ => return bad("entropy bands must have increasing bounds".into()),
            }
            if pair[1].intervals < pair[0].intervals {
                return bad("interval counts must be non-decreasing in entropy".into());
            }
        }
        if let Some(b) = self
            .interval_map
            .iter()
            .find(|b| !(2..=256).contains(&b.intervals))
        {
            return bad(format!("interval count {} outside [2, 256]", b.intervals));
        }
        self.filter.validate()?;
        Ok(())
    }

    pub fn intervals_for(&self, entropy: f64) -> usize {
        self.interval_map
            .iter()
            .find(|b| b.up_to.is_none_or(|u| entropy <= u))
            .map(|b| b.intervals)
            .unwrap_or(256)
    }
}

/// The adaptive denoising transform `T(x)`.
pub fn denoise(img: &Image, cfg: &EdConfig) -> Result<Image> {
    cfg.validate()?;
    let quantized = quantize(img, cfg.intervals_for(pixel_entropy(img)))?;
    if pixel_entropy(&quantized) > cfg.smoothing_threshold {
        Ok(spatial_smooth(&quantized, cfg.filter)?)
    } else {
        Ok(quantized)
    }
}

/// Flags the image when denoising changes the predicted label.
pub fn ed_detect(clf: &ClassifierHandle, img: &Image, cfg: &EdConfig) -> Result<(Verdict, Image)> {
    let denoised = denoise(img, cfg)?;
    let before = clf.softmax_of(img)?.argmax();
    let after = clf.softmax_of(&denoised)?.argmax();
    Ok((Verdict::from_flag(before != after), denoised))
}
