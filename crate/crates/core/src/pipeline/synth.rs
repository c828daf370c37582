use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FrameEntry, GroundTruth, PipelineError, Result, SequenceManifest};
use crate::imaging::{hsv_to_rgb, save_ppm, Hsv, Image};
use crate::theory::splitmix64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    /// Side length in pixels; 0 disables the patch.
    pub size: usize,
    /// Maximum per-frame offset of the patch from the frame center, per axis.
    #[serde(default)]
    pub drift: usize,
    pub seed: u64,
}

/// Linear zoom of the base pattern from `start` to `end` across the sequence,
/// mimicking a camera approaching the object.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    pub start: f64,
    pub end: f64,
}

impl Default for ScaleSchedule {
    fn default() -> Self {
        Self {
            start: 0.4,
            end: 1.0,
        }
    }
}

impl ScaleSchedule {
    pub fn at(&self, frame: usize, frames: usize) -> f64 {
        if frames <= 1 {
            return self.end;
        }
        let t = frame as f64 / (frames - 1) as f64;
        self.start + (self.end - self.start) * t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub base_seed: u64,
    /// Per-channel noise is uniform on `[-noise_amplitude, noise_amplitude]`.
    pub noise_amplitude: u8,
    pub patch: PatchSpec,
    #[serde(default)]
    pub scale: ScaleSchedule,
    /// Probability that the object is marked absent in a frame.
    #[serde(default)]
    pub absent_fraction: f64,
    /// HSV value of the base pattern.
    #[serde(default = "default_pattern_value")]
    pub pattern_value: u8,
}

fn default_pattern_value() -> u8 {
    200
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PipelineError::Synth(m));
        if self.frames == 0 {
            return fail("frame count must be positive".into());
        }
        if self.height == 0 || self.width == 0 {
            return fail(format!(
                "image size {}x{} is empty",
                self.height, self.width
            ));
        }
        if self.patch.size > self.height.min(self.width) {
            return fail(format!(
                "patch size {} does not fit a {}x{} frame",
                self.patch.size, self.height, self.width
            ));
        }
        let ScaleSchedule { start, end } = self.scale;
        if !(start.is_finite() && end.is_finite() && start > 0.0 && end > 0.0) {
            return fail(format!("scale schedule {start}..{end} must be positive"));
        }
        if !(0.0..=1.0).contains(&self.absent_fraction) {
            return fail(format!(
                "absent fraction {} is not a probability",
                self.absent_fraction
            ));
        }
        Ok(())
    }
}

/// One generated frame pair; `patch_origin` is the top-left corner of the
/// patch footprint, `None` when the patch is disabled.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFrame {
    pub clean: Image,
    pub adversarial: Image,
    pub present: bool,
    pub patch_origin: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub clean: SequenceManifest,
    pub adversarial: SequenceManifest,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stream)))
}

const STREAM_PATTERN: u64 = 1;
const STREAM_PATCH: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_DRIFT: u64 = 4;
const STREAM_PRESENCE: u64 = 5;

/// Full-size base pattern: a textured disc on a plain background, all at the
/// same HSV value.
fn base_pattern(spec: &SynthSpec) -> Vec<Hsv> {
    let mut rng = stream_rng(spec.base_seed, STREAM_PATTERN);
    let v = f64::from(spec.pattern_value);
    let background = Hsv {
        h: rng.random_range(0.0..360.0),
        s: rng.random_range(0.1..0.4),
        v,
    };
    let sign_hue = rng.random_range(0.0..360.0);
    let tile = 4;
    let tiles_w = spec.width.div_ceil(tile);
    let tiles: Vec<f64> = (0..spec.height.div_ceil(tile) * tiles_w)
        .map(|_| rng.random_range(0.5..1.0))
        .collect();
    let (cy, cx) = (spec.height as f64 / 2.0, spec.width as f64 / 2.0);
    let radius = 0.45 * spec.height.min(spec.width) as f64;
    let mut out = Vec::with_capacity(spec.height * spec.width);
    for r in 0..spec.height {
        for c in 0..spec.width {
            let (dy, dx) = (r as f64 + 0.5 - cy, c as f64 + 0.5 - cx);
            out.push(if dy.hypot(dx) <= radius {
                Hsv {
                    h: sign_hue,
                    s: tiles[(r / tile) * tiles_w + c / tile],
                    v,
                }
            } else {
                background
            });
        }
    }
    out
}

/// Nearest-neighbour zoom about the frame center; pixels sampled from
/// outside the pattern take the corner (background) value.
fn scaled(pattern: &[Hsv], h: usize, w: usize, scale: f64) -> Vec<Hsv> {
    let background = pattern[0];
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let sy = ((r as f64 + 0.5 - cy) / scale + cy).floor();
            let sx = ((c as f64 + 0.5 - cx) / scale + cx).floor();
            out.push(
                if sy >= 0.0 && sx >= 0.0 && (sy as usize) < h && (sx as usize) < w {
                    pattern[sy as usize * w + sx as usize]
                } else {
                    background
                },
            );
        }
    }
    out
}

/// Generates all frames in memory.
pub fn synthesize(spec: &SynthSpec, seed: u64) -> Result<Vec<SyntheticFrame>> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let pattern = base_pattern(spec);
    let p = spec.patch.size;
    let mut patch_rng = stream_rng(spec.patch.seed, STREAM_PATCH);
    let patch: Vec<u8> = (0..p * p)
        .map(|_| if patch_rng.random::<bool>() { 255 } else { 0 })
        .collect();
    let mut noise_rng = stream_rng(seed, STREAM_NOISE);
    let mut drift_rng = stream_rng(seed, STREAM_DRIFT);
    let mut presence_rng = stream_rng(seed, STREAM_PRESENCE);
    let amp = i16::from(spec.noise_amplitude);

    let mut frames = Vec::with_capacity(spec.frames);
    for i in 0..spec.frames {
        let scale = spec.scale.at(i, spec.frames);
        let clean_base = hsv_to_rgb(h, w, &scaled(&pattern, h, w, scale))?;
        let present = presence_rng.random::<f64>() >= spec.absent_fraction;

        let mut adv_base = clean_base.clone();
        let patch_origin = (p > 0).then(|| {
            let d = spec.patch.drift as i64;
            let dy = drift_rng.random_range(-d..=d);
            let dx = drift_rng.random_range(-d..=d);
            let top = ((h - p) as i64 / 2 + dy).clamp(0, (h - p) as i64) as usize;
            let left = ((w - p) as i64 / 2 + dx).clamp(0, (w - p) as i64) as usize;
            for r in 0..p {
                for c in 0..p {
                    for ch in 0..3 {
                        adv_base.set(top + r, left + c, ch, patch[r * p + c]);
                    }
                }
            }
            (top, left)
        });

        // identical noise draws keep the pair equal outside the patch
        let noise: Vec<i16> = (0..h * w * 3)
            .map(|_| {
                if amp == 0 {
                    0
                } else {
                    noise_rng.random_range(-amp..=amp)
                }
            })
            .collect();
        let add_noise = |img: &Image| {
            let data = img
                .data()
                .iter()
                .zip(&noise)
                .map(|(&v, &n)| (i16::from(v) + n).clamp(0, 255) as u8)
                .collect();
            img.with_data(data)
        };
        frames.push(SyntheticFrame {
            clean: add_noise(&clean_base),
            adversarial: add_noise(&adv_base),
            present,
            patch_origin,
        });
    }
    Ok(frames)
}

/// Writes `clean_NNNN.ppm` / `adv_NNNN.ppm` frames plus `clean.json` and
/// `adversarial.json` manifests into `dir`.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64, dir: &Path) -> Result<SyntheticPair> {
    let frames = synthesize(spec, seed)?;
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut clean = Vec::with_capacity(frames.len());
    let mut adversarial = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let (cp, ap) = (format!("clean_{i:04}.ppm"), format!("adv_{i:04}.ppm"));
        save_ppm(&f.clean, dir.join(&cp))?;
        save_ppm(&f.adversarial, dir.join(&ap))?;
        clean.push(FrameEntry {
            path: cp,
            present: f.present,
            label: None,
        });
        adversarial.push(FrameEntry {
            path: ap,
            present: f.present,
            label: None,
        });
    }
    let pair = SyntheticPair {
        clean: SequenceManifest {
            object_id: format!("synth-{seed}-clean"),
            ground_truth: GroundTruth::Clean,
            frames: clean,
            base_dir: dir.to_path_buf(),
        },
        adversarial: SequenceManifest {
            object_id: format!("synth-{seed}-adversarial"),
            ground_truth: GroundTruth::Adversarial,
            frames: adversarial,
            base_dir: dir.to_path_buf(),
        },
    };
    pair.clean.save(&dir.join("clean.json"))?;
    pair.adversarial.save(&dir.join("adversarial.json"))?;
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(patch: usize) -> SynthSpec {
        SynthSpec {
            frames: 6,
            height: 16,
            width: 20,
            base_seed: 3,
            noise_amplitude: 8,
            patch: PatchSpec {
                size: patch,
                drift: 3,
                seed: 9,
            },
            scale: ScaleSchedule::default(),
            absent_fraction: 0.0,
            pattern_value: 200,
        }
    }

    #[test]
    fn pair_differs_only_inside_patch() {
        let p = 5;
        for f in synthesize(&spec(p), 42).unwrap() {
            let (top, left) = f.patch_origin.unwrap();
            for r in 0..16 {
                for c in 0..20 {
                    let inside = (top..top + p).contains(&r) && (left..left + p).contains(&c);
                    for ch in 0..3 {
                        if !inside {
                            assert_eq!(f.clean.get(r, c, ch), f.adversarial.get(r, c, ch));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reproducible_and_seed_dependent() {
        let a = synthesize(&spec(4), 1).unwrap();
        assert_eq!(a, synthesize(&spec(4), 1).unwrap());
        assert_ne!(a, synthesize(&spec(4), 2).unwrap());
    }

    #[test]
    fn zero_patch_gives_identical_pairs() {
        for f in synthesize(&spec(0), 5).unwrap() {
            assert_eq!(f.clean, f.adversarial);
            assert_eq!(f.patch_origin, None);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(matches!(
            synthesize(&spec(17), 0),
            Err(PipelineError::Synth(_))
        ));
        let mut s = spec(2);
        s.frames = 0;
        assert!(s.validate().is_err());
        let mut s = spec(2);
        s.scale.start = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let s = ScaleSchedule::default();
        assert_eq!(s.at(0, 200), 0.4);
        assert_eq!(s.at(199, 200), 1.0);
        assert_eq!(s.at(0, 1), 1.0);
    }

    #[test]
    fn writes_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let pair = generate_synthetic(&spec(3), 7, dir.path()).unwrap();
        let loaded = SequenceManifest::load(&dir.path().join("adversarial.json")).unwrap();
        assert_eq!(loaded.frames, pair.adversarial.frames);
        let img = crate::imaging::load_ppm(loaded.frame_path(2)).unwrap();
        assert_eq!(img, synthesize(&spec(3), 7).unwrap()[2].adversarial);
    }
}
