use serde::{Deserialize, Serialize};

use super::{Image, ImageError, Result};

/// Hexcone HSV: hue in degrees [0, 360), saturation in [0, 1], value in pixel
/// levels [0, 255].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BrightnessMode {
    /// Replace V with the configured value.
    Set,
    /// Add the configured value to V, clamped to [0, 255].
    Add,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrightnessSpec {
    pub mode: BrightnessMode,
    pub value: u8,
}

impl Default for BrightnessSpec {
    fn default() -> Self {
        Self {
            mode: BrightnessMode::Set,
            value: 200,
        }
    }
}

fn pixel_to_hsv(r: u8, g: u8, b: u8) -> Hsv {
    let (r, g, b) = (f64::from(r), f64::from(g), f64::from(b));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    Hsv {
        h: if h >= 360.0 { h - 360.0 } else { h },
        s,
        v: max,
    }
}

fn hsv_to_pixel(hsv: Hsv) -> [u8; 3] {
    let Hsv { h, s, v } = hsv;
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| (t + m).round().clamp(0.0, 255.0) as u8;
    [q(r1), q(g1), q(b1)]
}

fn require_rgb(img: &Image) -> Result<()> {
    if img.channels() != 3 {
        return Err(ImageError::NotRgb(img.channels()));
    }
    Ok(())
}

/// Per-pixel HSV in row-major order.
pub fn rgb_to_hsv(img: &Image) -> Result<Vec<Hsv>> {
    require_rgb(img)?;
    Ok(img
        .data()
        .chunks_exact(3)
        .map(|p| pixel_to_hsv(p[0], p[1], p[2]))
        .collect())
}

/// Rebuilds an RGB image from per-pixel HSV values.
pub fn hsv_to_rgb(height: usize, width: usize, pixels: &[Hsv]) -> Result<Image> {
    let data = pixels.iter().flat_map(|&p| hsv_to_pixel(p)).collect();
    Image::new(height, width, 3, data)
}

/// Feature-squeezing brightness transform: moves every pixel's V channel
/// while keeping hue and saturation.
pub fn brightness_transform(img: &Image, spec: BrightnessSpec) -> Result<Image> {
    require_rgb(img)?;
    let target = f64::from(spec.value);
    let mut out = Vec::with_capacity(img.len());
    for p in img.data().chunks_exact(3) {
        let mut hsv = pixel_to_hsv(p[0], p[1], p[2]);
        hsv.v = match spec.mode {
            BrightnessMode::Set => target,
            BrightnessMode::Add => (hsv.v + target).clamp(0.0, 255.0),
        };
        out.extend_from_slice(&hsv_to_pixel(hsv));
    }
    Ok(img.with_data(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one(r: u8, g: u8, b: u8) -> Image {
        Image::new(1, 1, 3, vec![r, g, b]).unwrap()
    }

    #[test]
    fn primaries() {
        let hsv = rgb_to_hsv(&one(255, 0, 0)).unwrap()[0];
        assert_eq!((hsv.h, hsv.s, hsv.v), (0.0, 1.0, 255.0));
        let hsv = rgb_to_hsv(&one(128, 128, 128)).unwrap()[0];
        assert_eq!((hsv.h, hsv.s, hsv.v), (0.0, 0.0, 128.0));
        let hsv = rgb_to_hsv(&one(0, 0, 255)).unwrap()[0];
        assert_eq!((hsv.h, hsv.s, hsv.v), (240.0, 1.0, 255.0));
    }

    #[test]
    fn grayscale_rejected() {
        let gray = Image::filled(2, 2, 1, 10).unwrap();
        assert!(matches!(rgb_to_hsv(&gray), Err(ImageError::NotRgb(1))));
        assert!(matches!(
            brightness_transform(&gray, BrightnessSpec::default()),
            Err(ImageError::NotRgb(1))
        ));
    }

    #[test]
    fn set_brightness_examples() {
        let gray = Image::filled(3, 2, 3, 100).unwrap();
        let out = brightness_transform(&gray, BrightnessSpec::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 200));

        let red = brightness_transform(&one(255, 0, 0), BrightnessSpec::default()).unwrap();
        assert_eq!(red.data(), &[200, 0, 0]);
    }

    #[test]
    fn add_saturates() {
        let spec = BrightnessSpec {
            mode: BrightnessMode::Add,
            value: 100,
        };
        let out = brightness_transform(&one(200, 100, 0), spec).unwrap();
        assert_eq!(out.data()[0], 255);
    }

    #[test]
    fn round_trip_random_colors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<u8> = (0..3 * 100_000).map(|_| rng.random()).collect();
        let img = Image::new(1, 100_000, 3, data).unwrap();
        let back = hsv_to_rgb(1, 100_000, &rgb_to_hsv(&img).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((i16::from(*a) - i16::from(*b)).abs() <= 1);
        }
        let add0 = BrightnessSpec {
            mode: BrightnessMode::Add,
            value: 0,
        };
        let same = brightness_transform(&img, add0).unwrap();
        for (a, b) in img.data().iter().zip(same.data()) {
            assert!((i16::from(*a) - i16::from(*b)).abs() <= 1);
        }
    }

    #[test]
    fn set_mode_fixes_value_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<u8> = (0..3 * 5000).map(|_| rng.random()).collect();
        let img = Image::new(50, 100, 3, data).unwrap();
        for value in [0u8, 1, 77, 200, 255] {
            let spec = BrightnessSpec {
                mode: BrightnessMode::Set,
                value,
            };
            let out = brightness_transform(&img, spec).unwrap();
            assert!(rgb_to_hsv(&out)
                .unwrap()
                .iter()
                .all(|p| p.v == f64::from(value)));
        }
    }
}
