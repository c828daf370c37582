use serde::{Deserialize, Serialize};

use super::{Image, ImageError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterShape {
    Box,
    /// Center row and center column of the window.
    Cross,
    /// Taps with |dy| + |dx| <= size / 2.
    Diamond,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub shape: FilterShape,
    pub size: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            shape: FilterShape::Box,
            size: 3,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 3 || self.size.is_multiple_of(2) {
            return Err(ImageError::FilterSize(self.size));
        }
        Ok(())
    }

    /// Offsets (dy, dx) of the mask taps.
    pub fn taps(&self) -> Vec<(isize, isize)> {
        let r = (self.size / 2) as isize;
        let mut taps = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let keep = match self.shape {
                    FilterShape::Box => true,
                    FilterShape::Cross => dy == 0 || dx == 0,
                    FilterShape::Diamond => dy.abs() + dx.abs() <= r,
                };
                if keep {
                    taps.push((dy, dx));
                }
            }
        }
        taps
    }
}

/// Per-channel mean over the mask footprint, edge-replicated borders,
/// rounded half-up.
pub fn spatial_smooth(img: &Image, spec: FilterSpec) -> Result<Image> {
    spec.validate()?;
    let taps = spec.taps();
    let n = taps.len() as u32;
    let (h, w, c) = img.shape();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut out = vec![0u8; img.len()];
    for row in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let sum: u32 = taps
                    .iter()
                    .map(|&(dy, dx)| {
                        let r = clamp(row as isize + dy, h);
                        let q = clamp(col as isize + dx, w);
                        u32::from(img.get(r, q, ch))
                    })
                    .sum();
                out[(row * w + col) * c + ch] = ((2 * sum + n) / (2 * n)) as u8;
            }
        }
    }
    Ok(img.with_data(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn impulse() -> Image {
        let mut data = vec![0u8; 9];
        data[4] = 9;
        Image::new(3, 3, 1, data).unwrap()
    }

    fn mask_sum_oracle(img: &Image, spec: FilterSpec, row: usize, col: usize) -> f64 {
        // explicit tap enumeration over the full window, in floating point
        let r = (spec.size / 2) as i64;
        let (mut sum, mut n) = (0.0, 0.0);
        for dy in -r..=r {
            for dx in -r..=r {
                let inside = match spec.shape {
                    FilterShape::Box => true,
                    FilterShape::Cross => dy == 0 || dx == 0,
                    FilterShape::Diamond => dy.abs() + dx.abs() <= r,
                };
                if inside {
                    let y = (row as i64 + dy).clamp(0, img.height() as i64 - 1) as usize;
                    let x = (col as i64 + dx).clamp(0, img.width() as i64 - 1) as usize;
                    sum += f64::from(img.get(y, x, 0));
                    n += 1.0;
                }
            }
        }
        sum / n
    }

    #[test]
    fn impulse_box_and_cross() {
        let boxed = spatial_smooth(&impulse(), FilterSpec::default()).unwrap();
        assert_eq!(boxed.get(1, 1, 0), 1);
        let cross = FilterSpec {
            shape: FilterShape::Cross,
            size: 3,
        };
        let crossed = spatial_smooth(&impulse(), cross).unwrap();
        let expected = (mask_sum_oracle(&impulse(), cross, 1, 1) + 0.5).floor() as u8;
        assert_eq!(expected, 2);
        assert_eq!(crossed.get(1, 1, 0), 2);
    }

    #[test]
    fn mask_sizes() {
        let tap_count = |shape, size| FilterSpec { shape, size }.taps().len();
        assert_eq!(tap_count(FilterShape::Box, 5), 25);
        assert_eq!(tap_count(FilterShape::Cross, 5), 9);
        assert_eq!(tap_count(FilterShape::Diamond, 5), 13);
        assert_eq!(tap_count(FilterShape::Diamond, 3), 5);
    }

    #[test]
    fn even_or_small_sizes_rejected() {
        let img = impulse();
        for size in [0, 1, 2, 4] {
            let spec = FilterSpec {
                shape: FilterShape::Box,
                size,
            };
            assert!(matches!(
                spatial_smooth(&img, spec),
                Err(ImageError::FilterSize(_))
            ));
        }
    }

    fn arb_spec() -> impl Strategy<Value = FilterSpec> {
        (
            prop_oneof![
                Just(FilterShape::Box),
                Just(FilterShape::Cross),
                Just(FilterShape::Diamond)
            ],
            prop_oneof![Just(3usize), Just(5), Just(7)],
        )
            .prop_map(|(shape, size)| FilterSpec { shape, size })
    }

    proptest! {
        #[test]
        fn constant_is_fixed_point(level in any::<u8>(), spec in arb_spec(), h in 1usize..6, w in 1usize..6) {
            let img = Image::filled(h, w, 3, level).unwrap();
            prop_assert_eq!(spatial_smooth(&img, spec).unwrap(), img);
        }

        #[test]
        fn matches_oracle_and_stays_in_footprint_range(
            data in prop::collection::vec(any::<u8>(), 30),
            spec in arb_spec(),
        ) {
            let img = Image::new(5, 6, 1, data).unwrap();
            let out = spatial_smooth(&img, spec).unwrap();
            for row in 0..5 {
                for col in 0..6 {
                    let mean = mask_sum_oracle(&img, spec, row, col);
                    prop_assert_eq!(out.get(row, col, 0), (mean + 0.5).floor() as u8);
                    let footprint: Vec<u8> = spec.taps().iter().map(|&(dy, dx)| {
                        let y = (row as isize + dy).clamp(0, 4) as usize;
                        let x = (col as isize + dx).clamp(0, 5) as usize;
                        img.get(y, x, 0)
                    }).collect();
                    let lo = *footprint.iter().min().unwrap();
                    let hi = *footprint.iter().max().unwrap();
                    prop_assert!((lo..=hi).contains(&out.get(row, col, 0)));
                }
            }
        }
    }
}
