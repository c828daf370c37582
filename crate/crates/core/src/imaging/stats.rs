use super::{Image, ImageError, Result};

/// Shannon entropy (bits) of the pixel-level histogram, averaged over channels.
pub fn pixel_entropy(img: &Image) -> f64 {
    let channels = img.channels();
    let count = (img.height() * img.width()) as f64;
    let mut total = 0.0;
    for ch in 0..channels {
        let mut hist = [0usize; 256];
        for &v in img.data().iter().skip(ch).step_by(channels) {
            hist[usize::from(v)] += 1;
        }
        total -= hist
            .iter()
            .filter(|&&f| f > 0)
            .map(|&f| {
                let p = f as f64 / count;
                p * p.log2()
            })
            .sum::<f64>();
    }
    // -0.0 for single-symbol channels
    (total / channels as f64).max(0.0)
}

/// Uniform scalar quantization into `intervals` buckets of width 256/intervals,
/// each mapped to its midpoint codeword.
pub fn quantize(img: &Image, intervals: usize) -> Result<Image> {
    if !(2..=256).contains(&intervals) {
        return Err(ImageError::Intervals(intervals));
    }
    let table = codebook(intervals);
    Ok(img.with_data(img.data().iter().map(|&v| table[usize::from(v)]).collect()))
}

fn codebook(intervals: usize) -> [u8; 256] {
    let n = intervals;
    let mut table = [0u8; 256];
    for (v, slot) in table.iter_mut().enumerate() {
        // bucket k = floor(v / w) with w = 256 / n
        let k = (v * n / 256).min(n - 1);
        // floor((k + 0.5) * w), lifted to the bucket's first level when w < 2
        // would otherwise place it in bucket k - 1
        let mid = (2 * k + 1) * 128 / n;
        let first = (k * 256).div_ceil(n);
        *slot = mid.max(first) as u8;
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn entropy_canonical_images() {
        assert_eq!(pixel_entropy(&Image::filled(5, 7, 3, 42).unwrap()), 0.0);
        let ramp = Image::new(16, 16, 1, (0..=255).collect()).unwrap();
        assert_eq!(pixel_entropy(&ramp), 8.0);
        let two = Image::new(1, 2, 1, vec![0, 255]).unwrap();
        assert_eq!(pixel_entropy(&two), 1.0);
    }

    #[test]
    fn entropy_averages_channels() {
        // R varies over two levels, G and B constant
        let img = Image::new(1, 2, 3, vec![0, 5, 5, 255, 5, 5]).unwrap();
        assert!((pixel_entropy(&img) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn quantize_examples() {
        let img = Image::new(1, 2, 1, vec![100, 200]).unwrap();
        assert_eq!(quantize(&img, 2).unwrap().data(), &[64, 192]);
        let ramp = Image::new(16, 16, 1, (0..=255).collect()).unwrap();
        assert_eq!(quantize(&ramp, 256).unwrap(), ramp);
    }

    #[test]
    fn quantize_rejects_bad_interval_counts() {
        let img = Image::filled(1, 1, 1, 0).unwrap();
        assert!(matches!(quantize(&img, 1), Err(ImageError::Intervals(1))));
        assert!(matches!(
            quantize(&img, 257),
            Err(ImageError::Intervals(257))
        ));
    }

    #[test]
    fn codewords_stay_in_their_bucket() {
        for n in 2..=256 {
            let table = codebook(n);
            for (v, &c) in table.iter().enumerate() {
                let bucket = |x: usize| (x * n / 256).min(n - 1);
                assert_eq!(bucket(c as usize), bucket(v), "n={n} v={v}");
            }
        }
    }

    fn arb_image() -> impl Strategy<Value = Image> {
        (1usize..6, 1usize..6, prop::bool::ANY).prop_flat_map(|(h, w, rgb)| {
            let c = if rgb { 3 } else { 1 };
            prop::collection::vec(any::<u8>(), h * w * c)
                .prop_map(move |d| Image::new(h, w, c, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn quantize_idempotent(img in arb_image(), n in 2usize..=256) {
            let once = quantize(&img, n).unwrap();
            prop_assert_eq!(quantize(&once, n).unwrap(), once);
        }

        #[test]
        fn codebook_bounds_entropy(img in arb_image(), n in 2usize..=256) {
            let q = quantize(&img, n).unwrap();
            let h = pixel_entropy(&q);
            prop_assert!(h <= (n as f64).log2() + 1e-12);
            prop_assert!((0.0..=8.0).contains(&h));
        }
    }
}
