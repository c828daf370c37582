#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamguard::classifier::{ClassifierHandle, LinearModel};
use streamguard::imaging::Image;
use streamguard::pipeline::{PatchSpec, ScaleSchedule, SynthSpec};

/// Linear model with seeded random `±beta` weights and zero bias.
pub fn sign_weight_model(
    classes: usize,
    shape: (usize, usize, usize),
    beta: f64,
    seed: u64,
) -> LinearModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = shape.0 * shape.1 * shape.2;
    let weights = (0..classes)
        .map(|_| {
            (0..d)
                .map(|_| if rng.random::<bool>() { beta } else { -beta })
                .collect()
        })
        .collect();
    let labels = (0..classes).map(|i| format!("c{i}")).collect();
    LinearModel::new(labels, shape, weights, vec![0.0; classes]).unwrap()
}

/// Linear model with Gaussian-ish weights and bias.
pub fn random_model(classes: usize, shape: (usize, usize, usize), seed: u64) -> LinearModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = shape.0 * shape.1 * shape.2;
    let weights = (0..classes)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let bias = (0..classes).map(|_| rng.random_range(-0.5..0.5)).collect();
    let labels = (0..classes).map(|i| format!("c{i}")).collect();
    LinearModel::new(labels, shape, weights, bias).unwrap()
}

pub fn random_image(shape: (usize, usize, usize), rng: &mut impl Rng) -> Image {
    let (h, w, c) = shape;
    Image::new(h, w, c, (0..h * w * c).map(|_| rng.random()).collect()).unwrap()
}

/// Synthetic stream setup used by the end-to-end experiment.
pub fn stream_spec() -> SynthSpec {
    SynthSpec {
        frames: 200,
        height: 32,
        width: 32,
        base_seed: 11,
        noise_amplitude: 10,
        patch: PatchSpec {
            size: 8,
            drift: 6,
            seed: 5,
        },
        scale: ScaleSchedule::default(),
        absent_fraction: 0.0,
        pattern_value: 200,
    }
}

pub fn stream_classifier() -> ClassifierHandle {
    ClassifierHandle::linear(sign_weight_model(2, (32, 32, 3), 0.05, 1))
}
