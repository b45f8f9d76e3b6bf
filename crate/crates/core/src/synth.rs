//! Seeded synthetic detections for benchmarks and property tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{BBox, Detection};

pub const SYNTH_CLASSES: u32 = 5;
pub const SYNTH_IMAGE_SIDE: f64 = 640.0;

/// `n_images` lists of `n_boxes` detections each. Boxes are 20 to 120
/// pixels per side, placed uniformly inside a 640x640 image, with uniform
/// scores and one of five classes.
pub fn synthetic_detections(n_images: usize, n_boxes: usize, seed: u64) -> Vec<Vec<Detection>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_images)
        .map(|i| {
            let id = format!("synth{i:05}");
            (0..n_boxes)
                .map(|_| {
                    let w = rng.random_range(20.0..120.0);
                    let h = rng.random_range(20.0..120.0);
                    let x = rng.random_range(0.0..SYNTH_IMAGE_SIDE - w);
                    let y = rng.random_range(0.0..SYNTH_IMAGE_SIDE - h);
                    Detection::new(
                        id.clone(),
                        rng.random_range(0..SYNTH_CLASSES),
                        rng.random_range(0.0..1.0),
                        BBox::new(x, y, x + w, y + h),
                    )
                })
                .collect()
        })
        .collect()
}
