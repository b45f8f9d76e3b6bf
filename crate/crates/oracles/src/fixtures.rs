//! Seeded random inputs shared by the oracle comparisons.

use detkit::geometry::NormalizedBox;
use detkit::metrics::GroundTruth;
use detkit::postprocess::{NmsConfig, NmsMode};
use detkit::{BBox, Detection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_box(rng: &mut ChaCha8Rng, side: f64, min: f64, max: f64) -> BBox {
    let w = rng.random_range(min..max);
    let h = rng.random_range(min..max);
    let x = rng.random_range(0.0..side - w);
    let y = rng.random_range(0.0..side - h);
    BBox::new(x, y, x + w, y + h)
}

/// Up to `max_n` crowded detections on one image. Roughly a fifth of the
/// scores are rounded to two decimals so ties occur.
pub fn nms_input(rng: &mut ChaCha8Rng, max_n: usize) -> Vec<Detection> {
    let n = rng.random_range(0..=max_n);
    (0..n)
        .map(|_| {
            let mut score: f64 = rng.random_range(0.0..1.0);
            if rng.random_bool(0.2) {
                score = (score * 100.0).round() / 100.0;
            }
            Detection::new(
                "img",
                rng.random_range(0..3),
                score,
                random_box(rng, 200.0, 10.0, 80.0),
            )
        })
        .collect()
}

pub fn nms_config(rng: &mut ChaCha8Rng) -> NmsConfig {
    let mode = match rng.random_range(0..3) {
        0 => NmsMode::Hard,
        1 => NmsMode::SoftLinear,
        _ => NmsMode::SoftGaussian,
    };
    NmsConfig {
        mode,
        iou_threshold: rng.random_range(0.1..0.9),
        sigma: rng.random_range(0.05..2.0),
        score_threshold: if rng.random_bool(0.5) {
            0.001
        } else {
            rng.random_range(0.0..0.5)
        },
        class_agnostic: rng.random_bool(0.3),
    }
}

/// Tight clusters far apart: pairs inside a cluster overlap heavily, pairs
/// across clusters do not touch.
pub fn clustered_input(rng: &mut ChaCha8Rng) -> Vec<Detection> {
    let clusters = rng.random_range(1..6);
    let mut out = Vec::new();
    for c in 0..clusters {
        let ox = 200.0 * c as f64;
        for _ in 0..rng.random_range(1..8) {
            let jx = rng.random_range(0.0..10.0);
            let jy = rng.random_range(0.0..10.0);
            let bbox = BBox::new(ox + jx, jy, ox + jx + 100.0, jy + 100.0);
            out.push(Detection::new(
                "img",
                rng.random_range(0..2),
                rng.random_range(0.0..1.0),
                bbox,
            ));
        }
    }
    out
}

/// A small evaluation problem: at most 10 ground truths over at most two
/// images and two classes, and at most 20 detections mixing jittered
/// copies of the ground truths with clutter. Scores are distinct.
pub fn micro_dataset(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<GroundTruth>) {
    let images = ["a", "b"];
    let n_gt = rng.random_range(1..=10);
    let gts: Vec<GroundTruth> = (0..n_gt)
        .map(|_| {
            GroundTruth::new(
                images[rng.random_range(0..2)],
                rng.random_range(0..2),
                random_box(rng, 100.0, 10.0, 50.0),
            )
        })
        .collect();
    let n_det = rng.random_range(0..=20);
    let mut dets = Vec::with_capacity(n_det);
    for _ in 0..n_det {
        let score = rng.random_range(0.0..1.0);
        if rng.random_bool(0.6) {
            let g = &gts[rng.random_range(0..gts.len())];
            let j = rng.random_range(0.0..8.0);
            let bbox = g.bbox.translate(j - 4.0, rng.random_range(-4.0..4.0));
            let class = if rng.random_bool(0.9) {
                g.class_id
            } else {
                1 - g.class_id
            };
            dets.push(Detection::new(g.image_id.clone(), class, score, bbox));
        } else {
            dets.push(Detection::new(
                images[rng.random_range(0..2)],
                rng.random_range(0..2),
                score,
                random_box(rng, 100.0, 10.0, 50.0),
            ));
        }
    }
    (dets, gts)
}

/// Random label lines over a spread of magnitudes, including exact 0 and 1
/// coordinates and values that need all 17 significant digits.
pub fn label_corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<(u32, NormalizedBox)> {
    (0..n)
        .map(|_| {
            let mut unit = || match rng.random_range(0..6) {
                0 => 0.0,
                1 => 1.0,
                2 => rng.random_range(0.0..1e-6),
                _ => rng.random_range(0.0..1.0),
            };
            let (cx, cy, w, h) = (unit(), unit(), unit(), unit());
            (rng.random_range(0..1000), NormalizedBox { cx, cy, w, h })
        })
        .collect()
}

/// Random detection lines with awkward image ids and extreme coordinates.
pub fn detection_corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<Detection> {
    const ID_CHARS: &[u8] = b"abcXYZ0123456789_-./:";
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..24);
            let id: String = (0..len)
                .map(|_| ID_CHARS[rng.random_range(0..ID_CHARS.len())] as char)
                .collect();
            let scale = [1e-9, 1.0, 1e3, 1e7][rng.random_range(0..4)];
            let x0 = rng.random_range(-1.0..1.0) * scale;
            let y0 = rng.random_range(-1.0..1.0) * scale;
            let bbox = BBox::new(
                x0,
                y0,
                x0 + rng.random_range(0.0..1.0) * scale,
                y0 + rng.random_range(0.0..1.0) * scale,
            );
            let score = match rng.random_range(0..5) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random_range(0.0..1.0),
            };
            Detection::new(id, rng.random_range(0..u32::MAX), score, bbox)
        })
        .collect()
}
