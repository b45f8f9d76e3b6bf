use detkit::postprocess::{NmsConfig, NmsMode};
use detkit::Detection;

fn overlap(a: &detkit::BBox, b: &detkit::BBox) -> f64 {
    detkit::geometry::iou(a, b)
}

/// Textbook Soft-NMS loop: re-sort the candidate list every round, move
/// the head to the kept set, rescore the rest against it.
pub fn reference_suppress(dets: &[Detection], cfg: &NmsConfig) -> Vec<Detection> {
    let mut classes: Vec<Option<u32>> = if cfg.class_agnostic {
        vec![None]
    } else {
        dets.iter().map(|d| Some(d.class_id)).collect()
    };
    classes.sort();
    classes.dedup();

    let mut kept: Vec<(f64, usize)> = Vec::new();
    for class in classes {
        let mut candidates: Vec<(f64, usize)> = dets
            .iter()
            .enumerate()
            .filter(|(_, d)| class.is_none_or(|c| d.class_id == c))
            .filter(|(_, d)| d.score >= cfg.score_threshold)
            .map(|(i, d)| (d.score, i))
            .collect();
        while !candidates.is_empty() {
            candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let (score, a) = candidates.remove(0);
            kept.push((score, a));
            let mut next = Vec::new();
            for (s, i) in candidates {
                let u = overlap(&dets[a].bbox, &dets[i].bbox);
                let s = match cfg.mode {
                    NmsMode::Hard => {
                        if u >= cfg.iou_threshold {
                            continue;
                        }
                        s
                    }
                    NmsMode::SoftLinear => {
                        if u >= cfg.iou_threshold {
                            s * (1.0 - u)
                        } else {
                            s
                        }
                    }
                    NmsMode::SoftGaussian => s * (-(u * u) / cfg.sigma).exp(),
                };
                if s >= cfg.score_threshold {
                    next.push((s, i));
                }
            }
            candidates = next;
        }
    }
    kept.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    kept.into_iter()
        .map(|(score, i)| Detection {
            score,
            ..dets[i].clone()
        })
        .collect()
}
