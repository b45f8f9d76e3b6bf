use detkit::metrics::GroundTruth;
use detkit::{BBox, Detection};

fn area(b: &BBox) -> f64 {
    (b.x_max - b.x_min) * (b.y_max - b.y_min)
}

/// Overlap ratio computed from scratch.
pub fn plain_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// True-positive count when only detections scoring at least `cut` are
/// kept, using greedy best-overlap matching.
fn true_positives_at(
    dets: &[&Detection],
    gts: &[&GroundTruth],
    iou_thr: f64,
    cut: f64,
) -> (usize, usize) {
    let mut kept: Vec<(usize, &&Detection)> = dets
        .iter()
        .enumerate()
        .filter(|(_, d)| d.score >= cut)
        .collect();
    kept.sort_by(|a, b| {
        b.1.score
            .partial_cmp(&a.1.score)
            .unwrap()
            .then(a.0.cmp(&b.0))
    });
    let mut used = vec![false; gts.len()];
    let mut tp = 0;
    for (_, d) in &kept {
        let mut best: Option<(f64, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] || gt.image_id != d.image_id {
                continue;
            }
            let u = plain_iou(&d.bbox, &gt.bbox);
            if best.is_none_or(|(bu, _)| u > bu) {
                best = Some((u, g));
            }
        }
        if let Some((u, g)) = best {
            if u >= iou_thr {
                used[g] = true;
                tp += 1;
            }
        }
    }
    (tp, kept.len())
}

/// AP of one class by enumerating every distinct score cut and integrating
/// the precision envelope `p(r) = max{P(c) : R(c) >= r}` exactly over the
/// recall axis. Expects distinct scores within the class.
pub fn brute_force_ap(dets: &[Detection], gts: &[GroundTruth], class: u32, iou_thr: f64) -> f64 {
    let dets: Vec<&Detection> = dets.iter().filter(|d| d.class_id == class).collect();
    let gts: Vec<&GroundTruth> = gts.iter().filter(|g| g.class_id == class).collect();
    if gts.is_empty() {
        return 0.0;
    }
    let mut cuts: Vec<f64> = dets.iter().map(|d| d.score).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();

    let samples: Vec<(f64, f64)> = cuts
        .iter()
        .map(|&c| {
            let (tp, n) = true_positives_at(&dets, &gts, iou_thr, c);
            (tp as f64 / gts.len() as f64, tp as f64 / n as f64)
        })
        .collect();

    let mut recalls: Vec<f64> = samples.iter().map(|s| s.0).filter(|&r| r > 0.0).collect();
    recalls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    recalls.dedup();

    let mut area = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let p = samples
            .iter()
            .filter(|s| s.0 >= r)
            .map(|s| s.1)
            .fold(0.0, f64::max);
        area += (r - prev) * p;
        prev = r;
    }
    area
}
