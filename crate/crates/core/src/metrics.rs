//! Detection matching, precision/recall curves, F-beta, AP/mAP and FPS.
//!
//! Matching is greedy by descending score: each detection claims the
//! best-IoU unmatched ground truth of its class in its image, provided the
//! overlap reaches the IoU threshold. Score ties go to the lower detection
//! index and IoU ties to the lower ground-truth index.

use std::collections::{BTreeSet, HashMap};

use crate::geometry::{iou, BBox};
use crate::{Detection, Error, Execution, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: String,
    pub class_id: u32,
    pub bbox: BBox,
}

impl GroundTruth {
    pub fn new(image_id: impl Into<String>, class_id: u32, bbox: BBox) -> Self {
        Self {
            image_id: image_id.into(),
            class_id,
            bbox,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchFlag {
    /// Matched the ground truth at this input index.
    TruePositive(usize),
    FalsePositive,
}

impl MatchFlag {
    pub fn is_tp(self) -> bool {
        matches!(self, MatchFlag::TruePositive(_))
    }
}

/// Outcome of matching at one IoU threshold. `flags[i]` belongs to
/// detection `i` of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub flags: Vec<MatchFlag>,
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.flags.iter().filter(|f| f.is_tp()).count()
    }

    pub fn false_positives(&self) -> usize {
        self.flags.len() - self.true_positives()
    }

    pub fn false_negatives(&self) -> usize {
        self.gt_matched.iter().filter(|m| !**m).count()
    }
}

/// Indices of `dets` sorted by descending score, ties by ascending index.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

fn check_scores(dets: &[Detection]) -> Result<()> {
    match dets.iter().find(|d| d.score.is_nan()) {
        Some(d) => Err(Error::InvalidScore(d.score)),
        None => Ok(()),
    }
}

pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thr: f64,
) -> Result<MatchResult> {
    check_scores(dets)?;
    if !(iou_thr > 0.0 && iou_thr < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "iou threshold {iou_thr} outside (0, 1)"
        )));
    }

    let mut pools: HashMap<(&str, u32), Vec<usize>> = HashMap::new();
    for (g, gt) in gts.iter().enumerate() {
        pools
            .entry((gt.image_id.as_str(), gt.class_id))
            .or_default()
            .push(g);
    }

    let mut gt_matched = vec![false; gts.len()];
    let mut flags = vec![MatchFlag::FalsePositive; dets.len()];
    for d in score_order(dets) {
        let det = &dets[d];
        let Some(pool) = pools.get(&(det.image_id.as_str(), det.class_id)) else {
            continue;
        };
        let mut best: Option<(f64, usize)> = None;
        for &g in pool {
            if gt_matched[g] {
                continue;
            }
            let overlap = iou(&det.bbox, &gts[g].bbox);
            // pool is in ascending index order, so strict > keeps the lower index
            if best.is_none_or(|(b, _)| overlap > b) {
                best = Some((overlap, g));
            }
        }
        if let Some((overlap, g)) = best {
            if overlap >= iou_thr {
                gt_matched[g] = true;
                flags[d] = MatchFlag::TruePositive(g);
            }
        }
    }
    Ok(MatchResult { flags, gt_matched })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    /// Score of the detection that produced this sample.
    pub score: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// Cumulative precision/recall after each ranked detection.
///
/// `ranked` holds `(score, is_true_positive)` in descending score order.
/// With `n_gt == 0` the curve is empty.
pub fn pr_curve(ranked: &[(f64, bool)], n_gt: usize) -> PrCurve {
    if n_gt == 0 {
        return PrCurve::default();
    }
    let mut tp = 0usize;
    let points = ranked
        .iter()
        .enumerate()
        .map(|(k, &(score, hit))| {
            tp += usize::from(hit);
            PrPoint {
                score,
                recall: tp as f64 / n_gt as f64,
                precision: tp as f64 / (k + 1) as f64,
            }
        })
        .collect();
    PrCurve { points }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    /// Area under the monotone precision envelope at every recall change.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 0.00, 0.01, ..., 1.00.
    Point101,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-point" | "all" | "envelope" => Ok(Interpolation::AllPoint),
            "101-point" | "101" | "coco" => Ok(Interpolation::Point101),
            other => Err(Error::InvalidConfig(format!(
                "unknown interpolation `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Interpolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Interpolation::AllPoint => "all-point",
            Interpolation::Point101 => "101-point",
        })
    }
}

pub fn average_precision(curve: &PrCurve) -> f64 {
    average_precision_with(curve, Interpolation::AllPoint)
}

pub fn average_precision_with(curve: &PrCurve, mode: Interpolation) -> f64 {
    let pts = &curve.points;
    if pts.is_empty() {
        return 0.0;
    }
    let mut envelope: Vec<f64> = pts.iter().map(|p| p.precision).collect();
    for k in (0..envelope.len() - 1).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    match mode {
        Interpolation::AllPoint => {
            let mut prev_recall = 0.0;
            let mut area = 0.0;
            for (p, env) in pts.iter().zip(&envelope) {
                area += (p.recall - prev_recall) * env;
                prev_recall = p.recall;
            }
            area
        }
        Interpolation::Point101 => {
            let mut k = 0;
            let mut total = 0.0;
            for j in 0..=100 {
                let r = j as f64 / 100.0;
                while k < pts.len() && pts[k].recall < r {
                    k += 1;
                }
                if k < pts.len() {
                    total += envelope[k];
                }
            }
            total / 101.0
        }
    }
}

/// Weighted harmonic mean of precision and recall. Zero when both are zero.
pub fn f_beta(p: f64, r: f64, beta: f64) -> f64 {
    if p == 0.0 && r == 0.0 {
        return 0.0;
    }
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (b2 * p + r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpsReport {
    pub images: u64,
    pub seconds: f64,
    pub fps: f64,
}

impl FpsReport {
    /// Frame rate of a conveyor-belt X-ray scanner feed.
    pub const CONVEYOR_FPS: f64 = 25.0;

    pub fn meets_conveyor_rate(&self) -> bool {
        self.fps >= Self::CONVEYOR_FPS
    }
}

pub fn fps(n_images: u64, total_seconds: f64) -> Result<FpsReport> {
    if !(total_seconds > 0.0) || !total_seconds.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "total time {total_seconds} must be positive"
        )));
    }
    Ok(FpsReport {
        images: n_images,
        seconds: total_seconds,
        fps: n_images as f64 / total_seconds,
    })
}

/// Inclusive `lo:hi:step` threshold sweep.
pub fn iou_range(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(lo <= hi) {
        return Err(Error::InvalidConfig(format!(
            "bad IoU range {lo}:{hi}:{step}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    let out: Vec<f64> = (0..n)
        .map(|k| ((lo + k as f64 * step) * 1e12).round() / 1e12)
        .collect();
    validate_thresholds(&out)?;
    Ok(out)
}

pub fn default_thresholds() -> Vec<f64> {
    iou_range(0.5, 0.95, 0.05).expect("static range")
}

fn validate_thresholds(t: &[f64]) -> Result<()> {
    if t.is_empty() {
        return Err(Error::InvalidConfig("empty IoU threshold list".into()));
    }
    if let Some(bad) = t.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::InvalidConfig(format!(
            "IoU threshold {bad} outside (0, 1)"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Point {
    pub confidence: f64,
    /// One entry per evaluated class, in report class order.
    pub per_class: Vec<f64>,
    pub mean: f64,
}

pub const F1_CUTS: usize = 1000;

/// F1 at confidence cuts `k / 1000`, `k = 0..1000`. A detection counts at a
/// cut when its score is at least the cut.
pub fn f1_confidence_curve(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thr: f64,
    classes: &[u32],
) -> Result<Vec<F1Point>> {
    let matched = match_detections(dets, gts, iou_thr)?;
    Ok(f1_curve_from_matches(dets, gts, &matched, classes))
}

fn f1_curve_from_matches(
    dets: &[Detection],
    gts: &[GroundTruth],
    matched: &MatchResult,
    classes: &[u32],
) -> Vec<F1Point> {
    // Per class: ascending scores with a suffix TP count.
    let tables: Vec<(Vec<f64>, Vec<usize>, usize)> = classes
        .iter()
        .map(|&c| {
            let mut rows: Vec<(f64, bool)> = dets
                .iter()
                .zip(&matched.flags)
                .filter(|(d, _)| d.class_id == c)
                .map(|(d, f)| (d.score, f.is_tp()))
                .collect();
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut suffix_tp = vec![0usize; rows.len() + 1];
            for k in (0..rows.len()).rev() {
                suffix_tp[k] = suffix_tp[k + 1] + usize::from(rows[k].1);
            }
            let n_gt = gts.iter().filter(|g| g.class_id == c).count();
            (rows.into_iter().map(|r| r.0).collect(), suffix_tp, n_gt)
        })
        .collect();

    (0..F1_CUTS)
        .map(|k| {
            let cut = k as f64 / F1_CUTS as f64;
            let per_class: Vec<f64> = tables
                .iter()
                .map(|(scores, suffix_tp, n_gt)| {
                    let first = scores.partition_point(|&s| s < cut);
                    let predicted = scores.len() - first;
                    let tp = suffix_tp[first];
                    let p = if predicted == 0 {
                        0.0
                    } else {
                        tp as f64 / predicted as f64
                    };
                    let r = if *n_gt == 0 {
                        0.0
                    } else {
                        tp as f64 / *n_gt as f64
                    };
                    f_beta(p, r, 1.0)
                })
                .collect();
            let mean = if per_class.is_empty() {
                0.0
            } else {
                per_class.iter().sum::<f64>() / per_class.len() as f64
            };
            F1Point {
                confidence: cut,
                per_class,
                mean,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub interpolation: Interpolation,
    /// IoU threshold for the F1-confidence sweep.
    pub f1_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: default_thresholds(),
            interpolation: Interpolation::AllPoint,
            f1_iou: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class_id: u32,
    pub name: String,
    pub n_gt: usize,
    pub n_det: usize,
    /// AP at each configured threshold, same order as the thresholds.
    pub ap: Vec<f64>,
    /// PR curve at the first configured threshold.
    pub pr_curve: PrCurve,
    pub best_f1: f64,
    pub best_f1_confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub interpolation: Interpolation,
    /// Classes that have at least one ground truth or detection.
    pub classes: Vec<ClassReport>,
    /// Mean AP over classes at IoU 0.5, when 0.5 is among the thresholds.
    pub map50: Option<f64>,
    /// Mean AP over every (class, threshold) pair.
    pub map_range: f64,
    pub f1_curve: Vec<F1Point>,
    /// Confidence cut with the highest mean F1 and that F1.
    pub best_mean_f1: (f64, f64),
    pub fps: Option<FpsReport>,
}

impl EvalReport {
    /// Mean over classes of AP at threshold index `t`.
    pub fn map_at(&self, t: usize) -> f64 {
        mean(self.classes.iter().map(|c| c.ap[t]))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// AP per class per threshold with class ids inferred from the data and
/// default interpolation.
pub fn map_over_range(
    dets: &[Detection],
    gts: &[GroundTruth],
    thresholds: &[f64],
) -> Result<EvalReport> {
    let ids: BTreeSet<u32> = dets
        .iter()
        .map(|d| d.class_id)
        .chain(gts.iter().map(|g| g.class_id))
        .collect();
    let max_id = ids.last().copied().map_or(0, |m| m as usize + 1);
    let names: Vec<String> = (0..max_id).map(|i| i.to_string()).collect();
    let cfg = EvalConfig {
        thresholds: thresholds.to_vec(),
        ..EvalConfig::default()
    };
    evaluate(dets, gts, &names, &cfg, Execution::default())
}

/// Full evaluation over a fixed class list (`class_names[i]` is class `i`).
///
/// Thresholds are evaluated independently under `exec`; reductions run in
/// class-id then threshold order so the report does not depend on
/// scheduling.
pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruth],
    class_names: &[String],
    cfg: &EvalConfig,
    exec: Execution,
) -> Result<EvalReport> {
    validate_thresholds(&cfg.thresholds)?;
    check_scores(dets)?;
    if class_names.is_empty() {
        return Err(Error::InvalidConfig("empty class list".into()));
    }
    let n_classes = class_names.len() as u32;
    if let Some(d) = dets.iter().find(|d| d.class_id >= n_classes) {
        return Err(Error::Data(format!(
            "detection class id {} unknown",
            d.class_id
        )));
    }
    if let Some(g) = gts.iter().find(|g| g.class_id >= n_classes) {
        return Err(Error::Data(format!(
            "ground-truth class id {} unknown",
            g.class_id
        )));
    }

    let present: Vec<u32> = (0..n_classes)
        .filter(|&c| dets.iter().any(|d| d.class_id == c) || gts.iter().any(|g| g.class_id == c))
        .collect();
    let order = score_order(dets);

    let per_threshold: Vec<Result<Vec<(f64, PrCurve)>>> = exec.map(&cfg.thresholds, |&thr| {
        let m = match_detections(dets, gts, thr)?;
        Ok(present
            .iter()
            .map(|&c| {
                let ranked: Vec<(f64, bool)> = order
                    .iter()
                    .filter(|&&i| dets[i].class_id == c)
                    .map(|&i| (dets[i].score, m.flags[i].is_tp()))
                    .collect();
                let n_gt = gts.iter().filter(|g| g.class_id == c).count();
                let curve = pr_curve(&ranked, n_gt);
                (average_precision_with(&curve, cfg.interpolation), curve)
            })
            .collect())
    });
    let per_threshold: Vec<Vec<(f64, PrCurve)>> =
        per_threshold.into_iter().collect::<Result<_>>()?;

    let f1_match = match_detections(dets, gts, cfg.f1_iou)?;
    let f1_curve = f1_curve_from_matches(dets, gts, &f1_match, &present);

    let classes: Vec<ClassReport> = present
        .iter()
        .enumerate()
        .map(|(ci, &c)| {
            let (best_f1_confidence, best_f1) = f1_curve
                .iter()
                .map(|p| (p.confidence, p.per_class[ci]))
                .fold(
                    (0.0, f64::NEG_INFINITY),
                    |acc, x| if x.1 > acc.1 { x } else { acc },
                );
            ClassReport {
                class_id: c,
                name: class_names[c as usize].clone(),
                n_gt: gts.iter().filter(|g| g.class_id == c).count(),
                n_det: dets.iter().filter(|d| d.class_id == c).count(),
                ap: per_threshold.iter().map(|row| row[ci].0).collect(),
                pr_curve: per_threshold[0][ci].1.clone(),
                best_f1: best_f1.max(0.0),
                best_f1_confidence,
            }
        })
        .collect();

    let best_mean_f1 =
        f1_curve
            .iter()
            .map(|p| (p.confidence, p.mean))
            .fold(
                (0.0, f64::NEG_INFINITY),
                |acc, x| if x.1 > acc.1 { x } else { acc },
            );

    let mut report = EvalReport {
        thresholds: cfg.thresholds.clone(),
        interpolation: cfg.interpolation,
        classes,
        map50: None,
        map_range: 0.0,
        f1_curve,
        best_mean_f1: (best_mean_f1.0, best_mean_f1.1.max(0.0)),
        fps: None,
    };
    report.map50 = cfg
        .thresholds
        .iter()
        .position(|t| (t - 0.5).abs() < 1e-9)
        .map(|t| report.map_at(t));
    report.map_range = mean(report.classes.iter().flat_map(|c| c.ap.iter().copied()));
    Ok(report)
}
