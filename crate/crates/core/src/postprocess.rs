//! Greedy non-maximum suppression with hard, linear and Gaussian decay.
//!
//! Each iteration selects the highest-scoring remaining box `A`, emits it,
//! then rescales every other remaining box `b_i` against `A` only:
//!
//! * hard: drop `b_i` when `IoU(A, b_i) >= N_t`
//! * linear: `s_i <- s_i * (1 - IoU)` when `IoU >= N_t`, unchanged otherwise
//! * Gaussian: `s_i <- s_i * exp(-IoU^2 / sigma)`
//!
//! Boxes whose score drops below `score_threshold` are discarded. Both
//! soft variants keep the quadratic cost of hard NMS.

use std::collections::BTreeMap;

use crate::geometry::{iou, BBox};
use crate::{Error, Execution, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub class_id: u32,
    pub score: f64,
    pub bbox: BBox,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, class_id: u32, score: f64, bbox: BBox) -> Self {
        Self {
            image_id: image_id.into(),
            class_id,
            score,
            bbox,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidScore(self.score));
        }
        self.bbox.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmsMode {
    Hard,
    SoftLinear,
    SoftGaussian,
}

impl std::str::FromStr for NmsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(NmsMode::Hard),
            "soft-linear" | "soft_linear" | "linear" => Ok(NmsMode::SoftLinear),
            "soft-gaussian" | "soft_gaussian" | "gaussian" => Ok(NmsMode::SoftGaussian),
            other => Err(Error::InvalidConfig(format!("unknown NMS mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for NmsMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NmsMode::Hard => "hard",
            NmsMode::SoftLinear => "soft-linear",
            NmsMode::SoftGaussian => "soft-gaussian",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    pub mode: NmsMode,
    /// Overlap threshold `N_t`, used by hard and linear modes.
    pub iou_threshold: f64,
    /// Gaussian denominator, used by the Gaussian mode only.
    pub sigma: f64,
    pub score_threshold: f64,
    pub class_agnostic: bool,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            mode: NmsMode::SoftGaussian,
            iou_threshold: 0.3,
            sigma: 0.5,
            score_threshold: 0.001,
            class_agnostic: false,
        }
    }
}

impl NmsConfig {
    pub fn with_mode(mode: NmsMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "iou threshold {} outside (0, 1)",
                self.iou_threshold
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "sigma {} must be positive",
                self.sigma
            )));
        }
        if !(0.0..1.0).contains(&self.score_threshold) {
            return Err(Error::InvalidConfig(format!(
                "score threshold {} outside [0, 1)",
                self.score_threshold
            )));
        }
        Ok(())
    }
}

pub fn decay_linear(score: f64, iou: f64, iou_threshold: f64) -> f64 {
    if iou < iou_threshold {
        score
    } else {
        score * (1.0 - iou)
    }
}

pub fn decay_gaussian(score: f64, iou: f64, sigma: f64) -> f64 {
    score * (-(iou * iou) / sigma).exp()
}

/// Suppresses one image's detections.
///
/// Output is ordered by non-increasing (possibly decayed) score. Equal
/// scores keep the lower original input index first.
pub fn suppress(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    for d in dets {
        if d.score.is_nan() {
            return Err(Error::InvalidScore(d.score));
        }
        d.bbox.validate()?;
    }

    let groups: Vec<Vec<usize>> = if cfg.class_agnostic {
        vec![(0..dets.len()).collect()]
    } else {
        let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, d) in dets.iter().enumerate() {
            by_class.entry(d.class_id).or_default().push(i);
        }
        by_class.into_values().collect()
    };

    // (score, original index)
    let mut kept: Vec<(f64, usize)> = Vec::with_capacity(dets.len());
    for group in groups {
        kept.extend(suppress_group(dets, &group, cfg));
    }
    kept.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    Ok(kept
        .into_iter()
        .map(|(score, i)| Detection {
            score,
            ..dets[i].clone()
        })
        .collect())
}

fn suppress_group(dets: &[Detection], indices: &[usize], cfg: &NmsConfig) -> Vec<(f64, usize)> {
    let mut live: Vec<(f64, usize)> = indices
        .iter()
        .map(|&i| (dets[i].score, i))
        .filter(|&(s, _)| s >= cfg.score_threshold)
        .collect();
    let mut out = Vec::new();

    while !live.is_empty() {
        let mut best = 0;
        for (k, &(s, i)) in live.iter().enumerate().skip(1) {
            let (bs, bi) = live[best];
            if s > bs || (s == bs && i < bi) {
                best = k;
            }
        }
        let (top_score, top) = live.swap_remove(best);
        out.push((top_score, top));
        let anchor = &dets[top].bbox;

        live.retain_mut(|(score, i)| {
            let overlap = iou(anchor, &dets[*i].bbox);
            match cfg.mode {
                NmsMode::Hard => {
                    if overlap >= cfg.iou_threshold {
                        return false;
                    }
                }
                NmsMode::SoftLinear => *score = decay_linear(*score, overlap, cfg.iou_threshold),
                NmsMode::SoftGaussian => {
                    if overlap > 0.0 {
                        *score = decay_gaussian(*score, overlap, cfg.sigma);
                    }
                }
            }
            *score >= cfg.score_threshold
        });
    }
    out
}

/// Suppresses several images independently. Output order follows input.
pub fn suppress_batch(
    images: &[Vec<Detection>],
    cfg: &NmsConfig,
    exec: Execution,
) -> Result<Vec<Vec<Detection>>> {
    exec.map(images, |dets| suppress(dets, cfg))
        .into_iter()
        .collect()
}
