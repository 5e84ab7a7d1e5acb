//! The ensemble pipeline: merge multi-model, multi-scale detections into
//! the original image frame, rescore overlaps with soft-NMS, then apply
//! the final score threshold and the `ignore`-transcription filter.
//!
//! Soft-NMS is the sequential greedy algorithm: repeatedly select the
//! highest-scoring unprocessed detection and decay every remaining
//! detection's score by a function of its overlap with the selected one.
//! Scores never increase and the globally highest-scoring input keeps
//! its score exactly.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, GeometryError, Polygon};
use crate::ingest::Detection;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("no original size for image `{0}`")]
    MissingImageSize(String),
    #[error("batch mixes scales: {0} and {1}")]
    MixedScales(f64, f64),
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayMode {
    Linear,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMeasure {
    PolygonIou,
    AxisAlignedIou,
}

/// Ensemble parameters. The final threshold defaults to 0.92; the
/// suppression knobs default to the common gaussian settings and are
/// all configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub decay_mode: DecayMode,
    /// Gaussian decay width.
    pub sigma: f64,
    /// Linear decay trigger N_t: overlaps below it leave scores unchanged.
    pub overlap_threshold: f64,
    /// Rescored detections below this are dropped during suppression.
    pub prune_score: f64,
    /// Final score filter applied after suppression.
    pub final_threshold: f64,
    /// Transcription value marking unusable recognitions.
    pub ignore_sentinel: String,
    pub overlap_measure: OverlapMeasure,
    /// Case-fold transcriptions before comparing with the sentinel.
    pub case_fold: bool,
    /// Error on non-convex regions instead of falling back to the hull.
    pub strict_convexity: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            decay_mode: DecayMode::Gaussian,
            sigma: 0.5,
            overlap_threshold: 0.3,
            prune_score: 0.001,
            final_threshold: 0.92,
            ignore_sentinel: "ignore".to_string(),
            overlap_measure: OverlapMeasure::PolygonIou,
            case_fold: true,
            strict_convexity: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(FusionError::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        for (name, v) in [
            ("overlap_threshold", self.overlap_threshold),
            ("prune_score", self.prune_score),
            ("final_threshold", self.final_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(FusionError::InvalidConfig(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.prune_score > self.final_threshold {
            return Err(FusionError::InvalidConfig(format!(
                "prune_score {} exceeds final_threshold {}",
                self.prune_score, self.final_threshold
            )));
        }
        Ok(())
    }

    fn overlap(&self, a: &Polygon, b: &Polygon) -> Result<f64, GeometryError> {
        match self.overlap_measure {
            OverlapMeasure::PolygonIou => {
                if self.strict_convexity {
                    geometry::iou(a, b)
                } else {
                    Ok(geometry::iou_hull_fallback(a, b))
                }
            }
            OverlapMeasure::AxisAlignedIou => Ok(geometry::axis_aligned_iou(a, b)),
        }
    }
}

/// Rescales every detection of every batch to the original image frame.
/// Each batch must share one inference scale; provenance fields
/// (model, scale, transcription, score) are preserved.
pub fn merge_to_original_frame(
    batches: &[(Vec<Detection>, f64)],
) -> Result<Vec<Detection>, FusionError> {
    let mut out = Vec::new();
    for (batch, original) in batches {
        if let Some(first) = batch.first() {
            if let Some(other) = batch.iter().find(|d| d.scale != first.scale) {
                return Err(FusionError::MixedScales(first.scale, other.scale));
            }
        }
        for d in batch {
            let region = geometry::rescale_polygon(&d.region, d.scale, *original)?;
            out.push(Detection {
                region,
                ..d.clone()
            });
        }
    }
    Ok(out)
}

/// Deterministic ordering among equal scores: model tag, then scale,
/// then vertex coordinates, then transcription, then input position.
/// Comparing coordinates before input position keeps the result
/// invariant under input permutation.
pub(crate) fn tie_break(a: &Detection, b: &Detection, ia: usize, ib: usize) -> Ordering {
    a.model
        .cmp(&b.model)
        .then_with(|| a.scale.partial_cmp(&b.scale).unwrap_or(Ordering::Equal))
        .then_with(|| {
            let va = a.region.vertices();
            let vb = b.region.vertices();
            va.len().cmp(&vb.len()).then_with(|| {
                for (p, q) in va.iter().zip(vb) {
                    match p.x.partial_cmp(&q.x).unwrap_or(Ordering::Equal) {
                        Ordering::Equal => {}
                        ord => return ord,
                    }
                    match p.y.partial_cmp(&q.y).unwrap_or(Ordering::Equal) {
                        Ordering::Equal => {}
                        ord => return ord,
                    }
                }
                Ordering::Equal
            })
        })
        .then_with(|| a.transcription.cmp(&b.transcription))
        .then_with(|| ia.cmp(&ib))
}

/// Greedy sequential soft-NMS over one image's detections.
///
/// Repeatedly selects the highest-scoring live detection, decays every
/// remaining score by the configured function of its overlap with the
/// selection, and prunes scores that fall below `prune_score`. Returns
/// the selected detections with their final scores, highest first.
pub fn soft_nms(dets: &[Detection], cfg: &FusionConfig) -> Result<Vec<Detection>, FusionError> {
    cfg.validate()?;
    let n = dets.len();
    let mut score: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let mut alive: Vec<bool> = vec![true; n];
    // precomputed bounding boxes let us skip overlap evaluation for
    // detections that cannot intersect
    let bboxes: Vec<_> = dets.iter().map(|d| d.region.bounding_box()).collect();
    let mut selected: Vec<usize> = Vec::with_capacity(n);

    loop {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            best = Some(match best {
                None => i,
                Some(j) => match score[i].partial_cmp(&score[j]).unwrap() {
                    Ordering::Greater => i,
                    Ordering::Less => j,
                    Ordering::Equal => {
                        if tie_break(&dets[i], &dets[j], i, j) == Ordering::Less {
                            i
                        } else {
                            j
                        }
                    }
                },
            });
        }
        let Some(m) = best else { break };
        alive[m] = false;
        selected.push(m);
        let (mmin, mmax) = bboxes[m];
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            let (imin, imax) = bboxes[i];
            let disjoint =
                imin.x > mmax.x || imax.x < mmin.x || imin.y > mmax.y || imax.y < mmin.y;
            let ov = if disjoint {
                0.0
            } else {
                cfg.overlap(&dets[m].region, &dets[i].region)?
            };
            match cfg.decay_mode {
                DecayMode::Linear => {
                    if ov >= cfg.overlap_threshold {
                        score[i] *= 1.0 - ov;
                    }
                }
                DecayMode::Gaussian => {
                    if ov > 0.0 {
                        score[i] *= (-ov * ov / cfg.sigma).exp();
                    }
                }
            }
            if score[i] < cfg.prune_score {
                alive[i] = false;
            }
        }
    }

    // selection order is already descending in final score; sort keeps
    // the documented tie order explicit
    selected.sort_by(|&a, &b| {
        score[b]
            .partial_cmp(&score[a])
            .unwrap()
            .then_with(|| tie_break(&dets[a], &dets[b], a, b))
    });
    Ok(selected
        .into_iter()
        .map(|i| Detection {
            score: score[i],
            ..dets[i].clone()
        })
        .collect())
}

/// Keeps detections scoring at or above `tau` (inclusive boundary),
/// preserving order.
pub fn threshold_filter(dets: Vec<Detection>, tau: f64) -> Vec<Detection> {
    dets.into_iter().filter(|d| d.score >= tau).collect()
}

/// Removes detections whose transcription equals the ignore sentinel.
/// Detections without a transcription are kept.
pub fn ignore_filter(dets: Vec<Detection>, sentinel: &str, case_fold: bool) -> Vec<Detection> {
    let sentinel = crate::ingest::normalize(sentinel, case_fold);
    dets.into_iter()
        .filter(|d| match &d.transcription {
            Some(t) => crate::ingest::normalize(t, case_fold) != sentinel,
            None => true,
        })
        .collect()
}

/// Detection counts after each pipeline stage, for run logs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageCounts {
    pub merged: usize,
    pub post_nms: usize,
    pub post_threshold: usize,
    pub post_ignore: usize,
}

/// Full ensemble: merge to the original frame, soft-NMS, final score
/// threshold, ignore filter; suppression is isolated per image_id.
/// Output is ordered by image id, then final score descending.
pub fn run_ensemble(
    batches: &[Vec<Detection>],
    original_sizes: &BTreeMap<String, f64>,
    cfg: &FusionConfig,
) -> Result<Vec<Detection>, FusionError> {
    run_ensemble_staged(batches, original_sizes, cfg).map(|(dets, _)| dets)
}

/// [`run_ensemble`] variant that also reports per-stage counts.
pub fn run_ensemble_staged(
    batches: &[Vec<Detection>],
    original_sizes: &BTreeMap<String, f64>,
    cfg: &FusionConfig,
) -> Result<(Vec<Detection>, StageCounts), FusionError> {
    cfg.validate()?;
    // group per image, preserving batch order within each image
    let mut per_image: BTreeMap<&str, Vec<Vec<Detection>>> = BTreeMap::new();
    for batch in batches {
        let mut split: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
        for d in batch {
            split.entry(d.image_id.as_str()).or_default().push(d.clone());
        }
        for (id, dets) in split {
            per_image.entry(id).or_default().push(dets);
        }
    }

    let mut out = Vec::new();
    let mut counts = StageCounts::default();
    for (image_id, image_batches) in per_image {
        let original = *original_sizes
            .get(image_id)
            .ok_or_else(|| FusionError::MissingImageSize(image_id.to_string()))?;
        let with_sizes: Vec<(Vec<Detection>, f64)> = image_batches
            .into_iter()
            .map(|b| (b, original))
            .collect();
        let merged = merge_to_original_frame(&with_sizes)?;
        counts.merged += merged.len();
        let rescored = soft_nms(&merged, cfg)?;
        counts.post_nms += rescored.len();
        let kept = threshold_filter(rescored, cfg.final_threshold);
        counts.post_threshold += kept.len();
        let kept = ignore_filter(kept, &cfg.ignore_sentinel, cfg.case_fold);
        counts.post_ignore += kept.len();
        out.extend(kept);
    }
    Ok((out, counts))
}
