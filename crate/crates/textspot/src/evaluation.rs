//! The scoring protocol: greedy IoU matching of detections to ground
//! truth, IV/OOV splitting via a vocabulary, precision/recall/h-mean for
//! the detection and end-to-end tasks, and the averaged "All" aggregate.
//!
//! Counts are micro-averaged: TP/FP/FN accumulate over the whole dataset
//! before precision and recall are computed. The "All" split is the
//! arithmetic mean of the IV and OOV metrics (its counts are reported as
//! sums for reference only).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::tie_break;
use crate::geometry::{self, GeometryError};
use crate::ingest::{Detection, GroundTruthWord, IngestError, Vocabulary, WordClass};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("detections and ground truth mix image ids")]
    FrameMismatch,
    #[error("detection over `{0}` has no transcription (required for end-to-end task)")]
    MissingTranscription(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn hmean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Outcome of matching one image's detections against its ground truth.
///
/// Every detection index lands in exactly one of `pairs`,
/// `unmatched_detections` or `dont_care_absorbed`; every non-don't-care
/// GT index lands in exactly one of `pairs` or `unmatched_gt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// (detection index, gt index), one-to-one.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
    /// Detections whose best qualifying overlap was a don't-care region;
    /// they count neither as TP nor FP.
    pub dont_care_absorbed: Vec<usize>,
}

/// Greedy one-to-one matching: detections in descending score order each
/// take the highest-IoU unmatched ground-truth word at or above
/// `iou_threshold`. Don't-care regions absorb detections without being
/// consumed and never count as misses.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruthWord],
    iou_threshold: f64,
) -> Result<MatchResult, EvalError> {
    let mut ids = dets
        .iter()
        .map(|d| d.image_id.as_str())
        .chain(gts.iter().map(|g| g.image_id.as_str()));
    if let Some(first) = ids.next() {
        if ids.any(|id| id != first) {
            return Err(EvalError::FrameMismatch);
        }
    }

    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| tie_break(&dets[a], &dets[b], a, b))
    });

    let mut gt_taken = vec![false; gts.len()];
    let mut result = MatchResult {
        pairs: Vec::new(),
        unmatched_detections: Vec::new(),
        unmatched_gt: Vec::new(),
        dont_care_absorbed: Vec::new(),
    };

    for di in order {
        let mut best: Option<(f64, usize)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_taken[gi] && !gt.dont_care {
                continue;
            }
            let ov = geometry::iou_hull_fallback(&dets[di].region, &gt.region);
            if ov < iou_threshold {
                continue;
            }
            if best.is_none_or(|(b, _)| ov > b) {
                best = Some((ov, gi));
            }
        }
        match best {
            Some((_, gi)) if gts[gi].dont_care => result.dont_care_absorbed.push(di),
            Some((_, gi)) => {
                gt_taken[gi] = true;
                result.pairs.push((di, gi));
            }
            None => result.unmatched_detections.push(di),
        }
    }
    for (gi, gt) in gts.iter().enumerate() {
        if !gt.dont_care && !gt_taken[gi] {
            result.unmatched_gt.push(gi);
        }
    }
    result.unmatched_detections.sort_unstable();
    result.dont_care_absorbed.sort_unstable();
    Ok(result)
}

/// Evaluation split selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Iv,
    Oov,
    Combined,
}

impl Split {
    fn admits(self, class: WordClass) -> bool {
        match self {
            Split::Iv => class == WordClass::InVocabulary,
            Split::Oov => class == WordClass::OutOfVocabulary,
            Split::Combined => true,
        }
    }
}

/// Raw micro-averaged counts; merged across images before metrics are
/// computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn merge(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Counts plus the derived precision/recall/f-score for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

impl SplitMetrics {
    pub fn from_counts(c: Counts) -> Self {
        let precision = if c.tp + c.fp == 0 {
            0.0
        } else {
            c.tp as f64 / (c.tp + c.fp) as f64
        };
        let recall = if c.tp + c.fn_ == 0 {
            0.0
        } else {
            c.tp as f64 / (c.tp + c.fn_) as f64
        };
        Self {
            true_positives: c.tp,
            false_positives: c.fp,
            false_negatives: c.fn_,
            precision,
            recall,
            fscore: hmean(precision, recall),
        }
    }
}

/// Averaged IV+OOV aggregate: metrics are arithmetic means (the f-score
/// is the mean of the two f-scores, not recomputed from the averaged
/// precision/recall); counts are sums, for reference.
pub fn aggregate_all(iv: &SplitMetrics, oov: &SplitMetrics) -> SplitMetrics {
    SplitMetrics {
        true_positives: iv.true_positives + oov.true_positives,
        false_positives: iv.false_positives + oov.false_positives,
        false_negatives: iv.false_negatives + oov.false_negatives,
        precision: (iv.precision + oov.precision) / 2.0,
        recall: (iv.recall + oov.recall) / 2.0,
        fscore: (iv.fscore + oov.fscore) / 2.0,
    }
}

fn gt_class(
    gt: &GroundTruthWord,
    vocab: &Vocabulary,
    sentinel: &str,
) -> Result<WordClass, EvalError> {
    Ok(vocab.classify(&gt.transcription, sentinel)?)
}

/// IV/OOV class of a detection's own transcription; used to attribute
/// spurious detections to a split in the end-to-end task. Membership
/// only, so sentinel-looking transcriptions still classify.
fn det_class(transcription: &str, vocab: &Vocabulary) -> WordClass {
    if vocab.contains(transcription) {
        WordClass::InVocabulary
    } else {
        WordClass::OutOfVocabulary
    }
}

/// Detection-task counts for one image restricted to `split`.
///
/// Unmatched detections cannot be assigned a split by ground truth, so
/// they count as false positives in every split's precision denominator.
pub fn detection_counts(
    m: &MatchResult,
    gts: &[GroundTruthWord],
    split: Split,
    vocab: &Vocabulary,
    sentinel: &str,
) -> Result<Counts, EvalError> {
    let mut c = Counts::default();
    for &(_, gi) in &m.pairs {
        if split.admits(gt_class(&gts[gi], vocab, sentinel)?) {
            c.tp += 1;
        }
    }
    c.fp = m.unmatched_detections.len() as u64;
    for &gi in &m.unmatched_gt {
        if split.admits(gt_class(&gts[gi], vocab, sentinel)?) {
            c.fn_ += 1;
        }
    }
    Ok(c)
}

pub fn detection_metrics(
    m: &MatchResult,
    gts: &[GroundTruthWord],
    split: Split,
    vocab: &Vocabulary,
    sentinel: &str,
) -> Result<SplitMetrics, EvalError> {
    Ok(SplitMetrics::from_counts(detection_counts(
        m, gts, split, vocab, sentinel,
    )?))
}

fn require_transcription(d: &Detection) -> Result<&str, EvalError> {
    match d.transcription.as_deref() {
        Some(t) if !t.is_empty() => Ok(t),
        _ => Err(EvalError::MissingTranscription(d.image_id.clone())),
    }
}

/// End-to-end counts for one image restricted to `split`.
///
/// A matched pair is a TP only when the normalized transcriptions agree;
/// a mismatch counts both a FP (the detection, attributed by its own
/// transcription's class) and a FN (the ground-truth word).
pub fn e2e_counts(
    m: &MatchResult,
    dets: &[Detection],
    gts: &[GroundTruthWord],
    split: Split,
    vocab: &Vocabulary,
    case_fold: bool,
    sentinel: &str,
) -> Result<Counts, EvalError> {
    use crate::ingest::normalize;
    let mut c = Counts::default();
    for &(di, gi) in &m.pairs {
        let t = require_transcription(&dets[di])?;
        let gt = &gts[gi];
        if normalize(t, case_fold) == normalize(&gt.transcription, case_fold) {
            if split.admits(gt_class(gt, vocab, sentinel)?) {
                c.tp += 1;
            }
        } else {
            if split.admits(gt_class(gt, vocab, sentinel)?) {
                c.fn_ += 1;
            }
            if split.admits(det_class(t, vocab)) {
                c.fp += 1;
            }
        }
    }
    for &di in &m.unmatched_detections {
        let t = require_transcription(&dets[di])?;
        if split.admits(det_class(t, vocab)) {
            c.fp += 1;
        }
    }
    for &gi in &m.unmatched_gt {
        if split.admits(gt_class(&gts[gi], vocab, sentinel)?) {
            c.fn_ += 1;
        }
    }
    Ok(c)
}

pub fn e2e_metrics(
    m: &MatchResult,
    dets: &[Detection],
    gts: &[GroundTruthWord],
    split: Split,
    vocab: &Vocabulary,
    case_fold: bool,
    sentinel: &str,
) -> Result<SplitMetrics, EvalError> {
    Ok(SplitMetrics::from_counts(e2e_counts(
        m, dets, gts, split, vocab, case_fold, sentinel,
    )?))
}

/// Scored task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detection,
    #[serde(rename = "e2e")]
    EndToEnd,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Detection => write!(f, "detection"),
            Task::EndToEnd => write!(f, "e2e"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub case_fold: bool,
    pub task: Task,
    pub dont_care_sentinel: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            case_fold: true,
            task: Task::Detection,
            dont_care_sentinel: crate::ingest::DEFAULT_DONT_CARE.to_string(),
        }
    }
}

/// Config echo embedded in every report so runs are self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub task: Task,
    pub iou_threshold: f64,
    pub case_fold: bool,
    pub vocabulary_size: usize,
    pub vocabulary_case_fold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ConfigEcho,
    pub oov: SplitMetrics,
    pub iv: SplitMetrics,
    pub all: SplitMetrics,
}

/// Full protocol: match per image, accumulate counts over the dataset,
/// then compute the OOV / IV / All metrics.
pub fn evaluate(
    dets: &[Detection],
    gts: &[GroundTruthWord],
    vocab: &Vocabulary,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let mut det_by_image: BTreeMap<&str, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        det_by_image.entry(d.image_id.as_str()).or_default().push(d.clone());
    }
    let mut gt_by_image: BTreeMap<&str, Vec<GroundTruthWord>> = BTreeMap::new();
    for g in gts {
        gt_by_image.entry(g.image_id.as_str()).or_default().push(g.clone());
    }
    let mut image_ids: Vec<&str> = det_by_image.keys().chain(gt_by_image.keys()).copied().collect();
    image_ids.sort_unstable();
    image_ids.dedup();

    let empty_dets: Vec<Detection> = Vec::new();
    let empty_gts: Vec<GroundTruthWord> = Vec::new();
    let mut iv = Counts::default();
    let mut oov = Counts::default();
    for id in image_ids {
        let d = det_by_image.get(id).unwrap_or(&empty_dets);
        let g = gt_by_image.get(id).unwrap_or(&empty_gts);
        let m = match_detections(d, g, cfg.iou_threshold)?;
        let (ci, co) = match cfg.task {
            Task::Detection => (
                detection_counts(&m, g, Split::Iv, vocab, &cfg.dont_care_sentinel)?,
                detection_counts(&m, g, Split::Oov, vocab, &cfg.dont_care_sentinel)?,
            ),
            Task::EndToEnd => (
                e2e_counts(&m, d, g, Split::Iv, vocab, cfg.case_fold, &cfg.dont_care_sentinel)?,
                e2e_counts(&m, d, g, Split::Oov, vocab, cfg.case_fold, &cfg.dont_care_sentinel)?,
            ),
        };
        iv.merge(ci);
        oov.merge(co);
    }
    let iv = SplitMetrics::from_counts(iv);
    let oov = SplitMetrics::from_counts(oov);
    let all = aggregate_all(&iv, &oov);
    Ok(EvalReport {
        config: ConfigEcho {
            task: cfg.task,
            iou_threshold: cfg.iou_threshold,
            case_fold: cfg.case_fold,
            vocabulary_size: vocab.len(),
            vocabulary_case_fold: vocab.case_fold(),
        },
        oov,
        iv,
        all,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

impl EvalReport {
    /// Human-readable report; percentages printed with two decimals.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("task: {}\n", self.config.task));
        out.push_str(&format!("iou_threshold: {:.2}\n", self.config.iou_threshold));
        out.push_str(&format!(
            "case_fold: {}\n",
            if self.config.case_fold { "on" } else { "off" }
        ));
        out.push_str(&format!(
            "vocabulary: {} words (case_fold={})\n\n",
            self.config.vocabulary_size,
            if self.config.vocabulary_case_fold { "on" } else { "off" }
        ));
        out.push_str(&format!(
            "{:<6}{:>6}{:>6}{:>6}{:>11}{:>8}{:>8}\n",
            "split", "TP", "FP", "FN", "precision", "recall", "fscore"
        ));
        for (name, m) in [("OOV", &self.oov), ("IV", &self.iv), ("All", &self.all)] {
            out.push_str(&format!(
                "{:<6}{:>6}{:>6}{:>6}{:>11}{:>8}{:>8}\n",
                name,
                m.true_positives,
                m.false_positives,
                m.false_negatives,
                pct(m.precision),
                pct(m.recall),
                pct(m.fscore)
            ));
        }
        out
    }

    /// One-line OOV summary for standard output.
    pub fn oov_summary(&self) -> String {
        format!(
            "OOV precision={} recall={} fscore={}",
            pct(self.oov.precision),
            pct(self.oov.recall),
            pct(self.oov.fscore)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polygon;
    use crate::ingest::DEFAULT_DONT_CARE;

    fn det(rect: (f64, f64, f64, f64), score: f64, t: Option<&str>) -> Detection {
        Detection {
            image_id: "img".to_string(),
            region: Polygon::rect(rect.0, rect.1, rect.2, rect.3).unwrap(),
            score,
            transcription: t.map(String::from),
            model: "m".to_string(),
            scale: 100.0,
        }
    }

    fn gt(rect: (f64, f64, f64, f64), t: &str) -> GroundTruthWord {
        GroundTruthWord {
            image_id: "img".to_string(),
            region: Polygon::rect(rect.0, rect.1, rect.2, rect.3).unwrap(),
            transcription: t.to_string(),
            dont_care: t == DEFAULT_DONT_CARE,
        }
    }

    #[test]
    fn hmean_examples() {
        // published benchmark rows, on percentage scale
        assert!((hmean(69.85, 76.20) - 72.89).abs() < 0.01);
        assert!((hmean(20.28, 48.42) - 28.59).abs() < 0.01);
        assert_eq!(hmean(0.0, 0.7), 0.0);
        assert_eq!(hmean(0.0, 0.0), 0.0);
        assert!((hmean(0.5, 0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn match_single_pair() {
        // IoU 0.6 against the 0.5 threshold
        let d = vec![det((0.0, 0.0, 6.0, 10.0), 0.9, None)];
        let g = vec![gt((0.0, 0.0, 10.0, 10.0), "word")];
        // overlap 60, union 100 -> 0.6
        let m = match_detections(&d, &g, 0.5).unwrap();
        assert_eq!(m.pairs, vec![(0, 0)]);
        assert!(m.unmatched_detections.is_empty());
        assert!(m.unmatched_gt.is_empty());
    }

    #[test]
    fn match_greedy_prefers_higher_score() {
        let d = vec![
            det((0.0, 0.0, 10.0, 7.0), 0.8, None),
            det((0.0, 0.0, 10.0, 7.0), 0.9, None),
        ];
        let g = vec![gt((0.0, 0.0, 10.0, 10.0), "word")];
        let m = match_detections(&d, &g, 0.5).unwrap();
        assert_eq!(m.pairs, vec![(1, 0)]);
        assert_eq!(m.unmatched_detections, vec![0]);
    }

    #[test]
    fn match_dont_care_absorbs() {
        let d = vec![det((0.0, 0.0, 10.0, 8.0), 0.9, None)];
        let g = vec![gt((0.0, 0.0, 10.0, 10.0), "###")];
        let m = match_detections(&d, &g, 0.5).unwrap();
        assert_eq!(m.dont_care_absorbed, vec![0]);
        assert!(m.pairs.is_empty());
        assert!(m.unmatched_detections.is_empty());
        assert!(m.unmatched_gt.is_empty());
    }

    #[test]
    fn match_rejects_mixed_image_ids() {
        let mut d2 = det((0.0, 0.0, 1.0, 1.0), 0.9, None);
        d2.image_id = "other".to_string();
        let d = vec![det((0.0, 0.0, 1.0, 1.0), 0.9, None), d2];
        assert!(matches!(
            match_detections(&d, &[], 0.5),
            Err(EvalError::FrameMismatch)
        ));
    }

    #[test]
    fn split_metrics_arithmetic() {
        let m = SplitMetrics::from_counts(Counts { tp: 2, fp: 1, fn_: 2 });
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 0.5).abs() < 1e-12);
        assert!((m.fscore - 4.0 / 7.0).abs() < 1e-12);

        let zero = SplitMetrics::from_counts(Counts::default());
        assert_eq!((zero.precision, zero.recall, zero.fscore), (0.0, 0.0, 0.0));

        let perfect = SplitMetrics::from_counts(Counts { tp: 3, fp: 0, fn_: 0 });
        assert_eq!((perfect.precision, perfect.recall, perfect.fscore), (1.0, 1.0, 1.0));
    }

    #[test]
    fn aggregate_all_examples() {
        let a = SplitMetrics::from_counts(Counts { tp: 1, fp: 0, fn_: 0 });
        let b = SplitMetrics::from_counts(Counts { tp: 0, fp: 1, fn_: 1 });
        let all = aggregate_all(&a, &b);
        assert_eq!(all.fscore, 0.5);
        let same = aggregate_all(&a, &a);
        assert_eq!(same.fscore, a.fscore);
        // midpoint of explicit f-scores
        let x = SplitMetrics { fscore: 0.62, ..a.clone() };
        let y = SplitMetrics { fscore: 0.48, ..b.clone() };
        assert!((aggregate_all(&x, &y).fscore - 0.55).abs() < 1e-12);
    }

    #[test]
    fn e2e_transcription_rules() {
        let vocab = Vocabulary::from_words(["hello"], true);
        let d = vec![det((0.0, 0.0, 10.0, 10.0), 0.9, Some("HELLO"))];
        let g = vec![gt((0.0, 0.0, 10.0, 10.0), "hello")];
        let m = match_detections(&d, &g, 0.5).unwrap();
        let iv = e2e_counts(&m, &d, &g, Split::Iv, &vocab, true, DEFAULT_DONT_CARE).unwrap();
        assert_eq!(iv, Counts { tp: 1, fp: 0, fn_: 0 });

        let d = vec![det((0.0, 0.0, 10.0, 10.0), 0.9, Some("helo"))];
        let m = match_detections(&d, &g, 0.5).unwrap();
        let c = e2e_counts(&m, &d, &g, Split::Combined, &vocab, true, DEFAULT_DONT_CARE).unwrap();
        assert_eq!(c, Counts { tp: 0, fp: 1, fn_: 1 });
        // mismatch FP attributed by the detection's own class (OOV here)
        let oov = e2e_counts(&m, &d, &g, Split::Oov, &vocab, true, DEFAULT_DONT_CARE).unwrap();
        assert_eq!(oov, Counts { tp: 0, fp: 1, fn_: 0 });
    }

    #[test]
    fn e2e_missing_transcription_errors() {
        let vocab = Vocabulary::from_words(["hello"], true);
        let d = vec![det((0.0, 0.0, 10.0, 10.0), 0.9, None)];
        let g = vec![gt((0.0, 0.0, 10.0, 10.0), "hello")];
        let m = match_detections(&d, &g, 0.5).unwrap();
        assert!(matches!(
            e2e_counts(&m, &d, &g, Split::Combined, &vocab, true, DEFAULT_DONT_CARE),
            Err(EvalError::MissingTranscription(_))
        ));
    }

    #[test]
    fn hmean_composes_inside_split_metrics() {
        // validation-row arithmetic: P=41.08, R=41.73 -> F=41.40
        let f = hmean(41.08, 41.73);
        assert!((f - 41.40).abs() < 0.01);
    }

    #[test]
    fn evaluate_empty_dataset_is_all_zero() {
        let vocab = Vocabulary::from_words([], true);
        let report = evaluate(&[], &[], &vocab, &EvalConfig::default()).unwrap();
        assert_eq!(report.oov.true_positives, 0);
        assert_eq!(report.all.fscore, 0.0);
    }

    #[test]
    fn evaluate_single_oov_hit() {
        let vocab = Vocabulary::from_words(["hello"], true);
        let d = vec![det((0.0, 0.0, 10.0, 10.0), 0.9, Some("qqq"))];
        let g = vec![gt((0.0, 0.0, 10.0, 10.0), "qqq")];
        let cfg = EvalConfig {
            task: Task::EndToEnd,
            ..EvalConfig::default()
        };
        let report = evaluate(&d, &g, &vocab, &cfg).unwrap();
        assert_eq!(report.oov.precision, 1.0);
        assert_eq!(report.oov.recall, 1.0);
        assert_eq!(report.oov.fscore, 1.0);
        assert_eq!(report.iv.true_positives, 0);
        assert_eq!(report.iv.false_negatives, 0);
    }
}
