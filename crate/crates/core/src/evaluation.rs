//! Detection and end-to-end / word-spotting evaluation.
//!
//! Matching is greedy in descending detection score. A detection takes the
//! unmatched care ground truth with the highest polygon IoU (at least the
//! threshold). Detections that match nothing but overlap a don't-care region
//! are left out of the counts.

use crate::decode::SpottedInstance;
use crate::error::{Error, Result};
use crate::geometry::{polygon_iou, Polygon, DEFAULT_IOU_RESOLUTION};
use crate::maps::Charset;

pub const DEFAULT_EVAL_IOU: f64 = 0.5;
const MIN_SPOTTING_LENGTH: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GtLabel {
    pub polygon: Polygon,
    pub transcription: String,
    pub care: bool,
}

impl GtLabel {
    pub fn new(polygon: Polygon, transcription: impl Into<String>, care: bool) -> Result<Self> {
        let transcription = transcription.into();
        if care && transcription.is_empty() {
            return Err(Error::contract("a care ground truth needs a transcription"));
        }
        Ok(Self {
            polygon,
            transcription,
            care,
        })
    }
}

/// What a detection is scored on.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub polygon: Polygon,
    pub text: String,
    pub score: f64,
}

impl From<&SpottedInstance> for Detection {
    fn from(s: &SpottedInstance) -> Self {
        Self {
            polygon: s.polygon.clone(),
            text: s.text.clone(),
            score: s.det_score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub det: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub fmeasure: f64,
    pub true_positives: usize,
    /// Detections that were counted (not absorbed by don't-care regions).
    pub detections: usize,
    pub care_gts: usize,
    pub matched: Vec<MatchedPair>,
}

impl EvalReport {
    fn from_counts(tp: usize, detections: usize, care_gts: usize, matched: Vec<MatchedPair>) -> Self {
        let precision = if detections == 0 { 1.0 } else { tp as f64 / detections as f64 };
        let recall = if care_gts == 0 { 1.0 } else { tp as f64 / care_gts as f64 };
        // 2PR / (P + R) written over the counts
        let fmeasure = if detections + care_gts == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (detections + care_gts) as f64
        };
        Self {
            precision,
            recall,
            fmeasure,
            true_positives: tp,
            detections,
            care_gts,
            matched,
        }
    }
}

impl EvalReport {
    /// Pools the counts of several per-image reports. Matched pairs keep
    /// their per-image indices.
    pub fn pooled(reports: &[EvalReport]) -> EvalReport {
        let sum = |f: fn(&EvalReport) -> usize| reports.iter().map(f).sum::<usize>();
        Self::from_counts(
            sum(|r| r.true_positives),
            sum(|r| r.detections),
            sum(|r| r.care_gts),
            reports.iter().flat_map(|r| r.matched.iter().copied()).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndToEndMode {
    EndToEnd,
    WordSpotting,
}

fn texts_equal(a: &str, b: &str) -> bool {
    a.to_lowercase() == b.to_lowercase()
}

fn evaluate(
    dets: &[Detection],
    gts: &[GtLabel],
    care: &[bool],
    iou_threshold: f64,
    require_text: bool,
) -> Result<EvalReport> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score).then(i.cmp(&j)));

    let iou: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| {
            gts.iter()
                .map(|g| polygon_iou(&d.polygon, &g.polygon, DEFAULT_IOU_RESOLUTION))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut taken = vec![false; gts.len()];
    let mut matched = Vec::new();
    let mut counted = 0;
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if !care[g] || taken[g] || iou[d][g] < iou_threshold {
                continue;
            }
            if require_text && !texts_equal(&dets[d].text, &gt.transcription) {
                continue;
            }
            if best.is_none_or(|(_, b)| iou[d][g] > b) {
                best = Some((g, iou[d][g]));
            }
        }
        if let Some((g, v)) = best {
            taken[g] = true;
            counted += 1;
            matched.push(MatchedPair { det: d, gt: g, iou: v });
            continue;
        }
        let in_dont_care = (0..gts.len()).any(|g| !care[g] && iou[d][g] >= iou_threshold);
        if !in_dont_care {
            counted += 1;
        }
    }
    let care_gts = care.iter().filter(|&&c| c).count();
    Ok(EvalReport::from_counts(matched.len(), counted, care_gts, matched))
}

/// Localization-only evaluation.
pub fn eval_detection(dets: &[Detection], gts: &[GtLabel], iou_threshold: f64) -> Result<EvalReport> {
    let care: Vec<bool> = gts.iter().map(|g| g.care).collect();
    evaluate(dets, gts, &care, iou_threshold, false)
}

/// True when a transcription takes part in word spotting.
pub fn is_spottable(transcription: &str) -> bool {
    transcription.chars().count() >= MIN_SPOTTING_LENGTH && Charset::is_valid_word(transcription)
}

/// Localization plus case-insensitive transcription equality. Word spotting
/// additionally turns short or non-alphanumeric ground truth into don't-care.
pub fn eval_end_to_end(
    dets: &[Detection],
    gts: &[GtLabel],
    mode: EndToEndMode,
    iou_threshold: f64,
) -> Result<EvalReport> {
    let care: Vec<bool> = gts
        .iter()
        .map(|g| g.care && (mode == EndToEndMode::EndToEnd || is_spottable(&g.transcription)))
        .collect();
    evaluate(dets, gts, &care, iou_threshold, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AxisRect;

    fn square(x: f64) -> Polygon {
        AxisRect::new(x, 0.0, x + 10.0, 10.0).unwrap().to_polygon()
    }

    fn det(x: f64, text: &str, score: f64) -> Detection {
        Detection { polygon: square(x), text: text.into(), score }
    }

    fn gt(x: f64, text: &str) -> GtLabel {
        GtLabel::new(square(x), text, true).unwrap()
    }

    #[test]
    fn counting_scene() {
        let gts: Vec<_> = (0..5).map(|i| gt(i as f64 * 20.0, "word")).collect();
        let mut dets: Vec<_> = (0..4).map(|i| det(i as f64 * 20.0, "word", 0.9)).collect();
        dets.push(det(500.0, "word", 0.8));
        let r = eval_detection(&dets, &gts, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.fmeasure), (0.8, 0.8, 0.8));
    }

    #[test]
    fn perfect_and_empty() {
        let gts = vec![gt(0.0, "abc")];
        let r = eval_detection(&[det(0.0, "abc", 1.0)], &gts, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.fmeasure), (1.0, 1.0, 1.0));
        let r = eval_detection(&[], &[], 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.fmeasure), (1.0, 1.0, 1.0));
        let r = eval_detection(&[], &gts, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.fmeasure), (1.0, 0.0, 0.0));
    }

    #[test]
    fn wrong_text_is_fp_and_fn() {
        let gts = vec![gt(0.0, "abc")];
        let r = eval_end_to_end(&[det(0.0, "abd", 1.0)], &gts, EndToEndMode::EndToEnd, 0.5).unwrap();
        assert_eq!((r.true_positives, r.detections, r.care_gts), (0, 1, 1));
        assert_eq!(r.fmeasure, 0.0);
        let r = eval_end_to_end(&[det(0.0, "ABC", 1.0)], &gts, EndToEndMode::EndToEnd, 0.5).unwrap();
        assert_eq!(r.fmeasure, 1.0);
    }

    #[test]
    fn word_spotting_demotes_short_or_symbolic_words() {
        assert!(!is_spottable("a!"));
        assert!(!is_spottable("ab"));
        assert!(is_spottable("abc"));
        let gts = vec![gt(0.0, "hello"), gt(50.0, "a!")];
        let with = eval_end_to_end(
            &[det(0.0, "hello", 0.9), det(50.0, "a", 0.8)],
            &gts,
            EndToEndMode::WordSpotting,
            0.5,
        )
        .unwrap();
        let without =
            eval_end_to_end(&[det(0.0, "hello", 0.9)], &gts, EndToEndMode::WordSpotting, 0.5).unwrap();
        assert_eq!(with.fmeasure, without.fmeasure);
        assert_eq!(with.fmeasure, 1.0);
    }

    #[test]
    fn care_gt_needs_text() {
        assert!(GtLabel::new(square(0.0), "", true).is_err());
        assert!(GtLabel::new(square(0.0), "", false).is_ok());
    }
}
