//! IoU matching of detections to ground truth, and count-based metrics.

use serde::Serialize;

use crate::io::annotations::{Detection, GroundTruth};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// How one detection fared in matching.
///
/// `correct`, `truth_index.is_some()` and `iou >= threshold` always agree.
/// For an unmatched detection `iou` is the best overlap it had with any
/// same-class truth still available at its turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchOutcome {
    pub detection_index: usize,
    pub truth_index: Option<usize>,
    pub iou: f64,
    pub correct: bool,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MatchSummary {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// One per detection, in detection input order.
    pub outcomes: Vec<MatchOutcome>,
}

/// Greedy one-to-one matching within a single image.
///
/// Detections are visited by descending confidence (ties in input order).
/// Each takes the unmatched truth of the same class with the highest IoU,
/// provided that IoU is at least `iou_threshold`; ties go to the lower truth
/// index. Leftover detections are false positives, leftover truths false
/// negatives.
pub fn match_scene(detections: &[Detection], truths: &[GroundTruth], iou_threshold: f64) -> MatchSummary {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence()
            .total_cmp(&detections[a].confidence())
            .then(a.cmp(&b))
    });

    let mut taken = vec![false; truths.len()];
    let mut outcomes: Vec<Option<MatchOutcome>> = vec![None; detections.len()];
    for di in order {
        let det = &detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (ti, truth) in truths.iter().enumerate() {
            if taken[ti] || truth.class_id != det.class_id {
                continue;
            }
            let overlap = det.bbox.iou(&truth.bbox);
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((ti, overlap));
            }
        }
        let outcome = match best {
            Some((ti, overlap)) if overlap >= iou_threshold => {
                taken[ti] = true;
                MatchOutcome {
                    detection_index: di,
                    truth_index: Some(ti),
                    iou: overlap,
                    correct: true,
                    confidence: det.confidence(),
                }
            }
            other => MatchOutcome {
                detection_index: di,
                truth_index: None,
                iou: other.map_or(0.0, |(_, o)| o),
                correct: false,
                confidence: det.confidence(),
            },
        };
        outcomes[di] = Some(outcome);
    }

    let outcomes: Vec<MatchOutcome> = outcomes.into_iter().map(|o| o.expect("visited")).collect();
    let tp = outcomes.iter().filter(|o| o.correct).count();
    MatchSummary {
        tp,
        fp: detections.len() - tp,
        fn_: truths.len() - tp,
        outcomes,
    }
}

impl MatchSummary {
    /// `(confidence, correct)` pairs, the input to ECE binning.
    pub fn labeled_confidences(&self) -> Vec<(f64, bool)> {
        self.outcomes.iter().map(|o| (o.confidence, o.correct)).collect()
    }

    pub fn precision(&self) -> f64 {
        precision_counts(self.tp, self.fp)
    }

    pub fn recall(&self) -> f64 {
        recall_counts(self.tp, self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }
}

/// tp / (tp + fp); 0 when there are no detections.
pub fn precision_counts(tp: usize, fp: usize) -> f64 {
    if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    }
}

/// tp / (tp + fn); 1 when there is nothing to find.
pub fn recall_counts(tp: usize, fn_: usize) -> f64 {
    if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn precision(s: &MatchSummary) -> f64 {
    s.precision()
}

pub fn recall(s: &MatchSummary) -> f64 {
    s.recall()
}

pub fn f1(s: &MatchSummary) -> f64 {
    s.f1()
}

/// Dataset-level summary: summed counts, outcomes concatenated in input order.
pub fn aggregate<'a>(summaries: impl IntoIterator<Item = &'a MatchSummary>) -> MatchSummary {
    let mut out = MatchSummary::default();
    for s in summaries {
        out.tp += s.tp;
        out.fp += s.fp;
        out.fn_ += s.fn_;
        out.outcomes.extend_from_slice(&s.outcomes);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::new(cx, cy, w, h).unwrap()
    }

    fn det(conf: f64, b: BBox) -> Detection {
        Detection::new(0, conf, b).unwrap()
    }

    fn counts(s: &MatchSummary) -> (usize, usize, usize) {
        (s.tp, s.fp, s.fn_)
    }

    #[test]
    fn perfect_match() {
        let b = bx(0.5, 0.5, 0.2, 0.2);
        let s = match_scene(&[det(0.7, b)], &[GroundTruth::new(0, b)], 0.5);
        assert_eq!(counts(&s), (1, 0, 0));
        assert_eq!(s.outcomes[0].iou, 1.0);
        assert_eq!((s.precision(), s.recall(), s.f1()), (1.0, 1.0, 1.0));
    }

    #[test]
    fn all_missed() {
        let t = GroundTruth::new(0, bx(0.5, 0.5, 0.2, 0.2));
        let s = match_scene(&[], &[t, t], 0.5);
        assert_eq!(counts(&s), (0, 0, 2));
        assert_eq!(s.precision(), 0.0);
        assert_eq!(s.recall(), 0.0);
    }

    #[test]
    fn higher_confidence_wins_shared_truth() {
        let t = GroundTruth::new(0, bx(0.5, 0.5, 0.4, 0.4));
        // input order puts the weaker detection first
        let dets = [det(0.8, bx(0.52, 0.5, 0.4, 0.4)), det(0.9, bx(0.48, 0.5, 0.4, 0.4))];
        let s = match_scene(&dets, &[t], 0.5);
        assert_eq!(counts(&s), (1, 1, 0));
        assert!(s.outcomes[1].correct);
        assert!(!s.outcomes[0].correct);
        // the loser had nothing left to overlap with
        assert_eq!(s.outcomes[0].iou, 0.0);
    }

    #[test]
    fn takes_best_iou_truth() {
        let truths = [
            GroundTruth::new(0, bx(0.40, 0.5, 0.4, 0.4)),
            GroundTruth::new(0, bx(0.55, 0.5, 0.4, 0.4)),
        ];
        let s = match_scene(&[det(0.9, bx(0.55, 0.5, 0.4, 0.4))], &truths, 0.5);
        assert_eq!(s.outcomes[0].truth_index, Some(1));
    }

    #[test]
    fn classes_do_not_cross_match() {
        let b = bx(0.5, 0.5, 0.2, 0.2);
        let d = Detection::new(1, 0.9, b).unwrap();
        let s = match_scene(&[d], &[GroundTruth::new(0, b)], 0.5);
        assert_eq!(counts(&s), (0, 1, 1));
    }

    #[test]
    fn below_threshold_is_fp_with_recorded_overlap() {
        let t = GroundTruth::new(0, bx(0.5, 0.5, 0.4, 0.4));
        let d = det(0.9, bx(0.7, 0.5, 0.4, 0.4));
        let s = match_scene(&[d], &[t], 0.5);
        assert_eq!(counts(&s), (0, 1, 1));
        assert!((s.outcomes[0].iou - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn metric_formulas() {
        let mk = |tp, fp, fn_| MatchSummary { tp, fp, fn_, outcomes: vec![] };
        assert_eq!(mk(8, 2, 0).precision(), 0.8);
        assert_eq!(mk(0, 0, 0).precision(), 0.0);
        assert_eq!(mk(5, 0, 0).precision(), 1.0);
        assert_eq!(mk(3, 0, 1).recall(), 0.75);
        assert_eq!(mk(0, 0, 4).recall(), 0.0);
        assert_eq!(mk(0, 0, 0).recall(), 1.0);
        assert_eq!(f1_score(1.0, 1.0), 1.0);
        assert!((f1_score(0.6, 0.3) - 0.4).abs() < 1e-15);
        assert_eq!(f1_score(0.0, 0.0), 0.0);
    }

    #[test]
    fn aggregation() {
        let mk = |tp, fp, fn_| MatchSummary { tp, fp, fn_, outcomes: vec![] };
        assert_eq!(counts(&aggregate(&[mk(1, 0, 0), mk(0, 1, 2)])), (1, 1, 2));
        assert_eq!(counts(&aggregate(&[])), (0, 0, 0));
        let b = bx(0.5, 0.5, 0.2, 0.2);
        let s = match_scene(&[det(0.7, b)], &[GroundTruth::new(0, b)], 0.5);
        assert_eq!(aggregate([&s]), s);
    }
}
