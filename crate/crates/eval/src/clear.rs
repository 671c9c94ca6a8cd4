//! CLEAR MOT accounting (MOTA, MOTP, identity switches).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_assignment;
use crate::geometry::{iou3d, OrientedBox3D};
use crate::EvalError;

/// One box in one frame, ground truth or predicted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackBox {
    pub id: u64,
    pub bbox: OrientedBox3D,
    pub score: f64,
}

/// Per-frame boxes of one sequence; index = frame.
pub type Sequence = Vec<Vec<TrackBox>>;

/// Raw CLEAR counts. Counts add across sequences; ratios are computed last.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClearCounts {
    pub num_gt: usize,
    pub matches: usize,
    pub false_positives: usize,
    pub misses: usize,
    pub id_switches: usize,
    pub iou_sum: f64,
}

impl ClearCounts {
    pub fn mota(&self) -> f64 {
        if self.num_gt == 0 {
            return if self.false_positives == 0 { 1.0 } else { 0.0 };
        }
        1.0 - (self.misses + self.false_positives + self.id_switches) as f64 / self.num_gt as f64
    }

    pub fn motp(&self) -> f64 {
        if self.matches == 0 {
            0.0
        } else {
            self.iou_sum / self.matches as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.num_gt == 0 {
            0.0
        } else {
            self.matches as f64 / self.num_gt as f64
        }
    }

    pub fn merge(&mut self, other: &ClearCounts) {
        self.num_gt += other.num_gt;
        self.matches += other.matches;
        self.false_positives += other.false_positives;
        self.misses += other.misses;
        self.id_switches += other.id_switches;
        self.iou_sum += other.iou_sum;
    }
}

/// CLEAR counts with predictions below `min_score` ignored. Also returns the
/// scores of the predictions that were matched.
pub(crate) fn count_with_threshold(
    gt: &[Vec<TrackBox>],
    pred: &[Vec<TrackBox>],
    iou_threshold: f64,
    min_score: f64,
) -> Result<(ClearCounts, Vec<f64>), EvalError> {
    if gt.len() != pred.len() {
        return Err(EvalError::FrameCount {
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    let mut counts = ClearCounts::default();
    let mut matched_scores = Vec::new();
    // Last predicted id each GT id was matched to, across gaps.
    let mut last_match: HashMap<u64, u64> = HashMap::new();
    // Correspondences active in the previous frame.
    let mut previous: HashMap<u64, u64> = HashMap::new();

    for (frame_gt, frame_pred) in gt.iter().zip(pred) {
        let preds: Vec<&TrackBox> = frame_pred.iter().filter(|p| p.score >= min_score).collect();
        counts.num_gt += frame_gt.len();

        let mut gt_taken = vec![false; frame_gt.len()];
        let mut pred_taken = vec![false; preds.len()];
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();

        // Keep last frame's correspondences while they still pass the gate.
        for (gi, g) in frame_gt.iter().enumerate() {
            let Some(&pid) = previous.get(&g.id) else { continue };
            if let Some(pi) = preds.iter().position(|p| p.id == pid) {
                if pred_taken[pi] {
                    continue;
                }
                let iou = iou3d(&g.bbox, &preds[pi].bbox);
                if iou >= iou_threshold {
                    gt_taken[gi] = true;
                    pred_taken[pi] = true;
                    pairs.push((gi, pi, iou));
                }
            }
        }

        let free_gt: Vec<usize> = (0..frame_gt.len()).filter(|&i| !gt_taken[i]).collect();
        let free_pred: Vec<usize> = (0..preds.len()).filter(|&i| !pred_taken[i]).collect();
        if !free_gt.is_empty() && !free_pred.is_empty() {
            let ious: Vec<Vec<f64>> = free_gt
                .iter()
                .map(|&gi| {
                    free_pred
                        .iter()
                        .map(|&pi| {
                            let v = iou3d(&frame_gt[gi].bbox, &preds[pi].bbox);
                            if v >= iou_threshold {
                                v
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect();
            for (r, c) in max_weight_assignment(&ious).into_iter().enumerate() {
                if let Some(c) = c {
                    let v = ious[r][c];
                    if v > 0.0 && v >= iou_threshold {
                        pairs.push((free_gt[r], free_pred[c], v));
                    }
                }
            }
        }

        let mut current = HashMap::new();
        for &(gi, pi, iou) in &pairs {
            let (gid, pid) = (frame_gt[gi].id, preds[pi].id);
            if let Some(&old) = last_match.get(&gid) {
                if old != pid {
                    counts.id_switches += 1;
                }
            }
            last_match.insert(gid, pid);
            current.insert(gid, pid);
            counts.iou_sum += iou;
            matched_scores.push(preds[pi].score);
        }
        counts.matches += pairs.len();
        counts.misses += frame_gt.len() - pairs.len();
        counts.false_positives += preds.len() - pairs.len();
        previous = current;
    }
    Ok((counts, matched_scores))
}

/// CLEAR counts for one frame-aligned sequence.
///
/// Per frame, ground truth and predictions are matched on 3D IoU gated at
/// `iou_threshold`: correspondences from the previous frame are kept while
/// they pass the gate, the rest are assigned by the Hungarian method on IoU.
/// An identity switch is counted whenever a ground-truth object is matched
/// to a different predicted id than the one it was last matched to.
pub fn clear_metrics(gt: &[Vec<TrackBox>], pred: &[Vec<TrackBox>], iou_threshold: f64) -> Result<ClearCounts, EvalError> {
    count_with_threshold(gt, pred, iou_threshold, f64::NEG_INFINITY).map(|(c, _)| c)
}
