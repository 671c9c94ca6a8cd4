//! Tracking accuracy integrated over a sweep of recall levels.
//!
//! Each recall level is realized by a confidence threshold: the matched
//! prediction scores from an unthresholded pass are sorted in descending
//! order and the threshold for level `r` is the score of the
//! `ceil(r·num_gt)`-th of them. Levels the predictions cannot reach are
//! evaluated at the lowest threshold, with the recall they actually achieve.

use serde::{Deserialize, Serialize};

use crate::clear::{count_with_threshold, ClearCounts, TrackBox};
use crate::EvalError;

/// Metrics at one point of the recall sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub recall: f64,
    pub threshold: f64,
    pub mota: f64,
    pub smota: f64,
    pub motp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratedMetrics {
    pub samota: f64,
    pub amota: f64,
    pub amotp: f64,
    pub curve: Vec<CurvePoint>,
}

pub type SequencePair<'a> = (&'a [Vec<TrackBox>], &'a [Vec<TrackBox>]);

fn counts_at(seqs: &[SequencePair<'_>], iou_threshold: f64, min_score: f64) -> Result<(ClearCounts, Vec<f64>), EvalError> {
    let mut total = ClearCounts::default();
    let mut scores = Vec::new();
    for (gt, pred) in seqs {
        let (c, s) = count_with_threshold(gt, pred, iou_threshold, min_score)?;
        total.merge(&c);
        scores.extend(s);
    }
    Ok((total, scores))
}

/// Integrated sAMOTA, AMOTA and AMOTP over `recall_steps` levels
/// `1/L, 2/L, …, 1`. Thresholds are shared across all sequences.
pub fn integrated_metrics(
    seqs: &[SequencePair<'_>],
    iou_threshold: f64,
    recall_steps: usize,
) -> Result<IntegratedMetrics, EvalError> {
    if recall_steps < 2 {
        return Err(EvalError::Contract(format!("recall_steps must be at least 2, got {recall_steps}")));
    }
    let (_, mut scores) = counts_at(seqs, iou_threshold, f64::NEG_INFINITY)?;
    let num_gt: usize = seqs.iter().map(|(g, _)| g.iter().map(Vec::len).sum::<usize>()).sum();
    if num_gt == 0 {
        return Err(EvalError::Contract("no ground-truth objects to evaluate".into()));
    }
    scores.sort_by(|a, b| b.total_cmp(a));

    let mut curve = Vec::with_capacity(recall_steps);
    let lowest = scores.last().copied().unwrap_or(f64::NEG_INFINITY);
    for k in 1..=recall_steps {
        // Number of true positives this level asks for, computed in integers.
        let needed = (k * num_gt).div_ceil(recall_steps);
        let threshold = if needed >= 1 && needed <= scores.len() {
            scores[needed - 1]
        } else {
            lowest
        };
        let (c, _) = counts_at(seqs, iou_threshold, threshold)?;
        let reachable = needed <= scores.len();
        // Slack (1 − r)·num_gt for the targeted recall, or for the achieved
        // recall when the level cannot be reached.
        let (recall, slack, denom) = if reachable {
            let slack = ((recall_steps - k) * num_gt) as f64 / recall_steps as f64;
            (k as f64 / recall_steps as f64, slack, (k * num_gt) as f64 / recall_steps as f64)
        } else {
            let achieved = c.matches as f64;
            (achieved / num_gt as f64, num_gt as f64 - achieved, achieved)
        };
        let errors = (c.false_positives + c.misses + c.id_switches) as f64;
        let mota = (1.0 - (errors - slack) / num_gt as f64).clamp(0.0, 1.0);
        let smota = if denom > 0.0 {
            (1.0 - (errors - slack) / denom).clamp(0.0, 1.0)
        } else {
            0.0
        };
        curve.push(CurvePoint {
            recall,
            threshold,
            mota,
            smota,
            motp: c.motp(),
        });
    }
    let n = curve.len() as f64;
    Ok(IntegratedMetrics {
        samota: curve.iter().map(|p| p.smota).sum::<f64>() / n,
        amota: curve.iter().map(|p| p.mota).sum::<f64>() / n,
        amotp: curve.iter().map(|p| p.motp).sum::<f64>() / n,
        curve,
    })
}
