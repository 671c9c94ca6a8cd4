//! Tracking head: edge affinities, the affinity loss, Hungarian association
//! and the birth/death track lifecycle.

use rand::Rng;
use trackcast_autograd::{Axis, NumArray, ParamStore, Tape, Var};
use trackcast_eval::max_weight_assignment;

use crate::config::{TrackerConfig, FEATURE_DIM};
use crate::error::{CoreError, Result};
use crate::gnn::InteractionGraph;
use crate::nn::linear;
use crate::records::TrackRecord;
use crate::scene::{BoxState, Detection};

/// Clamp applied to affinities before the logarithms of the loss.
pub const AFFINITY_EPS: f64 = 1e-7;

pub fn init(p: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
    p.init_linear("mot.sigma3", FEATURE_DIM, FEATURE_DIM, rng)?;
    p.init_linear("mot.sigma4", FEATURE_DIM, 1, rng)?;
    Ok(())
}

/// Dense `[M, N]` affinities. Pairs without a track–detection edge are 0;
/// the rest are `sigmoid(σ4(relu(σ3(e))))` of their edge feature.
/// Returns `None` when there are no tracks or no detections.
pub fn affinity<'t>(
    tape: &'t Tape,
    p: &ParamStore,
    edges: Option<Var<'t>>,
    graph: &InteractionGraph,
) -> Result<Option<Var<'t>>> {
    let (m, n) = (graph.num_tracks, graph.num_dets);
    if m == 0 || n == 0 {
        return Ok(None);
    }
    let Some(e) = edges else {
        return Ok(Some(tape.constant(NumArray::zeros(m, n))?));
    };
    let hidden = linear(tape, p, "mot.sigma3", e)?.relu()?;
    let scores = linear(tape, p, "mot.sigma4", hidden)?.sigmoid()?;
    let cells: Vec<usize> = graph.track_det.iter().map(|&(i, j)| i * n + j).collect();
    Ok(Some(scores.segment_sum(&cells, m * n)?.reshape(m, n)?))
}

/// Ground-truth affinity from each track's matched detection, if any.
pub fn gt_affinity(matched: &[Option<usize>], num_dets: usize) -> Result<NumArray> {
    let mut g = NumArray::zeros(matched.len(), num_dets);
    let mut used = vec![false; num_dets];
    for (i, m) in matched.iter().enumerate() {
        if let Some(j) = *m {
            if j >= num_dets || used[j] {
                return Err(CoreError::Data(format!("invalid ground-truth match {i} -> {j}")));
            }
            used[j] = true;
            g.set(i, j, 1.0);
        }
    }
    Ok(g)
}

/// Binary cross-entropy averaged over all `M·N` entries plus, for every
/// one-hot row and column of `target`, the softmax cross-entropy along it
/// scaled by one over its length. Affinities are clamped to `[ε, 1 − ε]`.
pub fn affinity_loss<'t>(a: Var<'t>, target: &NumArray) -> Result<Var<'t>> {
    let (m, n) = a.shape();
    if target.rows() != m || target.cols() != n {
        return Err(CoreError::Data(format!(
            "affinity is {m}x{n} but target is {}x{}",
            target.rows(),
            target.cols()
        )));
    }
    let tape = a.tape();
    let a = a.clamp(AFFINITY_EPS, 1.0 - AFFINITY_EPS)?;
    let g = tape.constant(target.clone())?;
    let not_g = tape.constant(target.map(|v| 1.0 - v))?;
    let log_a = a.log()?;
    let log_not_a = a.neg()?.add_scalar(1.0)?.log()?;
    let bce = g
        .mul(log_a)?
        .add(not_g.mul(log_not_a)?)?
        .sum()?
        .scale(-1.0 / (m * n) as f64)?;

    let hot_rows: Vec<f64> = (0..m)
        .map(|i| if (target.row_slice(i).iter().sum::<f64>() - 1.0).abs() < 1e-12 { 1.0 } else { 0.0 })
        .collect();
    let hot_cols: Vec<f64> = (0..n)
        .map(|j| if ((0..m).map(|i| target.get(i, j)).sum::<f64>() - 1.0).abs() < 1e-12 { 1.0 } else { 0.0 })
        .collect();
    let hot_a = g.mul(a)?.sum()?;
    let exp_a = a.exp()?;
    let mut loss = bce;
    if hot_rows.iter().any(|&v| v > 0.0) {
        let lse = exp_a.sum_axis(Axis::Cols)?.log()?;
        let picked = tape.constant(NumArray::column(hot_rows))?.mul(lse)?.sum()?;
        loss = loss.add(hot_a.sub(picked)?.scale(-1.0 / n as f64)?)?;
    }
    if hot_cols.iter().any(|&v| v > 0.0) {
        let lse = exp_a.sum_axis(Axis::Rows)?.log()?;
        let picked = tape.constant(NumArray::row(hot_cols))?.mul(lse)?.sum()?;
        loss = loss.add(hot_a.sub(picked)?.scale(-1.0 / m as f64)?)?;
    }
    Ok(loss)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_dets: Vec<usize>,
}

impl Association {
    /// Builds the partition implied by `matches` over `m` tracks and `n`
    /// detections, rejecting out-of-range or repeated indices.
    pub fn from_matches(mut matches: Vec<(usize, usize)>, m: usize, n: usize) -> Result<Self> {
        let (mut track_used, mut det_used) = (vec![false; m], vec![false; n]);
        for &(i, j) in &matches {
            if i >= m || j >= n {
                return Err(CoreError::Data(format!("match ({i}, {j}) out of range for {m}x{n}")));
            }
            if track_used[i] || det_used[j] {
                return Err(CoreError::Data(format!("match ({i}, {j}) reuses a track or detection")));
            }
            track_used[i] = true;
            det_used[j] = true;
        }
        matches.sort_unstable();
        Ok(Association {
            matches,
            unmatched_tracks: (0..m).filter(|&i| !track_used[i]).collect(),
            unmatched_dets: (0..n).filter(|&j| !det_used[j]).collect(),
        })
    }
}

/// Maximum-total-affinity assignment; pairs below `threshold` or outside
/// `allowed` are left unmatched.
pub fn associate(a: &NumArray, allowed: impl Fn(usize, usize) -> bool, threshold: f64) -> Association {
    let (m, n) = (a.rows(), a.cols());
    if m == 0 || n == 0 {
        return Association {
            matches: Vec::new(),
            unmatched_tracks: (0..m).collect(),
            unmatched_dets: (0..n).collect(),
        };
    }
    let weights: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..n).map(|j| if allowed(i, j) { a.get(i, j) } else { 0.0 }).collect())
        .collect();
    let matches = max_weight_assignment(&weights)
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .filter(|&(i, j)| allowed(i, j) && a.get(i, j) >= threshold)
        .collect();
    Association::from_matches(matches, m, n).expect("assignment is a matching")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Dead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub id: u64,
    /// Most recent states, oldest first, at most the configured history.
    pub history: Vec<BoxState>,
    pub hit_streak: usize,
    pub misses: usize,
    pub status: TrackStatus,
}

impl TrackState {
    pub fn last(&self) -> &BoxState {
        self.history.last().expect("tracks always hold a state")
    }
}

/// Per-scene track lifecycle.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    history: usize,
    tracks: Vec<TrackState>,
    next_id: u64,
    frame: usize,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, history: usize) -> Self {
        Tracker {
            cfg,
            history: history.max(1),
            tracks: Vec::new(),
            next_id: 0,
            frame: 0,
        }
    }

    /// Live tracks, in a stable order.
    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    /// Index of the next frame to be processed.
    pub fn frame(&self) -> usize {
        self.frame
    }

    fn push_state(&self, t: &mut TrackState, s: BoxState) {
        t.history.push(s);
        if t.history.len() > self.history {
            t.history.remove(0);
        }
    }

    /// Applies one frame's association and returns the boxes to report.
    ///
    /// Matched tracks take the detection; unmatched detections start
    /// tentative tracks; unmatched tracks coast at constant velocity and die
    /// after more than `max_age` consecutive misses. A matched track is
    /// reported when confirmed, or unconditionally during the first
    /// `min_hits` frames.
    pub fn step(&mut self, dets: &[Detection], assoc: &Association) -> Result<Vec<TrackRecord>> {
        let assoc = Association::from_matches(assoc.matches.clone(), self.tracks.len(), dets.len())?;
        let mut out = Vec::new();
        let warmup = self.frame < self.cfg.min_hits;
        let mut tracks = std::mem::take(&mut self.tracks);
        let mut matched = vec![false; tracks.len()];
        for &(i, j) in &assoc.matches {
            matched[i] = true;
            let t = &mut tracks[i];
            self.push_state(t, dets[j].state());
            t.misses = 0;
            t.hit_streak += 1;
            if t.status == TrackStatus::Tentative && t.hit_streak >= self.cfg.min_hits {
                t.status = TrackStatus::Confirmed;
            }
            if t.status == TrackStatus::Confirmed || warmup {
                out.push(TrackRecord::new(self.frame, t.id, &dets[j]));
            }
        }
        for (i, t) in tracks.iter_mut().enumerate() {
            if matched[i] {
                continue;
            }
            t.misses += 1;
            t.hit_streak = 0;
            let next = extrapolate(&t.history);
            self.push_state(t, next);
            if t.misses > self.cfg.max_age {
                t.status = TrackStatus::Dead;
            }
        }
        for &j in &assoc.unmatched_dets {
            let status = if self.cfg.min_hits <= 1 {
                TrackStatus::Confirmed
            } else {
                TrackStatus::Tentative
            };
            let t = TrackState {
                id: self.next_id,
                history: vec![dets[j].state()],
                hit_streak: 1,
                misses: 0,
                status,
            };
            self.next_id += 1;
            if t.status == TrackStatus::Confirmed || warmup {
                out.push(TrackRecord::new(self.frame, t.id, &dets[j]));
            }
            tracks.push(t);
        }
        tracks.retain(|t| t.status != TrackStatus::Dead);
        self.tracks = tracks;
        self.frame += 1;
        out.sort_by_key(|r| r.id);
        Ok(out)
    }
}

/// Next state under constant velocity from the last two states; a single
/// state stays put.
pub fn extrapolate(history: &[BoxState]) -> BoxState {
    let last = *history.last().expect("non-empty history");
    if history.len() < 2 {
        return last;
    }
    let prev = history[history.len() - 2];
    BoxState {
        x: 2.0 * last.x - prev.x,
        y: 2.0 * last.y - prev.y,
        z: 2.0 * last.z - prev.z,
        ..last
    }
}
