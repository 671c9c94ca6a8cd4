//! Interaction graph over tracked objects and detections, node-feature
//! propagation and track–detection edge features.
//!
//! Node features are stacked in one `[M + N, 64]` array: rows `0..M` are
//! tracked objects, rows `M..M + N` detections.

use rand::Rng;
use trackcast_autograd::{ParamStore, Tape, Var};

use crate::config::FEATURE_DIM;
use crate::error::{CoreError, Result};
use crate::nn::linear;

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionGraph {
    pub num_tracks: usize,
    pub num_dets: usize,
    pub radius: f64,
    /// Track pairs `(i, k)` with `i < k`.
    pub track_track: Vec<(usize, usize)>,
    /// Detection pairs `(a, b)` with `a < b`.
    pub det_det: Vec<(usize, usize)>,
    /// `(track, detection)` pairs.
    pub track_det: Vec<(usize, usize)>,
}

fn close(a: [f64; 3], b: [f64; 3], radius: f64) -> bool {
    let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
    d2 < radius * radius
}

/// Connects every pair of nodes whose 3D centre distance is below `radius`.
pub fn build_graph(tracks: &[[f64; 3]], dets: &[[f64; 3]], radius: f64) -> Result<InteractionGraph> {
    if !(radius > 0.0) {
        return Err(CoreError::Config(format!("edge radius must be positive, got {radius}")));
    }
    let pairs_within = |pts: &[[f64; 3]]| {
        let mut out = Vec::new();
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                if close(pts[a], pts[b], radius) {
                    out.push((a, b));
                }
            }
        }
        out
    };
    let mut track_det = Vec::new();
    for (i, t) in tracks.iter().enumerate() {
        for (j, d) in dets.iter().enumerate() {
            if close(*t, *d, radius) {
                track_det.push((i, j));
            }
        }
    }
    Ok(InteractionGraph {
        num_tracks: tracks.len(),
        num_dets: dets.len(),
        radius,
        track_track: pairs_within(tracks),
        det_det: pairs_within(dets),
        track_det,
    })
}

impl InteractionGraph {
    pub fn num_nodes(&self) -> usize {
        self.num_tracks + self.num_dets
    }

    pub fn num_edges(&self) -> usize {
        self.track_track.len() + self.det_det.len() + self.track_det.len()
    }

    pub fn has_edge(&self, track: usize, det: usize) -> bool {
        self.track_det.contains(&(track, det))
    }

    /// Directed `(destination, source)` lists for cross-type and same-type
    /// neighbours in stacked node indexing.
    fn directed(&self) -> (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>) {
        let m = self.num_tracks;
        let (mut cross_dst, mut cross_src) = (Vec::new(), Vec::new());
        for &(i, j) in &self.track_det {
            cross_dst.extend([i, m + j]);
            cross_src.extend([m + j, i]);
        }
        let (mut same_dst, mut same_src) = (Vec::new(), Vec::new());
        for &(a, b) in &self.track_track {
            same_dst.extend([a, b]);
            same_src.extend([b, a]);
        }
        for &(a, b) in &self.det_det {
            same_dst.extend([m + a, m + b]);
            same_src.extend([m + b, m + a]);
        }
        (cross_dst, cross_src, same_dst, same_src)
    }
}

/// Scale applied to the initial neighbour-message weights, so that an
/// untrained graph stays close to the per-node maps.
pub const MESSAGE_INIT_SCALE: f64 = 0.1;

pub fn init(p: &mut ParamStore, layers: usize, rng: &mut impl Rng) -> Result<()> {
    for l in 0..layers {
        for s in 1..=3 {
            let prefix = format!("gnn.layer{l}.sigma{s}");
            p.init_linear(&prefix, FEATURE_DIM, FEATURE_DIM, rng)?;
            if s > 1 {
                let name = format!("{prefix}.weight");
                let w = p.get(&name).expect("just inserted").map(|v| v * MESSAGE_INIT_SCALE);
                p.set(&name, w)?;
            }
        }
    }
    Ok(())
}

/// Runs `layers` rounds of aggregation on stacked node features `x`:
/// each node's next feature is `σ1(self) + Σ σ2(cross-type neighbours) +
/// Σ σ3(same-type neighbours)`, with ReLU after every round but the last.
/// Tracked objects and detections share the per-layer maps.
pub fn propagate<'t>(tape: &'t Tape, p: &ParamStore, graph: &InteractionGraph, x: Var<'t>, layers: usize) -> Result<Var<'t>> {
    if x.shape().0 != graph.num_nodes() {
        return Err(CoreError::Data(format!(
            "{} node features for a graph of {} nodes",
            x.shape().0,
            graph.num_nodes()
        )));
    }
    let n = graph.num_nodes();
    let (cross_dst, cross_src, same_dst, same_src) = graph.directed();
    let mut x = x;
    for l in 0..layers {
        let mut next = linear(tape, p, &format!("gnn.layer{l}.sigma1"), x)?;
        if !cross_src.is_empty() {
            let msg = linear(tape, p, &format!("gnn.layer{l}.sigma2"), x)?;
            next = next.add(msg.gather_rows(&cross_src)?.segment_sum(&cross_dst, n)?)?;
        }
        if !same_src.is_empty() {
            let msg = linear(tape, p, &format!("gnn.layer{l}.sigma3"), x)?;
            next = next.add(msg.gather_rows(&same_src)?.segment_sum(&same_dst, n)?)?;
        }
        x = if l + 1 < layers { next.relu()? } else { next };
    }
    Ok(x)
}

/// `u_i − v_j` for every track–detection edge, in `graph.track_det` order.
/// `None` when there are no such edges.
pub fn edge_features<'t>(x: Var<'t>, graph: &InteractionGraph) -> Result<Option<Var<'t>>> {
    if graph.track_det.is_empty() {
        return Ok(None);
    }
    let m = graph.num_tracks;
    let tracks: Vec<usize> = graph.track_det.iter().map(|&(i, _)| i).collect();
    let dets: Vec<usize> = graph.track_det.iter().map(|&(_, j)| m + j).collect();
    Ok(Some(x.gather_rows(&tracks)?.sub(x.gather_rows(&dets)?)?))
}
