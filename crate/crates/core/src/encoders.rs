//! Track (two-layer LSTM) and detection (two-layer MLP) feature encoders.

use rand::Rng;
use trackcast_autograd::{NumArray, ParamStore, Tape, Var};
use trackcast_eval::wrap_angle;

use crate::config::FEATURE_DIM;
use crate::error::{CoreError, Result};
use crate::nn::{blend, init_lstm, linear, lstm_step};
use crate::scene::BoxState;

pub const INPUT_DIM: usize = 7;
const LSTM_LAYERS: usize = 2;

/// Fixed per-channel scaling applied before the first layer so positions in
/// tens of metres and sizes of a few metres land in a similar range.
const INPUT_SCALE: [f64; INPUT_DIM] = [0.1, 0.1, 0.1, 0.25, 0.5, 0.5, 1.0];

/// `[x − rx, y − ry, z − rz, l, w, h, θ]` with θ wrapped into `(−π, π]`.
pub fn normalize_inputs(s: &BoxState, reference: [f64; 3]) -> [f64; INPUT_DIM] {
    [
        s.x - reference[0],
        s.y - reference[1],
        s.z - reference[2],
        s.l,
        s.w,
        s.h,
        wrap_angle(s.theta),
    ]
}

fn scaled_row(s: &BoxState, reference: [f64; 3]) -> [f64; INPUT_DIM] {
    let mut f = normalize_inputs(s, reference);
    for (v, k) in f.iter_mut().zip(INPUT_SCALE) {
        *v *= k;
    }
    f
}

pub fn init(p: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
    for layer in 0..LSTM_LAYERS {
        let inputs = if layer == 0 { INPUT_DIM } else { FEATURE_DIM };
        init_lstm(p, &format!("enc.track.lstm{layer}"), inputs, FEATURE_DIM, rng)?;
    }
    p.init_linear("enc.det.fc0", INPUT_DIM, FEATURE_DIM, rng)?;
    p.init_linear("enc.det.fc1", FEATURE_DIM, FEATURE_DIM, rng)?;
    Ok(())
}

/// Encodes a batch of past trajectories (oldest state first) into
/// `[batch, 64]` features: the top-layer hidden state after each
/// trajectory's last frame.
///
/// Shorter trajectories are aligned to the end and their rows stay at the
/// zero initial state until their first valid frame, so every row sees only
/// its own valid frames.
pub fn encode_tracks<'t>(tape: &'t Tape, p: &ParamStore, pasts: &[Vec<BoxState>], reference: [f64; 3]) -> Result<Var<'t>> {
    if pasts.is_empty() {
        return Err(CoreError::Data("track encoder called with no trajectories".into()));
    }
    if pasts.iter().any(Vec::is_empty) {
        return Err(CoreError::Data("past trajectory has no valid frame".into()));
    }
    let batch = pasts.len();
    let steps = pasts.iter().map(Vec::len).max().unwrap_or(0);
    let zeros = tape.constant(NumArray::zeros(batch, FEATURE_DIM))?;
    let mut h = [zeros; LSTM_LAYERS];
    let mut c = [zeros; LSTM_LAYERS];
    for s in 0..steps {
        let mut input = NumArray::zeros(batch, INPUT_DIM);
        let mut mask = NumArray::zeros(batch, 1);
        for (r, past) in pasts.iter().enumerate() {
            let offset = steps - past.len();
            if s >= offset {
                let row = scaled_row(&past[s - offset], reference);
                input.data_mut()[r * INPUT_DIM..(r + 1) * INPUT_DIM].copy_from_slice(&row);
                mask.set(r, 0, 1.0);
            }
        }
        let full = mask.data().iter().all(|&m| m == 1.0);
        let mask = tape.constant(mask)?;
        let mut x = tape.constant(input)?;
        for layer in 0..LSTM_LAYERS {
            let prefix = format!("enc.track.lstm{layer}");
            let (hn, cn) = lstm_step(tape, p, &prefix, x, h[layer], c[layer], FEATURE_DIM)?;
            if full {
                h[layer] = hn;
                c[layer] = cn;
            } else {
                h[layer] = blend(hn, h[layer], mask)?;
                c[layer] = blend(cn, c[layer], mask)?;
            }
            x = h[layer];
        }
    }
    Ok(h[LSTM_LAYERS - 1])
}

/// Encodes detections into `[batch, 64]` features. Confidence is not an input.
pub fn encode_detections<'t>(tape: &'t Tape, p: &ParamStore, dets: &[BoxState], reference: [f64; 3]) -> Result<Var<'t>> {
    if dets.is_empty() {
        return Err(CoreError::Data("detection encoder called with no detections".into()));
    }
    let data = dets.iter().flat_map(|d| scaled_row(d, reference)).collect();
    let x = tape.constant(NumArray::matrix(dets.len(), INPUT_DIM, data)?)?;
    let hidden = linear(tape, p, "enc.det.fc0", x)?.relu()?;
    linear(tape, p, "enc.det.fc1", hidden)
}
