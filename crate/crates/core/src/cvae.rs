//! Conditional VAE over future ground-plane trajectories.
//!
//! Both networks are GRUs with hidden size 64. The posterior encoder reads
//! the future as per-frame displacements, starting from a state derived
//! from the node feature and a summary of the past. The decoder starts from
//! `(z, u, summary)` and emits displacements autoregressively, accumulated
//! from the last observed position.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use trackcast_autograd::{Axis, NumArray, ParamStore, Tape, Var};

use crate::config::FEATURE_DIM;
use crate::error::{CoreError, Result};
use crate::nn::{gru_step, init_gru, linear};
use crate::scene::BoxState;

/// Past summary: last `(x, z)` scaled by 0.1, last per-frame displacement,
/// and the heading as `(cos θ, sin θ)`.
pub const SUMMARY_DIM: usize = 6;

const LOG_SIGMA_RANGE: (f64, f64) = (-8.0, 4.0);

pub fn past_summary(past: &[BoxState]) -> [f64; SUMMARY_DIM] {
    let last = past.last().expect("non-empty past");
    let step = last_step(past);
    [0.1 * last.x, 0.1 * last.z, step[0], step[1], last.theta.cos(), last.theta.sin()]
}

fn last_step(past: &[BoxState]) -> [f64; 2] {
    match past {
        [.., a, b] => [b.x - a.x, b.z - a.z],
        _ => [0.0, 0.0],
    }
}

pub fn init(p: &mut ParamStore, latent_dim: usize, rng: &mut impl Rng) -> Result<()> {
    p.init_linear("cvae.enc.init", FEATURE_DIM + SUMMARY_DIM, FEATURE_DIM, rng)?;
    init_gru(p, "cvae.enc.gru", 2, FEATURE_DIM, rng)?;
    p.init_linear("cvae.enc.mu", FEATURE_DIM, latent_dim, rng)?;
    p.init_linear("cvae.enc.logsigma", FEATURE_DIM, latent_dim, rng)?;
    p.init_linear("cvae.dec.init", latent_dim + FEATURE_DIM + SUMMARY_DIM, FEATURE_DIM, rng)?;
    init_gru(p, "cvae.dec.gru", 2 + latent_dim, FEATURE_DIM, rng)?;
    p.init_linear("cvae.dec.out", FEATURE_DIM, 2, rng)?;
    Ok(())
}

/// Per-agent conditioning: node feature, past summary, last position and
/// last displacement.
#[derive(Clone)]
pub struct Condition<'t> {
    pub u: Var<'t>,
    pub summary: NumArray,
    pub origin: NumArray,
    pub last_step: NumArray,
}

impl<'t> Condition<'t> {
    pub fn new(u: Var<'t>, pasts: &[&[BoxState]]) -> Result<Self> {
        if u.shape().0 != pasts.len() {
            return Err(CoreError::Data(format!(
                "{} node features for {} pasts",
                u.shape().0,
                pasts.len()
            )));
        }
        if pasts.iter().any(|p| p.is_empty()) {
            return Err(CoreError::Data("past trajectory has no valid frame".into()));
        }
        let rows = |f: &dyn Fn(&[BoxState]) -> Vec<f64>, width: usize| {
            NumArray::matrix(pasts.len(), width, pasts.iter().flat_map(|p| f(p)).collect())
        };
        Ok(Condition {
            u,
            summary: rows(&|p| past_summary(p).to_vec(), SUMMARY_DIM)?,
            origin: rows(&|p| p.last().unwrap().ground().to_vec(), 2)?,
            last_step: rows(&|p| last_step(p).to_vec(), 2)?,
        })
    }

    pub fn len(&self) -> usize {
        self.summary.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Each agent repeated `k` times consecutively.
    pub fn repeat(&self, k: usize) -> Result<Self> {
        let index: Vec<usize> = (0..self.len()).flat_map(|i| std::iter::repeat_n(i, k)).collect();
        let pick = |a: &NumArray| {
            let cols = a.cols();
            let data = index.iter().flat_map(|&i| a.row_slice(i).to_vec()).collect();
            NumArray::matrix(index.len(), cols, data)
        };
        Ok(Condition {
            u: self.u.gather_rows(&index)?,
            summary: pick(&self.summary)?,
            origin: pick(&self.origin)?,
            last_step: pick(&self.last_step)?,
        })
    }
}

/// Posterior `(μ, log σ)`, each `[batch, D_z]`, for futures given as
/// `[batch, 2T]` absolute positions `(x1, z1, x2, z2, …)`.
pub fn encode_posterior<'t>(
    tape: &'t Tape,
    p: &ParamStore,
    future: &NumArray,
    cond: &Condition<'t>,
) -> Result<(Var<'t>, Var<'t>)> {
    let (b, width) = (future.rows(), future.cols());
    if b != cond.len() || width % 2 != 0 || width == 0 {
        return Err(CoreError::Data(format!("future array {b}x{width} does not fit the batch")));
    }
    let steps = width / 2;
    let ctx = Var::concat(&[cond.u, tape.constant(cond.summary.clone())?], Axis::Cols)?;
    let mut h = linear(tape, p, "cvae.enc.init", ctx)?.tanh()?;
    for t in 0..steps {
        let mut d = NumArray::zeros(b, 2);
        for r in 0..b {
            let prev = if t == 0 {
                [cond.origin.get(r, 0), cond.origin.get(r, 1)]
            } else {
                [future.get(r, 2 * t - 2), future.get(r, 2 * t - 1)]
            };
            d.set(r, 0, future.get(r, 2 * t) - prev[0]);
            d.set(r, 1, future.get(r, 2 * t + 1) - prev[1]);
        }
        h = gru_step(tape, p, "cvae.enc.gru", tape.constant(d)?, h, FEATURE_DIM)?;
    }
    let mu = linear(tape, p, "cvae.enc.mu", h)?;
    let log_sigma = linear(tape, p, "cvae.enc.logsigma", h)?.clamp(LOG_SIGMA_RANGE.0, LOG_SIGMA_RANGE.1)?;
    Ok((mu, log_sigma))
}

/// Decodes latent codes `[batch, D_z]` into `[batch, 2T]` absolute positions.
pub fn decode<'t>(tape: &'t Tape, p: &ParamStore, z: Var<'t>, cond: &Condition<'t>, horizon: usize) -> Result<Var<'t>> {
    if z.shape().0 != cond.len() {
        return Err(CoreError::Data(format!(
            "{} latent codes for {} agents",
            z.shape().0,
            cond.len()
        )));
    }
    let ctx = Var::concat(&[z, cond.u, tape.constant(cond.summary.clone())?], Axis::Cols)?;
    let mut h = linear(tape, p, "cvae.dec.init", ctx)?.tanh()?;
    let mut prev = tape.constant(cond.last_step.clone())?;
    let mut pos = tape.constant(cond.origin.clone())?;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let input = Var::concat(&[prev, z], Axis::Cols)?;
        h = gru_step(tape, p, "cvae.dec.gru", input, h, FEATURE_DIM)?;
        let d = linear(tape, p, "cvae.dec.out", h)?;
        pos = pos.add(d)?;
        out.push(pos);
        prev = d;
    }
    Ok(Var::concat(&out, Axis::Cols)?)
}

/// Closed-form `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn kl_diag_gauss(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(CoreError::Data("μ and σ lengths differ".into()));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(trackcast_autograd::Error::Contract(format!("σ must be positive, got {s}")).into());
    }
    Ok(mu
        .iter()
        .zip(sigma)
        .map(|(m, s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()))
        .sum())
}

/// Per-row KL from `(μ, log σ)`: `[batch, 1]`.
pub fn kl_rows<'t>(mu: Var<'t>, log_sigma: Var<'t>) -> Result<Var<'t>> {
    let var = log_sigma.scale(2.0)?.exp()?;
    let terms = mu.mul(mu)?.add(var)?.sub(log_sigma.scale(2.0)?)?.add_scalar(-1.0)?;
    Ok(terms.sum_axis(Axis::Cols)?.scale(0.5)?)
}

/// Negative evidence lower bound averaged over agents:
/// `‖f − f̃‖² / (2α) + KL` with `z = μ + σ ⊙ ε`.
pub fn elbo_loss<'t>(
    tape: &'t Tape,
    p: &ParamStore,
    future: &NumArray,
    cond: &Condition<'t>,
    alpha: f64,
    eps: &NumArray,
) -> Result<Var<'t>> {
    if !(alpha > 0.0) {
        return Err(CoreError::Config(format!("alpha must be positive, got {alpha}")));
    }
    let (mu, log_sigma) = encode_posterior(tape, p, future, cond)?;
    if eps.rows() != mu.shape().0 || eps.cols() != mu.shape().1 {
        return Err(CoreError::Data("noise shape does not match the latent batch".into()));
    }
    let z = mu.add(log_sigma.exp()?.mul(tape.constant(eps.clone())?)?)?;
    let recon = decode(tape, p, z, cond, future.cols() / 2)?;
    let err = recon
        .sub(tape.constant(future.clone())?)?
        .squared_l2_axis(Axis::Cols)?
        .scale(0.5 / alpha)?;
    Ok(err.add(kl_rows(mu, log_sigma)?)?.mean()?)
}

pub fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> NumArray {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    NumArray::matrix(rows, cols, data).expect("shape matches data")
}

/// `k` prior samples per agent, decoded independently: `[batch·k, 2T]`,
/// agent-major.
pub fn sample_random<'t>(
    tape: &'t Tape,
    p: &ParamStore,
    cond: &Condition<'t>,
    k: usize,
    latent_dim: usize,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<Var<'t>> {
    if k == 0 {
        return Err(CoreError::Config("sample count must be positive".into()));
    }
    let rep = cond.repeat(k)?;
    let z = tape.constant(standard_normal(rep.len(), latent_dim, rng))?;
    decode(tape, p, z, &rep, horizon)
}
