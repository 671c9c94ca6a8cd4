//! Diversity sampling function: maps a node feature to `K` latent codes
//! whose decoded trajectories are spread out under a DPP kernel.

use rand::Rng;
use trackcast_autograd::{linalg, Axis, NumArray, ParamStore, Tape, Var};

use crate::config::FEATURE_DIM;
use crate::error::{CoreError, Result};
use crate::nn::linear;

const HIDDEN: usize = 128;
/// Upper bound on the quality exponent `max(0, R² − ‖z‖²)`.
pub const QUALITY_EXP_CLAMP: f64 = 50.0;

pub fn init(p: &mut ParamStore, samples: usize, latent_dim: usize, rng: &mut impl Rng) -> Result<()> {
    p.init_linear("dsf.fc0", FEATURE_DIM, HIDDEN, rng)?;
    p.init_linear("dsf.fc1", HIDDEN, samples * latent_dim, rng)?;
    Ok(())
}

/// Latent codes `[batch·K, D_z]`, agent-major.
pub fn latent_codes<'t>(tape: &'t Tape, p: &ParamStore, u: Var<'t>, samples: usize, latent_dim: usize) -> Result<Var<'t>> {
    let b = u.shape().0;
    let hidden = linear(tape, p, "dsf.fc0", u)?.relu()?;
    let out = linear(tape, p, "dsf.fc1", hidden)?;
    if out.shape().1 != samples * latent_dim {
        return Err(CoreError::Config(format!(
            "sampler weights produce {} values per agent, expected {}",
            out.shape().1,
            samples * latent_dim
        )));
    }
    Ok(out.reshape(b * samples, latent_dim)?)
}

/// Kernel pieces for one agent, numeric only.
#[derive(Debug, Clone, PartialEq)]
pub struct DppKernel {
    pub similarity: NumArray,
    pub quality: Vec<f64>,
    pub kernel: NumArray,
}

/// `S_ij = exp(−ω‖y_i − y_j‖²)`, `r_i = exp(min(max(0, R² − ‖z_i‖²), 50))`,
/// `L = S ⊙ r rᵀ`.
pub fn dpp_kernel(trajectories: &[Vec<f64>], latents: &[Vec<f64>], omega: f64, radius: f64) -> Result<DppKernel> {
    let k = trajectories.len();
    if latents.len() != k {
        return Err(CoreError::Data(format!("{k} trajectories but {} latent codes", latents.len())));
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut similarity = NumArray::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            similarity.set(i, j, (-omega * sq(&trajectories[i], &trajectories[j])).exp());
        }
    }
    let quality: Vec<f64> = latents
        .iter()
        .map(|z| {
            let n2: f64 = z.iter().map(|v| v * v).sum();
            (radius * radius - n2).clamp(0.0, QUALITY_EXP_CLAMP).exp()
        })
        .collect();
    let mut kernel = similarity.clone();
    for i in 0..k {
        for j in 0..k {
            kernel.set(i, j, similarity.get(i, j) * quality[i] * quality[j]);
        }
    }
    Ok(DppKernel {
        similarity,
        quality,
        kernel,
    })
}

/// `−tr(I − (L + I)⁻¹) = tr((L + I)⁻¹) − K`.
pub fn dpp_loss(kernel: &NumArray) -> Result<f64> {
    let k = kernel.rows();
    let mut shifted = kernel.clone();
    for i in 0..k {
        shifted.set(i, i, shifted.get(i, i) + 1.0);
    }
    let inv = linalg::spd_inverse(&shifted)?;
    Ok((0..k).map(|i| inv.get(i, i)).sum::<f64>() - k as f64)
}

/// Differentiable kernel for one agent from `[K, 2T]` trajectories and
/// `[K, D_z]` codes.
pub fn kernel_var<'t>(traj: Var<'t>, z: Var<'t>, omega: f64, radius: f64) -> Result<Var<'t>> {
    let k = traj.shape().0;
    let (left, right): (Vec<usize>, Vec<usize>) = (0..k * k).map(|c| (c / k, c % k)).unzip();
    let dist = traj
        .gather_rows(&left)?
        .sub(traj.gather_rows(&right)?)?
        .squared_l2_axis(Axis::Cols)?
        .reshape(k, k)?;
    let similarity = dist.scale(-omega)?.exp()?;
    let quality = z
        .squared_l2_axis(Axis::Cols)?
        .neg()?
        .add_scalar(radius * radius)?
        .relu()?
        .clamp(0.0, QUALITY_EXP_CLAMP)?
        .exp()?;
    let outer = quality.matmul(quality.transpose()?)?;
    Ok(similarity.mul(outer)?)
}

/// Sampler loss averaged over agents: DPP loss of each agent's `K`
/// trajectories plus the squared distance of the closest one to the ground
/// truth. `traj` is `[B·K, 2T]`, `z` is `[B·K, D_z]`, `gt` is `[B, 2T]`.
pub fn dsf_loss<'t>(traj: Var<'t>, z: Var<'t>, gt: &NumArray, samples: usize, omega: f64, radius: f64) -> Result<Var<'t>> {
    let b = gt.rows();
    if b == 0 || traj.shape().0 != b * samples || z.shape().0 != b * samples || traj.shape().1 != gt.cols() {
        return Err(CoreError::Data("sampler loss inputs do not line up".into()));
    }
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(CoreError::Config(format!("kernel scale must be positive, got {omega}")));
    }
    let tape = traj.tape();
    let eye = tape.constant(NumArray::identity(samples))?;
    let mut total: Option<Var<'t>> = None;
    for a in 0..b {
        let (lo, hi) = (a * samples, (a + 1) * samples);
        let ya = traj.slice(Axis::Rows, lo, hi)?;
        let za = z.slice(Axis::Rows, lo, hi)?;
        let l = kernel_var(ya, za, omega, radius)?;
        let dpp = l.add(eye)?.spd_inv_trace()?.add_scalar(-(samples as f64))?;
        let target = tape.constant(NumArray::row(gt.row_slice(a).to_vec()))?;
        let dist = ya.sub(target)?.squared_l2_axis(Axis::Cols)?;
        let best = {
            let d = dist.value();
            (0..samples)
                .min_by(|&i, &j| d.get(i, 0).total_cmp(&d.get(j, 0)))
                .expect("at least one sample")
        };
        let term = dpp.add(dist.slice(Axis::Rows, best, best + 1)?)?;
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty batch").scale(1.0 / b as f64)?)
}

/// Reciprocal of the median pairwise squared distance between trajectories
/// of the same agent, pooled over agents.
pub fn omega_from_samples(groups: &[Vec<Vec<f64>>]) -> Result<f64> {
    let mut d = Vec::new();
    for g in groups {
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                d.push(g[i].iter().zip(&g[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
            }
        }
    }
    if d.is_empty() {
        return Err(CoreError::Data("no sample pairs to estimate the kernel scale".into()));
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 1 { d[mid] } else { 0.5 * (d[mid - 1] + d[mid]) };
    if !(median > 0.0) || !median.is_finite() {
        return Err(CoreError::Data(format!("degenerate sample spread {median}")));
    }
    Ok(1.0 / median)
}
