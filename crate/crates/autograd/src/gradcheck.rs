//! Central finite differences, used to validate analytic gradients.
//!
//! Only forward evaluations are performed here, so the check is independent
//! of the reverse sweep it validates.

use crate::array::NumArray;
use crate::error::Result;

/// Central-difference gradient of `f` with respect to every entry of every input.
pub fn numeric_gradient(
    f: impl Fn(&[NumArray]) -> Result<f64>,
    inputs: &[NumArray],
    step: f64,
) -> Result<Vec<NumArray>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = inputs[k].clone();
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let plus = f(&work)?;
            work[k].data_mut()[i] = orig - step;
            let minus = f(&work)?;
            work[k].data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest entrywise `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[NumArray], numeric: &[NumArray], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
