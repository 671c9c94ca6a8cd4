//! Layer helpers shared by the network modules.

use rand::Rng;
use trackcast_autograd::{Axis, NumArray, ParamStore, Tape, Var};

use crate::error::Result;

pub(crate) fn linear<'t>(tape: &'t Tape, p: &ParamStore, prefix: &str, x: Var<'t>) -> Result<Var<'t>> {
    let w = tape.param(p, &format!("{prefix}.weight"))?;
    let b = tape.param(p, &format!("{prefix}.bias"))?;
    Ok(x.matmul(w)?.add(b)?)
}

/// Linear map without bias.
pub(crate) fn project<'t>(tape: &'t Tape, p: &ParamStore, name: &str, x: Var<'t>) -> Result<Var<'t>> {
    Ok(x.matmul(tape.param(p, name)?)?)
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Result<NumArray> {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Ok(NumArray::matrix(rows, cols, data)?)
}

/// Parameters of an LSTM layer: `x` (input→4H with bias) and `h.weight`
/// (H→4H). Gate order is input, forget, cell, output; forget bias starts at 1.
pub(crate) fn init_lstm(p: &mut ParamStore, prefix: &str, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Result<()> {
    p.init_linear(&format!("{prefix}.x"), inputs, 4 * hidden, rng)?;
    let mut bias = NumArray::zeros(1, 4 * hidden);
    for c in hidden..2 * hidden {
        bias.set(0, c, 1.0);
    }
    p.set(&format!("{prefix}.x.bias"), bias)?;
    let bound = 1.0 / (hidden as f64).sqrt();
    p.insert(format!("{prefix}.h.weight"), uniform(hidden, 4 * hidden, bound, rng)?)?;
    Ok(())
}

/// One LSTM step; returns `(h, c)`.
pub(crate) fn lstm_step<'t>(
    tape: &'t Tape,
    p: &ParamStore,
    prefix: &str,
    x: Var<'t>,
    h: Var<'t>,
    c: Var<'t>,
    hidden: usize,
) -> Result<(Var<'t>, Var<'t>)> {
    let gates = linear(tape, p, &format!("{prefix}.x"), x)?.add(project(tape, p, &format!("{prefix}.h.weight"), h)?)?;
    let ifo = Var::concat(
        &[gates.slice(Axis::Cols, 0, 2 * hidden)?, gates.slice(Axis::Cols, 3 * hidden, 4 * hidden)?],
        Axis::Cols,
    )?
    .sigmoid()?;
    let i = ifo.slice(Axis::Cols, 0, hidden)?;
    let f = ifo.slice(Axis::Cols, hidden, 2 * hidden)?;
    let o = ifo.slice(Axis::Cols, 2 * hidden, 3 * hidden)?;
    let g = gates.slice(Axis::Cols, 2 * hidden, 3 * hidden)?.tanh()?;
    let c_new = f.mul(c)?.add(i.mul(g)?)?;
    let h_new = o.mul(c_new.tanh()?)?;
    Ok((h_new, c_new))
}

/// Parameters of a GRU layer: `x` (input→3H) and `h` (H→3H), both with bias.
/// Gate order is reset, update, candidate.
pub(crate) fn init_gru(p: &mut ParamStore, prefix: &str, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Result<()> {
    p.init_linear(&format!("{prefix}.x"), inputs, 3 * hidden, rng)?;
    p.init_linear(&format!("{prefix}.h"), hidden, 3 * hidden, rng)?;
    Ok(())
}

pub(crate) fn gru_step<'t>(
    tape: &'t Tape,
    p: &ParamStore,
    prefix: &str,
    x: Var<'t>,
    h: Var<'t>,
    hidden: usize,
) -> Result<Var<'t>> {
    let gx = linear(tape, p, &format!("{prefix}.x"), x)?;
    let gh = linear(tape, p, &format!("{prefix}.h"), h)?;
    let rz = gx
        .slice(Axis::Cols, 0, 2 * hidden)?
        .add(gh.slice(Axis::Cols, 0, 2 * hidden)?)?
        .sigmoid()?;
    let r = rz.slice(Axis::Cols, 0, hidden)?;
    let z = rz.slice(Axis::Cols, hidden, 2 * hidden)?;
    let n = gx
        .slice(Axis::Cols, 2 * hidden, 3 * hidden)?
        .add(r.mul(gh.slice(Axis::Cols, 2 * hidden, 3 * hidden)?)?)?
        .tanh()?;
    Ok(n.add(z.mul(h.sub(n)?)?)?)
}

/// `mask ⊙ new + (1 − mask) ⊙ old` for a `[rows, 1]` 0/1 mask.
pub(crate) fn blend<'t>(new: Var<'t>, old: Var<'t>, mask: Var<'t>) -> Result<Var<'t>> {
    Ok(old.add(new.sub(old)?.mul(mask)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn gru_matches_scalar_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamStore::new();
        init_gru(&mut p, "g", 1, 1, &mut rng).unwrap();
        let tape = Tape::new();
        let x = tape.constant(NumArray::scalar(0.7)).unwrap();
        let h = tape.constant(NumArray::scalar(-0.3)).unwrap();
        let out = gru_step(&tape, &p, "g", x, h, 1).unwrap().value().item();
        let wx = p.get("g.x.weight").unwrap().data().to_vec();
        let wh = p.get("g.h.weight").unwrap().data().to_vec();
        let r = sigmoid(0.7 * wx[0] - 0.3 * wh[0]);
        let z = sigmoid(0.7 * wx[1] - 0.3 * wh[1]);
        let n = (0.7 * wx[2] + r * (-0.3 * wh[2])).tanh();
        let want = (1.0 - z) * n + z * -0.3;
        assert!((out - want).abs() < 1e-12);
    }

    #[test]
    fn lstm_matches_scalar_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamStore::new();
        init_lstm(&mut p, "l", 1, 1, &mut rng).unwrap();
        let tape = Tape::new();
        let x = tape.constant(NumArray::scalar(0.4)).unwrap();
        let h = tape.constant(NumArray::scalar(0.2)).unwrap();
        let c = tape.constant(NumArray::scalar(-0.5)).unwrap();
        let (h1, c1) = lstm_step(&tape, &p, "l", x, h, c, 1).unwrap();
        let wx = p.get("l.x.weight").unwrap().data().to_vec();
        let wh = p.get("l.h.weight").unwrap().data().to_vec();
        let pre = |k: usize, b: f64| 0.4 * wx[k] + 0.2 * wh[k] + b;
        let (i, f, g, o) = (
            sigmoid(pre(0, 0.0)),
            sigmoid(pre(1, 1.0)),
            pre(2, 0.0).tanh(),
            sigmoid(pre(3, 0.0)),
        );
        let c_want = f * -0.5 + i * g;
        assert!((c1.value().item() - c_want).abs() < 1e-12);
        assert!((h1.value().item() - o * c_want.tanh()).abs() < 1e-12);
    }
}
